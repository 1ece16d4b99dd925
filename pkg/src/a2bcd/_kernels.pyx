# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops of the shared-memory runtime.

Every access to a shared array goes through relaxed 64-bit atomics and the
loops run without the GIL, so worker threads overlap inside them.
"""

cdef extern from "_atomic.h" nogil:
    double a2bcd_load(double *addr)
    void a2bcd_store(double *addr, double value)
    void a2bcd_add(double *addr, double delta)


def ridge_block_grad(const int[::1] indptr, const int[::1] indices, const double[::1] data,
                     Py_ssize_t c0, Py_ssize_t c1,
                     double[::1] Ap, double[::1] Aq, double[::1] p, double[::1] q,
                     const double[::1] shift, double B11, double B12,
                     double c_prod, double c_id, double[::1] out):
    """out[j] = c_prod A_j^T (B11 Ap + B12 Aq) + c_id (B11 p_j + B12 q_j + shift_j)."""
    cdef Py_ssize_t j, t, r
    cdef double acc_p, acc_q, a
    with nogil:
        for j in range(c0, c1):
            acc_p = 0.0
            acc_q = 0.0
            for t in range(indptr[j], indptr[j + 1]):
                r = indices[t]
                a = data[t]
                acc_p = acc_p + a * a2bcd_load(&Ap[r])
                acc_q = acc_q + a * a2bcd_load(&Aq[r])
            out[j - c0] = (c_prod * (B11 * acc_p + B12 * acc_q)
                           + c_id * (B11 * a2bcd_load(&p[j]) + B12 * a2bcd_load(&q[j]) + shift[j]))


def ridge_scatter(const int[::1] indptr, const int[::1] indices, const double[::1] data,
                  Py_ssize_t c0, Py_ssize_t c1, const double[::1] grad,
                  double coef_p, double coef_q,
                  double[::1] p, double[::1] q, double[::1] Ap, double[::1] Aq):
    """(p, q) -= (coef_p, coef_q) g on the block and (Ap, Aq) -= (coef_p, coef_q) A_i g."""
    cdef Py_ssize_t j, t, r
    cdef double g, a
    with nogil:
        for j in range(c0, c1):
            g = grad[j - c0]
            a2bcd_add(&p[j], -coef_p * g)
            a2bcd_add(&q[j], -coef_q * g)
            for t in range(indptr[j], indptr[j + 1]):
                r = indices[t]
                a = data[t] * g
                a2bcd_add(&Ap[r], -coef_p * a)
                a2bcd_add(&Aq[r], -coef_q * a)


def block_scatter(Py_ssize_t start, const double[::1] grad, double coef_p, double coef_q,
                  double[::1] p, double[::1] q):
    cdef Py_ssize_t j
    with nogil:
        for j in range(grad.shape[0]):
            a2bcd_add(&p[start + j], -coef_p * grad[j])
            a2bcd_add(&q[start + j], -coef_q * grad[j])


def combine(double B1, double B2, double[::1] p, double[::1] q, double[::1] out):
    """out = B1 p + B2 q, reading p and q entry by entry."""
    cdef Py_ssize_t j
    with nogil:
        for j in range(out.shape[0]):
            out[j] = B1 * a2bcd_load(&p[j]) + B2 * a2bcd_load(&q[j])


def sentinel_write(double[::1] arr, double value):
    cdef Py_ssize_t j
    with nogil:
        for j in range(arr.shape[0]):
            a2bcd_store(&arr[j], value)


def sentinel_scan(double[::1] arr, double a, double b):
    """Number of entries equal to neither sentinel."""
    cdef Py_ssize_t j, bad = 0
    cdef double v
    with nogil:
        for j in range(arr.shape[0]):
            v = a2bcd_load(&arr[j])
            if v != a and v != b:
                bad += 1
    return bad
