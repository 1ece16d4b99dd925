"""Test problems: block-diagonal quadratics, the tridiagonal worst-case
construction, the ridge-regression dual, and LIBSVM ingestion."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Union

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .core import BlockPartition, InvalidParameterError, ProblemOracle, build_params


class QuadraticOracle(ProblemOracle):
    """f(x) = 1/2 (x - x*)^T H (x - x*) + f* with block-diagonal H.

    ``blocks`` holds the dense diagonal blocks of H, one per partition block.
    """

    def __init__(self, blocks, x_star, f_star=0.0, sigma=None, partition=None):
        self.blocks = [np.asarray(b, dtype=np.float64) for b in blocks]
        sizes = [b.shape[0] for b in self.blocks]
        if partition is None:
            partition = BlockPartition(np.concatenate([[0], np.cumsum(sizes)]))
        self.partition = partition
        eig = [np.linalg.eigvalsh(b) for b in self.blocks]
        L_blocks = [e[-1] for e in eig]
        if sigma is None:
            sigma = min(e[0] for e in eig)
        self.params = build_params(sigma, L_blocks)
        self.x_star = np.asarray(x_star, dtype=np.float64)
        self.f_star = float(f_star)
        self._stack = np.stack(self.blocks) if len(set(sizes)) == 1 else None

    def hess_vec(self, z):
        """Block-diagonal Hessian times ``z``."""
        if self._stack is not None:
            n, b, _ = self._stack.shape
            return np.einsum("nij,nj->ni", self._stack, z.reshape(n, b)).ravel()
        return np.concatenate([H @ z[self.partition.block(i)] for i, H in enumerate(self.blocks)])

    def value(self, x):
        r = x - self.x_star
        return 0.5 * float(r @ self.hess_vec(r)) + self.f_star

    def gradient(self, x):
        return self.hess_vec(x - self.x_star)

    def block_gradient(self, i, x):
        blk = self.partition.block(i)
        return self.blocks[i] @ (x[blk] - self.x_star[blk])

    def value_after_block_step(self, x, i, delta, fx=None):
        blk = self.partition.block(i)
        if fx is None:
            fx = self.value(x)
        # only the block-i term of the separable sum changes
        return fx - self.block_gradient(i, x) @ delta + 0.5 * delta @ self.blocks[i] @ delta

    def values_after_block_steps(self, x, steps, fx=None):
        """f(x - P_j steps_(j)) for every block j at once."""
        if fx is None:
            fx = self.value(x)
        part = self.partition
        return (fx - part.block_sums(self.gradient(x) * steps)
                + 0.5 * part.block_sums(steps * self.hess_vec(steps)))

    def shifted(self, offset: float) -> "QuadraticOracle":
        """Same problem with the objective raised by a constant."""
        return QuadraticOracle(self.blocks, self.x_star, self.f_star + offset,
                               sigma=self.params.sigma, partition=self.partition)


def synth_quadratic(n_blocks: int, block_size: int, kappa: float, seed: int = 0,
                    sigma: float = 1.0, equal_lipschitz: bool = True) -> QuadraticOracle:
    """Random block-diagonal quadratic with prescribed per-block spectra.

    Every block has largest eigenvalue ``L_i`` and smallest ``sigma``; with
    ``equal_lipschitz`` all ``L_i = kappa * sigma``, otherwise ``L_i`` are
    log-spaced in ``[sigma, kappa * sigma]``. Size-1 blocks cannot hold both
    ends of a spectrum, so they always use the log-spaced ``L_i``.
    """
    if kappa < 1:
        raise InvalidParameterError("kappa must be >= 1")
    rng = np.random.default_rng(seed)
    L_max = kappa * sigma
    if equal_lipschitz and block_size > 1:
        L_blocks = np.full(n_blocks, L_max)
    else:
        L_blocks = sigma * kappa ** np.linspace(1.0, 0.0, n_blocks)
    blocks = []
    for Li in L_blocks:
        if block_size == 1:
            eig = np.array([Li])
        else:
            inner = np.sort(np.exp(rng.uniform(math.log(sigma), math.log(Li), block_size - 2)))
            eig = np.concatenate([[sigma], inner, [Li]])
        Q, _ = np.linalg.qr(rng.standard_normal((block_size, block_size)))
        H = (Q * eig) @ Q.T
        blocks.append(0.5 * (H + H.T))
    x_star = rng.standard_normal(n_blocks * block_size)
    oracle = QuadraticOracle(blocks, x_star, 0.0, sigma=sigma)
    # pin declared constants to the prescribed spectra (no eigensolver roundoff)
    oracle.params = build_params(sigma, L_blocks)
    return oracle


class WorstCaseProblem(QuadraticOracle):
    """Block-separable tridiagonal quadratic certifying the complexity lower bound."""

    def __init__(self, sigma: float, L_list, b: int):
        L_list = np.asarray(L_list, dtype=np.float64)
        if b < 2:
            raise InvalidParameterError("block dimension b must be >= 2")
        if not sigma > 0 or np.any(L_list <= sigma):
            raise InvalidParameterError("need 0 < sigma < L_i for every block")
        self.b = b
        self.kappa_blocks = L_list / sigma
        sk = np.sqrt(self.kappa_blocks)
        self.q = (sk - 1.0) / (sk + 1.0)
        self.theta = (sk + 3.0) / (sk + 1.0)
        blocks, self.linear = [], []
        for Li, th in zip(L_list, self.theta):
            A = 2.0 * np.eye(b) - np.eye(b, k=1) - np.eye(b, k=-1)
            A[-1, -1] = th
            scale = (Li - sigma) / 4.0
            blocks.append(scale * A + sigma * np.eye(b))
            e1 = np.zeros(b)
            e1[0] = scale
            self.linear.append(e1)
        x_star = np.concatenate([qi ** np.arange(1, b + 1) for qi in self.q])
        super().__init__(blocks, x_star, 0.0, sigma=sigma)
        self.params = build_params(sigma, L_list)
        # f_i(x) = 1/2 x^T H_i x - <lin_i, x>; its minimum value is -1/2 <lin_i, x*_i>
        self.f_star = float(sum(
            -0.5 * lin @ x_star[self.partition.block(i)] for i, lin in enumerate(self.linear)
        ))

        self._lin = np.concatenate(self.linear)

    def value(self, x):
        return 0.5 * float(x @ self.hess_vec(x)) - float(self._lin @ x)

    def gradient(self, x):
        return self.hess_vec(x) - self._lin

    def block_gradient(self, i, x):
        xi = x[self.partition.block(i)]
        return self.blocks[i] @ xi - self.linear[i]

    def start_point(self, i: int) -> np.ndarray:
        """Minimizer with block ``i`` zeroed; the lower bound is stated from here."""
        x0 = self.x_star.copy()
        x0[self.partition.block(i)] = 0.0
        return x0


def worst_case_oracle(sigma: float, L_list, b: int) -> WorstCaseProblem:
    return WorstCaseProblem(sigma, L_list, b)


@dataclass
class LowerBound:
    per_block: np.ndarray
    max_bound: float
    closed_form: float
    optimal_p: np.ndarray


def lower_bound_ratio(kappa_list, p_list, k: int, b: int) -> LowerBound:
    """Expected-error lower bounds after ``k`` iterations with sampling ``p_list``.

    ``per_block[i]`` is the bound obtained by starting with block ``i`` wrong;
    ``closed_form`` is the aggregate ``1/2 (1 - 4/(sum sqrt(kappa) + 2n))^k``
    which holds for the minimizing sampling distribution ``optimal_p``.
    """
    kappa = np.asarray(kappa_list, dtype=np.float64)
    p = np.asarray(p_list, dtype=np.float64)
    if abs(p.sum() - 1.0) > 1e-9:
        raise InvalidParameterError("sampling probabilities must sum to 1")
    sk = np.sqrt(kappa)
    q2 = ((sk - 1.0) / (sk + 1.0)) ** 2
    q2b = q2 ** b
    per_block = ((1.0 - (1.0 - q2) * p) ** k - q2b) / (1.0 - q2b)
    inv = 1.0 / (1.0 - q2)
    closed = 0.5 * (1.0 - 4.0 / (sk.sum() + 2 * kappa.size)) ** k
    return LowerBound(per_block, float(per_block.max()), float(closed), inv / inv.sum())


def expected_q_power(q: float, p: float, k: int) -> float:
    """E[q^(2I)] for I ~ Binomial(k, p), in closed form."""
    return (1.0 - (1.0 - q * q) * p) ** k


# ---------------------------------------------------------------------------
# ridge regression dual


@dataclass(frozen=True)
class AffineStructure:
    """grad_i f(x) = scale_prod * A_i^T (A x) + scale_id * (x_i + shift_i)."""

    A: sp.csc_matrix
    scale_prod: float
    scale_id: float
    shift: np.ndarray


def _spectral_norm_sq(M: sp.spmatrix, rtol: float = 1e-6, max_iter: int = 10_000) -> float:
    """Largest eigenvalue of M^T M by power iteration from a fixed start."""
    n = M.shape[1]
    if M.nnz == 0:
        return 0.0
    v = np.ones(n) / math.sqrt(n)
    lam = 0.0
    for _ in range(max_iter):
        w = M.T @ (M @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector orthogonal to the range; retry from a fixed pseudo-random one
            v = np.random.default_rng(0).standard_normal(n)
            v /= np.linalg.norm(v)
            continue
        new = float(v @ w)
        v = w / nw
        if abs(new - lam) <= rtol * new:
            lam = new
            break
        lam = new
    return lam


class RidgeDualProblem(ProblemOracle):
    """D(a) = 1/(2 d^2 lam) ||A a||^2 + 1/(2d) ||a + l||^2 over samples a.

    ``A`` is d features by n samples; blocks are contiguous groups of samples
    (columns of ``A``).
    """

    def __init__(self, A, labels, lam: float, block_size: int = 1):
        if not lam > 0:
            raise InvalidParameterError("lambda must be positive")
        A = sp.csc_matrix(A, dtype=np.float64)
        A.eliminate_zeros()
        A.sort_indices()
        d, n = A.shape
        if d < 1 or n < 1:
            raise InvalidParameterError("data matrix must be nonempty")
        labels = np.asarray(labels, dtype=np.float64)
        if labels.shape != (n,):
            raise InvalidParameterError("need one label per sample (column)")
        self.A, self.labels, self.lam = A, labels, float(lam)
        self.partition = BlockPartition.uniform(n, block_size)
        self.d_features = d
        self.c_prod = 1.0 / (d * d * lam)
        self.c_id = 1.0 / d
        # slight inflation keeps the power-iteration estimate an upper bound
        inflate = 1.0 + 1e-6
        L_blocks = [
            self.c_prod * _spectral_norm_sq(A[:, self.partition.block(i)]) * inflate + self.c_id
            for i in range(self.partition.n_blocks)
        ]
        L = self.c_prod * _spectral_norm_sq(A) * inflate + self.c_id
        self.params = build_params(self.c_id, L_blocks, max(L, max(L_blocks)))
        self.affine = AffineStructure(A, self.c_prod, self.c_id, labels)
        self._x_star = None

    def value(self, x):
        Ax = self.A @ x
        return 0.5 * self.c_prod * (Ax @ Ax) + 0.5 * self.c_id * np.sum((x + self.labels) ** 2)

    def gradient(self, x):
        return self.c_prod * (self.A.T @ (self.A @ x)) + self.c_id * (x + self.labels)

    def block_gradient(self, i, x):
        blk = self.partition.block(i)
        Ai = self.A[:, blk]
        return self.c_prod * (Ai.T @ (self.A @ x)) + self.c_id * (x[blk] + self.labels[blk])

    def block_gradient_from_product(self, i, Ax, x_block):
        blk = self.partition.block(i)
        Ai = self.A[:, blk]
        return self.c_prod * (Ai.T @ Ax) + self.c_id * (x_block + self.labels[blk])

    def hessian(self):
        n = self.A.shape[1]
        return self.c_prod * (self.A.T @ self.A).toarray() + self.c_id * np.eye(n)

    @property
    def x_star(self):
        if self._x_star is None:
            n = self.A.shape[1]
            H = self.c_prod * (self.A.T @ self.A) + self.c_id * sp.identity(n, format="csc")
            self._x_star = np.asarray(spsolve(sp.csc_matrix(H), -self.c_id * self.labels))
        return self._x_star

    @property
    def f_star(self):
        return self.value(self.x_star)


def ridge_dual_oracle(A, labels, lam: float, block_size: int = 1) -> RidgeDualProblem:
    return RidgeDualProblem(A, labels, lam, block_size)


def random_ridge_data(d: int, n: int, density: float = 0.1, seed: int = 0):
    """Sparse d-by-n feature matrix with +-1 labels, every column nonempty."""
    rng = np.random.default_rng(seed)
    A = sp.random(d, n, density=density, format="lil", random_state=rng,
                  data_rvs=lambda k: rng.standard_normal(k))
    for j in range(n):
        if A[:, j].nnz == 0:
            A[rng.integers(d), j] = rng.standard_normal()
    labels = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    return sp.csc_matrix(A), labels


# ---------------------------------------------------------------------------
# LIBSVM format


class LibsvmParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"{message} at line {line}")
        self.line = line


@dataclass
class LabeledDataset:
    """Features as a sparse (features x samples) matrix; column j is sample j."""

    X: sp.csc_matrix
    labels: np.ndarray

    @property
    def n_features(self) -> int:
        return self.X.shape[0]

    @property
    def n_samples(self) -> int:
        return self.X.shape[1]


def parse_libsvm(source: Union[bytes, str, Iterable], n_features: Optional[int] = None) -> LabeledDataset:
    """Parse ``label idx:val ...`` lines (1-based, ascending indices).

    ``source`` may be bytes, text, or an iterable of lines (such as an open
    file). Blank lines and ``#`` comments are skipped.
    """
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    if isinstance(source, str):
        source = io.StringIO(source)
    labels, rows, cols, vals = [], [], [], []
    max_idx = 0
    for lineno, raw in enumerate(source, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise LibsvmParseError(f"non-numeric label {tokens[0]!r}", lineno) from None
        if not math.isfinite(label):
            raise LibsvmParseError("non-finite label", lineno)
        col = len(labels)
        labels.append(label)
        prev = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise LibsvmParseError(f"malformed token {tok!r}", lineno)
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise LibsvmParseError(f"non-numeric token {tok!r}", lineno) from None
            if idx < 1:
                raise LibsvmParseError(f"index {idx} < 1", lineno)
            if idx <= prev:
                raise LibsvmParseError("non-ascending index", lineno)
            prev = idx
            if n_features is not None and idx > n_features:
                raise LibsvmParseError(f"index {idx} exceeds dimension {n_features}", lineno)
            max_idx = max(max_idx, idx)
            if val != 0.0:
                rows.append(idx - 1)
                cols.append(col)
                vals.append(val)
    dim = n_features if n_features is not None else max_idx
    X = sp.csc_matrix((vals, (rows, cols)), shape=(dim, len(labels)), dtype=np.float64)
    X.sort_indices()
    return LabeledDataset(X, np.array(labels, dtype=np.float64))


def load_libsvm(path, n_features: Optional[int] = None) -> LabeledDataset:
    with open(path, "rb") as fh:
        return parse_libsvm(fh, n_features)


def dump_libsvm(dataset: LabeledDataset) -> str:
    """Serialize with shortest round-trip float reprs, so parsing is exact."""
    X = dataset.X.tocsc()
    X.sort_indices()
    out = []
    for j, label in enumerate(dataset.labels):
        lo, hi = X.indptr[j], X.indptr[j + 1]
        parts = [_fmt(label)]
        parts += [f"{r + 1}:{_fmt(v)}" for r, v in zip(X.indices[lo:hi], X.data[lo:hi])]
        out.append(" ".join(parts))
    return "\n".join(out) + "\n"


def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))
