"""Continuous-time limit of the accelerated iteration.

Integrates

    Y'' + (2/eta) Y' + (2/eta^2) grad f(Yhat) = 0,   eta = n sqrt(kappa),

with ``Yhat = Y`` (synchronous) or ``Yhat(t) = Y(t - j(t))`` (delayed), and
evaluates the energy and asynchronicity-error functionals used to certify
monotone decay. ``f`` is rescaled by ``1/sigma`` so that its strong
convexity modulus is 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import InvalidParameterError


class StepSizeError(ArithmeticError):
    """The fixed-step integrator went unstable; reduce the step."""


@dataclass(frozen=True)
class OdeConfig:
    """Integration settings.

    ``tau`` is the maximum delay in continuous time (0 for the synchronous
    equation); ``delay_mode`` is ``constant`` (``j(t) = tau``) or
    ``piecewise-random`` (``j`` redrawn uniformly in ``[0, tau]`` every
    ``segment`` time units). ``sigma`` is the strong convexity modulus of the
    unscaled ``f``; gradients and values are divided by it.
    """

    eta: float
    step: float
    T: float
    tau: float = 0.0
    delay_mode: str = "constant"
    sigma: float = 1.0
    seed: int = 0
    segment: Optional[float] = None

    def __post_init__(self):
        if not self.eta > 0:
            raise InvalidParameterError("eta must be positive")
        if not self.step > 0 or not self.T > 0:
            raise InvalidParameterError("step and horizon must be positive")
        if self.tau < 0:
            raise InvalidParameterError("tau must be nonnegative")
        if self.tau > 0 and self.step > self.tau / 10 * (1 + 1e-12):
            raise InvalidParameterError(
                f"step {self.step:g} exceeds tau/10 = {self.tau / 10:g}; history too coarse")
        if self.delay_mode not in ("constant", "piecewise-random"):
            raise InvalidParameterError(f"unknown delay mode {self.delay_mode!r}")
        if not self.sigma > 0:
            raise InvalidParameterError("sigma must be positive")

    @classmethod
    def for_problem(cls, n: int, kappa: float, step: float, T: float, **kw) -> "OdeConfig":
        return cls(eta=n * math.sqrt(kappa), step=step, T=T, **kw)

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.T / self.step - 1e-9))


def tau_threshold(n: int, kappa: float) -> float:
    """Largest delay for which the composite energy is guaranteed to decrease."""
    return n / math.sqrt(kappa) / math.sqrt(48.0)


def theorem_constants(n: int, kappa: float, tau: float):
    """(c0, r) = (6 kappa^2 tau^2 / eta, 1 / eta)."""
    eta = n * math.sqrt(kappa)
    return 6.0 * kappa ** 2 * tau ** 2 / eta, 1.0 / eta


@dataclass
class OdeTrajectory:
    """Samples on the uniform grid ``t_j = j * step``.

    ``acc`` holds Y'' at the samples so the velocity can also be
    interpolated to fourth order. Before ``t = 0`` the path is frozen at
    ``Y0`` with zero velocity.
    """

    t: np.ndarray
    Y: np.ndarray
    V: np.ndarray
    acc: np.ndarray
    config: OdeConfig
    f_gap: np.ndarray
    x_star: Optional[np.ndarray] = None
    delays: Optional[np.ndarray] = field(default=None, repr=False)

    def _locate(self, tq):
        h = self.config.step
        i = int(min(max(math.floor(tq / h), 0), self.t.size - 2))
        return i, (tq - self.t[i]) / h

    def position(self, tq: float) -> np.ndarray:
        """Cubic Hermite interpolant of Y."""
        if tq <= 0.0:
            return self.Y[0].copy()
        if tq > self.t[-1] * (1 + 1e-12):
            raise InvalidParameterError(f"t={tq:g} beyond the integrated horizon")
        i, s = self._locate(tq)
        return _hermite(self.Y[i], self.V[i], self.Y[i + 1], self.V[i + 1], s, self.config.step)

    def velocity(self, tq: float) -> np.ndarray:
        if tq < 0.0:
            return np.zeros_like(self.V[0])
        if tq > self.t[-1] * (1 + 1e-12):
            raise InvalidParameterError(f"t={tq:g} beyond the integrated horizon")
        i, s = self._locate(tq)
        return _hermite(self.V[i], self.acc[i], self.V[i + 1], self.acc[i + 1], s,
                        self.config.step)

    def energy(self) -> np.ndarray:
        return energy(self.f_gap, self.Y, self.V, self.t, self.config.eta, self.x_star)


def _hermite(p0, m0, p1, m1, s, h):
    s2 = s * s
    s3 = s2 * s
    return ((2 * s3 - 3 * s2 + 1) * p0 + (s3 - 2 * s2 + s) * h * m0
            + (-2 * s3 + 3 * s2) * p1 + (s3 - s2) * h * m1)


def energy(f_gap, Y, V, t, eta: float, x_star=None):
    """E = exp(t/eta) (f - f* + |Y - x* + eta Y'|^2 / 4); works on single points or stacks."""
    Y = np.asarray(Y, dtype=np.float64)
    W = Y + eta * np.asarray(V, dtype=np.float64)
    if x_star is not None:
        W = W - x_star
    sq = np.einsum("...i,...i->...", W, W)
    return np.exp(np.asarray(t) / eta) * (np.asarray(f_gap) + 0.25 * sq)


def _delay_function(config: OdeConfig):
    if config.tau == 0:
        return None
    if config.delay_mode == "constant":
        return lambda t: config.tau
    seg = config.segment or config.tau
    rng = np.random.default_rng(config.seed)
    n_seg = int(math.ceil(config.T / seg)) + 2
    draws = rng.uniform(0.0, config.tau, size=n_seg)
    return lambda t: float(draws[min(int(t / seg), n_seg - 1)])


def _integrate(grad, Y0, V0, config: OdeConfig, value, x_star, f_star, delayed: bool):
    Y0 = np.atleast_1d(np.asarray(Y0, dtype=np.float64))
    V0 = np.zeros_like(Y0) if V0 is None else np.atleast_1d(np.asarray(V0, dtype=np.float64))
    eta, h = config.eta, config.step
    sig = config.sigma
    N = config.n_steps
    t = h * np.arange(N + 1)
    Y = np.empty((N + 1, Y0.size))
    V = np.empty_like(Y)
    acc = np.empty_like(Y)
    Y[0], V[0] = Y0, V0
    c1, c2 = 2.0 / eta, 2.0 / (eta * eta)
    jfun = _delay_function(config) if delayed else None
    delays = np.empty(N + 1) if jfun is not None else None

    def g(z):
        return np.asarray(grad(z), dtype=np.float64) / sig

    def yhat(tq, n, a_n):
        """Delayed read at time tq while stepping from sample n."""
        tr = tq - jfun(tq)
        if tr <= 0.0:
            return Y0
        if tr >= t[n]:
            d = tr - t[n]
            return Y[n] + d * V[n] + 0.5 * d * d * a_n
        i = min(int(tr / h), n - 1)
        s = (tr - t[i]) / h
        return _hermite(Y[i], V[i], Y[i + 1], V[i + 1], s, h)

    try:
        with np.errstate(over="raise", invalid="raise"):
            for n in range(N + 1):
                y, v = Y[n], V[n]
                if jfun is None:
                    a1 = -c1 * v - c2 * g(y)
                else:
                    delays[n] = jfun(t[n])
                    # the read at t_n never depends on the current acceleration
                    a1 = -c1 * v - c2 * g(yhat(t[n], n, np.zeros_like(y)))
                acc[n] = a1
                if n == N:
                    break
                tn = t[n]
                if jfun is not None:
                    g_mid = g(yhat(tn + 0.5 * h, n, a1))
                    g_end = g(yhat(tn + h, n, a1))
                y2, v2 = y + 0.5 * h * v, v + 0.5 * h * a1
                a2 = -c1 * v2 - c2 * (g(y2) if jfun is None else g_mid)
                y3, v3 = y + 0.5 * h * v2, v + 0.5 * h * a2
                a3 = -c1 * v3 - c2 * (g(y3) if jfun is None else g_mid)
                y4, v4 = y + h * v3, v + h * a3
                a4 = -c1 * v4 - c2 * (g(y4) if jfun is None else g_end)
                Y[n + 1] = y + h / 6.0 * (v + 2 * v2 + 2 * v3 + v4)
                V[n + 1] = v + h / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
                if not (np.all(np.isfinite(Y[n + 1])) and np.all(np.isfinite(V[n + 1]))):
                    raise StepSizeError(f"non-finite state at t={t[n + 1]:g}; reduce the step")
    except FloatingPointError as exc:
        raise StepSizeError(f"overflow near t={t[n]:g}; reduce the step") from exc
    if value is not None:
        f_gap = np.array([(value(y) - f_star) / sig for y in Y])
    else:
        f_gap = np.full(N + 1, np.nan)
    return OdeTrajectory(t, Y, V, acc, config, f_gap,
                         None if x_star is None else np.asarray(x_star, dtype=np.float64),
                         delays)


def integrate_sync(grad: Callable, Y0, V0, config: OdeConfig, value: Optional[Callable] = None,
                   x_star=None, f_star: float = 0.0, check_energy: bool = True) -> OdeTrajectory:
    """Classical RK4 on the synchronous equation.

    With ``value`` given and ``check_energy`` on, an energy increase beyond
    ``1e-6`` relative between samples raises :class:`StepSizeError`.
    """
    traj = _integrate(grad, Y0, V0, config, value, x_star, f_star, delayed=False)
    if check_energy and value is not None:
        ok, worst = is_nonincreasing(traj.energy(), rtol=1e-6)
        if not ok:
            raise StepSizeError(f"energy increased by {worst:.3g}; reduce the step")
    return traj


def integrate_delayed(grad: Callable, Y0, V0, config: OdeConfig, value: Optional[Callable] = None,
                      x_star=None, f_star: float = 0.0) -> OdeTrajectory:
    """RK4 on the delayed equation; the history before t=0 is frozen at Y0.

    Delayed reads between samples use cubic Hermite interpolation; reads
    that fall inside the current step use a second-order Taylor expansion
    from its left end.
    """
    return _integrate(grad, Y0, V0, config, value, x_star, f_star, delayed=config.tau > 0)


def delay_weight(s, c0: float, r: float, tau: float):
    """c(s) = c0 (e^{-rs} + e^{-r tau} / (1 - e^{-r tau}) (e^{-rs} - 1))."""
    s = np.asarray(s, dtype=np.float64)
    k = math.exp(-r * tau) / -math.expm1(-r * tau)
    e = np.exp(-r * s)
    return c0 * (e + k * (e - 1.0))


_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)


def _window_integrals(traj: OdeTrajectory, tq: float, weight, tau: float):
    """int_{max(0, tq - tau)}^{tq} weight(tq - s) |Y'(s)|^2 ds by 4-point Gauss-Legendre
    on each grid interval of the Hermite velocity interpolant."""
    lo = max(0.0, tq - tau)
    if tq <= lo:
        return 0.0
    h = traj.config.step
    edges = np.unique(np.concatenate([[lo, tq], traj.t[(traj.t > lo) & (traj.t < tq)]]))
    a, b = edges[:-1], edges[1:]
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    s_nodes = (mid[:, None] + half[:, None] * _GL_X[None, :]).ravel()
    idx = np.clip(np.floor(s_nodes / h).astype(int), 0, traj.t.size - 2)
    u = ((s_nodes - traj.t[idx]) / h)[:, None]
    u2, u3 = u * u, u * u * u
    vel = ((2 * u3 - 3 * u2 + 1) * traj.V[idx] + (u3 - 2 * u2 + u) * h * traj.acc[idx]
           + (-2 * u3 + 3 * u2) * traj.V[idx + 1] + (u3 - u2) * h * traj.acc[idx + 1])
    sq = np.einsum("ij,ij->i", vel, vel)
    w = (half[:, None] * _GL_W[None, :]).ravel()
    return float(np.sum(w * weight(tq - s_nodes) * sq))


def async_error_terms(traj: OdeTrajectory, t: float, c0: float, r: float, tau: float):
    """(A(t), D(t)) over the window ``[t - tau, t]``.

    Requires ``r tau <= 1/2`` and ``t`` inside the integrated range; the
    velocity vanishes before ``t = 0``.
    """
    if tau < 0:
        raise InvalidParameterError("tau must be nonnegative")
    if r * tau > 0.5 + 1e-12:
        raise InvalidParameterError(f"r*tau = {r * tau:.3g} exceeds 1/2")
    if t < 0 or t > traj.t[-1] * (1 + 1e-12):
        raise InvalidParameterError(f"no history for t={t:g}")
    if tau == 0:
        return 0.0, 0.0
    A = _window_integrals(traj, t, lambda s: delay_weight(s, c0, r, tau), tau)
    D = _window_integrals(traj, t, lambda s: np.ones_like(s), tau)
    return A, D


def composite_energy(traj: OdeTrajectory, c0: float, r: float, tau: float):
    """(E, A, E + exp(t/eta) A) at every sample."""
    E = traj.energy()
    A = np.array([async_error_terms(traj, float(tq), c0, r, tau)[0] for tq in traj.t])
    return E, A, E + np.exp(traj.t / traj.config.eta) * A


def is_nonincreasing(values, rtol: float = 1e-9):
    """(ok, worst excess) for ``v[j+1] <= v[j] + rtol (1 + |v[j]|)``."""
    v = np.asarray(values, dtype=np.float64)
    excess = (v[1:] - v[:-1]) - rtol * (1.0 + np.abs(v[:-1]))
    worst = float(excess.max()) if excess.size else -math.inf
    return bool(worst <= 0.0), worst


def lemma_residuals(traj: OdeTrajectory, c0: float, r: float, tau: float,
                    t_min: Optional[float] = None) -> np.ndarray:
    """Relative slack of d/dt(e^{rt} A) <= e^{rt} (c0 |Y'|^2 - c0 D / (2 tau)).

    The derivative is a centered difference at inner samples with
    ``t - step >= t_min`` (default ``tau``). Right after a start from rest
    A grows like t^3 and a centered difference cannot resolve it to a
    relative tolerance, hence the default cutoff. Positive entries are
    violations.
    """
    t = traj.t
    h = traj.config.step
    t_min = tau if t_min is None else t_min
    AD = np.array([async_error_terms(traj, float(tq), c0, r, tau) for tq in t])
    A, D = AD[:, 0], AD[:, 1]
    lhs = (np.exp(r * t[2:]) * A[2:] - np.exp(r * t[:-2]) * A[:-2]) / (2 * h)
    vsq = np.einsum("ij,ij->i", traj.V, traj.V)[1:-1]
    rhs = np.exp(r * t[1:-1]) * (c0 * vsq - 0.5 * c0 / tau * D[1:-1])
    keep = t[:-2] >= t_min - 1e-12 * h
    lhs, rhs = lhs[keep], rhs[keep]
    scale = np.abs(lhs) + np.abs(rhs) + 1e-300
    return (lhs - rhs) / scale


def discrete_scheme(grad: Callable, y0, eta: float, kappa: float, s: float, T: float,
                    sigma: float = 1.0) -> np.ndarray:
    """Expected-step iteration whose s -> 0 limit is the synchronous equation.

    Runs ``round(T / sqrt(s))`` steps from ``x0 = v0 = y0`` and returns the
    final ``y`` (which tracks ``Y(k sqrt(s))``).
    """
    rs = math.sqrt(s)
    alpha = 1.0 / (1.0 + eta / rs)
    beta = 1.0 - rs / eta
    x = np.array(y0, dtype=np.float64)
    v = x.copy()
    y = x.copy()
    for _ in range(int(round(T / rs))):
        gy = np.asarray(grad(y), dtype=np.float64) / sigma
        x = y - rs / (math.sqrt(kappa) * eta) * gy
        v = beta * v + (1.0 - beta) * y - rs / eta * gy
        y = alpha * v + (1.0 - alpha) * x
    return y


def scheme_initial_velocity(grad: Callable, y0, eta: float, kappa: float, sigma: float = 1.0):
    """Initial velocity of the continuum limit of :func:`discrete_scheme` started at rest
    in ``x`` and ``v``; the first step already moves ``y`` by an O(sqrt(s)) amount."""
    return -np.asarray(grad(np.asarray(y0, dtype=np.float64)), dtype=np.float64) / sigma \
        / (math.sqrt(kappa) * eta)


def integrate_scheme_limit(grad: Callable, hess_vec: Callable, y0, eta: float, kappa: float,
                           step: float, T: float, V0=None, sigma: float = 1.0):
    """RK4 on the exact continuum limit of :func:`discrete_scheme`:

        Y'' + (2/eta) Y' + kappa^{-1/2} eta^{-1} hess f(Y) Y'
            + (1 + kappa^{-1/2}) eta^{-2} grad f(Y) = 0.

    The two extra kappa^{-1/2} terms come from the gradient step in ``x``;
    they are second order in ``sqrt(s)`` per step but accumulate over the
    ``1/sqrt(s)`` steps per unit time. Returns (t, Y).
    """
    ik = 1.0 / math.sqrt(kappa)
    y = np.array(y0, dtype=np.float64)
    v = scheme_initial_velocity(grad, y, eta, kappa, sigma) if V0 is None \
        else np.array(V0, dtype=np.float64)

    def acc(y, v):
        return (-2.0 / eta * v - ik / eta * np.asarray(hess_vec(y, v)) / sigma
                - (1.0 + ik) / eta ** 2 * np.asarray(grad(y)) / sigma)

    N = int(math.ceil(T / step - 1e-9))
    t = step * np.arange(N + 1)
    Y = np.empty((N + 1, y.size))
    Y[0] = y
    for n in range(N):
        a1 = acc(y, v)
        a2 = acc(y + 0.5 * step * v, v + 0.5 * step * a1)
        v2 = v + 0.5 * step * a1
        v3 = v + 0.5 * step * a2
        a3 = acc(y + 0.5 * step * v2, v3)
        v4 = v + step * a3
        a4 = acc(y + step * v3, v4)
        y = y + step / 6.0 * (v + 2 * v2 + 2 * v3 + v4)
        v = v + step / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
        Y[n + 1] = y
    return t, Y


@dataclass
class RichardsonResult:
    order: float
    extrapolated: np.ndarray
    finest: np.ndarray
    reference: np.ndarray
    error_finest: float
    error_extrapolated: float


def richardson_check(grad: Callable, y0, eta: float, kappa: float, T: float, s0: float,
                     reference: np.ndarray, sigma: float = 1.0) -> RichardsonResult:
    """Run the discrete scheme at s0, s0/4, s0/16 (time steps h, h/2, h/4) and
    compare the extrapolated limit with an ODE reference value at T."""
    ys = [discrete_scheme(grad, y0, eta, kappa, s0 / 4 ** j, T, sigma) for j in range(3)]
    d1 = np.linalg.norm(ys[0] - ys[1])
    d2 = np.linalg.norm(ys[1] - ys[2])
    order = math.log2(d1 / d2) if d2 > 0 else math.inf
    p = 2.0 ** order
    extrap = ys[2] + (ys[2] - ys[1]) / (p - 1.0)
    reference = np.asarray(reference)
    return RichardsonResult(order, extrap, ys[2], reference,
                            float(np.linalg.norm(ys[2] - reference)),
                            float(np.linalg.norm(extrap - reference)))


def write_trajectory_csv(path, traj: OdeTrajectory, A: Optional[np.ndarray] = None):
    """Columns ``t,f_gap,E,A,composite``; A is zero for synchronous runs."""
    E = traj.energy()
    A = np.zeros_like(E) if A is None else np.asarray(A)
    comp = E + np.exp(traj.t / traj.config.eta) * A
    with open(path, "w") as fh:
        fh.write("t,f_gap,E,A,composite\n")
        for row in zip(traj.t, traj.f_gap, E, A, comp):
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")
