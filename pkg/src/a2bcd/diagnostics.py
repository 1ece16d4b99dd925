"""Lyapunov bookkeeping, convergence-rate fits and trace comparisons."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import ProblemOracle, ProblemParams
from .schedule import Schedule


class LyapunovMeter:
    """Evaluates ``rho_k = |v_k - x*|^2 + A_k + c (f(x_k) - f*)``.

    ``A_k = sum_j c_j |y_{k+1-j} - y_{k-j}|^2`` uses the y-history held by the
    state; with ``tau = 0`` it vanishes.
    """

    def __init__(self, params: ProblemParams, schedule: Schedule, x_star: np.ndarray,
                 f_star: float, value: Callable[[np.ndarray], float]):
        self.params = params
        self.schedule = schedule
        self.x_star = np.asarray(x_star, dtype=np.float64)
        self.f_star = float(f_star)
        self.value = value
        self.c = schedule.c_lyap
        self.weights = np.asarray(schedule.c_weights, dtype=np.float64)

    @property
    def tau(self) -> int:
        return self.weights.size

    def async_error(self, window: np.ndarray) -> float:
        """A_k from rows y_k, y_{k-1}, ..., y_{k-tau}."""
        if self.tau == 0:
            return 0.0
        if window.shape[0] < self.tau + 1:
            raise ValueError(f"need {self.tau + 1} history vectors, got {window.shape[0]}")
        diffs = window[: self.tau] - window[1: self.tau + 1]
        return float(self.weights @ np.einsum("ij,ij->i", diffs, diffs))

    def rho(self, state, fx_gap: Optional[float] = None) -> float:
        if fx_gap is None:
            fx_gap = self.value(state.x) - self.f_star
        dv = state.v - self.x_star
        window = state.history_window() if self.tau else None
        a = self.async_error(window) if self.tau else 0.0
        return float(dv @ dv + a + self.c * fx_gap)


def lyapunov(meter: LyapunovMeter, state) -> float:
    return meter.rho(state)


def expected_next_rho(meter: LyapunovMeter, oracle: ProblemOracle, state, yhat: np.ndarray,
                      probabilities: np.ndarray) -> float:
    """E_k[rho_{k+1}] by enumerating every block the sampler could draw.

    The read ``yhat`` is fixed before the draw (delays never depend on the
    block), so the conditional expectation is a finite weighted sum.
    """
    p = oracle.params
    sch = meter.schedule
    a, b, h = sch.alpha, sch.beta, sch.h
    part = oracle.partition
    g = oracle.gradient(yhat)
    y, v = state.y, state.v
    # v_{k+1} - x* = w - D2_j P_j g_j ; y_{k+1} - y_k = u - D1_j P_j g_j
    w = b * v + (1.0 - b) * y - meter.x_star
    u = a * b * (v - y)
    d2 = 1.0 / np.sqrt(p.sigma * p.L_blocks)
    d1 = a * d2 + h * (1.0 - a) / p.L_blocks
    gg = part.block_sums(g * g)
    wg = part.block_sums(w * g)
    ug = part.block_sums(u * g)
    v_term = w @ w - 2.0 * d2 * wg + d2 * d2 * gg
    if meter.tau:
        window = state.history_window()
        diffs = window[: meter.tau - 1] - window[1: meter.tau]
        older = np.einsum("ij,ij->i", diffs, diffs)
        a_rest = float(meter.weights[1:] @ older)
        a_term = meter.weights[0] * (u @ u - 2.0 * d1 * ug + d1 * d1 * gg) + a_rest
    else:
        a_term = 0.0
    steps = (h / p.L_blocks)[part.block_ids()] * g
    f_term = oracle.values_after_block_steps(y, steps) - meter.f_star
    return float(probabilities @ (v_term + a_term + meter.c * f_term))


@dataclass
class RateFit:
    slope: float
    intercept: float
    residual: float
    window: tuple
    n_points: int

    @property
    def rate(self) -> float:
        """Per-iteration contraction factor exp(slope)."""
        return math.exp(self.slope)

    def complexity(self, eps: float) -> float:
        """Iterations to reduce the metric by ``eps``; inf when not decreasing."""
        if self.slope >= 0:
            return math.inf
        return math.log(1.0 / eps) / -self.slope


MIN_FIT_POINTS = 50


def fit_rate(k: Sequence[float], values: Sequence[float], window: Optional[tuple] = None,
             min_points: int = MIN_FIT_POINTS) -> RateFit:
    """Least-squares slope of log(values) against k over ``window = (k_lo, k_hi)``."""
    k = np.asarray(k, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if window is not None:
        sel = (k >= window[0]) & (k <= window[1])
        k, values = k[sel], values[sel]
    if k.size < min_points:
        raise ValueError(f"rate fit needs at least {min_points} checkpoints, got {k.size}")
    if np.any(~(values > 0)):
        raise ValueError("rate fit needs a positive metric in the window")
    logv = np.log(values)
    A = np.column_stack([k, np.ones_like(k)])
    coef, *_ = np.linalg.lstsq(A, logv, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - logv) ** 2)))
    slope = float(coef[0])
    if abs(slope) < 1e-14 * max(1.0, float(np.abs(logv).max())):
        slope = 0.0
    return RateFit(slope, float(coef[1]), resid, (float(k[0]), float(k[-1])), int(k.size))


def fit_trace(trace, metric: str = "f_y_gap", window: Optional[tuple] = None,
              floor: float = 0.0) -> RateFit:
    """Rate fit over a trace column, dropping checkpoints at or below ``floor``."""
    k = trace.k.astype(np.float64)
    vals = trace.column(metric)
    keep = vals > floor
    return fit_rate(k[keep], vals[keep], window)


def first_hit(trace, metric: str, target: float, by: str = "k") -> float:
    """Iteration count (or seconds) at which ``metric`` first drops to ``target``."""
    vals = trace.column(metric)
    hit = np.nonzero(vals <= target)[0]
    if hit.size == 0:
        return math.inf
    cp = trace.checkpoints[hit[0]]
    return float(cp.k if by == "k" else cp.seconds)


@dataclass
class ComparisonRow:
    target: float
    ratio: float
    ci_low: float
    ci_high: float


@dataclass
class ComparisonReport:
    metric: str
    by: str
    rows: list

    def to_csv(self) -> str:
        lines = ["target,ratio,ci_low,ci_high"]
        lines += [f"{r.target:.6g},{r.ratio:.6g},{r.ci_low:.6g},{r.ci_high:.6g}" for r in self.rows]
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [f"{self.metric} comparison by {self.by} (B/A ratio)"]
        for r in self.rows:
            lines.append(f"  target {r.target:.3g}: ratio {r.ratio:.4g} "
                         f"[{r.ci_low:.4g}, {r.ci_high:.4g}]")
        return "\n".join(lines) + "\n"


def compare_traces(traces_a, traces_b, metric: str = "f_y_gap", targets=(1e-6,),
                   by: str = "k", quantile: float = 0.95, n_boot: int = 2000,
                   seed: int = 0) -> ComparisonReport:
    """Ratio of mean time-to-target, B over A, with percentile bootstrap intervals.

    Each side is a trace or a list of repeated traces (for example one per
    seed); intervals come from resampling the repeats.
    """
    if not isinstance(traces_a, (list, tuple)):
        traces_a = [traces_a]
    if not isinstance(traces_b, (list, tuple)):
        traces_b = [traces_b]
    rng = np.random.default_rng(seed)
    rows = []
    lo_q, hi_q = (1 - quantile) / 2, 1 - (1 - quantile) / 2
    for t in targets:
        ha = np.array([first_hit(tr, metric, t, by) for tr in traces_a])
        hb = np.array([first_hit(tr, metric, t, by) for tr in traces_b])
        ratio = _safe_ratio(hb.mean(), ha.mean())
        if ha.size > 1 or hb.size > 1:
            ia = rng.integers(0, ha.size, size=(n_boot, ha.size))
            ib = rng.integers(0, hb.size, size=(n_boot, hb.size))
            boot = np.array([_safe_ratio(b, a) for a, b in
                             zip(ha[ia].mean(axis=1), hb[ib].mean(axis=1))])
            lo, hi = np.quantile(boot, [lo_q, hi_q])
        else:
            lo = hi = ratio
        rows.append(ComparisonRow(t, ratio, float(lo), float(hi)))
    return ComparisonReport(metric, by, rows)


def _safe_ratio(num, den):
    if den == 0:
        return 1.0 if num == 0 else math.inf
    if math.isinf(den) and math.isinf(num):
        return math.nan
    return float(num / den)


@dataclass
class LowerBoundTrials:
    solver: str
    ratios: np.ndarray

    @property
    def mean(self) -> float:
        return float(self.ratios.mean())

    @property
    def stderr(self) -> float:
        return float(self.ratios.std(ddof=1) / math.sqrt(self.ratios.size))


def lower_bound_trials(problem, solver: str, k: int, trials: int, seed: int = 0,
                       start_block: Optional[int] = None) -> LowerBoundTrials:
    """|x_k - x*|^2 / |x_0 - x*|^2 over independent runs of ``solver`` on a worst-case problem.

    ``x_0`` is the minimizer with ``start_block`` zeroed (default: the block
    with the largest per-block bound, i.e. the largest kappa_i). Trial ``t``
    uses seed ``seed + t``.
    """
    from .solvers import nu_acdm_run, rbcd_run

    if start_block is None:
        start_block = int(np.argmax(problem.kappa_blocks))
    x0 = problem.start_point(start_block)
    xs = problem.x_star
    e0 = float((x0 - xs) @ (x0 - xs))
    out = np.empty(trials)
    for t in range(trials):
        if k == 0:
            out[t] = 1.0
            continue
        if solver == "rbcd":
            tr = rbcd_run(problem, k, seed=seed + t, x0=x0, checkpoint_every=k,
                          f_star=problem.f_star, x_star=xs)
        elif solver == "nu_acdm":
            tr = nu_acdm_run(problem, k, seed=seed + t, x0=x0, checkpoint_every=k,
                             f_star=problem.f_star, x_star=xs)
        else:
            raise ValueError(f"unknown solver {solver!r}")
        d = tr.x - xs
        out[t] = float(d @ d) / e0
    return LowerBoundTrials(solver, out)


def expected_ratio_study(oracle: ProblemOracle, schedule: Schedule, delays_factory,
                         seeds: Sequence[int], budget: int, x_star=None, f_star=None):
    """Per-iteration ratios E_k[rho_{k+1}] / rho_k along simulated runs.

    ``delays_factory(seed)`` returns the :class:`~a2bcd.solvers.DelaySchedule`
    for one run. The conditional expectation is computed exactly by
    :func:`expected_next_rho`, so the only randomness left is the path
    itself. Returns an array of shape ``(len(seeds), budget)``.
    """
    from .core import BlockSampler
    from .solvers import run_simulated

    xs = oracle.x_star if x_star is None else x_star
    fs = oracle.f_star if f_star is None else f_star
    if xs is None or fs is None:
        raise ValueError("the Lyapunov function needs a known minimizer")
    meter = LyapunovMeter(oracle.params, schedule, xs, fs, oracle.value)
    probs = BlockSampler.from_params(oracle.params).probabilities
    out = np.empty((len(seeds), budget))
    for r, seed in enumerate(seeds):
        row = []

        def cb(state, i, yhat):
            rho = meter.rho(state)
            row.append(expected_next_rho(meter, oracle, state, yhat, probs) / rho)

        run_simulated(oracle, schedule, delays_factory(seed), budget=budget, seed=seed,
                      checkpoint_every=budget, meter=meter, x_star=xs, f_star=fs, callback=cb)
        out[r] = row
    return out
