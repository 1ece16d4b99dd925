"""Dense single-threaded reference solvers and the simulated-delay engine.

The A2BCD iteration here keeps the three sequences explicitly::

    y_k     = alpha v_k + (1 - alpha) x_k
    x_{k+1} = y_k - h / L_i  grad_i f(yhat_k)
    v_{k+1} = beta v_k + (1 - beta) y_k - (sigma L_i)^{-1/2} grad_i f(yhat_k)

where ``yhat_k`` takes block ``j`` from ``y_{k - delay(k, j)}``. With zero
delays it reduces to NU_ACDM.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from .core import BlockSampler, InvalidParameterError, ProblemOracle
from .schedule import Schedule, main_coefficients


class DenseState:
    """Iterates (x, v, y) plus a ring of the last ``tau + 1`` y-vectors.

    ``history(j)`` returns ``y_{k-j}``, clamped to ``y_0`` before the start.
    """

    def __init__(self, x0: np.ndarray, alpha: float, tau: int = 0, v0: Optional[np.ndarray] = None):
        x0 = np.array(x0, dtype=np.float64)
        self.x = x0.copy()
        self.v = x0.copy() if v0 is None else np.array(v0, dtype=np.float64)
        self.y = alpha * self.v + (1.0 - alpha) * self.x
        self.k = 0
        self.tau = tau
        self._ring = np.tile(self.y, (tau + 1, 1))
        self._head = 0

    def history(self, j: int) -> np.ndarray:
        if j > self.tau:
            raise IndexError(f"delay {j} exceeds history length {self.tau + 1}")
        return self._ring[(self._head - j) % (self.tau + 1)]

    def history_window(self) -> np.ndarray:
        """y_k, y_{k-1}, ..., y_{k-tau} as rows."""
        idx = (self._head - np.arange(self.tau + 1)) % (self.tau + 1)
        return self._ring[idx]

    def push_y(self):
        self._head = (self._head + 1) % (self.tau + 1)
        self._ring[self._head] = self.y

    def copy(self) -> "DenseState":
        other = object.__new__(DenseState)
        other.x, other.v, other.y = self.x.copy(), self.v.copy(), self.y.copy()
        other.k, other.tau = self.k, self.tau
        other._ring, other._head = self._ring.copy(), self._head
        return other


class DelaySchedule:
    """Staleness j(k, i) of block ``i`` in the read used at iteration ``k``.

    Modes: ``zero``, ``constant`` (every block ``tau`` behind), ``uniform``
    (independent draws in ``[0, tau]`` from a dedicated generator) and
    ``recorded`` (per-iteration staleness replayed, same for every block).
    Delays never depend on the sampled block and are clamped to ``k``.
    """

    def __init__(self, mode: str = "zero", tau: int = 0, seed: int = 0,
                 recorded: Optional[Sequence[int]] = None):
        if mode not in ("zero", "constant", "uniform", "recorded"):
            raise InvalidParameterError(f"unknown delay mode {mode!r}")
        if mode == "recorded":
            if recorded is None:
                raise InvalidParameterError("recorded mode needs a staleness sequence")
            self._recorded = np.asarray(recorded, dtype=np.int64)
            tau = int(self._recorded.max(initial=0))
        if tau < 0:
            raise InvalidParameterError("tau must be nonnegative")
        if mode == "zero":
            tau = 0
        self.mode, self.tau, self.seed = mode, int(tau), seed
        self._rng = np.random.default_rng(seed)

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def constant(cls, tau: int):
        return cls("constant", tau)

    @classmethod
    def uniform(cls, tau: int, seed: int = 0):
        return cls("uniform", tau, seed)

    @classmethod
    def replay(cls, staleness: Sequence[int]):
        return cls("recorded", recorded=staleness)

    def delays(self, k: int, n_blocks: int) -> np.ndarray:
        if self.mode == "zero":
            out = np.zeros(n_blocks, dtype=np.int64)
        elif self.mode == "constant":
            out = np.full(n_blocks, self.tau, dtype=np.int64)
        elif self.mode == "uniform":
            out = self._rng.integers(0, self.tau + 1, size=n_blocks)
        else:
            j = self._recorded[k] if k < self._recorded.size else 0
            out = np.full(n_blocks, j, dtype=np.int64)
        return np.minimum(out, k)


@dataclass
class Checkpoint:
    k: int
    seconds: float
    f_x_gap: float
    f_y_gap: float
    rho: Optional[float] = None


@dataclass
class Trace:
    checkpoints: List[Checkpoint] = field(default_factory=list)
    seed: Optional[int] = None
    config: dict = field(default_factory=dict)
    x: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None

    def add(self, cp: Checkpoint):
        if self.checkpoints and cp.k <= self.checkpoints[-1].k:
            raise ValueError("checkpoint iteration counts must increase")
        self.checkpoints.append(cp)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(c, name) if getattr(c, name) is not None else np.nan
                         for c in self.checkpoints], dtype=np.float64)

    @property
    def k(self) -> np.ndarray:
        return np.array([c.k for c in self.checkpoints], dtype=np.int64)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            write_trace_csv(self, fh)


def _g17(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return format(v, ".17g")


def write_trace_csv(trace: Trace, fh):
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["k", "seconds", "f_x_gap", "f_y_gap", "rho"])
    for c in trace.checkpoints:
        w.writerow([c.k, _g17(c.seconds), _g17(c.f_x_gap), _g17(c.f_y_gap), _g17(c.rho)])


def read_trace_csv(path) -> Trace:
    tr = Trace()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            tr.add(Checkpoint(int(row["k"]), float(row["seconds"]), float(row["f_x_gap"]),
                              float(row["f_y_gap"]), float(row["rho"]) if row["rho"] else None))
    return tr


# ---------------------------------------------------------------------------
# single steps


def rbcd_step(oracle: ProblemOracle, x: np.ndarray, i: int) -> np.ndarray:
    """x <- x - grad_i f(x) / L_i on block ``i`` (in place)."""
    blk = oracle.partition.block(i)
    x[blk] -= oracle.block_gradient(i, x) / oracle.params.L_blocks[i]
    return x


def a2bcd_step(oracle: ProblemOracle, schedule: Schedule, state: DenseState, i: int,
               delayed_y: np.ndarray) -> DenseState:
    """Advance ``state`` by one iteration using block ``i`` read at ``delayed_y``."""
    p = oracle.params
    Li = p.L_blocks[i]
    blk = oracle.partition.block(i)
    g = oracle.block_gradient(i, delayed_y)
    a, b = schedule.alpha, schedule.beta
    y = state.y
    x_new = y.copy()
    x_new[blk] -= (schedule.h / Li) * g
    v_new = b * state.v + (1.0 - b) * y
    v_new[blk] -= g / math.sqrt(p.sigma * Li)
    state.x, state.v = x_new, v_new
    state.y = a * v_new + (1.0 - a) * x_new
    state.k += 1
    state.push_y()
    return state


def assemble_delayed(state: DenseState, delays: np.ndarray, block_ids: np.ndarray) -> np.ndarray:
    """Inconsistent read: block ``j`` of the result comes from ``y_{k - delays[j]}``."""
    if not delays.any():
        return state.y
    if np.all(delays == delays[0]):
        return state.history(int(delays[0]))
    window = state.history_window()
    return window[delays[block_ids], np.arange(block_ids.size)]


# ---------------------------------------------------------------------------
# runs


def _gap(oracle, x, f_star):
    return float(oracle.value(x) - f_star)


def reference_optimum(oracle: ProblemOracle, tol: float = 1e-12, max_epochs: int = 200_000,
                      seed: int = 0):
    """(x*, f*, label): analytic when the oracle knows them, else a NU_ACDM pre-solve
    stopped once the full gradient norm drops to ``tol``."""
    if oracle.x_star is not None:
        f_star = oracle.f_star if oracle.f_star is not None else oracle.value(oracle.x_star)
        return oracle.x_star, float(f_star), "analytic"
    from .schedule import make_schedule

    sched = make_schedule(oracle.params, 0)
    n = oracle.partition.n_blocks
    state = DenseState(np.zeros(oracle.dim), sched.alpha)
    sampler = BlockSampler.from_params(oracle.params, seed)
    for _ in range(max_epochs):
        for _ in range(n):
            a2bcd_step(oracle, sched, state, sampler.sample(), state.y)
        if np.linalg.norm(oracle.gradient(state.y)) <= tol:
            break
    return state.y.copy(), float(oracle.value(state.y)), "oracle-derived"


@dataclass
class _Targets:
    x_star: Optional[np.ndarray]
    f_star: float
    label: str


def _targets(oracle, x_star, f_star):
    if f_star is not None:
        return _Targets(x_star if x_star is not None else oracle.x_star, float(f_star), "given")
    xs, fs, label = reference_optimum(oracle)
    return _Targets(xs, fs, label)


def run_simulated(
    oracle: ProblemOracle,
    schedule: Schedule,
    delays: Optional[DelaySchedule] = None,
    budget: int = 1000,
    seed: int = 0,
    x0: Optional[np.ndarray] = None,
    checkpoint_every: Optional[int] = None,
    meter=None,
    x_star: Optional[np.ndarray] = None,
    f_star: Optional[float] = None,
    callback: Optional[Callable[[DenseState, int, np.ndarray], None]] = None,
    sampler: Optional[BlockSampler] = None,
) -> Trace:
    """A2BCD with deterministic simulated staleness.

    Reproducible given ``(seed, delays)``. The Lyapunov value is recorded at
    checkpoints when a :class:`~a2bcd.diagnostics.LyapunovMeter` is passed
    (or built automatically when the minimizer is known). ``callback`` sees
    the state, the block about to be used and the delayed read, before each
    step.
    """
    if budget < 1:
        raise InvalidParameterError("budget must be >= 1")
    delays = delays or DelaySchedule.zero()
    n = oracle.partition.n_blocks
    every = checkpoint_every or n
    tau_hist = max(delays.tau, schedule.tau)
    x0 = np.zeros(oracle.dim) if x0 is None else x0
    state = DenseState(x0, schedule.alpha, tau=tau_hist)
    sampler = sampler or BlockSampler.from_params(oracle.params, seed)
    block_ids = oracle.partition.block_ids()
    tg = _targets(oracle, x_star, f_star)
    if meter is None and tg.x_star is not None:
        from .diagnostics import LyapunovMeter

        meter = LyapunovMeter(oracle.params, schedule, tg.x_star, tg.f_star, oracle.value)
    trace = Trace(seed=seed, config={
        "solver": "a2bcd", "delay_mode": delays.mode, "delay_tau": delays.tau,
        "psi": schedule.psi, "f_star_source": tg.label,
    })
    t0 = time.perf_counter()

    def record():
        fx = _gap(oracle, state.x, tg.f_star)
        rho = meter.rho(state, fx_gap=fx) if meter is not None else None
        trace.add(Checkpoint(state.k, time.perf_counter() - t0, fx,
                             _gap(oracle, state.y, tg.f_star), rho))

    record()
    for k in range(budget):
        i = sampler.sample()
        yhat = assemble_delayed(state, delays.delays(k, n), block_ids)
        if callback is not None:
            callback(state, i, yhat)
        a2bcd_step(oracle, schedule, state, i, yhat)
        if state.k % every == 0 or state.k == budget:
            record()
    trace.x, trace.y, trace.v = state.x, state.y, state.v
    return trace


def nu_acdm_run(oracle: ProblemOracle, budget: int, seed: int = 0,
                x0: Optional[np.ndarray] = None, checkpoint_every: Optional[int] = None,
                f_star: Optional[float] = None, x_star: Optional[np.ndarray] = None,
                iterates: Optional[list] = None, sampler: Optional[BlockSampler] = None) -> Trace:
    """Synchronous non-uniform accelerated coordinate descent.

    Written out independently of :func:`a2bcd_step` so it can serve as the
    zero-delay reference. When ``iterates`` is a list, (x, v, y) copies are
    appended after every step.
    """
    if budget < 1:
        raise InvalidParameterError("budget must be >= 1")
    p = oracle.params
    alpha, beta, _ = main_coefficients(p, 0.0)
    n = oracle.partition.n_blocks
    every = checkpoint_every or n
    x = np.zeros(oracle.dim) if x0 is None else np.array(x0, dtype=np.float64)
    v = x.copy()
    sampler = sampler or BlockSampler.from_params(p, seed)
    tg = _targets(oracle, x_star, f_star)
    inv_sqrt = 1.0 / np.sqrt(p.sigma * p.L_blocks)
    trace = Trace(seed=seed, config={"solver": "nu_acdm", "f_star_source": tg.label})
    t0 = time.perf_counter()
    y = alpha * v + (1.0 - alpha) * x
    trace.add(Checkpoint(0, 0.0, _gap(oracle, x, tg.f_star), _gap(oracle, y, tg.f_star)))
    for k in range(1, budget + 1):
        i = sampler.sample()
        blk = oracle.partition.block(i)
        g = oracle.block_gradient(i, y)
        x = y.copy()
        x[blk] -= g / p.L_blocks[i]
        v = beta * v + (1.0 - beta) * y
        v[blk] -= inv_sqrt[i] * g
        y = alpha * v + (1.0 - alpha) * x
        if iterates is not None:
            iterates.append((x.copy(), v.copy(), y.copy()))
        if k % every == 0 or k == budget:
            trace.add(Checkpoint(k, time.perf_counter() - t0, _gap(oracle, x, tg.f_star),
                                 _gap(oracle, y, tg.f_star)))
    trace.x, trace.y, trace.v = x, y, v
    return trace


def rbcd_run(oracle: ProblemOracle, budget: int, seed: int = 0, x0: Optional[np.ndarray] = None,
             checkpoint_every: Optional[int] = None, sampling: str = "uniform",
             f_star: Optional[float] = None, x_star: Optional[np.ndarray] = None) -> Trace:
    """Non-accelerated randomized block coordinate descent with 1/L_i steps.

    ``sampling`` is ``uniform`` or ``lipschitz`` (probabilities sqrt(L_i)/S).
    """
    if budget < 1:
        raise InvalidParameterError("budget must be >= 1")
    n = oracle.partition.n_blocks
    if sampling == "uniform":
        sampler = BlockSampler.uniform(n, seed)
    elif sampling == "lipschitz":
        sampler = BlockSampler.from_params(oracle.params, seed)
    else:
        raise InvalidParameterError(f"unknown sampling {sampling!r}")
    every = checkpoint_every or n
    x = np.zeros(oracle.dim) if x0 is None else np.array(x0, dtype=np.float64)
    tg = _targets(oracle, x_star, f_star)
    trace = Trace(seed=seed, config={"solver": "rbcd", "sampling": sampling,
                                     "f_star_source": tg.label})
    t0 = time.perf_counter()
    gap = _gap(oracle, x, tg.f_star)
    trace.add(Checkpoint(0, 0.0, gap, gap))
    for k in range(1, budget + 1):
        rbcd_step(oracle, x, sampler.sample())
        if k % every == 0 or k == budget:
            gap = _gap(oracle, x, tg.f_star)
            trace.add(Checkpoint(k, time.perf_counter() - t0, gap, gap))
    trace.x = trace.y = trace.v = x
    return trace
