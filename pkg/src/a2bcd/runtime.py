"""Shared-memory parallel A2BCD on the sparsified (p, q, B) iteration.

With ``C = [[1 - alpha beta, alpha beta], [1 - beta, beta]]`` the dense
recursion is ``(y, v)_{k+1} = C (y, v)_k - (D1, D2) (x) grad_i``. Writing
``(y, v)_k = C^k (p, q)_k`` turns every update of ``p`` and ``q`` into a
block-sparse one, and for affine-gradient problems the products ``A p`` and
``A q`` can be maintained the same way. ``B`` tracks ``C^k`` and ``b`` its
inverse; both are restarted to the identity periodically because ``b``
grows like ``(beta (1 - alpha))^-k``.

Concurrency model: workers read ``p, q, Ap, Aq`` without locks (inconsistent
reads), update them with per-scalar atomic adds, and exchange ``(B, b)``
through a version-stamped mutual-exclusion region. Restarts run while every
worker is parked outside its read/write critical section.
"""

from __future__ import annotations

import itertools
import math
import threading
import time
from collections import Counter
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .core import BlockSampler, InvalidParameterError, ProblemOracle
from .schedule import Schedule, update_coefficients
from .solvers import Checkpoint, Trace, reference_optimum

#: entries of b beyond this are treated as overflow risk
B_LIMIT = 1e280
#: cap on b growth between restarts, bounding cancellation in y = B11 p + B12 q
GROWTH_LIMIT = 1e6


class DegenerateTransformError(ArithmeticError):
    """The sparsifying matrix became numerically singular; a restart is overdue."""


def transition_matrix(alpha: float, beta: float) -> np.ndarray:
    return np.array([[1.0 - alpha * beta, alpha * beta], [1.0 - beta, beta]])


def default_restart_period(schedule: Schedule, cap: int = 1000) -> int:
    """Largest period keeping ``(beta (1 - alpha))^-R`` below both the overflow
    guard and the cancellation guard, capped at ``cap``."""
    lam = schedule.beta * (1.0 - schedule.alpha)
    per = -math.log(lam)
    r_over = int(math.log(B_LIMIT) / per)
    r_prec = int(math.log(GROWTH_LIMIT) / per)
    return max(1, min(cap, r_over, r_prec))


def inv2(B: np.ndarray) -> np.ndarray:
    det = B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0]
    return np.array([[B[1, 1], -B[0, 1]], [-B[1, 0], B[0, 0]]]) / det


def recover_yv(B: np.ndarray, p: np.ndarray, q: np.ndarray):
    """(y, v) = B (p, q)."""
    det = B[0, 0] * B[1, 1] - B[0, 1] * B[1, 0]
    if not abs(det) >= 1e-280:
        raise DegenerateTransformError(f"|det B| = {abs(det):.3g}; restart overdue")
    return B[0, 0] * p + B[0, 1] * q, B[1, 0] * p + B[1, 1] * q


@dataclass
class Snapshot:
    k: int
    version: int
    B: np.ndarray
    b: np.ndarray


@dataclass
class StalenessRecord:
    """Per-write staleness: updates applied between a worker's read and its write."""

    counts: Counter = field(default_factory=Counter)
    sequence: list = field(default_factory=list)
    keep_sequence: bool = True

    def add(self, staleness: int):
        self.counts[staleness] += 1
        if self.keep_sequence:
            self.sequence.append(staleness)

    @property
    def max(self) -> int:
        return max(self.counts) if self.counts else 0

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def histogram(self):
        return sorted(self.counts.items())

    def to_csv(self, path):
        with open(path, "w") as fh:
            fh.write("staleness,count\n")
            for s, c in self.histogram():
                fh.write(f"{s},{c}\n")


class SparseState:
    """Shared vectors and the versioned (B, b) pair."""

    def __init__(self, p: np.ndarray, q: np.ndarray, Ap=None, Aq=None):
        self.p = np.ascontiguousarray(p, dtype=np.float64)
        self.q = np.ascontiguousarray(q, dtype=np.float64)
        self.Ap = None if Ap is None else np.ascontiguousarray(Ap, dtype=np.float64)
        self.Aq = None if Aq is None else np.ascontiguousarray(Aq, dtype=np.float64)
        self.B = np.eye(2)
        self.b = np.eye(2)
        self.k = 0
        self.version = 0
        self.lock = threading.Lock()


class _Gate:
    """Workers enter/exit freely; ``exclusive`` waits until none are inside."""

    def __init__(self):
        self._cond = threading.Condition()
        self._active = 0
        self._closed = False

    def enter(self):
        with self._cond:
            while self._closed:
                self._cond.wait()
            self._active += 1

    def exit(self):
        with self._cond:
            self._active -= 1
            if self._closed and self._active == 0:
                self._cond.notify_all()

    @contextmanager
    def exclusive(self):
        with self._cond:
            while self._closed:
                self._cond.wait()
            self._closed = True
            while self._active:
                self._cond.wait()
        try:
            yield
        finally:
            with self._cond:
                self._closed = False
                self._cond.notify_all()


class SparseA2BCD:
    """The sparsified iteration over one shared state.

    ``step`` runs a full read/compute/write cycle and is what a single
    thread uses; :func:`run_parallel` drives ``read``/``gradient``/``write``
    from many threads.
    """

    def __init__(self, oracle: ProblemOracle, schedule: Schedule, y0=None, v0=None,
                 restart_period: Optional[int] = None, dry: bool = False,
                 backend: Optional[str] = None, check_pairs: bool = True,
                 max_staleness: Optional[int] = None):
        self.oracle = oracle
        self.schedule = schedule
        self.k_impl = kernels.get(backend)
        self.backend = backend or kernels.BACKEND
        d = oracle.dim
        y0 = np.zeros(d) if y0 is None else np.asarray(y0, dtype=np.float64)
        v0 = y0.copy() if v0 is None else np.asarray(v0, dtype=np.float64)
        self.affine = oracle.affine
        if self.affine is not None:
            A = self.affine.A
            self._indptr = np.ascontiguousarray(A.indptr, dtype=np.intc)
            self._indices = np.ascontiguousarray(A.indices, dtype=np.intc)
            self._data = np.ascontiguousarray(A.data, dtype=np.float64)
            self._shift = np.ascontiguousarray(self.affine.shift, dtype=np.float64)
            self.state = SparseState(y0.copy(), v0.copy(), A @ y0, A @ v0)
        else:
            self.state = SparseState(y0.copy(), v0.copy())
        self.dry = dry
        if dry:
            self.M = np.eye(2)
            self._coef = np.zeros((oracle.partition.n_blocks, 2))
        else:
            self.M = transition_matrix(schedule.alpha, schedule.beta)
            self._coef = np.array([update_coefficients(oracle.params, schedule, i)
                                   for i in range(oracle.partition.n_blocks)])
        self.restart_period = restart_period or default_restart_period(schedule)
        self.since_restart = 0
        self.restarts = 0
        self.read_retries = 0
        self.pair_mismatches = 0
        self.check_pairs = check_pairs
        self.max_staleness = max_staleness
        self.throttled = 0
        self.staleness = StalenessRecord()
        self._offsets = oracle.partition.offsets

    # -- read phase -------------------------------------------------------
    def read(self) -> Snapshot:
        """Consistent (k, B, b) via the version stamp; retries while a writer is inside."""
        st = self.state
        while True:
            v1 = st.version
            if v1 & 1:
                self.read_retries += 1
                time.sleep(0)
                continue
            B, b, k = st.B, st.b, st.k
            if st.version == v1:
                break
            self.read_retries += 1
        if self.check_pairs:
            err = np.abs(B @ b - np.eye(2)).max()
            if not err <= 1e-6 * max(1.0, np.abs(b).max()):
                self.pair_mismatches += 1
        return Snapshot(k, v1, B, b)

    def gradient(self, i: int, snap: Snapshot) -> np.ndarray:
        """Block gradient at the affine reconstruction B11 p + B12 q of the snapshot."""
        st = self.state
        c0, c1 = int(self._offsets[i]), int(self._offsets[i + 1])
        B11, B12 = snap.B[0, 0], snap.B[0, 1]
        if self.affine is not None:
            out = np.empty(c1 - c0)
            self.k_impl.ridge_block_grad(self._indptr, self._indices, self._data, c0, c1,
                                         st.Ap, st.Aq, st.p, st.q, self._shift, B11, B12,
                                         self.affine.scale_prod, self.affine.scale_id, out)
            return out
        yhat = np.empty(st.p.size)
        self.k_impl.combine(B11, B12, st.p, st.q, yhat)
        return np.ascontiguousarray(self.oracle.block_gradient(i, yhat), dtype=np.float64)

    # -- write phase ------------------------------------------------------
    def write(self, i: int, grad: np.ndarray, snap: Snapshot) -> Optional[int]:
        """Apply one update and return its staleness.

        With ``max_staleness`` set, a write whose read is older than the cap
        is rejected (returns ``None``) and the caller must read again.
        """
        st = self.state
        with st.lock:
            if self.max_staleness is not None and st.k - snap.k > self.max_staleness:
                self.throttled += 1
                return None
            st.version += 1
            B = self.M @ st.B
            b = inv2(B)
            st.B = B
            st.b = b
            k_before = st.k
            st.k = k_before + 1
            self.since_restart += 1
            st.version += 1
            staleness = k_before - snap.k
            self.staleness.add(staleness)
        d1, d2 = self._coef[i]
        cp = b[0, 0] * d1 + b[0, 1] * d2
        cq = b[1, 0] * d1 + b[1, 1] * d2
        c0, c1 = int(self._offsets[i]), int(self._offsets[i + 1])
        if self.affine is not None:
            self.k_impl.ridge_scatter(self._indptr, self._indices, self._data, c0, c1, grad,
                                      cp, cq, st.p, st.q, st.Ap, st.Aq)
        else:
            self.k_impl.block_scatter(c0, grad, cp, cq, st.p, st.q)
        return staleness

    def restart_due(self) -> bool:
        return self.since_restart >= self.restart_period

    def restart(self):
        """Fold B into the vectors and reset it; callers guarantee exclusive access."""
        st = self.state
        B = st.B
        y, v = recover_yv(B, st.p, st.q)
        if st.Ap is not None:
            Ay, Av = recover_yv(B, st.Ap, st.Aq)
            st.Ap[:] = Ay
            st.Aq[:] = Av
        st.p[:] = y
        st.q[:] = v
        with st.lock:
            st.version += 1
            st.B = np.eye(2)
            st.b = np.eye(2)
            st.version += 1
        self.since_restart = 0
        self.restarts += 1

    def step(self, i: int) -> int:
        s = None
        while s is None:
            snap = self.read()
            s = self.write(i, self.gradient(i, snap), snap)
        if self.restart_due():
            self.restart()
        return s

    def recover_yv(self):
        st = self.state
        return recover_yv(st.B, st.p, st.q)

    @property
    def k(self) -> int:
        return self.state.k


def sparse_step(engine: SparseA2BCD, i: int) -> int:
    return engine.step(i)


def restart(engine: SparseA2BCD):
    engine.restart()


@dataclass
class ParallelResult:
    trace: Trace
    staleness: StalenessRecord
    iterations: int
    seconds: float
    restarts: int
    read_retries: int
    pair_mismatches: int
    backend: str
    workers: int
    throttled: int = 0
    y: np.ndarray = None
    v: np.ndarray = None

    @property
    def tau_hat(self) -> int:
        return self.staleness.max


def run_parallel(
    oracle: ProblemOracle,
    schedule: Schedule,
    workers: int = 1,
    budget: Optional[int] = None,
    seed: int = 0,
    duration: Optional[float] = None,
    restart_period: Optional[int] = None,
    monitor_interval: Optional[float] = 0.05,
    x0: Optional[np.ndarray] = None,
    f_star: Optional[float] = None,
    dry: bool = False,
    backend: Optional[str] = None,
    keep_sequence: bool = True,
    target_gap: Optional[float] = None,
    max_staleness: Optional[int] = None,
) -> ParallelResult:
    """Run ``workers`` threads of the sparsified iteration.

    Stops after ``budget`` updates or ``duration`` seconds (whichever comes
    first; at least one must be given), or once the monitor sees the y-gap
    at or below ``target_gap``. Worker ``t`` samples blocks with seed
    ``seed + t``. A failing oracle stops every worker and the error is
    re-raised here. ``max_staleness`` enables the cooperative throttle
    that keeps every applied update within that many counter steps of its
    read.
    """
    if workers < 1:
        raise InvalidParameterError("workers must be >= 1")
    if budget is None and duration is None:
        raise InvalidParameterError("give an iteration budget or a duration")
    if duration is not None and not duration > 0:
        raise InvalidParameterError("duration must be positive")
    engine = SparseA2BCD(oracle, schedule, y0=x0, restart_period=restart_period, dry=dry,
                         backend=backend, max_staleness=max_staleness)
    engine.staleness.keep_sequence = keep_sequence
    if dry:
        f_ref = 0.0
    elif f_star is not None:
        f_ref = float(f_star)
    else:
        f_ref = reference_optimum(oracle)[1]
    gate = _Gate()
    stop = threading.Event()
    errors = []
    tickets = itertools.count()
    alpha = schedule.alpha
    trace = Trace(seed=seed, config={"solver": "a2bcd-parallel", "workers": workers,
                                     "psi": schedule.psi, "backend": engine.backend,
                                     "restart_period": engine.restart_period})

    def gaps(y, v):
        x = (y - alpha * v) / (1.0 - alpha)
        return oracle.value(x) - f_ref, oracle.value(y) - f_ref

    def worker(t):
        sampler = BlockSampler.from_params(oracle.params, seed + t)
        try:
            while not stop.is_set():
                if budget is not None and next(tickets) >= budget:
                    break
                i = sampler.sample()
                gate.enter()
                try:
                    done = None
                    while done is None:
                        snap = engine.read()
                        g = engine.gradient(i, snap)
                        done = engine.write(i, g, snap)
                finally:
                    gate.exit()
                if engine.restart_due():
                    with gate.exclusive():
                        if engine.restart_due():
                            engine.restart()
        except BaseException as exc:  # noqa: BLE001 - surfaced after join
            errors.append(exc)
            stop.set()

    t0 = time.perf_counter()

    def checkpoint():
        snap = engine.read()
        st = engine.state
        y, v = recover_yv(snap.B, st.p.copy(), st.q.copy())
        fx, fy = gaps(y, v)
        if not trace.checkpoints or snap.k > trace.checkpoints[-1].k:
            trace.add(Checkpoint(snap.k, time.perf_counter() - t0, fx, fy))
        return fy

    def monitor():
        while not stop.wait(monitor_interval):
            fy = checkpoint()
            if target_gap is not None and fy <= target_gap:
                stop.set()

    checkpoint()
    threads = [threading.Thread(target=worker, args=(t,), daemon=True) for t in range(workers)]
    mon = None
    if monitor_interval and not dry:
        mon = threading.Thread(target=monitor, daemon=True)
        mon.start()
    for th in threads:
        th.start()
    deadline = math.inf if duration is None else t0 + duration
    while any(th.is_alive() for th in threads) and not stop.is_set():
        left = deadline - time.perf_counter()
        if left <= 0:
            break
        time.sleep(min(left, 0.01))
    stop.set()
    for th in threads:
        th.join()
    if mon is not None:
        mon.join()
    elapsed = time.perf_counter() - t0
    if errors:
        raise RuntimeError(f"worker failed: {errors[0]!r}") from errors[0]
    y, v = engine.recover_yv()
    if not dry:
        fx, fy = gaps(y, v)
        if not trace.checkpoints or engine.k > trace.checkpoints[-1].k:
            trace.add(Checkpoint(engine.k, elapsed, fx, fy))
    trace.x = (y - alpha * v) / (1.0 - alpha)
    trace.y, trace.v = y, v
    return ParallelResult(trace, engine.staleness, engine.k, elapsed, engine.restarts,
                          engine.read_retries, engine.pair_mismatches, engine.backend,
                          workers, engine.throttled, y, v)


def dry_run_tau(oracle: ProblemOracle, workers: int, duration: float, seed: int = 0,
                backend: Optional[str] = None) -> ParallelResult:
    """Measure staleness with every update coefficient zeroed.

    The shared vectors never change, so the observed ``tau_hat`` reflects
    only the execution pattern of the threads.
    """
    if not duration > 0:
        raise InvalidParameterError("duration must be positive")
    from .schedule import make_schedule

    sched = make_schedule(oracle.params, 0)
    return run_parallel(oracle, sched, workers=workers, duration=duration, seed=seed,
                        dry=True, backend=backend, keep_sequence=False, monitor_interval=None)


def sentinel_stress(workers: int = 8, duration: float = 1.0, size: int = 4096,
                    backend: Optional[str] = None) -> dict:
    """Writers flip a shared array between two bit patterns while readers scan it.

    Any value other than the two sentinels is a torn word. Returns counts of
    writes, scans and torn values observed.
    """
    k_impl = kernels.get(backend)
    arr = np.zeros(size)
    a = np.frombuffer(np.uint64(0x5555555555555555).tobytes(), dtype=np.float64)[0]
    b = np.frombuffer(np.uint64(0x2AAAAAAAAAAAAAAA).tobytes(), dtype=np.float64)[0]
    k_impl.sentinel_write(arr, a)
    stop = threading.Event()
    stats = {"writes": 0, "scans": 0, "torn": 0}
    lock = threading.Lock()

    def writer(t):
        n = 0
        while not stop.is_set():
            k_impl.sentinel_write(arr, a if (n + t) % 2 else b)
            n += 1
        with lock:
            stats["writes"] += n

    def reader():
        n = bad = 0
        while not stop.is_set():
            bad += k_impl.sentinel_scan(arr, a, b)
            n += 1
        with lock:
            stats["scans"] += n
            stats["torn"] += bad

    n_writers = max(1, workers // 2)
    threads = [threading.Thread(target=writer, args=(t,)) for t in range(n_writers)]
    threads += [threading.Thread(target=reader) for _ in range(max(1, workers - n_writers))]
    for th in threads:
        th.start()
    time.sleep(duration)
    stop.set()
    for th in threads:
        th.join()
    return stats
