"""Problem abstraction: block structure, smoothness constants, gradient oracles
and the nonuniform block sampler."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


class InvalidParameterError(ValueError):
    """Raised when problem constants or configuration values are invalid."""


@dataclass(frozen=True)
class BlockPartition:
    """Contiguous coordinate blocks; block ``i`` is ``[offsets[i], offsets[i+1])``."""

    offsets: np.ndarray

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.int64)
        if offsets.ndim != 1 or offsets.size < 3:
            raise InvalidParameterError("a partition needs at least 2 blocks")
        if offsets[0] != 0:
            raise InvalidParameterError("offsets must start at 0")
        if np.any(np.diff(offsets) <= 0):
            raise InvalidParameterError("offsets must be strictly increasing (empty block)")
        offsets.setflags(write=False)
        object.__setattr__(self, "offsets", offsets)

    @classmethod
    def uniform(cls, dim: int, block_size: int) -> "BlockPartition":
        """Blocks of ``block_size`` coordinates; the last one may be shorter."""
        if block_size < 1 or dim < 1:
            raise InvalidParameterError("dim and block_size must be positive")
        offsets = list(range(0, dim, block_size)) + [dim]
        return cls(np.array(offsets))

    @property
    def n_blocks(self) -> int:
        return self.offsets.size - 1

    @property
    def dim(self) -> int:
        return int(self.offsets[-1])

    def block(self, i: int) -> slice:
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def sizes(self) -> np.ndarray:
        return np.diff(self.offsets)

    def block_ids(self) -> np.ndarray:
        """Block index of every coordinate."""
        return np.repeat(np.arange(self.n_blocks), self.sizes())

    def block_sums(self, values: np.ndarray) -> np.ndarray:
        """Sum of ``values`` over each block."""
        return np.add.reduceat(values, self.offsets[:-1])


@dataclass(frozen=True)
class ProblemParams:
    sigma: float
    L: float
    L_blocks: np.ndarray
    S: float
    L_min: float
    kappa: float

    @property
    def n_blocks(self) -> int:
        return self.L_blocks.size


def build_params(sigma: float, L_blocks: Sequence[float], L: Optional[float] = None) -> ProblemParams:
    """Collect the constants every coefficient formula consumes.

    ``L`` defaults to ``max(L_blocks)``, which is exact for block-separable
    functions. Overestimates of ``L`` and the ``L_i`` and underestimates of
    ``sigma`` are all valid inputs.
    """
    L_blocks = np.array(L_blocks, dtype=np.float64)
    if L_blocks.ndim != 1 or L_blocks.size == 0:
        raise InvalidParameterError("L_blocks must be a non-empty 1-d sequence")
    if not sigma > 0 or not math.isfinite(sigma):
        raise InvalidParameterError(f"sigma must be positive, got {sigma!r}")
    if not np.all(L_blocks > 0) or not np.all(np.isfinite(L_blocks)):
        raise InvalidParameterError("every block Lipschitz constant must be positive")
    if L is None:
        L = float(L_blocks.max())
    if not L > 0:
        raise InvalidParameterError(f"L must be positive, got {L!r}")
    if sigma > L or sigma > L_blocks.min():
        raise InvalidParameterError("sigma cannot exceed L or any L_i")
    L_blocks.setflags(write=False)
    return ProblemParams(
        sigma=float(sigma),
        L=float(L),
        L_blocks=L_blocks,
        S=float(np.sqrt(L_blocks).sum()),
        L_min=float(L_blocks.min()),
        kappa=float(L) / float(sigma),
    )


class ProblemOracle:
    """Block-gradient access to a smooth, strongly convex objective.

    Subclasses set ``partition`` and ``params`` and implement ``value`` and
    ``block_gradient``. ``x_star``/``f_star`` are ``None`` when unknown.
    Implementations keep no mutable state so many threads may call them.
    """

    partition: BlockPartition
    params: ProblemParams
    x_star: Optional[np.ndarray] = None
    f_star: Optional[float] = None
    #: set by oracles whose gradient is affine in a linear image ``A x``
    affine = None

    @property
    def dim(self) -> int:
        return self.partition.dim

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def block_gradient(self, i: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.concatenate(
            [self.block_gradient(i, x) for i in range(self.partition.n_blocks)]
        )

    def value_after_block_step(self, x: np.ndarray, i: int, delta: np.ndarray,
                               fx: Optional[float] = None) -> float:
        """f(x - P_i delta). Quadratic oracles override this with an O(b) form
        that reuses ``fx = f(x)`` when given."""
        z = x.copy()
        z[self.partition.block(i)] -= delta
        return self.value(z)

    def values_after_block_steps(self, x: np.ndarray, steps: np.ndarray,
                                 fx: Optional[float] = None) -> np.ndarray:
        """f(x - P_j steps_(j)) for every block j; ``steps`` is a full vector."""
        part = self.partition
        return np.array([self.value_after_block_step(x, j, steps[part.block(j)], fx)
                         for j in range(part.n_blocks)])


@dataclass
class BlockSampler:
    """Draws block ``j`` with probability ``sqrt(L_j) / S`` using an alias table.

    Draws are produced in batches from a seeded numpy generator, so a given
    seed always yields the same block sequence.
    """

    probabilities: np.ndarray
    seed: int = 0
    batch: int = 4096
    _prob: np.ndarray = field(init=False, repr=False)
    _alias: np.ndarray = field(init=False, repr=False)
    _rng: np.random.Generator = field(init=False, repr=False)
    _buf: np.ndarray = field(init=False, repr=False)
    _pos: int = field(init=False, repr=False)

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if p.ndim != 1 or p.size == 0 or np.any(p <= 0):
            raise InvalidParameterError("sampling probabilities must be positive")
        p = p / p.sum()
        self.probabilities = p
        self._prob, self._alias = _alias_table(p)
        self._rng = np.random.default_rng(self.seed)
        self._buf = np.empty(0, dtype=np.int64)
        self._pos = 0

    @classmethod
    def from_params(cls, params: ProblemParams, seed: int = 0) -> "BlockSampler":
        return cls(np.sqrt(params.L_blocks) / params.S, seed=seed)

    @classmethod
    def uniform(cls, n_blocks: int, seed: int = 0) -> "BlockSampler":
        return cls(np.full(n_blocks, 1.0 / n_blocks), seed=seed)

    def sample_many(self, count: int) -> np.ndarray:
        n = self._prob.size
        cols = self._rng.integers(0, n, size=count)
        toss = self._rng.random(count)
        return np.where(toss < self._prob[cols], cols, self._alias[cols])

    def sample(self) -> int:
        if self._pos >= self._buf.size:
            self._buf = self.sample_many(self.batch)
            self._pos = 0
        j = self._buf[self._pos]
        self._pos += 1
        return int(j)


def _alias_table(p: np.ndarray):
    """Vose's construction: returns (acceptance probability, alias) columns."""
    n = p.size
    scaled = p * n
    prob = np.ones(n)
    alias = np.arange(n)
    small = [i for i in range(n) if scaled[i] < 1.0]
    large = [i for i in range(n) if scaled[i] >= 1.0]
    while small and large:
        s = small.pop()
        g = large.pop()
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = (scaled[g] + scaled[s]) - 1.0
        if scaled[g] < 1.0:
            small.append(g)
        else:
            large.append(g)
    # leftovers are 1 up to roundoff
    for i in small + large:
        prob[i] = 1.0
        alias[i] = i
    return prob, alias


def sample_block(sampler: BlockSampler) -> int:
    return sampler.sample()


def check_block_gradient(oracle: ProblemOracle, i: int, point: np.ndarray, step: float = 1e-5) -> float:
    """Max abs deviation between central differences of f and ``block_gradient``."""
    if not step > 0:
        raise InvalidParameterError("step must be positive")
    point = np.asarray(point, dtype=np.float64)
    blk = oracle.partition.block(i)
    analytic = oracle.block_gradient(i, point)
    numeric = np.empty_like(analytic)
    z = point.copy()
    for j, c in enumerate(range(blk.start, blk.stop)):
        z[c] = point[c] + step
        fp = oracle.value(z)
        z[c] = point[c] - step
        fm = oracle.value(z)
        z[c] = point[c]
        numeric[j] = (fp - fm) / (2 * step)
    return float(np.max(np.abs(numeric - analytic)))
