"""Coefficient schedules for the accelerated asynchronous iteration.

All formulas take a :class:`~a2bcd.core.ProblemParams` and a maximum delay
``tau`` (in iterations). The asynchronicity weights ``c_weights`` and the
Lyapunov constant ``c_lyap`` are only used by diagnostics; the iteration
itself needs ``alpha``, ``beta`` and ``h``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import InvalidParameterError, ProblemParams

#: largest asynchronicity parameter covered by the convergence guarantee
PSI_MAX = 3.0 / 7.0


class ScheduleWarning(UserWarning):
    """psi lies outside the range where the contraction rate is guaranteed."""


@dataclass(frozen=True)
class Schedule:
    psi: float
    alpha: float
    beta: float
    h: float
    tau: int
    c_lyap: float
    c_weights: np.ndarray
    variant: str = "main"

    @property
    def theory_valid(self) -> bool:
        return self.variant == "extension" or self.psi <= PSI_MAX


@dataclass(frozen=True)
class AuxWeights:
    r: float
    s: float


def asynchronicity_parameter(params: ProblemParams, tau: int) -> float:
    if tau < 0:
        raise InvalidParameterError("tau must be nonnegative")
    p = params
    return 9.0 * p.S ** -0.5 * p.L_min ** -0.5 * p.L ** 0.75 * p.kappa ** 0.25 * tau


def max_tau_for_psi(params: ProblemParams, psi: float = PSI_MAX) -> float:
    """Largest (real) delay whose asynchronicity parameter is at most ``psi``."""
    return psi / asynchronicity_parameter(params, 1)


def main_coefficients(params: ProblemParams, psi: float):
    """(alpha, beta, h) of the main schedule."""
    if psi < 0:
        raise InvalidParameterError("psi must be nonnegative")
    sq_sigma = math.sqrt(params.sigma)
    alpha = 1.0 / (1.0 + (1.0 + psi) * params.S / sq_sigma)
    beta = 1.0 - (1.0 - psi) * sq_sigma / params.S
    h = 1.0 - 0.5 * sq_sigma / math.sqrt(params.L_min) * psi
    return alpha, beta, h


def extension_coefficients(params: ProblemParams, tau: int):
    """(psi, alpha, beta, h) of the alternative schedule for equal ``L_i``."""
    Lb = params.L_blocks
    if not np.allclose(Lb, Lb[0], rtol=1e-12, atol=0.0):
        raise InvalidParameterError("the extension schedule requires all L_i equal")
    if tau < 0:
        raise InvalidParameterError("tau must be nonnegative")
    sq_sigma = math.sqrt(params.sigma)
    psi = 6.0 * math.sqrt(params.kappa) / params.n_blocks * tau
    alpha = 1.0 / (1.0 + (1.0 + psi) * params.S / sq_sigma)
    beta = 1.0 - sq_sigma / params.S / (1.0 + psi)
    h = 1.0 / (1.0 + 0.5 * sq_sigma / math.sqrt(params.L) * psi)
    return psi, alpha, beta, h


def lyapunov_constant(params: ProblemParams, alpha: float, beta: float) -> float:
    return 2.0 / (math.sqrt(params.sigma) * params.S) * (beta * (1.0 - alpha) / alpha + 1.0)


def aux_weights(params: ProblemParams, psi: float, tau: int) -> AuxWeights:
    r = 1.0 - math.sqrt(params.sigma) / params.S
    s = 6.0 / params.S * math.sqrt(params.L) * params.kappa ** 1.5 / psi * tau
    return AuxWeights(r=r, s=s)


def async_weights(params: ProblemParams, psi: float, tau: int) -> np.ndarray:
    """Weights c_1..c_tau of the asynchronicity error.

    Evaluated by the backward recurrence ``c_i = (c_{i+1} + s) / r`` from
    ``c_{tau+1} = 0``, which equals the closed-form geometric sum.
    """
    if tau == 0:
        return np.zeros(0)
    if tau < 0 or not psi > 0:
        raise InvalidParameterError("async weights need tau >= 1 and psi > 0")
    aux = aux_weights(params, psi, tau)
    c = np.zeros(tau + 1)
    for i in range(tau - 1, -1, -1):
        c[i] = (c[i + 1] + aux.s) / aux.r
    return c[:tau]


def make_schedule(
    params: ProblemParams,
    tau: int = 0,
    psi: Optional[float] = None,
    variant: str = "main",
    strict: bool = False,
) -> Schedule:
    """Build the immutable schedule for one run.

    ``psi`` overrides the delay-derived value (hand tuning); ``tau`` is still
    used for the asynchronicity weights. With ``strict`` a psi above 3/7
    raises instead of warning.
    """
    tau = int(tau)
    if tau < 0:
        raise InvalidParameterError("tau must be nonnegative")
    if variant == "main":
        if psi is None:
            psi = asynchronicity_parameter(params, tau)
        alpha, beta, h = main_coefficients(params, psi)
        if psi > PSI_MAX:
            msg = f"psi={psi:.4g} exceeds 3/7; the contraction guarantee does not apply"
            if strict:
                raise InvalidParameterError(msg)
            warnings.warn(msg, ScheduleWarning, stacklevel=2)
    elif variant == "extension":
        psi_ext, alpha, beta, h = extension_coefficients(params, tau)
        if psi is not None:
            sq_sigma = math.sqrt(params.sigma)
            alpha = 1.0 / (1.0 + (1.0 + psi) * params.S / sq_sigma)
            beta = 1.0 - sq_sigma / params.S / (1.0 + psi)
            h = 1.0 / (1.0 + 0.5 * sq_sigma / math.sqrt(params.L) * psi)
        else:
            psi = psi_ext
    else:
        raise InvalidParameterError(f"unknown schedule variant {variant!r}")
    if not (0 < alpha < 1 and 0 < beta < 1 and h > 0):
        raise InvalidParameterError(
            f"coefficients out of range: alpha={alpha}, beta={beta}, h={h}"
        )
    c_weights = async_weights(params, psi, tau) if tau > 0 and psi > 0 else np.zeros(0)
    c_weights.setflags(write=False)
    return Schedule(
        psi=float(psi),
        alpha=alpha,
        beta=beta,
        h=h,
        tau=tau,
        c_lyap=lyapunov_constant(params, alpha, beta),
        c_weights=c_weights,
        variant=variant,
    )


def update_coefficients(params: ProblemParams, schedule: Schedule, i: int):
    """(D1, D2) multipliers of the block gradient in the (y, v) recursion."""
    Li = params.L_blocks[i]
    a = schedule.alpha
    d2 = 1.0 / math.sqrt(params.sigma * Li)
    d1 = a * d2 + schedule.h * (1.0 - a) / Li
    return d1, d2
