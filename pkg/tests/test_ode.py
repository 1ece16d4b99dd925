import math

import numpy as np
import pytest

from a2bcd.core import InvalidParameterError
from a2bcd.ode import (OdeConfig, StepSizeError, async_error_terms, composite_energy,
                       delay_weight, integrate_delayed, integrate_scheme_limit, integrate_sync,
                       is_nonincreasing, lemma_residuals, richardson_check, tau_threshold,
                       theorem_constants, write_trajectory_csv)


def random_quadratic(dim, kappa, seed=0):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    H = (Q * np.linspace(1.0, kappa, dim)) @ Q.T
    H = 0.5 * (H + H.T)
    return H, (lambda y: H @ y), (lambda y: 0.5 * y @ H @ y)


def test_equilibrium_stays_put():
    H, grad, value = random_quadratic(4, 10.0)
    cfg = OdeConfig(eta=5.0, step=0.1, T=20.0)
    tr = integrate_sync(grad, np.zeros(4), None, cfg, value=value)
    assert np.all(tr.Y == 0.0) and np.all(tr.V == 0.0)
    np.testing.assert_array_equal(tr.energy(), 0.0)


def test_one_dimensional_closed_form():
    # y'' + (2/eta) y' + (2/eta^2) y = 0 has roots (-1 +- i)/eta
    eta = 2.0
    errs = []
    for h in (0.1, 0.05, 0.025):
        tr = integrate_sync(lambda y: y, [1.0], None, OdeConfig(eta=eta, step=h, T=10.0),
                            value=lambda y: 0.5 * y @ y)
        exact = np.exp(-tr.t / eta) * (np.cos(tr.t / eta) + np.sin(tr.t / eta))
        errs.append(np.abs(tr.Y[:, 0] - exact).max())
    assert errs[0] < 1e-6
    for a, b in zip(errs, errs[1:]):
        assert 12.0 < a / b < 20.0  # fourth order


@pytest.mark.parametrize("problem", ["quadratic", "logcosh"])
def test_energy_nonincreasing(problem):
    rng = np.random.default_rng(1)
    if problem == "quadratic":
        H, grad, value = random_quadratic(6, 16.0)
        kappa = 16.0
    else:
        # 1/2 |y|^2 + sum log cosh(y): strong convexity 1, smoothness 2
        grad = lambda y: y + np.tanh(y)
        value = lambda y: 0.5 * y @ y + np.sum(np.log(np.cosh(y)))
        kappa = 2.0
    cfg = OdeConfig.for_problem(6, kappa, step=0.05, T=100.0)
    tr = integrate_sync(grad, rng.standard_normal(6), None, cfg, value=value,
                        x_star=np.zeros(6), check_energy=False)
    E = tr.energy()
    ok, worst = is_nonincreasing(E, rtol=1e-10)
    assert ok, worst
    # E(t) >= e^{t/eta} (f - f*) bounds the gap by e^{-t/eta} E(0)
    assert np.all(tr.f_gap <= np.exp(-tr.t / cfg.eta) * E[0] * (1 + 1e-9))


def test_zero_delay_equals_synchronous():
    H, grad, value = random_quadratic(3, 9.0)
    cfg = OdeConfig(eta=6.0, step=0.05, T=10.0, tau=0.0)
    y0 = np.array([1.0, 2.0, -1.0])
    a = integrate_sync(grad, y0, None, cfg, value=value)
    b = integrate_delayed(grad, y0, None, cfg, value=value)
    np.testing.assert_array_equal(a.Y, b.Y)


@pytest.mark.parametrize("mode", ["constant", "piecewise-random"])
def test_composite_energy_decreases_below_threshold(mode):
    n, kappa = 8, 16.0
    H, grad, value = random_quadratic(8, kappa, seed=2)
    tau = 0.9 * tau_threshold(n, kappa)
    c0, r = theorem_constants(n, kappa, tau)
    cfg = OdeConfig.for_problem(n, kappa, step=tau / 10, T=30.0, tau=tau, delay_mode=mode, seed=3)
    tr = integrate_delayed(grad, np.ones(8), None, cfg, value=value, x_star=np.zeros(8))
    E, A, comp = composite_energy(tr, c0, r, tau)
    assert np.all(A >= 0)
    ok, worst = is_nonincreasing(comp, rtol=1e-9)
    assert ok, worst


def test_lemma_inequality_holds_along_delayed_path():
    n, kappa = 8, 16.0
    H, grad, value = random_quadratic(8, kappa, seed=2)
    tau = 0.9 * tau_threshold(n, kappa)
    c0, r = theorem_constants(n, kappa, tau)
    cfg = OdeConfig.for_problem(n, kappa, step=tau / 10, T=10.0, tau=tau)
    tr = integrate_delayed(grad, np.ones(8), None, cfg, value=value)
    res = lemma_residuals(tr, c0, r, tau)
    assert res.size > 0 and res.max() <= 1e-6


def test_zero_delay_composite_is_plain_energy():
    H, grad, value = random_quadratic(3, 4.0)
    cfg = OdeConfig(eta=6.0, step=0.05, T=5.0)
    tr = integrate_sync(grad, np.ones(3), None, cfg, value=value)
    E, A, comp = composite_energy(tr, 1.0, 0.1, 0.0)
    np.testing.assert_array_equal(A, 0.0)
    np.testing.assert_array_equal(comp, E)


def test_delay_weight_endpoints():
    c0, r, tau = 3.0, 0.2, 1.5
    assert delay_weight(0.0, c0, r, tau) == pytest.approx(c0)
    assert delay_weight(tau, c0, r, tau) == pytest.approx(0.0, abs=1e-14)
    s = np.linspace(0, tau, 50)
    assert np.all(np.diff(delay_weight(s, c0, r, tau)) < 0)


def test_error_terms_vanish_at_rest():
    cfg = OdeConfig(eta=4.0, step=0.02, T=2.0, tau=0.5)
    tr = integrate_delayed(lambda y: y, np.zeros(2), None, cfg)
    assert async_error_terms(tr, 1.5, 1.0, 0.5, 0.5) == (0.0, 0.0)


def test_window_integral_of_constant_velocity():
    # Y(t) = t e on the grid: D(t) = |e|^2 * window length
    cfg = OdeConfig(eta=1e12, step=0.01, T=2.0, tau=0.3)
    tr = integrate_delayed(lambda y: np.zeros_like(y), np.zeros(2), np.array([1.0, 0.0]), cfg)
    A, D = async_error_terms(tr, 1.0, 2.0, 0.1, 0.3)
    assert D == pytest.approx(0.3, rel=1e-9)
    k = math.exp(-0.03) / -math.expm1(-0.03)
    exact = 2.0 * ((1 + k) * (1 - math.exp(-0.03)) / 0.1 - k * 0.3)
    assert A == pytest.approx(exact, rel=1e-9)
    assert cfg.n_steps == 200


def test_invalid_settings():
    with pytest.raises(InvalidParameterError, match="tau/10"):
        OdeConfig(eta=1.0, step=0.1, T=1.0, tau=0.5)
    with pytest.raises(InvalidParameterError):
        OdeConfig(eta=1.0, step=0.01, T=1.0, delay_mode="other")
    with pytest.raises(InvalidParameterError):
        OdeConfig(eta=0.0, step=0.01, T=1.0)
    tr = integrate_delayed(lambda y: y, np.ones(1), None,
                           OdeConfig(eta=1.0, step=0.01, T=1.0, tau=0.2))
    with pytest.raises(InvalidParameterError, match="exceeds 1/2"):
        async_error_terms(tr, 0.5, 1.0, 3.0, 0.2)
    with pytest.raises(InvalidParameterError, match="no history"):
        async_error_terms(tr, 2.0, 1.0, 0.1, 0.2)


def test_unstable_step_is_reported():
    with pytest.raises(StepSizeError):
        integrate_sync(lambda y: 1e6 * y, np.ones(1), None, OdeConfig(eta=1.0, step=0.5, T=50.0),
                       value=lambda y: 0.5e6 * y @ y)


def test_far_above_threshold_is_informational():
    # the guarantee says nothing at 100x the threshold; only require a finite run
    n, kappa = 8, 16.0
    H, grad, value = random_quadratic(8, kappa, seed=2)
    tau = 100 * tau_threshold(n, kappa)
    cfg = OdeConfig.for_problem(n, kappa, step=tau / 10, T=60.0, tau=tau)
    tr = integrate_delayed(grad, np.ones(8), None, cfg, value=value)
    assert np.all(np.isfinite(tr.Y))


def test_delayed_rate_beats_theorem():
    n, kappa = 8, 16.0
    H, grad, value = random_quadratic(8, kappa, seed=2)
    tau = 0.9 * tau_threshold(n, kappa)
    cfg = OdeConfig.for_problem(n, kappa, step=tau / 10, T=60.0, tau=tau)
    tr = integrate_delayed(grad, np.ones(8), None, cfg, value=value)
    sel = tr.t >= 10.0
    slope = np.polyfit(tr.t[sel], np.log(tr.energy()[sel] * np.exp(-tr.t[sel] / cfg.eta)), 1)[0]
    assert -slope >= 0.9 / cfg.eta


class TestSchemeLimit:
    H = np.diag([1.0, 4.0, 9.0])
    y0 = np.array([1.0, -0.5, 0.3])
    eta, kappa, T = 9.0, 9.0, 5.0

    def limit(self):
        H = self.H
        return integrate_scheme_limit(lambda y: H @ y, lambda y, v: H @ v, self.y0,
                                      self.eta, self.kappa, 1e-3, self.T)

    def test_extrapolated_scheme_matches_its_limit(self):
        H = self.H
        t, Y = self.limit()
        res = richardson_check(lambda y: H @ y, self.y0, self.eta, self.kappa, self.T, 1e-2, Y[-1])
        assert res.order == pytest.approx(1.0, abs=0.05)
        assert res.error_extrapolated < 1e-4
        assert res.error_extrapolated < 0.05 * res.error_finest

    def test_limit_differs_from_textbook_equation(self):
        H = self.H
        t, Y = self.limit()
        res = richardson_check(lambda y: H @ y, self.y0, self.eta, self.kappa, self.T, 1e-2, Y[-1])
        tr = integrate_sync(lambda y: H @ y, self.y0, None,
                            OdeConfig(eta=self.eta, step=1e-3, T=self.T),
                            value=lambda y: 0.5 * y @ H @ y)
        gap = np.linalg.norm(res.extrapolated - tr.Y[-1])
        assert gap > 100 * res.error_extrapolated


def test_trajectory_csv(tmp_path):
    tr = integrate_sync(lambda y: y, [1.0], None, OdeConfig(eta=2.0, step=0.5, T=2.0),
                        value=lambda y: 0.5 * y @ y)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, tr)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,f_gap,E,A,composite"
    assert len(lines) == 6
    row = [float(x) for x in lines[1].split(",")]
    assert row[0] == 0.0 and row[2] == row[4] and row[3] == 0.0
