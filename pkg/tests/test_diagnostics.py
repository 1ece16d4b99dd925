import math

import numpy as np
import pytest

from a2bcd.core import BlockSampler
from a2bcd.diagnostics import (LyapunovMeter, compare_traces, expected_next_rho, first_hit,
                               fit_rate, fit_trace, lower_bound_trials)
from a2bcd.problems import WorstCaseProblem, synth_quadratic
from a2bcd.schedule import make_schedule
from a2bcd.solvers import (Checkpoint, DelaySchedule, DenseState, Trace, a2bcd_step,
                           nu_acdm_run, rbcd_run, run_simulated)


class TestFitRate:
    def test_geometric_sequence(self):
        k = np.arange(0, 1000, 10.0)
        fit = fit_rate(k, 3.0 * 0.99 ** k)
        assert fit.rate == pytest.approx(0.99, rel=1e-12)
        assert fit.residual < 1e-10
        assert fit.complexity(1e-6) == pytest.approx(math.log(1e6) / -math.log(0.99))

    def test_constant_trace(self):
        fit = fit_rate(np.arange(60.0), np.full(60, 2.5))
        assert fit.slope == 0.0
        assert math.isinf(fit.complexity(1e-3))

    def test_scale_invariance(self, rng):
        k = np.arange(100.0)
        vals = np.exp(-0.05 * k + 0.1 * rng.standard_normal(100))
        assert fit_rate(k, 1e12 * vals).slope == pytest.approx(fit_rate(k, vals).slope, rel=1e-9)

    def test_window(self):
        k = np.arange(200.0)
        vals = np.where(k < 100, 0.5 ** k, 0.5 ** 100 * 0.9 ** (k - 100))
        assert fit_rate(k, vals, window=(100, 199)).rate == pytest.approx(0.9, rel=1e-10)

    def test_rejects_short_or_nonpositive(self):
        with pytest.raises(ValueError, match="at least 50"):
            fit_rate(np.arange(49.0), np.ones(49))
        vals = np.ones(60)
        vals[10] = 0.0
        with pytest.raises(ValueError, match="positive"):
            fit_rate(np.arange(60.0), vals)

    def test_trace_floor(self):
        tr = Trace()
        for k in range(80):
            tr.add(Checkpoint(k, 0.0, 0.0, 0.8 ** k if k < 60 else 1e-300))
        assert fit_trace(tr, floor=1e-200).rate == pytest.approx(0.8, rel=1e-10)


def _state_at(x, alpha, tau):
    return DenseState(x, alpha, tau=tau)


class TestLyapunov:
    def test_zero_at_minimizer(self, quad_small):
        sched = make_schedule(quad_small.params, 3, psi=0.3)
        meter = LyapunovMeter(quad_small.params, sched, quad_small.x_star, 0.0, quad_small.value)
        assert meter.rho(_state_at(quad_small.x_star, sched.alpha, 3)) == 0.0

    def test_synchronous_form(self, quad_small, rng):
        sched = make_schedule(quad_small.params, 0)
        meter = LyapunovMeter(quad_small.params, sched, quad_small.x_star, 0.0, quad_small.value)
        st = _state_at(rng.standard_normal(quad_small.dim), sched.alpha, 0)
        st.v = rng.standard_normal(quad_small.dim)
        dv = st.v - quad_small.x_star
        expected = dv @ dv + sched.c_lyap * quad_small.value(st.x)
        assert meter.rho(st) == pytest.approx(expected, rel=1e-14)

    def test_invariant_to_objective_offset(self, quad_small, rng):
        sched = make_schedule(quad_small.params, 2, psi=0.2)
        shifted = quad_small.shifted(42.0)
        st = _state_at(rng.standard_normal(quad_small.dim), sched.alpha, 2)
        m1 = LyapunovMeter(quad_small.params, sched, quad_small.x_star, 0.0, quad_small.value)
        m2 = LyapunovMeter(shifted.params, sched, shifted.x_star, 42.0, shifted.value)
        assert m1.rho(st) == pytest.approx(m2.rho(st), rel=1e-12)

    def test_async_error_nonnegative(self, quad_small, rng):
        sched = make_schedule(quad_small.params, 4, psi=0.3)
        meter = LyapunovMeter(quad_small.params, sched, quad_small.x_star, 0.0, quad_small.value)
        window = rng.standard_normal((5, quad_small.dim))
        assert meter.async_error(window) >= 0.0
        assert meter.async_error(np.tile(window[0], (5, 1))) == 0.0
        with pytest.raises(ValueError):
            meter.async_error(window[:3])


@pytest.mark.parametrize("tau", [0, 3])
def test_expected_next_rho_matches_enumeration(quad_small, tau):
    params = quad_small.params
    sched = make_schedule(params, tau, psi=0.25 if tau else None)
    meter = LyapunovMeter(params, sched, quad_small.x_star, 0.0, quad_small.value)
    delays = DelaySchedule.uniform(tau, seed=2) if tau else DelaySchedule.zero()
    captured = {}

    def cb(state, i, yhat):
        if state.k == 7:
            captured["state"], captured["yhat"] = state.copy(), yhat.copy()

    run_simulated(quad_small, sched, delays, budget=10, seed=1, callback=cb)
    st, yhat = captured["state"], captured["yhat"]
    probs = BlockSampler.from_params(params).probabilities
    brute = 0.0
    for j in range(params.n_blocks):
        nxt = a2bcd_step(quad_small, sched, st.copy(), j, yhat)
        brute += probs[j] * meter.rho(nxt)
    assert expected_next_rho(meter, quad_small, st, yhat, probs) == pytest.approx(brute, rel=1e-11)


def test_first_hit_and_identical_comparison(quad_small):
    tr = nu_acdm_run(quad_small, 3000, seed=0)
    target = tr.column("f_y_gap")[0] * 1e-6
    hit = first_hit(tr, "f_y_gap", target)
    assert 0 < hit <= 3000
    assert math.isinf(first_hit(tr, "f_y_gap", -1.0))
    rep = compare_traces(tr, tr, targets=(target,))
    assert rep.rows[0].ratio == 1.0
    assert rep.to_csv().splitlines()[0] == "target,ratio,ci_low,ci_high"


def test_accelerated_needs_fewer_iterations_than_plain():
    prob = synth_quadratic(10, 2, 1e3, seed=0)
    seeds = range(3)
    acc = [nu_acdm_run(prob, 3_000, seed=s) for s in seeds]
    plain = [rbcd_run(prob, 30_000, seed=s, checkpoint_every=100) for s in seeds]
    target = 1e-4 * acc[0].column("f_y_gap")[0]
    rep = compare_traces(acc, plain, targets=(target,), seed=0)
    row = rep.rows[0]
    assert row.ratio >= 3.0
    assert row.ci_low <= row.ratio <= row.ci_high


def test_lower_bound_trials_shape():
    prob = WorstCaseProblem(1.0, [9.0, 9.0], 8)
    res = lower_bound_trials(prob, "rbcd", 0, 5)
    np.testing.assert_array_equal(res.ratios, 1.0)
    res = lower_bound_trials(prob, "nu_acdm", 6, 20, seed=3)
    assert res.ratios.shape == (20,) and res.stderr >= 0
    with pytest.raises(ValueError):
        lower_bound_trials(prob, "gd", 3, 2)
