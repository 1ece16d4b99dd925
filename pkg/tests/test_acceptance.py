"""Acceptance criteria 1 to 9; each test records one PASS/FAIL line."""

import math
import time

import numpy as np
import pytest
from scipy.stats import binom

from a2bcd.core import BlockSampler, check_block_gradient
from a2bcd.diagnostics import expected_ratio_study, first_hit, fit_trace, lower_bound_trials
from a2bcd.ode import (OdeConfig, composite_energy, integrate_delayed, integrate_sync,
                       is_nonincreasing, tau_threshold, theorem_constants)
from a2bcd.problems import (LabeledDataset, LibsvmParseError, WorstCaseProblem, dump_libsvm,
                            expected_q_power, lower_bound_ratio, parse_libsvm, synth_quadratic)
from a2bcd.runtime import SparseA2BCD, dry_run_tau, run_parallel, sentinel_stress
from a2bcd.schedule import (PSI_MAX, async_weights, aux_weights, lyapunov_constant,
                            main_coefficients, make_schedule)
from a2bcd.solvers import DelaySchedule, DenseState, a2bcd_step, nu_acdm_run

pytestmark = pytest.mark.acceptance


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def test_criterion_1_zero_delay_equivalence(report):
    t0 = time.perf_counter()
    prob = synth_quadratic(50, 2, 1e3, seed=11, equal_lipschitz=False)
    K, seed = 10_000, 5
    ref = []
    nu_acdm_run(prob, K, seed=seed, iterates=ref, checkpoint_every=K)
    sched = make_schedule(prob.params, 0)
    dense = DenseState(np.zeros(prob.dim), sched.alpha)
    sparse = SparseA2BCD(prob, sched)
    sd, ss = BlockSampler.from_params(prob.params, seed), BlockSampler.from_params(prob.params, seed)
    worst_dense = worst_sparse = 0.0
    for k in range(K):
        a2bcd_step(prob, sched, dense, sd.sample(), dense.y)
        sparse.step(ss.sample())
        x_ref, v_ref, y_ref = ref[k]
        worst_dense = max(worst_dense, _rel(dense.y, y_ref), _rel(dense.v, v_ref),
                          _rel(dense.x, x_ref))
        if k % 100 == 99 or k == K - 1:
            y, v = sparse.recover_yv()
            worst_sparse = max(worst_sparse, _rel(y, y_ref), _rel(v, v_ref))
    dt = time.perf_counter() - t0
    ok = worst_dense <= 1e-12 and worst_sparse <= 1e-12 and dt < 5
    report(1, ok, f"dense {worst_dense:.2e}, sparsified {worst_sparse:.2e}, {dt:.1f}s")
    assert ok


def test_criterion_2_sparsified_matches_dense(report, ridge_medium):
    t0 = time.perf_counter()
    prob = ridge_medium
    sched = make_schedule(prob.params, 0)
    dense = DenseState(np.zeros(prob.dim), sched.alpha)
    sparse = SparseA2BCD(prob, sched, restart_period=500)
    sampler = BlockSampler.from_params(prob.params, 0)
    for _ in range(10_000):
        i = sampler.sample()
        a2bcd_step(prob, sched, dense, i, dense.y)
        sparse.step(i)
    y, v = sparse.recover_yv()
    ey, ev = _rel(y, dense.y), _rel(v, dense.v)
    dt = time.perf_counter() - t0
    ok = ey <= 1e-8 and ev <= 1e-8 and sparse.restarts == 20 and dt < 10
    report(2, ok, f"y {ey:.2e}, v {ev:.2e}, {sparse.restarts} restarts, {dt:.1f}s")
    assert ok


def test_criterion_3_rate_and_parallel_run(report, ridge_medium):
    t0 = time.perf_counter()
    prob = synth_quadratic(100, 2, 1e4, seed=0)
    # equal L_i and n = 100 give psi = 9 tau, so tau = 0 is the only integer with psi <= 3/7
    tau = int(math.floor(PSI_MAX / 9.0))
    sched = make_schedule(prob.params, tau)
    ratios = expected_ratio_study(prob, sched, lambda s: DelaySchedule.constant(tau),
                                  seeds=range(20), budget=1000)
    mean = float(ratios.mean())
    bound = sched.beta + 0.05 * (1 - sched.beta)
    rate_ok = mean <= bound

    ridge = ridge_medium
    sched_r = make_schedule(ridge.params, 0)
    par = run_parallel(ridge, sched_r, workers=4, duration=60.0, target_gap=1e-6,
                       monitor_interval=0.02)
    final = par.trace.checkpoints[-1].f_y_gap
    par_hit = first_hit(par.trace, "f_y_gap", 1e-6, by="seconds")
    sync = nu_acdm_run(ridge, int(par.iterations * 1.5) + 1000, seed=0,
                       checkpoint_every=ridge.partition.n_blocks)
    sync_hit = first_hit(sync, "f_y_gap", 1e-6, by="seconds")
    dt = time.perf_counter() - t0
    ok = rate_ok and final <= 1e-6 and dt < 120
    report(3, ok, f"mean ratio {mean:.7f} <= {bound:.7f}; 4-worker gap {final:.2e}; "
                  f"wall-clock sync/parallel {sync_hit / par_hit:.2f} (informational); {dt:.0f}s")
    assert ok


def test_criterion_4_complexity_scaling(report):
    t0 = time.perf_counter()
    kappas = [1e2, 1e3, 1e4]
    slopes, Ks = [], {}
    for seed in range(4):
        logK = []
        for kappa in kappas:
            prob = synth_quadratic(20, 2, kappa, seed=seed, equal_lipschitz=True)
            p = prob.params
            K0 = p.S / math.sqrt(p.sigma) * math.log(1e6)
            tr = nu_acdm_run(prob, int(3 * K0), seed=seed, checkpoint_every=max(1, int(K0 / 200)))
            gap0 = tr.column("f_y_gap")[0]
            fit = fit_trace(tr, "f_y_gap", floor=1e-12 * gap0)
            K = fit.complexity(1e-6)
            Ks.setdefault(kappa, []).append((K, K0))
            logK.append(math.log(K))
        slopes.append(np.polyfit(np.log(kappas), logK, 1)[0])
    dt = time.perf_counter() - t0
    within = all(abs(s - 0.5) <= 0.1 for s in slopes)
    ok = within and dt < 120
    K4, K04 = np.mean([k for k, _ in Ks[1e4]]), Ks[1e4][0][1]
    report(4, ok, f"slopes {', '.join(f'{s:.3f}' for s in slopes)}; "
                  f"K(1e-6) at kappa=1e4 {K4:.0f} vs S/sqrt(sigma) ln(1e6) = {K04:.0f}; {dt:.1f}s")
    assert ok


def test_criterion_5_lower_bound(report):
    t0 = time.perf_counter()
    kappa, k, b, trials = [9.0, 9.0], 10, 20, 500
    prob = WorstCaseProblem(1.0, kappa, b)
    parts, ok = [], True
    for solver, p in (("rbcd", [0.5, 0.5]), ("nu_acdm", [0.5, 0.5])):
        lb = lower_bound_ratio(kappa, p, k, b)
        res = lower_bound_trials(prob, solver, k, trials, seed=0, start_block=0)
        passed = res.mean >= lb.per_block[0] - 2 * res.stderr
        ok &= passed
        parts.append(f"{solver} {res.mean:.4f}+-{res.stderr:.4f} vs {lb.per_block[0]:.6f}")
    worst = 0.0
    for q in (0.1, 0.5, 0.9, 0.99):
        for p in (0.05, 0.3, 0.5, 1.0):
            for kk in range(13):
                i = np.arange(kk + 1)
                brute = float(np.sum(binom.pmf(i, kk, p) * q ** (2 * i)))
                worst = max(worst, abs(expected_q_power(q, p, kk) - brute))
    dt = time.perf_counter() - t0
    ok = ok and worst <= 1e-12 and dt < 60
    report(5, ok, f"{'; '.join(parts)}; binomial identity {worst:.1e}; {dt:.1f}s")
    assert ok


def test_criterion_6_ode_suite(report):
    t0 = time.perf_counter()
    n, kappa = 8, 16.0
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    H = (Q * np.geomspace(1.0, kappa, 8)) @ Q.T
    H = 0.5 * (H + H.T)
    grad, value = (lambda y: H @ y), (lambda y: 0.5 * y @ H @ y)
    y0 = rng.standard_normal(8)

    cfg = OdeConfig.for_problem(n, kappa, step=0.05, T=200.0)
    tr = integrate_sync(grad, y0, None, cfg, value=value, check_energy=False)
    a_ok, a_worst = is_nonincreasing(tr.energy(), rtol=1e-9)

    tau = 0.9 * tau_threshold(n, kappa)
    c0, r = theorem_constants(n, kappa, tau)
    cfg = OdeConfig.for_problem(n, kappa, step=tau / 10, T=100.0, tau=tau)
    trd = integrate_delayed(grad, y0, None, cfg, value=value)
    E, A, comp = composite_energy(trd, c0, r, tau)
    b_ok, b_worst = is_nonincreasing(comp, rtol=1e-8)

    eta = 2.0
    tr1 = integrate_sync(lambda y: y, [1.0], None, OdeConfig(eta=eta, step=1e-3, T=10.0),
                         value=lambda y: 0.5 * y @ y)
    exact = math.exp(-10 / eta) * (math.cos(10 / eta) + math.sin(10 / eta))
    c_err = abs(tr1.Y[-1, 0] - exact)
    dt = time.perf_counter() - t0
    ok = a_ok and b_ok and c_err <= 1e-8 and dt < 30
    report(6, ok, f"(a) worst step {a_worst:.1e}; (b) worst step {b_worst:.1e} at "
                  f"tau={tau:.4f}; (c) error {c_err:.1e}; {dt:.1f}s")
    assert ok


def test_criterion_7_schedule_formulas(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    from a2bcd.core import build_params

    fails = {"c": 0, "c_bound": 0, "c1": 0, "recurrence": 0}
    checked_c1 = 0
    for _ in range(1000):
        n = int(rng.integers(2, 500))
        sigma = 10 ** rng.uniform(-3, 2)
        L = sigma * 10 ** rng.uniform(0, rng.uniform(0, 6), size=n)
        p = build_params(sigma, L)
        psi = rng.uniform(0, 0.5)
        alpha, beta, _ = main_coefficients(p, psi)
        c = lyapunov_constant(p, alpha, beta)
        closed = 2 / sigma * ((1 + psi) + psi ** 2 * math.sqrt(sigma) / p.S)
        fails["c"] += not math.isclose(c, closed, rel_tol=1e-9)
        fails["c_bound"] += not c <= 4 / sigma * (1 + 1e-12)
        tau = int(rng.integers(1, 30))
        psi_r = rng.uniform(0.01, 0.99)
        w = async_weights(p, psi_r, tau)
        aux = aux_weights(p, psi_r, tau)
        nxt = np.append(w[1:], 0.0)
        fails["recurrence"] += not np.allclose(nxt, aux.r * w - aux.s, rtol=1e-9, atol=1e-9 * w[0])
    # c_1 bound needs tau >= 1 with psi(tau) <= 3/7, which forces many blocks
    # relative to kappa; draw such parameter sets by rejection
    while checked_c1 < 1000:
        n = int(10 ** rng.uniform(2, 5.3))
        sigma = 10 ** rng.uniform(-3, 2)
        p = build_params(sigma, sigma * 10 ** rng.uniform(0, rng.uniform(0, 2), size=n))
        unit = 9 * p.S ** -0.5 * p.L_min ** -0.5 * p.L ** 0.75 * p.kappa ** 0.25
        tau_max = int(PSI_MAX / unit)
        if tau_max < 1:
            continue
        tau = int(rng.integers(1, min(tau_max, 200) + 1))
        psi_t = unit * tau
        w = async_weights(p, psi_t, tau)
        bound = 7 / p.S * math.sqrt(p.L) * p.kappa ** 1.5 / psi_t * tau ** 2
        fails["c1"] += not w[0] <= bound * (1 + 1e-12)
        checked_c1 += 1
    dt = time.perf_counter() - t0
    ok = not any(fails.values()) and dt < 5
    report(7, ok, f"1000 sets plus 1000 for the c_1 bound, failures {fails}; {dt:.1f}s")
    assert ok


def test_criterion_8_oracle_integrity(report, ridge_medium):
    t0 = time.perf_counter()
    rng = np.random.default_rng(8)
    problems = {
        "synthetic quadratic": synth_quadratic(20, 3, 1e3, seed=1, equal_lipschitz=False),
        "worst case": WorstCaseProblem(1.0, [9.0, 100.0], 20),
        "ridge dual": ridge_medium,
    }
    worst_fd, worst_stat = 0.0, 0.0
    for prob in problems.values():
        for _ in range(3):
            x = prob.x_star + rng.standard_normal(prob.dim)
            nb = prob.partition.n_blocks
            for i in rng.choice(nb, min(nb, 10), replace=False):
                g = prob.block_gradient(int(i), x)
                err = check_block_gradient(prob, int(i), x, step=1e-6)
                worst_fd = max(worst_fd, err / max(np.abs(g).max(), 1.0))
        scale = max(1.0, float(np.max(prob.params.L_blocks)))
        worst_stat = max(worst_stat, float(np.linalg.norm(prob.gradient(prob.x_star))) / scale)

    X = np.zeros((15, 12))
    X[rng.integers(0, 15, 40), rng.integers(0, 12, 40)] = rng.standard_normal(40)
    import scipy.sparse as sp
    ds = LabeledDataset(sp.csc_matrix(X), rng.choice([-1.0, 1.0], 12))
    back = parse_libsvm(dump_libsvm(ds), n_features=15)
    rt_ok = np.array_equal(back.X.toarray(), X) and np.array_equal(back.labels, ds.labels)
    malformed = ["1 3:1 2:1\n", "1 0:1\n", "1 1:x\n", "y 1:1\n", "1 1\n"]
    caught = 0
    for text in malformed:
        try:
            parse_libsvm(text)
        except LibsvmParseError:
            caught += 1
    dt = time.perf_counter() - t0
    ok = worst_fd <= 1e-4 and worst_stat <= 1e-8 and rt_ok and caught == len(malformed) and dt < 30
    report(8, ok, f"finite differences {worst_fd:.1e} rel; grad at x* {worst_stat:.1e}; "
                  f"LIBSVM round trip {'ok' if rt_ok else 'FAILED'}, "
                  f"{caught}/{len(malformed)} malformed rejected; {dt:.1f}s")
    assert ok


def test_criterion_9_concurrency_stress(report, ridge_medium):
    t0 = time.perf_counter()
    sched = make_schedule(ridge_medium.params, 0)
    res = run_parallel(ridge_medium, sched, workers=8, duration=10.0, monitor_interval=0.5,
                       keep_sequence=False)
    stress = sentinel_stress(workers=8, duration=3.0)
    tau1 = dry_run_tau(ridge_medium, 1, 1.0).tau_hat
    dt = time.perf_counter() - t0
    finite = math.isfinite(res.tau_hat) and res.staleness.total == res.iterations
    ok = (stress["torn"] == 0 and res.pair_mismatches == 0 and finite and tau1 == 0
          and np.all(np.isfinite(res.y)) and dt < 60)
    report(9, ok, f"{res.iterations} updates, max staleness {res.tau_hat}, "
                  f"{res.pair_mismatches} pair mismatches, {stress['torn']} torn of "
                  f"{stress['scans']} scans, dry run tau_hat(1 worker)={tau1}; {dt:.1f}s")
    assert ok
