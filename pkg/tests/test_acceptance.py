"""Acceptance suite: every exit criterion at its stated tolerance.

Each test prints one PASS/FAIL line; run with `pytest -s tests/test_acceptance.py`
to see them.  The heavy simulations are shared through session fixtures.
"""

import dataclasses
import json
import math
import time

import numpy as np
import pytest

from perfed.engine import (
    Participation,
    RunConfig,
    aggregate_full,
    aggregate_partial,
    run,
    sample_scheme1,
    sample_scheme2,
)
from perfed.errors import NonContractionError
from perfed.experiments import (
    CreditExperimentSpec,
    GaussianExperimentSpec,
    bound_check,
    credit_loss_model,
    make_credit_population,
    make_gaussian_population,
    rate_fit,
    run_replicates,
    sign_test_decreasing,
    spearman_rho,
)
from perfed.model import (
    LogisticLoss,
    Population,
    QuadraticMeanLoss,
    Sample,
    StrategicLinearShift,
    grad_loss,
    loss,
)
from perfed.rng import substream
from perfed.solution import divergence_demo, performative_risk, ps_po_gap_check, solve_po, solve_ps
from perfed.theory import (
    ScheduleSpec,
    check_stepsize_sum_inequality,
    constants,
    practical_schedule,
    problem_constants_from,
    theorem_schedule,
    two_client_example,
    two_client_mc_gradients,
)

from conftest import affine_pop

JOBS = 2
SEEDS20 = list(range(20))


def check(num, condition, detail):
    line = f"acceptance {num:>2}: {'PASS' if condition else 'FAIL'} - {detail}"
    print(line)
    assert condition, line


@pytest.fixture(scope="module")
def gauss41():
    pop = make_gaussian_population(GaussianExperimentSpec(seed=0))
    model = QuadraticMeanLoss()
    theta_ps = solve_ps(pop, model, np.array([0.0]), tol=1e-10).theta_ps
    return pop, model, theta_ps


@pytest.fixture(scope="module")
def theorem_run(gauss41):
    """Full participation, E = 1, guaranteed schedule, T = 2e5, 20 seeds."""
    pop, model, theta_ps = gauss41
    theta0 = np.array([95.0])
    pc = problem_constants_from(pop, model, theta_ps, theta0)
    cb = constants(pc, E=1, K=25, N=25)
    cfg = RunConfig(
        population=pop, model=model, schedule=theorem_schedule(cb, "full"),
        total_steps=200_000, agg_every=1, theta0=theta0, record_every=100,
    )
    summary = run_replicates(cfg, SEEDS20, theta_ps, jobs=JOBS)
    return cfg, cb, summary


@pytest.fixture(scope="module")
def constant_run(gauss41, theorem_run):
    """Same setup with the constant step size 0.02."""
    pop, model, theta_ps = gauss41
    cfg = dataclasses.replace(
        theorem_run[0], schedule=ScheduleSpec("constant", eta=0.02, agg_every=1)
    )
    return run_replicates(cfg, SEEDS20, theta_ps, jobs=JOBS)


@pytest.fixture(scope="module")
def credit_setup():
    spec = CreditExperimentSpec(seed=0)
    pop, _ = make_credit_population(spec)
    feats = np.concatenate([s.features for s in pop.shifts])
    model = credit_loss_model(spec, feats)
    theta_ps = solve_ps(
        pop, model, np.zeros(spec.feature_dim), tol=1e-6, require_contraction=False
    ).theta_ps
    return spec, pop, model, theta_ps


def test_criterion_01_stable_point_closed_form(gauss41):
    pop, model, _ = gauss41
    t0 = time.perf_counter()
    res = solve_ps(pop, model, np.array([0.0]), tol=1e-10)
    static = make_gaussian_population(GaussianExperimentSpec(sens_center=0.0, seed=0))
    res0 = solve_ps(static, model, np.array([55.0]), tol=1e-12)
    elapsed = time.perf_counter() - t0
    ok = (
        abs(res.theta_ps[0] - 100.0) <= 1e-8
        and res0.theta_ps[0] == static.mean_bar[0]
        and elapsed < 1.0
    )
    check(1, ok, f"theta_ps={res.theta_ps[0]:.12f}, static={res0.theta_ps[0]}, {elapsed:.3f}s")


def test_criterion_02_divergence_regime(quad_model):
    pop = affine_pop([1.0], [1.0])
    t0 = time.perf_counter()
    mags = divergence_demo(pop, quad_model, np.array([0.0]), 1_000_001)
    refused = False
    try:
        solve_ps(pop, quad_model, np.array([0.0]))
    except NonContractionError as err:
        refused = err.ratio >= 1.0
    elapsed = time.perf_counter() - t0
    ok = mags.max() > 1e6 and refused and elapsed < 1.0
    check(2, ok, f"max |Phi^t| = {mags.max():.0f} after {len(mags) - 1} steps, "
                 f"refused={refused}, {elapsed:.2f}s")


def test_criterion_03_convergence_and_rate(theorem_run):
    _, _, summary = theorem_run
    init, final = summary.mean_dist_sq[0], summary.mean_dist_sq[-1]
    slope = rate_fit(summary, 1_000, 200_000)
    ok = final <= 0.01 * init and -1.4 <= slope <= -0.6
    check(3, ok, f"final/init = {final / init:.2e}, slope = {slope:.3f}")


def test_criterion_04_theorem_bound_dominates(theorem_run):
    _, cb, summary = theorem_run
    rep = bound_check(summary, cb, "full")
    ok = rep["checked"] and rep["holds"]
    check(4, ok, f"max mean/bound ratio = {rep['max_ratio']:.6f} at t = {rep['argmax_t']}")


def test_criterion_05_scheme_agreement(gauss41):
    pop, model, theta_ps = gauss41
    theta0 = np.array([95.0])
    pc = problem_constants_from(pop, model, theta_ps, theta0)
    sched = practical_schedule(constants(pc, E=5, K=20, N=25), "scheme1")
    finals = {}
    for kind, k in (("full", 0), ("scheme1", 20), ("scheme2", 20)):
        cfg = RunConfig(
            population=pop, model=model, schedule=sched, total_steps=20_000,
            agg_every=5, participation=Participation(kind, k),
            theta0=theta0, record_every=100,
        )
        s = run_replicates(cfg, SEEDS20, theta_ps, jobs=JOBS)
        finals[kind] = float(s.mean_dist_sq[-1])
        assert s.mean_dist_sq[-1] <= 0.01 * s.mean_dist_sq[0], f"{kind} did not converge"
    spread = max(finals.values()) / min(finals.values())
    check(5, spread <= 3.0, f"finals={ {k: f'{v:.2e}' for k, v in finals.items()} }, spread={spread:.2f}x")


def test_criterion_06_unbiased_sampling():
    t0 = time.perf_counter()
    rng_w = substream(100, "wlist")
    n = 25
    w = rng_w.normal(size=(n, 3))
    p = np.full(n, 1.0 / n)
    wbar = aggregate_full(p, w)
    trials = 100_000

    # with uniform weights both schemes' combinations are plain averages of
    # the selected rows, so the batched draws aggregate vectorized
    idx1 = sample_scheme1(p, 10, substream(101, "s1"), size=trials)
    agg1 = w[idx1].mean(axis=1)
    se1 = agg1.std(axis=0, ddof=1) / math.sqrt(trials)
    mean_ok = bool(np.all(np.abs(agg1.mean(axis=0) - wbar) <= 4 * se1))

    var_ok = True
    details = []
    for k in (5, 10, 20):
        sel = sample_scheme2(n, k, substream(102, "s2", k), size=trials)
        agg2 = w[sel].mean(axis=1)
        se2 = agg2.std(axis=0, ddof=1) / math.sqrt(trials)
        mean_ok = mean_ok and bool(np.all(np.abs(agg2.mean(axis=0) - wbar) <= 4 * se2))
        var2 = float(np.mean(np.sum((agg2 - wbar) ** 2, axis=1)))
        predicted = (1.0 / (k * (n - 1))) * (1.0 - k / n) * float(np.sum((w - wbar) ** 2))
        var_ok = var_ok and abs(var2 - predicted) <= 0.10 * predicted
        details.append(f"K={k}: var err {abs(var2 - predicted) / predicted:.1%}")

    # spot-check the batched draws against the per-call production path
    single = aggregate_partial("scheme2", sample_scheme2(n, 10, substream(9, "x")), w, p, n, 10)
    spot_ok = single.shape == wbar.shape

    elapsed = time.perf_counter() - t0
    ok = mean_ok and var_ok and spot_ok and elapsed < 10.0
    check(6, ok, f"means 4SE ok={mean_ok}; {'; '.join(details)}; {elapsed:.1f}s")


def test_criterion_07_exact_identities(gauss41):
    pop, model, theta_ps = gauss41
    sched = ScheduleSpec("diminishing", beta=8.0, gamma=100.0, agg_every=5)
    base = RunConfig(
        population=pop, model=model, schedule=sched, total_steps=200,
        agg_every=5, theta0=np.array([0.0]), record_every=1,
    )
    tr = run(base, theta_ps)
    consensus_ok = bool(np.all(tr.consensus_err[tr.is_agg] == 0.0))
    comm_ok = tr.communication_count == 2 * (200 // 5)

    full = run(dataclasses.replace(base, agg_every=1,
                                   schedule=dataclasses.replace(sched, agg_every=1)), theta_ps)
    k_eq_n = dataclasses.replace(
        base, agg_every=1, schedule=dataclasses.replace(sched, agg_every=1),
        participation=Participation("scheme2", 25),
    )
    tr2 = run(k_eq_n, theta_ps)
    scheme2_ok = np.array_equal(tr2.theta_bar, full.theta_bar)

    e1_ok = bool(np.all(full.consensus_err == 0.0))
    ok = consensus_ok and comm_ok and scheme2_ok and e1_ok
    check(7, ok, f"consensus-zero={consensus_ok}, comm={tr.communication_count}, "
                 f"scheme2(K=N)==full bitwise={scheme2_ok}, E=1 identical={e1_ok}")


def test_criterion_08_constant_rate_stalls(theorem_run, constant_run):
    _, _, theorem = theorem_run
    last = theorem.t >= 20_000  # final decade of the horizon
    m_theorem = float(theorem.mean_dist_sq[last].mean())
    m_const = float(constant_run.mean_dist_sq[last].mean())
    ratio = m_const / m_theorem
    check(8, ratio >= 10.0, f"constant/theorem last-decade mean = {ratio:.1f}x "
                            f"({m_const:.2e} vs {m_theorem:.2e})")


def test_criterion_09_two_client_selftest():
    t0 = time.perf_counter()
    grid_ok = all(two_client_example(float(v))["varsigma_ok"] for v in range(-100, 101))
    at8 = two_client_example(8.0)
    values_ok = (at8["g1"], at8["g2"], at8["g"]) == (1.0, 9.0, 5.0) and at8["theta_ps"] == 0.0
    mc_ok = True
    for theta in (8.0, -3.0):
        mc = two_client_mc_gradients(theta, 1_000_000, substream(103, "mc", int(theta)))
        exact = two_client_example(theta)
        for key in ("g1", "g2", "g"):
            mc_ok = mc_ok and abs(mc[key]["estimate"] - exact[key]) <= 4 * mc[key]["se"]
    elapsed = time.perf_counter() - t0
    ok = grid_ok and values_ok and mc_ok and elapsed < 5.0
    check(9, ok, f"grid_ok={grid_ok}, values(8)=({at8['g1']},{at8['g2']},{at8['g']}), "
                 f"mc_ok={mc_ok}, {elapsed:.1f}s")


def test_criterion_10_ps_po_gap(quad_model):
    # closed-form quadratic instance
    pop = affine_pop([0.5, 1.3], [10.0, 10.0])
    po = solve_po(pop, quad_model)
    ps = solve_ps(pop, quad_model, np.array([0.0]), tol=1e-10)
    closed = 1.0 / 0.17

    # independent grid oracle over the coupled risk
    grid = np.linspace(-20.0, 20.0, 4001)
    vals = [performative_risk(pop, quad_model, np.array([g])) for g in grid]
    j = int(np.argmin(vals))
    lo, hi = grid[j - 1], grid[j + 1]
    for _ in range(60):
        m1, m2 = lo + (hi - lo) / 3, hi - (hi - lo) / 3
        if performative_risk(pop, quad_model, np.array([m1])) < performative_risk(
            pop, quad_model, np.array([m2])
        ):
            hi = m2
        else:
            lo = m1
    grid_po = 0.5 * (lo + hi)
    quad_ok = (
        abs(po.theta_po[0] - closed) / closed <= 1e-12
        and abs(grid_po - closed) / closed <= 1e-4
        and abs(ps.theta_ps[0] - 100.0) <= 1e-6
    )

    # logistic instance with a declared data-Lipschitz constant
    rng = substream(104, "logit-gap")
    feats = rng.normal(size=(300, 3))
    feats /= np.maximum(np.linalg.norm(feats, axis=1, keepdims=True), 1.0)
    labels = np.where(feats[:, 0] >= 0, 1.0, -1.0)
    shifts = (
        StrategicLinearShift(feats[:150], labels[:150], 0.12, (0,)),
        StrategicLinearShift(feats[150:], labels[150:], 0.08, (0,)),
    )
    lpop = Population(weights=np.array([0.5, 0.5]), shifts=shifts)
    lmodel = LogisticLoss(lam=1.0, feature_bound=1.0, theta_bound=1.0)
    lps = solve_ps(lpop, lmodel, np.zeros(3), tol=1e-8).theta_ps
    lpo = solve_po(lpop, lmodel, search_box=np.array([[-2.0, 2.0]] * 3), tol=1e-8).theta_po
    gap, bound, holds = ps_po_gap_check(lpop, lmodel, lps, lpo)

    ok = quad_ok and holds
    check(10, ok, f"theta_po={po.theta_po[0]:.6f} (closed {closed:.6f}, grid {grid_po:.6f}), "
                  f"theta_ps={ps.theta_ps[0]:.4f}; logistic gap {gap:.4f} <= bound {bound:.4f}")


def test_criterion_11_gradients_and_sum_inequality(gauss41):
    rng = substream(105, "fd")
    grad_ok = True
    for kind in ("quadratic", "logistic"):
        for _ in range(100):
            dim = int(rng.integers(1, 6))
            theta = rng.normal(size=dim)
            if kind == "quadratic":
                model = QuadraticMeanLoss()
                z = Sample(rng.normal(size=dim))
            else:
                model = LogisticLoss(lam=1e-3, feature_bound=10.0)
                z = Sample(rng.normal(size=dim), label=float(rng.choice([-1.0, 1.0])))
            g = grad_loss(model, theta, z)
            fd = np.array([
                (loss(model, theta + h_vec, z) - loss(model, theta - h_vec, z)) / 2e-5
                for h_vec in 1e-5 * np.eye(dim)
            ])
            rel = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-8)
            grad_ok = grad_ok and rel <= 1e-6

    pop, model, theta_ps = gauss41
    pc = problem_constants_from(pop, model, theta_ps, np.array([95.0]))
    cb = constants(pc, E=5, K=20, N=25)
    ineq_ok = True
    for mode in ("full", "scheme1", "scheme2"):
        sched = theorem_schedule(cb, mode)
        for p in (1, 2, 3):
            for t in (10, 100, 1000, 10_000):
                r = check_stepsize_sum_inequality(sched, cb.mu_tilde, p, t)
                ineq_ok = ineq_ok and r.holds
    check(11, grad_ok and ineq_ok, f"finite-diff ok={grad_ok}, sum-inequality ok={ineq_ok}")


def test_criterion_12_cli_determinism(tmp_path):
    from perfed.cli import main

    cfg = {
        "seed": 0,
        "population": {"kind": "gaussian"},
        "run": {
            "total_steps": 2000, "agg_every": 5, "record_every": 100,
            "participation": {"kind": "scheme1", "k": 20},
            "schedule": {"kind": "diminishing", "beta": 8.0, "gamma": 100.0},
            "theta0": [95.0], "seeds": [0, 1, 2],
        },
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    out1, out2 = tmp_path / "j1", tmp_path / "j2"
    rc1 = main(["run", "--config", str(path), "--out", str(out1), "--jobs", "1"])
    rc2 = main(["run", "--config", str(path), "--out", str(out2), "--jobs", "2"])
    same_trace = (out1 / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()
    same_summary = (out1 / "summary.csv").read_bytes() == (out2 / "summary.csv").read_bytes()
    ok = rc1 == 0 and rc2 == 0 and same_trace and same_summary
    check(12, ok, f"trace identical={same_trace}, summary identical={same_summary}")


def test_property_scheme2_beats_scheme1_under_heterogeneity():
    """Directional check: the smaller without-replacement sampling variance
    shows up as lower final error on the heterogeneous setup (statistical
    trend across seeds, not per-seed)."""
    model = QuadraticMeanLoss()
    pop = make_gaussian_population(GaussianExperimentSpec(mean_var=0.6, sens_var=0.1, seed=0))
    theta_ps = solve_ps(pop, model, np.array([0.0]), tol=1e-10).theta_ps
    pc = problem_constants_from(pop, model, theta_ps, np.array([0.0]))
    sched = practical_schedule(constants(pc, E=5, K=20, N=25), "scheme1")
    finals = {}
    for kind in ("scheme1", "scheme2"):
        cfg = RunConfig(
            population=pop, model=model, schedule=sched, total_steps=20_000,
            agg_every=5, participation=Participation(kind, 20),
            theta0=np.zeros(1), record_every=100,
        )
        s = run_replicates(cfg, SEEDS20, theta_ps, jobs=JOBS)
        finals[kind] = s.per_seed_dist_sq[:, -1]
    p_val = sign_test_decreasing(finals["scheme1"], finals["scheme2"])
    wins = int(np.sum(finals["scheme2"] < finals["scheme1"]))
    check("s2", p_val < 0.1, f"scheme2 lower on {wins}/20 seeds, sign-test p = {p_val:.4f}")


def test_criterion_13_credit_trends(credit_setup):
    spec, pop, model, theta_ps = credit_setup
    sched = ScheduleSpec("diminishing", beta=200.0, gamma=400.0, agg_every=spec.agg_every)
    seeds = [0, 1, 2, 3, 4]

    def run_for(part, batch):
        cfg = RunConfig(
            population=pop, model=model, schedule=sched, total_steps=2500,
            agg_every=spec.agg_every, participation=part,
            theta0=np.zeros(spec.feature_dim), record_every=25, batch_size=batch,
        )
        return run_replicates(cfg, seeds, theta_ps, jobs=JOBS)

    trend_ok = True
    details = []
    for kind, k in (("full", 0), ("scheme1", spec.k), ("scheme2", spec.k)):
        s = run_for(Participation(kind, k), spec.batch_size)
        early = s.t <= 625
        late = s.t >= 1875
        start = s.per_seed_loss[:, early].mean(axis=1)
        end = s.per_seed_loss[:, late].mean(axis=1)
        p_val = sign_test_decreasing(start, end)
        rho = spearman_rho(s.t.astype(float), s.mean_loss)
        trend_ok = trend_ok and p_val < 0.1 and rho < 0
        details.append(f"{kind}: p={p_val:.3f}, rho={rho:.2f}")

    b1 = run_for(Participation("full"), 1)
    b16 = run_for(Participation("full"), 16)
    batch_ok = float(b16.mean_dist_sq[-1]) < float(b1.mean_dist_sq[-1])
    ok = trend_ok and batch_ok
    check(13, ok, f"{'; '.join(details)}; batch16 {b16.mean_dist_sq[-1]:.2e} < "
                  f"batch1 {b1.mean_dist_sq[-1]:.2e} = {batch_ok}")
