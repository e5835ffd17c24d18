import dataclasses

import numpy as np
import pytest

from perfed.engine import Participation, RunConfig, run
from perfed.errors import GenerationError, IngestionError, InputError
from perfed.experiments import (
    CreditExperimentSpec,
    GaussianExperimentSpec,
    ReplicateSummary,
    bound_check,
    ingest_credit_csv,
    make_credit_population,
    make_gaussian_population,
    rate_fit,
    run_replicates,
    sign_test_decreasing,
    spearman_rho,
    summary_to_csv,
    sweep,
    sweep_to_csv,
)
from perfed.model import QuadraticMeanLoss
from perfed.solution import solve_ps
from perfed.theory import ScheduleSpec, constants, problem_constants_from, theorem_schedule


def small_run_config(pop, model, T=400, E=4, **kw):
    return RunConfig(
        population=pop,
        model=model,
        schedule=kw.pop("schedule", ScheduleSpec("diminishing", beta=8.0, gamma=50.0, agg_every=E)),
        total_steps=T,
        agg_every=E,
        theta0=np.array([0.0]),
        record_every=kw.pop("record_every", 50),
        **kw,
    )


class TestGaussianGeneration:
    def test_recentred_targets(self):
        spec = GaussianExperimentSpec(
            n_clients=25, mean_center=10.0, mean_var=6.0, sens_center=0.9,
            sens_var=0.1, weight_mode="dirichlet", seed=3,
        )
        pop = make_gaussian_population(spec)
        m_bar = pop.mean_bar[0]
        assert abs(m_bar - 10.0) <= 1e-9
        assert abs(pop.eps_bar - 0.9) <= 1e-9
        assert all(s.shift_coef >= 0 for s in pop.shifts)

    def test_homogeneous_has_exact_stable_point(self, quad_model):
        spec = GaussianExperimentSpec(n_clients=25, mean_var=0.0, sens_var=0.0)
        pop = make_gaussian_population(spec)
        res = solve_ps(pop, quad_model, np.array([0.0]), tol=1e-10)
        assert res.theta_ps[0] == pytest.approx(100.0, abs=1e-8)

    def test_static_population(self, quad_model):
        spec = GaussianExperimentSpec(sens_center=0.0, sens_var=0.0)
        pop = make_gaussian_population(spec)
        res = solve_ps(pop, quad_model, np.array([55.0]), tol=1e-12)
        # static case: the stable point IS the population's weighted mean
        assert res.theta_ps[0] == pop.mean_bar[0]
        assert res.theta_ps[0] == pytest.approx(10.0, rel=1e-14)

    def test_infeasible_clipping(self):
        spec = GaussianExperimentSpec(sens_center=0.0, sens_var=1.0, seed=1)
        with pytest.raises(GenerationError):
            make_gaussian_population(spec)

    def test_nonexistent_stable_point_warns(self):
        with pytest.warns(UserWarning):
            make_gaussian_population(GaussianExperimentSpec(sens_center=1.0))


class TestCreditGeneration:
    def test_partition_and_weights(self):
        pop, meta = make_credit_population(CreditExperimentSpec(seed=2))
        assert pop.n_clients == 10
        assert all(s.n_records == 400 for s in pop.shifts)
        assert np.allclose(pop.weights, 0.1, rtol=0, atol=1e-15)
        assert all(0.9 <= s.sensitivity <= 1.1 for s in pop.shifts)
        assert meta["source"] == "synthetic"

    def test_zero_records_rejected(self):
        with pytest.raises(GenerationError):
            make_credit_population(CreditExperimentSpec(n_records=0))

    def test_degenerate_eps_range(self):
        pop, _ = make_credit_population(CreditExperimentSpec(eps_low=1.0, eps_high=1.0))
        assert all(s.sensitivity == 1.0 for s in pop.shifts)

    def test_csv_round_trip(self, tmp_path):
        rng = np.random.default_rng(4)
        feats = rng.normal(size=(60, 3))
        labels = rng.integers(0, 2, size=60)
        path = tmp_path / "records.csv"
        with open(path, "w") as fh:
            fh.write("default,f0,f1,f2\n")
            for lab, row in zip(labels, feats):
                fh.write(f"{lab}," + ",".join(f"{v:.8f}" for v in row) + "\n")
        got_f, got_l = ingest_credit_csv(path)
        assert got_f.shape == (60, 3)
        assert set(np.unique(got_l)) <= {-1.0, 1.0}
        pop, meta = make_credit_population(
            CreditExperimentSpec(n_clients=6, csv_path=str(path))
        )
        assert pop.n_clients == 6
        assert sum(s.n_records for s in pop.shifts) == 60

    def test_malformed_csv_reports_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("label,f0\n1,0.5\n0,oops\n")
        with pytest.raises(IngestionError) as err:
            ingest_credit_csv(path)
        assert err.value.line == 3

    def test_bad_label_rejected(self, tmp_path):
        path = tmp_path / "bad2.csv"
        path.write_text("label,f0\n2,0.5\n")
        with pytest.raises(IngestionError) as err:
            ingest_credit_csv(path)
        assert err.value.line == 2


class TestReplicates:
    def test_single_seed_zero_std(self, homogeneous_pop, quad_model):
        cfg = small_run_config(homogeneous_pop, quad_model)
        s = run_replicates(cfg, [0], np.array([100.0]))
        assert np.all(s.std_dist_sq == 0.0)
        assert np.all(s.std_loss == 0.0)

    def test_duplicate_seeds_zero_std(self, homogeneous_pop, quad_model):
        cfg = small_run_config(homogeneous_pop, quad_model)
        s = run_replicates(cfg, [7, 7, 7], np.array([100.0]))
        assert np.all(s.std_dist_sq == 0.0)

    def test_seed_order_invariance(self, homogeneous_pop, quad_model):
        cfg = small_run_config(homogeneous_pop, quad_model)
        a = run_replicates(cfg, [0, 1, 2], np.array([100.0]))
        b = run_replicates(cfg, [2, 0, 1], np.array([100.0]))
        assert np.array_equal(a.mean_dist_sq, b.mean_dist_sq)
        assert np.array_equal(a.std_loss, b.std_loss)

    def test_parallel_equals_serial(self, homogeneous_pop, quad_model):
        cfg = small_run_config(homogeneous_pop, quad_model)
        a = run_replicates(cfg, [0, 1, 2, 3], np.array([100.0]), jobs=1)
        b = run_replicates(cfg, [0, 1, 2, 3], np.array([100.0]), jobs=3)
        assert np.array_equal(a.mean_dist_sq, b.mean_dist_sq)


class TestRateFit:
    def make_summary(self, t, dist, gamma=0.0):
        z = np.zeros_like(dist)
        return ReplicateSummary(
            t=t, mean_dist_sq=dist, std_dist_sq=z, mean_loss=z, std_loss=z,
            seeds=[0], per_seed_dist_sq=dist[None, :], per_seed_loss=z[None, :],
            communication_count=0, meta={"gamma": gamma},
        )

    def test_exact_power_law(self):
        gamma = 37.0
        t = np.arange(0, 5000, 10)
        s = self.make_summary(t, 3.5 / (gamma + t), gamma=gamma)
        assert rate_fit(s, 0, 5000) == pytest.approx(-1.0, abs=1e-9)

    def test_constant_series(self):
        t = np.arange(0, 1000, 10)
        s = self.make_summary(t, np.full_like(t, 2.0, dtype=float), gamma=5.0)
        assert rate_fit(s, 0, 1000) == pytest.approx(0.0, abs=1e-12)

    def test_too_few_records(self):
        t = np.arange(0, 50, 10)
        s = self.make_summary(t, 1.0 / (1 + t))
        with pytest.raises(InputError):
            rate_fit(s, 0, 50)


class TestSweep:
    def test_single_value_matches_plain_replicates(self, homogeneous_pop, quad_model):
        cfg = small_run_config(homogeneous_pop, quad_model)
        sw = sweep(cfg, "E", [4], [0, 1], np.array([100.0]))
        direct = run_replicates(cfg, [0, 1], np.array([100.0]))
        assert np.array_equal(sw["cells"][4].mean_dist_sq, direct.mean_dist_sq)

    def test_k_sweep_produces_all_cells(self, homogeneous_pop, quad_model):
        cfg = small_run_config(
            homogeneous_pop, quad_model, participation=Participation("scheme2", 5)
        )
        sw = sweep(cfg, "K", [5, 10, 20, 25], [0], np.array([100.0]))
        assert sorted(sw["cells"]) == [5, 10, 20, 25]
        assert not sw["errors"]

    def test_heterogeneity_axis_regenerates_population(self, homogeneous_pop, quad_model):
        spec = GaussianExperimentSpec(seed=0)
        cfg = small_run_config(homogeneous_pop, quad_model)
        sw = sweep(cfg, "var_m", [0.0, 6.0], [0], np.array([100.0]), gauss_spec=spec)
        assert len(sw["cells"]) == 2

    def test_cell_failures_are_recorded(self, homogeneous_pop, quad_model):
        cfg = small_run_config(homogeneous_pop, quad_model)
        sw = sweep(cfg, "E", [4, 0], [0], np.array([100.0]))
        assert 4 in sw["cells"] and 0 in sw["errors"]


class TestBoundCheck:
    def test_theorem_run_passes(self, homogeneous_pop, quad_model):
        theta0 = np.array([95.0])
        pc = problem_constants_from(homogeneous_pop, quad_model, np.array([100.0]), theta0)
        cb = constants(pc, E=1, K=25, N=25)
        cfg = RunConfig(
            population=homogeneous_pop, model=quad_model,
            schedule=theorem_schedule(cb, "full"), total_steps=2000, agg_every=1,
            theta0=theta0, record_every=100,
        )
        s = run_replicates(cfg, [0, 1, 2], np.array([100.0]))
        rep = bound_check(s, cb, "full")
        assert rep["checked"] and rep["holds"], rep

    def test_mismatched_schedule_skipped(self, homogeneous_pop, quad_model):
        pc = problem_constants_from(
            homogeneous_pop, quad_model, np.array([100.0]), np.array([95.0])
        )
        cb = constants(pc, E=1, K=25, N=25)
        cfg = small_run_config(
            homogeneous_pop, quad_model, E=1,
            schedule=ScheduleSpec("constant", eta=0.02, agg_every=1),
        )
        s = run_replicates(cfg, [0], np.array([100.0]))
        rep = bound_check(s, cb, "full")
        assert not rep["checked"]


class TestTrendStats:
    def test_spearman_monotone(self):
        x = np.arange(20.0)
        assert spearman_rho(x, -3 * x + 5) == pytest.approx(-1.0)
        assert spearman_rho(x, np.exp(x / 5)) == pytest.approx(1.0)

    def test_sign_test(self):
        start = np.full(10, 5.0)
        assert sign_test_decreasing(start, np.full(10, 1.0)) == pytest.approx(2**-10)
        assert sign_test_decreasing(start, np.full(10, 9.0)) == 1.0


class TestCsvEmission:
    def test_summary_csv_header_and_rows(self, tmp_path, homogeneous_pop, quad_model):
        cfg = small_run_config(homogeneous_pop, quad_model, T=100, record_every=20)
        s = run_replicates(cfg, [0, 1], np.array([100.0]))
        path = tmp_path / "summary.csv"
        summary_to_csv(s, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,mean_dist_sq,std_dist_sq,mean_loss,std_loss"
        assert len(lines) == 1 + len(s.t)

    def test_sweep_csv_has_axis_column(self, tmp_path, homogeneous_pop, quad_model):
        cfg = small_run_config(homogeneous_pop, quad_model, T=100, record_every=50)
        sw = sweep(cfg, "E", [2, 4], [0], np.array([100.0]))
        path = tmp_path / "sweep.csv"
        sweep_to_csv(sw, path)
        lines = path.read_text().splitlines()
        assert lines[0].startswith("E,t,")
        assert all(line.split(",")[0] in ("2", "4") for line in lines[1:])
