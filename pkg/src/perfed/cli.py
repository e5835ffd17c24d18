"""Command-line front end.

    perfed solve    --config cfg.json [--out DIR]
    perfed run      --config cfg.json [--out DIR] [--seed N] [--jobs N]
    perfed sweep    --config cfg.json [--out DIR] [--jobs N]
    perfed validate --config cfg.json [--out DIR]
    perfed plot     CSV [CSV ...]     [--out DIR] [--metric dist|loss] [--band]
    perfed repro    NAME              [--out DIR] [--seed N] [--jobs N]

Configs are strict JSON documents: unknown keys are rejected, defaults are
filled in, and any path inside the config resolves relative to the config
file.  The PERFED_SEED environment variable overrides the config seed
(an explicit --seed flag beats both).  Exit codes: 0 success, 1 usage or
config error, 2 theory-regime error (no contraction / no admissible
step-size modulus), 3 numeric abort.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import experiments as Xp
from .engine import Participation, RunConfig, RunTrace, run
from .errors import (
    ConfigError,
    ConvergenceError,
    GenerationError,
    IngestionError,
    InputError,
    NonContractionError,
    NonContractiveRegimeError,
    NumericError,
    PerfedError,
)
from .model import LogisticLoss, Population, QuadraticMeanLoss
from .rng import substream
from .solution import performative_risk, phi, ps_po_gap_check, solve_po, solve_ps
from .svgplot import Series, render_svg
from .theory import (
    ScheduleSpec,
    check_stepsize_sum_inequality,
    constants,
    practical_schedule,
    problem_constants_from,
    theorem_schedule,
    two_client_example,
    two_client_mc_gradients,
    validate_schedule,
)

USAGE_EXIT, THEORY_EXIT, NUMERIC_EXIT = 1, 2, 3

# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

_DEFAULTS: Dict = {
    "seed": 0,
    "population": {
        "kind": "gaussian",
        # gaussian family
        "n_clients": 25,
        "mean_center": 10.0,
        "mean_var": 0.0,
        "sens_center": 0.9,
        "sens_var": 0.0,
        "noise_std": 1.0,
        "weight_mode": "uniform",
        "dirichlet_alpha": 10.0,
        # credit family
        "n_records": 400,
        "feature_dim": 10,
        "strategic_idx": [0, 1, 2],
        "eps_low": 0.9,
        "eps_high": 1.1,
        "lam": 1e-3,
        "label_noise": 0.1,
        "csv_path": None,
        "theta_bound": 10.0,
    },
    "model": {"truncation_radius": None},
    "run": {
        "total_steps": 10_000,
        "agg_every": 1,
        "participation": {"kind": "full", "k": 0},
        "schedule": {"kind": "theorem", "beta": 0.0, "gamma": 0.0, "eta": 0.0},
        "theta0": None,
        "record_every": 0,
        "batch_size": 1,
        "rescaled": False,
        "seeds": None,
        "rate_window": None,
    },
    "solve": {
        "tol": None,
        "max_iter": 100_000,
        "search_box": None,
        "n_mc": 10_000,
        "require_contraction": None,
    },
    "sweep": {"axis": None, "values": []},
    "theory": {
        "delta": None,
        "sigma": None,
        "varsigma": None,
        "grad_bound": None,
        "horizon": 1_000_000,
        "lemma_ts": [10, 100, 1000, 10_000],
    },
}

_PATH_KEYS = {("population", "csv_path")}


def _merge_strict(defaults: Dict, user: Dict, trail: Tuple[str, ...] = ()) -> Dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        if key not in defaults:
            where = ".".join(trail) or "top level"
            raise ConfigError(f"unknown config key {key!r} at {where}")
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            out[key] = _merge_strict(defaults[key], value, trail + (key,))
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str) -> Dict:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    cfg = _merge_strict(_DEFAULTS, doc)
    base = p.resolve().parent
    for section, key in _PATH_KEYS:
        val = cfg[section][key]
        if val is not None and not os.path.isabs(val):
            cfg[section][key] = str(base / val)
    return cfg


def build_population(cfg: Dict):
    """Instantiate (population, model, meta) from the config."""
    pcfg = cfg["population"]
    seed = cfg["seed"]
    if pcfg["kind"] == "gaussian":
        spec = Xp.GaussianExperimentSpec(
            n_clients=pcfg["n_clients"],
            mean_center=pcfg["mean_center"],
            mean_var=pcfg["mean_var"],
            sens_center=pcfg["sens_center"],
            sens_var=pcfg["sens_var"],
            noise_std=pcfg["noise_std"],
            weight_mode=pcfg["weight_mode"],
            dirichlet_alpha=pcfg["dirichlet_alpha"],
            seed=seed,
        )
        pop = Xp.make_gaussian_population(spec)
        model = QuadraticMeanLoss(truncation_radius=cfg["model"]["truncation_radius"])
        return pop, model, {"kind": "gaussian", "spec": spec}
    if pcfg["kind"] == "credit":
        spec = Xp.CreditExperimentSpec(
            n_clients=pcfg["n_clients"],
            n_records=pcfg["n_records"],
            feature_dim=pcfg["feature_dim"],
            strategic_idx=tuple(pcfg["strategic_idx"]),
            eps_low=pcfg["eps_low"],
            eps_high=pcfg["eps_high"],
            lam=pcfg["lam"],
            label_noise=pcfg["label_noise"],
            seed=seed,
            csv_path=pcfg["csv_path"],
        )
        pop, meta = Xp.make_credit_population(spec)
        feats = np.concatenate([s.features for s in pop.shifts])
        model = Xp.credit_loss_model(spec, feats, theta_bound=pcfg["theta_bound"])
        return pop, model, {"kind": "credit", "spec": spec, **meta}
    raise ConfigError(f"unknown population kind {pcfg['kind']!r}")


def _theta0(cfg: Dict, pop: Population) -> np.ndarray:
    raw = cfg["run"]["theta0"]
    if raw is None:
        return np.zeros(pop.dim)
    arr = np.atleast_1d(np.asarray(raw, dtype=np.float64))
    if arr.shape[0] != pop.dim:
        raise ConfigError(f"theta0 dim {arr.shape[0]} != population dim {pop.dim}")
    return arr


def _solve_tol(cfg: Dict, pop: Population, model) -> float:
    if cfg["solve"]["tol"] is not None:
        return float(cfg["solve"]["tol"])
    closed = pop.all_affine and isinstance(model, QuadraticMeanLoss)
    return 1e-10 if closed else 1e-6


def _require_contraction(cfg: Dict, kind: str) -> bool:
    raw = cfg["solve"]["require_contraction"]
    if raw is not None:
        return bool(raw)
    # strategic setups have hopelessly conservative formal constants; the
    # iteration is monitored empirically instead
    return kind != "credit"


def _solve_stable(cfg: Dict, pop: Population, model, meta):
    return solve_ps(
        pop,
        model,
        theta0=_theta0(cfg, pop),
        tol=_solve_tol(cfg, pop, model),
        max_iter=cfg["solve"]["max_iter"],
        require_contraction=_require_contraction(cfg, meta["kind"]),
    )


def _participation(cfg: Dict) -> Participation:
    part = cfg["run"]["participation"]
    return Participation(part["kind"], int(part.get("k") or 0))


def _mode(cfg: Dict) -> str:
    return _participation(cfg).kind


def _build_bundle(cfg: Dict, pop, model, theta_ps, theta0):
    th = cfg["theory"]
    pc = problem_constants_from(
        pop,
        model,
        theta_ps,
        theta0,
        delta=th["delta"],
        sigma=th["sigma"],
        varsigma=th["varsigma"],
        grad_bound=th["grad_bound"],
    )
    part = _participation(cfg)
    k = part.k if part.kind != "full" else pop.n_clients
    return constants(pc, E=cfg["run"]["agg_every"], K=k, N=pop.n_clients)


def resolve_schedule(cfg: Dict, pop, model, theta_ps, theta0):
    """Turn the config schedule block into a ScheduleSpec.

    kind "theorem" derives the guaranteed schedule for the configured
    participation mode; "practical" keeps the guaranteed form but drops the
    starting-step cap (usable at desk scale for E > 1, not bound-checked).
    """
    sc = cfg["run"]["schedule"]
    E = cfg["run"]["agg_every"]
    bundle = None
    if sc["kind"] in ("theorem", "practical"):
        bundle = _build_bundle(cfg, pop, model, theta_ps, theta0)
        maker = theorem_schedule if sc["kind"] == "theorem" else practical_schedule
        return maker(bundle, _mode(cfg)), bundle
    if sc["kind"] == "diminishing":
        return ScheduleSpec("diminishing", beta=sc["beta"], gamma=sc["gamma"], agg_every=E), None
    if sc["kind"] == "constant":
        return ScheduleSpec("constant", eta=sc["eta"], agg_every=E), None
    raise ConfigError(f"unknown schedule kind {sc['kind']!r}")


def _run_config(cfg: Dict, pop, model, schedule) -> RunConfig:
    r = cfg["run"]
    return RunConfig(
        population=pop,
        model=model,
        schedule=schedule,
        total_steps=int(r["total_steps"]),
        agg_every=int(r["agg_every"]),
        participation=_participation(cfg),
        base_seed=int(cfg["seed"]),
        theta0=_theta0(cfg, pop),
        record_every=int(r["record_every"]),
        batch_size=int(r["batch_size"]),
        rescaled=bool(r["rescaled"]),
    )


def _seeds(cfg: Dict) -> List[int]:
    raw = cfg["run"]["seeds"]
    if raw is None:
        return [int(cfg["seed"])]
    return [int(s) for s in raw]


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(f"not JSON-serializable: {type(o)}")


def _write_json(path: Path, doc: Dict) -> None:
    path.write_text(json.dumps(doc, indent=2, default=_json_default) + "\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_solve(cfg: Dict, outdir: Path) -> int:
    pop, model, meta = build_population(cfg)
    res = _solve_stable(cfg, pop, model, meta)
    box = cfg["solve"]["search_box"]
    po = solve_po(
        pop,
        model,
        search_box=None if box is None else np.asarray(box, dtype=np.float64),
        n_mc=cfg["solve"]["n_mc"],
        rng=substream(cfg["seed"], "po-pool"),
    )
    doc = {
        "theta_ps": res.theta_ps,
        "iterations": res.iterations,
        "residual": res.residual,
        "contraction_estimate": res.contraction_estimate,
        "theta_po": po.theta_po,
        "risk_at_po": po.risk_at_po,
        "po_method": po.method,
        "po_on_boundary": po.on_boundary,
        "gap": None,
        "bound": None,
        "holds": None,
    }
    if model.lipschitz_z is not None:
        gap, bound, holds = ps_po_gap_check(pop, model, res.theta_ps, po.theta_po)
        doc.update(gap=gap, bound=bound, holds=holds)
    _write_json(outdir / "solution.json", doc)
    print(
        f"theta_ps={np.array2string(res.theta_ps, precision=10)} "
        f"theta_po={np.array2string(po.theta_po, precision=10)} "
        f"residual={res.residual:.3e}"
    )
    return 0


def _summary_doc(cfg, summary, slope, bcheck, theta_ps):
    return {
        "theta_ps": theta_ps,
        "seeds": summary.seeds,
        "failed_seeds": summary.meta.get("failed_seeds", []),
        "communication_count": summary.communication_count,
        "rate_fit_slope": slope,
        "bound_check": bcheck,
        "schedule": {
            "kind": summary.meta["schedule_kind"],
            "beta": summary.meta["beta"],
            "gamma": summary.meta["gamma"],
            "eta": summary.meta["eta"],
        },
        "final_mean_dist_sq": float(summary.mean_dist_sq[-1]),
        "final_mean_loss": float(summary.mean_loss[-1]),
    }


def cmd_run(cfg: Dict, outdir: Path, jobs: int) -> int:
    pop, model, meta = build_population(cfg)
    res = _solve_stable(cfg, pop, model, meta)
    theta_ps = res.theta_ps
    schedule, bundle = resolve_schedule(cfg, pop, model, theta_ps, _theta0(cfg, pop))
    config = _run_config(cfg, pop, model, schedule)
    seeds = _seeds(cfg)

    base_cfg = dataclasses.replace(config, base_seed=seeds[0])
    try:
        base_trace = run(base_cfg, theta_ps)
    except NumericError as err:
        partial = getattr(err, "partial_trace", None)
        if partial is not None:
            partial.to_csv(outdir / "trace.csv")
        print(f"numeric abort: {err}", file=sys.stderr)
        return NUMERIC_EXIT
    base_trace.to_csv(outdir / "trace.csv")

    summary = Xp.run_replicates(config, seeds, theta_ps, jobs=jobs)
    Xp.summary_to_csv(summary, outdir / "summary.csv")

    window = cfg["run"]["rate_window"]
    T = config.total_steps
    if window is None:
        window = [max(10, T // 100), T]
    try:
        slope = Xp.rate_fit(summary, int(window[0]), int(window[1]))
    except InputError:
        slope = None
    bcheck = {"checked": False, "reason": "no constants bundle (schedule not derived)"}
    if bundle is not None:
        bcheck = Xp.bound_check(summary, bundle, _mode(cfg))
    _write_json(outdir / "summary.json", _summary_doc(cfg, summary, slope, bcheck, theta_ps))
    print(
        f"ran {len(summary.seeds)} seed(s), T={T}, comm={summary.communication_count}, "
        f"final mean dist_sq={summary.mean_dist_sq[-1]:.6g}, slope={slope}"
    )
    return 0


def cmd_sweep(cfg: Dict, outdir: Path, jobs: int) -> int:
    sw = cfg["sweep"]
    if not sw["axis"]:
        raise ConfigError("sweep.axis must be set")
    pop, model, meta = build_population(cfg)
    res = _solve_stable(cfg, pop, model, meta)
    schedule, _ = resolve_schedule(cfg, pop, model, res.theta_ps, _theta0(cfg, pop))
    config = _run_config(cfg, pop, model, schedule)
    gauss_spec = meta["spec"] if meta["kind"] == "gaussian" else None
    result = Xp.sweep(
        config,
        sw["axis"],
        sw["values"],
        _seeds(cfg),
        res.theta_ps,
        gauss_spec=gauss_spec,
        jobs=jobs,
    )
    Xp.sweep_to_csv(result, outdir / "sweep.csv")
    for value, summary in result["cells"].items():
        cell_dir = outdir / f"cell_{sw['axis']}_{value}"
        cell_dir.mkdir(parents=True, exist_ok=True)
        Xp.summary_to_csv(summary, cell_dir / "summary.csv")
    _write_json(
        outdir / "sweep.json",
        {
            "axis": sw["axis"],
            "values": sw["values"],
            "errors": result["errors"],
            "finals": {
                str(v): float(s.mean_dist_sq[-1]) for v, s in result["cells"].items()
            },
        },
    )
    ok = len(result["cells"]) >= 1
    print(f"sweep over {sw['axis']}: {len(result['cells'])} cells ok, {len(result['errors'])} failed")
    return 0 if ok else USAGE_EXIT


def cmd_validate(cfg: Dict, outdir: Path) -> int:
    pop, model, meta = build_population(cfg)
    res = _solve_stable(cfg, pop, model, meta)
    theta0 = _theta0(cfg, pop)
    bundle = _build_bundle(cfg, pop, model, res.theta_ps, theta0)
    mode = _mode(cfg)
    schedule, _ = resolve_schedule(cfg, pop, model, res.theta_ps, theta0)
    sched_report = validate_schedule(schedule, bundle, mode, horizon=cfg["theory"]["horizon"])

    theorem_sched = theorem_schedule(bundle, mode)
    lemma: Dict[str, Dict] = {}
    for p in (1, 2, 3):
        lemma[str(p)] = {}
        for t in cfg["theory"]["lemma_ts"]:
            r = check_stepsize_sum_inequality(theorem_sched, bundle.mu_tilde, p, int(t))
            lemma[str(p)][str(t)] = {
                "lhs": r.lhs,
                "rhs": r.rhs,
                "holds": r.holds,
                "precondition_ok": r.precondition_ok,
            }

    grid = range(-100, 101)
    example = {
        "grid_ok": all(two_client_example(float(v))["varsigma_ok"] for v in grid),
        "at_8": two_client_example(8.0),
        "mc_at_8": two_client_mc_gradients(8.0, 200_000, substream(cfg["seed"], "example-mc")),
    }

    doc = {
        "constants": bundle.to_dict(),
        "mode": mode,
        "schedule": {
            "kind": schedule.kind,
            "beta": schedule.beta,
            "gamma": schedule.gamma,
            "eta": schedule.eta,
        },
        "schedule_checks": sched_report,
        "sum_inequality_checks": lemma,
        "two_client_example": example,
        "notes": {
            "b_scheme2_variants": {
                "main": bundle.b_scheme2,
                "alt_extra_1_over_N": bundle.b_scheme2_alt,
                "comment": "two published forms of the without-replacement sampling "
                "factor differ by a factor 1/N; the larger (main) form is used",
            }
        },
    }
    _write_json(outdir / "constants.json", doc)
    ok = sched_report["all"]["holds"]
    print(f"constants written; schedule checks {'pass' if ok else 'FAIL'}")
    return 0


def _load_series(path: Path, metric: str, band: bool) -> Series:
    lines = path.read_text().splitlines() if path.exists() else []
    if not lines:
        raise InputError(f"{path}: empty or missing input")
    first = lines[0]
    if first == RunTrace.CSV_HEADER:
        tr = RunTrace.from_csv(path)
        y = tr.dist_sq if metric == "dist" else tr.loss
        return Series(name=path.stem, t=tr.t, y=y)
    if first == Xp.SUMMARY_HEADER:
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t = rows[:, 0]
        mean = rows[:, 1] if metric == "dist" else rows[:, 3]
        std = rows[:, 2] if metric == "dist" else rows[:, 4]
        b = (np.maximum(mean - std, 1e-300), mean + std) if band and np.any(std > 0) else None
        return Series(name=path.stem, t=t, y=mean, band=b)
    raise InputError(f"{path}: not a trace or summary CSV (header {first!r})")


def cmd_plot(inputs: List[str], outdir: Path, metric: str, band: bool, title: str) -> int:
    if not inputs:
        raise InputError("plot needs at least one CSV input")
    series = [_load_series(Path(p), metric, band) for p in inputs]
    out = outdir / "plot.svg"
    render_svg(series, out, title=title, ylabel="dist_sq" if metric == "dist" else "loss")
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# Repro recipes: canned experiment reproductions with figures
# ---------------------------------------------------------------------------


def _gauss_setup(seed, n=25, mean_center=10.0, mean_var=0.0, sens_center=0.9, sens_var=0.0):
    spec = Xp.GaussianExperimentSpec(
        n_clients=n,
        mean_center=mean_center,
        mean_var=mean_var,
        sens_center=sens_center,
        sens_var=sens_var,
        seed=seed,
    )
    pop = Xp.make_gaussian_population(spec)
    model = QuadraticMeanLoss()
    res = solve_ps(pop, model, theta0=np.zeros(pop.dim), tol=1e-10)
    return spec, pop, model, res.theta_ps


def _gauss_practical(pop, model, theta_ps, theta0, E, mode):
    pc = problem_constants_from(pop, model, theta_ps, theta0)
    k = 20 if mode != "full" else pop.n_clients
    cb = constants(pc, E=E, K=min(k, pop.n_clients), N=pop.n_clients)
    return practical_schedule(cb, mode)


def _recipe_convergence(outdir: Path, seed: int, jobs: int, steps: int, n_seeds: int):
    from .figures import plot_summaries

    spec, pop, model, theta_ps = _gauss_setup(seed, mean_var=0.6, sens_var=0.1)
    theta0 = np.zeros(pop.dim)
    seeds = list(range(seed, seed + n_seeds))
    out: Dict[str, Xp.ReplicateSummary] = {}
    # one shared step-size rule across schemes keeps the comparison honest
    sched = _gauss_practical(pop, model, theta_ps, theta0, E=5, mode="scheme1")
    for label, part in (
        ("full", Participation("full")),
        ("scheme1 K=20", Participation("scheme1", 20)),
        ("scheme2 K=20", Participation("scheme2", 20)),
    ):
        cfg = RunConfig(
            population=pop, model=model, schedule=sched, total_steps=steps,
            agg_every=5, participation=part, theta0=theta0, record_every=max(1, steps // 400),
        )
        out[label] = Xp.run_replicates(cfg, seeds, theta_ps, jobs=jobs)
        Xp.summary_to_csv(out[label], outdir / f"summary_{part.kind}.csv")
    plot_summaries(out, outdir / "fig-convergence.png",
                   title="distance to the stable point under three participation schemes")


def _recipe_impact(outdir: Path, seed: int, jobs: int, steps: int, n_seeds: int, axis: str):
    from .figures import plot_panels

    spec, pop, model, theta_ps = _gauss_setup(seed, mean_var=0.6, sens_var=0.1)
    theta0 = np.zeros(pop.dim)
    seeds = list(range(seed, seed + n_seeds))
    values = [1, 5, 10, 50] if axis == "E" else [5, 10, 20, 25]
    panels, titles = [], []
    for scheme in ("scheme1", "scheme2"):
        summaries: Dict[str, Xp.ReplicateSummary] = {}
        for v in values:
            E = v if axis == "E" else 5
            k = 20 if axis == "E" else v
            sched = _gauss_practical(pop, model, theta_ps, theta0, E=E, mode="scheme1")
            cfg = RunConfig(
                population=pop, model=model, schedule=sched, total_steps=steps,
                agg_every=E, participation=Participation(scheme, k), theta0=theta0,
                record_every=max(1, steps // 400),
            )
            summaries[f"{axis}={v}"] = Xp.run_replicates(cfg, seeds, theta_ps, jobs=jobs)
        panels.append(summaries)
        titles.append(scheme)
        Xp.sweep_to_csv(
            {"axis": axis, "cells": dict(zip(values, summaries.values())), "errors": {}},
            outdir / f"sweep_{scheme}.csv",
        )
    plot_panels(panels, outdir / f"fig-impact-{axis.lower()}.png", titles=titles,
                suptitle=f"impact of {axis}")


def _recipe_heterogeneity(outdir: Path, seed: int, jobs: int, steps: int, n_seeds: int):
    from .figures import plot_panels

    theta0 = None
    seeds = list(range(seed, seed + n_seeds))
    panels, titles = [], []
    cases = [
        ("mean spread", [("Var(m)=0", 0.0, 0.1), ("Var(m)=6", 6.0, 0.1)]),
        ("sensitivity spread", [("Var(eps)=0.1", 0.6, 0.1), ("Var(eps)=0.6", 0.6, 0.6)]),
    ]
    for title, rows in cases:
        summaries: Dict[str, Xp.ReplicateSummary] = {}
        for label, mv, sv in rows:
            spec, pop, model, theta_ps = _gauss_setup(seed, mean_var=mv, sens_var=sv)
            t0 = np.zeros(pop.dim)
            sched = _gauss_practical(pop, model, theta_ps, t0, E=5, mode="scheme1")
            for scheme in ("scheme1", "scheme2"):
                cfg = RunConfig(
                    population=pop, model=model, schedule=sched, total_steps=steps,
                    agg_every=5, participation=Participation(scheme, 20), theta0=t0,
                    record_every=max(1, steps // 400),
                )
                summaries[f"{label} {scheme}"] = Xp.run_replicates(cfg, seeds, theta_ps, jobs=jobs)
        panels.append(summaries)
        titles.append(title)
        for k, s in summaries.items():
            safe = "".join(c if c.isalnum() else "_" for c in k)
            Xp.summary_to_csv(s, outdir / f"summary_{safe}.csv")
    plot_panels(panels, outdir / "fig-heterogeneity.png", titles=titles,
                suptitle="impact of data and shift heterogeneity")


def _recipe_credit(outdir: Path, seed: int, jobs: int, steps: int, n_seeds: int):
    from .figures import plot_panels

    spec = Xp.CreditExperimentSpec(seed=seed)
    pop, meta = Xp.make_credit_population(spec)
    feats = np.concatenate([s.features for s in pop.shifts])
    model = Xp.credit_loss_model(spec, feats)
    res = solve_ps(pop, model, theta0=np.zeros(pop.dim), tol=1e-6,
                   require_contraction=False)
    theta_ps = res.theta_ps
    seeds = list(range(seed, seed + n_seeds))
    sched = ScheduleSpec("diminishing", beta=200.0, gamma=400.0, agg_every=spec.agg_every)
    summaries: Dict[str, Xp.ReplicateSummary] = {}
    for label, part in (
        ("full", Participation("full")),
        ("scheme1 K=5", Participation("scheme1", spec.k)),
        ("scheme2 K=5", Participation("scheme2", spec.k)),
    ):
        cfg = RunConfig(
            population=pop, model=model, schedule=sched, total_steps=steps,
            agg_every=spec.agg_every, participation=part, theta0=np.zeros(pop.dim),
            record_every=max(1, steps // 400), batch_size=spec.batch_size,
        )
        summaries[label] = Xp.run_replicates(cfg, seeds, theta_ps, jobs=jobs)
        Xp.summary_to_csv(summaries[label], outdir / f"summary_{part.kind}.csv")
    plot_panels(
        [summaries],
        outdir / "fig-credit.png",
        titles=["training loss"],
        metric="loss",
        suptitle="strategic classification",
    )
    plot_panels([summaries], outdir / "fig-credit-dist.png", titles=["distance to stable point"],
                metric="dist_sq")


def _recipe_constant_lr(outdir: Path, seed: int, jobs: int, steps: int, n_seeds: int):
    from .figures import plot_summaries

    spec, pop, model, theta_ps = _gauss_setup(seed)
    theta0 = np.zeros(pop.dim)
    seeds = list(range(seed, seed + n_seeds))
    E = 10
    summaries: Dict[str, Xp.ReplicateSummary] = {}
    for label, sched in (
        ("diminishing", _gauss_practical(pop, model, theta_ps, theta0, E=E, mode="full")),
        ("constant 0.02", ScheduleSpec("constant", eta=0.02, agg_every=E)),
    ):
        cfg = RunConfig(
            population=pop, model=model, schedule=sched, total_steps=steps,
            agg_every=E, participation=Participation("full"), theta0=theta0,
            record_every=max(1, steps // 400),
        )
        summaries[label] = Xp.run_replicates(cfg, seeds, theta_ps, jobs=jobs)
        Xp.summary_to_csv(summaries[label], outdir / f"summary_{label.split()[0]}.csv")
    plot_summaries(summaries, outdir / "fig-constant-lr.png",
                   title="constant vs diminishing step size (full participation)")


_RECIPES = {
    "fig-convergence": (_recipe_convergence, 20_000, 5),
    "fig-impact-e": (lambda o, s, j, st, ns: _recipe_impact(o, s, j, st, ns, "E"), 20_000, 5),
    "fig-impact-k": (lambda o, s, j, st, ns: _recipe_impact(o, s, j, st, ns, "K"), 20_000, 5),
    "fig-heterogeneity": (_recipe_heterogeneity, 20_000, 5),
    "fig-credit": (_recipe_credit, 2_500, 5),
    "fig-constant-lr": (_recipe_constant_lr, 20_000, 5),
}


def cmd_repro(name: str, outdir: Path, seed: int, jobs: int,
              steps: Optional[int], n_seeds: Optional[int]) -> int:
    names = list(_RECIPES) if name == "all" else [name]
    for n in names:
        if n not in _RECIPES:
            raise InputError(f"unknown recipe {n!r}; choose from {sorted(_RECIPES)} or 'all'")
    for n in names:
        fn, default_steps, default_seeds = _RECIPES[n]
        rdir = outdir / n
        rdir.mkdir(parents=True, exist_ok=True)
        fn(rdir, seed, jobs, steps or default_steps, n_seeds or default_seeds)
        print(f"recipe {n}: wrote {rdir}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perfed", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        if config_required:
            sp.add_argument("--config", required=True, help="JSON config path")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--seed", type=int, default=None, help="override config seed")
        sp.add_argument("--jobs", type=int, default=1, help="parallel worker cap")
        sp.add_argument("--print-config", action="store_true",
                        help="echo the parsed config (with defaults) and exit")

    for name in ("solve", "run", "sweep", "validate"):
        common(sub.add_parser(name))

    pp = sub.add_parser("plot")
    pp.add_argument("inputs", nargs="+", help="trace or summary CSV files")
    pp.add_argument("--out", default=".")
    pp.add_argument("--metric", choices=("dist", "loss"), default="dist")
    pp.add_argument("--band", action="store_true", help="draw mean +/- std bands")
    pp.add_argument("--title", default="")

    rp = sub.add_parser("repro")
    rp.add_argument("name", help="recipe name or 'all'")
    rp.add_argument("--out", default=".")
    rp.add_argument("--seed", type=int, default=0)
    rp.add_argument("--jobs", type=int, default=1)
    rp.add_argument("--steps", type=int, default=None, help="override recipe step count")
    rp.add_argument("--seeds", type=int, default=None, help="override recipe seed count")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = _parser().parse_args(argv)
    try:
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        if args.command == "plot":
            return cmd_plot(args.inputs, outdir, args.metric, args.band, args.title)
        if args.command == "repro":
            return cmd_repro(args.name, outdir, args.seed, args.jobs, args.steps, args.seeds)

        cfg = load_config(args.config)
        env_seed = os.environ.get("PERFED_SEED")
        if env_seed is not None:
            cfg["seed"] = int(env_seed)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.print_config:
            print(json.dumps(cfg, indent=2))
            return 0
        if args.command == "solve":
            return cmd_solve(cfg, outdir)
        if args.command == "run":
            return cmd_run(cfg, outdir, args.jobs)
        if args.command == "sweep":
            return cmd_sweep(cfg, outdir, args.jobs)
        if args.command == "validate":
            return cmd_validate(cfg, outdir)
        raise ConfigError(f"unknown command {args.command!r}")
    except (NonContractionError, NonContractiveRegimeError) as err:
        print(f"theory-regime error: {err}", file=sys.stderr)
        return THEORY_EXIT
    except (NumericError, ConvergenceError) as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return NUMERIC_EXIT
    except (ConfigError, InputError, GenerationError, IngestionError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return USAGE_EXIT
    except PerfedError as err:
        print(f"error: {err}", file=sys.stderr)
        return USAGE_EXIT


if __name__ == "__main__":
    sys.exit(main())
