"""Configured experiment reproductions: population generators, replicate
statistics, convergence-rate fitting, sweeps, and bound checks.

The Gaussian family sweeps aggregation period, participation count,
sampling scheme, and client heterogeneity (spread of base means and of
sensitivities).  The strategic-classification family trains a ridge
logistic model on synthetic credit-style records (or an ingested CSV)
whose manipulable features respond to the deployed parameters.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .engine import Participation, RunConfig, RunTrace, run
from .errors import GenerationError, IngestionError, InputError, NumericError
from .model import (
    AffineGaussianShift,
    LogisticLoss,
    Population,
    QuadraticMeanLoss,
    StrategicLinearShift,
)
from .rng import substream
from .solution import solve_ps
from .theory import ConstantsBundle, theorem_schedule

__all__ = [
    "GaussianExperimentSpec",
    "CreditExperimentSpec",
    "ReplicateSummary",
    "make_gaussian_population",
    "make_credit_population",
    "ingest_credit_csv",
    "run_replicates",
    "rate_fit",
    "sweep",
    "bound_check",
    "spearman_rho",
    "sign_test_decreasing",
    "summary_to_csv",
    "sweep_to_csv",
]


# ---------------------------------------------------------------------------
# Population generators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianExperimentSpec:
    """Mean-estimation population: client i draws N(m_i + eps_i * theta, sigma^2)."""

    n_clients: int = 25
    mean_center: float = 10.0  # weighted average of the m_i
    mean_var: float = 0.0  # spread of the m_i (data heterogeneity)
    sens_center: float = 0.9  # weighted average sensitivity
    sens_var: float = 0.0  # spread of the eps_i (shift heterogeneity)
    noise_std: float = 1.0
    weight_mode: str = "uniform"  # "uniform" | "dirichlet"
    dirichlet_alpha: float = 10.0
    seed: int = 0


def _recentre_clipped(x: np.ndarray, weights: np.ndarray, target: float) -> np.ndarray:
    """Shift values so the weighted mean hits the target while staying >= 0."""
    for _ in range(200):
        x = np.clip(x, 0.0, None)
        gap = target - float(weights @ x)
        if abs(gap) <= 1e-12:
            return x
        x = x + gap
    raise GenerationError(
        f"cannot recentre non-negative sensitivities onto mean {target} "
        "(variance infeasible under clipping)"
    )


def make_gaussian_population(spec: GaussianExperimentSpec) -> Population:
    """Draw client means/sensitivities and recentre their weighted averages
    exactly onto the spec targets."""
    if spec.n_clients < 1:
        raise GenerationError("need at least one client")
    if spec.noise_std <= 0:
        raise GenerationError("noise_std must be > 0")
    rng = substream(spec.seed, "gaussian-population")
    n = spec.n_clients
    if spec.weight_mode == "uniform":
        weights = np.full(n, 1.0 / n)
    elif spec.weight_mode == "dirichlet":
        weights = rng.dirichlet(np.full(n, spec.dirichlet_alpha))
        weights = weights / weights.sum()
    else:
        raise GenerationError(f"unknown weight mode {spec.weight_mode!r}")

    means = spec.mean_center + math.sqrt(spec.mean_var) * rng.normal(size=n)
    means = means + (spec.mean_center - float(weights @ means))

    sens = spec.sens_center + math.sqrt(spec.sens_var) * rng.normal(size=n)
    if spec.sens_var == 0.0:
        sens = np.full(n, spec.sens_center)
    sens = _recentre_clipped(sens, weights, spec.sens_center)

    if spec.sens_center >= 1.0:
        warnings.warn(
            "average sensitivity >= 1: no stable point exists; only divergence "
            "demos are meaningful",
            stacklevel=2,
        )
    shifts = tuple(
        AffineGaussianShift(base_mean=np.array([m]), shift_coef=float(e), noise_std=spec.noise_std)
        for m, e in zip(means, sens)
    )
    return Population(weights=weights, shifts=shifts)


@dataclass(frozen=True)
class CreditExperimentSpec:
    """Strategic-classification setup: synthetic records or an ingested CSV."""

    n_clients: int = 10
    n_records: int = 400  # per client (generator path)
    feature_dim: int = 10
    strategic_idx: Tuple[int, ...] = (0, 1, 2)
    eps_low: float = 0.9
    eps_high: float = 1.1
    lam: float = 1e-3
    label_noise: float = 0.1
    batch_size: int = 4
    agg_every: int = 5
    k: int = 5
    seed: int = 0
    csv_path: Optional[str] = None


def ingest_credit_csv(path: str) -> Tuple[np.ndarray, np.ndarray]:
    """Read records as (features, labels in {-1,+1}) from a labeled CSV.

    Schema: header row, first column the {0,1} label, remaining columns
    numeric features.
    """
    feats: List[List[float]] = []
    labels: List[float] = []
    with open(path, newline="") as fh:
        header = fh.readline()
        if not header.strip():
            raise IngestionError("empty file", line=1)
        width = None
        for lineno, raw in enumerate(fh, start=2):
            if not raw.strip():
                continue
            parts = raw.strip().split(",")
            if width is None:
                width = len(parts)
                if width < 2:
                    raise IngestionError("need a label plus at least one feature", line=lineno)
            if len(parts) != width:
                raise IngestionError(f"expected {width} columns, got {len(parts)}", line=lineno)
            try:
                lab = float(parts[0])
                row = [float(v) for v in parts[1:]]
            except ValueError as exc:
                raise IngestionError(str(exc), line=lineno) from None
            if lab not in (0.0, 1.0):
                raise IngestionError(f"label must be 0 or 1, got {parts[0]}", line=lineno)
            labels.append(2.0 * lab - 1.0)
            feats.append(row)
    if not feats:
        raise IngestionError("no data rows", line=2)
    return np.asarray(feats), np.asarray(labels)


def make_credit_population(spec: CreditExperimentSpec) -> Tuple[Population, Dict]:
    """Build the strategic-classification population.

    The synthetic generator plants a unit separator in standard-normal
    features and flips a fraction of labels; the CSV path ingests real
    records instead.  Either way the records are partitioned evenly over
    the clients, each of which gets an independently drawn sensitivity.
    """
    if spec.n_clients < 1:
        raise GenerationError("need at least one client")
    if spec.csv_path is None:
        if spec.n_records < 1:
            raise GenerationError("n_records must be >= 1")
        rng = substream(spec.seed, "credit-data")
        total = spec.n_records * spec.n_clients
        feats = rng.normal(size=(total, spec.feature_dim))
        planted = rng.normal(size=spec.feature_dim)
        planted /= np.linalg.norm(planted)
        labels = np.where(feats @ planted >= 0, 1.0, -1.0)
        flips = rng.random(total) < spec.label_noise
        labels[flips] *= -1.0
        meta = {"source": "synthetic", "planted_separator": planted.tolist()}
    else:
        feats, labels = ingest_credit_csv(spec.csv_path)
        meta = {"source": str(spec.csv_path)}
        if feats.shape[0] < spec.n_clients:
            raise GenerationError(
                f"{feats.shape[0]} records cannot cover {spec.n_clients} clients"
            )

    eps_rng = substream(spec.seed, "credit-eps")
    eps = eps_rng.uniform(spec.eps_low, spec.eps_high, size=spec.n_clients)
    parts_f = np.array_split(feats, spec.n_clients)
    parts_l = np.array_split(labels, spec.n_clients)
    shifts = tuple(
        StrategicLinearShift(
            features=f, labels=l, sensitivity=float(e), strategic_idx=spec.strategic_idx
        )
        for f, l, e in zip(parts_f, parts_l, eps)
    )
    weights = np.full(spec.n_clients, 1.0 / spec.n_clients)
    meta["eps"] = eps.tolist()
    return Population(weights=weights, shifts=shifts), meta


def credit_loss_model(spec: CreditExperimentSpec, features: Optional[np.ndarray] = None,
                      theta_bound: float = 10.0) -> LogisticLoss:
    """Loss model with the feature-norm bound measured from the data."""
    bound = 1.0
    if features is not None:
        bound = float(np.max(np.linalg.norm(features, axis=1)))
    return LogisticLoss(lam=spec.lam, feature_bound=bound, theta_bound=theta_bound)


# ---------------------------------------------------------------------------
# Replicates and statistics
# ---------------------------------------------------------------------------


@dataclass
class ReplicateSummary:
    t: np.ndarray
    mean_dist_sq: np.ndarray
    std_dist_sq: np.ndarray
    mean_loss: np.ndarray
    std_loss: np.ndarray
    seeds: List[int]
    per_seed_dist_sq: np.ndarray  # (n_seeds, n_records)
    per_seed_loss: np.ndarray
    communication_count: int
    meta: Dict = field(default_factory=dict)


def _run_one(args) -> Tuple[int, Optional[RunTrace], Optional[str]]:
    config, seed, theta_ps = args
    cfg = dataclasses.replace(config, base_seed=seed)
    try:
        return seed, run(cfg, theta_ps), None
    except NumericError as err:
        return seed, None, str(err)


def run_replicates(
    config: RunConfig,
    seeds: Sequence[int],
    theta_ps: np.ndarray,
    jobs: int = 1,
) -> ReplicateSummary:
    """Run one trace per seed and align the records by step index.

    Failed replicates (numeric aborts) are excluded and listed in the
    meta; statistics are computed in sorted-seed order so they do not
    depend on the order seeds were supplied or finished.
    """
    if not seeds:
        raise InputError("need at least one seed")
    order = sorted(range(len(seeds)), key=lambda i: (seeds[i], i))
    tasks = [(config, seeds[i], theta_ps) for i in order]
    if jobs > 1 and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]

    traces: List[Tuple[int, RunTrace]] = []
    failed: List[Tuple[int, str]] = []
    for seed, trace, err in results:
        if trace is None:
            failed.append((seed, err or "aborted"))
        else:
            traces.append((seed, trace))
    if not traces:
        raise NumericError(f"all replicates failed: {failed}")
    base_t = traces[0][1].t
    for _, tr in traces[1:]:
        if not np.array_equal(tr.t, base_t):
            raise InputError("replicate record grids differ; use a common record_every")
    dist = np.stack([tr.dist_sq for _, tr in traces])
    loss = np.stack([tr.loss for _, tr in traces])
    nseed = dist.shape[0]
    ddof = 1 if nseed > 1 else 0
    return ReplicateSummary(
        t=base_t,
        mean_dist_sq=dist.mean(axis=0),
        std_dist_sq=dist.std(axis=0, ddof=ddof),
        mean_loss=loss.mean(axis=0),
        std_loss=loss.std(axis=0, ddof=ddof),
        seeds=[s for s, _ in traces],
        per_seed_dist_sq=dist,
        per_seed_loss=loss,
        communication_count=traces[0][1].communication_count,
        meta={
            "failed_seeds": failed,
            "schedule_kind": config.schedule.kind,
            "beta": config.schedule.beta,
            "gamma": config.schedule.gamma,
            "eta": config.schedule.eta,
            "agg_every": config.agg_every,
            "participation": config.participation.kind,
            "k": config.participation.k,
        },
    )


def rate_fit(
    summary: ReplicateSummary,
    t_min: int,
    t_max: int,
    gamma: Optional[float] = None,
) -> float:
    """OLS slope of log(mean dist^2) against log(gamma + t) on a window.

    A slope of -1 is the signature of the guaranteed upsilon/(gamma + t)
    decay.
    """
    if gamma is None:
        gamma = float(summary.meta.get("gamma") or 0.0)
    mask = (summary.t >= t_min) & (summary.t <= t_max) & (summary.mean_dist_sq > 0)
    if int(mask.sum()) < 10:
        raise InputError(
            f"need >= 10 records with positive mean dist^2 in [{t_min}, {t_max}], "
            f"got {int(mask.sum())}"
        )
    x = np.log(gamma + summary.t[mask].astype(np.float64))
    y = np.log(summary.mean_dist_sq[mask])
    design = np.vstack([x, np.ones_like(x)]).T
    slope, _ = np.linalg.lstsq(design, y, rcond=None)[0]
    return float(slope)


def sweep(
    config: RunConfig,
    axis: str,
    values: Sequence,
    seeds: Sequence[int],
    theta_ps: np.ndarray,
    gauss_spec: Optional[GaussianExperimentSpec] = None,
    jobs: int = 1,
) -> Dict:
    """One replicate summary per axis value, sharing the seed list.

    Axes E / K / scheme vary the run configuration on a fixed population;
    var_m / var_eps regenerate the population (and its stable point) from
    the supplied Gaussian spec.
    """
    if not values:
        raise InputError("sweep needs at least one value")
    out: Dict = {"axis": axis, "values": list(values), "cells": {}, "errors": {}}
    for value in values:
        try:
            cfg, tps = _sweep_cell(config, axis, value, theta_ps, gauss_spec)
            out["cells"][value] = run_replicates(cfg, seeds, tps, jobs=jobs)
        except Exception as exc:  # noqa: BLE001 - per-cell failures are data
            out["errors"][value] = f"{type(exc).__name__}: {exc}"
    return out


def _sweep_cell(config, axis, value, theta_ps, gauss_spec):
    if axis == "E":
        return dataclasses.replace(config, agg_every=int(value)), theta_ps
    if axis == "K":
        part = Participation(config.participation.kind, int(value))
        return dataclasses.replace(config, participation=part), theta_ps
    if axis == "scheme":
        kind = str(value)
        k = config.participation.k if kind != "full" else 0
        return dataclasses.replace(config, participation=Participation(kind, k)), theta_ps
    if axis in ("var_m", "var_eps"):
        if gauss_spec is None:
            raise InputError(f"axis {axis!r} needs the Gaussian experiment spec")
        fieldname = "mean_var" if axis == "var_m" else "sens_var"
        new_spec = dataclasses.replace(gauss_spec, **{fieldname: float(value)})
        pop = make_gaussian_population(new_spec)
        res = solve_ps(pop, config.model, theta0=np.zeros(pop.dim), tol=1e-10)
        return dataclasses.replace(config, population=pop), res.theta_ps
    raise InputError(f"unknown sweep axis {axis!r}")


def bound_check(summary: ReplicateSummary, cb: ConstantsBundle, mode: str) -> Dict:
    """Verify mean dist^2 <= upsilon/(gamma + t) at every recorded step.

    Only meaningful when the run actually used the guaranteed schedule for
    the mode; a mismatched schedule is flagged and the check skipped.  The
    comparison allows 1e-9 relative slack for float roundoff (the bound is
    exactly tight at t = 0 by construction of upsilon).
    """
    sched = theorem_schedule(cb, mode)
    run_kind = summary.meta.get("schedule_kind")
    matches = (
        run_kind == "diminishing"
        and math.isclose(float(summary.meta.get("beta", 0.0)), sched.beta, rel_tol=1e-9)
        and math.isclose(float(summary.meta.get("gamma", 0.0)), sched.gamma, rel_tol=1e-9)
        and int(summary.meta.get("agg_every", 0)) == cb.E
    )
    if not matches:
        return {"checked": False, "reason": "schedule does not match the theorem schedule", "mode": mode}
    bound = cb.upsilon(mode) / (cb.gamma(mode) + summary.t.astype(np.float64))
    ratio = summary.mean_dist_sq / bound
    holds = bool(np.all(summary.mean_dist_sq <= bound * (1 + 1e-9)))
    worst = int(np.argmax(ratio))
    return {
        "checked": True,
        "mode": mode,
        "holds": holds,
        "max_ratio": float(ratio[worst]),
        "argmax_t": int(summary.t[worst]),
        "first_violation_t": int(summary.t[np.argmax(ratio > 1 + 1e-9)]) if not holds else None,
    }


# ---------------------------------------------------------------------------
# Trend statistics
# ---------------------------------------------------------------------------


def spearman_rho(x: np.ndarray, y: np.ndarray) -> float:
    """Spearman rank correlation (average ranks for ties)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise InputError("need two equal-length series with >= 2 points")

    def ranks(v: np.ndarray) -> np.ndarray:
        order = np.argsort(v, kind="mergesort")
        r = np.empty(v.size, dtype=np.float64)
        r[order] = np.arange(1, v.size + 1)
        # average ranks over ties
        vals, inv, counts = np.unique(v, return_inverse=True, return_counts=True)
        sums = np.zeros(vals.size)
        np.add.at(sums, inv, r)
        return sums[inv] / counts[inv]

    rx, ry = ranks(x), ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(rx @ rx) * float(ry @ ry))
    if denom == 0:
        return 0.0
    return float(rx @ ry) / denom


def sign_test_decreasing(start: np.ndarray, end: np.ndarray) -> float:
    """One-sided sign test p-value for 'end < start' across paired seeds."""
    start = np.asarray(start, dtype=np.float64)
    end = np.asarray(end, dtype=np.float64)
    if start.shape != end.shape:
        raise InputError("paired samples must align")
    diffs = start - end
    informative = diffs != 0
    n = int(informative.sum())
    if n == 0:
        return 1.0
    k = int((diffs[informative] > 0).sum())
    # P(Bin(n, 1/2) >= k)
    return sum(math.comb(n, j) for j in range(k, n + 1)) / 2.0**n


# ---------------------------------------------------------------------------
# CSV emission
# ---------------------------------------------------------------------------

SUMMARY_HEADER = "t,mean_dist_sq,std_dist_sq,mean_loss,std_loss"


def summary_to_csv(summary: ReplicateSummary, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(SUMMARY_HEADER + "\n")
        for i in range(len(summary.t)):
            fh.write(
                f"{int(summary.t[i])},{summary.mean_dist_sq[i]:.17g},"
                f"{summary.std_dist_sq[i]:.17g},{summary.mean_loss[i]:.17g},"
                f"{summary.std_loss[i]:.17g}\n"
            )


def sweep_to_csv(result: Dict, path) -> None:
    axis = result["axis"]
    with open(path, "w", newline="") as fh:
        fh.write(f"{axis},{SUMMARY_HEADER}\n")
        for value, summary in result["cells"].items():
            for i in range(len(summary.t)):
                fh.write(
                    f"{value},{int(summary.t[i])},{summary.mean_dist_sq[i]:.17g},"
                    f"{summary.std_dist_sq[i]:.17g},{summary.mean_loss[i]:.17g},"
                    f"{summary.std_loss[i]:.17g}\n"
                )
