"""Federated simulation loop under model-induced distribution shift.

Each step every client draws data from its own distribution at its current
local parameters and takes one (mini-batch) gradient step.  Every E-th step
the server aggregates - from all clients, or from a sampled subset under
one of two participation schemes - and broadcasts the result, costing two
communications.  The simulator is omniscient: it tracks the weighted
parameter average, its squared distance to the stable point, the running
risk, and the consensus error at every recorded step, even though the
protocol only materializes the average at aggregation steps.

Randomness layout: one counter-based stream keyed (seed, "clients") feeds
all client draws (client i owns column i of each per-step block, so client
updates within a step can run in any order or in parallel without changing
the trace), and a separate stream keyed (seed, "sampler") feeds
participation sampling, so partial runs consume exactly the same client
randomness as full runs under a common seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .errors import ConfigError, InputError, NumericError
from .model import (
    AffineGaussianShift,
    LossModel,
    Population,
    QuadraticMeanLoss,
    StrategicLinearShift,
    Theta,
    as_theta,
)
from .rng import substream
from .solution import performative_risk
from .theory import ScheduleSpec

__all__ = [
    "Participation",
    "RunConfig",
    "RunTrace",
    "ClientState",
    "local_update",
    "aggregate_full",
    "sample_scheme1",
    "sample_scheme2",
    "aggregate_partial",
    "EngineState",
    "advance",
    "run",
    "reference_sgd",
]


@dataclass(frozen=True)
class Participation:
    kind: str  # "full" | "scheme1" | "scheme2"
    k: int = 0

    def __post_init__(self):
        if self.kind not in ("full", "scheme1", "scheme2"):
            raise ConfigError(f"unknown participation kind {self.kind!r}")
        if self.kind != "full" and self.k < 1:
            raise ConfigError("partial participation needs k >= 1")


@dataclass(frozen=True)
class RunConfig:
    population: Population
    model: LossModel
    schedule: ScheduleSpec
    total_steps: int
    agg_every: int = 1  # E
    participation: Participation = Participation("full")
    base_seed: int = 0
    theta0: Optional[np.ndarray] = None
    record_every: int = 0  # 0 = auto: max(1, T // 2000) plus every aggregation step
    batch_size: int = 1
    rescaled: bool = False  # opt-in objective rescaling g_i = p_i N f_i

    def __post_init__(self):
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.agg_every < 1:
            raise ConfigError("aggregation period must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        n = self.population.n_clients
        if self.participation.kind != "full" and not (1 <= self.participation.k <= n):
            raise ConfigError(f"need 1 <= K <= N, got K={self.participation.k}, N={n}")
        if (
            self.participation.kind == "scheme2"
            and not self.population.uniform_weights
            and not self.rescaled
        ):
            raise ConfigError(
                "uniform-sampling aggregation needs uniform client weights; "
                "enable rescaled mode to run with unbalanced weights"
            )


@dataclass
class RunTrace:
    """Recorded time series of a single run."""

    t: np.ndarray
    theta_bar: np.ndarray  # (n_records, dim)
    dist_sq: np.ndarray
    loss: np.ndarray
    consensus_err: np.ndarray
    is_agg: np.ndarray
    communication_count: int
    meta: Dict = field(default_factory=dict)
    aborted: bool = False
    abort_step: Optional[int] = None

    CSV_HEADER = "t,theta_bar,dist_sq,loss,consensus_err,is_agg"

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.CSV_HEADER + "\n")
            for i in range(len(self.t)):
                coords = ";".join(f"{v:.17g}" for v in np.atleast_1d(self.theta_bar[i]))
                fh.write(
                    f"{int(self.t[i])},{coords},{self.dist_sq[i]:.17g},"
                    f"{self.loss[i]:.17g},{self.consensus_err[i]:.17g},{int(self.is_agg[i])}\n"
                )

    @classmethod
    def from_csv(cls, path) -> "RunTrace":
        ts: List[int] = []
        thetas: List[np.ndarray] = []
        cols: Dict[str, List[float]] = {"dist_sq": [], "loss": [], "consensus_err": [], "is_agg": []}
        with open(path, newline="") as fh:
            header = fh.readline().strip()
            if header != cls.CSV_HEADER:
                raise InputError(f"unexpected trace header: {header!r}")
            for line in fh:
                parts = line.rstrip("\n").split(",")
                if len(parts) != 6:
                    raise InputError(f"malformed trace row: {line!r}")
                ts.append(int(parts[0]))
                thetas.append(np.array([float(v) for v in parts[1].split(";")]))
                cols["dist_sq"].append(float(parts[2]))
                cols["loss"].append(float(parts[3]))
                cols["consensus_err"].append(float(parts[4]))
                cols["is_agg"].append(float(parts[5]))
        return cls(
            t=np.array(ts, dtype=np.int64),
            theta_bar=np.stack(thetas) if thetas else np.zeros((0, 1)),
            dist_sq=np.array(cols["dist_sq"]),
            loss=np.array(cols["loss"]),
            consensus_err=np.array(cols["consensus_err"]),
            is_agg=np.array(cols["is_agg"], dtype=bool),
            communication_count=0,
        )


# ---------------------------------------------------------------------------
# Single-client and aggregation primitives
# ---------------------------------------------------------------------------


@dataclass
class ClientState:
    theta: np.ndarray
    client_index: int = 0


def local_update(
    state: ClientState,
    shift,
    model: LossModel,
    eta: float,
    rng: np.random.Generator,
    batch_size: int = 1,
) -> np.ndarray:
    """One local SGD step: draw from the client's current distribution and
    descend the sampled gradient (averaged over the mini-batch)."""
    if eta < 0:
        raise InputError("step size must be >= 0")
    theta = as_theta(state.theta)
    grad = np.zeros_like(theta)
    for _ in range(batch_size):
        z = shift.sample(theta, rng)
        grad += model.grad(theta, z)
    grad /= batch_size
    w = theta - eta * grad
    if not np.all(np.isfinite(w)):
        raise NumericError("non-finite local update", step=None)
    return w


def aggregate_full(weights: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Weighted average of client parameters, the value broadcast to all."""
    weights = np.asarray(weights, dtype=np.float64)
    return weights @ np.asarray(w, dtype=np.float64)


def sample_scheme1(
    weights: np.ndarray, k: int, rng: np.random.Generator, size: Optional[int] = None
) -> np.ndarray:
    """Multiset of k indices drawn i.i.d. with replacement by client weight.

    size draws `size` independent multisets at once, shape (size, k).
    """
    if k < 1:
        raise InputError("k must be >= 1")
    weights = np.asarray(weights, dtype=np.float64)
    shape = k if size is None else (size, k)
    return rng.choice(len(weights), size=shape, replace=True, p=weights)


def sample_scheme2(
    n: int, k: int, rng: np.random.Generator, size: Optional[int] = None
) -> np.ndarray:
    """Uniformly random k-subset of {0..n-1} by partial Fisher-Yates,
    returned sorted (set semantics, and a canonical summation order).

    size draws `size` independent subsets at once, shape (size, k), by
    running the same shuffle on every row.
    """
    if not 1 <= k <= n:
        raise InputError(f"need 1 <= k <= n, got k={k}, n={n}")
    if size is None:
        arr = np.arange(n)
        offsets = rng.integers(0, n - np.arange(k))
        for i in range(k):
            j = i + int(offsets[i])
            arr[i], arr[j] = arr[j], arr[i]
        return np.sort(arr[:k])
    arr = np.tile(np.arange(n), (size, 1))
    offsets = rng.integers(0, n - np.arange(k), size=(size, k))
    rows = np.arange(size)
    for i in range(k):
        j = i + offsets[:, i]
        picked = arr[rows, j]
        arr[rows, j] = arr[:, i]
        arr[:, i] = picked
    return np.sort(arr[:, :k], axis=1)


def aggregate_partial(
    scheme: str,
    selected: np.ndarray,
    w: np.ndarray,
    weights: np.ndarray,
    n: int,
    k: int,
    rescaled: bool = False,
) -> np.ndarray:
    """Combine the sampled clients' parameters per the scheme's weighting.

    Scheme 1 (with replacement): plain average over the multiset.
    Scheme 2 (without replacement): sum of p_j * (N/K) * w_j, which is a
    proper average only for uniform weights; rescaled mode runs the
    uniform-weight combination on behalf of the rescaled objectives.
    """
    selected = np.asarray(selected, dtype=np.intp)
    if selected.shape[0] != k:
        raise InputError(f"expected |S| = {k}, got {selected.shape[0]}")
    w = np.asarray(w, dtype=np.float64)
    if scheme == "scheme1":
        return w[selected].sum(axis=0) / k
    if scheme == "scheme2":
        weights = np.asarray(weights, dtype=np.float64)
        if rescaled:
            return w[selected].sum(axis=0) / k
        if not np.allclose(weights, 1.0 / n, rtol=0, atol=1e-12):
            raise ConfigError(
                "uniform-sampling aggregation needs uniform weights (or rescaled mode)"
            )
        return (weights[selected] * (n / k)) @ w[selected]
    raise InputError(f"unknown scheme {scheme!r}")


# ---------------------------------------------------------------------------
# Vectorized engine
# ---------------------------------------------------------------------------

_CHUNK = 4096


class _ClientDraws:
    """Chunked per-step random blocks from the client stream.

    Row s of a block belongs to step t0 + s; column i belongs to client i.
    Gaussian clients consume standard normals of shape (N, batch, dim) per
    step, empirical-data clients consume uniforms of shape (N, batch).
    """

    def __init__(self, rng: np.random.Generator, n: int, batch: int, dim: int, gaussian: bool):
        self.rng = rng
        self.n = n
        self.batch = batch
        self.dim = dim
        self.gaussian = gaussian
        self._block: Optional[np.ndarray] = None
        self._base = 0

    def row(self, t: int) -> np.ndarray:
        if self._block is None or not (self._base <= t < self._base + self._block.shape[0]):
            self._base = (t // _CHUNK) * _CHUNK
            if self.gaussian:
                self._block = self.rng.normal(size=(_CHUNK, self.n, self.batch, self.dim))
            else:
                self._block = self.rng.random(size=(_CHUNK, self.n, self.batch))
        return self._block[t - self._base]


@dataclass
class EngineState:
    config: RunConfig
    theta: np.ndarray  # (N, dim) current client parameters
    t: int
    draws: _ClientDraws
    sampler: np.random.Generator
    communication_count: int = 0
    w_bar: Optional[np.ndarray] = None  # shadow pre-aggregation average
    affine_cache: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = None

    @classmethod
    def make(cls, config: RunConfig) -> "EngineState":
        pop = config.population
        dim = pop.dim
        theta0 = (
            np.zeros(dim)
            if config.theta0 is None
            else as_theta(config.theta0)
        )
        if theta0.shape[0] != dim:
            raise ConfigError(f"theta0 dim {theta0.shape[0]} != population dim {dim}")
        gaussian = pop.all_affine
        draws = _ClientDraws(
            substream(config.base_seed, "clients"),
            pop.n_clients,
            config.batch_size,
            dim,
            gaussian,
        )
        cache = None
        if gaussian and isinstance(config.model, QuadraticMeanLoss):
            coefs = _affine_coefs(pop)
            means, sigs = _affine_means_sigmas(pop)
            scale = (
                (pop.weights * pop.n_clients)[:, None] if config.rescaled else np.ones((pop.n_clients, 1))
            )
            cache = (coefs[:, None], means, sigs[:, None], scale)
        return cls(
            config=config,
            theta=np.tile(theta0, (pop.n_clients, 1)),
            t=0,
            draws=draws,
            sampler=substream(config.base_seed, "sampler"),
            affine_cache=cache,
        )

    @property
    def record_weights(self) -> np.ndarray:
        # rescaled mode optimizes the uniformly weighted rescaled objectives
        if self.config.rescaled:
            n = self.config.population.n_clients
            return np.full(n, 1.0 / n)
        return self.config.population.weights

    def theta_bar(self) -> np.ndarray:
        # the weighted mean of identical rows is that row; taking the dot
        # product instead would smear float error from sum(p) = 1 +- eps
        # into the post-broadcast consensus error, which must be exactly 0
        if np.all(self.theta == self.theta[0]):
            return self.theta[0].copy()
        return self.record_weights @ self.theta

    def consensus_error(self) -> float:
        tb = self.theta_bar()
        diff = self.theta - tb[None, :]
        return float(self.record_weights @ np.sum(diff * diff, axis=1))


def _local_step(state: EngineState, eta: float) -> np.ndarray:
    """All clients' post-update parameters w^(t+1), vectorized."""
    cfg = state.config
    pop = cfg.population
    th = state.theta
    n = pop.n_clients
    block = state.draws.row(state.t)

    if state.affine_cache is not None:
        coefs, means, sigs, scale = state.affine_cache
        if cfg.batch_size == 1:
            z = means + coefs * th + sigs * block[:, 0, :]
            return th - eta * (scale * (th - z))
        z = means[:, None, :] + coefs[:, :, None] * th[:, None, :] + sigs[:, :, None] * block
        gbar = th - z.mean(axis=1)
        return th - eta * (scale * gbar)

    if pop.all_strategic and cfg.model.kind == "logistic":
        lam = cfg.model.lam
        w = np.empty_like(th)
        for i, shift in enumerate(pop.shifts):
            idx = np.minimum(
                (block[i] * shift.n_records).astype(np.intp), shift.n_records - 1
            )
            feats = shift.features[idx].copy()
            if shift.strategic_idx:
                s_idx = np.asarray(shift.strategic_idx, dtype=np.intp)
                feats[:, s_idx] -= shift.sensitivity * th[i, s_idx]
            labels = shift.labels[idx]
            margins = labels * (feats @ th[i])
            sig = 1.0 / (1.0 + np.exp(np.clip(margins, -500, 500)))
            grad = -(sig * labels) @ feats / len(idx) + lam * th[i]
            if cfg.rescaled:
                grad *= pop.weights[i] * n
            w[i] = th[i] - eta * grad
        return w

    # generic slow path through the per-client primitives
    w = np.empty_like(th)
    for i, shift in enumerate(pop.shifts):
        rng = substream(cfg.base_seed, "clients", i, state.t)
        w[i] = local_update(
            ClientState(th[i], i), shift, cfg.model, eta, rng, cfg.batch_size
        )
    return w


def _affine_coefs(pop: Population) -> np.ndarray:
    return np.array([s.shift_coef for s in pop.shifts])


def _affine_means_sigmas(pop: Population) -> Tuple[np.ndarray, np.ndarray]:
    return (
        np.stack([s.base_mean for s in pop.shifts]),
        np.array([s.noise_std for s in pop.shifts]),
    )


def advance(state: EngineState) -> EngineState:
    """One simulator step: local updates everywhere, then (on aggregation
    steps) sampling, aggregation, and broadcast to all clients."""
    cfg = state.config
    eta = cfg.schedule.at(state.t)
    w = _local_step(state, eta)
    if not np.all(np.isfinite(w)):
        raise NumericError("non-finite client update", step=state.t)
    state.w_bar = state.record_weights @ w
    if (state.t + 1) % cfg.agg_every == 0:
        part = cfg.participation
        pop = cfg.population
        if part.kind == "full":
            agg = state.w_bar
        elif part.kind == "scheme1":
            sel = sample_scheme1(pop.weights, part.k, state.sampler)
            agg = aggregate_partial("scheme1", sel, w, pop.weights, pop.n_clients, part.k)
        else:
            sel = sample_scheme2(pop.n_clients, part.k, state.sampler)
            agg = aggregate_partial(
                "scheme2", sel, w, pop.weights, pop.n_clients, part.k, rescaled=cfg.rescaled
            )
        state.theta = np.tile(agg, (pop.n_clients, 1))
        state.communication_count += 2
    else:
        state.theta = w
    state.t += 1
    return state


def run(config: RunConfig, theta_ps: Theta) -> RunTrace:
    """Execute the configured number of steps and collect the trace.

    Records at t = 0, every record_every steps, and at the final step; in
    auto mode (record_every = 0) the grid is max(1, T // 2000) plus every
    aggregation step.  A non-finite update aborts with the partial trace
    attached to the raised error.
    """
    theta_ps = as_theta(theta_ps)
    T = config.total_steps
    E = config.agg_every
    auto = config.record_every == 0
    every = max(1, T // 2000) if auto else config.record_every

    state = EngineState.make(config)
    rec: Dict[str, List] = {k: [] for k in ("t", "tb", "dist", "loss", "cons", "agg")}

    def record(t: int) -> None:
        tb = state.theta_bar()
        rec["t"].append(t)
        rec["tb"].append(tb)
        rec["dist"].append(float(np.sum((tb - theta_ps) ** 2)))
        rec["loss"].append(performative_risk(config.population, config.model, tb))
        rec["cons"].append(state.consensus_error())
        rec["agg"].append(t > 0 and t % E == 0)

    def should_record(t: int) -> bool:
        if t == 0 or t == T:
            return True
        if t % every == 0:
            return True
        return auto and t % E == 0

    def build(aborted: bool, abort_step: Optional[int]) -> RunTrace:
        return RunTrace(
            t=np.array(rec["t"], dtype=np.int64),
            theta_bar=np.stack(rec["tb"]) if rec["tb"] else np.zeros((0, config.population.dim)),
            dist_sq=np.array(rec["dist"]),
            loss=np.array(rec["loss"]),
            consensus_err=np.array(rec["cons"]),
            is_agg=np.array(rec["agg"], dtype=bool),
            communication_count=state.communication_count,
            meta={
                "seed": config.base_seed,
                "batch_size": config.batch_size,
                "batch_note": "mini-batch averaging is a variance-reduction refinement "
                "of the single-draw local update" if config.batch_size > 1 else "",
                "participation": config.participation.kind,
                "rescaled": config.rescaled,
            },
            aborted=aborted,
            abort_step=abort_step,
        )

    record(0)
    for t in range(T):
        try:
            advance(state)
        except NumericError as err:
            err.partial_trace = build(True, t)  # type: ignore[attr-defined]
            raise
        if should_record(t + 1):
            record(t + 1)
    return build(False, None)


def reference_sgd(config: RunConfig, theta_ps: Theta) -> np.ndarray:
    """Single-sequence weighted SGD reference for the E = 1 identity.

    Consumes the same client stream as run() and applies
    theta <- sum_i p_i (theta - eta * grad_i), which is what aggregating
    every step collapses to.  Returns the parameter after every step.
    """
    if config.agg_every != 1 or config.participation.kind != "full":
        raise InputError("reference sequence is defined for E = 1 full participation")
    pop, model = config.population, config.model
    if not (pop.all_affine and isinstance(model, QuadraticMeanLoss)):
        raise InputError("reference sequence implemented for the affine-Gaussian family")
    draws = _ClientDraws(
        substream(config.base_seed, "clients"), pop.n_clients, config.batch_size, pop.dim, True
    )
    coefs = _affine_coefs(pop)
    means, sigs = _affine_means_sigmas(pop)
    theta = np.zeros(pop.dim) if config.theta0 is None else as_theta(config.theta0)
    out = [theta.copy()]
    for t in range(config.total_steps):
        eta = config.schedule.at(t)
        block = draws.row(t)
        z = means[:, None, :] + coefs[:, None, None] * theta[None, None, :] + sigs[:, None, None] * block
        grad = theta[None, None, :] - z
        w = theta[None, :] - eta * grad.mean(axis=1)
        theta = pop.weights @ w
        out.append(theta.copy())
    return np.stack(out)
