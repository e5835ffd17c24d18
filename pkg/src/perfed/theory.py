"""Convergence constants, step-size schedules, and their side conditions.

Everything the convergence guarantees need is derived from a small set of
problem-level quantities: strong convexity mu, smoothness L, the gradient
noise scale sigma, the client-heterogeneity scale varsigma, the
sensitivities eps_bar / eps_max, a free Young-inequality parameter
delta > 0, and the initial squared distance d0.  The effective modulus

    mu_tilde = mu - (1 + delta) * eps_bar * L

must be positive; it plays the role the strong-convexity constant plays in
static SGD analysis.  The guarantee for the diminishing schedule
eta_t = 2 / (mu_tilde * (t + gamma)) is E||theta_bar_t - theta_ps||^2 <=
upsilon / (gamma + t) with upsilon = max{4 B_mode / mu_tilde^2, gamma * d0},
where B_mode differs between full participation and the two partial
participation schemes.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace
from typing import Dict, Optional

import numpy as np

from .errors import InputError, NonContractiveRegimeError
from .model import AffineGaussianShift, LossModel, Population, QuadraticMeanLoss

__all__ = [
    "ProblemConstants",
    "ConstantsBundle",
    "ScheduleSpec",
    "constants",
    "theorem_schedule",
    "practical_schedule",
    "step_size",
    "validate_schedule",
    "theoretical_bound",
    "check_stepsize_sum_inequality",
    "two_client_example",
    "two_client_mc_gradients",
    "rescale_constants",
    "estimate_varsigma",
    "problem_constants_from",
    "default_delta",
]

MODES = ("full", "scheme1", "scheme2")


def default_delta(mu: float, smoothness: float, eps_bar: float) -> float:
    """Midpoint of the admissible interval (0, mu/(eps_bar L) - 1).

    Any delta in the interval keeps mu_tilde positive; the midpoint
    balances mu_tilde against c1, which scales like 1/delta.
    """
    if eps_bar <= 0:
        raise InputError("delta default needs eps_bar > 0")
    edge = mu / (eps_bar * smoothness) - 1.0
    if edge <= 0:
        raise NonContractiveRegimeError(
            f"eps_bar * L / mu = {eps_bar * smoothness / mu:.6g} >= 1: no admissible delta",
        )
    return 0.5 * edge


@dataclass(frozen=True)
class ProblemConstants:
    """Problem-level inputs to the constants machinery."""

    mu: float
    smoothness: float
    sigma: float  # gradient-noise scale (stochastic-gradient variance bound)
    varsigma: float  # heterogeneity scale (local-gradient deviation bound)
    eps_bar: float
    eps_max: float
    delta: float
    d0: float  # squared distance of the initialization to theta_ps
    lipschitz_z: Optional[float] = None
    grad_bound: Optional[float] = None  # uniform gradient-norm bound G, if assumed

    @property
    def mu_tilde(self) -> float:
        return self.mu - (1.0 + self.delta) * self.eps_bar * self.smoothness

    def to_dict(self) -> Dict[str, Optional[float]]:
        d = asdict(self)
        d["mu_tilde"] = self.mu_tilde
        return d


@dataclass(frozen=True)
class ConstantsBundle:
    """Every derived constant, plus the inputs it was derived from."""

    pc: ProblemConstants
    E: int
    K: int
    N: int

    mu_tilde: float
    c1: float
    c2: float
    c3: float
    c4: float
    c5: float
    c6: float
    eta_hat0: float
    eta_tilde0: float
    b_full: float
    b_scheme1: float
    b_scheme2: float
    b_scheme2_alt: float  # variant with the extra 1/N in the sampling factor
    gamma_full: float
    gamma_scheme1: float
    gamma_scheme2: float
    upsilon_full: float
    upsilon_scheme1: float
    upsilon_scheme2: float
    c7: Optional[float] = None
    c8: Optional[float] = None
    c9: Optional[float] = None

    def beta(self) -> float:
        return 2.0 / self.mu_tilde

    def gamma(self, mode: str) -> float:
        return {"full": self.gamma_full, "scheme1": self.gamma_scheme1, "scheme2": self.gamma_scheme2}[mode]

    def upsilon(self, mode: str) -> float:
        return {
            "full": self.upsilon_full,
            "scheme1": self.upsilon_scheme1,
            "scheme2": self.upsilon_scheme2,
        }[mode]

    def eta0_cap(self, mode: str) -> float:
        return self.eta_hat0 if mode == "full" else self.eta_tilde0

    def b(self, mode: str) -> float:
        return {"full": self.b_full, "scheme1": self.b_scheme1, "scheme2": self.b_scheme2}[mode]

    def to_dict(self) -> Dict:
        out = {
            "inputs": self.pc.to_dict(),
            "E": self.E,
            "K": self.K,
            "N": self.N,
        }
        for name in (
            "mu_tilde c1 c2 c3 c4 c5 c6 eta_hat0 eta_tilde0 b_full b_scheme1 "
            "b_scheme2 b_scheme2_alt gamma_full gamma_scheme1 gamma_scheme2 "
            "upsilon_full upsilon_scheme1 upsilon_scheme2 c7 c8 c9"
        ).split():
            out[name] = getattr(self, name)
        return out


def constants(pc: ProblemConstants, E: int, K: int, N: int) -> ConstantsBundle:
    """Evaluate the full constants family for a system design (E, K, N)."""
    if pc.mu_tilde <= 0:
        raise NonContractiveRegimeError(
            f"mu_tilde = {pc.mu_tilde:.6g} <= 0 for delta = {pc.delta:.6g}",
            mu_tilde=pc.mu_tilde,
        )
    if E < 1 or K < 1 or K > N:
        raise InputError(f"need E >= 1 and 1 <= K <= N, got E={E}, K={K}, N={N}")
    if pc.eps_bar <= 0:
        raise InputError("constants need eps_bar > 0 (static problems have no shift coupling)")
    if pc.d0 <= 0:
        raise InputError("constants need d0 > 0 (initialize away from theta_ps)")

    mu_t = pc.mu_tilde
    sig2 = pc.sigma**2
    var2 = pc.varsigma**2
    one_eps = (1.0 + pc.eps_max) ** 2
    L2 = pc.smoothness**2

    c1 = pc.smoothness * one_eps / (2.0 * pc.delta * pc.eps_bar)
    c2 = 4.0 * (sig2 + L2 * one_eps)
    c3 = 6.0 * (2.0 * sig2 + 3.0 * L2 * one_eps)
    c4 = 16.0 * sig2 + 12.0 * var2 + (8.0 * sig2 + 12.0 * var2) / pc.d0
    c5 = (48.0 * sig2 + 36.0 * var2) * pc.d0 + (24.0 * sig2 + 36.0 * var2)
    c6 = (2.0 * E * E + 3.0 * E + 1.0) * math.log(E + 1.0)

    period_full = (2.0 * E * E - E) * math.log(E)  # zero at E = 1
    eta_hat0 = mu_t / (2.0 * sig2 + (c1 * c3 + c2 / 6.0) * c4 * period_full)
    eta_tilde0 = mu_t / (2.0 * sig2 + (c1 * c3 + c2 / 6.0) * c4 * c6)

    b_full = 2.0 * sig2 + (4.0 * c1 * eta_hat0 + 4.0 * c2 * eta_hat0**2) * c5 * period_full
    s2_factor = (N - K) / (K * (N - 1.0)) if N > K else 0.0
    s2_factor_alt = (N - K) / (K * N * (N - 1.0)) if N > K else 0.0
    b_scheme1 = 2.0 * sig2 + (4.0 * c1 * eta_tilde0 + 4.0 * c2 * eta_tilde0**2 + 1.0 / K) * c5 * c6
    b_scheme2 = 2.0 * sig2 + (4.0 * c1 * eta_tilde0 + 4.0 * c2 * eta_tilde0**2 + s2_factor) * c5 * c6
    b_scheme2_alt = (
        2.0 * sig2 + (4.0 * c1 * eta_tilde0 + 4.0 * c2 * eta_tilde0**2 + s2_factor_alt) * c5 * c6
    )

    # The full-participation gamma term appears in two algebraically equal
    # forms; evaluate both as a self-test of c3.
    gamma_term_a = (2.0 / mu_t) * math.sqrt((4.0 * E * E + 2.0 * E) * c3)
    gamma_term_b = (2.0 / mu_t) * math.sqrt(
        2.0 * E * (2.0 * E + 1.0) * (12.0 * sig2 + 18.0 * L2 * one_eps)
    )
    if not math.isclose(gamma_term_a, gamma_term_b, rel_tol=1e-12):
        raise AssertionError(
            f"gamma term self-test failed: {gamma_term_a!r} != {gamma_term_b!r}"
        )

    gamma_full = max(2.0 / (mu_t * eta_hat0), float(E), gamma_term_a)
    partial_poly = 4.0 * E * E + 10.0 * E + 6.0
    gamma_scheme1 = max(
        2.0 / (mu_t * eta_tilde0), float(E), (2.0 / mu_t) * math.sqrt(partial_poly * c3)
    )
    gamma_scheme2 = max(
        2.0 / (mu_t * eta_tilde0), float(E), (2.0 / mu_t) * math.sqrt(partial_poly * c5)
    )

    ups = lambda b, g: max(4.0 * b / mu_t**2, g * pc.d0)

    c7 = c8 = c9 = None
    if pc.grad_bound is not None:
        G2 = pc.grad_bound**2
        c7 = 4.0 * (E - 1.0) * G2
        c8 = 2.0 * sig2 + (4.0 / K) * E * E * G2
        c9 = 2.0 * sig2 + (4.0 * (N - K) / (K * (N - 1.0)) if N > 1 else 0.0) * E * E * G2

    return ConstantsBundle(
        pc=pc,
        E=E,
        K=K,
        N=N,
        mu_tilde=mu_t,
        c1=c1,
        c2=c2,
        c3=c3,
        c4=c4,
        c5=c5,
        c6=c6,
        eta_hat0=eta_hat0,
        eta_tilde0=eta_tilde0,
        b_full=b_full,
        b_scheme1=b_scheme1,
        b_scheme2=b_scheme2,
        b_scheme2_alt=b_scheme2_alt,
        gamma_full=gamma_full,
        gamma_scheme1=gamma_scheme1,
        gamma_scheme2=gamma_scheme2,
        upsilon_full=ups(b_full, gamma_full),
        upsilon_scheme1=ups(b_scheme1, gamma_scheme1),
        upsilon_scheme2=ups(b_scheme2, gamma_scheme2),
        c7=c7,
        c8=c8,
        c9=c9,
    )


# ---------------------------------------------------------------------------
# Step-size schedules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScheduleSpec:
    """Step-size rule: diminishing beta/(t+gamma) or a constant eta."""

    kind: str  # "diminishing" | "constant"
    beta: float = 0.0
    gamma: float = 0.0
    eta: float = 0.0
    agg_every: int = 1  # aggregation period E the schedule is meant for

    def __post_init__(self):
        if self.kind not in ("diminishing", "constant"):
            raise InputError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "diminishing" and (self.beta <= 0 or self.gamma <= 0):
            raise InputError("diminishing schedule needs beta > 0 and gamma > 0")
        if self.kind == "constant" and self.eta <= 0:
            raise InputError("constant schedule needs eta > 0")

    def at(self, t: int) -> float:
        if self.kind == "constant":
            return self.eta
        return self.beta / (t + self.gamma)


def step_size(schedule: ScheduleSpec, t: int) -> float:
    if t < 0:
        raise InputError("step index must be >= 0")
    return schedule.at(t)


def theorem_schedule(cb: ConstantsBundle, mode: str) -> ScheduleSpec:
    """The guaranteed schedule 2/(mu_tilde (t + gamma_mode)) for a mode."""
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}")
    return ScheduleSpec(
        kind="diminishing", beta=cb.beta(), gamma=cb.gamma(mode), agg_every=cb.E
    )


def practical_schedule(cb: ConstantsBundle, mode: str) -> ScheduleSpec:
    """Guaranteed-form schedule without the starting-step cap.

    Keeps beta = 2/mu_tilde and gamma = max{E, window term}, which preserves
    the monotonicity, period-doubling, and window side conditions, but drops
    the eta_0 <= eta0_cap requirement.  The cap term makes gamma
    astronomically large whenever E > 1 (the caps shrink like 1/(E^2 log E)
    times a product of variance constants), freezing desk-scale runs;
    dropping it gives schedules that actually move while staying inside the
    remaining side conditions.  Runs on this schedule are not bound-checked.
    """
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}")
    mu_t = cb.mu_tilde
    E = cb.E
    if mode == "full":
        window = (2.0 / mu_t) * math.sqrt((4.0 * E * E + 2.0 * E) * cb.c3)
    elif mode == "scheme1":
        window = (2.0 / mu_t) * math.sqrt((4.0 * E * E + 10.0 * E + 6.0) * cb.c3)
    else:
        window = (2.0 / mu_t) * math.sqrt((4.0 * E * E + 10.0 * E + 6.0) * cb.c5)
    return ScheduleSpec(
        kind="diminishing", beta=2.0 / mu_t, gamma=max(float(E), window), agg_every=E
    )


def validate_schedule(
    schedule: ScheduleSpec, cb: ConstantsBundle, mode: str, horizon: int = 1_000_000
) -> Dict[str, Dict]:
    """Check the four side conditions the convergence argument needs.

    (a) eta_t non-increasing; (b) eta_t <= 2 eta_{t+E}; (c) the window
    condition eta_t^2 <= 1/(2 c3 s (1+2s)) where s counts steps since the
    last aggregation; (d) eta_0 below the mode's starting cap.  Conditions
    (a)-(c) only need checking on one aggregation period: the window count
    is periodic and the schedule is non-increasing, so the first period is
    the worst.  A coarse numeric sweep up to the horizon guards the
    algebra.
    """
    if mode not in MODES:
        raise InputError(f"mode must be one of {MODES}")
    E = cb.E
    report: Dict[str, Dict] = {}

    if schedule.kind == "constant":
        non_increasing, detail_a = True, "constant schedule"
    else:
        non_increasing = schedule.beta > 0 and schedule.gamma > 0
        detail_a = f"beta={schedule.beta:.6g}, gamma={schedule.gamma:.6g}"
    report["non_increasing"] = {"holds": non_increasing, "detail": detail_a}

    if schedule.kind == "constant":
        doubling, detail_b = True, "constant schedule"
    else:
        # beta/(t+gamma) <= 2 beta/(t+E+gamma) for all t iff gamma >= E
        doubling = schedule.gamma >= E
        detail_b = f"gamma={schedule.gamma:.6g} vs E={E}"
    spot = [t for t in (0, 1, E, 7 * E, horizon - E) if 0 <= t <= horizon - E]
    doubling = doubling and all(schedule.at(t) <= 2.0 * schedule.at(t + E) + 1e-18 for t in spot)
    report["period_doubling"] = {"holds": doubling, "detail": detail_b}

    window_ok = True
    worst = ""
    for s in range(1, E + 1):
        eta = schedule.at(s - 1)  # t = s-1 sits s steps past the period start
        cap_sq = 1.0 / (2.0 * cb.c3 * s * (1.0 + 2.0 * s))
        if eta * eta > cap_sq:
            window_ok = False
            worst = f"s={s}: eta^2={eta * eta:.3e} > {cap_sq:.3e}"
            break
    report["window_condition"] = {"holds": window_ok, "detail": worst or "first period ok"}

    cap = cb.eta0_cap(mode)
    eta0 = schedule.at(0)
    report["eta0_cap"] = {
        "holds": eta0 <= cap,
        "detail": f"eta0={eta0:.6g} vs cap={cap:.6g} ({mode})",
    }
    report["all"] = {"holds": all(report[k]["holds"] for k in
                                  ("non_increasing", "period_doubling", "window_condition", "eta0_cap")),
                     "detail": ""}
    return report


def theoretical_bound(cb: ConstantsBundle, mode: str, t: int) -> float:
    """Guaranteed ceiling on E||theta_bar_t - theta_ps||^2 at step t."""
    if t < 0:
        raise InputError("step index must be >= 0")
    return cb.upsilon(mode) / (cb.gamma(mode) + t)


@dataclass(frozen=True)
class SumInequalityResult:
    lhs: float
    rhs: float
    holds: bool
    precondition_ok: bool
    detail: str = ""


def check_stepsize_sum_inequality(
    schedule: ScheduleSpec, a: float, p: int, t: int
) -> SumInequalityResult:
    """Numerically evaluate sum_{j=1}^t eta_j^{p+1} prod_{l=j+1}^t (1 - eta_l a)
    against (2/a) eta_t^p.

    The inequality is known to hold for non-increasing steps with
    eta_1 < 2/a and the ratio condition eta_j^p / eta_{j+1}^p <=
    1 + (a/2) eta_{j+1}^p; both preconditions are checked and reported.
    """
    if a <= 0 or p not in (1, 2, 3) or t < 1:
        raise InputError("need a > 0, p in {1,2,3}, t >= 1")
    etas = np.array([schedule.at(j) for j in range(1, t + 1)])  # eta_1 .. eta_t
    pre_first = etas[0] < 2.0 / a
    ratios_ok = True
    if t > 1:
        lhs_ratio = etas[:-1] ** p / etas[1:] ** p
        ratios_ok = bool(np.all(lhs_ratio <= 1.0 + (a / 2.0) * etas[1:] ** p + 1e-15))
    factors = 1.0 - a * etas  # factor for index l = j corresponds to etas[j-1]
    # suffix[j] = prod_{l=j+1}^{t} (1 - a eta_l), built from the right
    suffix = np.ones(t)
    for j in range(t - 2, -1, -1):
        suffix[j] = suffix[j + 1] * factors[j + 1]
    lhs = float(np.sum(etas ** (p + 1) * suffix))
    rhs = (2.0 / a) * float(etas[-1] ** p)
    return SumInequalityResult(
        lhs=lhs,
        rhs=rhs,
        holds=lhs <= rhs * (1 + 1e-12),
        precondition_ok=bool(pre_first and ratios_ok),
        detail="" if pre_first else f"eta_1={etas[0]:.6g} >= 2/a={2.0 / a:.6g}",
    )


# ---------------------------------------------------------------------------
# Two-client mean-estimation example
# ---------------------------------------------------------------------------

_EX_COEFS = (0.5, -0.5)  # equal-weight clients whose means move as +/- theta/2


def two_client_example(theta: float) -> Dict[str, float]:
    """Closed-form gradient diagnostics for the two-client setup.

    Client i draws Z ~ N(a_i theta, sigma^2) with a = (1/2, -1/2) and equal
    weights, so the deployed risk of client i is f_i(theta, theta) =
    (1 - a_i)^2 theta^2 / 2 + sigma^2 / 2.  The reported g_i = (1 - a_i)^2
    theta / 2 are the per-theta growth rates of those parabolas (1/8, 9/8
    and the weighted mean 5/8, each times theta); the stable point is 0.
    The heterogeneity envelope ||grad f - grad f_i||^2 <= (1/4)(1 + theta^2)
    holds with margin 1/4 at every theta: the gradient gap is exactly
    |theta| / 2 for both clients.
    """
    g1 = (1.0 - _EX_COEFS[0]) ** 2 * theta / 2.0
    g2 = (1.0 - _EX_COEFS[1]) ** 2 * theta / 2.0
    g = 0.5 * (g1 + g2)
    envelope = 0.25 * (1.0 + theta * theta)
    gap_sq = (theta / 2.0) ** 2  # |grad f - grad f_i| = |theta|/2 for i = 1, 2
    return {
        "g1": g1,
        "g2": g2,
        "g": g,
        "theta_ps": 0.0,
        "varsigma_ok": bool(gap_sq <= envelope),
    }


def two_client_mc_gradients(
    theta: float, n_samples: int, rng: np.random.Generator, noise_std: float = 1.0
) -> Dict[str, Dict[str, float]]:
    """Monte Carlo estimates of the two-client gradient diagnostics.

    For client i the pathwise derivative sample is (1 - a_i)(theta - Z)/2
    with Z ~ N(a_i theta, sigma^2); its mean is exactly g_i.  Returns the
    estimate and standard error per quantity.
    """
    out: Dict[str, Dict[str, float]] = {}
    per_client = []
    for name, a in zip(("g1", "g2"), _EX_COEFS):
        z = a * theta + noise_std * rng.normal(size=n_samples)
        vals = (1.0 - a) * (theta - z) / 2.0
        est = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(n_samples))
        out[name] = {"estimate": est, "se": se}
        per_client.append(vals)
    mix = 0.5 * (per_client[0] + per_client[1])
    out["g"] = {
        "estimate": float(mix.mean()),
        "se": float(mix.std(ddof=1) / math.sqrt(n_samples)),
    }
    return out


# ---------------------------------------------------------------------------
# Objective rescaling and constant estimation helpers
# ---------------------------------------------------------------------------


def rescale_constants(pc: ProblemConstants, p: np.ndarray, N: int) -> ProblemConstants:
    """Primed constants for the rescaled objectives g_i = p_i N f_i.

    Rescaling lets the uniform-sampling scheme run with unbalanced client
    weights; it costs L' = q_max L, mu' = q_min mu, sigma' = sqrt(q_max)
    sigma, varsigma' = sqrt(q_max) varsigma with q_max = N max p_i and
    q_min = N min p_i.
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0):
        raise InputError("all weights must be > 0")
    q_max = N * float(p.max())
    q_min = N * float(p.min())
    return replace(
        pc,
        mu=q_min * pc.mu,
        smoothness=q_max * pc.smoothness,
        sigma=math.sqrt(q_max) * pc.sigma,
        varsigma=math.sqrt(q_max) * pc.varsigma,
    )


def estimate_varsigma(
    pop: Population,
    theta_ps: np.ndarray,
    n_grid: int = 1000,
    span_factor: float = 10.0,
) -> float:
    """Smallest heterogeneity scale consistent with the affine population.

    Maximizes ||grad f - grad f_i||^2 / (1 + ||theta - theta_ps||^2) on a
    grid around theta_ps.  For affine-Gaussian + quadratic the deviation
    is (a_i - a_bar) theta + (m_i - m_bar), so a wide enough grid captures
    the supremum.  Homogeneous populations give exactly zero.
    """
    if not pop.all_affine:
        raise InputError("varsigma estimation implemented for affine-Gaussian populations")
    coefs = np.array([s.shift_coef for s in pop.shifts])
    means = np.stack([s.base_mean for s in pop.shifts])
    a_bar = pop.coef_bar
    m_bar = pop.mean_bar
    theta_ps = np.atleast_1d(np.asarray(theta_ps, dtype=np.float64))
    spread = max(
        1.0,
        float(np.sqrt(np.dot(pop.weights, np.sum((means - m_bar) ** 2, axis=1)))),
        float(np.sqrt(np.dot(pop.weights, (coefs - a_bar) ** 2))) * (1.0 + float(np.linalg.norm(theta_ps))),
    )
    offsets = np.linspace(-span_factor * spread, span_factor * spread, n_grid)
    worst = 0.0
    for off in offsets:
        theta = theta_ps + off
        denom = 1.0 + float(np.sum((theta - theta_ps) ** 2))
        dev = (coefs[:, None] - a_bar) * theta[None, :] + (means - m_bar)
        ratio = float(np.max(np.sum(dev * dev, axis=1))) / denom
        worst = max(worst, ratio)
    return math.sqrt(worst)


def problem_constants_from(
    pop: Population,
    model: LossModel,
    theta_ps: np.ndarray,
    theta0: np.ndarray,
    delta: Optional[float] = None,
    sigma: Optional[float] = None,
    varsigma: Optional[float] = None,
    grad_bound: Optional[float] = None,
) -> ProblemConstants:
    """Assemble problem constants from a population, model, and start point.

    sigma defaults to the gradient-noise level implied by the shift maps
    (for quadratic mean estimation the per-client gradient noise is the
    sampling noise itself, so sigma = sqrt(dim) * noise_std); varsigma is
    estimated by grid maximization when not supplied; d0 is measured from
    the actual initialization.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=np.float64))
    theta_ps = np.atleast_1d(np.asarray(theta_ps, dtype=np.float64))
    if sigma is None:
        if pop.all_affine and isinstance(model, QuadraticMeanLoss):
            dim = pop.dim
            sigma = max(
                math.sqrt(dim) * s.noise_std
                for s in pop.shifts
                if isinstance(s, AffineGaussianShift)
            )
        else:
            raise InputError("sigma must be supplied for non-affine populations")
    if varsigma is None:
        varsigma = estimate_varsigma(pop, theta_ps) if pop.all_affine else 0.0
    if delta is None:
        delta = default_delta(model.mu, model.smoothness, pop.eps_bar)
    d0 = float(np.sum((theta0 - theta_ps) ** 2))
    return ProblemConstants(
        mu=model.mu,
        smoothness=model.smoothness,
        sigma=float(sigma),
        varsigma=float(varsigma),
        eps_bar=pop.eps_bar,
        eps_max=pop.eps_max,
        delta=float(delta),
        d0=d0,
        lipschitz_z=model.lipschitz_z,
        grad_bound=grad_bound,
    )
