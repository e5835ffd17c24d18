"""Stable and optimal solutions of the shifted weighted-risk problem.

The stable solution theta_ps is the fixed point of the repeated risk
minimization map Phi(theta) = argmin_{theta'} f(theta'; theta), obtained
by fixed-point iteration; Phi is a contraction whenever
eps_bar * L / mu < 1.  The optimal solution theta_po minimizes the coupled
risk sum_i p_i E_{Z ~ D_i(theta)} loss(theta; Z) and generally differs
from theta_ps; their distance is bounded by 2 * L_z * eps_bar / mu when
the loss is L_z-Lipschitz in the data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import (
    ConvergenceError,
    InputError,
    NonContractionError,
    UnsupportedModelError,
)
from .model import (
    AffineGaussianShift,
    LossModel,
    Population,
    QuadraticMeanLoss,
    StrategicLinearShift,
    Theta,
    as_theta,
    decoupled_risk,
)

__all__ = [
    "PSResult",
    "POResult",
    "phi",
    "solve_ps",
    "divergence_demo",
    "performative_risk",
    "solve_po",
    "ps_po_gap_check",
]


@dataclass(frozen=True)
class PSResult:
    theta_ps: Theta
    iterations: int
    residual: float  # ||Phi(theta) - theta|| at acceptance
    contraction_estimate: float  # max observed step-ratio of the iteration


@dataclass(frozen=True)
class POResult:
    theta_po: Theta
    risk_at_po: float
    method: str  # "closed-form" or "grid-refine"
    on_boundary: bool = False


# ---------------------------------------------------------------------------
# Decoupled objective pieces (exact expectations only)
# ---------------------------------------------------------------------------


def _deployed_pieces(pop: Population, model: LossModel, theta_tilde: Theta):
    """Freeze the per-client data of f(.; theta_tilde) for repeated evaluation.

    Only distribution families with exact expectations are accepted; the
    inner minimization of phi() must be deterministic for the fixed-point
    tolerance to be meaningful.
    """
    pieces = []
    for p, shift in zip(pop.weights, pop.shifts):
        if isinstance(shift, AffineGaussianShift) and isinstance(model, QuadraticMeanLoss):
            pieces.append(("quad", p, shift.mean(theta_tilde), shift.dim * shift.noise_std**2))
        elif isinstance(shift, StrategicLinearShift):
            feats = shift.shifted_features(theta_tilde)
            if model.kind == "logistic":
                pieces.append(("logit", p, feats, shift.labels))
            else:
                pieces.append(("quad-emp", p, feats, None))
        else:
            raise UnsupportedModelError(
                f"no exact decoupled objective for {shift.kind} + {model.kind}"
            )
    return pieces


def _deployed_value_grad(pieces, model: LossModel, theta_prime: Theta) -> Tuple[float, np.ndarray]:
    value = 0.0
    grad = np.zeros_like(theta_prime)
    for kind, p, a, b in pieces:
        if kind == "quad":
            r = theta_prime - a
            value += p * (0.5 * float(r @ r) + 0.5 * b)
            grad += p * r
        elif kind == "logit":
            n = a.shape[0]
            margins = b * (a @ theta_prime)
            value += p * (
                float(np.mean(np.logaddexp(0.0, -margins)))
                + 0.5 * model.lam * float(theta_prime @ theta_prime)
            )
            sig = 1.0 / (1.0 + np.exp(np.clip(margins, -500, 500)))
            grad += p * (-(sig * b) @ a / n + model.lam * theta_prime)
        else:
            r = theta_prime[None, :] - a
            value += p * 0.5 * float(np.mean(np.sum(r * r, axis=1)))
            grad += p * np.mean(r, axis=0)
    return value, grad


def _deployed_hessian(pieces, model: LossModel, theta_prime: Theta) -> np.ndarray:
    dim = theta_prime.shape[0]
    hess = np.zeros((dim, dim))
    for kind, p, a, b in pieces:
        if kind in ("quad", "quad-emp"):
            hess += p * np.eye(dim)
        else:
            n = a.shape[0]
            margins = b * (a @ theta_prime)
            sig = 1.0 / (1.0 + np.exp(np.clip(margins, -500, 500)))
            w = sig * (1.0 - sig)
            hess += p * ((a * w[:, None]).T @ a / n + model.lam * np.eye(dim))
    return hess


def _decoupled_value_grad(
    pop: Population, model: LossModel, theta_prime: Theta, theta_tilde: Theta
) -> Tuple[float, np.ndarray]:
    return _deployed_value_grad(_deployed_pieces(pop, model, theta_tilde), model, theta_prime)


def phi(pop: Population, model: LossModel, theta: Theta, tol: float = 1e-8,
        max_inner: int = 1_000) -> Theta:
    """One application of the risk-minimization map Phi.

    Affine-Gaussian + quadratic has the exact minimizer coef_bar * theta +
    mean_bar.  Other exact-expectation families are minimized with damped
    Newton steps on the exact (low-dimensional) Hessian, backtracking on
    the deployed-risk value, and a gradient-norm stop at tol.  Plain
    gradient descent would need ~L_actual/mu iterations here, which with a
    small ridge weight is tens of thousands per Phi evaluation.
    """
    theta = as_theta(theta)
    if model.mu <= 0:
        raise InputError("phi requires a strongly convex objective (mu > 0)")
    if pop.all_affine and isinstance(model, QuadraticMeanLoss):
        return pop.coef_bar * theta + pop.mean_bar

    pieces = _deployed_pieces(pop, model, theta)
    x = np.array(theta, copy=True)
    value, grad = _deployed_value_grad(pieces, model, x)
    for _ in range(max_inner):
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            return x
        hess = _deployed_hessian(pieces, model, x)
        direction = np.linalg.solve(hess + 1e-12 * np.eye(len(x)), grad)
        # backtracking on the Newton direction; decrease is tested up to
        # value-rounding noise so float-flat steps near the optimum cannot
        # livelock (the damped Newton map still contracts the gradient)
        t = 1.0
        noise = 1e-14 * (1.0 + abs(value))
        for _ in range(60):
            cand = x - t * direction
            cand_val, cand_grad = _deployed_value_grad(pieces, model, cand)
            if cand_val <= value + noise:
                break
            t *= 0.5
        if np.array_equal(cand, x):
            raise ConvergenceError(
                f"inner minimizer stalled at gradient norm {gnorm:.3e} (tol {tol})",
                last_iterate=x,
            )
        x, value, grad = cand, cand_val, cand_grad
    raise ConvergenceError(
        f"inner minimizer exceeded {max_inner} iterations (grad norm {gnorm:.3e})",
        last_iterate=x,
        iterations=max_inner,
    )


def solve_ps(
    pop: Population,
    model: LossModel,
    theta0: Theta,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    require_contraction: bool = True,
    inner_tol: float = 1e-8,
) -> PSResult:
    """Fixed-point iteration theta <- Phi(theta) down to residual <= tol.

    The sufficient contraction condition eps_bar * L / mu < 1 is checked
    up front.  require_contraction=False skips that check and instead
    aborts if the residuals grow persistently; this is how populations
    whose formal constants are too conservative (the strategic
    classification setup) still get a stable point when the iteration
    empirically contracts.
    """
    theta = as_theta(theta0)
    ratio = pop.eps_bar * model.smoothness / model.mu
    if require_contraction and ratio >= 1.0:
        raise NonContractionError(
            f"eps_bar * L / mu = {ratio:.6g} >= 1: fixed-point iteration not guaranteed to converge",
            ratio=ratio,
        )
    contraction_estimate = 0.0
    prev_step_norm: Optional[float] = None
    growth_streak = 0
    for k in range(1, max_iter + 1):
        nxt = phi(pop, model, theta, tol=inner_tol)
        residual = float(np.linalg.norm(nxt - theta))
        if prev_step_norm is not None and prev_step_norm > 0:
            contraction_estimate = max(contraction_estimate, residual / prev_step_norm)
            growth_streak = growth_streak + 1 if residual > prev_step_norm else 0
            if not require_contraction and growth_streak >= 25:
                raise NonContractionError(
                    "fixed-point residuals grew for 25 consecutive iterations",
                    ratio=contraction_estimate,
                    last_iterate=nxt,
                )
        if residual <= tol:
            return PSResult(
                theta_ps=nxt,
                iterations=k,
                residual=residual,
                contraction_estimate=contraction_estimate,
            )
        prev_step_norm = residual
        theta = nxt
    raise ConvergenceError(
        f"fixed-point iteration did not reach tol={tol} in {max_iter} iterations",
        last_iterate=theta,
        iterations=max_iter,
    )


def divergence_demo(pop: Population, model: LossModel, theta0: Theta, steps: int) -> np.ndarray:
    """Magnitudes |Phi^t(theta0)| for t = 0..steps in the non-contractive regime.

    Requires eps_bar >= mu/L and (for affine populations) a nonzero average
    base mean, the regime where repeated minimization provably escapes to
    infinity along gamma_bar.
    """
    theta = as_theta(theta0)
    if pop.eps_bar < model.mu / model.smoothness:
        raise InputError(
            f"divergence regime needs eps_bar >= mu/L, got {pop.eps_bar:.6g} < "
            f"{model.mu / model.smoothness:.6g}"
        )
    if pop.all_affine and isinstance(model, QuadraticMeanLoss):
        if float(np.linalg.norm(pop.mean_bar)) == 0.0:
            raise InputError("divergence demo needs a nonzero average base mean")
        a, m_bar = pop.coef_bar, pop.mean_bar
        if theta.shape[0] == 1:
            x = float(theta[0])
            m = float(m_bar[0])
            mags = [abs(x)]
            for _ in range(steps):
                x = a * x + m
                mags.append(abs(x))
            return np.asarray(mags)
        mags = [float(np.linalg.norm(theta))]
        x = theta
        for _ in range(steps):
            x = a * x + m_bar
            mags.append(float(np.linalg.norm(x)))
        return np.asarray(mags)
    mags = [float(np.linalg.norm(theta))]
    for _ in range(steps):
        theta = phi(pop, model, theta)
        mags.append(float(np.linalg.norm(theta)))
    return np.asarray(mags)


def performative_risk(
    pop: Population,
    model: LossModel,
    theta: Theta,
    n_mc: int = 10_000,
    rng: Optional[np.random.Generator] = None,
    force_mc: bool = False,
) -> float:
    """Coupled risk sum_i p_i E_{Z ~ D_i(theta)} loss(theta; Z)."""
    theta = as_theta(theta)
    return float(
        sum(
            p * decoupled_risk(model, shift, theta, theta, n_mc=n_mc, rng=rng, force_mc=force_mc)
            for p, shift in zip(pop.weights, pop.shifts)
        )
    )


def _golden_section(f, lo: float, hi: float, tol: float) -> float:
    """Minimize a unimodal scalar function on [lo, hi]."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def solve_po(
    pop: Population,
    model: LossModel,
    search_box: Optional[np.ndarray] = None,
    tol: float = 1e-6,
    n_grid: int = 33,
    n_sweeps: int = 3,
    n_mc: int = 10_000,
    rng: Optional[np.random.Generator] = None,
) -> POResult:
    """Minimize the coupled risk.

    Affine-Gaussian + quadratic has the per-coordinate closed form
    sum_i p_i (1 - a_i) m_i / sum_i p_i (1 - a_i)^2.  Everything else runs
    a coarse grid over the search box followed by golden-section
    refinement, coordinate by coordinate, for a few sweeps.  When Monte
    Carlo evaluation would be needed, the rng seeds a common pool so the
    objective is deterministic across theta (here all supported families
    evaluate exactly, so the pool is only a fallback).
    """
    if pop.all_affine and isinstance(model, QuadraticMeanLoss):
        coefs = np.array([1.0 - s.shift_coef for s in pop.shifts])
        denom = float(np.dot(pop.weights, coefs**2))
        if denom <= 0:
            raise InputError("degenerate coupled risk: zero curvature")
        num = np.einsum("i,i,ij->j", pop.weights, coefs, np.stack([s.base_mean for s in pop.shifts]))
        theta_po = num / denom
        return POResult(
            theta_po=theta_po,
            risk_at_po=performative_risk(pop, model, theta_po),
            method="closed-form",
        )

    if search_box is None:
        raise InputError("search_box is required when no closed form is available")
    box = np.asarray(search_box, dtype=np.float64)
    if box.ndim != 2 or box.shape[1] != 2 or not np.all(np.isfinite(box)):
        raise InputError("search_box must be a finite (dim, 2) array of [lo, hi] bounds")
    dim = box.shape[0]

    def objective(theta_vec: np.ndarray) -> float:
        return performative_risk(pop, model, theta_vec, n_mc=n_mc, rng=rng)

    # coarse grid pass, one axis at a time from the box center
    x = box.mean(axis=1)
    on_boundary = False
    for _sweep in range(n_sweeps):
        for j in range(dim):
            lo, hi = box[j]
            grid = np.linspace(lo, hi, n_grid)
            vals = []
            for g in grid:
                x[j] = g
                vals.append(objective(x))
            best = int(np.argmin(vals))
            if best in (0, n_grid - 1):
                on_boundary = True
            g_lo = grid[max(best - 1, 0)]
            g_hi = grid[min(best + 1, n_grid - 1)]

            def f1(v, j=j):
                x[j] = v
                return objective(x)

            x[j] = _golden_section(f1, g_lo, g_hi, tol)
    return POResult(
        theta_po=np.array(x),
        risk_at_po=objective(x),
        method="grid-refine",
        on_boundary=on_boundary,
    )


def ps_po_gap_check(
    pop: Population, model: LossModel, ps: Theta, po: Theta
) -> Tuple[float, float, bool]:
    """Distance between the two solutions vs. the 2 L_z eps_bar / mu bound."""
    if model.lipschitz_z is None:
        raise UnsupportedModelError(
            "gap bound needs a loss Lipschitz in the data; declare a truncation "
            "radius (quadratic) or parameter-norm bound (logistic)"
        )
    gap = float(np.linalg.norm(as_theta(ps) - as_theta(po)))
    bound = 2.0 * model.lipschitz_z * pop.eps_bar / model.mu
    return gap, bound, gap <= bound * (1 + 1e-12)
