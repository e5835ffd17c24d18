"""Losses, parameter-dependent data distributions, and gradient oracles.

Two experiment families are supported:

* quadratic mean estimation, where client i draws Z ~ N(m_i + a_i*theta,
  sigma^2 I) and minimizes (theta - Z)^2 / 2; and
* strategic classification, where a ridge-regularized logistic model is
  trained on records whose manipulable features respond linearly to the
  deployed parameters.

A distribution map D_i(theta) with 1-Wasserstein sensitivity eps_i means
W1(D_i(theta), D_i(theta')) <= eps_i * ||theta - theta'||.  For the affine
Gaussian family the sensitivity is exactly |a_i| because the W1 distance
between equal-variance Gaussians is the distance between their means.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InputError, UnsupportedModelError

__all__ = [
    "Theta",
    "Sample",
    "AffineGaussianShift",
    "StrategicLinearShift",
    "strategic_shift",
    "QuadraticMeanLoss",
    "LogisticLoss",
    "Population",
    "decoupled_risk",
]

Theta = np.ndarray


def as_theta(values: Union[float, Sequence[float], np.ndarray]) -> Theta:
    """Coerce to a finite 1-D float64 parameter vector."""
    theta = np.atleast_1d(np.asarray(values, dtype=np.float64))
    if theta.ndim != 1:
        raise InputError(f"parameters must be a vector, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise InputError("parameters contain non-finite entries")
    return theta


@dataclass(frozen=True)
class Sample:
    """One data point: a feature vector and an optional +/-1 label.

    The label is absent for mean estimation, where the features ARE the
    quantity being estimated.
    """

    features: np.ndarray
    label: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "features", np.atleast_1d(np.asarray(self.features, dtype=np.float64)))


# ---------------------------------------------------------------------------
# Distribution shift maps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AffineGaussianShift:
    """D(theta) = N(base_mean + shift_coef * theta, noise_std^2 I).

    shift_coef may be negative (the mean can move against theta); the
    Wasserstein sensitivity is its absolute value.
    """

    base_mean: np.ndarray
    shift_coef: float
    noise_std: float

    kind = "affine-gaussian"

    def __post_init__(self):
        object.__setattr__(self, "base_mean", np.atleast_1d(np.asarray(self.base_mean, dtype=np.float64)))
        if self.noise_std < 0:
            raise InputError("noise_std must be >= 0")

    @property
    def sensitivity(self) -> float:
        return abs(self.shift_coef)

    @property
    def dim(self) -> int:
        return self.base_mean.shape[0]

    def mean(self, theta: Theta) -> np.ndarray:
        return self.base_mean + self.shift_coef * theta

    def sample(self, theta: Theta, rng: np.random.Generator) -> Sample:
        theta = as_theta(theta)
        if theta.shape[0] != self.dim:
            raise InputError(f"theta dim {theta.shape[0]} != shift dim {self.dim}")
        z = self.mean(theta) + self.noise_std * rng.normal(size=self.dim)
        return Sample(features=z)


def strategic_shift(x: Sample, theta: Theta, eps: float, strategic_idx: Sequence[int]) -> Sample:
    """Feature manipulation: x_j -> x_j - eps * theta_j for j in the strategic set.

    Labels are left untouched.  The shift is linear in theta, so the map
    theta -> shifted distribution has Wasserstein sensitivity exactly
    eps * (restricted-norm factor) <= eps.
    """
    theta = as_theta(theta)
    feats = np.array(x.features, dtype=np.float64, copy=True)
    idx = np.asarray(list(strategic_idx), dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= feats.shape[0] or idx.max() >= theta.shape[0]):
        raise InputError(f"strategic index out of range for dimension {feats.shape[0]}")
    feats[idx] = feats[idx] - eps * theta[idx]
    return Sample(features=feats, label=x.label)


@dataclass(frozen=True)
class StrategicLinearShift:
    """Empirical distribution of base records under linear feature manipulation.

    D(theta) is uniform over the base records with every strategic feature
    j replaced by x_j - sensitivity * theta_j.  Expectations under D(theta)
    are therefore exact finite averages; no Monte Carlo is needed.
    """

    features: np.ndarray  # (n_records, M)
    labels: np.ndarray  # (n_records,), values in {-1, +1}
    sensitivity: float
    strategic_idx: Tuple[int, ...]

    kind = "strategic-linear"

    def __post_init__(self):
        object.__setattr__(self, "features", np.asarray(self.features, dtype=np.float64))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.float64))
        object.__setattr__(self, "strategic_idx", tuple(int(j) for j in self.strategic_idx))
        if self.sensitivity < 0:
            raise InputError("sensitivity must be >= 0")
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise InputError("features must be (n_records, M) aligned with labels")
        if self.strategic_idx and max(self.strategic_idx) >= self.features.shape[1]:
            raise InputError("strategic index out of range")

    @property
    def n_records(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def shifted_features(self, theta: Theta) -> np.ndarray:
        """All base records after manipulation against theta."""
        theta = as_theta(theta)
        out = np.array(self.features, copy=True)
        idx = np.asarray(self.strategic_idx, dtype=np.intp)
        if idx.size:
            out[:, idx] = out[:, idx] - self.sensitivity * theta[idx]
        return out

    def sample(self, theta: Theta, rng: np.random.Generator) -> Sample:
        i = int(rng.integers(self.n_records))
        base = Sample(features=self.features[i], label=float(self.labels[i]))
        return strategic_shift(base, theta, self.sensitivity, self.strategic_idx)


ShiftMap = Union[AffineGaussianShift, StrategicLinearShift]


# ---------------------------------------------------------------------------
# Loss models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticMeanLoss:
    """Squared-error location loss ||theta - z||^2 / 2.

    Strong convexity and smoothness constants are both 1.  The loss is
    Lipschitz in z only on a bounded sample domain, so ``lipschitz_z``
    stays None unless a truncation radius (a bound on ||theta - z|| over
    the operating region) is declared.
    """

    truncation_radius: Optional[float] = None

    kind = "quadratic-mean"
    mu: float = field(default=1.0, init=False)
    smoothness: float = field(default=1.0, init=False)

    @property
    def lipschitz_z(self) -> Optional[float]:
        return self.truncation_radius

    def loss(self, theta: Theta, z: Sample) -> float:
        theta = as_theta(theta)
        if theta.shape != z.features.shape:
            raise InputError(f"theta shape {theta.shape} != sample shape {z.features.shape}")
        r = theta - z.features
        return 0.5 * float(r @ r)

    def grad(self, theta: Theta, z: Sample) -> np.ndarray:
        theta = as_theta(theta)
        if theta.shape != z.features.shape:
            raise InputError(f"theta shape {theta.shape} != sample shape {z.features.shape}")
        return theta - z.features


@dataclass(frozen=True)
class LogisticLoss:
    """Ridge-regularized logistic loss log(1 + exp(-y theta^T x)) + lam/2 ||theta||^2.

    Labels live in {-1, +1}.  The declared feature-norm bound R and
    parameter-norm bound R_theta fix the analytic constants:

    * strong convexity mu = lam (the data term is convex but its curvature
      can vanish, so only the ridge is counted);
    * joint smoothness L = R^2/4 + lam + (1 + R*R_theta/4): the first two
      terms bound the theta-Hessian sigma'(.) x x^T + lam I, the last
      bounds the theta-z cross derivative ||sigma(.) I + sigma'(.) x
      theta^T|| over the declared region;
    * Lipschitz constant in z equals R_theta, since the feature gradient
      is sigma(.) * theta.
    """

    lam: float = 1e-3
    feature_bound: float = 1.0
    theta_bound: Optional[float] = None

    kind = "logistic"

    def __post_init__(self):
        if self.lam < 0:
            raise InputError("ridge weight must be >= 0")
        if self.feature_bound <= 0:
            raise InputError("feature_bound must be > 0")

    @property
    def mu(self) -> float:
        return self.lam

    @property
    def smoothness(self) -> float:
        cross = 1.0 + (0.25 * self.feature_bound * self.theta_bound if self.theta_bound else 0.0)
        return 0.25 * self.feature_bound**2 + self.lam + cross

    @property
    def lipschitz_z(self) -> Optional[float]:
        return self.theta_bound

    def loss(self, theta: Theta, z: Sample) -> float:
        theta = as_theta(theta)
        if z.label is None:
            raise InputError("logistic loss needs a labeled sample")
        if theta.shape != z.features.shape:
            raise InputError(f"theta shape {theta.shape} != sample shape {z.features.shape}")
        margin = z.label * float(theta @ z.features)
        # log(1 + exp(-m)) evaluated stably for both signs of m
        val = np.logaddexp(0.0, -margin)
        return float(val) + 0.5 * self.lam * float(theta @ theta)

    def grad(self, theta: Theta, z: Sample) -> np.ndarray:
        theta = as_theta(theta)
        if z.label is None:
            raise InputError("logistic loss needs a labeled sample")
        if theta.shape != z.features.shape:
            raise InputError(f"theta shape {theta.shape} != sample shape {z.features.shape}")
        margin = z.label * float(theta @ z.features)
        sig = 1.0 / (1.0 + np.exp(margin)) if margin > -30 else 1.0
        return -sig * z.label * z.features + self.lam * theta


LossModel = Union[QuadraticMeanLoss, LogisticLoss]


def loss(model: LossModel, theta: Theta, z: Sample) -> float:
    return model.loss(theta, z)


def grad_loss(model: LossModel, theta: Theta, z: Sample) -> np.ndarray:
    return model.grad(theta, z)


# ---------------------------------------------------------------------------
# Client population
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Population:
    """N clients with aggregation weights p_i and per-client shift maps.

    Weights must be strictly positive and sum to one (within 1e-12); the
    weighted and maximal sensitivities are derived once at construction.
    """

    weights: np.ndarray
    shifts: Tuple[ShiftMap, ...]

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=np.float64))
        object.__setattr__(self, "shifts", tuple(self.shifts))
        if self.weights.ndim != 1 or self.weights.shape[0] != len(self.shifts):
            raise InputError("one weight per client required")
        if np.any(self.weights <= 0):
            raise InputError("all client weights must be > 0")
        if abs(float(self.weights.sum()) - 1.0) > 1e-12:
            raise InputError(f"client weights must sum to 1, got {self.weights.sum()!r}")

    @property
    def n_clients(self) -> int:
        return len(self.shifts)

    @property
    def eps_bar(self) -> float:
        """Weighted average Wasserstein sensitivity."""
        return float(np.dot(self.weights, [s.sensitivity for s in self.shifts]))

    @property
    def eps_max(self) -> float:
        return max(s.sensitivity for s in self.shifts)

    @property
    def all_affine(self) -> bool:
        return all(isinstance(s, AffineGaussianShift) for s in self.shifts)

    @property
    def all_strategic(self) -> bool:
        return all(isinstance(s, StrategicLinearShift) for s in self.shifts)

    @property
    def uniform_weights(self) -> bool:
        return bool(np.allclose(self.weights, 1.0 / self.n_clients, rtol=0, atol=1e-12))

    # Affine-family aggregates used by the closed-form solvers.  The signed
    # average matters: shift coefficients may point in opposite directions
    # even though each sensitivity is their absolute value.
    @property
    def coef_bar(self) -> float:
        if not self.all_affine:
            raise UnsupportedModelError("signed shift average only defined for affine-Gaussian populations")
        return float(np.dot(self.weights, [s.shift_coef for s in self.shifts]))

    @property
    def mean_bar(self) -> np.ndarray:
        if not self.all_affine:
            raise UnsupportedModelError("base-mean average only defined for affine-Gaussian populations")
        return np.einsum("i,ij->j", self.weights, np.stack([s.base_mean for s in self.shifts]))

    @property
    def dim(self) -> int:
        return self.shifts[0].dim


def decoupled_risk(
    model: LossModel,
    shift: ShiftMap,
    theta: Theta,
    theta_tilde: Theta,
    n_mc: int = 10_000,
    rng: Optional[np.random.Generator] = None,
    force_mc: bool = False,
) -> float:
    """Expected loss of theta on the distribution deployed at theta_tilde.

    Closed forms are used wherever the expectation is available exactly:

    * affine Gaussian + quadratic: ||theta - m - a*theta_tilde||^2/2 + M sigma^2/2;
    * strategic-linear: exact average over the (finitely many) shifted records.

    Anything else falls back to a Monte Carlo average of n_mc draws; the rng
    must then be supplied so results are reproducible.  force_mc skips the
    closed forms, which is how the Monte Carlo path gets checked against
    them.
    """
    theta = as_theta(theta)
    theta_tilde = as_theta(theta_tilde)
    if force_mc:
        return _mc_risk(model, shift, theta, theta_tilde, n_mc, rng)
    if isinstance(shift, AffineGaussianShift) and isinstance(model, QuadraticMeanLoss):
        r = theta - shift.mean(theta_tilde)
        return 0.5 * float(r @ r) + 0.5 * shift.dim * shift.noise_std**2
    if isinstance(shift, StrategicLinearShift):
        feats = shift.shifted_features(theta_tilde)
        if isinstance(model, LogisticLoss):
            margins = shift.labels * (feats @ theta)
            vals = np.logaddexp(0.0, -margins)
            return float(vals.mean()) + 0.5 * model.lam * float(theta @ theta)
        r = theta[None, :] - feats
        return 0.5 * float(np.mean(np.sum(r * r, axis=1)))
    return _mc_risk(model, shift, theta, theta_tilde, n_mc, rng)


def _mc_risk(
    model: LossModel,
    shift: ShiftMap,
    theta: Theta,
    theta_tilde: Theta,
    n_mc: int,
    rng: Optional[np.random.Generator],
) -> float:
    if n_mc < 1:
        raise InputError("n_mc must be >= 1 for the Monte Carlo path")
    if rng is None:
        raise InputError("Monte Carlo path requires an explicit rng")
    if isinstance(shift, AffineGaussianShift) and isinstance(model, QuadraticMeanLoss):
        z = shift.mean(theta_tilde)[None, :] + shift.noise_std * rng.normal(size=(n_mc, shift.dim))
        r = theta[None, :] - z
        return 0.5 * float(np.mean(np.sum(r * r, axis=1)))
    total = 0.0
    for _ in range(n_mc):
        total += model.loss(theta, shift.sample(theta_tilde, rng))
    return total / n_mc
