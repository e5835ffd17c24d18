import numpy as np
import pytest

from perfed.experiments import GaussianExperimentSpec, make_gaussian_population
from perfed.model import AffineGaussianShift, Population, QuadraticMeanLoss


def affine_pop(coefs, means, weights=None, noise_std=1.0):
    """Small affine-Gaussian population helper used across test modules."""
    coefs = np.atleast_1d(coefs).astype(float)
    means = np.atleast_1d(means).astype(float)
    n = len(coefs)
    if weights is None:
        weights = np.full(n, 1.0 / n)
    shifts = tuple(
        AffineGaussianShift(base_mean=np.array([m]), shift_coef=float(a), noise_std=noise_std)
        for a, m in zip(coefs, means)
    )
    return Population(weights=np.asarray(weights, dtype=float), shifts=shifts)


@pytest.fixture(scope="session")
def quad_model():
    return QuadraticMeanLoss()


@pytest.fixture(scope="session")
def homogeneous_pop():
    """The 25-client homogeneous mean-estimation setup (eps=0.9, m=10)."""
    return make_gaussian_population(GaussianExperimentSpec(seed=0))


@pytest.fixture(scope="session")
def two_client_pop():
    """Means shifting as +/- theta/2 around zero, equal weights."""
    return affine_pop([0.5, -0.5], [0.0, 0.0])
