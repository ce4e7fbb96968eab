from __future__ import annotations

import numpy as np
import pytest

from flowlab import GaussianMixture, load_mixture, tree_mixture_path


@pytest.fixture(scope="session")
def tree() -> GaussianMixture:
    return load_mixture(tree_mixture_path())


@pytest.fixture(scope="session")
def single_gaussian() -> GaussianMixture:
    """Standard-normal target: velocity has the closed form (2t-1)x/(t^2+(1-t)^2)."""
    return GaussianMixture(
        weights=np.array([1.0]),
        means=np.zeros((1, 2)),
        covs=np.eye(2)[None],
        labels=np.array([0]),
    )


@pytest.fixture(scope="session")
def two_blob() -> GaussianMixture:
    """Symmetric two-class mixture at +/- mu with equal weights."""
    mu = np.array([0.8, 0.3])
    return GaussianMixture(
        weights=np.array([0.5, 0.5]),
        means=np.stack([-mu, mu]),
        covs=np.stack([0.04 * np.eye(2), 0.04 * np.eye(2)]),
        labels=np.array([0, 1]),
    )


def single_gaussian_velocity(x: np.ndarray, t: float) -> np.ndarray:
    """Closed-form velocity of the standard-normal target."""
    s = t * t + (1.0 - t) ** 2
    return (2.0 * t - 1.0) * np.asarray(x) / s
