"""Closed-form Gaussian-mixture ground truth for linear-interpolation flows.

For a mixture target sum_k w_k N(mu_k, Sigma_k) and a standard-normal prior,
the time-t marginal of the linear interpolation x_t = t*x1 + (1-t)*x0 is
itself a mixture with component k mapped to

    N(t*mu_k,  t^2*Sigma_k + (1-t)^2*I).

Conditioning on x_t = x is jointly Gaussian per component, which gives the
exact conditional-mean velocity

    v(x, t) = E[x1 - x0 | x_t = x]
            = sum_k r_k(x, t) * [ (mu_k + t*Sigma_k*S_k^-1*d_k) - (1-t)*S_k^-1*d_k ]

with S_k = t^2*Sigma_k + (1-t)^2*I, d_k = x - t*mu_k, and responsibilities
r_k proportional to w_k * N(x; t*mu_k, S_k).  The velocity and the marginal
score are linked by score(x, t) = (t*v(x, t) - x) / (1 - t), which holds
exactly for these formulas and is the module's master correctness check.

Class-conditional velocities restrict the mixture to one class's components.
Note that the exact unconditional (marginal) velocity is the
posterior-responsibility blend of per-class conditional velocities, not the
prior-weighted average of them; the two agree only where responsibilities
are uniform.

A deliberately degraded field is available by inflating every component
covariance by epsilon*I, and an independent kernel-weighted Monte-Carlo
estimator of the conditional mean serves as the validation oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, InsufficientOverlapError, NumericError

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

# Ridge added to S_k before inversion; keeps point-mass fixtures usable at
# small (1-t) without affecting well-conditioned components.
COV_RIDGE = 1e-12

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GaussianMixture:
    """Class-labeled mixture of full-covariance Gaussians."""

    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, d)
    covs: np.ndarray  # (K, d, d)
    labels: np.ndarray  # (K,) int

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        cov = np.asarray(self.covs, dtype=float)
        lab = np.asarray(self.labels, dtype=int)
        for name, arr in (("weights", w), ("means", mu), ("covs", cov), ("labels", lab)):
            object.__setattr__(self, name, arr)
        K = w.size
        if w.ndim != 1 or mu.ndim != 2:
            raise ValueError("weights must be (K,) and means (K, d)")
        if mu.shape != (K, self.dim) or cov.shape != (K, self.dim, self.dim) or lab.shape != (K,):
            raise ValueError("mixture arrays have inconsistent shapes")
        if np.any(w <= 0):
            raise ValueError("mixture weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"mixture weights must sum to 1 (got {w.sum()!r})")
        if np.any(np.abs(cov - np.swapaxes(cov, 1, 2)) > 1e-12):
            raise ValueError("component covariances must be symmetric")
        if np.any(np.linalg.eigvalsh(cov) < -1e-12):
            raise ValueError("component covariances must be positive semidefinite")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.weights.size

    def classes(self) -> np.ndarray:
        return np.unique(self.labels)

    def class_priors(self) -> dict[int, float]:
        return {int(c): float(self.weights[self.labels == c].sum()) for c in self.classes()}

    def restricted(self, c: int) -> "GaussianMixture":
        """Renormalized sub-mixture carrying class label c."""
        sel = self.labels == c
        if not sel.any():
            raise ValueError(f"no component carries class {c}")
        w = self.weights[sel]
        return GaussianMixture(w / w.sum(), self.means[sel], self.covs[sel], self.labels[sel])

    def inflated(self, epsilon: float) -> "GaussianMixture":
        """Mixture with every covariance replaced by Sigma + epsilon*I."""
        if epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if epsilon == 0:
            return self
        eye = np.eye(self.dim)
        return GaussianMixture(self.weights, self.means, self.covs + epsilon * eye, self.labels)

    def mixture_mean(self) -> np.ndarray:
        return self.weights @ self.means

    def mixture_cov(self) -> np.ndarray:
        centered = self.means - self.mixture_mean()
        spread = np.einsum("k,ki,kj->ij", self.weights, centered, centered)
        return spread + np.einsum("k,kij->ij", self.weights, self.covs)

    def sample(self, n: int, rng: np.random.Generator, c: int | None = None):
        """Draw n points; component by inverse-CDF on one uniform per point,
        then one standard-normal vector per point.  Returns (points, labels).
        """
        gmm = self if c is None else self.restricted(c)
        cum = np.cumsum(gmm.weights)
        cum[-1] = 1.0
        idx = np.searchsorted(cum, rng.random(n), side="right")
        eps = rng.standard_normal((n, gmm.dim))
        chol = np.linalg.cholesky(gmm.covs + COV_RIDGE * np.eye(gmm.dim))
        pts = gmm.means[idx] + np.einsum("nij,nj->ni", chol[idx], eps)
        return pts, gmm.labels[idx]


@dataclass(frozen=True)
class MarginalMixture:
    """The mixture law of x_t = t*x1 + (1-t)*x0 at a fixed time t."""

    t: float
    weights: np.ndarray
    means: np.ndarray  # t*mu_k
    covs: np.ndarray  # t^2*Sigma_k + (1-t)^2*I
    labels: np.ndarray

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def marginal_at(gmm: GaussianMixture, t: float) -> MarginalMixture:
    """Closed-form time-t marginal of the interpolation."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    eye = np.eye(gmm.dim)
    return MarginalMixture(
        t=t,
        weights=gmm.weights,
        means=t * gmm.means,
        covs=(t * t) * gmm.covs + (1.0 - t) ** 2 * eye,
        labels=gmm.labels,
    )


def _component_stats(covs: np.ndarray, dim: int):
    """Inverses and log-determinants of regularized covariances."""
    S = covs + COV_RIDGE * np.eye(dim)
    sign, logdet = np.linalg.slogdet(S)
    if np.any(sign <= 0):
        raise NumericError("degenerate covariance after regularization")
    return np.linalg.inv(S), logdet


def log_density_and_score(marg: MarginalMixture, x: np.ndarray):
    """Mixture log-density (log-sum-exp) and its gradient at x.

    x may be (d,) or (n, d); the outputs match (scalar, (d,)) or ((n,),
    (n, d)).
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if not np.all(np.isfinite(X)):
        raise NumericError("non-finite evaluation point")
    Sinv, logdet = _component_stats(marg.covs, marg.dim)
    diff = X[:, None, :] - marg.means[None, :, :]  # (n, K, d)
    Sd = np.einsum("kij,nkj->nki", Sinv, diff)
    maha = np.einsum("nki,nki->nk", diff, Sd)
    logc = np.log(marg.weights) - 0.5 * (maha + logdet[None, :] + marg.dim * LOG_2PI)
    top = logc.max(axis=1, keepdims=True)
    r = np.exp(logc - top)
    norm = r.sum(axis=1, keepdims=True)
    logpdf = (top + np.log(norm)).ravel()
    r = r / norm
    score = -np.einsum("nk,nki->ni", r, Sd)
    if single:
        return float(logpdf[0]), score[0]
    return logpdf, score


def _active_mask(labels: np.ndarray, c, n: int) -> np.ndarray | None:
    """(n, K) activity mask for per-sample condition labels, or None."""
    if c is None:
        return None
    c = np.asarray(c)
    if c.ndim == 0:
        if not np.any(labels == int(c)):
            raise ValueError(f"no component carries class {int(c)}")
        return np.broadcast_to(labels == int(c), (n, labels.size))
    if c.shape != (n,):
        raise ValueError("condition array must have one label per point")
    mask = labels[None, :] == c[:, None]
    if not mask.any(axis=1).all():
        missing = np.unique(c[~mask.any(axis=1)])
        raise ValueError(f"no component carries class(es) {missing.tolist()}")
    return mask


def responsibilities(gmm: GaussianMixture, x: np.ndarray, t: float, c=None) -> np.ndarray:
    """Posterior component responsibilities under the time-t marginal."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    marg = marginal_at(gmm, t)
    Sinv, logdet = _component_stats(marg.covs, gmm.dim)
    diff = X[:, None, :] - marg.means[None, :, :]
    maha = np.einsum("nki,kij,nkj->nk", diff, Sinv, diff)
    logr = np.log(gmm.weights) - 0.5 * (maha + logdet[None, :])
    mask = _active_mask(gmm.labels, c, X.shape[0])
    if mask is not None:
        logr = np.where(mask, logr, -np.inf)
    logr = logr - logr.max(axis=1, keepdims=True)
    r = np.exp(logr)
    r /= r.sum(axis=1, keepdims=True)
    return r[0] if single else r


def optimal_velocity(gmm: GaussianMixture, x: np.ndarray, t: float, c=None) -> np.ndarray:
    """Exact conditional-mean velocity E[x1 - x0 | x_t = x] for the mixture.

    With a condition the expectation is class-restricted.  t=1 is allowed
    only for components with nondegenerate covariance (point masses put a
    pole at the data there).
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if not np.all(np.isfinite(X)):
        raise NumericError("non-finite evaluation point")
    n = X.shape[0]
    d = gmm.dim

    mask = _active_mask(gmm.labels, c, n)
    if t >= 1.0:
        active = np.ones(gmm.n_components, bool) if mask is None else mask.any(axis=0)
        if np.any(np.linalg.eigvalsh(gmm.covs[active]) < 1e-13):
            raise NumericError("velocity pole at t=1 for a point-mass component; use t < 1")

    eye = np.eye(d)
    S = (t * t) * gmm.covs + (1.0 - t) ** 2 * eye + COV_RIDGE * eye
    sign, logdet = np.linalg.slogdet(S)
    if np.any(sign <= 0):
        raise NumericError("degenerate time-t covariance")
    Sinv = np.linalg.inv(S)
    diff = X[:, None, :] - t * gmm.means[None, :, :]  # (n, K, d)
    Sd = np.einsum("kij,nkj->nki", Sinv, diff)
    maha = np.einsum("nki,nki->nk", diff, Sd)
    logr = np.log(gmm.weights) - 0.5 * (maha + logdet[None, :])
    if mask is not None:
        logr = np.where(mask, logr, -np.inf)
    logr = logr - logr.max(axis=1, keepdims=True)
    r = np.exp(logr)
    r /= r.sum(axis=1, keepdims=True)

    e1 = gmm.means[None, :, :] + t * np.einsum("kij,nkj->nki", gmm.covs, Sd)
    e0 = (1.0 - t) * Sd
    v = np.einsum("nk,nki->ni", r, e1 - e0)
    return v[0] if single else v


def unconditional_velocity(gmm: GaussianMixture, x: np.ndarray, t: float) -> np.ndarray:
    """Marginal velocity over the full mixture (all conditions integrated out)."""
    return optimal_velocity(gmm, x, t, c=None)


def smoothed_velocity(
    gmm: GaussianMixture, x: np.ndarray, t: float, epsilon: float, c=None
) -> np.ndarray:
    """Velocity of the epsilon-inflated mixture; epsilon=0 is the exact field."""
    return optimal_velocity(gmm.inflated(epsilon), x, t, c=c)


def mc_velocity(
    gmm: GaussianMixture,
    x: np.ndarray,
    t: float,
    c: int | None,
    n_pairs: int,
    bandwidth: float,
    rng: np.random.Generator,
):
    """Kernel-weighted Monte-Carlo estimate of the conditional-mean velocity.

    Draws (x0, x1) pairs from the prior and the (class-restricted) target,
    weights them by a Gaussian kernel on |x_t - x|, and returns the
    self-normalized estimate with a per-coordinate standard error.  Fails
    when the kernel captures fewer than 50 effective pairs.
    """
    if n_pairs < 1000:
        raise ValueError("n_pairs must be >= 1000")
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    if not 0.0 < t < 1.0:
        raise ValueError("t must lie strictly inside (0, 1)")
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("mc_velocity estimates one point at a time")

    x1, _ = gmm.sample(n_pairs, rng, c=c)
    x0 = rng.standard_normal((n_pairs, gmm.dim))
    xt = t * x1 + (1.0 - t) * x0
    logw = -np.sum((xt - x) ** 2, axis=1) / (2.0 * bandwidth**2)
    logw -= logw.max()
    w = np.exp(logw)
    wsum = w.sum()
    ess = wsum**2 / np.sum(w**2)
    if ess < 50.0:
        raise InsufficientOverlapError("kernel support too thin for a stable estimate", ess=ess)
    y = x1 - x0
    est = (w[:, None] * y).sum(axis=0) / wsum
    var = (w[:, None] ** 2 * (y - est) ** 2).sum(axis=0) / wsum**2
    return est, np.sqrt(var)


def score_velocity_identity_check(gmm: GaussianMixture, x: np.ndarray, t: float) -> float:
    """Residual |(t*v - x)/(1-t) - score| of the velocity-score link at (x, t)."""
    if not 0.0 <= t < 1.0:
        raise ValueError("t must lie in [0, 1)")
    x = np.asarray(x, dtype=float)
    v = optimal_velocity(gmm, x, t)
    _, score = log_density_and_score(marginal_at(gmm, t), x)
    lhs = (t * v - x) / (1.0 - t)
    return float(np.linalg.norm(lhs - score))


class AnalyticField:
    """Mixture velocity as a VelocityField, optionally epsilon-degraded.

    Read-only after construction; safe to share across trajectory batches.
    """

    def __init__(self, mixture: GaussianMixture, epsilon: float = 0.0):
        self.mixture = mixture
        self.epsilon = float(epsilon)
        self._working = mixture.inflated(self.epsilon)

    def __call__(self, x: np.ndarray, t: float, c=None) -> np.ndarray:
        return optimal_velocity(self._working, x, t, c=c)


def load_mixture(path: str | Path) -> GaussianMixture:
    """Load and validate a mixture definition file.

    Expected layout: top-level ``dim`` plus a ``[[components]]`` table per
    component with ``weight``, ``mean``, ``cov`` and ``class`` entries.
    """
    path = Path(path)
    try:
        with open(path, "rb") as f:
            doc = tomllib.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read mixture file {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"mixture file {path} is not valid TOML: {e}") from e
    try:
        dim = int(doc["dim"])
        comps = doc["components"]
        weights = np.array([c["weight"] for c in comps], dtype=float)
        means = np.array([c["mean"] for c in comps], dtype=float)
        covs = np.array([c["cov"] for c in comps], dtype=float)
        labels = np.array([c["class"] for c in comps], dtype=int)
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"mixture file {path} is missing or mistypes a field: {e}") from e
    if means.ndim != 2 or means.shape[1] != dim:
        raise ConfigError(f"mixture file {path}: means do not match dim={dim}")
    try:
        return GaussianMixture(weights, means, covs, labels)
    except ValueError as e:
        raise ConfigError(f"mixture file {path} failed validation: {e}") from e


def tree_mixture_path() -> Path:
    """Path to the packaged two-class tree-shaped 2D fixture."""
    return Path(resources.files("flowlab") / "fixtures" / "tree_mixture.toml")
