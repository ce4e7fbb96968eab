"""Sample-set distances for 2D generative evaluation.

Desk-scale analogues of the usual image-model suite, computed on raw
coordinates: a Gaussian-fit Frechet distance, k-NN precision/recall with
per-point k-th-neighbor radii, and an unbiased RBF-kernel MMD^2.  All three
are deterministic functions of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla
from scipy.spatial import cKDTree

from .errors import NumericError

PSD_TOL = 1e-9


@dataclass
class SampleSet:
    """A finite point cloud with optional class labels and provenance."""

    points: np.ndarray
    labels: np.ndarray | None = None
    provenance: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("points must be a nonempty (n, d) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        self.points = pts
        if self.labels is not None and len(self.labels) != pts.shape[0]:
            raise ValueError("labels must match the number of points")

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def _points(x) -> np.ndarray:
    return x.points if isinstance(x, SampleSet) else np.asarray(x, dtype=float)


def sqrtm_psd_2x2(m: np.ndarray) -> np.ndarray:
    """Principal square root of a 2x2 matrix with nonnegative real spectrum.

    Closed form (M + sqrt(det)*I) / sqrt(tr + 2*sqrt(det)); also valid for
    nonsymmetric products of PSD matrices.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (2, 2):
        raise ValueError("expected a 2x2 matrix")
    det = float(np.linalg.det(m))
    if det < -PSD_TOL:
        raise NumericError(f"negative determinant {det:g} in matrix square root")
    root_det = np.sqrt(max(det, 0.0))
    s_sq = float(np.trace(m)) + 2.0 * root_det
    if s_sq < -PSD_TOL:
        raise NumericError(f"negative spectrum (trace term {s_sq:g}) in matrix square root")
    if s_sq <= 0.0:
        return np.zeros((2, 2))
    return (m + root_det * np.eye(2)) / np.sqrt(s_sq)


def _trace_sqrt_product(cov_a: np.ndarray, cov_b: np.ndarray) -> float:
    """tr((cov_a @ cov_b)^(1/2)); closed form in 2D, scipy sqrtm otherwise."""
    prod = cov_a @ cov_b
    if prod.shape == (2, 2):
        det = float(np.linalg.det(prod))
        if det < -PSD_TOL:
            raise NumericError(f"negative determinant {det:g} in covariance product")
        s_sq = float(np.trace(prod)) + 2.0 * np.sqrt(max(det, 0.0))
        if s_sq < -PSD_TOL:
            raise NumericError(f"non-PSD covariance product (trace term {s_sq:g})")
        return float(np.sqrt(max(s_sq, 0.0)))
    root = sla.sqrtm(prod)
    if np.iscomplexobj(root):
        imag = float(np.abs(root.imag).max())
        if imag > 1e-6 * max(1.0, float(np.abs(root.real).max())):
            raise NumericError(f"covariance product square root is complex (imag {imag:g})")
        root = root.real
    return float(np.trace(root))


def gaussian_frechet(a, b) -> float:
    """Frechet distance between Gaussian fits of two sample sets.

    Fits (mean, unbiased covariance) to each set and evaluates
    |mu_a - mu_b|^2 + tr(S_a + S_b - 2*(S_a S_b)^(1/2)).
    """
    pa, pb = _points(a), _points(b)
    d = pa.shape[1]
    if pb.shape[1] != d:
        raise ValueError("sample sets must share a dimension")
    if len(pa) < d + 1 or len(pb) < d + 1:
        raise ValueError(f"need at least {d + 1} points per set")
    mu_a, mu_b = pa.mean(axis=0), pb.mean(axis=0)
    cov_a = np.cov(pa, rowvar=False, ddof=1)
    cov_b = np.cov(pb, rowvar=False, ddof=1)
    value = float(
        np.sum((mu_a - mu_b) ** 2)
        + np.trace(cov_a) + np.trace(cov_b)
        - 2.0 * _trace_sqrt_product(cov_a, cov_b)
    )
    if value < -PSD_TOL:
        raise NumericError(f"Frechet distance came out negative ({value:g})")
    return max(value, 0.0)


def _knn_radii(points: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Unique points of a set and their k-th-neighbor distances.

    Radii are computed on deduplicated points so that repeating points in a
    set does not shrink its manifold estimate.
    """
    uniq = np.unique(points, axis=0)
    if k >= len(uniq):
        raise ValueError("k must be smaller than the number of distinct points")
    tree = cKDTree(uniq)
    dist, _ = tree.query(uniq, k=k + 1)
    return uniq, dist[:, k]


def knn_precision_recall(real, fake, k: int = 3) -> tuple[float, float]:
    """Manifold precision/recall with k-th-neighbor ball coverage.

    Precision: fraction of fake points inside at least one real point's
    k-NN ball; recall: the same with roles swapped.
    """
    pr, pf = _points(real), _points(fake)
    if k < 1:
        raise ValueError("k must be >= 1")
    if k >= len(pr) or k >= len(pf):
        raise ValueError("k must be smaller than both set sizes")
    uniq_r, rad_r = _knn_radii(pr, k)
    uniq_f, rad_f = _knn_radii(pf, k)

    fake_tree = cKDTree(pf)
    covered_f = np.zeros(len(pf), dtype=bool)
    for hits in fake_tree.query_ball_point(uniq_r, rad_r):
        covered_f[hits] = True

    real_tree = cKDTree(pr)
    covered_r = np.zeros(len(pr), dtype=bool)
    for hits in real_tree.query_ball_point(uniq_f, rad_f):
        covered_r[hits] = True

    return float(covered_f.mean()), float(covered_r.mean())


def mmd2_rbf(a, b, bandwidth: float, block: int = 2048) -> float:
    """Unbiased MMD^2 with kernel exp(-|x-y|^2 / (2*h^2)).

    Pairwise terms are accumulated in fixed row blocks so large sets stay
    within memory and the reduction order is deterministic.
    """
    if bandwidth <= 0:
        raise ValueError("bandwidth must be positive")
    pa, pb = _points(a), _points(b)
    m, n = len(pa), len(pb)
    if m < 2 or n < 2:
        raise ValueError("need at least two points per set for the unbiased estimate")
    inv = 1.0 / (2.0 * bandwidth**2)

    def _kernel_sum(x, y, skip_diag: bool) -> float:
        total = 0.0
        for i in range(0, len(x), block):
            chunk = x[i : i + block]
            sq = (
                np.sum(chunk**2, axis=1)[:, None]
                + np.sum(y**2, axis=1)[None, :]
                - 2.0 * chunk @ y.T
            )
            kern = np.exp(-np.maximum(sq, 0.0) * inv)
            total += float(kern.sum())
            if skip_diag:
                total -= float(np.trace(kern, offset=i))
        return total

    kxx = _kernel_sum(pa, pa, skip_diag=True) / (m * (m - 1))
    kyy = _kernel_sum(pb, pb, skip_diag=True) / (n * (n - 1))
    kxy = _kernel_sum(pa, pb, skip_diag=False) / (m * n)
    return kxx + kyy - 2.0 * kxy


@dataclass
class MetricReport:
    """One row of evaluation results for a generated set vs a reference."""

    frechet: float
    precision: float
    recall: float
    mmd2: float
    n_real: int
    n_fake: int
    k: int

    CSV_HEADER = "frechet,precision,recall,mmd2,n_real,n_fake,k"

    def __post_init__(self):
        values = (self.frechet, self.precision, self.recall, self.mmd2)
        if not all(np.isfinite(v) for v in values):
            raise ValueError("metric values must be finite")
        if self.frechet < 0:
            raise ValueError("frechet must be nonnegative")
        if not (0.0 <= self.precision <= 1.0 and 0.0 <= self.recall <= 1.0):
            raise ValueError("precision and recall must lie in [0, 1]")

    def csv_row(self) -> str:
        return ",".join(
            [
                format(self.frechet, ".17g"),
                format(self.precision, ".17g"),
                format(self.recall, ".17g"),
                format(self.mmd2, ".17g"),
                str(self.n_real),
                str(self.n_fake),
                str(self.k),
            ]
        )


def evaluate_samples(real, fake, k: int = 3, mmd_bandwidth: float = 0.2) -> MetricReport:
    """Full MetricReport for a generated set against a reference set."""
    pr, pf = _points(real), _points(fake)
    precision, recall = knn_precision_recall(pr, pf, k=k)
    return MetricReport(
        frechet=gaussian_frechet(pr, pf),
        precision=precision,
        recall=recall,
        mmd2=mmd2_rbf(pr, pf, bandwidth=mmd_bandwidth),
        n_real=len(pr),
        n_fake=len(pf),
        k=k,
    )
