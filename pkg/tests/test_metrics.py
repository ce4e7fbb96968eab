from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowlab import (
    MetricReport,
    NumericError,
    SampleSet,
    evaluate_samples,
    gaussian_frechet,
    knn_precision_recall,
    mmd2_rbf,
    sqrtm_psd_2x2,
)


class TestSqrtm2x2:
    @given(st.integers(min_value=0, max_value=10_000))
    @settings(max_examples=80, deadline=None)
    def test_square_of_sqrt_recovers_matrix(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(2, 2))
        m = a @ a.T * rng.uniform(0.1, 5.0)
        root = sqrtm_psd_2x2(m)
        assert np.allclose(root @ root, m, atol=1e-10 * max(1.0, np.abs(m).max()))

    def test_product_of_psd_matrices(self):
        rng = np.random.default_rng(1)
        a, b = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        m = (a @ a.T) @ (b @ b.T)  # nonsymmetric, nonneg real spectrum
        root = sqrtm_psd_2x2(m)
        assert np.allclose(root @ root, m, atol=1e-10)

    def test_zero_matrix(self):
        assert np.array_equal(sqrtm_psd_2x2(np.zeros((2, 2))), np.zeros((2, 2)))

    def test_negative_determinant_rejected(self):
        with pytest.raises(NumericError):
            sqrtm_psd_2x2(np.array([[0.0, 1.0], [1.0, 0.0]]) * 1.0 - np.eye(2) * 0.5)


class TestGaussianFrechet:
    def test_identical_sets_are_zero(self):
        pts = np.random.default_rng(0).normal(size=(500, 2))
        assert gaussian_frechet(pts, pts) < 1e-10

    def test_pure_mean_shift(self):
        pts = np.random.default_rng(1).normal(size=(400, 2))
        shift = np.array([0.7, -0.2])
        value = gaussian_frechet(pts, pts + shift)
        assert value == pytest.approx(float(shift @ shift), abs=1e-9)

    def test_known_gaussians(self):
        # N(0, I) vs N((1,0), 2I): exact value 1 + 2*(3 - 2*sqrt(2))
        exact = 1.0 + 2.0 * (3.0 - 2.0 * np.sqrt(2.0))
        rng = np.random.default_rng(2)
        a = rng.standard_normal((100_000, 2))
        b = rng.standard_normal((100_000, 2)) * np.sqrt(2.0) + np.array([1.0, 0.0])
        assert gaussian_frechet(a, b) == pytest.approx(exact, abs=0.05)

    def test_symmetry(self):
        rng = np.random.default_rng(3)
        a = rng.normal(size=(300, 2))
        b = rng.normal(size=(300, 2)) * 1.4 + 0.3
        assert abs(gaussian_frechet(a, b) - gaussian_frechet(b, a)) < 1e-9

    def test_rigid_rotation_invariance(self):
        rng = np.random.default_rng(4)
        a = rng.normal(size=(400, 2)) @ np.diag([1.0, 0.3])
        b = rng.normal(size=(400, 2)) + 0.5
        theta = 0.577
        rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
        assert gaussian_frechet(a @ rot.T, b @ rot.T) == pytest.approx(
            gaussian_frechet(a, b), abs=1e-9
        )

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError):
            gaussian_frechet(np.zeros((2, 2)), np.zeros((5, 2)))

    def test_general_dimension_path(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(2000, 3))
        b = rng.normal(size=(2000, 3)) + np.array([1.0, 0.0, 0.0])
        assert gaussian_frechet(a, b) == pytest.approx(1.0, abs=0.1)

    def test_sample_set_inputs(self):
        pts = np.random.default_rng(6).normal(size=(100, 2))
        assert gaussian_frechet(SampleSet(pts), SampleSet(pts.copy())) < 1e-10


class TestKnnPrecisionRecall:
    def test_identical_sets(self):
        pts = np.random.default_rng(0).normal(size=(200, 2))
        assert knn_precision_recall(pts, pts.copy(), k=3) == (1.0, 1.0)

    def test_disjoint_far_sets(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(100, 2))
        b = rng.normal(size=(100, 2)) + 1000.0
        assert knn_precision_recall(a, b, k=3) == (0.0, 0.0)

    def test_outlier_hurts_precision_not_recall(self):
        rng = np.random.default_rng(2)
        real = rng.normal(size=(150, 2))
        fake = np.vstack([real, [[500.0, 500.0]]])
        precision, recall = knn_precision_recall(real, fake, k=3)
        assert precision < 1.0
        assert recall == 1.0

    def test_duplicating_fake_points_changes_nothing(self):
        rng = np.random.default_rng(3)
        real = rng.normal(size=(120, 2))
        fake = rng.normal(size=(80, 2)) * 1.2
        base = knn_precision_recall(real, fake, k=3)
        doubled = knn_precision_recall(real, np.vstack([fake, fake]), k=3)
        assert doubled == base

    def test_bounds_and_validation(self):
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=(50, 2)), rng.normal(size=(60, 2))
        p, r = knn_precision_recall(a, b, k=5)
        assert 0.0 <= p <= 1.0 and 0.0 <= r <= 1.0
        with pytest.raises(ValueError):
            knn_precision_recall(a, b, k=50)


class TestMmd:
    def test_same_distribution_within_permutation_noise(self):
        rng = np.random.default_rng(5)
        pool = rng.normal(size=(1200, 2))
        a, b = pool[:600], pool[600:]
        h = 0.5
        observed = mmd2_rbf(a, b, h)
        perms = []
        for i in range(60):
            idx = np.random.default_rng(100 + i).permutation(1200)
            perms.append(mmd2_rbf(pool[idx[:600]], pool[idx[600:]], h))
        assert abs(observed) < 3.0 * np.std(perms) + 1e-12

    def test_far_point_masses(self):
        delta = np.array([5.0, 0.0])
        a = np.tile(np.zeros(2), (40, 1))
        b = np.tile(delta, (40, 1))
        h = 0.7
        expected = 2.0 * (1.0 - np.exp(-float(delta @ delta) / (2 * h * h)))
        assert mmd2_rbf(a, b, h) == pytest.approx(expected, abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(150, 2))
        b = rng.normal(size=(150, 2)) + 0.4
        lam = 3.7
        assert mmd2_rbf(lam * a, lam * b, lam * 0.33) == pytest.approx(
            mmd2_rbf(a, b, 0.33), abs=1e-12
        )

    def test_blocked_equals_unblocked(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(300, 2))
        b = rng.normal(size=(257, 2))
        full = mmd2_rbf(a, b, 0.4, block=4096)
        blocked = mmd2_rbf(a, b, 0.4, block=64)
        assert full == pytest.approx(blocked, abs=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError):
            mmd2_rbf(np.zeros((10, 2)), np.zeros((10, 2)), 0.0)


class TestReport:
    def test_csv_row_and_validation(self):
        report = MetricReport(0.5, 0.8, 0.9, 0.001, 100, 200, 3)
        row = report.csv_row()
        assert row.split(",")[4:] == ["100", "200", "3"]
        with pytest.raises(ValueError):
            MetricReport(-0.1, 0.5, 0.5, 0.0, 1, 1, 3)
        with pytest.raises(ValueError):
            MetricReport(0.1, 1.5, 0.5, 0.0, 1, 1, 3)

    def test_evaluate_samples(self):
        rng = np.random.default_rng(8)
        real = SampleSet(rng.normal(size=(300, 2)), provenance="ref")
        fake = SampleSet(rng.normal(size=(300, 2)) * 1.1, provenance="gen")
        report = evaluate_samples(real, fake, k=3, mmd_bandwidth=0.4)
        assert report.n_real == 300 and report.n_fake == 300
        assert report.frechet > 0

    def test_metrics_are_deterministic(self):
        rng = np.random.default_rng(9)
        a = rng.normal(size=(400, 2))
        b = rng.normal(size=(400, 2)) * 1.2 + 0.1
        first = (gaussian_frechet(a, b), knn_precision_recall(a, b, 3), mmd2_rbf(a, b, 0.3))
        second = (gaussian_frechet(a, b), knn_precision_recall(a, b, 3), mmd2_rbf(a, b, 0.3))
        assert first == second

    def test_sample_set_validation(self):
        with pytest.raises(ValueError):
            SampleSet(np.zeros((0, 2)))
        with pytest.raises(ValueError):
            SampleSet(np.array([[np.inf, 0.0]]))
        with pytest.raises(ValueError):
            SampleSet(np.zeros((3, 2)), labels=np.zeros(2))
