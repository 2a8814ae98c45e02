"""Power-iteration PCA against a dense eigensolver oracle."""

import numpy as np
import pytest

from refrank.pca import PCAProjector


def eigh_oracle(rows, k=2):
    centered = rows - rows.mean(axis=0)
    cov = centered.T @ centered / (rows.shape[0] - 1)
    values, vectors = np.linalg.eigh(cov)
    order = np.argsort(values)[::-1][:k]
    return values[order], vectors[:, order].T


class TestPCAProjector:
    def test_axis_aligned_recovers_standard_basis(self):
        rng = np.random.default_rng(0)
        rows = np.stack([rng.normal(scale=0.1, size=200),
                         rng.normal(scale=3.0, size=200)], axis=1)
        pca = PCAProjector().fit(rows)
        # Finite-sample cross-correlation tilts the exact eigenvector a
        # hair off the axis, so the check is qualitative.
        assert abs(pca.components_[0] @ [0.0, 1.0]) > 0.999
        assert abs(pca.components_[1] @ [1.0, 0.0]) > 0.999

    def test_components_orthonormal(self):
        rows = np.random.default_rng(1).normal(size=(50, 8))
        pca = PCAProjector(n_components=3).fit(rows)
        gram = pca.components_ @ pca.components_.T
        np.testing.assert_allclose(gram, np.eye(3), atol=1e-4)

    def test_matches_dense_eigensolver(self):
        rows = np.random.default_rng(2).normal(size=(10, 4))
        rows[:, 0] *= 4.0
        pca = PCAProjector().fit(rows)
        oracle_values, oracle_vectors = eigh_oracle(rows)
        np.testing.assert_allclose(pca.explained_variance_, oracle_values,
                                   rtol=1e-6)
        for mine, ref in zip(pca.components_, oracle_vectors):
            assert abs(abs(mine @ ref) - 1.0) < 1e-6
        assert pca.explained_variance_[0] >= pca.explained_variance_[1]

    def test_variance_ordering_on_random_clouds(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            rows = rng.normal(size=(30, 6)) @ rng.normal(size=(6, 6))
            pca = PCAProjector().fit(rows)
            assert pca.explained_variance_[0] >= pca.explained_variance_[1] >= 0

    def test_transform_matches_manual_projection(self):
        rows = np.random.default_rng(4).normal(size=(20, 5))
        pca = PCAProjector().fit(rows)
        projected = pca.transform(rows)
        manual = (rows - rows.mean(axis=0)) @ pca.components_.T
        np.testing.assert_allclose(projected, manual, atol=1e-12)
        assert projected.shape == (20, 2)

    def test_projection_variance_equals_eigenvalue(self):
        rows = np.random.default_rng(5).normal(size=(60, 7))
        pca = PCAProjector().fit(rows)
        projected = pca.fit_transform(rows)
        np.testing.assert_allclose(projected.var(axis=0, ddof=1),
                                   pca.explained_variance_, rtol=1e-6)

    def test_deterministic(self):
        rows = np.random.default_rng(6).normal(size=(25, 5))
        a = PCAProjector().fit(rows)
        b = PCAProjector().fit(rows)
        np.testing.assert_array_equal(a.components_, b.components_)

    def test_too_few_vectors_rejected(self):
        with pytest.raises(ValueError, match="at least 3 vectors"):
            PCAProjector().fit(np.ones((2, 4)))

    def test_too_many_components_rejected(self):
        with pytest.raises(ValueError, match="exceeds dimensionality"):
            PCAProjector(n_components=5).fit(np.ones((10, 3)))

    def test_constant_data_yields_zero_variance(self):
        rows = np.full((10, 4), 2.5)
        pca = PCAProjector().fit(rows)
        np.testing.assert_allclose(pca.explained_variance_, 0.0, atol=1e-12)
        assert np.all(np.isfinite(pca.components_))
        gram = pca.components_ @ pca.components_.T
        np.testing.assert_allclose(gram, np.eye(2), atol=1e-8)

    def test_transform_before_fit_rejected(self):
        with pytest.raises(ValueError, match="fit"):
            PCAProjector().transform(np.ones((3, 2)))
