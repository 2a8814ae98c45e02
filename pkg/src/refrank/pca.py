"""Principal components by power iteration with deflation.

Used to project query, image, and summarizer embeddings onto a shared 2-D
plane for inspection.  Deliberately dependency-free: repeated
matrix-vector products against the covariance, deflating each found
component out before the next, with re-orthogonalization against earlier
components every step for numerical stability.
"""

from __future__ import annotations

import numpy as np

from .validation import check_matrix


class PCAProjector:
    """Top-k principal axes of a centered sample cloud.

    fit() learns ``components_`` (k x d, orthonormal rows, strongest
    first), ``explained_variance_`` (descending), and ``mean_``;
    transform() maps rows onto those axes.
    """

    def __init__(self, n_components: int = 2, max_iter: int = 1000,
                 tol: float = 1e-12, seed: int = 0):
        if n_components < 1:
            raise ValueError("n_components must be >= 1")
        self.n_components = n_components
        self.max_iter = max_iter
        self.tol = tol
        self.seed = seed

    def fit(self, rows: np.ndarray) -> "PCAProjector":
        data = check_matrix(rows, name="rows")
        n, d = data.shape
        if n < 3:
            raise ValueError(f"need at least 3 vectors, got {n}")
        if self.n_components > d:
            raise ValueError(
                f"n_components {self.n_components} exceeds dimensionality {d}")
        self.mean_ = data.mean(axis=0)
        centered = data - self.mean_
        covariance = (centered.T @ centered) / (n - 1)

        rng = np.random.default_rng(self.seed)
        components = np.zeros((self.n_components, d))
        variances = np.zeros(self.n_components)
        residual = covariance.copy()
        for index in range(self.n_components):
            vector = rng.normal(size=d)
            for j in range(index):
                vector -= (vector @ components[j]) * components[j]
            vector /= np.linalg.norm(vector)
            for _ in range(self.max_iter):
                nxt = residual @ vector
                for j in range(index):
                    nxt -= (nxt @ components[j]) * components[j]
                norm = np.linalg.norm(nxt)
                if norm < 1e-300:
                    # Residual variance is zero; keep the current
                    # orthonormal direction with eigenvalue 0.
                    break
                nxt /= norm
                # Sign may alternate when the dominant residual eigenvalue
                # is negative fp noise; either fixed point counts.
                if min(np.linalg.norm(nxt - vector),
                       np.linalg.norm(nxt + vector)) < self.tol:
                    vector = nxt
                    break
                vector = nxt
            variances[index] = float(vector @ residual @ vector)
            components[index] = vector
            residual = residual - variances[index] * np.outer(vector, vector)

        self.components_ = components
        self.explained_variance_ = variances
        return self

    def transform(self, rows: np.ndarray) -> np.ndarray:
        if not hasattr(self, "components_"):
            raise ValueError("fit() must run before transform()")
        data = check_matrix(rows, cols=self.components_.shape[1], name="rows")
        return (data - self.mean_) @ self.components_.T

    def fit_transform(self, rows: np.ndarray) -> np.ndarray:
        return self.fit(rows).transform(rows)
