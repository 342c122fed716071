"""View adjacency graph and its spectral pieces.

Cameras sit on a linear rig, so the default adjacency is a path graph
(view i connected to i+1, no wraparound).  The Chebyshev convolution works
on the scaled Laplacian 2L/lambda_max - I, built from the symmetric
normalized Laplacian.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ParseError


@dataclass(frozen=True)
class ViewGraph:
    adjacency: np.ndarray  # (N, N) symmetric, zero diagonal, nonneg weights

    def __post_init__(self):
        a = self.adjacency
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ConfigError(f"adjacency must be square, got {a.shape}")
        if not np.allclose(a, a.T):
            raise ConfigError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise ConfigError("adjacency diagonal must be zero")
        if np.any(a < 0):
            raise ConfigError("adjacency weights must be >= 0")

    @property
    def n_views(self) -> int:
        return self.adjacency.shape[0]

    def normalized_laplacian(self) -> np.ndarray:
        """I - D^(-1/2) A D^(-1/2); isolated nodes keep an identity row."""
        a = self.adjacency
        deg = a.sum(axis=1)
        with np.errstate(divide="ignore"):
            inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
        return np.eye(self.n_views) - inv_sqrt[:, None] * a * inv_sqrt[None, :]

    def scaled_laplacian(self, tol: float = 1e-6) -> np.ndarray:
        """2 L / lambda_max - I, with lambda_max from power iteration."""
        lap = self.normalized_laplacian()
        if not self.adjacency.any():
            # no edges: L is the identity-on-isolated-nodes matrix; by
            # convention return -I so eigenvalues stay inside [-1, 1]
            return -np.eye(self.n_views)
        lam = power_iteration(lap, tol=tol)
        if lam <= tol:
            return -np.eye(self.n_views)
        return 2.0 * lap / lam - np.eye(self.n_views)

    def cheb_terms(self, order: int) -> list[np.ndarray]:
        """Chebyshev polynomials T_1..T_order of the scaled Laplacian.

        T_0 = I, T_1 = Lt, T_m = 2 Lt T_{m-1} - T_{m-2}; T_0 is excluded
        because the convolution sum starts at m = 1.
        """
        if order < 1:
            raise ConfigError("Chebyshev order must be >= 1")
        lt = self.scaled_laplacian()
        terms = [lt]
        t_prev = np.eye(self.n_views)
        t_cur = lt
        for _ in range(2, order + 1):
            t_next = 2.0 * lt @ t_cur - t_prev
            terms.append(t_next)
            t_prev, t_cur = t_cur, t_next
        return terms


def power_iteration(matrix: np.ndarray, tol: float = 1e-6, max_iter: int = 10000) -> float:
    """Dominant eigenvalue of a symmetric PSD matrix."""
    n = matrix.shape[0]
    # deterministic start with a small ramp so it is never orthogonal to
    # the dominant eigenvector of a path Laplacian
    vec = np.ones(n) + np.linspace(0.0, 0.1, n)
    vec /= np.linalg.norm(vec)
    lam = 0.0
    for _ in range(max_iter):
        nxt = matrix @ vec
        norm = np.linalg.norm(nxt)
        if norm == 0.0:
            return 0.0
        nxt /= norm
        lam_next = float(nxt @ matrix @ nxt)
        if abs(lam_next - lam) < tol:
            return lam_next
        lam, vec = lam_next, nxt
    return lam


def path_graph(n_views: int) -> ViewGraph:
    """Linear rig adjacency: i connected to i+1, no wraparound."""
    if n_views < 1:
        raise ConfigError("n_views must be >= 1")
    a = np.zeros((n_views, n_views))
    for i in range(n_views - 1):
        a[i, i + 1] = a[i + 1, i] = 1.0
    return ViewGraph(a)


def read_adjacency_csv(path, n_views: int) -> ViewGraph:
    """Edge-list CSV with one ``i,j`` pair per row, views 1-based."""
    a = np.zeros((n_views, n_views))
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            if len(row) != 2:
                raise ParseError(f"{path}:{lineno}: expected 'i,j', got {row}")
            try:
                i, j = int(row[0]), int(row[1])
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: non-integer edge {row}") from exc
            if not (1 <= i <= n_views and 1 <= j <= n_views) or i == j:
                raise ParseError(f"{path}:{lineno}: invalid edge {i},{j}")
            a[i - 1, j - 1] = a[j - 1, i - 1] = 1.0
    return ViewGraph(a)


def write_adjacency_csv(graph: ViewGraph, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        n = graph.n_views
        for i in range(n):
            for j in range(i + 1, n):
                if graph.adjacency[i, j] != 0:
                    writer.writerow([i + 1, j + 1])
