"""Voronoi assignment of fitted atoms to true atoms, and the two losses.

Every fitted atom is assigned to its nearest true atom; ties go to the
smallest true index. Distances are Frobenius norms, either on the
concatenated raw factors (w1_i, w2) — the nonlinear-activation loss D1 — or
on the product matrices w2 @ w1_i, which is what the linear-activation loss
D2 can identify (rescaling w1 by c and w2 by 1/c leaves products unchanged).

Both losses share one structure over the cells: an absolute weight-mass
mismatch per true atom, plus parameter discrepancies that enter linearly for
singleton cells and squared for cells holding several fitted atoms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, ShapeError
from .model import MixingMeasure

__all__ = [
    "VoronoiAssignment",
    "voronoi_assign",
    "voronoi_loss_d1",
    "voronoi_loss_d2",
]


@dataclass(frozen=True)
class VoronoiAssignment:
    """cells[j] lists the fitted-atom indices nearest to true atom j."""

    cells: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        flat = [i for cell in self.cells for i in cell]
        if len(flat) != len(set(flat)):
            raise DomainError("cells must be disjoint")

    @property
    def num_fitted(self) -> int:
        return sum(len(cell) for cell in self.cells)


def _check_compatible(G: MixingMeasure, G_star: MixingMeasure) -> None:
    if G.rank != G_star.rank or G.dim != G_star.dim:
        raise ShapeError(
            f"measures disagree on (rank, dim): ({G.rank}, {G.dim}) vs "
            f"({G_star.rank}, {G_star.dim})"
        )


def _distances(G: MixingMeasure, G_star: MixingMeasure, metric: str) -> np.ndarray:
    """(ell, L) matrix of fitted-to-true atom distances."""
    if metric == "atoms":
        d_w1 = np.linalg.norm(
            G.w1[:, None, :, :] - G_star.w1[None, :, :, :], axis=(2, 3)
        )
        d_w2 = np.linalg.norm(G.w2 - G_star.w2)
        return np.sqrt(d_w1**2 + d_w2**2)
    if metric == "products":
        p = G.products()
        p_star = G_star.products()
        return np.linalg.norm(p[:, None, :, :] - p_star[None, :, :, :], axis=(2, 3))
    raise DomainError(f"unknown metric {metric!r}")


def voronoi_assign(
    G: MixingMeasure, G_star: MixingMeasure, metric: str = "atoms"
) -> VoronoiAssignment:
    """Nearest-true-atom partition of the fitted atoms."""
    _check_compatible(G, G_star)
    dist = _distances(G, G_star, metric)
    nearest = np.argmin(dist, axis=1)  # argmin takes the smallest index on ties
    cells = tuple(
        tuple(int(i) for i in np.nonzero(nearest == j)[0])
        for j in range(G_star.num_atoms)
    )
    return VoronoiAssignment(cells=cells)


def _cell_loss(
    weights: np.ndarray,
    weights_star: np.ndarray,
    cells: tuple[tuple[int, ...], ...],
    param_dist: np.ndarray,
) -> float:
    """Shared three-term structure; ``param_dist[i, j]`` is the discrepancy norm."""
    loss = 0.0
    for j, cell in enumerate(cells):
        mass = sum(weights[i] for i in cell)
        loss += abs(mass - weights_star[j])
        if len(cell) == 1:
            for i in cell:
                loss += weights[i] * param_dist[i, j]
        elif len(cell) > 1:
            for i in cell:
                loss += weights[i] * param_dist[i, j] ** 2
    return float(loss)


def voronoi_loss_d1(
    G: MixingMeasure,
    G_star: MixingMeasure,
    assignment: VoronoiAssignment | None = None,
) -> float:
    """Loss on the raw factors: ||w1_i - w1*_j|| and ||w2 - w2*|| terms."""
    _check_compatible(G, G_star)
    if assignment is None:
        assignment = voronoi_assign(G, G_star, metric="atoms")
    d_w1 = np.linalg.norm(G.w1[:, None, :, :] - G_star.w1[None, :, :, :], axis=(2, 3))
    d_w2 = np.linalg.norm(G.w2 - G_star.w2)
    loss = 0.0
    weights = G.weights()
    weights_star = G_star.weights()
    for j, cell in enumerate(assignment.cells):
        mass = sum(weights[i] for i in cell)
        loss += abs(mass - weights_star[j])
        if len(cell) == 1:
            for i in cell:
                loss += weights[i] * (d_w1[i, j] + d_w2)
        elif len(cell) > 1:
            for i in cell:
                loss += weights[i] * (d_w1[i, j] ** 2 + d_w2**2)
    return float(loss)


def voronoi_loss_d2(
    G: MixingMeasure,
    G_star: MixingMeasure,
    assignment: VoronoiAssignment | None = None,
) -> float:
    """Loss on the product matrices ||w2 w1_i - w2* w1*_j||, linear setting."""
    _check_compatible(G, G_star)
    if assignment is None:
        assignment = voronoi_assign(G, G_star, metric="products")
    dist = _distances(G, G_star, metric="products")
    return _cell_loss(G.weights(), G_star.weights(), assignment.cells, dist)
