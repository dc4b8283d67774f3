"""Exact Bayes updates on a dense fixed grid.

Reference posterior for validating the particle filter: the disk prior is
discretized on a regular grid and every cell is reweighted by the same
outcome likelihoods the filter uses.  No resampling, no approximation
beyond the mesh itself.
"""

from __future__ import annotations

import numpy as np

from .model import NoiseModel, Outcome, PhasePoint

__all__ = ["GridPosterior"]


class GridPosterior:
    """Uniform disk prior held on an n x n mesh over [-R0, R0]^2; cells
    outside the disk carry zero probability."""

    def __init__(self, radius_R0: float, n_points: int = 301):
        if radius_R0 <= 0.0:
            raise ValueError(f"radius_R0 must be positive, got {radius_R0}")
        if n_points < 2:
            raise ValueError(f"need at least a 2x2 grid, got {n_points}")
        axis = np.linspace(-radius_R0, radius_R0, n_points)
        xx, yy = np.meshgrid(axis, axis)
        inside = (xx * xx + yy * yy) < radius_R0 * radius_R0
        self.x = xx[inside].ravel()
        self.y = yy[inside].ravel()
        self.prob = np.full(self.x.shape[0], 1.0 / self.x.shape[0])

    @property
    def n_cells(self) -> int:
        return self.x.shape[0]

    def update(self, outcome: Outcome, beta: PhasePoint, noise: NoiseModel) -> None:
        """Multiply in the outcome likelihood cell by cell and renormalize."""
        zr = self.x + beta.re
        zi = self.y + beta.im
        neg_x2 = -(zr * zr + zi * zi)
        if outcome is Outcome.VACUUM:
            like = np.exp(neg_x2)
        else:
            like = -np.expm1(neg_x2)
        p = noise.p_error
        if p > 0.0:
            like *= 1.0 - 2.0 * p
            like += p
        self.prob *= like
        total = float(np.sum(self.prob))
        if total <= 0.0:
            raise ValueError("grid posterior vanished: data contradict the prior support")
        self.prob *= 1.0 / total

    def mean(self) -> PhasePoint:
        return PhasePoint(
            float(np.dot(self.prob, self.x)), float(np.dot(self.prob, self.y))
        )
