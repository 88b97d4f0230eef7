"""Truncated tensor grid shared by the 2D solver and the particle estimators.

``x`` lives on nodes ``i*dx`` (node 0 carries the absorbing value), ``y`` on
cell centers ``(j + 1/2) dy``, so the degenerate edge ``y = 0`` is a cell
face rather than an unknown.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .params import ModelParams


@dataclass(frozen=True)
class GridSpec:
    x_max: float
    n_x: int
    y_max: float
    n_y: int
    dt: float

    def __post_init__(self):
        if not (self.x_max > 0 and self.y_max > 0 and self.dt > 0):
            raise ValueError("x_max, y_max and dt must be positive")
        if self.n_x < 4 or self.n_y < 4:
            raise ValueError("need at least 4 cells per axis")

    @property
    def dx(self) -> float:
        return self.x_max / self.n_x

    @property
    def dy(self) -> float:
        return self.y_max / self.n_y

    @property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, self.x_max, self.n_x + 1)

    @property
    def y(self) -> np.ndarray:
        return (np.arange(self.n_y) + 0.5) * self.dy

    @property
    def y_faces(self) -> np.ndarray:
        return np.arange(self.n_y + 1) * self.dy

    @property
    def x_weights(self) -> np.ndarray:
        w = np.full(self.n_x + 1, self.dx)
        w[0] = w[-1] = 0.5 * self.dx
        return w

    @property
    def x_edges(self) -> np.ndarray:
        """Boundaries of the node control volumes, length ``n_x + 2``."""
        e = (np.arange(self.n_x + 2) - 0.5) * self.dx
        e[0], e[-1] = 0.0, self.x_max
        return e

    def integrate(self, u: np.ndarray) -> np.ndarray:
        """Quadrature over the last two axes ``(x, y)``."""
        return np.einsum("...ij,i->...", u, self.x_weights) * self.dy

    def refine(self, factor: int = 2, dt_factor: int | None = None) -> "GridSpec":
        dt_factor = factor if dt_factor is None else dt_factor
        return GridSpec(self.x_max, self.n_x * factor, self.y_max, self.n_y * factor, self.dt / dt_factor)

    def to_dict(self) -> dict:
        return asdict(self)


def default_y_max(p: ModelParams) -> float:
    """``theta`` plus ten stationary standard deviations of the CIR law."""
    return p.theta + 10.0 * p.xi * math.sqrt(p.theta / (2.0 * p.k))


def cumulative_2d(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Bivariate CDF ``F(x_i, y_j+1/2)`` by cumulative quadrature on the grid."""
    return np.cumsum(np.cumsum(u * grid.x_weights[:, None] * grid.dy, axis=0), axis=1)
