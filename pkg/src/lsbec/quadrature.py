"""Cell-based quadrature on level-set domains.

Uncut cells use the trapezoidal rule. Cut cells are split along the SW-NE
diagonal; on each triangle phi is linearised, the phi < 0 part (a triangle
or a quadrilateral split in two) is integrated with the three edge-midpoint
rule applied to the bilinear interpolant of the corner values. Everything is
accumulated into per-node weights so an integral is a dot product.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Grid2D, GridClassification, LevelSetField

CELL_EXTERIOR, CELL_BOUNDARY, CELL_INTERIOR = 0, 1, 2


class NormalizationError(ValueError):
    def __init__(self, norm):
        super().__init__(f"field is not normalised: ||u||_2 = {norm!r}")
        self.norm = norm


@dataclass(frozen=True)
class QuadratureWeights:
    grid_weights: np.ndarray  # (ny, nx), nonzero at corners of cells meeting the domain
    cell_class: np.ndarray  # (ny-1, nx-1)
    interior: np.ndarray | None = None  # weights aligned with interior_order

    @property
    def weight(self) -> np.ndarray:
        return self.interior if self.interior is not None else self.grid_weights

    @property
    def total(self) -> float:
        """Area of the piecewise-linear domain (all corner weights)."""
        return float(self.grid_weights.sum())


def _clip_triangle(P, f):
    """Sub-triangles of triangle P (3x2) where the linear interpolant of f is < 0."""
    neg = f < 0
    k = int(neg.sum())
    if k == 0:
        return []
    if k == 3:
        return [P]

    def cut(a, b):
        t = f[a] / (f[a] - f[b])
        return P[a] + t * (P[b] - P[a])

    if k == 1:
        a = int(np.flatnonzero(neg)[0])
        b, c = (a + 1) % 3, (a + 2) % 3
        return [np.array([P[a], cut(a, b), cut(a, c)])]
    c = int(np.flatnonzero(~neg)[0])
    a, b = (c + 1) % 3, (c + 2) % 3
    pa, pb = cut(a, c), cut(b, c)
    return [np.array([P[a], P[b], pb]), np.array([P[a], pb, pa])]


def build_weights(grid: Grid2D, ls: LevelSetField,
                  cls: GridClassification | None = None) -> QuadratureWeights:
    h = grid.h
    phi = ls.phi
    corners = np.stack([phi[:-1, :-1], phi[:-1, 1:], phi[1:, :-1], phi[1:, 1:]])  # SW SE NW NE
    n_in = (corners < 0).sum(axis=0)
    cell_class = np.full(n_in.shape, CELL_BOUNDARY, dtype=np.int8)
    cell_class[n_in == 4] = CELL_INTERIOR
    cell_class[n_in == 0] = CELL_EXTERIOR

    w = np.zeros(grid.shape)
    full = (cell_class == CELL_INTERIOR) * (0.25 * h * h)
    w[:-1, :-1] += full
    w[:-1, 1:] += full
    w[1:, :-1] += full
    w[1:, 1:] += full

    # unit-cell coordinates of SW, SE, NW, NE
    unit = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    tri_split = ((0, 1, 3), (0, 3, 2))
    for j, i in np.argwhere(cell_class == CELL_BOUNDARY):
        f = corners[:, j, i]
        acc = np.zeros(4)
        for tri in tri_split:
            for T in _clip_triangle(unit[list(tri)], f[list(tri)]):
                area = 0.5 * abs((T[1, 0] - T[0, 0]) * (T[2, 1] - T[0, 1])
                                 - (T[2, 0] - T[0, 0]) * (T[1, 1] - T[0, 1]))
                if area == 0:
                    continue
                mids = 0.5 * (T + T[[1, 2, 0]])
                xi, eta = mids[:, 0], mids[:, 1]
                bil = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta])
                acc += bil.sum(axis=1) * (area / 3.0)
        acc *= h * h
        w[j, i] += acc[0]
        w[j, i + 1] += acc[1]
        w[j + 1, i] += acc[2]
        w[j + 1, i + 1] += acc[3]
    w.setflags(write=False)
    interior = None
    if cls is not None:
        interior = w.ravel()[cls.interior_order].copy()
        interior.setflags(write=False)
    return QuadratureWeights(w, cell_class, interior)


def integrate(field, w: QuadratureWeights) -> float:
    """Sum of w_i f_i. Interior-ordered vectors use the interior weights
    (exterior corner values taken as 0); full-grid arrays use all weights."""
    f = np.asarray(field, float)
    if w.interior is not None and f.shape == w.interior.shape:
        return float(w.interior @ f)
    if f.shape == w.grid_weights.shape:
        return float(np.sum(w.grid_weights * f))
    raise ValueError(f"field shape {f.shape} matches neither the interior nor the grid")


def lp_norm(field, w: QuadratureWeights, p: int = 2) -> float:
    if p not in (2, 4, 6):
        raise ValueError("p must be 2, 4 or 6")
    return integrate(np.abs(np.asarray(field, float)) ** p, w) ** (1.0 / p)


def chemical_potential(u, H_applied, w: QuadratureWeights, norm_tol: float = 1e-8) -> float:
    nrm = lp_norm(u, w, 2)
    if abs(nrm - 1.0) > norm_tol:
        raise NormalizationError(nrm)
    return integrate(np.asarray(u) * np.asarray(H_applied), w)


def energy(mu: float, u, w: QuadratureWeights, beta=0.0, gamma=0.0, delta=0.0,
           grads=None, scale: float = 1.0) -> float:
    """Ground-state energy from the chemical potential:

    E = mu - beta/2 |u|_4^4 - 2 gamma/3 |u|_6^6 - delta/2 int |grad(u^2)|^2.

    `grads` = (gx, gy) folded gradient operators, required when delta != 0;
    grad(u^2) is taken with ghost values (M u)^2.
    """
    u = np.asarray(u, float)
    u2 = u * u
    E = mu
    if beta:
        E -= 0.5 * beta * integrate(u2 * u2, w)
    if gamma:
        E -= (2.0 / 3.0) * gamma * integrate(u2 ** 3, w)
    if delta:
        if grads is None:
            raise ValueError("gradient operators are required for the higher-order interaction term")
        tot = np.zeros_like(u)
        for G in grads:
            g = G.ghost_values(u)
            d = G.apply_with_ghosts(u2, g * g)
            tot += d * d
        E -= 0.5 * delta * integrate(tot, w)
    return E
