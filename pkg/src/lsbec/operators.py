"""Ghost-folded finite-difference Laplacian and gradient over interior
unknowns, potentials, and the discrete Hamiltonian."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .extension import GhostMap
from .geometry import Grid2D, GridClassification


class OperatorError(RuntimeError):
    pass


LAPLACIAN_STENCILS = {
    2: ((-1, 1.0), (0, -2.0), (1, 1.0)),
    4: ((-2, -1 / 12), (-1, 4 / 3), (0, -5 / 2), (1, 4 / 3), (2, -1 / 12)),
}
GRADIENT_STENCILS = {
    2: ((-1, -0.5), (1, 0.5)),
    4: ((-2, 1 / 12), (-1, -8 / 12), (1, 8 / 12), (2, -1 / 12)),
}


@dataclass(frozen=True)
class SparseOperator:
    """L_folded = L_int + L_ghost M P, where P picks irregular nodes out of
    the interior vector and M is the ghost map. The unfolded parts are kept
    so the stencil can also be applied with nonlinear ghost data."""

    matrix: sp.csr_matrix  # interior x interior
    order: int
    kind: str
    interior_part: sp.csr_matrix  # interior x interior
    ghost_part: sp.csr_matrix  # interior x ghost
    ghost_map: GhostMap
    irregular_in_interior: np.ndarray  # positions of irregular nodes inside the interior vector

    def __matmul__(self, u):
        return self.matrix @ u

    def ghost_values(self, u):
        return self.ghost_map.matrix @ u[self.irregular_in_interior]

    def apply_with_ghosts(self, u, ghost):
        return self.interior_part @ u + self.ghost_part @ ghost


def _stencil_rows(grid: Grid2D, cls: GridClassification, taps):
    """Full stencil over interior rows; taps = [(di, dj, w)], weights already scaled."""
    interior = cls.interior_order
    i, j = grid.unflat(interior)
    rows, cols, vals = [], [], []
    for di, dj, w in taps:
        ii, jj = i + di, j + dj
        if np.any((ii < 0) | (ii >= grid.nx) | (jj < 0) | (jj >= grid.ny)):
            raise OperatorError("stencil leaves the computational box")
        rows.append(np.arange(interior.size))
        cols.append(jj * grid.nx + ii)
        vals.append(np.full(interior.size, w))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def _fold(grid, cls, ghost_map: GhostMap, taps, order, kind) -> SparseOperator:
    rows, cols, vals = _stencil_rows(grid, cls, taps)
    nint = cls.interior_order.size
    int_pos = np.full(grid.size, -1)
    int_pos[cls.interior_order] = np.arange(nint)
    ghost = cls.ghost_order
    g_pos = np.full(grid.size, -1)
    g_pos[ghost] = np.arange(ghost.size)
    is_int = int_pos[cols] >= 0
    is_g = g_pos[cols] >= 0
    if np.any(~(is_int | is_g) & (vals != 0)):
        k = cols[~(is_int | is_g)][0]
        i, j = grid.unflat(k)
        raise OperatorError(f"stencil reaches node (i={int(i)}, j={int(j)}) that is neither "
                            "interior nor in the ghost layers")
    if order == 2 and np.any(cls.ghost2.ravel()[cols[is_g]]):
        raise OperatorError("second-order stencil reached the second ghost layer")
    L_int = sp.csr_matrix((vals[is_int], (rows[is_int], int_pos[cols[is_int]])), shape=(nint, nint))
    L_g = sp.csr_matrix((vals[is_g], (rows[is_g], g_pos[cols[is_g]])), shape=(nint, ghost.size))
    irr_pos = int_pos[cls.irregular_order]
    M = ghost_map.matrix
    if M.shape != (ghost.size, irr_pos.size):
        raise OperatorError(f"ghost map shape {M.shape} does not match the classification")
    P = sp.csr_matrix((np.ones(irr_pos.size), (np.arange(irr_pos.size), irr_pos)),
                      shape=(irr_pos.size, nint))
    folded = sp.csr_matrix(L_int + L_g @ M @ P)
    folded.sort_indices()
    return SparseOperator(folded, order, kind, L_int, L_g, ghost_map, irr_pos)


def assemble_laplacian(grid: Grid2D, cls: GridClassification, ghost_map: GhostMap,
                       order: int = 4) -> SparseOperator:
    """Five-point (order 2) or wide nine-point (order 4) approximation of +Laplacian."""
    if order not in LAPLACIAN_STENCILS:
        raise OperatorError(f"unsupported order {order}")
    h2 = grid.h ** 2
    taps = {}
    for d, w in LAPLACIAN_STENCILS[order]:
        taps[(d, 0)] = taps.get((d, 0), 0.0) + w / h2
        taps[(0, d)] = taps.get((0, d), 0.0) + w / h2
    return _fold(grid, cls, ghost_map, [(di, dj, w) for (di, dj), w in taps.items()],
                 order, "laplacian")


def assemble_gradient(grid: Grid2D, cls: GridClassification, ghost_map: GhostMap,
                      order: int = 4) -> tuple[SparseOperator, SparseOperator]:
    if order not in GRADIENT_STENCILS:
        raise OperatorError(f"unsupported order {order}")
    st = GRADIENT_STENCILS[order]
    gx = _fold(grid, cls, ghost_map, [(d, 0, w / grid.h) for d, w in st], order, "gradient-x")
    gy = _fold(grid, cls, ghost_map, [(0, d, w / grid.h) for d, w in st], order, "gradient-y")
    return gx, gy


# ---------------------------------------------------------------------------
# potentials


POTENTIAL_KINDS = ("harmonic", "harmonic-lattice", "box", "gaussian-obstacle",
                   "quantum-pendulum", "ellipse-shaped", "custom-expression")


@dataclass(frozen=True)
class Potential:
    """Named trap potential V(x, y) >= 0."""

    kind: str
    params: tuple = ()
    expression: str | None = None

    def __post_init__(self):
        if self.kind not in POTENTIAL_KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")

    def __call__(self, x, y):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        p = self.params
        if self.kind == "harmonic":
            return 0.5 * (x * x + y * y)
        if self.kind == "harmonic-lattice":
            strength = p[0] if p else 50.0
            return 0.5 * (x * x + y * y) + strength * (np.sin(np.pi * x) ** 2 + np.sin(np.pi * y) ** 2)
        if self.kind == "box":
            return np.zeros(np.broadcast(x, y).shape)
        if self.kind == "gaussian-obstacle":
            amp, x0, y0 = (p + (4.0, -0.35, 0.0)[len(p):])[:3]
            return amp * np.exp(-2.0 * (x - x0) ** 2 - (y - y0) ** 2)
        if self.kind == "quantum-pendulum":
            return 1.0 - np.cos(2 * np.pi * np.hypot(x, y))
        if self.kind == "ellipse-shaped":
            amp, a, b, off = (p + (4.0, 1.5, 2.0, 0.3)[len(p):])[:4]
            return amp * (x * x / b**2 + y * y / a**2 - off) ** 2
        from .config import compile_expression
        return np.broadcast_to(compile_expression(self.expression)(x, y),
                               np.broadcast(x, y).shape).astype(float)


@dataclass(frozen=True)
class PotentialField:
    values: np.ndarray  # per interior node
    descriptor: Potential


def sample_potential(grid: Grid2D, cls: GridClassification, potential: Potential) -> PotentialField:
    X, Y = grid.mesh()
    v = np.asarray(potential(X, Y), float).ravel()[cls.interior_order]
    if np.any(v < 0):
        raise ValueError(f"potential {potential.kind} is negative inside the domain "
                         f"(min {v.min():.3e}); V >= 0 is required")
    return PotentialField(v, potential)


def apply_hamiltonian(u, L: SparseOperator, V, beta=0.0, gamma=0.0, delta=0.0):
    """(-L/2 + V + beta u^2 + gamma u^4 - delta Lap(u^2)) u.

    Lap(u^2) uses the same stencil with ghost values (M u)^2.
    """
    u = np.asarray(u, float)
    v = V.values if isinstance(V, PotentialField) else np.asarray(V, float)
    if u.shape != v.shape or u.shape[0] != L.matrix.shape[0]:
        raise ValueError(f"shape mismatch: u {u.shape}, V {v.shape}, L {L.matrix.shape}")
    u2 = u * u
    out = -0.5 * (L.matrix @ u) + (v + beta * u2 + gamma * u2 * u2) * u
    if delta:
        g = L.ghost_values(u)
        out -= delta * L.apply_with_ghosts(u2, g * g) * u
    return out
