"""Ghost-point extrapolation operators.

Irregular-node data are carried into the two ghost layers by constant
extension along the outward normal (steady state of u_t + n.grad u = 0,
first-order upwind). Extending every nodal basis function gives a sparse
matrix A (ghost x irregular); combining A with diagonal geometric factors
gives explicit linear maps from irregular values to ghost values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import GeometryFields, GridClassification, LevelSetField


class ExtensionError(RuntimeError):
    pass


DROP_TOL = 1e-14


@dataclass(frozen=True)
class UpwindStencil:
    """Steady-state weights of the upwind transport at ghost nodes:
    u_g = (W_gg u_ghost + W_gi u_irregular)_g / s_g."""

    w_gg: sp.csr_matrix
    w_gi: sp.csr_matrix
    s: np.ndarray
    fallback: np.ndarray  # ghost rows that needed the fallback neighbour rule


def upwind_stencil(cls: GridClassification, gf: GeometryFields) -> UpwindStencil:
    grid = cls.grid
    nx = grid.nx
    phi = gf.phi.ravel()
    ghost = cls.ghost_order
    irr = cls.irregular_order
    band = (cls.irregular | cls.ghost).ravel()
    gpos = np.full(grid.size, -1)
    gpos[ghost] = np.arange(ghost.size)
    ipos = np.full(grid.size, -1)
    ipos[irr] = np.arange(irr.size)
    n_x = gf.normal[0].ravel()[ghost]
    n_y = gf.normal[1].ravel()[ghost]
    if not (np.all(np.isfinite(n_x)) and np.all(np.isfinite(n_y))):
        raise ExtensionError("normals undefined at some ghost nodes; widen the geometry band")

    ny = grid.ny

    def neighbour(k, di, dj):
        i, j = k % nx + di, k // nx + dj
        if 0 <= i < nx and 0 <= j < ny and band[j * nx + i]:
            return j * nx + i
        return None

    rows, cols, vals, to_ghost = [], [], [], []
    s = np.zeros(ghost.size)
    fallback = []
    for r, (k, ax, ay) in enumerate(zip(ghost, n_x, n_y)):
        picks = []
        # inflow comes from the side opposite to the outward normal
        if ax != 0:
            nb = neighbour(k, -1 if ax > 0 else 1, 0)
            if nb is not None and phi[nb] < phi[k]:
                picks.append((nb, abs(ax)))
        if ay != 0:
            nb = neighbour(k, 0, -1 if ay > 0 else 1)
            if nb is not None and phi[nb] < phi[k]:
                picks.append((nb, abs(ay)))
        if not picks:
            cand = [m for m in (neighbour(k, *d) for d in ((1, 0), (-1, 0), (0, 1), (0, -1)))
                    if m is not None]
            nb = min(cand, key=lambda m: (phi[m], m))
            picks = [(nb, 1.0)]
            fallback.append(r)
        for nb, w in picks:
            rows.append(r)
            vals.append(w)
            if gpos[nb] >= 0:
                cols.append(gpos[nb])
                to_ghost.append(True)
            else:
                cols.append(ipos[nb])
                to_ghost.append(False)
            s[r] += w
    rows, cols, vals, to_ghost = map(np.asarray, (rows, cols, vals, to_ghost))
    ng, ni = ghost.size, irr.size
    w_gg = sp.csr_matrix((vals[to_ghost], (rows[to_ghost], cols[to_ghost])), shape=(ng, ng))
    w_gi = sp.csr_matrix((vals[~to_ghost], (rows[~to_ghost], cols[~to_ghost])), shape=(ng, ni))
    return UpwindStencil(w_gg, w_gi, s, np.asarray(fallback, int))


def _pseudo_time(stencil: UpwindStencil, source, tol: float, max_sweeps: int, dense: bool):
    """Explicit upwind pseudo-time iteration with dtau = h/2, updating only
    ghost values; `source` = W_gi @ irregular data (vector or matrix)."""
    s = stencil.s
    if dense:
        u = np.zeros(source.shape)
        scale = s if u.ndim == 1 else s[:, None]
    else:
        u = sp.csr_matrix(source.shape)
        scale = sp.diags(s)
    resid = np.inf
    for sweep in range(1, max_sweeps + 1):
        if dense:
            du = 0.5 * (stencil.w_gg @ u + source - scale * u)
            resid = float(np.max(np.abs(du))) if du.size else 0.0
        else:
            du = 0.5 * (stencil.w_gg @ u + source - scale @ u)
            resid = float(abs(du).max()) if du.nnz else 0.0
        u = u + du
        if resid < tol:
            return u, sweep
    raise ExtensionError(f"constant extension not converged after {max_sweeps} sweeps "
                         f"(max update {resid:.3e})")


def extend_field(values_at_irregular, cls: GridClassification, gf: GeometryFields,
                 tol: float = 1e-12, max_sweeps: int = 200,
                 stencil: UpwindStencil | None = None) -> np.ndarray:
    """Constant extension of irregular-node values to both ghost layers."""
    st = upwind_stencil(cls, gf) if stencil is None else stencil
    v = np.asarray(values_at_irregular, float)
    if v.shape[0] != st.w_gi.shape[1]:
        raise ExtensionError(f"expected {st.w_gi.shape[1]} irregular values, got {v.shape[0]}")
    u, _ = _pseudo_time(st, st.w_gi @ v, tol, max_sweeps, dense=True)
    return u


@dataclass(frozen=True)
class ExtensionMatrix:
    entries: sp.csr_matrix  # ghost_order rows x irregular_order columns
    sweeps: int

    @property
    def n_ghost(self) -> int:
        return self.entries.shape[0]

    @property
    def n_irregular(self) -> int:
        return self.entries.shape[1]


def build_extension_matrix(cls: GridClassification, gf: GeometryFields, tol: float = 1e-12,
                           max_sweeps: int = 200) -> ExtensionMatrix:
    """Column k is the extension of the k-th irregular nodal basis function.

    All columns are advanced together: the iteration is linear and acts on
    each column independently, so this is the same as extending them one by
    one.
    """
    st = upwind_stencil(cls, gf)
    try:
        A, sweeps = _pseudo_time(st, st.w_gi.tocsr(), tol, max_sweeps, dense=False)
    except ExtensionError as exc:
        col = _worst_column(st, tol, max_sweeps)
        raise ExtensionError(f"{exc} [column {col}]") from exc
    A = sp.csr_matrix(A)
    A.data[np.abs(A.data) < DROP_TOL] = 0.0
    A.eliminate_zeros()
    A.sort_indices()
    return ExtensionMatrix(A, sweeps)


def _worst_column(st, tol, max_sweeps):
    ni = st.w_gi.shape[1]
    for k in range(ni):
        e = np.zeros(ni)
        e[k] = 1.0
        try:
            _pseudo_time(st, st.w_gi @ e, tol, max_sweeps, dense=True)
        except ExtensionError:
            return k
    return -1


@dataclass(frozen=True)
class DiagonalFactors:
    c: np.ndarray  # per irregular node: kappa - phi (grad kappa . n)
    gain: np.ndarray  # per irregular node: 1/(phi - c phi^2/2)
    phi_irregular: np.ndarray
    phi_ghost: np.ndarray


def build_diagonal_factors(cls: GridClassification, ls: LevelSetField,
                           gf: GeometryFields) -> DiagonalFactors:
    """Boundary-projected curvature c and the normal-derivative gain g.

    c approximates kappa(x*) by one Taylor step along the normal; g u is the
    O(h^2) normal derivative at x* for data vanishing on the boundary with
    vanishing boundary Laplacian.
    """
    phi = ls.phi.ravel()
    irr = cls.irregular_order
    p = phi[irr]
    kap = gf.kappa.ravel()[irr]
    c = kap - p * gf.kappa_normal_deriv
    denom = p * (1.0 - 0.5 * c * p)
    bad = np.abs(denom) <= 1e-14 * cls.grid.h
    if bad.any() or not np.all(np.isfinite(denom)):
        k = irr[np.argmax(bad | ~np.isfinite(denom))]
        i, j = cls.grid.unflat(k)
        raise ExtensionError(f"ghost gain blows up at irregular node (i={int(i)}, j={int(j)})")
    pg = phi[cls.ghost_order]
    if np.any(pg < -cls.pin_tol):
        raise ExtensionError("ghost node found inside the domain")
    return DiagonalFactors(c, 1.0 / denom, p, pg)


@dataclass(frozen=True)
class GhostMap:
    matrix: sp.csr_matrix  # ghost_order rows x irregular_order columns
    order: str  # "linear" or "cubic"


def assemble_ghost_map(A: ExtensionMatrix, f: DiagonalFactors, order: str = "cubic") -> GhostMap:
    """linear: Phi A diag(1/phi_irr); cubic: Phi (A - Phi A C / 2) G."""
    ng, ni = A.entries.shape
    if f.phi_ghost.size != ng or f.c.size != ni:
        raise ExtensionError(f"factor sizes ({f.phi_ghost.size}, {f.c.size}) do not match "
                             f"extension matrix {A.entries.shape}")
    Phi = sp.diags(f.phi_ghost)
    if order == "linear":
        M = Phi @ A.entries @ sp.diags(1.0 / f.phi_irregular)
    elif order == "cubic":
        AC = A.entries @ sp.diags(f.c)
        M = Phi @ (A.entries - 0.5 * (Phi @ AC)) @ sp.diags(f.gain)
    else:
        raise ExtensionError(f"unknown ghost map order {order!r}")
    M = sp.csr_matrix(M)
    M.sort_indices()
    return GhostMap(M, order)


# ---------------------------------------------------------------------------
# sparse triplet text format


def write_triplets(matrix, path, header: str = "") -> None:
    """`# comment` lines, then `nrows ncols nnz`, then `row col value` lines."""
    m = sp.coo_matrix(matrix)
    order = np.lexsort((m.col, m.row))
    with open(path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write(f"{m.shape[0]} {m.shape[1]} {m.nnz}\n")
        for r, c, v in zip(m.row[order], m.col[order], m.data[order]):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")


def read_triplets(path) -> sp.csr_matrix:
    with open(path) as fh:
        lines = [ln for ln in fh if ln.strip() and not ln.startswith("#")]
    nr, nc, nnz = (int(t) for t in lines[0].split())
    if len(lines) - 1 != nnz:
        raise ValueError(f"{path}: header announces {nnz} entries, found {len(lines) - 1}")
    if nnz == 0:
        return sp.csr_matrix((nr, nc))
    data = np.array([ln.split() for ln in lines[1:]], dtype=object)
    rows = data[:, 0].astype(int)
    cols = data[:, 1].astype(int)
    vals = data[:, 2].astype(float)
    return sp.csr_matrix((vals, (rows, cols)), shape=(nr, nc))
