"""Cartesian grid, signed-distance shapes, node classification and
boundary geometry (normals, curvature) near the zero level set."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class GeometryError(ValueError):
    """Invalid grid/shape configuration or degenerate level-set data."""


class ProjectionError(GeometryError):
    def __init__(self, point, residual):
        super().__init__(
            f"closest-point projection failed to converge for point {tuple(point)} "
            f"(residual {residual:.3e})"
        )
        self.point = tuple(point)
        self.residual = residual


# ---------------------------------------------------------------------------
# grid


@dataclass(frozen=True)
class Grid2D:
    origin: tuple[float, float]
    h: float
    nx: int
    ny: int

    def __post_init__(self):
        if not self.h > 0:
            raise GeometryError(f"grid spacing must be positive, got {self.h}")
        if self.nx < 3 or self.ny < 3:
            raise GeometryError(f"grid needs at least 3 nodes per axis, got {self.nx}x{self.ny}")

    @classmethod
    def from_box(cls, xmin: float, xmax: float, ymin: float, ymax: float, h: float) -> "Grid2D":
        """Grid of spacing `h` centred in the box. When the box width is a
        multiple of `h` the nodes hit both box edges."""

        def count(width):
            n = width / h
            k = round(n)
            return (k if abs(n - k) < 1e-9 * max(1.0, n) else math.floor(n)) + 1

        nx, ny = count(xmax - xmin), count(ymax - ymin)
        ox = 0.5 * (xmin + xmax) - 0.5 * (nx - 1) * h
        oy = 0.5 * (ymin + ymax) - 0.5 * (ny - 1) * h
        return cls((ox, oy), h, nx, ny)

    @property
    def shape(self) -> tuple[int, int]:
        # arrays are indexed [j, i]; flat index j*nx + i is the row-major order
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    def xs(self) -> np.ndarray:
        return self.origin[0] + self.h * np.arange(self.nx)

    def ys(self) -> np.ndarray:
        return self.origin[1] + self.h * np.arange(self.ny)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xs(), self.ys())

    def node(self, i: int, j: int) -> tuple[float, float]:
        return (self.origin[0] + i * self.h, self.origin[1] + j * self.h)

    def flat(self, i, j):
        return np.asarray(j) * self.nx + np.asarray(i)

    def unflat(self, k):
        k = np.asarray(k)
        return k % self.nx, k // self.nx


# ---------------------------------------------------------------------------
# shapes


def _fmt(v: float) -> str:
    return repr(float(v))


class Shape:
    """Base class: `sdf(x, y)` is vectorised and negative inside."""

    def sdf(self, x, y):
        raise NotImplementedError

    def expr(self) -> str:
        raise NotImplementedError


@dataclass(frozen=True)
class Circle(Shape):
    cx: float
    cy: float
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise GeometryError("circle radius must be positive")

    def sdf(self, x, y):
        return np.hypot(np.asarray(x) - self.cx, np.asarray(y) - self.cy) - self.r

    def expr(self):
        return f"circle({_fmt(self.cx)}, {_fmt(self.cy)}, {_fmt(self.r)})"


@dataclass(frozen=True)
class Ellipse(Shape):
    """Axis-aligned ellipse with semi-axis `a` along x and `b` along y."""

    a: float
    b: float
    cx: float = 0.0
    cy: float = 0.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise GeometryError("ellipse semi-axes must be positive")

    def sdf(self, x, y):
        return _ellipse_sdf(np.asarray(x, float) - self.cx, np.asarray(y, float) - self.cy,
                            self.a, self.b)

    def expr(self):
        return f"ellipse({_fmt(self.a)}, {_fmt(self.b)}, {_fmt(self.cx)}, {_fmt(self.cy)})"


@dataclass(frozen=True)
class Rectangle(Shape):
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise GeometryError("rectangle corners must satisfy x0 < x1 and y0 < y1")

    def sdf(self, x, y):
        cx, cy = 0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)
        hx, hy = 0.5 * (self.x1 - self.x0), 0.5 * (self.y1 - self.y0)
        dx = np.abs(np.asarray(x) - cx) - hx
        dy = np.abs(np.asarray(y) - cy) - hy
        outside = np.hypot(np.maximum(dx, 0.0), np.maximum(dy, 0.0))
        return outside + np.minimum(np.maximum(dx, dy), 0.0)

    def expr(self):
        return f"rectangle({_fmt(self.x0)}, {_fmt(self.y0)}, {_fmt(self.x1)}, {_fmt(self.y1)})"


@dataclass(frozen=True)
class LShape(Shape):
    """Box `outer` with the corner-sharing box `removed` cut away.

    The signed distance is exact: distance to the six boundary segments with
    the sign of the point-in-polygon test.
    """

    outer: tuple[float, float, float, float]
    removed: tuple[float, float, float, float]
    vertices: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ox0, oy0, ox1, oy1 = self.outer
        rx0, ry0, rx1, ry1 = self.removed
        if not (ox1 > ox0 and oy1 > oy0 and rx1 > rx0 and ry1 > ry0):
            raise GeometryError("l-shape boxes must have positive size")
        if not (ox0 <= rx0 and rx1 <= ox1 and oy0 <= ry0 and ry1 <= oy1):
            raise GeometryError("removed box must lie inside the outer box")
        at_x = {rx0 == ox0: "lo", rx1 == ox1: "hi"}.get(True)
        at_y = {ry0 == oy0: "lo", ry1 == oy1: "hi"}.get(True)
        if at_x is None or at_y is None or (rx0 == ox0 and rx1 == ox1) or (ry0 == oy0 and ry1 == oy1):
            raise GeometryError("removed box must share exactly one corner with the outer box")
        # walk the outer box counter-clockwise, replacing the shared corner by a notch
        corners = [(ox0, oy0), (ox1, oy0), (ox1, oy1), (ox0, oy1)]
        cut = {("lo", "lo"): 0, ("hi", "lo"): 1, ("hi", "hi"): 2, ("lo", "hi"): 3}[(at_x, at_y)]
        inner_x = rx1 if at_x == "lo" else rx0
        inner_y = ry1 if at_y == "lo" else ry0
        c = corners[cut]

        def on_edge(other):
            return (c[0], inner_y) if other[0] == c[0] else (inner_x, c[1])

        notch = [on_edge(corners[cut - 1]), (inner_x, inner_y), on_edge(corners[(cut + 1) % 4])]
        verts = corners[:cut] + notch + corners[cut + 1:]
        object.__setattr__(self, "vertices", tuple(verts))

    def sdf(self, x, y):
        return _polygon_sdf(np.asarray(x, float), np.asarray(y, float), self.vertices)

    def expr(self):
        o, r = self.outer, self.removed
        return "lshape(" + ", ".join(_fmt(v) for v in (*o, *r)) + ")"


@dataclass(frozen=True)
class HalfPlane(Shape):
    """{p : n.p < c} with unit outward normal n = (nx, ny)/|(nx, ny)|."""

    nx: float
    ny: float
    c: float

    def __post_init__(self):
        if math.hypot(self.nx, self.ny) == 0:
            raise GeometryError("half-plane normal must be nonzero")

    def sdf(self, x, y):
        s = math.hypot(self.nx, self.ny)
        return (self.nx * np.asarray(x) + self.ny * np.asarray(y)) / s - self.c / s

    def expr(self):
        return f"halfplane({_fmt(self.nx)}, {_fmt(self.ny)}, {_fmt(self.c)})"


@dataclass(frozen=True)
class CSGDifference(Shape):
    a: Shape
    b: Shape

    def sdf(self, x, y):
        return np.maximum(self.a.sdf(x, y), -self.b.sdf(x, y))

    def expr(self):
        return f"csg_difference({self.a.expr()}, {self.b.expr()})"


@dataclass(frozen=True)
class CSGIntersection(Shape):
    a: Shape
    b: Shape

    def sdf(self, x, y):
        return np.maximum(self.a.sdf(x, y), self.b.sdf(x, y))

    def expr(self):
        return f"csg_intersection({self.a.expr()}, {self.b.expr()})"


@dataclass(frozen=True)
class AnalyticShape(Shape):
    """User supplied vectorised signed-distance callback."""

    fn: Callable
    name: str = "analytic"

    def sdf(self, x, y):
        return np.asarray(self.fn(np.asarray(x, float), np.asarray(y, float)), float)

    def expr(self):
        raise GeometryError("analytic callback shapes cannot be serialised")


def _polygon_sdf(x, y, verts):
    px, py = np.broadcast_arrays(x, y)
    dist2 = np.full(px.shape, np.inf)
    inside = np.zeros(px.shape, bool)
    n = len(verts)
    for k in range(n):
        (ax, ay), (bx, by) = verts[k], verts[(k + 1) % n]
        ex, ey = bx - ax, by - ay
        wx, wy = px - ax, py - ay
        t = np.clip((wx * ex + wy * ey) / (ex * ex + ey * ey), 0.0, 1.0)
        dx, dy = wx - t * ex, wy - t * ey
        dist2 = np.minimum(dist2, dx * dx + dy * dy)
        # even-odd crossing test
        cond = (ay > py) != (by > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xcross = ax + (py - ay) * ex / (by - ay)
        inside ^= cond & (px < xcross)
    d = np.sqrt(dist2)
    return np.where(inside & (d > 0), -d, d)


def _ellipse_sdf(x, y, a, b, tol=1e-13, max_iter=100):
    """Signed distance to x^2/a^2 + y^2/b^2 = 1 by Newton projection.

    The closest point is q = (a^2 x/(a^2+s), b^2 y/(b^2+s)) where s is the
    root of F(s) = (a x/(a^2+s))^2 + (b y/(b^2+s))^2 - 1, which is convex and
    decreasing on s > -min(a^2, b^2); Newton started left of the root
    converges monotonically.
    """
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    shape = x.shape
    X, Y = np.abs(x).ravel(), np.abs(y).ravel()
    level = (X / a) ** 2 + (Y / b) ** 2 - 1.0
    # coordinates this close to an axis make a^2 + s cancel to zero; snapping
    # them moves the distance by at most the snapped amount (1-Lipschitz)
    snap = 1e-12 * max(a, b)
    X = np.where(X < snap, 0.0, X)
    Y = np.where(Y < snap, 0.0, Y)
    dist = np.empty_like(X)

    on_y0 = Y == 0
    on_x0 = (X == 0) & ~on_y0
    generic = ~(on_y0 | on_x0)

    # points on the x axis
    if on_y0.any():
        xs = X[on_y0]
        d = np.abs(xs - a)
        if a > b:
            qx = a * a * xs / (a * a - b * b)
            ok = qx < a
            qy = b * np.sqrt(np.clip(1 - (qx / a) ** 2, 0, None))
            d = np.where(ok, np.minimum(d, np.hypot(qx - xs, qy)), d)
        # the vertical vertex competes only at the centre
        d = np.where(xs == 0, np.minimum(d, b), d)
        dist[on_y0] = d
    if on_x0.any():
        ys = Y[on_x0]
        d = np.abs(ys - b)
        if b > a:
            qy = b * b * ys / (b * b - a * a)
            ok = qy < b
            qx = a * np.sqrt(np.clip(1 - (qy / b) ** 2, 0, None))
            d = np.where(ok, np.minimum(d, np.hypot(qx, qy - ys)), d)
        dist[on_x0] = d

    if generic.any():
        gx, gy = X[generic], Y[generic]
        ax_, by_ = a * gx, b * gy
        lo = -min(a, b) ** 2
        # F(s0) >= 0 at s0 = max(a x - a^2, b y - b^2)
        s = np.maximum(ax_ - a * a, by_ - b * b)
        s = np.maximum(s, lo + 1e-300)
        res = np.full(gx.shape, np.inf)
        stalled = np.zeros(gx.shape, bool)
        for _ in range(max_iter):
            ra, rb = ax_ / (a * a + s), by_ / (b * b + s)
            F = ra * ra + rb * rb - 1.0
            res = np.abs(F)
            if np.all((res < tol) | stalled):
                break
            dF = -2.0 * (ra * ra / (a * a + s) + rb * rb / (b * b + s))
            step = F / dF
            # at the rounding floor of F the Newton step stops moving s
            stalled = np.abs(step) <= 4 * np.finfo(float).eps * np.maximum(np.abs(s), a * b)
            s = s - step
        else:
            res = np.where(stalled, 0.0, res)
            bad = np.argmax(res)
            if res[bad] >= tol:
                idx = np.flatnonzero(generic)[bad]
                raise ProjectionError((x.ravel()[idx], y.ravel()[idx]), float(res[bad]))
        qx = a * a * gx / (a * a + s)
        qy = b * b * gy / (b * b + s)
        dist[generic] = np.hypot(qx - gx, qy - gy)

    out = np.where(level < 0, -dist, dist)
    return out.reshape(shape)


def signed_distance(shape: Shape, p) -> float:
    return float(shape.sdf(np.float64(p[0]), np.float64(p[1])))


# ---------------------------------------------------------------------------
# level set and classification


@dataclass(frozen=True)
class LevelSetField:
    grid: Grid2D
    phi: np.ndarray  # shape grid.shape, negative inside


def build_level_set(grid: Grid2D, shape: Shape) -> LevelSetField:
    X, Y = grid.mesh()
    phi = np.asarray(shape.sdf(X, Y), float).reshape(grid.shape)
    phi.setflags(write=False)
    return LevelSetField(grid, phi)


@dataclass(frozen=True)
class GridClassification:
    grid: Grid2D
    inside: np.ndarray  # bool mask of unknown nodes
    regular: np.ndarray  # bool masks, shape grid.shape
    irregular: np.ndarray
    ghost1: np.ndarray
    ghost2: np.ndarray
    pinned: np.ndarray  # phi < 0 but within pin_tol of the boundary (part of the ghost sets)
    pin_tol: float

    @property
    def interior(self) -> np.ndarray:
        return self.inside

    @property
    def irregular_order(self) -> np.ndarray:
        return np.flatnonzero(self.irregular)

    @property
    def ghost_order(self) -> np.ndarray:
        return np.flatnonzero(self.ghost1 | self.ghost2)

    @property
    def interior_order(self) -> np.ndarray:
        return np.flatnonzero(self.inside)

    @property
    def ghost(self) -> np.ndarray:
        return self.ghost1 | self.ghost2

    def mask_labels(self) -> np.ndarray:
        lab = np.full(self.grid.shape, "exterior", dtype=object)
        lab[self.regular] = "regular"
        lab[self.irregular] = "irregular"
        lab[self.ghost1] = "ghost1"
        lab[self.ghost2] = "ghost2"
        return lab


def _shift(mask, di, dj, fill=False):
    """out[j, i] = mask[j + dj, i + di]."""
    out = np.full_like(mask, fill)
    ny, nx = mask.shape
    src = mask[max(dj, 0):ny + min(dj, 0), max(di, 0):nx + min(di, 0)]
    out[max(-dj, 0):ny + min(-dj, 0), max(-di, 0):nx + min(-di, 0)] = src
    return out


_NBRS = ((1, 0), (-1, 0), (0, 1), (0, -1))


def classify(grid: Grid2D, ls: LevelSetField, pin_fraction: float = 1e-3) -> GridClassification:
    """Split nodes into regular/irregular interior nodes and two ghost layers.

    Interior nodes closer than pin_fraction*h to the boundary are treated as
    boundary nodes: they join the ghost layers (their extrapolated value is
    O(pin_fraction*h)) instead of becoming unknowns.
    """
    phi = ls.phi
    pin_tol = pin_fraction * grid.h
    inside = phi < -pin_tol
    for w in (inside[:2, :], inside[-2:, :], inside[:, :2], inside[:, -2:]):
        if w.any():
            raise GeometryError("domain touches the computational box: keep at least two "
                                "exterior nodes between the boundary and the box rim")
    all_nb_inside = np.ones_like(inside)
    for di, dj in _NBRS:
        all_nb_inside &= _shift(inside, di, dj)
    regular = inside & all_nb_inside
    irregular = inside & ~all_nb_inside
    outside = ~inside
    near_irr = np.zeros_like(inside)
    for di, dj in _NBRS:
        near_irr |= _shift(irregular, di, dj)
    ghost1 = outside & near_irr
    near_g1 = np.zeros_like(inside)
    for di, dj in _NBRS:
        near_g1 |= _shift(ghost1, di, dj)
    ghost2 = outside & ~ghost1 & near_g1
    pinned = (phi < 0) & ~inside
    for m in (inside, regular, irregular, ghost1, ghost2, pinned):
        m.setflags(write=False)
    return GridClassification(grid, inside, regular, irregular, ghost1, ghost2, pinned, pin_tol)


# ---------------------------------------------------------------------------
# normals and curvature


@dataclass(frozen=True)
class GeometryFields:
    grid: Grid2D
    phi: np.ndarray
    normal: np.ndarray  # (2, ny, nx), NaN outside the band
    kappa: np.ndarray  # (ny, nx), NaN outside the band
    kappa_normal_deriv: np.ndarray  # per irregular node, irregular_order
    band_width: float


def _derivatives(phi, h):
    p = np.pad(phi, 1, mode="reflect", reflect_type="odd")
    c = p[1:-1, 1:-1]
    px = (p[1:-1, 2:] - p[1:-1, :-2]) / (2 * h)
    py = (p[2:, 1:-1] - p[:-2, 1:-1]) / (2 * h)
    pxx = (p[1:-1, 2:] - 2 * c + p[1:-1, :-2]) / h**2
    pyy = (p[2:, 1:-1] - 2 * c + p[:-2, 1:-1]) / h**2
    pxy = (p[2:, 2:] - p[2:, :-2] - p[:-2, 2:] + p[:-2, :-2]) / (4 * h * h)
    return px, py, pxx, pyy, pxy


def geometry_fields(ls: LevelSetField, cls: GridClassification, band_width: float | None = None,
                    curvature_cutoff: float | None = None) -> GeometryFields:
    """Centred-difference normal n = grad(phi)/|grad(phi)| and curvature
    kappa = div(n) on the band |phi| <= band_width (default 3h).

    `curvature_cutoff`, when given, clips |kappa| to curvature_cutoff/h.
    """
    grid = ls.grid
    h = grid.h
    bw = 3 * h if band_width is None else band_width
    phi = ls.phi
    px, py, pxx, pyy, pxy = _derivatives(phi, h)
    g2 = px * px + py * py
    band = np.abs(phi) <= bw
    gnorm = np.sqrt(g2)
    bad = band & (gnorm < 1e-8)
    if bad.any():
        j, i = np.argwhere(bad)[0]
        raise GeometryError(f"degenerate level set: |grad phi| < 1e-8 at node (i={i}, j={j})")
    with np.errstate(divide="ignore", invalid="ignore"):
        nx_ = px / gnorm
        ny_ = py / gnorm
        kappa = (pxx * py * py - 2 * px * py * pxy + pyy * px * px) / g2**1.5
    if curvature_cutoff is not None:
        kappa = np.clip(kappa, -curvature_cutoff / h, curvature_cutoff / h)
    # curvature is needed one node beyond the band for the gradient at irregular nodes
    kx = np.full_like(kappa, np.nan)
    ky = np.full_like(kappa, np.nan)
    kx[:, 1:-1] = (kappa[:, 2:] - kappa[:, :-2]) / (2 * h)
    ky[1:-1, :] = (kappa[2:, :] - kappa[:-2, :]) / (2 * h)
    irr = cls.irregular
    dkn = (kx * nx_ + ky * ny_)[irr]
    if not np.all(np.isfinite(dkn)):
        raise GeometryError("curvature gradient undefined at an irregular node")
    normal = np.stack([np.where(band, nx_, np.nan), np.where(band, ny_, np.nan)])
    kappa_b = np.where(band, kappa, np.nan)
    for arr in (normal, kappa_b, dkn):
        arr.setflags(write=False)
    return GeometryFields(grid, phi, normal, kappa_b, dkn, bw)


def project_to_boundary(p, ls: LevelSetField, gf: GeometryFields) -> tuple[float, float]:
    """x* = x - phi(x) n(x), with phi and n bilinearly interpolated from the
    band nodes surrounding p."""
    grid = ls.grid
    h = grid.h
    fx = (p[0] - grid.origin[0]) / h
    fy = (p[1] - grid.origin[1]) / h
    i0 = int(np.clip(np.floor(fx), 0, grid.nx - 2))
    j0 = int(np.clip(np.floor(fy), 0, grid.ny - 2))
    tx, ty = fx - i0, fy - j0
    w = np.array([[(1 - tx) * (1 - ty), tx * (1 - ty)], [(1 - tx) * ty, tx * ty]])
    sl = (slice(j0, j0 + 2), slice(i0, i0 + 2))
    nrm = gf.normal[(slice(None),) + sl]
    if not np.all(np.isfinite(nrm)):
        raise GeometryError(f"point {tuple(p)} lies outside the geometry band")
    phi = float(np.sum(w * ls.phi[sl]))
    n = np.array([np.sum(w * nrm[0]), np.sum(w * nrm[1])])
    n /= np.linalg.norm(n)
    return (float(p[0] - phi * n[0]), float(p[1] - phi * n[1]))
