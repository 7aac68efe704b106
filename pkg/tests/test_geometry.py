import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from lsbec.geometry import (Circle, CSGDifference, CSGIntersection, Ellipse, GeometryError,
                            Grid2D, HalfPlane, LShape, Rectangle, build_level_set, classify,
                            geometry_fields, project_to_boundary, signed_distance)

coord = st.floats(-3, 3, allow_nan=False)


def _brute_ellipse(p, a, b, n=20_000):
    """Dense parameter sampling, then a bounded polish around the best sample."""
    t = np.linspace(0, 2 * np.pi, n, endpoint=False)
    dist = lambda s: np.hypot(a * np.cos(s) - p[0], b * np.sin(s) - p[1])
    k = np.argmin(dist(t))
    dt = 2 * np.pi / n
    d = minimize_scalar(dist, bounds=(t[k] - dt, t[k] + dt), method="bounded",
                        options={"xatol": 1e-14}).fun
    inside = (p[0] / a) ** 2 + (p[1] / b) ** 2 < 1
    return -d if inside else d


def test_grid_nodes_and_validation():
    g = Grid2D((-1.0, -2.0), 0.25, 9, 17)
    assert g.shape == (17, 9)
    assert g.node(3, 4) == (-1.0 + 0.75, -2.0 + 1.0)
    i, j = g.unflat(g.flat(5, 7))
    assert (i, j) == (5, 7)
    with pytest.raises(GeometryError):
        Grid2D((0, 0), 0.0, 9, 9)
    with pytest.raises(GeometryError):
        Grid2D((0, 0), 0.1, 2, 9)


def test_from_box_hits_both_edges():
    g = Grid2D.from_box(-math.pi, math.pi, -math.pi, math.pi, math.pi / 60)
    assert g.nx == g.ny == 121
    assert g.xs()[0] == pytest.approx(-math.pi, abs=1e-14)
    assert g.xs()[-1] == pytest.approx(math.pi, abs=1e-13)


def test_sdf_examples():
    assert signed_distance(Circle(0, 0, 1), (0.5, 0)) == pytest.approx(-0.5)
    assert signed_distance(Circle(0, 0, 1), (2, 0)) == pytest.approx(1.0)
    L = LShape((-1, -1, 1, 1), (0, 0, 1, 1))
    # point in the removed quadrant: nearest re-entrant edges at distance 0.5
    assert signed_distance(L, (0.5, 0.5)) == pytest.approx(0.5)
    assert signed_distance(L, (-0.5, -0.5)) == pytest.approx(-0.5)
    assert signed_distance(Ellipse(1.5, 2.0), (0, 0)) == pytest.approx(-1.5, abs=1e-13)
    assert signed_distance(Rectangle(-1, -1, 1, 1), (2, 2)) == pytest.approx(math.sqrt(2))
    assert signed_distance(HalfPlane(0, 2, 1), (0, 3)) == pytest.approx(2.5)


@pytest.mark.parametrize("p", [(0.3, 0.1), (1.2, 1.9), (-2.5, 0.4), (0.0, 2.2), (1.49, 0.0),
                               (0.7, -1.7)])
def test_ellipse_sdf_matches_dense_sampling(p):
    got = signed_distance(Ellipse(1.5, 2.0), p)
    assert got == pytest.approx(_brute_ellipse(p, 1.5, 2.0), abs=1e-9)


@given(coord, coord, coord, coord)
def test_sdf_is_1_lipschitz(x0, y0, x1, y1):
    shapes = [Circle(0.1, -0.2, 1.1), Ellipse(1.5, 2.0), Rectangle(-1, -0.5, 1.2, 1),
              LShape((-1, -1, 1, 1), (0, 0, 1, 1))]
    dist = math.hypot(x1 - x0, y1 - y0)
    for s in shapes:
        diff = abs(signed_distance(s, (x0, y0)) - signed_distance(s, (x1, y1)))
        assert diff <= dist + 1e-9


@given(st.floats(0, 2 * np.pi), st.floats(0.01, 0.99))
def test_ellipse_sign_convention(t, s):
    a, b = 1.5, 2.0
    p_in = (s * a * np.cos(t), s * b * np.sin(t))
    p_out = (a * np.cos(t) / s, b * np.sin(t) / s)
    assert signed_distance(Ellipse(a, b), p_in) < 0
    assert signed_distance(Ellipse(a, b), p_out) > 0


def test_csg_composition():
    c = CSGDifference(Circle(0, 0, 1.2), Circle(0.5, 0, 0.9))
    assert signed_distance(c, (-1.0, 0)) < 0
    assert signed_distance(c, (0.3, 0)) > 0
    q = CSGIntersection(Circle(0, 0, 2), CSGIntersection(HalfPlane(-1, 0, 0), HalfPlane(0, -1, 0)))
    assert signed_distance(q, (1, 1)) < 0
    assert signed_distance(q, (-1, 1)) > 0


def _cls(shape, h, box=2.0):
    g = Grid2D.from_box(-box, box, -box, box, h)
    ls = build_level_set(g, shape)
    return g, ls, classify(g, ls)


@given(st.floats(0.5, 1.5), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_classification_partition(r, cx, cy):
    g, ls, c = _cls(Circle(cx, cy, r), 0.1)
    sets = [c.regular, c.irregular, c.ghost1, c.ghost2]
    total = sum(s.astype(int) for s in sets)
    assert total.max() <= 1
    assert np.all(ls.phi[c.regular | c.irregular] < 0)
    assert np.all(ls.phi[c.ghost] >= -c.pin_tol)
    # regular iff every axis neighbour is inside
    inside = c.inside
    nb = np.zeros_like(inside)
    nb[1:-1, 1:-1] = (inside[1:-1, 2:] & inside[1:-1, :-2] & inside[2:, 1:-1] & inside[:-2, 1:-1])
    assert np.array_equal(c.regular, inside & nb)
    # each ghost1 node touches an irregular node, each ghost2 node a ghost1 node
    def touches(mask, target):
        out = np.zeros_like(mask)
        out[1:-1, 1:-1] = (target[1:-1, 2:] | target[1:-1, :-2] | target[2:, 1:-1]
                           | target[:-2, 1:-1])
        return np.all(out[mask])
    assert touches(c.ghost1, c.irregular)
    assert touches(c.ghost2, c.ghost1)


def test_domain_touching_box_is_rejected():
    g = Grid2D.from_box(-1, 1, -1, 1, 0.1)
    with pytest.raises(GeometryError, match="two"):
        classify(g, build_level_set(g, Circle(0, 0, 0.95)))


def test_normals_unit_and_circle_curvature():
    errs = []
    for h in (0.1, 0.05):
        g, ls, c = _cls(Circle(0, 0, 2), h, box=2.6)
        gf = geometry_fields(ls, c)
        n = gf.normal
        band = np.isfinite(n[0])
        assert np.allclose(np.hypot(n[0][band], n[1][band]), 1.0, atol=1e-12)
        X, Y = g.mesh()
        r = np.hypot(X, Y)
        sel = band & (r > 1.5)
        errs.append(np.max(np.abs(gf.kappa[sel] - 1 / r[sel])))
    assert errs[1] < errs[0] / 3.0  # second order
    assert errs[1] < 1e-3


def test_projection_lands_on_boundary():
    g, ls, c = _cls(Circle(0, 0, 1), 0.05, box=1.5)
    gf = geometry_fields(ls, c)
    for p in [(0.98, 0.02), (0.0, -1.03), (0.7, 0.69)]:
        x = project_to_boundary(p, ls, gf)
        assert abs(math.hypot(*x) - 1.0) < 5e-3
