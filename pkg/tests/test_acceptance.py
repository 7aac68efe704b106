"""Acceptance criteria 1-10 at their stated tolerances.

Each test records one PASS/FAIL line (printed in the "acceptance criteria"
section of the pytest summary) and then asserts every check it made. Run
directly with `python tests/test_acceptance.py`.
"""
import math
import sys

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.special import jn_zeros

from lsbec import catalog
from lsbec import extension as ext
from lsbec.flow import FlowConfig, FlowState, ModelSpec, befd_step, build_bundle, run_two_phase
from lsbec.geometry import Circle, Ellipse, Grid2D, Rectangle, build_level_set, classify
from lsbec.geometry import geometry_fields
from lsbec.linalg import SolverConfig, smallest_eigenpairs
from lsbec.quadrature import build_weights, integrate, lp_norm
from lsbec.study import build_report, convergence_study, fit_rate, run_experiment

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # pragma: no cover
    ACCEPTANCE_LINES = {}

pytestmark = pytest.mark.slow

POSITIVITY_TOL = 1e-8  # min u >= -tol counts as a positive ground state
MONOTONE_SLACK = 1e-10  # allowed energy increase per step over the final 90% of phase 1


def _rel(a, b):
    return abs(a - b) / abs(b)


def _record(num, title, checks):
    """checks: list of (label, ok, detail). Records the line, then asserts."""
    ok = all(c[1] for c in checks)
    parts = "; ".join(f"{'ok' if c[1] else 'FAIL'} {c[0]}: {c[2]}" for c in checks)
    line = f"criterion {num:2d} {'PASS' if ok else 'FAIL'}  {title} | {parts}"
    ACCEPTANCE_LINES[num] = line
    print(line)
    assert ok, line


@pytest.fixture(scope="session")
def study(tmp_path_factory):
    """Runs (once) every config of a catalog entry; returns {config name: report}."""
    cache = {}

    def get(name):
        if name not in cache:
            out = {}
            for cfg in catalog.get(name).configs():
                d = tmp_path_factory.mktemp(cfg.name)
                if len(cfg.resolutions) >= 3:
                    out[cfg.name] = convergence_study(cfg, d)
                else:
                    out[cfg.name] = build_report(cfg, run_experiment(cfg, d))
            cache[name] = out
        return cache[name]

    return get


def _finest(rep):
    return min((r for r in rep.rows if r.ok), key=lambda r: r.h)


def _all_ok(rep):
    return ("all resolutions converged", not rep.failures,
            "none failed" if not rep.failures else str(rep.failures))


def _rate_check(rep, lo, hi=math.inf):
    ok = rep.rate is not None and lo <= rep.rate <= hi
    span = f"[{lo}, {hi}]" if hi < math.inf else f">= {lo}"
    return (f"rate vs {rep.reference_source} {span}", ok, f"{rep.rate!r}")


def _monotone_checks(rep):
    rises = [r.energy_rise for r in rep.rows if r.ok]
    worst = max(rises)
    return ("energy non-increasing over final 90% of phase 1", worst <= MONOTONE_SLACK,
            "max rise per resolution " + ", ".join(f"{x:.2e}" for x in rises))


# ---------------------------------------------------------------------------


def test_criterion_01_lshape(study):
    rep = study("lshape")["lshape"]
    val = rep.reported[-1]
    _record(1, "L-shape Laplace eigenvalue", [
        _all_ok(rep),
        ("finest value within 5e-3 of 9.639723844021", abs(val - 9.639723844021) <= 5e-3,
         f"{val!r} (error {abs(val - 9.639723844021):.3e})"),
        _rate_check(rep, 1.15, 1.5),
    ])


def test_criterion_02_linear_disk():
    exact = jn_zeros(0, 1)[0] ** 2 / 2
    hs = [0.1, 0.05, 0.025]
    cfg = FlowConfig(tol_phase1=1e-10, tol_phase2=1e-10)
    errs = []
    for h in hs:
        b = build_bundle(Grid2D.from_box(-1.5, 1.5, -1.5, 1.5, h), Circle(0, 0, 1))
        errs.append(abs(run_two_phase(ModelSpec(), b, cfg).mu - exact))
    rate = fit_rate(hs, errs)
    _record(2, "linear disk oracle j01^2/2", [
        ("rate >= 2.7", rate >= 2.7, f"{rate!r}, errors " + ", ".join(f"{e:.2e}" for e in errs)),
    ])


def test_criterion_03_square_harmonic(study):
    reps = study("square-harmonic")
    plain, resc = reps["square-harmonic"], reps["square-harmonic-rescaled"]
    mu = _finest(plain).mu
    diffs = [abs(a.mu - b.mu) for a, b in zip(plain.rows, resc.rows) if a.ok and b.ok]
    _record(3, "square + harmonic, beta=50", [
        _all_ok(plain), _all_ok(resc),
        ("finest mu within 2e-3 rel of 6.188543396102850",
         _rel(mu, 6.188543396102850) <= 2e-3, f"{mu!r} (rel {_rel(mu, 6.188543396102850):.2e})"),
        ("plain and rescaled agree within 1e-6",
         len(diffs) == len(plain.rows) and max(diffs) <= 1e-6, f"max diff {max(diffs):.2e}"),
    ])


def test_criterion_04_circle_lattice(study):
    rep = study("circle-lattice")["circle-lattice"]
    f = _finest(rep)
    _record(4, "circle + harmonic-lattice, beta=200", [
        _all_ok(rep),
        ("mu within 5e-3 rel of 68.0881", _rel(f.mu, 68.0881) <= 5e-3, f"{f.mu!r}"),
        ("E within 5e-3 rel of 52.8319", _rel(f.energy, 52.8319) <= 5e-3, f"{f.energy!r}"),
        _rate_check(rep, 2.4),
        _monotone_checks(rep),
    ])


def test_criterion_05_ellipse(study):
    reps = study("ellipse-box")
    rep, pot = reps["ellipse-box"], reps["ellipse-shaped-potential"]
    f = _finest(rep)
    ex = [e for e in f.excited if e.k == 1]
    fp = _finest(pot)
    checks = [
        _all_ok(rep), _all_ok(pot),
        ("mu within 2e-3 rel of 1.8055", _rel(f.mu, 1.8055) <= 2e-3, f"{f.mu!r}"),
        _rate_check(rep, 2.5),
        ("first excited mu within 5e-3 of 3.0755",
         bool(ex) and _rel(ex[0].mu, 3.0755) <= 5e-3, f"{ex[0].mu!r}" if ex else "missing"),
        ("excited tag excited-like", bool(ex) and ex[0].tag == "excited-like",
         ex[0].tag if ex else "missing"),
        ("ellipse-shaped potential mu within 5e-3 of 2.3411",
         _rel(fp.mu, 2.3411) <= 5e-3, f"{fp.mu!r} (rel {_rel(fp.mu, 2.3411):.2e})"),
    ]
    _record(5, "ellipse + box, beta=4", checks)


def test_criterion_06_hoi(study):
    rep = study("ellipse-hoi")["ellipse-hoi"]
    f = _finest(rep)
    _record(6, "HOI ellipse, beta=delta=10, dt=0.001", [
        _all_ok(rep),
        ("mu within 1e-2 rel of 6.1360", _rel(f.mu, 6.1360) <= 1e-2, f"{f.mu!r}"),
        ("E within 2e-2 rel of 5.7685", _rel(f.energy, 5.7685) <= 2e-2,
         f"{f.energy!r} (rel {_rel(f.energy, 5.7685):.2e})"),
    ])


def test_criterion_07_crescent_sector(study):
    cres = study("crescent")["crescent"]
    sec = study("sector-cq")["sector-cq"]
    checks = []
    for label, rep in (("crescent", cres), ("sector", sec)):
        for name, ok, detail in (_all_ok(rep), _rate_check(rep, 2.4), _monotone_checks(rep)):
            checks.append((f"{label} {name}", ok, detail))
        mins = [r.min_u for r in rep.rows if r.ok]
        checks.append((f"{label} ground state positive (min u >= -{POSITIVITY_TOL:g})",
                       min(mins) >= -POSITIVITY_TOL,
                       "min u per resolution " + ", ".join(f"{m:.2e}" for m in mins)))
    bounded = all(r.ok and np.isfinite(r.mu) and np.all(np.isfinite(r.u)) for r in sec.rows)
    checks.append(("sector run bounded", bounded,
                   f"max |u| {max(float(np.abs(r.u).max()) for r in sec.rows if r.ok):.4f}"))
    _record(7, "crescent and sector (property checks)", checks)


def test_criterion_08_quadrature():
    hs = [0.05, 0.025, 0.0125]
    errs = []
    for h in hs:
        g = Grid2D.from_box(-1.5, 1.5, -1.5, 1.5, h)
        ls = build_level_set(g, Circle(0, 0, 1))
        w = build_weights(g, ls, classify(g, ls))
        X, Y = g.mesh()
        r2 = X**2 + Y**2
        errs.append(abs(integrate(np.where(r2 < 1, (1 - r2) ** 2, 0.0), w) - math.pi / 3))
    rate = fit_rate(hs, errs)
    _record(8, "quadrature order on the unit disk", [
        ("slope >= 2.7", rate >= 2.7, f"{rate!r}, errors " + ", ".join(f"{e:.2e}" for e in errs)),
    ])


def _ext_setup(shape, h, box):
    g = Grid2D.from_box(-box, box, -box, box, h)
    ls = build_level_set(g, shape)
    cls = classify(g, ls)
    gf = geometry_fields(ls, cls)
    A = ext.build_extension_matrix(cls, gf)
    return g, ls, cls, gf, A, ext.build_diagonal_factors(cls, ls, gf)


def test_criterion_09_extension():
    _, _, cls, gf, A, _ = _ext_setup(Ellipse(1.5, 2.0), math.pi / 60, math.pi)
    rows = np.asarray(A.entries.sum(axis=1)).ravel()
    v = np.random.default_rng(2024).random(cls.irregular_order.size)
    route = np.max(np.abs(A.entries @ v - ext.extend_field(v, cls, gf, tol=1e-15,
                                                           max_sweeps=2000)))
    hs, errs = [0.1, 0.05, 0.025], []
    for h in hs:
        _, ls, c, _, Ac, fac = _ext_setup(Circle(0, 0, 1), h, 1.5)
        M = ext.assemble_ghost_map(Ac, fac, "cubic")
        phi = ls.phi.ravel()
        u = phi - 0.5 * phi * phi  # kappa = 1
        errs.append(np.max(np.abs(M.matrix @ u[c.irregular_order] - u[c.ghost_order])))
    slope = fit_rate(hs, errs)
    _record(9, "extension operator properties", [
        ("row sums 1 +- 1e-10", np.max(np.abs(rows - 1)) <= 1e-10,
         f"max dev {np.max(np.abs(rows - 1)):.2e}"),
        ("entries >= -1e-10", A.entries.data.min() >= -1e-10, f"min {A.entries.data.min():.2e}"),
        ("cubic ghost map slope >= 2.7", slope >= 2.7, f"{slope!r}"),
        ("matrix route equals transport route to 1e-12", route <= 1e-12, f"{route:.2e}"),
    ])


def _rayleigh_monotone(factor):
    """beta = 0 on a grid-aligned rectangle (symmetric 5-point operator)."""
    b = build_bundle(Grid2D.from_box(-1.5, 1.5, -1.5, 1.5, 0.1), Rectangle(-1, -1, 1, 1))
    x, y = b.node_coords()
    cfg = FlowConfig(dt=factor * b.h, tol_phase1=1e-10, tol_phase2=1e-10)
    res = run_two_phase(ModelSpec(), b, cfg, u0=1 + x + 0.5 * y * y)
    return float(np.max(np.diff(res.phase_energies(1))))


def _curved_linear_rise(cfg, factor):
    """Largest phase-1 energy increase of the beta = 0 flow from a constant start."""
    h = cfg.resolutions[0]
    b = build_bundle(cfg.grid(h), cfg.shape, cfg.potential)
    fc = FlowConfig(dt=factor * h)
    res = run_two_phase(ModelSpec(), b, fc, u0=np.ones(b.n))
    return float(np.max(np.diff(res.phase_energies(1))))


def _fixed_point_drift(cfg, solver):
    h = cfg.resolutions[0]
    b = build_bundle(cfg.grid(h), cfg.shape, cfg.potential)
    worst = 0.0
    for ph in (1, 2):
        H = sp.csr_matrix(-0.5 * b.phases[ph].laplacian.matrix + sp.diags(b.potential.values))
        v = smallest_eigenpairs(H, 1, tol=1e-12)[0][1]
        v = v / lp_norm(v, b.weights)
        nxt = befd_step(FlowState(v, phase=ph), ModelSpec(), b.phases[ph], b.potential, h,
                        b.weights, solver)
        worst = max(worst, float(np.max(np.abs(nxt.u - v))))
    return worst


def test_criterion_10_flow_invariants(study):
    names = list(catalog.CATALOG)
    norm = max(r.norm_error for n in names for rep in study(n).values() for r in rep.rows
               if r.ok)
    rect = [_rayleigh_monotone(f) for f in (1, 10)]
    cfgs = [cfg for n in names for cfg in catalog.get(n).configs()]
    tight = SolverConfig(rel_tol=1e-14, abs_tol=1e-15)
    drift = max(_fixed_point_drift(c, tight) for c in cfgs)
    drift_default = max(_fixed_point_drift(c, SolverConfig()) for c in cfgs)
    lcfg = catalog.get("lshape").configs()[0]
    curved = [_curved_linear_rise(lcfg, f) for f in (1, 10)]
    checks = [
        ("normalisation 1 +- 1e-12 on every catalog run", norm <= 1e-12, f"max dev {norm:.2e}"),
        ("beta=0 energy monotone, dt in {h, 10h} (aligned rectangle, 5-point)",
         max(rect) <= MONOTONE_SLACK, "max rise " + ", ".join(f"{r:.2e}" for r in rect)),
        ("linear eigenvector fixed-point drift <= 1e-10 (exact solves)", drift <= 1e-10,
         f"{drift:.2e} (with default BiCGSTAB tolerance {drift_default:.2e})"),
    ]
    # logged, not asserted: the folded operator on curved/cut boundaries is not symmetric
    print(f"beta=0 phase-1 energy rise on the L-shape from a constant start, dt in {{h, 10h}}: "
          + ", ".join(f"{r:.2e}" for r in curved))
    _record(10, "flow invariants", checks)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v", "-s"]))
