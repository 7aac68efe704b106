import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lsbec.flow import (FlowConfig, FlowError, FlowState, ModelSpec, befd_step, build_bundle,
                        compute_excited_state, continuation_ladder, initial_state,
                        linear_eigenstates, run_two_phase, thomas_fermi_initial, thomas_fermi_mu)
from lsbec.geometry import Circle, Ellipse, Grid2D, Rectangle
from lsbec.operators import Potential
from lsbec.quadrature import integrate, lp_norm


@pytest.fixture(scope="module")
def disk():
    return build_bundle(Grid2D.from_box(-1.5, 1.5, -1.5, 1.5, 0.1), Circle(0, 0, 1))


@pytest.fixture(scope="module")
def harmonic_disk():
    g = Grid2D.from_box(-2.5, 2.5, -2.5, 2.5, 0.1)
    return build_bundle(g, Circle(0, 0, 2), Potential("harmonic"), gradients=True)


def test_model_validation():
    with pytest.raises(ValueError):
        ModelSpec("quartic")
    with pytest.raises(ValueError, match="defocusing"):
        ModelSpec(beta=-1)
    with pytest.raises(ValueError):
        ModelSpec("cubic", beta=1, gamma=1)
    with pytest.raises(ValueError):
        ModelSpec("cubic", beta=1, delta=1)
    with pytest.raises(ValueError):
        ModelSpec("cubic-rescaled", beta=0)
    assert ModelSpec("cubic-rescaled", beta=5).scaled(0).kind == "cubic"


def test_thomas_fermi_flat_potential(disk):
    beta = 20.0
    u = thomas_fermi_initial(disk.potential, beta, disk.weights)
    area = integrate(np.ones(disk.n), disk.weights)
    assert lp_norm(u, disk.weights) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(u, 1 / np.sqrt(area), rtol=1e-10)
    assert thomas_fermi_mu(disk.potential, beta, disk.weights, u) == pytest.approx(beta / area)
    with pytest.raises(FlowError):
        thomas_fermi_initial(disk.potential, 0.0, disk.weights)


def test_thomas_fermi_support_shrinks_with_potential(harmonic_disk):
    b = harmonic_disk
    u = thomas_fermi_initial(b.potential, 5.0, b.weights)
    assert lp_norm(u, b.weights) == pytest.approx(1.0, abs=1e-12)
    assert np.any(u == 0) and np.all(u >= 0)


@given(st.floats(0.1, 1e4), st.integers(1, 12))
def test_continuation_ladder(target, steps):
    lad = continuation_ladder(target, steps)
    assert lad.size == steps
    assert lad[-1] == pytest.approx(target, rel=1e-12)
    assert lad[0] > 0 and np.all(np.diff(lad) > 0)


def test_ladder_rejects_zero_steps():
    with pytest.raises(ValueError):
        continuation_ladder(5.0, 0)


def test_linear_ground_state_matches_eigenvalue(disk):
    cfg = FlowConfig(tol_phase1=1e-10, tol_phase2=1e-10)
    res = run_two_phase(ModelSpec(), disk, cfg)
    lam = linear_eigenstates(disk, 1, phase=2)[0][0]
    assert res.mu == pytest.approx(lam, rel=1e-9)
    assert res.energy == res.mu
    assert res.norm_error <= 1e-12


def test_fixed_point_drift(harmonic_disk):
    b = harmonic_disk
    model = ModelSpec(beta=10)
    cfg = FlowConfig(tol_phase1=1e-10, tol_phase2=1e-12)
    res = run_two_phase(model, b, cfg)
    dt = cfg.step_size(b.h)
    nxt = befd_step(FlowState(res.u, phase=2), model, b.phases[2], b.potential, dt, b.weights)
    assert np.max(np.abs(nxt.u - res.u)) <= 1e-10


def test_mu_increases_with_beta(harmonic_disk):
    cfg = FlowConfig(tol_phase1=1e-9, tol_phase2=1e-9)
    mus = [run_two_phase(ModelSpec(beta=b), harmonic_disk, cfg).mu for b in (0, 5, 20)]
    assert mus[0] < mus[1] < mus[2]


def test_rescaled_model_agrees(harmonic_disk):
    cfg = FlowConfig(tol_phase1=1e-10, tol_phase2=1e-10, rescale_threshold=None)
    a = run_two_phase(ModelSpec("cubic", beta=30), harmonic_disk, cfg)
    b = run_two_phase(ModelSpec("cubic-rescaled", beta=30), harmonic_disk, cfg)
    assert a.mu == pytest.approx(b.mu, rel=1e-9)
    # the rescaled variable z = sqrt(beta) u carries norm sqrt(beta)
    assert lp_norm(np.sqrt(30) * b.u, harmonic_disk.weights) == pytest.approx(np.sqrt(30))
    assert b.norm_error <= 1e-12


@pytest.mark.parametrize("factor", [1, 10])
def test_linear_energy_monotone_on_aligned_rectangle(factor):
    # edges on grid lines: the phase-1 operator is the symmetric 5-point Dirichlet matrix
    b = build_bundle(Grid2D.from_box(-1.5, 1.5, -1.5, 1.5, 0.1), Rectangle(-1, -1, 1, 1))
    L = b.phases[1].laplacian.matrix
    assert abs(L - L.T).max() == 0
    x, y = b.node_coords()
    u0 = 1 + x + 0.5 * y * y
    cfg = FlowConfig(dt=factor * b.h, tol_phase1=1e-10, tol_phase2=1e-10)
    res = run_two_phase(ModelSpec(), b, cfg, u0=u0)
    E = res.phase_energies(1)
    assert np.all(np.diff(E) <= 1e-10)
    # the Euclidean Rayleigh quotient is what the implicit step provably lowers
    H = -0.5 * L
    u, rq = u0.copy(), []
    for _ in range(20):
        u = befd_step(FlowState(u), ModelSpec(), b.phases[1], b.potential, cfg.step_size(b.h),
                      b.weights).u
        rq.append(u @ (H @ u) / (u @ u))
    assert np.all(np.diff(rq) <= 1e-14 * rq[0])


def test_excited_state_linear_matches_second_eigenpair():
    b = build_bundle(Grid2D.from_box(-np.pi, np.pi, -np.pi, np.pi, np.pi / 30), Ellipse(1.5, 2.0))
    cfg = FlowConfig(tol_phase1=1e-10, tol_phase2=1e-10)
    res = compute_excited_state(1, ModelSpec(), b, cfg)
    lam = linear_eigenstates(b, 2, phase=2)[1][0]
    assert res.mu == pytest.approx(lam, rel=1e-8)
    assert res.tag == "excited-like"
    with pytest.raises(ValueError):
        compute_excited_state(0, ModelSpec(), b, cfg)


def test_hoi_requires_gradients(disk):
    with pytest.raises(FlowError, match="gradient"):
        run_two_phase(ModelSpec("hoi-split", beta=1, delta=1), disk)


def test_unknown_init_policy(disk):
    with pytest.raises(ValueError):
        initial_state(ModelSpec(beta=5), disk, FlowConfig(init="random"))


def test_step_budget_is_enforced(disk):
    with pytest.raises(FlowError, match="did not reach"):
        run_two_phase(ModelSpec(beta=5), disk, FlowConfig(max_steps=3, init="linear"))
