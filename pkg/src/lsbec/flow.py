"""Normalized gradient flow (backward Euler in time, ghost-folded finite
differences in space) for ground states of GP-type eigenproblems.

A run has two phases: the five-point Laplacian with linear ghost
extrapolation until an approximate steady state, then the fourth-order
stencil with the cubic ghost map starting from that state.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import extension as ext
from .geometry import (GeometryFields, Grid2D, GridClassification, LevelSetField, Shape,
                       build_level_set, classify, geometry_fields)
from .linalg import SolverConfig, solve_linear, smallest_eigenpairs
from .operators import (Potential, PotentialField, SparseOperator, apply_hamiltonian,
                        assemble_gradient, assemble_laplacian, sample_potential)
from .quadrature import QuadratureWeights, build_weights, chemical_potential, energy, lp_norm

log = logging.getLogger(__name__)

MODEL_KINDS = ("cubic", "cubic-rescaled", "cubic-quintic", "hoi-split")


class FlowError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: str = "cubic"
    beta: float = 0.0
    gamma: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        for name in ("beta", "gamma", "delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0 (defocusing interactions only)")
        if self.gamma and self.kind != "cubic-quintic":
            raise ValueError("gamma is only used by the cubic-quintic model")
        if self.delta and self.kind != "hoi-split":
            raise ValueError("delta is only used by the hoi-split model")
        if self.kind == "cubic-rescaled" and not self.beta > 0:
            raise ValueError("the rescaled model needs beta > 0")

    def scaled(self, s: float) -> "ModelSpec":
        kind = "cubic" if self.kind == "cubic-rescaled" and s * self.beta == 0 else self.kind
        return ModelSpec(kind, s * self.beta, s * self.gamma, s * self.delta)

    @property
    def is_linear(self) -> bool:
        return self.beta == 0 and self.gamma == 0 and self.delta == 0


@dataclass(frozen=True)
class FlowConfig:
    dt: float | None = None  # None: dt = h
    tol_phase1: float = 1e-8
    tol_phase2: float = 1e-8
    max_steps: int = 1_000_000
    init: str = "auto"  # auto | linear | thomas-fermi | continuation
    continuation_steps: int = 4
    continuation_tol: float = 1e-6
    rescale_threshold: float | None = 100.0  # cubic model switches to z = sqrt(beta) u above this
    solver: SolverConfig = field(default_factory=SolverConfig)
    linear_cutoff: float = 1.0  # auto init: linear ground state for beta <= this
    tf_cutoff: float = 100.0  # auto init: Thomas-Fermi for beta >= this

    def step_size(self, h: float) -> float:
        return h if self.dt is None else self.dt


# ---------------------------------------------------------------------------
# geometry bundle


@dataclass(frozen=True)
class PhaseOperators:
    laplacian: SparseOperator
    gradients: tuple[SparseOperator, SparseOperator] | None


@dataclass(frozen=True)
class GeometryBundle:
    grid: Grid2D
    shape: Shape
    ls: LevelSetField
    cls: GridClassification
    gf: GeometryFields
    extension: ext.ExtensionMatrix
    factors: ext.DiagonalFactors
    maps: dict
    phases: dict  # 1 -> PhaseOperators(order 2, linear map), 2 -> (order 4, cubic map)
    weights: QuadratureWeights
    potential: PotentialField

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def n(self) -> int:
        return self.cls.interior_order.size

    def node_coords(self):
        X, Y = self.grid.mesh()
        k = self.cls.interior_order
        return X.ravel()[k], Y.ravel()[k]


def build_bundle(grid: Grid2D, shape: Shape, potential: Potential | None = None,
                 gradients: bool = False, ext_tol: float = 1e-12, ext_max_sweeps: int = 200,
                 curvature_cutoff: float | None = None, pin_fraction: float = 1e-3) -> GeometryBundle:
    ls = build_level_set(grid, shape)
    cls = classify(grid, ls, pin_fraction=pin_fraction)
    gf = geometry_fields(ls, cls, curvature_cutoff=curvature_cutoff)
    A = ext.build_extension_matrix(cls, gf, tol=ext_tol, max_sweeps=ext_max_sweeps)
    fac = ext.build_diagonal_factors(cls, ls, gf)
    maps = {o: ext.assemble_ghost_map(A, fac, o) for o in ("linear", "cubic")}
    phases = {}
    for ph, (order, mo) in {1: (2, "linear"), 2: (4, "cubic")}.items():
        L = assemble_laplacian(grid, cls, maps[mo], order)
        G = assemble_gradient(grid, cls, maps[mo], order) if gradients else None
        phases[ph] = PhaseOperators(L, G)
    w = build_weights(grid, ls, cls)
    V = sample_potential(grid, cls, potential if potential is not None else Potential("box"))
    return GeometryBundle(grid, shape, ls, cls, gf, A, fac, maps, phases, w, V)


# ---------------------------------------------------------------------------
# state and results


@dataclass(frozen=True)
class FlowState:
    u: np.ndarray
    t: float = 0.0
    n: int = 0
    phase: int = 1
    last_residual: float = np.inf


@dataclass
class FlowResult:
    u: np.ndarray
    mu: float
    energy: float
    steps_phase1: int
    steps_phase2: int
    mu_phase1: float
    energy_phase1: float
    residuals: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    telemetry: list = field(default_factory=list)  # (phase, step, t, residual, mu, E)
    model: ModelSpec | None = None
    tag: str | None = None
    norm_error: float = 0.0  # max over steps of | ||u||_2 - 1 |

    def phase_energies(self, phase: int) -> np.ndarray:
        return np.array([r[5] for r in self.telemetry if r[0] == phase])


def evaluate(u, model: ModelSpec, bundle: GeometryBundle, phase: int = 2) -> tuple[float, float]:
    """(mu, E) of a normalised interior field with the given phase operators."""
    ops = bundle.phases[phase]
    Hu = apply_hamiltonian(u, ops.laplacian, bundle.potential, model.beta, model.gamma,
                           model.delta)
    mu = chemical_potential(u, Hu, bundle.weights)
    E = energy(mu, u, bundle.weights, model.beta, model.gamma, model.delta, ops.gradients)
    return mu, E


def _normalize(u, w):
    return u / lp_norm(u, w, 2)


def _sign_fix(u):
    return -u if u[np.argmax(np.abs(u))] < 0 else u


# ---------------------------------------------------------------------------
# initial data


def linear_eigenstates(bundle: GeometryBundle, count: int = 1, phase: int = 1):
    """Lowest eigenpairs of -L/2 + V, quadrature-normalised and sign-fixed."""
    L = bundle.phases[phase].laplacian
    H = sp.csr_matrix(-0.5 * L.matrix + sp.diags(bundle.potential.values))
    pairs = smallest_eigenpairs(H, count)
    return [(lam, _sign_fix(_normalize(v, bundle.weights))) for lam, v in pairs]


def linear_ground_state(bundle: GeometryBundle, phase: int = 1) -> np.ndarray:
    return linear_eigenstates(bundle, 1, phase)[0][1]


def thomas_fermi_initial(V, beta: float, w: QuadratureWeights, tol: float = 1e-12) -> np.ndarray:
    """u = sqrt(max(0, (mu - V)/beta)) with mu fixed by ||u||_2 = 1 (bisection)."""
    if not beta > 0:
        raise FlowError("Thomas-Fermi initial data needs beta > 0")
    v = V.values if isinstance(V, PotentialField) else np.asarray(V, float)
    wi = w.interior

    def mass(mu):
        return float(wi @ np.maximum(0.0, (mu - v) / beta)) - 1.0

    lo = float(v.min())
    hi = lo + beta / wi.sum()
    for _ in range(200):
        if mass(hi) >= 0:
            break
        lo, hi = hi, lo + 2 * (hi - lo)
    else:
        raise FlowError("Thomas-Fermi bisection could not bracket the chemical potential")
    for _ in range(400):
        mid = 0.5 * (lo + hi)
        m = mass(mid)
        if abs(m) < tol or hi - lo < 1e-15 * max(1.0, abs(hi)):
            break
        lo, hi = (mid, hi) if m < 0 else (lo, mid)
    u = np.sqrt(np.maximum(0.0, (mid - v) / beta))
    return _normalize(u, w)


def thomas_fermi_mu(V, beta, w, u):
    v = V.values if isinstance(V, PotentialField) else np.asarray(V, float)
    return float(np.max(beta * u * u + v * (u > 0)))


def continuation_ladder(target: float, steps: int) -> np.ndarray:
    """Interaction strengths 0 < b_1 < ... < b_steps = target."""
    if steps < 1:
        raise ValueError("continuation needs at least one step")
    if target <= 10:
        return target * np.arange(1, steps + 1) / steps
    if steps == 1:
        return np.array([target])
    return np.geomspace(1.0, target, steps)


def continuation_initial(model: ModelSpec, bundle: GeometryBundle, cfg: FlowConfig,
                         steps: int | None = None) -> np.ndarray:
    """Ramp all interaction strengths from the linear ground state to `model`,
    each rung relaxed with phase-1 operators to cfg.continuation_tol."""
    steps = cfg.continuation_steps if steps is None else steps
    u = linear_ground_state(bundle)
    ref = max(model.beta, model.gamma, model.delta)
    if ref == 0:
        return u
    for b in continuation_ladder(ref, steps):
        rung = model.scaled(b / ref)
        u, nsteps, _, _ = _relax(u, rung, bundle, cfg, phase=1, tol=cfg.continuation_tol)
        log.info("continuation rung %.4g: %d steps", b, nsteps)
    return u


def initial_state(model: ModelSpec, bundle: GeometryBundle, cfg: FlowConfig) -> np.ndarray:
    policy = cfg.init
    if policy == "auto":
        b = model.beta
        if model.is_linear or b <= cfg.linear_cutoff and not (model.gamma or model.delta):
            policy = "linear"
        elif b >= cfg.tf_cutoff:
            policy = "thomas-fermi"
        else:
            policy = "continuation"
    if policy == "linear":
        return linear_ground_state(bundle)
    if policy == "thomas-fermi":
        return thomas_fermi_initial(bundle.potential, model.beta, bundle.weights)
    if policy == "continuation":
        return continuation_initial(model, bundle, cfg)
    raise ValueError(f"unknown initialisation policy {policy!r}")


# ---------------------------------------------------------------------------
# time stepping


class _ImplicitMatrix:
    """I/dt + diag(row_scale) (-L) + diag(d) with the sparsity of L reused."""

    def __init__(self, L: sp.csr_matrix):
        n = L.shape[0]
        C = sp.coo_matrix(L)
        # explicit (possibly zero) diagonal entries so every row has one
        A = sp.csr_matrix((np.concatenate([C.data, np.zeros(n)]),
                           (np.concatenate([C.row, np.arange(n)]),
                            np.concatenate([C.col, np.arange(n)]))), shape=L.shape)
        A.sum_duplicates()
        A.sort_indices()
        self.base = A
        self.row_of = np.repeat(np.arange(n), np.diff(A.indptr))
        self.diag_pos = np.flatnonzero(A.indices == self.row_of)
        assert self.diag_pos.size == n

    def build(self, coeff, diag):
        """-coeff * L + diag(diag); `coeff` scalar or per-row."""
        data = -self.base.data * (coeff if np.isscalar(coeff) else coeff[self.row_of])
        data[self.diag_pos] += diag
        return sp.csr_matrix((data, self.base.indices, self.base.indptr), shape=self.base.shape)


def befd_step(state: FlowState, model: ModelSpec, ops: PhaseOperators, V, dt: float,
              w: QuadratureWeights, solver: SolverConfig = SolverConfig(),
              implicit: _ImplicitMatrix | None = None) -> FlowState:
    """One backward-Euler step of the normalised gradient flow."""
    L = ops.laplacian
    imp = implicit if implicit is not None else _ImplicitMatrix(L.matrix)
    v = V.values if isinstance(V, PotentialField) else np.asarray(V, float)
    u = state.u
    u2 = u * u
    if model.kind == "hoi-split":
        if ops.gradients is None:
            raise FlowError("the hoi-split model needs gradient operators")
        coeff = 0.5 + 2 * model.delta * u2
        A = imp.build(coeff, 1.0 / dt + v + model.beta * u2)
        gx, gy = ops.gradients
        grad2 = (gx.matrix @ u) ** 2 + (gy.matrix @ u) ** 2
        rhs = u / dt + 2 * model.delta * grad2 * u
        new = solve_linear(A, rhs, solver, x0=u)
        new = _normalize(new, w)
    elif model.kind == "cubic-rescaled":
        sb = np.sqrt(model.beta)
        z = sb * u
        A = imp.build(0.5, 1.0 / dt + v + z * z)
        zt = solve_linear(A, z / dt, solver, x0=z)
        z_new = sb * zt / lp_norm(zt, w, 2)
        new = z_new / sb
    else:
        d = 1.0 / dt + v + model.beta * u2
        if model.kind == "cubic-quintic":
            d = d + model.gamma * u2 * u2
        A = imp.build(0.5, d)
        new = _normalize(solve_linear(A, u / dt, solver, x0=u), w)
    if not np.all(np.isfinite(new)):
        raise FlowError(f"non-finite values after step {state.n + 1}")
    res = float(np.max(np.abs(new - u))) / dt
    return FlowState(new, state.t + dt, state.n + 1, state.phase, res)


def _effective_model(model: ModelSpec, cfg: FlowConfig) -> ModelSpec:
    if (model.kind == "cubic" and cfg.rescale_threshold is not None
            and model.beta >= cfg.rescale_threshold):
        return replace(model, kind="cubic-rescaled")
    return model


def _relax(u, model, bundle, cfg, phase, tol, telemetry=None, projector=None):
    """Step until max|u^{n+1}-u^n|/dt < tol; returns (u, steps, residuals,
    largest deviation of ||u||_2 from 1 seen after a step)."""
    model = _effective_model(model, cfg)
    ops = bundle.phases[phase]
    if model.kind == "hoi-split" and ops.gradients is None:
        raise FlowError("bundle was built without gradient operators")
    dt = cfg.step_size(bundle.h)
    imp = _ImplicitMatrix(ops.laplacian.matrix)
    state = FlowState(u, 0.0, 0, phase)
    residuals = []
    norm_err = 0.0
    while state.n < cfg.max_steps:
        state = befd_step(state, model, ops, bundle.potential, dt, bundle.weights, cfg.solver, imp)
        if projector is not None:
            state = replace(state, u=_normalize(projector(state.u), bundle.weights))
        norm_err = max(norm_err, abs(lp_norm(state.u, bundle.weights, 2) - 1.0))
        residuals.append(state.last_residual)
        if telemetry is not None:
            mu, E = evaluate(state.u, model, bundle, phase)
            telemetry.append((phase, state.n, state.t, state.last_residual, mu, E))
        if state.last_residual < tol:
            return state.u, state.n, residuals, norm_err
    raise FlowError(f"phase {phase} did not reach residual {tol:g} in {cfg.max_steps} steps "
                    f"(last {state.last_residual:.3e})")


def run_two_phase(model: ModelSpec, bundle: GeometryBundle, cfg: FlowConfig = FlowConfig(),
                  u0=None, projector=None) -> FlowResult:
    """Phase 1 (order 2, linear ghosts) to tol_phase1, then phase 2 (order 4,
    cubic ghosts) to tol_phase2. Telemetry holds one record per step."""
    u = initial_state(model, bundle, cfg) if u0 is None else _normalize(np.asarray(u0, float),
                                                                       bundle.weights)
    telemetry: list = []
    u, n1, r1, e1 = _relax(u, model, bundle, cfg, 1, cfg.tol_phase1, telemetry, projector)
    mu1, E1 = evaluate(u, model, bundle, 1)
    u, n2, r2, e2 = _relax(u, model, bundle, cfg, 2, cfg.tol_phase2, telemetry, projector)
    mu, E = evaluate(u, model, bundle, 2)
    return FlowResult(u, mu, E, n1, n2, mu1, E1, r1 + r2, [rec[5] for rec in telemetry],
                      telemetry, model, norm_error=max(e1, e2))


# ---------------------------------------------------------------------------
# excited states


def reflection_projector(bundle: GeometryBundle, u0, tol: float = 1e-12):
    """Projector onto the parity class of u0 under x- or y-reflection of the
    grid, when the discrete problem has that symmetry; otherwise None."""
    grid, cls = bundle.grid, bundle.cls
    idx = cls.interior_order
    i, j = grid.unflat(idx)
    pos = np.full(grid.size, -1)
    pos[idx] = np.arange(idx.size)
    L = bundle.phases[2].laplacian.matrix
    found = []
    for mi, mj in ((grid.nx - 1 - i, j), (i, grid.ny - 1 - j)):
        perm = pos[grid.flat(mi, mj)]
        if np.any(perm < 0):
            continue
        P = sp.csr_matrix((np.ones(idx.size), (np.arange(idx.size), perm)), shape=(idx.size,) * 2)
        if abs(P @ L @ P.T - L).max() > tol * abs(L).max():
            continue
        if np.max(np.abs(bundle.potential.values[perm] - bundle.potential.values)) > tol:
            continue
        ru = u0[perm]
        for sign in (1.0, -1.0):
            if np.max(np.abs(ru - sign * u0)) < 1e-6 * np.max(np.abs(u0)):
                found.append((perm, sign))
    if not found:
        return None

    def project(u):
        for perm, sign in found:
            u = 0.5 * (u + sign * u[perm])
        return u

    return project


def compute_excited_state(k: int, model: ModelSpec, bundle: GeometryBundle,
                          cfg: FlowConfig = FlowConfig(), ground_mu: float | None = None,
                          keep_parity: bool = True, gap: float = 1e-3) -> FlowResult:
    """Flow started from the (k+1)-th linear eigenvector; tagged
    'excited-like' or 'collapsed-to-ground' against the ground-state mu.

    With keep_parity, a reflection symmetry of the discrete problem shared by
    the initial vector is enforced after every step, which stops round-off
    from feeding the ground-state component.
    """
    if k < 1:
        raise ValueError("excited state index must be >= 1")
    states = linear_eigenstates(bundle, k + 1)
    u0 = states[k][1]
    projector = reflection_projector(bundle, u0) if keep_parity else None
    res = run_two_phase(model, bundle, cfg, u0=u0, projector=projector)
    if ground_mu is None:
        ground_mu = run_two_phase(model, bundle, cfg).mu
    res.tag = "excited-like" if res.mu - ground_mu > gap else "collapsed-to-ground"
    return res
