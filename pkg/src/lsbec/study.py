"""Running experiments over a list of resolutions, rate fitting and output
files.

Output layout of a run directory:

    config.txt        the fully expanded config
    results.csv       one row per resolution (deterministic, 15 significant digits)
    timing.csv        wall time per resolution (kept apart so results.csv is reproducible)
    telemetry.csv     per-step (phase, step, t, residual, mu, E) for every resolution
    excited.csv       excited-state rows, when requested
    field.txt         finest solution on the full grid
    markers.csv       annotated points, when configured
    convergence.csv   h, reported mu, |error|, used-in-fit (study only)
    series.dat        two-column `h error` series for plotting (study only)
    report.csv        fitted rate and reference (study only)
"""
from __future__ import annotations

import logging
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import extension as ext
from .config import ExperimentConfig, serialize_config
from .flow import build_bundle, compute_excited_state, run_two_phase
from .geometry import Grid2D, build_level_set, classify, geometry_fields

log = logging.getLogger(__name__)


def fmt(v) -> str:
    """15 significant digits; integers and strings unchanged."""
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.15g}"
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for r in rows:
            fh.write(",".join(fmt(v) for v in r) + "\n")


# ---------------------------------------------------------------------------
# one resolution


@dataclass
class ExcitedRow:
    k: int
    mu: float
    energy: float
    tag: str
    steps_phase1: int
    steps_phase2: int


@dataclass
class ResolutionResult:
    h: float
    mu: float = float("nan")
    energy: float = float("nan")
    mu_phase1: float = float("nan")
    energy_phase1: float = float("nan")
    steps_phase1: int = 0
    steps_phase2: int = 0
    unknowns: int = 0
    min_u: float = float("nan")
    norm_error: float = float("nan")
    energy_rise: float = float("nan")  # largest increase over the final 90% of phase 1
    wall: float = 0.0
    telemetry: list = field(default_factory=list)
    u: np.ndarray | None = None
    excited: list = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def energy_rise(energies, skip_fraction: float = 0.1) -> float:
    """Largest E_{n+1} - E_n over the final (1 - skip_fraction) of a history."""
    E = np.asarray(energies, float)
    E = E[int(np.floor(skip_fraction * E.size)):]
    return float(np.max(np.diff(E))) if E.size > 1 else 0.0


def run_resolution(cfg: ExperimentConfig, h: float) -> ResolutionResult:
    t0 = time.perf_counter()
    out = ResolutionResult(h)
    try:
        bundle = build_bundle(cfg.grid(h), cfg.shape, cfg.potential,
                              gradients=cfg.needs_gradients,
                              curvature_cutoff=cfg.curvature_cutoff)
        fc = cfg.flow_config()
        res = run_two_phase(cfg.model, bundle, fc)
        out.mu, out.energy = res.mu, res.energy
        out.mu_phase1, out.energy_phase1 = res.mu_phase1, res.energy_phase1
        out.steps_phase1, out.steps_phase2 = res.steps_phase1, res.steps_phase2
        out.unknowns = bundle.n
        out.min_u = float(res.u.min())
        out.norm_error = res.norm_error
        out.energy_rise = energy_rise(res.phase_energies(1))
        out.telemetry = res.telemetry
        out.u = res.u
        for k in cfg.excited:
            ex = compute_excited_state(k, cfg.model, bundle, fc, ground_mu=res.mu)
            out.excited.append(ExcitedRow(k, ex.mu, ex.energy, ex.tag, ex.steps_phase1,
                                          ex.steps_phase2))
            out.norm_error = max(out.norm_error, ex.norm_error)
    except Exception as exc:  # recorded, the study carries on
        out.error = f"{type(exc).__name__}: {exc}"
        log.error("h=%g failed:\n%s", h, traceback.format_exc())
    out.wall = time.perf_counter() - t0
    return out


def run_all(cfg: ExperimentConfig, workers: int = 1, runner=None) -> list[ResolutionResult]:
    runner = run_resolution if runner is None else runner
    hs = list(cfg.resolutions)
    if workers > 1 and len(hs) > 1 and runner is run_resolution:
        with ProcessPoolExecutor(max_workers=min(workers, len(hs))) as pool:
            results = list(pool.map(runner, [cfg] * len(hs), hs))
    else:
        results = [runner(cfg, h) for h in hs]
    return results


# ---------------------------------------------------------------------------
# field dumps


@dataclass(frozen=True)
class FieldDump:
    grid: Grid2D
    u: np.ndarray  # (ny, nx), exterior written as 0
    phi: np.ndarray
    mask: np.ndarray  # (ny, nx) labels


def write_field(path, grid: Grid2D, u_grid, phi, labels) -> None:
    """Header `nx ny h origin_x origin_y`, then `i j x y u phi mask` per node."""
    xs, ys = grid.xs(), grid.ys()
    with open(path, "w") as fh:
        fh.write(f"{grid.nx} {grid.ny} {float(grid.h)!r} {float(grid.origin[0])!r} "
                 f"{float(grid.origin[1])!r}\n")
        for j in range(grid.ny):
            for i in range(grid.nx):
                fh.write(f"{i} {j} {float(xs[i])!r} {float(ys[j])!r} {float(u_grid[j, i])!r} "
                         f"{float(phi[j, i])!r} {labels[j, i]}\n")


def dump_field(path, grid: Grid2D, shape, u_interior=None) -> FieldDump:
    """Dump an interior field (or zeros) with the classification of `shape`."""
    ls = build_level_set(grid, shape)
    cls = classify(grid, ls)
    u = np.zeros(grid.size)
    if u_interior is not None:
        u[cls.interior_order] = u_interior
    u = u.reshape(grid.shape)
    labels = cls.mask_labels()
    write_field(path, grid, u, ls.phi, labels)
    return FieldDump(grid, u, np.asarray(ls.phi), labels)


def load_field(path) -> FieldDump:
    with open(path) as fh:
        head = fh.readline().split()
        nx, ny = int(head[0]), int(head[1])
        h, ox, oy = (float(t) for t in head[2:5])
        grid = Grid2D((ox, oy), h, nx, ny)
        u = np.zeros((ny, nx))
        phi = np.zeros((ny, nx))
        mask = np.empty((ny, nx), dtype=object)
        count = 0
        for line in fh:
            i, j, _, _, uv, pv, lab = line.split()
            i, j = int(i), int(j)
            u[j, i], phi[j, i], mask[j, i] = float(uv), float(pv), lab
            count += 1
    if count != nx * ny:
        raise ValueError(f"{path}: expected {nx * ny} node lines, found {count}")
    return FieldDump(grid, u, phi, mask)


# ---------------------------------------------------------------------------
# experiments and studies


def fit_rate(hs, errors) -> float:
    """Least-squares slope of log(error) against log(h)."""
    hs = np.asarray(hs, float)
    e = np.asarray(errors, float)
    if hs.size < 2 or np.any(e <= 0):
        raise ValueError("rate fit needs at least two positive errors")
    A = np.column_stack([np.log(hs), np.ones(hs.size)])
    slope, _ = np.linalg.lstsq(A, np.log(e), rcond=None)[0]
    return float(slope)


@dataclass
class ConvergenceReport:
    name: str
    rows: list  # ResolutionResult
    reported: list  # report_scale * mu per row
    reference: float | None
    reference_source: str  # literature | self-finest
    fit_h: list
    fit_errors: list
    rate: float | None
    failures: list  # (h, message)


def _finest_ok(rows):
    ok = [r for r in rows if r.ok]
    return min(ok, key=lambda r: r.h) if ok else None


def write_results(cfg: ExperimentConfig, rows, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(serialize_config(cfg))
    s = cfg.report_scale
    _write_csv(out / "results.csv",
               ["h", "mu", "energy", "reported_mu", "mu_phase1", "energy_phase1",
                "steps_phase1", "steps_phase2", "unknowns", "min_u", "norm_error",
                "energy_rise_phase1", "status"],
               [(r.h, r.mu, r.energy, s * r.mu, r.mu_phase1, r.energy_phase1, r.steps_phase1,
                 r.steps_phase2, r.unknowns, r.min_u, r.norm_error, r.energy_rise,
                 "ok" if r.ok else "failed: " + r.error.replace(",", ";")) for r in rows])
    _write_csv(out / "timing.csv", ["h", "wall_seconds"], [(r.h, r.wall) for r in rows])
    _write_csv(out / "telemetry.csv", ["h", "phase", "step", "t", "residual", "mu", "energy"],
               [(r.h, *rec) for r in rows for rec in r.telemetry])
    if cfg.excited:
        _write_csv(out / "excited.csv",
                   ["h", "k", "mu", "energy", "tag", "steps_phase1", "steps_phase2"],
                   [(r.h, e.k, e.mu, e.energy, e.tag, e.steps_phase1, e.steps_phase2)
                    for r in rows for e in r.excited])
    if cfg.markers:
        _write_csv(out / "markers.csv", ["x", "y"], list(cfg.markers))
    best = _finest_ok(rows)
    if best is not None and best.u is not None:
        dump_field(out / "field.txt", cfg.grid(best.h), cfg.shape, best.u)


def run_experiment(cfg: ExperimentConfig, out=None, workers: int = 1, runner=None):
    """Run every resolution and write the per-run outputs; returns the rows."""
    rows = run_all(cfg, workers, runner)
    write_results(cfg, rows, Path(out if out is not None else cfg.output_dir))
    return rows


def build_report(cfg: ExperimentConfig, rows) -> ConvergenceReport:
    s = cfg.report_scale
    ok = sorted((r for r in rows if r.ok), key=lambda r: -r.h)
    failures = [(r.h, r.error) for r in rows if not r.ok]
    reported = [s * r.mu for r in rows]
    if cfg.rate_reference == "literature":
        ref, src, used = cfg.reference_mu, "literature", ok
    else:
        ref = s * ok[-1].mu if ok else None
        src, used = "self-finest", ok[:-1]
    hs = [r.h for r in used]
    errs = [abs(s * r.mu - ref) for r in used] if ref is not None else []
    rate = None
    if len(hs) >= 2 and all(e > 0 for e in errs):
        rate = fit_rate(hs, errs)
    if failures:
        log.warning("%s: %d resolution(s) failed, partial report", cfg.name, len(failures))
    return ConvergenceReport(cfg.name, rows, reported, ref, src, hs, errs, rate, failures)


def write_report(rep: ConvergenceReport, out: Path) -> None:
    used = set(rep.fit_h)
    conv = []
    for r, m in zip(rep.rows, rep.reported):
        err = abs(m - rep.reference) if (r.ok and rep.reference is not None) else None
        conv.append((r.h, m if r.ok else None, err, int(r.h in used),
                     "ok" if r.ok else "failed"))
    _write_csv(out / "convergence.csv", ["h", "reported_mu", "abs_error", "in_fit", "status"],
               conv)
    with open(out / "series.dat", "w") as fh:
        for h, e in zip(rep.fit_h, rep.fit_errors):
            fh.write(f"{fmt(h)} {fmt(e)}\n")
    _write_csv(out / "report.csv", ["name", "rate", "reference", "reference_source",
                                    "n_fit", "failures"],
               [(rep.name, rep.rate, rep.reference, rep.reference_source, len(rep.fit_h),
                 "; ".join(f"h={fmt(h)}: {m}" for h, m in rep.failures).replace(",", ";"))])


def convergence_study(cfg: ExperimentConfig, out=None, workers: int = 1,
                      runner=None) -> ConvergenceReport:
    """Run all resolutions, write run outputs plus the convergence report.

    `runner(cfg, h) -> ResolutionResult` replaces the solver (test hook).
    """
    if len(cfg.resolutions) < 3:
        raise ValueError("a convergence study needs at least three resolutions")
    out = Path(out if out is not None else cfg.output_dir)
    rows = run_experiment(cfg, out, workers, runner)
    rep = build_report(cfg, rows)
    write_report(rep, out)
    return rep


# ---------------------------------------------------------------------------
# geometry dump


def dump_geometry(cfg: ExperimentConfig, out=None) -> list[dict]:
    """Classification, ghost maps and extension matrix at every resolution."""
    out = Path(out if out is not None else cfg.output_dir) / "geometry"
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for idx, h in enumerate(cfg.resolutions):
        grid = cfg.grid(h)
        ls = build_level_set(grid, cfg.shape)
        cls = classify(grid, ls)
        gf = geometry_fields(ls, cls, curvature_cutoff=cfg.curvature_cutoff)
        A = ext.build_extension_matrix(cls, gf)
        fac = ext.build_diagonal_factors(cls, ls, gf)
        dump_field(out / f"grid_{idx}.txt", grid, cfg.shape)
        ext.write_triplets(A.entries, out / f"extension_{idx}.txt",
                           f"constant extension h={h!r} ghost x irregular")
        for order in ("linear", "cubic"):
            M = ext.assemble_ghost_map(A, fac, order)
            ext.write_triplets(M.matrix, out / f"ghostmap_{order}_{idx}.txt",
                               f"{order} ghost map h={h!r}")
        summary.append({"h": h, "nx": grid.nx, "ny": grid.ny,
                        "regular": int(cls.regular.sum()), "irregular": int(cls.irregular.sum()),
                        "ghost1": int(cls.ghost1.sum()), "ghost2": int(cls.ghost2.sum()),
                        "pinned": int(cls.pinned.sum()), "sweeps": A.sweeps})
    keys = list(summary[0])
    _write_csv(out / "classification.csv", keys, [[s[k] for k in keys] for s in summary])
    return summary


__all__ = ["ResolutionResult", "ConvergenceReport", "FieldDump", "run_resolution", "run_all",
           "run_experiment", "convergence_study", "build_report", "fit_rate", "dump_field",
           "write_field", "load_field", "dump_geometry", "energy_rise"]
