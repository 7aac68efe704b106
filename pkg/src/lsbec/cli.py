"""Command line entry point.

    lsbec run <config>            run all resolutions, write per-run outputs
    lsbec study <config>          run + convergence report (rate fit)
    lsbec catalog list            list built-in experiments
    lsbec catalog run <name>      convergence study of a built-in experiment
    lsbec dump-geometry <config>  classification, extension matrix, ghost maps

Flags: --workers N, --out DIR, --dry-run, --tol-override X.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import catalog
from .config import ConfigError, ExperimentConfig, check_margin, load_config, serialize_config
from .study import convergence_study, dump_geometry, fmt, run_experiment


def _common(p):
    p.add_argument("--workers", type=int, default=1, help="resolutions solved concurrently")
    p.add_argument("--out", default=None, help="output directory (default out/<name>)")
    p.add_argument("--dry-run", action="store_true", help="echo the expanded config and stop")
    p.add_argument("--tol-override", type=float, default=None,
                   help="steady-state tolerance for both phases")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lsbec", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in ("run", "study", "dump-geometry"):
        p = sub.add_parser(verb)
        p.add_argument("config")
        _common(p)
    cat = sub.add_parser("catalog")
    csub = cat.add_subparsers(dest="action", required=True)
    csub.add_parser("list")
    p = csub.add_parser("run")
    p.add_argument("name")
    _common(p)
    return ap


def _prepare(cfg: ExperimentConfig, args, idx: int = 0) -> tuple[ExperimentConfig, Path]:
    if args.tol_override is not None:
        cfg = cfg.with_tolerance(args.tol_override)
    if args.out is not None:
        out = Path(args.out) if idx == 0 else Path(args.out) / cfg.name
        cfg = replace(cfg, out_dir=str(out))
    return cfg, Path(cfg.output_dir)


def _summary(rows, cfg, rep=None):
    for r in rows:
        if r.ok:
            print(f"h={fmt(r.h)} mu={fmt(cfg.report_scale * r.mu)} E={fmt(r.energy)} "
                  f"steps={r.steps_phase1}+{r.steps_phase2} wall={r.wall:.1f}s")
        else:
            print(f"h={fmt(r.h)} FAILED {r.error}")
    if rep is not None:
        print(f"rate={fmt(rep.rate)} reference={fmt(rep.reference)} ({rep.reference_source})")


def _execute(cfg, args, verb, idx=0):
    cfg, out = _prepare(cfg, args, idx)
    check_margin(cfg)
    if args.dry_run:
        print(serialize_config(cfg))
        return 0
    if verb == "run":
        rows = run_experiment(cfg, out, args.workers)
        _summary(rows, cfg)
        return 0 if all(r.ok for r in rows) else 1
    if verb == "study":
        rep = convergence_study(cfg, out, args.workers)
        _summary(rep.rows, cfg, rep)
        return 0 if not rep.failures else 1
    if verb == "dump-geometry":
        for s in dump_geometry(cfg, out):
            print(" ".join(f"{k}={fmt(v)}" for k, v in s.items()))
        return 0
    raise ValueError(verb)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "catalog":
            if args.action == "list":
                for e in catalog.CATALOG.values():
                    flags = e.flags
                    print(f"{e.name:18s} {e.description}" + (f" [{', '.join(flags)}]"
                                                             if flags else ""))
                return 0
            entry = catalog.get(args.name)
            code = 0
            for idx, cfg in enumerate(entry.configs()):
                print(f"== {cfg.name}")
                verb = "study" if len(cfg.resolutions) >= 3 else "run"
                code |= _execute(cfg, args, verb, idx)
            return code
        return _execute(load_config(args.config), args, args.verb)
    except (ConfigError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
