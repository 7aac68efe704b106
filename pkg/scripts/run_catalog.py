"""Run every built-in experiment and print one summary row per config.

    python scripts/run_catalog.py [--out out] [--workers N] [--only NAME ...]
"""
import argparse
import logging
from pathlib import Path

from lsbec import catalog
from lsbec.study import build_report, convergence_study, fmt, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--out", default="out")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--only", nargs="*", default=None)
    args = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)

    names = args.only or list(catalog.CATALOG)
    print("config,finest_h,mu,energy,reported_mu,reference,reference_source,rate,failures")
    for name in names:
        for cfg in catalog.get(name).configs():
            out = Path(args.out) / cfg.name
            if len(cfg.resolutions) >= 3:
                rep = convergence_study(cfg, out, args.workers)
            else:
                rep = build_report(cfg, run_experiment(cfg, out, args.workers))
            ok = [r for r in rep.rows if r.ok]
            f = min(ok, key=lambda r: r.h) if ok else None
            print(",".join([cfg.name, fmt(f.h if f else None), fmt(f.mu if f else None),
                            fmt(f.energy if f else None),
                            fmt(cfg.report_scale * f.mu if f else None), fmt(rep.reference),
                            rep.reference_source, fmt(rep.rate), str(len(rep.failures))]),
                  flush=True)


if __name__ == "__main__":
    main()
