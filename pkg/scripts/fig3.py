"""Coincidences versus quarter-wave-plate angle, with the sinusoidal fit.

    python3 scripts/fig3.py [--fast] [--jobs N] [--out DIR]
"""
import argparse
from pathlib import Path

from ionherald.config import load_config, load_scan
from ionherald.experiments import run_scan, write_scan_outputs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fast", action="store_true")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = run_scan(load_config("fig3"), load_scan("fig3"), seed=args.seed, jobs=args.jobs, fast=args.fast)

    print(f"{'angle':>6} {'coinc':>6} {'acc':>6}")
    for p in res.points:
        print(f"{p.x:6.0f} {p.coincidences:6d} {p.accidentals:6.1f}")
    f = res.fit
    print(f"visibility {f['visibility']:.3f} +- {f.errors['visibility']:.3f}")
    print(f"maximum at {f['phase']:.1f} +- {f.errors['phase']:.1f} deg")
    print(f"peak rate  {f.extra['max_rate_per_min']:.2f} per min")
    for path in write_scan_outputs(res, out / "fig3"):
        print(f"-> {path}")


if __name__ == "__main__":
    main()
