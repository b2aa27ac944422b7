"""Filter-detuning scans for both pumping directions and the fitted line centers.

    python3 scripts/fig4.py [--fast] [--jobs N] [--out DIR]
"""
import argparse
import math
from pathlib import Path

from ionherald.config import load_config, load_scan
from ionherald.experiments import predicted_center, run_scan, write_scan_outputs


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--fast", action="store_true")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = load_scan("fig4")
    fits = {}
    for name in ("fig4_sigma_plus", "fig4_sigma_minus"):
        cfg = load_config(name)
        res = run_scan(cfg, spec, jobs=args.jobs, fast=args.fast)
        write_scan_outputs(res, out / name)
        f = res.fit
        fits[name] = (f, predicted_center(cfg))
        print(f"{name:18s} center {f['center']:7.2f} +- {f.errors['center']:.2f}  "
              f"fwhm {f['fwhm']:5.1f} +- {f.errors['fwhm']:.1f}  model {predicted_center(cfg):.3f}")

    (fp, mp), (fm, mm) = fits["fig4_sigma_plus"], fits["fig4_sigma_minus"]
    split = fp["center"] - fm["center"]
    err = math.hypot(fp.errors["center"], fm.errors["center"])
    print(f"splitting {split:.2f} +- {err:.2f} MHz (model {mp - mm:.3f})")


if __name__ == "__main__":
    main()
