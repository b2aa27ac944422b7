"""Command-line front end: ``simulate``, ``analyze``, ``scan`` and ``calibrate``.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or fit error.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .analysis import OnsetCriteria
from .config import ConfigError, load_config, load_scan, save_config
from .experiments import (ScanPointError, analyze_stream, run_scan, write_histogram_csv, write_json,
                          write_scan_outputs)
from .fitting import FitError
from .sequencer import CalibrationError, calibrate_absorption_scale, expected_absorption_rate, run_experiment
from .tags import TagFormatError, read_tags, write_tags

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _us_to_ns(v: float) -> int:
    return int(round(v * 1000))


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_values(seed=args.seed)
    if args.duration is not None:
        cfg = cfg.with_values(duration=args.duration)
    if args.kappa is not None:
        cfg = cfg.with_values(kappa=args.kappa)
    res = run_experiment(cfg)
    out = Path(args.out)
    write_tags(res.stream, out, "csv" if args.csv else "binary")
    truth_path = out.with_name(out.name + ".truth.csv")
    res.truth.write_csv(truth_path)
    print(f"cycles: {res.n_cycles}")
    print(f"kappa: {res.kappa:.6g}")
    print(f"absorption rate: {res.absorption_rate:.4f} /s "
          f"({int(res.truth.detectable.sum())} detectable absorptions in {res.duration:g} s)")
    print(f"tags: {len(res.stream)} -> {out}")
    print(f"ground truth -> {truth_path}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    stream = read_tags(args.tags)
    criteria = OnsetCriteria(min_followers=args.min_followers, follow_window=_us_to_ns(args.follow_window))
    res = analyze_stream(stream, _us_to_ns(args.window), _us_to_ns(args.bin), _us_to_ns(args.range), criteria)
    if not res.has_apd:
        print("warning: no APD tags in stream; coincidences are zero", file=sys.stderr)
    prefix = args.out_prefix
    hist_path = Path(f"{prefix}_g2.csv")
    write_histogram_csv(res.histogram, hist_path)
    summary = res.to_dict()
    summary["source"] = Path(args.tags).name
    write_json(summary, f"{prefix}_summary.json")
    s = res.summary
    print(f"onsets: {s.n_onsets}")
    print(f"coincidences: {s.coincidences}")
    print(f"accidentals: {s.accidentals:.2f} (closed form {s.closed_form_accidentals:.2f})")
    if s.n_onsets:
        print(f"herald efficiency: {s.herald_efficiency:.4f}")
    off = res.histogram.off_peak_mean()
    ratio = f"{res.histogram.zero_bin() / off:.2f}" if off > 0 else "inf"
    print(f"g2 zero bin: {res.histogram.zero_bin()} (off-peak mean {off:.2f}, ratio {ratio}) -> {hist_path}")
    return EXIT_OK


def cmd_scan(args) -> int:
    cfg = load_config(args.config)
    spec = load_scan(args.scan)
    res = run_scan(cfg, spec, seed=args.seed, jobs=args.jobs, fast=args.fast,
                   window=_us_to_ns(args.window), duration=args.duration)
    paths = write_scan_outputs(res, args.out_prefix)
    print(f"{spec.variable}: {len(res.points)} points x {res.duration:g} s (kappa {res.kappa:.6g})")
    for p in res.points:
        print(f"  {p.x:10.4g}  onsets {p.onsets:6d}  coincidences {p.coincidences:5d}  "
              f"accidentals {p.accidentals:6.2f}")
    if res.fit is None:
        print(f"notice: {res.fit_notice}")
    else:
        for name, v in res.fit.params.items():
            print(f"  {name} = {v:.5g} +- {res.fit.errors[name]:.2g}")
        for name, v in res.fit.extra.items():
            print(f"  {name} = {v:.5g}")
        if res.prediction:
            print(f"  model center = {res.prediction['center']:.5g}")
    for p in paths:
        print(f"-> {p}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = load_config(args.config)
    target = cfg.target_rate if args.target_rate is None else args.target_rate
    seed = cfg.seed if args.seed is None else args.seed
    scale = calibrate_absorption_scale(cfg, target, seed)
    print(f"kappa: {scale.kappa:.6g}")
    print(f"expected absorption rate: {expected_absorption_rate(cfg, scale.kappa):.4f} /s (target {target:g})")
    if args.write:
        save_config(cfg.with_values(kappa=scale.kappa), args.write)
        print(f"-> {args.write}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ionherald", description="Heralded single-photon absorption by a single ion: "
                "simulation and time-tag analysis.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="simulate a run and write a tag file plus ground-truth sidecar")
    s.add_argument("config", help="config file or builtin name (fig2d, fig3, ...)")
    s.add_argument("out", help="tag file to write (.ttg binary, or CSV with --csv)")
    s.add_argument("--seed", type=int)
    s.add_argument("--duration", type=float, help="simulated seconds")
    s.add_argument("--kappa", type=float, help="fixed absorption scale instead of calibration")
    s.add_argument("--csv", action="store_true", help="write the CSV tag encoding")
    s.set_defaults(func=cmd_simulate)

    a = sub.add_parser("analyze", help="detect onsets, histogram g2 and count coincidences")
    a.add_argument("tags", help="TTG1 or CSV tag file")
    a.add_argument("out_prefix")
    a.add_argument("--window", type=float, default=10.0, help="coincidence half-window, us (default 10)")
    a.add_argument("--bin", type=float, default=8.0, help="g2 bin width, us (default 8)")
    a.add_argument("--range", type=float, default=1000.0, help="g2 half-range, us (default 1000)")
    a.add_argument("--min-followers", type=int, default=5)
    a.add_argument("--follow-window", type=float, default=2000.0, help="us (default 2000)")
    a.set_defaults(func=cmd_analyze)

    c = sub.add_parser("scan", help="run a QWP-angle or filter-detuning scan and fit it")
    c.add_argument("config")
    c.add_argument("scan", help="scan spec file or builtin name (fig3, fig4)")
    c.add_argument("out_prefix")
    c.add_argument("--seed", type=int, help="master seed (default: config seed)")
    c.add_argument("--jobs", type=int, default=1)
    c.add_argument("--fast", action="store_true", help="scale per-point durations down 10x")
    c.add_argument("--duration", type=float, help="override per-point duration, s")
    c.add_argument("--window", type=float, default=10.0, help="coincidence half-window, us")
    c.set_defaults(func=cmd_scan)

    k = sub.add_parser("calibrate", help="find the absorption scale giving the target rate")
    k.add_argument("config")
    k.add_argument("--target-rate", type=float)
    k.add_argument("--seed", type=int)
    k.add_argument("--write", help="save the config with kappa fixed to this path")
    k.set_defaults(func=cmd_calibrate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TagFormatError, FitError, CalibrationError, ScanPointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
