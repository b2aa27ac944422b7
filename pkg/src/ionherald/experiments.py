"""Simulate/analyze pipeline and parameter scans, with their file outputs."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .analysis import (CoincidenceSummary, CorrelationHistogram, OnsetCriteria, detect_onsets,
                       g2_histogram, poisson_errors, summarize)
from .atomic_model import absorption_lines
from .config import ExperimentConfig, ScanSpec
from .fitting import FitError, FitResult, fit_lorentzian, fit_sinusoid
from .sequencer import SimulationResult, effective_sigma_fractions, pumped_state, resolve_kappa, run_experiment
from .tags import Channel, TagStream

FAST_FACTOR = 10


def point_seed(master: int, index: int) -> int:
    """Independent 128-bit seed for scan point ``index``; stable when points are added."""
    state = np.random.SeedSequence(master, spawn_key=(index,)).generate_state(4, np.uint32)
    return int(sum(int(w) << (32 * i) for i, w in enumerate(state)))


# ---------------------------------------------------------------------------
# single run

@dataclass
class AnalysisResult:
    summary: CoincidenceSummary
    histogram: CorrelationHistogram
    n_tags: int
    has_apd: bool

    def to_dict(self) -> dict:
        s = self.summary
        h = self.histogram
        return {
            "n_tags": self.n_tags,
            "onsets": s.n_onsets,
            "coincidences": s.coincidences,
            "accidentals": s.accidentals,
            "accidentals_closed_form": s.closed_form_accidentals,
            "herald_efficiency": s.herald_efficiency,
            "apd_rate_in_windows": s.apd_rate,
            "window_ns": s.window,
            "bin_width_ns": h.bin_width,
            "zero_bin": h.zero_bin(),
            "off_peak_mean": h.off_peak_mean(),
        }


def analyze_stream(stream: TagStream, window: float = 10_000, bin_width: int = 8_000,
                   tau_range: int = 1_000_000, criteria: OnsetCriteria | None = None) -> AnalysisResult:
    onsets = detect_onsets(stream, criteria)
    apd = stream.select(Channel.APD)
    summary = summarize(stream, window, criteria, onsets=onsets)
    hist = g2_histogram(onsets, apd, bin_width, tau_range)
    return AnalysisResult(summary, hist, len(stream), len(apd) > 0)


def write_histogram_csv(hist: CorrelationHistogram, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau_ns", "count"])
        for t, c in zip(hist.tau.tolist(), hist.counts.tolist()):
            w.writerow([t, c])


def write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# scans

@dataclass
class ScanPoint:
    index: int
    x: float
    seed: int
    onsets: int
    coincidences: int
    accidentals: float
    absorption_rate: float


@dataclass
class ScanResult:
    variable: str
    duration: float
    kappa: float
    points: list[ScanPoint]
    fit: FitResult | None = None
    fit_notice: str = ""
    prediction: dict = field(default_factory=dict)

    @property
    def x(self):
        return np.array([p.x for p in self.points])

    @property
    def y(self):
        return np.array([p.coincidences for p in self.points], float)

    @property
    def sigma(self):
        return poisson_errors(self.y)


class ScanPointError(RuntimeError):
    def __init__(self, index: int, x: float, cause: Exception):
        self.index, self.x = index, x
        super().__init__(f"scan point {index} (x = {x:g}) failed: {cause}")


def run_point(cfg: ExperimentConfig, variable: str, index: int, x: float, duration: float,
              seed: int, kappa: float, window: float) -> ScanPoint:
    try:
        point_cfg = cfg.with_values(**{variable: x})
        sim = run_experiment(point_cfg, duration, seed, kappa)
        onsets = detect_onsets(sim.stream)
        s = summarize(sim.stream, window, onsets=onsets)
        return ScanPoint(index, x, seed, s.n_onsets, s.coincidences, s.accidentals, sim.absorption_rate)
    except Exception as exc:  # noqa: BLE001  re-raised with the point identified
        raise ScanPointError(index, x, exc) from exc


def _run_point_args(args):
    return run_point(*args)


def predicted_center(cfg: ExperimentConfig) -> float:
    """Filter setting (trigger axis) that mirrors the strength-weighted absorbed line."""
    lines = absorption_lines(pumped_state(cfg), effective_sigma_fractions(cfg), cfg.line)
    amp = np.array([ln.amplitude for ln in lines])
    if amp.sum() == 0:
        return math.nan
    return -float(np.dot(amp, [ln.center for ln in lines]) / amp.sum())


def run_scan(cfg: ExperimentConfig, spec: ScanSpec, seed: int | None = None, jobs: int = 1,
             fast: bool = False, window: float = 10_000, duration: float | None = None) -> ScanResult:
    """Simulate and analyze every scan value, then fit (sinusoid for angles, Lorentzian for frequency).

    The absorption scale is calibrated once on the base configuration and held
    fixed, so scan values only change what the ion sees, not the source.
    """
    master = cfg.seed if seed is None else seed
    dur = spec.per_point_duration if duration is None else duration
    if fast:
        dur /= FAST_FACTOR
    kappa = resolve_kappa(cfg)
    tasks = [(cfg, spec.variable, i, float(x), dur, point_seed(master, i), kappa, window)
             for i, x in enumerate(spec.values)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            points = list(pool.map(_run_point_args, tasks))
    else:
        points = [run_point(*t) for t in tasks]
    result = ScanResult(spec.variable, dur, kappa, points)
    if spec.variable == "filter_center":
        result.prediction = {"center": predicted_center(cfg)}
    if len(points) < 4:
        result.fit_notice = f"fit skipped: {len(points)} point(s), at least 4 needed"
        return result
    if spec.variable == "qwp_angle":
        result.fit = fit_sinusoid(result.x, result.y, result.sigma)
        peak = result.fit["offset"] + result.fit["amplitude"]
        result.fit.extra["max_rate_per_min"] = peak / (dur / 60.0)
    else:
        result.fit = fit_lorentzian(result.x, result.y, result.sigma)
    return result


def write_scan_outputs(result: ScanResult, prefix) -> list[Path]:
    prefix = str(prefix)
    points_path = Path(f"{prefix}_points.csv")
    with open(points_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "coincidences", "sigma"])
        for x, y, s in zip(result.x.tolist(), result.y.tolist(), result.sigma.tolist()):
            w.writerow([repr(x), int(y), repr(s)])
    written = [points_path]
    summary = {
        "variable": result.variable,
        "per_point_duration_s": result.duration,
        "kappa": result.kappa,
        "points": [asdict(p) for p in result.points],
        "prediction": result.prediction,
    }
    if result.fit is not None:
        fit_path = Path(f"{prefix}_fit.csv")
        curve = result.fit.evaluate(result.x)
        with open(fit_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "y", "sigma", "fit"])
            for row in zip(result.x.tolist(), result.y.tolist(), result.sigma.tolist(), curve.tolist()):
                w.writerow([repr(v) for v in row])
        written.append(fit_path)
        summary["fit"] = result.fit.to_dict()
    else:
        summary["fit"] = None
        summary["notice"] = result.fit_notice
    json_path = Path(f"{prefix}_summary.json")
    write_json(summary, json_path)
    written.append(json_path)
    return written


__all__ = [
    "AnalysisResult", "FitError", "ScanPoint", "ScanPointError", "ScanResult", "SimulationResult",
    "analyze_stream", "point_seed", "predicted_center", "run_point", "run_scan", "write_histogram_csv",
    "write_json", "write_scan_outputs",
]
