"""Cooling / preparation / detection cycles as a discrete-event simulation.

Pairs are not generated one by one: at tens of MHz pair rate almost every pair
is far off resonance and leaves no trace. Instead the pair process is split
into two independent Poisson sub-processes with exact intensities,

* pairs whose partner *would* be absorbed by the pumped ion
  (intensity rho * kappa * weight(nu)), and
* pairs whose partner would not be absorbed but whose trigger is detected
  (intensity rho * p_trig(nu_t) * (1 - kappa * weight(nu))),

which is the thinning of one marked Poisson process and has the same law as
sampling every pair. The first sub-process is further split by decay branch:
the first S1/2-branch event of a window ends absorption for that cycle.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .atomic_model import Branch, IonState, Line, absorption_lines, lorentzian, optical_pump
from .config import ExperimentConfig
from .photon_source import filter_transmission, partner_polarization, sigma_fractions
from .tags import Channel, TagStream

BLOCK_CYCLES = 2048
PILOT_CYCLES = 2_000_000
CALIBRATION_TOLERANCE = 0.05

BRANCH_NONE, BRANCH_S, BRANCH_D = 0, 1, 2
_BRANCH_LABEL = {BRANCH_NONE: "none", BRANCH_S: Branch.TO_S1_2.value, BRANCH_D: Branch.TO_D_MANIFOLD.value}


class CalibrationError(RuntimeError):
    def __init__(self, message: str, max_rate: float | None = None):
        self.max_rate = max_rate
        super().__init__(message)


@dataclass(frozen=True)
class AbsorptionScale:
    kappa: float

    def __post_init__(self):
        if not 0 < self.kappa <= 1:
            raise ValueError("kappa must lie in (0, 1]")


# ---------------------------------------------------------------------------
# static physics of one configuration

def effective_sigma_fractions(cfg: ExperimentConfig) -> tuple[float, float]:
    """(f-, f+) reaching the ion, after the QWP and the polarization impurity."""
    f_minus, f_plus = sigma_fractions(partner_polarization(cfg.source))
    eps = cfg.source.pol_impurity
    return (1 - eps) * f_minus + eps * f_plus, (1 - eps) * f_plus + eps * f_minus


def pumped_state(cfg: ExperimentConfig) -> IonState:
    return optical_pump(cfg.sequence.pump_helicity, cfg.stretched_weight)


@dataclass
class _Physics:
    """Per-configuration constants of the two pair sub-processes."""

    cfg: ExperimentConfig
    kappa: float
    lines: list[Line]
    line_mass: np.ndarray  # amplitude x in-band integral of each line, MHz
    absorb_rate: float  # potential absorptions per second of detection window
    trigger_rate: float  # trigger-only candidates per second of detection window

    @classmethod
    def build(cls, cfg: ExperimentConfig, kappa: float, ion: IonState | None = None):
        ion = ion or pumped_state(cfg)
        lines = absorption_lines(ion, effective_sigma_fractions(cfg), cfg.line)
        half = 0.5 * cfg.source.band_fwhm
        g = 0.5 * cfg.line.gamma_atom_fwhm
        mass = np.array([
            ln.amplitude * g * (math.atan((half - ln.center) / g) - math.atan((-half - ln.center) / g))
            for ln in lines
        ])
        density = cfg.source.pair_rate / cfg.source.band_fwhm  # pairs / s / MHz
        absorb_rate = density * kappa * float(mass.sum())
        d = cfg.detector
        flt = cfg.filter
        trig_env = d.trigger_path_eff * d.apd_qe * flt.peak_transmission * math.pi * 0.5 * flt.stage_fwhm
        return cls(cfg, kappa, lines, mass, absorb_rate, density * trig_env)

    def weight(self, nu):
        w = np.zeros_like(nu, dtype=float)
        for ln in self.lines:
            w += ln.amplitude * lorentzian(nu - ln.center, self.cfg.line.gamma_atom_fwhm)
        return w

    def trigger_probability(self, nu_trigger):
        d = self.cfg.detector
        return d.trigger_path_eff * d.apd_qe * filter_transmission(nu_trigger, self.cfg.filter)

    def sample_absorbed(self, rng, n):
        """Partner detunings of absorbed photons, with the line each was drawn from."""
        if n == 0 or not self.lines:
            return np.zeros(0), np.zeros(0, np.int64)
        p = self.line_mass / self.line_mass.sum()
        idx = rng.choice(len(self.lines), size=n, p=p)
        centers = np.array([ln.center for ln in self.lines])[idx]
        g = 0.5 * self.cfg.line.gamma_atom_fwhm
        half = 0.5 * self.cfg.source.band_fwhm
        lo = np.arctan((-half - centers) / g)
        hi = np.arctan((half - centers) / g)
        u = rng.random(n)
        return centers + g * np.tan(lo + u * (hi - lo)), idx

    def jitter(self, rng, n):
        s = self.cfg.source.jitter_sigma
        return rng.normal(0.0, s, n) if s > 0 else np.zeros(n)


def potential_absorption_rate(cfg: ExperimentConfig, kappa: float, ion: IonState | None = None) -> float:
    """Rate (per second of detection window) of partner photons the pumped ion would absorb."""
    return _Physics.build(cfg, kappa, ion).absorb_rate


def expected_absorption_rate(cfg: ExperimentConfig, kappa: float) -> float:
    """Closed-form detectable (S1/2 branch) absorptions per wall-clock second."""
    lam_s = cfg.s_branch * potential_absorption_rate(cfg, kappa)
    seq = cfg.sequence
    p = -math.expm1(-lam_s * seq.detect_ns * 1e-9)
    return p / (seq.cycle_ns * 1e-9)


# ---------------------------------------------------------------------------
# ground truth

@dataclass
class GroundTruth:
    """Every absorption, one row each; cycles without absorption only count in ``n_cycles``."""

    n_cycles: int
    cycle: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    t_ns: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    detuning: np.ndarray = field(default_factory=lambda: np.zeros(0))
    line: list[str] = field(default_factory=list)
    branch: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int8))
    trigger: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    first_fluorescence_ns: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    @property
    def detectable(self) -> np.ndarray:
        return self.branch == BRANCH_S

    def absorption_times(self) -> np.ndarray:
        """Times of the fluorescence-starting absorptions, one per absorbing cycle."""
        return self.t_ns[self.detectable]

    @classmethod
    def concat(cls, parts: list["GroundTruth"]) -> "GroundTruth":
        if not parts:
            return cls(0)
        return cls(
            n_cycles=sum(p.n_cycles for p in parts),
            cycle=np.concatenate([p.cycle for p in parts]),
            t_ns=np.concatenate([p.t_ns for p in parts]),
            detuning=np.concatenate([p.detuning for p in parts]),
            line=[x for p in parts for x in p.line],
            branch=np.concatenate([p.branch for p in parts]),
            trigger=np.concatenate([p.trigger for p in parts]),
            first_fluorescence_ns=np.concatenate([p.first_fluorescence_ns for p in parts]),
        )

    def write_csv(self, path):
        """Sidecar: one row per absorption, plus a ``-1`` row for each empty cycle."""
        has = np.zeros(self.n_cycles, bool)
        has[self.cycle] = True
        order = np.argsort(self.cycle, kind="stable")
        rows_by_cycle: dict[int, list[int]] = {}
        for i in order:
            rows_by_cycle.setdefault(int(self.cycle[i]), []).append(int(i))
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["cycle_index", "absorption_time_ns", "absorbed_line", "branch",
                        "partner_detuning_mhz", "trigger_detected"])
            for c in range(self.n_cycles):
                if not has[c]:
                    w.writerow([c, -1, "", "none", "", 0])
                    continue
                for i in rows_by_cycle[c]:
                    w.writerow([c, int(self.t_ns[i]), self.line[i], _BRANCH_LABEL[int(self.branch[i])],
                                repr(float(self.detuning[i])), int(self.trigger[i])])


def read_ground_truth(path) -> GroundTruth:
    cyc, t, det, line, br, trig = [], [], [], [], [], []
    n = 0
    labels = {v: k for k, v in _BRANCH_LABEL.items()}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            c = int(row["cycle_index"])
            n = max(n, c + 1)
            if int(row["absorption_time_ns"]) < 0:
                continue
            cyc.append(c)
            t.append(int(row["absorption_time_ns"]))
            det.append(float(row["partner_detuning_mhz"]))
            line.append(row["absorbed_line"])
            br.append(labels[row["branch"]])
            trig.append(bool(int(row["trigger_detected"])))
    return GroundTruth(n, np.array(cyc, np.int64), np.array(t, np.int64), np.array(det, float),
                       line, np.array(br, np.int8), np.array(trig, bool))


# ---------------------------------------------------------------------------
# detector model

def _dead_time_keep(t: np.ndarray, dead_time: float) -> np.ndarray:
    keep = np.ones(len(t), bool)
    if dead_time <= 0 or len(t) < 2:
        return keep
    close = np.flatnonzero(np.diff(t) < dead_time) + 1
    prev = -2
    last = 0
    for i in close:
        if i - 1 != prev:  # predecessor heads its cluster and survived
            last = t[i - 1]
        if t[i] - last < dead_time:
            keep[i] = False
        else:
            last = t[i]
        prev = i
    return keep


def apply_dead_time(stream: TagStream, dead_time: float) -> TagStream:
    """Drop tags closer than ``dead_time`` ns to the previous surviving tag of their channel."""
    if dead_time <= 0 or len(stream) == 0:
        return stream
    keep = np.ones(len(stream), bool)
    for ch in np.unique(stream.channels):
        idx = np.flatnonzero(stream.channels == ch)
        keep[idx] = _dead_time_keep(stream.times[idx], dead_time)
    return TagStream(stream.channels[keep], stream.times[keep])


# ---------------------------------------------------------------------------
# engine

def _uniform_in(rng, starts, lengths, counts):
    """For each interval i draw counts[i] uniform points in [starts[i], starts[i] + lengths[i])."""
    total = int(counts.sum())
    if total == 0:
        return np.zeros(0), np.zeros(0, np.int64)
    owner = np.repeat(np.arange(len(counts)), counts)
    return starts[owner] + rng.random(total) * lengths[owner], owner


def _simulate_block(rng, phys: _Physics, t0_ns: int, first_cycle: int, n: int, emit_tags: bool = True):
    cfg = phys.cfg
    seq, det = cfg.sequence, cfg.detector
    T = seq.detect_ns * 1e-9
    cycle_start = t0_ns + np.arange(n, dtype=np.int64) * seq.cycle_ns
    det_start = cycle_start + seq.detect_offset_ns
    lam_a = phys.absorb_rate
    lam_s = cfg.s_branch * lam_a

    # terminal (S1/2 branch) absorption: first event of rate lam_s
    e = rng.exponential(size=n)
    with np.errstate(divide="ignore"):
        u = e / lam_s if lam_s > 0 else np.full(n, np.inf)
    absorbed = u < T
    t_stop = np.where(absorbed, u, T)
    # D-branch absorptions before the terminal one, and unabsorbed would-be absorptions after it
    n_d = rng.poisson((lam_a - lam_s) * t_stop)
    n_post = rng.poisson(lam_a * (T - t_stop))
    t_d, own_d = _uniform_in(rng, np.zeros(n), t_stop, n_d)
    t_post, own_post = _uniform_in(rng, t_stop, T - t_stop, n_post)

    term_cycles = np.flatnonzero(absorbed)
    ev_t = np.concatenate([u[term_cycles], t_d, t_post])
    ev_owner = np.concatenate([term_cycles, own_d, own_post])
    ev_branch = np.concatenate([
        np.full(len(term_cycles), BRANCH_S, np.int8),
        np.full(len(t_d), BRANCH_D, np.int8),
        np.full(len(t_post), BRANCH_NONE, np.int8),
    ])
    nu, line_idx = phys.sample_absorbed(rng, len(ev_t))
    nu_trig = -nu + phys.jitter(rng, len(ev_t))
    trig = rng.random(len(ev_t)) < phys.trigger_probability(nu_trig)
    ev_ns = det_start[ev_owner] + np.floor(ev_t * 1e9).astype(np.int64)

    real = ev_branch != BRANCH_NONE
    order = np.lexsort((ev_ns[real], ev_owner[real]))
    labels = [phys.lines[i].label for i in line_idx[real][order]] if phys.lines else []
    truth = GroundTruth(
        n_cycles=n,
        cycle=(ev_owner[real] + first_cycle)[order],
        t_ns=ev_ns[real][order],
        detuning=nu[real][order],
        line=labels,
        branch=ev_branch[real][order],
        trigger=trig[real][order],
    )
    if not emit_tags:
        return None, truth

    # trigger-only pairs: candidates from a Cauchy envelope around the filter, thinned
    flt = cfg.filter
    n_c = rng.poisson(phys.trigger_rate * T, size=n)
    t_c, own_c = _uniform_in(rng, np.zeros(n), np.full(n, T), n_c)
    m = len(t_c)
    x = flt.center + 0.5 * flt.stage_fwhm * np.tan(np.pi * (rng.random(m) - 0.5))
    nu_p = phys.jitter(rng, m) - x
    stage = 1.0 / (1.0 + (2.0 * (x - flt.center) / flt.stage_fwhm) ** 2)
    accept_p = stage ** (flt.stages - 1) * (1.0 - phys.kappa * phys.weight(nu_p))
    accept = (np.abs(nu_p) <= 0.5 * cfg.source.band_fwhm) & (rng.random(m) < accept_p)
    apd_pairs = np.concatenate([
        det_start[own_c[accept]] + np.floor(t_c[accept] * 1e9).astype(np.int64),
        ev_ns[trig],
    ])

    # fluorescence after each terminal absorption, to the end of the window
    rate = det.pmt_fluorescence_rate
    n_f = rng.poisson(rate * (T - u[term_cycles]))
    t_f, own_f = _uniform_in(rng, u[term_cycles], T - u[term_cycles], n_f)
    det_end = det_start + seq.detect_ns
    fl_ns = np.minimum(det_start[term_cycles][own_f] + np.floor(t_f * 1e9).astype(np.int64),
                       det_end[term_cycles][own_f] - 1)
    first_fl = np.full(len(term_cycles), -1, np.int64)
    if len(fl_ns):
        np.minimum.at(first_fl.view(np.uint64), own_f, fl_ns.view(np.uint64))

    cyc_len = np.full(n, seq.cycle_ns * 1e-9)
    dark = []
    for r in (det.pmt_dark_rate, det.apd_dark_rate):
        k = rng.poisson(r * seq.cycle_ns * 1e-9, size=n)
        t_k, own_k = _uniform_in(rng, np.zeros(n), cyc_len, k)
        dark.append(cycle_start[own_k] + np.floor(t_k * 1e9).astype(np.int64))

    is_term = truth.branch == BRANCH_S
    ff = np.full(len(truth.t_ns), -1, np.int64)
    # truth rows are sorted by cycle; terminal rows appear in the same cycle order as term_cycles
    ff[np.flatnonzero(is_term)] = first_fl
    truth.first_fluorescence_ns = ff

    pmt = np.concatenate([fl_ns, dark[0]])
    apd = np.concatenate([apd_pairs, dark[1]])
    parts = [
        (np.full(len(pmt), Channel.PMT, np.uint8), pmt),
        (np.full(len(apd), Channel.APD, np.uint8), apd),
        (np.full(n, Channel.CYCLE_START, np.uint8), cycle_start),
        (np.full(n, Channel.DETECT_START, np.uint8), det_start),
    ]
    return parts, truth


@dataclass
class SimulationResult:
    stream: TagStream
    truth: GroundTruth
    kappa: float
    n_cycles: int
    duration: float  # s of simulated wall-clock time

    @property
    def absorption_rate(self) -> float:
        """Detectable absorptions per wall-clock second."""
        return int(self.truth.detectable.sum()) / self.duration


def resolve_kappa(cfg: ExperimentConfig, kappa: float | None = None) -> float:
    if kappa is not None:
        return AbsorptionScale(kappa).kappa
    if cfg.kappa is not None:
        return cfg.kappa
    seed = np.random.SeedSequence(cfg.seed, spawn_key=(0xCA1,))
    return calibrate_absorption_scale(cfg, cfg.target_rate, seed).kappa


def run_cycle(rng: np.random.Generator, cfg: ExperimentConfig, t0: int = 0, kappa: float | None = None,
              ion: IonState | None = None, cycle_index: int = 0):
    """One cooling/preparation/detection cycle starting at ``t0`` ns.

    ``ion`` replaces the optically pumped detection-phase state when given.
    Returns the (dead-time filtered) tags and the cycle's ground truth.
    """
    phys = _Physics.build(cfg, resolve_kappa(cfg, kappa), ion)
    parts, truth = _simulate_block(rng, phys, t0, cycle_index, 1)
    stream = apply_dead_time(TagStream.merge(parts), cfg.detector.dead_time)
    return stream, truth


def n_cycles_for(cfg: ExperimentConfig, duration: float) -> int:
    d_ns = round(duration * 1e9)
    return max(1, -(-d_ns // cfg.sequence.cycle_ns))


def run_experiment(cfg: ExperimentConfig, duration: float | None = None, seed: int | None = None,
                   kappa: float | None = None, ion: IonState | None = None) -> SimulationResult:
    """Concatenate ceil(duration / cycle) cycles from t = 0; deterministic in ``seed``."""
    duration = cfg.duration if duration is None else duration
    if not duration > 0:
        raise ValueError("duration must be positive")
    seed = cfg.seed if seed is None else seed
    k = resolve_kappa(cfg, kappa)
    phys = _Physics.build(cfg, k, ion)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n_total = n_cycles_for(cfg, duration)
    parts, truths = [], []
    for first in range(0, n_total, BLOCK_CYCLES):
        n = min(BLOCK_CYCLES, n_total - first)
        p, tr = _simulate_block(rng, phys, first * cfg.sequence.cycle_ns, first, n)
        parts.extend(p)
        truths.append(tr)
    stream = apply_dead_time(TagStream.merge(parts), cfg.detector.dead_time)
    return SimulationResult(stream, GroundTruth.concat(truths), k, n_total,
                            n_total * cfg.sequence.cycle_ns * 1e-9)


def simulate_absorptions(cfg: ExperimentConfig, n_cycles: int, seed: int = 0,
                         kappa: float | None = None, ion: IonState | None = None) -> GroundTruth:
    """Ground truth of the absorption process alone, without generating tags."""
    phys = _Physics.build(cfg, resolve_kappa(cfg, kappa), ion)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    truths = []
    for first in range(0, n_cycles, BLOCK_CYCLES * 16):
        n = min(BLOCK_CYCLES * 16, n_cycles - first)
        truths.append(_simulate_block(rng, phys, first * cfg.sequence.cycle_ns, first, n, emit_tags=False)[1])
    return GroundTruth.concat(truths)


def calibrate_absorption_scale(cfg: ExperimentConfig, target_rate: float, seed=0,
                               n_cycles: int = PILOT_CYCLES) -> AbsorptionScale:
    """Bisect kappa until a pilot run's detectable absorption rate matches ``target_rate``.

    The pilot draws the same unit exponentials for every kappa, so its rate is
    monotone in kappa and bisection is well defined.
    """
    if not target_rate > 0:
        raise ValueError("target_rate must be positive")
    seq = cfg.sequence
    T = seq.detect_ns * 1e-9
    wall = n_cycles * seq.cycle_ns * 1e-9
    lam_s_unit = cfg.s_branch * potential_absorption_rate(cfg, 1.0)
    e = np.sort(np.random.default_rng(seed).exponential(size=n_cycles))

    def pilot_rate(k):
        return np.searchsorted(e, lam_s_unit * k * T, side="left") / wall

    max_rate = pilot_rate(1.0)
    if max_rate < target_rate * (1 - CALIBRATION_TOLERANCE):
        raise CalibrationError(
            f"target rate {target_rate:g}/s is unachievable; maximum at kappa = 1 is {max_rate:.4g}/s",
            max_rate,
        )
    lo, hi = 0.0, 1.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if pilot_rate(mid) < target_rate:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-12 * hi:
            break
    k = hi
    if abs(pilot_rate(k) - target_rate) > CALIBRATION_TOLERANCE * target_rate:
        raise CalibrationError(f"pilot rate {pilot_rate(k):.4g}/s misses target {target_rate:g}/s", max_rate)
    return AbsorptionScale(k)
