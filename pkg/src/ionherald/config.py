"""Experiment and scan configuration, with the flat ``key = value`` file format.

Every key maps to one field of a section dataclass. Unknown keys are rejected
and each value is checked against its section's invariants on load.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Callable

from .atomic_model import S_BRANCH_PROBABILITY, Helicity, LineParams
from .photon_source import FilterConfig, JonesVector, SourceConfig


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        self.key = key
        super().__init__(f"{key}: {message}" if key else message)


@dataclass(frozen=True)
class SequenceConfig:
    t_cool: float = 5.0  # ms
    t_prep: float = 5.0  # ms
    t_detect: float = 60.0  # ms
    pump_helicity: Helicity = Helicity.SIGMA_PLUS

    def __post_init__(self):
        for name in ("t_cool", "t_prep", "t_detect"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.pump_helicity is Helicity.PI:
            raise ValueError("pump_helicity must be circular")

    @property
    def cycle_ns(self) -> int:
        return round((self.t_cool + self.t_prep + self.t_detect) * 1e6)

    @property
    def detect_offset_ns(self) -> int:
        return round((self.t_cool + self.t_prep) * 1e6)

    @property
    def detect_ns(self) -> int:
        return self.cycle_ns - self.detect_offset_ns


@dataclass(frozen=True)
class DetectorConfig:
    apd_qe: float = 0.35
    pmt_fluorescence_rate: float = 200_000.0  # counts/s while fluorescing
    pmt_dark_rate: float = 200.0
    apd_dark_rate: float = 50.0
    dead_time: float = 50.0  # ns
    trigger_path_eff: float = 0.60

    def __post_init__(self):
        for name in ("pmt_fluorescence_rate", "pmt_dark_rate", "apd_dark_rate", "dead_time"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0 < self.apd_qe <= 1:
            raise ValueError("apd_qe must lie in (0, 1]")
        if not 0 < self.trigger_path_eff <= 1:
            raise ValueError("trigger_path_eff must lie in (0, 1]")


@dataclass(frozen=True)
class ExperimentConfig:
    source: SourceConfig = field(default_factory=SourceConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    line: LineParams = field(default_factory=LineParams)
    sequence: SequenceConfig = field(default_factory=SequenceConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    stretched_weight: float = 0.5
    s_branch: float = S_BRANCH_PROBABILITY
    kappa: float | None = None  # None: calibrate against target_rate
    target_rate: float = 1.1  # detectable absorptions per wall-clock second
    seed: int = 0
    duration: float = 1800.0  # s

    def __post_init__(self):
        if not 0 <= self.stretched_weight <= 1:
            raise ValueError("stretched_weight must lie in [0, 1]")
        if not 0 <= self.s_branch <= 1:
            raise ValueError("s_branch must lie in [0, 1]")
        if self.kappa is not None and not 0 < self.kappa <= 1:
            raise ValueError("kappa must lie in (0, 1]")
        if not self.target_rate > 0:
            raise ValueError("target_rate must be positive")
        if not self.duration > 0:
            raise ValueError("duration must be positive")

    def with_values(self, **flat) -> "ExperimentConfig":
        """Copy with flat-key overrides, e.g. ``cfg.with_values(qwp_angle=45)``."""
        cfg = self
        for key, value in flat.items():
            cfg = _set_flat(cfg, key, value)
        return cfg


# ---------------------------------------------------------------------------
# flat key table

def _float(text):
    return float(text)


def _int(text):
    try:
        return int(str(text).strip())
    except ValueError:
        v = float(text)
        if v != int(v):
            raise ValueError(f"{text!r} is not an integer") from None
        return int(v)


def _kappa(text):
    return None if str(text).strip().lower() in ("auto", "none", "") else float(text)


def _helicity(text):
    return text if isinstance(text, Helicity) else Helicity.parse(str(text))


def _jones(text):
    if isinstance(text, JonesVector):
        return text
    parts = [p.strip() for p in str(text).split(",")]
    if len(parts) != 2:
        raise ValueError("expected 'c_minus, c_plus'")
    c = [complex(p.replace(" ", "")) for p in parts]
    return JonesVector(c[0], c[1])


def _fmt_float(v):
    return repr(float(v))


def _fmt_complex(z: complex):
    return f"{z.real!r}{z.imag:+}j"


_FORMAT: dict[Callable, Callable[[Any], str]] = {
    _float: _fmt_float,
    _int: lambda v: str(int(v)),
    _kappa: lambda v: "auto" if v is None else repr(float(v)),
    _helicity: lambda v: v.label(),
    _jones: lambda v: f"{_fmt_complex(v.c_minus)}, {_fmt_complex(v.c_plus)}",
}

# flat key -> (section attribute or None for top level, field name, parser)
KEYS: dict[str, tuple[str | None, str, Callable]] = {
    "pair_rate": ("source", "pair_rate", _float),
    "band_fwhm": ("source", "band_fwhm", _float),
    "corr_jitter_fwhm": ("source", "corr_jitter_fwhm", _float),
    "input_pol": ("source", "input_pol", _jones),
    "qwp_angle": ("source", "qwp_angle", _float),
    "pol_impurity": ("source", "pol_impurity", _float),
    "filter_center": ("filter", "center", _float),
    "filter_fwhm": ("filter", "fwhm", _float),
    "filter_peak_transmission": ("filter", "peak_transmission", _float),
    "filter_stages": ("filter", "stages", _int),
    "gamma_atom_fwhm": ("line", "gamma_atom_fwhm", _float),
    "b_field": ("line", "b_field", _float),
    "line_center": ("line", "line_center", _float),
    "mu_b": ("line", "mu_b", _float),
    "t_cool": ("sequence", "t_cool", _float),
    "t_prep": ("sequence", "t_prep", _float),
    "t_detect": ("sequence", "t_detect", _float),
    "pump_helicity": ("sequence", "pump_helicity", _helicity),
    "apd_qe": ("detector", "apd_qe", _float),
    "pmt_fluorescence_rate": ("detector", "pmt_fluorescence_rate", _float),
    "pmt_dark_rate": ("detector", "pmt_dark_rate", _float),
    "apd_dark_rate": ("detector", "apd_dark_rate", _float),
    "dead_time": ("detector", "dead_time", _float),
    "trigger_path_eff": ("detector", "trigger_path_eff", _float),
    "stretched_weight": (None, "stretched_weight", _float),
    "s_branch": (None, "s_branch", _float),
    "kappa": (None, "kappa", _kappa),
    "target_rate": (None, "target_rate", _float),
    "seed": (None, "seed", _int),
    "duration": (None, "duration", _float),
}


def _set_flat(cfg: ExperimentConfig, key: str, value) -> ExperimentConfig:
    if key not in KEYS:
        raise ConfigError("unknown key", key)
    section, name, parse = KEYS[key]
    try:
        v = parse(value)
        if isinstance(v, float) and not math.isfinite(v):
            raise ValueError("value must be finite")
        if section is None:
            return replace(cfg, **{name: v})
        return replace(cfg, **{section: replace(getattr(cfg, section), **{name: v})})
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc), key) from None


def get_flat(cfg: ExperimentConfig, key: str):
    section, name, _ = KEYS[key]
    obj = cfg if section is None else getattr(cfg, section)
    return getattr(obj, name)


def parse_config(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key", key)
        seen.add(key)
        cfg = _set_flat(cfg, key, value)
    return cfg


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for key, (_, _, parse) in KEYS.items():
        lines.append(f"{key} = {_FORMAT[parse](get_flat(cfg, key))}")
    return "\n".join(lines) + "\n"


def builtin_path(name: str, suffix: str = ".cfg") -> Path | None:
    """Resolve a shipped config or scan file by name (``fig3`` or ``fig3.cfg``)."""
    root = resources.files("ionherald") / "configs"
    for cand in (name, f"{name}{suffix}"):
        p = root / cand
        if p.is_file():
            return Path(str(p))
    return None


def resolve(path_or_name, suffix: str = ".cfg") -> Path:
    p = Path(path_or_name)
    if p.is_file():
        return p
    found = builtin_path(str(path_or_name), suffix)
    if found is None:
        raise ConfigError(f"no such file or builtin config: {path_or_name}")
    return found


def load_config(path) -> ExperimentConfig:
    return parse_config(resolve(path).read_text())


def save_config(cfg: ExperimentConfig, path):
    Path(path).write_text(dump_config(cfg))


# ---------------------------------------------------------------------------
# scans

SCAN_VARIABLES = ("qwp_angle", "filter_center")


@dataclass(frozen=True)
class ScanSpec:
    variable: str
    values: tuple[float, ...]
    per_point_duration: float = 600.0

    def __post_init__(self):
        if self.variable not in SCAN_VARIABLES:
            raise ValueError(f"variable must be one of {SCAN_VARIABLES}")
        if not self.values:
            raise ValueError("values must be non-empty")
        if not self.per_point_duration > 0:
            raise ValueError("per_point_duration must be positive")


def _parse_values(text: str) -> tuple[float, ...]:
    """Comma list, or ``start:stop:step`` with an inclusive stop."""
    text = text.strip()
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        if step <= 0:
            raise ValueError("range step must be positive")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return tuple(round(start + k * step, 12) for k in range(n))
    return tuple(float(x) for x in text.split(",") if x.strip())


def parse_scan(text: str) -> ScanSpec:
    fields = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in ("variable", "values", "per_point_duration"):
            raise ConfigError("unknown key", key)
        fields[key] = value
    try:
        return ScanSpec(
            variable=fields.get("variable", ""),
            values=_parse_values(fields.get("values", "")),
            per_point_duration=float(fields.get("per_point_duration", 600.0)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_scan(path) -> ScanSpec:
    return parse_scan(resolve(path, ".scan").read_text())
