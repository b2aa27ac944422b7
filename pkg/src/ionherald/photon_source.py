"""SPDC pair emitter, partner-photon polarization control and trigger filter.

Jones vectors are expressed in the circular basis (sigma-, sigma+). Times are
in ns, frequencies are detunings in MHz from the 854 nm line center.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))

# columns: sigma- and sigma+ unit vectors in the (H, V) linear basis
_CIRC_TO_LIN = np.array([[1.0, 1.0], [-1j, 1j]]) / np.sqrt(2.0)
_LIN_TO_CIRC = _CIRC_TO_LIN.conj().T


@dataclass(frozen=True)
class JonesVector:
    c_minus: complex
    c_plus: complex

    def __post_init__(self):
        if abs(self.norm2() - 1.0) > 1e-12:
            raise ValueError(f"Jones vector not normalized: |c|^2 = {self.norm2()!r}")

    def norm2(self) -> float:
        return abs(self.c_minus) ** 2 + abs(self.c_plus) ** 2

    def as_array(self) -> np.ndarray:
        return np.array([self.c_minus, self.c_plus], dtype=complex)

    @classmethod
    def from_array(cls, v, normalize: bool = False) -> "JonesVector":
        v = np.asarray(v, dtype=complex)
        if normalize:
            v = v / np.sqrt(np.sum(np.abs(v) ** 2))
        return cls(complex(v[0]), complex(v[1]))

    @classmethod
    def linear(cls, angle_deg: float) -> "JonesVector":
        a = np.deg2rad(angle_deg)
        return cls.from_array(_LIN_TO_CIRC @ np.array([np.cos(a), np.sin(a)]), normalize=True)

    @classmethod
    def sigma_minus(cls) -> "JonesVector":
        return cls(1.0 + 0j, 0j)

    @classmethod
    def sigma_plus(cls) -> "JonesVector":
        return cls(0j, 1.0 + 0j)


HORIZONTAL = JonesVector(complex(np.sqrt(0.5)), complex(np.sqrt(0.5)))


def _rotation(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, s], [-s, c]])


def retarder_matrix(theta_deg: float, retardance: float) -> np.ndarray:
    """Circular-basis Jones matrix of a linear retarder with fast axis at theta."""
    a = np.deg2rad(theta_deg)
    lin = _rotation(-a) @ np.diag([1.0, np.exp(1j * retardance)]) @ _rotation(a)
    return _LIN_TO_CIRC @ lin @ _CIRC_TO_LIN


def qwp_matrix(theta_deg: float) -> np.ndarray:
    return retarder_matrix(theta_deg, np.pi / 2)


def hwp_matrix(theta_deg: float) -> np.ndarray:
    return retarder_matrix(theta_deg, np.pi)


def qwp_transform(pol: JonesVector, theta: float, offset: float = 0.0) -> JonesVector:
    """Ideal quarter-wave plate with fast axis at ``theta + offset`` degrees."""
    if abs(pol.norm2() - 1.0) > 1e-12:
        raise ValueError("input polarization is not normalized")
    out = qwp_matrix(theta + offset) @ pol.as_array()
    return JonesVector.from_array(out, normalize=True)


def sigma_fractions(pol: JonesVector) -> tuple[float, float]:
    f_minus = abs(pol.c_minus) ** 2
    f_plus = abs(pol.c_plus) ** 2
    total = f_minus + f_plus
    return f_minus / total, f_plus / total


def calibration_offset(input_pol: JonesVector) -> float:
    """Waveplate offset (degrees) that sends ``input_pol`` as close to sigma- as possible.

    The sigma- fraction behind a QWP is a + b cos 2t + c sin 2t in the axis angle t,
    so two probes fix the maximizing angle.
    """
    f0 = sigma_fractions(qwp_transform(input_pol, 0.0))[0]
    f45 = sigma_fractions(qwp_transform(input_pol, 45.0))[0]
    f90 = sigma_fractions(qwp_transform(input_pol, 90.0))[0]
    mean = 0.5 * (f0 + f90)
    return 0.5 * np.rad2deg(np.arctan2(f45 - mean, f0 - mean))


def partner_polarization(cfg: "SourceConfig") -> JonesVector:
    """Polarization of the partner photon after the calibrated QWP at ``cfg.qwp_angle``."""
    return qwp_transform(cfg.input_pol, cfg.qwp_angle, calibration_offset(cfg.input_pol))


@dataclass(frozen=True)
class FilterConfig:
    center: float = 0.0
    fwhm: float = 22.0
    peak_transmission: float = 0.45
    stages: int = 2

    def __post_init__(self):
        if not self.fwhm > 0:
            raise ValueError("filter fwhm must be positive")
        if not 0 < self.peak_transmission <= 1:
            raise ValueError("filter peak_transmission must lie in (0, 1]")
        if int(self.stages) != self.stages or self.stages < 1:
            raise ValueError("filter stages must be a positive integer")

    @property
    def stage_fwhm(self) -> float:
        # the product of n identical Lorentzians halves at x = fwhm/2
        return self.fwhm / np.sqrt(2.0 ** (1.0 / self.stages) - 1.0)


def filter_transmission(nu, cfg: FilterConfig):
    """Transmission of the cascaded cavity filter at detuning ``nu``."""
    x = np.asarray(nu, dtype=float) - cfg.center
    stage = 1.0 / (1.0 + (2.0 * x / cfg.stage_fwhm) ** 2)
    t = cfg.peak_transmission * stage ** cfg.stages
    return float(t) if t.ndim == 0 else t


@dataclass(frozen=True)
class SourceConfig:
    pair_rate: float = 1.6e7
    band_fwhm: float = 200_000.0
    corr_jitter_fwhm: float = 0.0
    input_pol: JonesVector = HORIZONTAL
    qwp_angle: float = 0.0
    # intensity fraction scrambled into the orthogonal circular state before the ion
    pol_impurity: float = 0.0

    def __post_init__(self):
        if not self.pair_rate > 0:
            raise ValueError("pair_rate must be positive")
        if not self.band_fwhm > 0:
            raise ValueError("band_fwhm must be positive")
        if self.corr_jitter_fwhm < 0:
            raise ValueError("corr_jitter_fwhm must be non-negative")
        if not 0 <= self.pol_impurity <= 0.5:
            raise ValueError("pol_impurity must lie in [0, 0.5]")

    @property
    def jitter_sigma(self) -> float:
        return self.corr_jitter_fwhm * FWHM_TO_SIGMA


@dataclass(frozen=True)
class PhotonPair:
    t_emit: float
    nu_partner: float
    nu_trigger: float
    partner_pol: JonesVector


@dataclass
class PairBatch:
    """Column-wise pairs sharing one partner polarization."""

    t_emit: np.ndarray
    nu_partner: np.ndarray
    nu_trigger: np.ndarray
    partner_pol: JonesVector

    def __len__(self):
        return len(self.t_emit)

    def to_list(self) -> list[PhotonPair]:
        return [
            PhotonPair(float(t), float(a), float(b), self.partner_pol)
            for t, a, b in zip(self.t_emit, self.nu_partner, self.nu_trigger)
        ]


def sample_pair_batch(rng: np.random.Generator, cfg: SourceConfig, t_window) -> PairBatch:
    """Every pair emitted in ``t_window`` (ns), sorted by emission time."""
    start, end = t_window
    if end < start:
        raise ValueError("t_window must be ordered")
    pol = partner_polarization(cfg)
    n = rng.poisson(cfg.pair_rate * (end - start) * 1e-9) if end > start else 0
    t = np.sort(rng.uniform(start, end, n))
    nu_p = rng.uniform(-0.5 * cfg.band_fwhm, 0.5 * cfg.band_fwhm, n)
    nu_t = -nu_p
    if cfg.corr_jitter_fwhm > 0:
        nu_t = nu_t + rng.normal(0.0, cfg.jitter_sigma, n)
    return PairBatch(t, nu_p, nu_t, pol)


def sample_pair(rng: np.random.Generator, cfg: SourceConfig, t_window) -> list[PhotonPair]:
    return sample_pair_batch(rng, cfg, t_window).to_list()
