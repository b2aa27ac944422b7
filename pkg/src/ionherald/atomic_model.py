"""Level structure of 40Ca+ around the 854 nm D5/2 - P3/2 line.

Populations are classical probabilities over Zeeman sublevels; no coherences
are carried. Frequencies are in MHz, magnetic fields in Gauss.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

import numpy as np

# Bohr magneton over Planck constant
MU_B_MHZ_PER_GAUSS = 1.3996245

S_BRANCH_PROBABILITY = 0.96


class Manifold(enum.Enum):
    D5_2 = (2, Fraction(1, 2), Fraction(5, 2))
    P3_2 = (1, Fraction(1, 2), Fraction(3, 2))
    S1_2 = (0, Fraction(1, 2), Fraction(1, 2))

    @property
    def L(self) -> int:
        return self.value[0]

    @property
    def S(self) -> Fraction:
        return self.value[1]

    @property
    def J(self) -> Fraction:
        return self.value[2]

    def sublevels(self) -> list[float]:
        twoj = int(2 * self.J)
        return [k / 2 for k in range(-twoj, twoj + 1, 2)]

    def is_valid_m(self, m: float) -> bool:
        twom = 2 * m
        if twom != int(twom):
            return False
        twoj = int(2 * self.J)
        return abs(twom) <= twoj and (int(twom) - twoj) % 2 == 0


class Helicity(enum.IntEnum):
    """Photon angular momentum projection q along the quantization axis."""

    SIGMA_MINUS = -1
    PI = 0
    SIGMA_PLUS = 1

    @classmethod
    def parse(cls, text: str) -> "Helicity":
        key = text.strip().lower().replace("σ", "sigma").replace("_", "")
        table = {
            "sigma-": cls.SIGMA_MINUS, "sigmaminus": cls.SIGMA_MINUS, "-": cls.SIGMA_MINUS,
            "sigma+": cls.SIGMA_PLUS, "sigmaplus": cls.SIGMA_PLUS, "+": cls.SIGMA_PLUS,
            "pi": cls.PI,
        }
        if key not in table:
            raise ValueError(f"unknown helicity {text!r}")
        return table[key]

    def label(self) -> str:
        return {-1: "sigma-", 0: "pi", 1: "sigma+"}[int(self)]


class Branch(enum.Enum):
    TO_S1_2 = "ToS1_2"
    TO_D_MANIFOLD = "ToDManifold"


@dataclass(frozen=True)
class Sublevel:
    manifold: Manifold
    m: float

    def __post_init__(self):
        if not self.manifold.is_valid_m(self.m):
            raise ValueError(f"m={self.m} is not a sublevel of {self.manifold.name}")


@dataclass(frozen=True)
class IonState:
    manifold: Manifold
    populations: Mapping[float, float]

    def __post_init__(self):
        for m, p in self.populations.items():
            if not self.manifold.is_valid_m(m):
                raise ValueError(f"m={m} is not a sublevel of {self.manifold.name}")
            if p < 0:
                raise ValueError(f"negative population {p} at m={m}")
        total = sum(self.populations.values())
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"populations sum to {total}, not 1")

    def mirrored(self) -> "IonState":
        return IonState(self.manifold, {-m: p for m, p in self.populations.items()})


@dataclass(frozen=True)
class LineParams:
    gamma_atom_fwhm: float = 25.0
    b_field: float = 5.0
    line_center: float = 0.0
    mu_b: float = MU_B_MHZ_PER_GAUSS

    def __post_init__(self):
        if not self.gamma_atom_fwhm > 0:
            raise ValueError("gamma_atom_fwhm must be positive")
        if self.b_field < 0:
            raise ValueError("b_field must be non-negative")


def lande_g(manifold: Manifold) -> float:
    L, S, J = manifold.L, manifold.S, manifold.J
    g = 1 + (J * (J + 1) + S * (S + 1) - L * (L + 1)) / (2 * J * (J + 1))
    return float(g)


def zeeman_shift(sublevel: Sublevel, b_field: float, mu_b: float = MU_B_MHZ_PER_GAUSS) -> float:
    """Linear Zeeman shift of a sublevel in MHz."""
    if b_field < 0:
        raise ValueError("b_field must be non-negative")
    return lande_g(sublevel.manifold) * sublevel.m * mu_b * b_field


def _fact(x: Fraction) -> int:
    if x.denominator != 1 or x < 0:
        raise ValueError(f"factorial of {x}")
    return math.factorial(int(x))


def clebsch_gordan(j1, m1, j2, m2, j, m) -> float:
    """<j1 m1; j2 m2 | j m> from the Racah closed form."""
    j1, m1, j2, m2, j, m = (Fraction(x).limit_denominator(2) for x in (j1, m1, j2, m2, j, m))
    if m1 + m2 != m:
        return 0.0
    if not (abs(j1 - j2) <= j <= j1 + j2):
        return 0.0
    if abs(m1) > j1 or abs(m2) > j2 or abs(m) > j:
        return 0.0
    pref = Fraction(
        (2 * j + 1) * _fact(j + j1 - j2) * _fact(j - j1 + j2) * _fact(j1 + j2 - j),
        _fact(j1 + j2 + j + 1),
    )
    pref *= (
        _fact(j + m) * _fact(j - m) * _fact(j1 - m1) * _fact(j1 + m1)
        * _fact(j2 - m2) * _fact(j2 + m2)
    )
    total = Fraction(0)
    for k in range(0, int(j1 + j2 - j) + 1):
        args = (k, j1 + j2 - j - k, j1 - m1 - k, j2 + m2 - k, j - j2 + m1 + k, j - j1 - m2 + k)
        if any(a < 0 for a in args):
            continue
        denom = 1
        for a in args:
            denom *= _fact(Fraction(a))
        total += Fraction((-1) ** k, denom)
    return float(total) * math.sqrt(pref)


def transition_strength(m_d: float, q: int) -> float:
    """Relative D5/2(m_d) -> P3/2(m_d + q) strength, summing to 1 over q."""
    jd, jp = Manifold.D5_2.J, Manifold.P3_2.J
    if not Manifold.D5_2.is_valid_m(m_d):
        raise ValueError(f"m_d={m_d} is not a D5/2 sublevel")
    q = int(q)
    if q not in (-1, 0, 1):
        raise ValueError(f"q must be -1, 0 or +1, got {q}")

    def raw(qq):
        if not Manifold.P3_2.is_valid_m(m_d + qq):
            return 0.0
        return clebsch_gordan(jd, m_d, 1, qq, jp, m_d + qq) ** 2

    norm = sum(raw(qq) for qq in (-1, 0, 1))
    return raw(q) / norm


def transition_frequency(m_d: float, q: int, line: LineParams) -> float:
    """Zeeman-shifted D5/2(m_d) -> P3/2(m_d + q) detuning from the bare line."""
    up = zeeman_shift(Sublevel(Manifold.P3_2, m_d + q), line.b_field, line.mu_b)
    down = zeeman_shift(Sublevel(Manifold.D5_2, m_d), line.b_field, line.mu_b)
    return line.line_center + up - down


def lorentzian(x, fwhm):
    """Peak-normalized Lorentzian."""
    return 1.0 / (1.0 + (2.0 * np.asarray(x, dtype=float) / fwhm) ** 2)


@dataclass(frozen=True)
class Line:
    """One absorption channel with its population- and polarization-weighted amplitude."""

    m_d: float
    q: int
    amplitude: float
    center: float

    @property
    def label(self) -> str:
        return f"{_half(self.m_d)}->{_half(self.m_d + self.q)}"


def _half(m: float) -> str:
    twom = int(round(2 * m))
    if twom % 2 == 0:
        return str(twom // 2)
    return f"{twom}/2"


def _check_absorber(ion: IonState, sigma_fractions):
    if ion.manifold is not Manifold.D5_2:
        raise ValueError(f"ion in {ion.manifold.name} has no 854 nm absorption channel")
    f_minus, f_plus = sigma_fractions
    if f_minus < 0 or f_plus < 0 or abs(f_minus + f_plus - 1.0) > 1e-9:
        raise ValueError(f"sigma fractions {sigma_fractions} must be non-negative and sum to 1")


def absorption_lines(ion: IonState, sigma_fractions, line: LineParams) -> list[Line]:
    """Open channels with non-zero amplitude for this ion state and photon polarization."""
    _check_absorber(ion, sigma_fractions)
    f = {-1: sigma_fractions[0], 1: sigma_fractions[1]}
    out = []
    for m_d, pop in sorted(ion.populations.items()):
        for q in (-1, 1):
            amp = pop * f[q] * transition_strength(m_d, q)
            if amp > 0:
                out.append(Line(m_d, q, amp, transition_frequency(m_d, q, line)))
    return out


def absorption_weight(ion: IonState, photon_detuning, sigma_fractions, line: LineParams):
    """Relative absorption probability of a photon at the given detuning, in [0, 1].

    Accepts a scalar or an array of detunings.
    """
    lines = absorption_lines(ion, sigma_fractions, line)
    nu = np.asarray(photon_detuning, dtype=float)
    w = np.zeros_like(nu)
    for ln in lines:
        w = w + ln.amplitude * lorentzian(nu - ln.center, line.gamma_atom_fwhm)
    return float(w) if w.ndim == 0 else w


def optical_pump(helicity, stretched_weight: float = 0.5) -> IonState:
    """D5/2 state after 854 nm pumping with the given helicity.

    sigma+ light leaves the ion in m = {3/2, 5/2}, sigma- in m = {-3/2, -5/2};
    ``stretched_weight`` is the share of the stretched |m| = 5/2 sublevel.
    """
    if not 0.0 <= stretched_weight <= 1.0:
        raise ValueError("stretched_weight must lie in [0, 1]")
    h = Helicity(helicity) if not isinstance(helicity, str) else Helicity.parse(helicity)
    if h is Helicity.PI:
        raise ValueError("optical pumping needs circular light")
    sign = int(h)
    pops = {sign * 2.5: stretched_weight, sign * 1.5: 1.0 - stretched_weight}
    return IonState(Manifold.D5_2, {m: p for m, p in pops.items() if p > 0})


def decay_branch(rng: np.random.Generator, p_s: float = S_BRANCH_PROBABILITY) -> Branch:
    """Decay channel out of P3/2."""
    return Branch.TO_S1_2 if rng.random() < p_s else Branch.TO_D_MANIFOLD
