"""Weighted least-squares fits for polarization and frequency scans."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

MAX_ITERATIONS = 200
REL_TOL = 1e-10


class FitError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        self.diagnostics = diagnostics or {}
        super().__init__(message if not diagnostics else f"{message} ({diagnostics})")


class Model(enum.Enum):
    SINUSOID = "Sinusoid"
    LORENTZIAN = "Lorentzian"


@dataclass
class FitResult:
    model: Model
    params: dict[str, float]
    errors: dict[str, float]
    rss: float  # weighted residual sum of squares (chi^2)
    dof: int
    n_points: int
    covariance: np.ndarray = field(repr=False, default=None)
    extra: dict[str, float] = field(default_factory=dict)

    def __getitem__(self, name):
        return self.params[name]

    def evaluate(self, x):
        x = np.asarray(x, float)
        if self.model is Model.SINUSOID:
            return sinusoid(x, self["offset"], self["amplitude"], self["phase"])
        return lorentzian_curve(x, self["center"], self["fwhm"], self["height"], self["background"])

    def to_dict(self) -> dict:
        return {
            "model": self.model.value,
            "params": dict(self.params),
            "errors": dict(self.errors),
            "rss": self.rss,
            "dof": self.dof,
            "n_points": self.n_points,
            **self.extra,
        }


def sinusoid(theta_deg, offset, amplitude, phase_deg):
    return offset + amplitude * np.cos(np.deg2rad(2.0 * (np.asarray(theta_deg) - phase_deg)))


def lorentzian_curve(nu, center, fwhm, height, background):
    return background + height / (1.0 + (2.0 * (np.asarray(nu) - center) / fwhm) ** 2)


def _prepare(x, y, sigma, min_points):
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d arrays of equal length")
    if len(x) < min_points:
        raise FitError(f"need at least {min_points} points, got {len(x)}")
    s = np.ones_like(y) if sigma is None else np.asarray(sigma, float)
    if s.shape != y.shape or np.any(~(s > 0)):
        raise ValueError("sigma must be positive and match y")
    return x, y, s


def fit_sinusoid(angles, counts, sigma=None) -> FitResult:
    """Fit C + A cos(2(theta - theta0)) with a fixed 180 degree period.

    Linear in (C, a, b) with a = A cos 2theta0, b = A sin 2theta0, so solved exactly;
    visibility A/C and its error follow by first-order propagation.
    """
    th, y, s = _prepare(angles, counts, sigma, 4)
    if np.ptp(th) < 90.0 - 1e-9:
        raise FitError("angles must span at least half a period (90 deg)")
    r = np.deg2rad(2.0 * th)
    X = np.column_stack([np.ones_like(r), np.cos(r), np.sin(r)])
    Xw = X / s[:, None]
    yw = y / s
    if np.linalg.matrix_rank(Xw) < 3:
        raise FitError("degenerate design matrix")
    normal = Xw.T @ Xw
    cov = np.linalg.inv(normal)
    beta = cov @ (Xw.T @ yw)
    C, a, b = beta
    resid = yw - Xw @ beta
    rss = float(resid @ resid)
    A = float(np.hypot(a, b))
    phase = float(np.rad2deg(0.5 * np.arctan2(b, a)))  # in (-90, 90]

    # Jacobians of (C, A, phase, V) w.r.t. (C, a, b)
    if A > 0:
        dA = np.array([0.0, a / A, b / A])
        dphase = np.rad2deg(np.array([0.0, -b, a]) / (2.0 * A * A))
    else:
        dA = np.array([0.0, 1.0, 1.0]) / np.sqrt(2.0)
        dphase = np.array([0.0, 0.0, 0.0])
    vis = A / C if C != 0 else np.inf
    dV = (dA - np.array([vis, 0.0, 0.0])) / C if C != 0 else np.full(3, np.inf)
    J = np.vstack([[1.0, 0.0, 0.0], dA, dphase, dV])
    cov_derived = J @ cov @ J.T
    err = np.sqrt(np.clip(np.diag(cov_derived), 0.0, None))
    names = ("offset", "amplitude", "phase", "visibility")
    return FitResult(
        Model.SINUSOID,
        dict(zip(names, (float(C), A, phase, float(vis)))),
        dict(zip(names, map(float, err))),
        rss, len(y) - 3, len(y), cov_derived,
    )


def _initial_lorentzian(x, y):
    order = np.argsort(x)
    x, y = x[order], y[order]
    bg = float(np.min(y))
    i = int(np.argmax(y))
    h = float(y[i] - bg)
    half = bg + 0.5 * h
    # interpolated half-max crossings on each side of the peak
    left = x[0]
    for k in range(i, 0, -1):
        if y[k - 1] < half <= y[k]:
            left = x[k - 1] + (half - y[k - 1]) * (x[k] - x[k - 1]) / (y[k] - y[k - 1])
            break
    right = x[-1]
    for k in range(i, len(x) - 1):
        if y[k + 1] < half <= y[k]:
            right = x[k] + (y[k] - half) * (x[k + 1] - x[k]) / (y[k] - y[k + 1])
            break
    width = right - left
    if not width > 0:
        width = 0.25 * np.ptp(x) or 1.0
    return np.array([x[i], width, max(h, 1e-12), bg])


def fit_lorentzian(nu, counts, sigma=None, p0=None) -> FitResult:
    """Fit B + H / (1 + (2 (nu - nu0) / Gamma)^2) by damped Gauss-Newton (Levenberg-Marquardt)."""
    x, y, s = _prepare(nu, counts, sigma, 4)

    def resid(p):
        return (lorentzian_curve(x, *p) - y) / s

    def jac(p):
        c, g, h, _ = p
        u = 2.0 * (x - c) / g
        d = 1.0 / (1.0 + u * u)
        dd = -h * d * d * 2.0 * u  # derivative of h*d w.r.t. u
        J = np.column_stack([dd * (-2.0 / g), dd * (-u / g), d, np.ones_like(x)])
        return J / s[:, None]

    start = _initial_lorentzian(x, y) if p0 is None else np.asarray(p0, float)
    res = least_squares(resid, start, jac=jac, method="lm", xtol=REL_TOL, ftol=REL_TOL,
                        gtol=REL_TOL, max_nfev=MAX_ITERATIONS)
    diag = {"status": int(res.status), "nfev": int(res.nfev), "message": res.message,
            "start": start.tolist()}
    if res.status <= 0 or not np.all(np.isfinite(res.x)):
        raise FitError("Lorentzian fit did not converge", diag)
    p = res.x.copy()
    p[1] = abs(p[1])
    J = jac(p)
    try:
        cov = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        raise FitError("singular Jacobian at the minimum", diag) from None
    err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    names = ("center", "fwhm", "height", "background")
    r = resid(p)
    return FitResult(
        Model.LORENTZIAN,
        dict(zip(names, map(float, p))),
        dict(zip(names, map(float, err))),
        float(r @ r), len(y) - 4, len(y), cov,
        extra={"nfev": int(res.nfev)},
    )
