import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ionherald import fitting
from ionherald.analysis import poisson_errors
from ionherald.fitting import FitError, Model, fit_lorentzian, fit_sinusoid, lorentzian_curve, sinusoid

ANGLES = np.arange(0, 181, 15, dtype=float)
DETUNINGS = np.arange(-60, 61, 5, dtype=float)


def test_sinusoid_exact_full_visibility():
    y = 50 + 50 * np.cos(np.deg2rad(2 * ANGLES))
    r = fit_sinusoid(ANGLES, y)
    assert r.model is Model.SINUSOID
    assert r["visibility"] == pytest.approx(1.0, abs=1e-12)
    assert r["phase"] == pytest.approx(0.0, abs=1e-9)
    assert r.rss == pytest.approx(0.0, abs=1e-18)


def test_sinusoid_constant_has_zero_visibility():
    r = fit_sinusoid(ANGLES, np.full(len(ANGLES), 50.0))
    assert r["visibility"] == pytest.approx(0.0, abs=1e-12)
    assert r["offset"] == pytest.approx(50.0)


@settings(max_examples=50)
@given(c=st.floats(1, 1e4), v=st.floats(0.01, 1), ph=st.floats(-89, 89))
def test_sinusoid_exact_recovery(c, v, ph):
    y = sinusoid(ANGLES, c, v * c, ph)
    r = fit_sinusoid(ANGLES, y)
    assert r["visibility"] == pytest.approx(v, rel=1e-8)
    assert r["phase"] == pytest.approx(ph, abs=1e-6)
    assert all(e >= 0 for e in r.errors.values())


def test_sinusoid_degenerate_design():
    # 0 and 90 degrees repeated: cos 2theta = +-1, sin 2theta = 0 for every point
    with pytest.raises(FitError, match="degenerate"):
        fit_sinusoid([0, 90, 0, 90, 180], [1, 2, 1, 2, 1])
    with pytest.raises(FitError):
        fit_sinusoid([0, 15, 30], [1, 2, 3])
    with pytest.raises(FitError):
        fit_sinusoid([0, 10, 20, 30, 40], [1, 2, 3, 4, 5])


def test_lorentzian_exact_recovery():
    truth = dict(center=7.35, fwhm=47.0, height=120.0, background=4.0)
    y = lorentzian_curve(DETUNINGS, **truth)
    r = fit_lorentzian(DETUNINGS, y)
    for k, v in truth.items():
        assert r[k] == pytest.approx(v, rel=1e-6)
    assert r["fwhm"] > 0


@settings(max_examples=40)
@given(c=st.floats(-30, 30), g=st.floats(10, 80), h=st.floats(1, 1e4), b=st.floats(0, 100))
def test_lorentzian_exact_recovery_property(c, g, h, b):
    y = lorentzian_curve(DETUNINGS, c, g, h, b)
    r = fit_lorentzian(DETUNINGS, y)
    assert r["center"] == pytest.approx(c, abs=1e-6 * g)
    assert r["fwhm"] == pytest.approx(g, rel=1e-6)
    assert r["height"] == pytest.approx(h, rel=1e-6)


def test_lorentzian_nonconvergence_reports_diagnostics(monkeypatch):
    monkeypatch.setattr(fitting, "MAX_ITERATIONS", 2)
    y = lorentzian_curve(DETUNINGS, 7.0, 40.0, 100.0, 3.0)
    with pytest.raises(FitError) as e:
        fit_lorentzian(DETUNINGS, y, p0=[-50.0, 2.0, 1.0, 0.0])
    assert e.value.diagnostics["nfev"] >= 2
    assert "status" in e.value.diagnostics


def test_lorentzian_too_few_points():
    with pytest.raises(FitError):
        fit_lorentzian([0, 1, 2], [1, 2, 1])


def test_bad_sigma_rejected():
    with pytest.raises(ValueError):
        fit_sinusoid(ANGLES, np.ones(len(ANGLES)), sigma=np.zeros(len(ANGLES)))


def test_to_dict_round_trip():
    r = fit_lorentzian(DETUNINGS, lorentzian_curve(DETUNINGS, 0.0, 40.0, 10.0, 1.0))
    d = r.to_dict()
    assert d["model"] == "Lorentzian"
    assert set(d["params"]) == {"center", "fwhm", "height", "background"}
    assert np.allclose(r.evaluate(DETUNINGS), lorentzian_curve(DETUNINGS, 0.0, 40.0, 10.0, 1.0))


# coverage at three times the counts of a 10-minute-per-point scan

SIN_TRUTH = dict(offset=3 * 27.0, amplitude=3 * 24.0, phase=0.0)
LOR_TRUTH = dict(center=7.35, fwhm=47.0, height=3 * 40.0, background=3 * 3.0)


def sinusoid_coverage(n_trials=500, seed=0):
    rng = np.random.default_rng(seed)
    mean = sinusoid(ANGLES, *SIN_TRUTH.values())
    v_true = SIN_TRUTH["amplitude"] / SIN_TRUTH["offset"]
    hits = 0
    for _ in range(n_trials):
        y = rng.poisson(mean).astype(float)
        r = fit_sinusoid(ANGLES, y, poisson_errors(y))
        ok = all(abs(r[k] - v) <= 3 * r.errors[k] for k, v in SIN_TRUTH.items())
        ok &= abs(r["visibility"] - v_true) <= 3 * r.errors["visibility"]
        hits += ok
    return hits / n_trials


def lorentzian_coverage(n_trials=500, seed=0):
    rng = np.random.default_rng(seed)
    mean = lorentzian_curve(DETUNINGS, **LOR_TRUTH)
    hits = 0
    for _ in range(n_trials):
        y = rng.poisson(mean).astype(float)
        r = fit_lorentzian(DETUNINGS, y, poisson_errors(y))
        hits += all(abs(r[k] - v) <= 3 * r.errors[k] for k, v in LOR_TRUTH.items())
    return hits / n_trials


def test_sinusoid_coverage():
    assert sinusoid_coverage() >= 0.95


def test_lorentzian_coverage():
    assert lorentzian_coverage() >= 0.95
