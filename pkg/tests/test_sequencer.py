import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ionherald.analysis import detection_windows
from ionherald.atomic_model import IonState, Manifold
from ionherald.config import ExperimentConfig, load_config
from ionherald.photon_source import filter_transmission
from ionherald.sequencer import (
    BRANCH_D, BRANCH_S, AbsorptionScale, CalibrationError, apply_dead_time, calibrate_absorption_scale,
    expected_absorption_rate, read_ground_truth, resolve_kappa, run_cycle, run_experiment,
    simulate_absorptions,
)
from ionherald.tags import Channel, TagStream
from oracles import coincidence_lineshape, reference_detection_phase

CYCLE_S = 0.07


@pytest.fixture(scope="module")
def fig2d():
    return load_config("fig2d")


@pytest.fixture(scope="module")
def short_run(fig2d):
    return run_experiment(fig2d, duration=300.0, seed=11)


def test_one_cycle_markers(fig2d):
    res = run_experiment(fig2d, duration=CYCLE_S, seed=1, kappa=1e-3)
    s = res.stream
    assert res.n_cycles == 1
    assert s.select(Channel.CYCLE_START).tolist() == [0]
    assert s.select(Channel.DETECT_START).tolist() == [10_000_000]
    assert s.first_disorder() is None


def test_run_cycle_offsets(fig2d):
    s, truth = run_cycle(np.random.default_rng(0), fig2d, t0=7_000_000_000, kappa=1e-3, cycle_index=100)
    assert s.select(Channel.CYCLE_START).tolist() == [7_000_000_000]
    assert s.select(Channel.DETECT_START).tolist() == [7_010_000_000]
    assert np.all(s.times >= 7_000_000_000) and np.all(s.times < 7_070_000_000)
    assert np.all(truth.cycle == 100)


def test_same_seed_identical(fig2d):
    a = run_experiment(fig2d, duration=20.0, seed=5, kappa=1e-3)
    b = run_experiment(fig2d, duration=20.0, seed=5, kappa=1e-3)
    c = run_experiment(fig2d, duration=20.0, seed=6, kappa=1e-3)
    assert a.stream == b.stream
    assert not a.stream == c.stream


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32), cycles=st.integers(1, 40))
def test_sorted_and_periodic_markers(seed, cycles):
    cfg = ExperimentConfig(kappa=5e-3)
    s = run_experiment(cfg, duration=cycles * CYCLE_S, seed=seed).stream
    s.validate()
    cyc = s.select(Channel.CYCLE_START)
    det = s.select(Channel.DETECT_START)
    assert len(cyc) == len(det) == cycles
    assert np.all(np.diff(cyc) == 70_000_000)
    assert np.all(det - cyc == 10_000_000)


def test_zero_weight_gives_dark_counts_only():
    # sigma+ photons on a sigma+ pumped ion cannot be absorbed: PMT carries darks only
    cfg = ExperimentConfig(kappa=1.0).with_values(qwp_angle=90, pol_impurity=0)
    res = run_experiment(cfg, duration=200 * CYCLE_S, seed=3)
    assert len(res.truth.t_ns) == 0
    n_pmt = len(res.stream.select(Channel.PMT))
    mean = cfg.detector.pmt_dark_rate * res.duration
    assert abs(n_pmt - mean) < 5 * math.sqrt(mean)


def test_absorption_scale_bounds():
    with pytest.raises(ValueError):
        AbsorptionScale(0.0)
    with pytest.raises(ValueError):
        AbsorptionScale(1.5)
    assert AbsorptionScale(1.0).kappa == 1.0


def test_vanishing_kappa_no_absorption(fig2d):
    res = run_experiment(fig2d, duration=50 * CYCLE_S, seed=2, kappa=1e-300)
    assert len(res.truth.t_ns) == 0


def test_fluorescence_after_absorption_is_poisson():
    cfg = ExperimentConfig(kappa=2e-3).with_values(pmt_dark_rate=0.0, dead_time=0.0)
    res = run_experiment(cfg, duration=1000 * CYCLE_S, seed=4)
    tr = res.truth
    s_rows = np.flatnonzero(tr.branch == BRANCH_S)
    assert len(s_rows) > 100
    pmt = res.stream.select(Channel.PMT)
    starts, _ = detection_windows(res.stream)
    ends = starts + cfg.sequence.detect_ns
    z = []
    for i in s_rows:
        t_a = tr.t_ns[i]
        end = ends[tr.cycle[i]]
        n = np.count_nonzero((pmt >= t_a) & (pmt < end))
        mu = cfg.detector.pmt_fluorescence_rate * (end - t_a) * 1e-9
        z.append((n - mu) / math.sqrt(mu) if mu > 0 else 0.0)
    z = np.array(z)
    assert abs(z.mean()) < 5 / math.sqrt(len(z))
    assert 0.8 < z.var() < 1.2
    # no PMT tag without a preceding absorption in the same window
    assert len(pmt) == sum(np.count_nonzero((pmt >= tr.t_ns[i]) & (pmt < ends[tr.cycle[i]])) for i in s_rows)


def test_no_fluorescence_outside_detection(short_run):
    tr = short_run.truth
    starts, ends = detection_windows(short_run.stream)
    d = tr.branch == BRANCH_S
    ff = tr.first_fluorescence_ns[d]
    cyc = tr.cycle[d]
    has = ff >= 0
    assert np.all(ff[has] >= starts[cyc[has]]) and np.all(ff[has] < ends[cyc[has]])
    assert np.all(tr.t_ns >= starts[tr.cycle]) and np.all(tr.t_ns < ends[tr.cycle])


def test_at_most_one_terminal_absorption_per_cycle(short_run):
    tr = short_run.truth
    cyc = tr.cycle[tr.branch == BRANCH_S]
    assert len(cyc) == len(np.unique(cyc))
    # D-branch returns precede the terminal absorption of their cycle
    for c in np.unique(tr.cycle[tr.branch == BRANCH_D])[:200]:
        rows = tr.cycle == c
        s_t = tr.t_ns[rows & (tr.branch == BRANCH_S)]
        if len(s_t):
            assert np.all(tr.t_ns[rows & (tr.branch == BRANCH_D)] <= s_t[0])


def test_conditional_heralding_matches_closed_form(short_run, fig2d):
    tr = short_run.truth
    d = tr.branch == BRANCH_S
    det = fig2d.detector
    p = det.trigger_path_eff * det.apd_qe * filter_transmission(-tr.detuning[d], fig2d.filter)
    expect = p.mean()
    got = tr.trigger[d].mean()
    sigma = math.sqrt(expect * (1 - expect) / d.sum())
    assert abs(got - expect) < 3 * sigma


def test_spectral_average_factor():
    # the line-averaged filter factor from quadrature against the ground-truth average
    cfg = load_config("fig2d")
    nu = np.linspace(-3000, 3000, 600_001)
    ref = coincidence_lineshape(cfg, [cfg.filter.center])[0]
    lines_weight = coincidence_lineshape(cfg.with_values(filter_fwhm=1e7), [cfg.filter.center])[0]
    s_bar = ref / lines_weight / cfg.filter.peak_transmission
    res = run_experiment(cfg, duration=600.0, seed=21)
    tr = res.truth
    d = tr.branch == BRANCH_S
    sim = np.mean(filter_transmission(-tr.detuning[d], cfg.filter)) / cfg.filter.peak_transmission
    assert abs(sim - s_bar) < 0.03
    assert 0.40 < s_bar < 0.50
    assert len(nu)


def test_engine_matches_pair_by_pair_reference():
    cfg = ExperimentConfig(kappa=0.01).with_values(
        band_fwhm=2000.0, pair_rate=2e5, filter_center=7.35, filter_peak_transmission=0.99,
        pol_impurity=0.05, pmt_dark_rate=0.0, apd_dark_rate=0.0, dead_time=0.0)
    n = 1500
    ref = reference_detection_phase(cfg, 0.01, n, seed=99)
    res = run_experiment(cfg, duration=n * CYCLE_S, seed=98)
    tr = res.truth
    s = tr.branch == BRANCH_S
    starts, ends = detection_windows(res.stream)

    def close(a, b, sa, sb, k=4.5):
        assert abs(a - b) < k * math.hypot(sa, sb), (a, b)

    p_ref = ref["absorbed"].mean()
    p_eng = s.sum() / n
    close(p_ref, p_eng, math.sqrt(p_ref * (1 - p_ref) / n), math.sqrt(p_eng * (1 - p_eng) / n))

    t_ref = ref["t_abs"][ref["absorbed"]]
    t_eng = (tr.t_ns[s] - starts[tr.cycle[s]]).astype(float)
    close(t_ref.mean(), t_eng.mean(), t_ref.std() / math.sqrt(len(t_ref)), t_eng.std() / math.sqrt(len(t_eng)))

    apd = res.stream.select(Channel.APD)
    n_eng = np.bincount(np.searchsorted(starts, apd, side="right") - 1, minlength=n)
    close(ref["n_trig"].mean(), n_eng.mean(), ref["n_trig"].std() / math.sqrt(n), n_eng.std() / math.sqrt(n))

    h_ref = ref["herald"][ref["absorbed"]].astype(float)
    h_eng = tr.trigger[s].astype(float)
    close(h_ref.mean(), h_eng.mean(), h_ref.std() / math.sqrt(len(h_ref)), h_eng.std() / math.sqrt(len(h_eng)))

    nd_eng = np.bincount(tr.cycle[tr.branch == BRANCH_D], minlength=n)
    close(ref["n_d_absorb"].mean(), nd_eng.mean(), ref["n_d_absorb"].std() / math.sqrt(n) + 1e-3,
          nd_eng.std() / math.sqrt(n) + 1e-3)


def test_calibration_reproduces_target(fig2d):
    k = calibrate_absorption_scale(fig2d, 1.1, seed=0).kappa
    assert 0 < k <= 1
    assert expected_absorption_rate(fig2d, k) == pytest.approx(1.1, rel=0.05)
    tr = simulate_absorptions(fig2d, 200_000, seed=1, kappa=k)
    rate = tr.detectable.sum() / (200_000 * CYCLE_S)
    assert rate == pytest.approx(1.1, rel=0.05)


def test_calibration_scales_inversely_with_pair_rate(fig2d):
    k1 = calibrate_absorption_scale(fig2d, 1.1, seed=0).kappa
    k2 = calibrate_absorption_scale(fig2d.with_values(pair_rate=2 * fig2d.source.pair_rate), 1.1, seed=0).kappa
    assert k2 == pytest.approx(k1 / 2, rel=0.10)


def test_calibration_errors(fig2d):
    with pytest.raises(ValueError):
        calibrate_absorption_scale(fig2d, 0.0)
    with pytest.raises(CalibrationError) as e:
        calibrate_absorption_scale(fig2d.with_values(pair_rate=1.0), 1.1, n_cycles=20_000)
    assert e.value.max_rate is not None and e.value.max_rate < 1.1
    assert "maximum" in str(e.value)


def test_resolve_kappa_prefers_explicit(fig2d):
    assert resolve_kappa(fig2d, 0.25) == 0.25
    assert resolve_kappa(fig2d.with_values(kappa=0.5)) == 0.5


def test_dead_time_examples():
    s = TagStream(np.zeros(2, np.uint8), np.array([100, 110]))
    assert len(apply_dead_time(s, 50)) == 1
    assert apply_dead_time(s, 0) == s
    # different channels do not shadow each other
    s2 = TagStream(np.array([0, 1], np.uint8), np.array([100, 110]))
    assert apply_dead_time(s2, 50) == s2


def _reference_dead_time(times, dead):
    out, last = [], None
    for t in times:
        if last is None or t - last >= dead:
            out.append(t)
            last = t
    return out


@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 2000)), max_size=200), st.integers(0, 300))
def test_dead_time_reference_and_idempotent(records, dead):
    s = TagStream.merge([(np.array([c for c, _ in records], np.uint8), np.array([t for _, t in records], np.int64))])
    once = apply_dead_time(s, dead)
    assert apply_dead_time(once, dead) == once
    for ch in (0, 1):
        expect = _reference_dead_time(s.select(ch).tolist(), dead) if dead > 0 else s.select(ch).tolist()
        assert once.select(ch).tolist() == expect


def test_sidecar_roundtrip(tmp_path, fig2d):
    res = run_experiment(fig2d, duration=30.0, seed=8, kappa=5e-3)
    p = tmp_path / "truth.csv"
    res.truth.write_csv(p)
    back = read_ground_truth(p)
    assert back.n_cycles == res.n_cycles
    assert np.array_equal(back.t_ns, res.truth.t_ns)
    assert np.array_equal(back.branch, res.truth.branch)
    assert back.line == res.truth.line
    lines = p.read_text().splitlines()
    assert lines[0].startswith("cycle_index,absorption_time_ns,absorbed_line,branch")
    assert len({ln.split(",")[0] for ln in lines[1:]}) == res.n_cycles


def test_selection_rule_null_short():
    cfg = ExperimentConfig(kappa=1.0).with_values(qwp_angle=90, pol_impurity=0)
    assert len(simulate_absorptions(cfg, 100_000, seed=0).t_ns) == 0


def test_other_pumped_state_via_ion_override():
    cfg = ExperimentConfig(kappa=1e-2).with_values(qwp_angle=90, pol_impurity=0)
    ion = IonState(Manifold.D5_2, {-2.5: 1.0})
    tr = simulate_absorptions(cfg, 2000, seed=0, ion=ion)
    assert len(tr.t_ns) > 0
    assert set(tr.line) == {"-5/2->-3/2"}
