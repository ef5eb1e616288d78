"""Time-domain oracle: simulator, harmonic extraction and impedance scan."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sohb.linearization import build_loop_response
from sohb.model import SystemParams, equilibrium_solve
from sohb.oracle.fft import NoSODetected, fft_extract, locate_fs, tone_fit
from sohb.oracle.scan import (ScanError, coupled_frequencies, frequency_scan, mirror_distance, so_grid_distance,
                              so_snapshot)
from sohb.oracle.simulate import CHANNELS, Event, Scenario, SimulationDiverged, TimeSeries, simulate
from sohb.spectra import Kind

STABLE = SystemParams(L_g=0.1e-3)


def synthetic_series(fs, dc, ac, f1=50.0, T=40.0, rate=2000.0):
    """u_dc and u_ga built from known coefficients: dc {n: c} at n*fs, ac {n: c} at f1 + n*fs."""
    t = np.arange(int(T * rate)) / rate
    u_dc = np.full(t.size, dc.get(0, 0.0).real)
    for n, c in dc.items():
        if n:
            u_dc += 2 * (c * np.exp(2j * np.pi * n * fs * t)).real
    u_ga = np.zeros(t.size)
    for n, c in ac.items():
        u_ga += 2 * (c * np.exp(2j * np.pi * (f1 + n * fs) * t)).real
    return TimeSeries(0.0, 1 / rate, {"u_dc": u_dc, "u_ga": u_ga}, np.zeros(8))


# --------------------------------------------------------------------------
# simulator

def test_stable_run_settles_on_equilibrium():
    ts = simulate(Scenario(STABLE, duration=10.0))
    eq = equilibrium_solve(STABLE)
    assert ts.channels["u_dc"][-1] == pytest.approx(STABLE.u_dc_ref, abs=1e-6)
    assert ts.channels["theta0"][-1] == pytest.approx(eq.coeff("theta0", 0).real, abs=1e-8)
    tail = ts.window(8.0, 10.0)
    assert np.ptp(tail.channels["u_dc"]) < 1e-6


def test_step_halving_converges():
    p = SystemParams(L_g=1e-3)
    t0, x0 = so_snapshot(p, t_settle=20.0)
    runs = [simulate(Scenario(p, duration=2.0, dt=dt, x0=x0, t0=t0, sample_every=int(round(500e-6 / dt))))
            for dt in (20e-6, 10e-6)]
    for ch in ("u_dc", "i_a", "theta0"):
        a, b = runs[0].channels[ch], runs[1].channels[ch]
        assert a.shape == b.shape
        swing = np.ptp(b)
        assert np.max(np.abs(a - b)) <= 1e-3 * swing, ch


def test_events_switch_parameters():
    sc = Scenario(STABLE, duration=1.0, events=[Event(0.5, {"L_g": 0.2e-3})])
    assert sc.params_at(0.4).L_g == 0.1e-3
    assert sc.params_at(0.6).L_g == 0.2e-3
    with pytest.raises(ValueError):
        Scenario(STABLE, duration=1.0, events=[Event(0.6, {}), Event(0.5, {})])


@pytest.mark.parametrize("kw", [{"dt": 0.0}, {"dt": 1e-4}, {"duration": -1.0}, {"sample_every": 0}])
def test_scenario_validation(kw):
    base = {"duration": 1.0}
    base.update(kw)
    with pytest.raises(ValueError):
        Scenario(STABLE, **base)


def test_divergence_is_reported():
    wild = SystemParams(L_g=1e-3, kp_dc=-50.0)
    with pytest.raises(SimulationDiverged):
        simulate(Scenario(wild, duration=5.0))


def test_timeseries_round_trip(tmp_path):
    ts = simulate(Scenario(STABLE, duration=0.2))
    ts.save(tmp_path / "run.npz")
    back = TimeSeries.load(tmp_path / "run.npz")
    assert set(back.channels) == set(CHANNELS)
    for k in CHANNELS:
        assert np.array_equal(back.channels[k], ts.channels[k])
    assert (back.t0, back.ts) == (ts.t0, ts.ts)
    with pytest.raises(ValueError):
        ts.window(0.0, 5.0)


# --------------------------------------------------------------------------
# harmonic extraction

@settings(max_examples=20, deadline=None)
@given(fs=st.floats(5.0, 20.0), a=st.floats(1.0, 50.0), ph=st.floats(-3.1, 3.1))
def test_fft_recovers_synthetic_tones(fs, a, ph):
    dc = {0: 750.0, 1: a * np.exp(1j * ph), 2: 0.05 * a * np.exp(-1j * ph), 3: 0.004 * a}
    ac = {0: 153.0 + 16.9j, 1: -4.7 + 7.9j, -1: 2.3 - 0.4j, 2: 0.3j, -2: -0.25}
    est = fft_extract(synthetic_series(fs, dc, ac))
    # leakage of the tone's own mirror limits the f_s estimate to ~1e-7 Hz (a 1e-5 rad phase error)
    assert est.fs == pytest.approx(fs, abs=1e-6)
    c = est.coeffs()
    for n, v in dc.items():
        assert abs(c["u_dc"][n] - v) <= 1e-4 * abs(dc[1]), n
    for n, v in ac.items():
        assert abs(c["u_ga"][n] - v) <= 1e-4 * abs(ac[0]), n
    assert est.spectra["u_dc"].kind is Kind.DC and est.spectra["u_ga"].kind is Kind.AC


def test_flat_signal_has_no_so():
    ts = synthetic_series(9.9, {0: 750.0}, {0: 155.0})
    with pytest.raises(NoSODetected):
        locate_fs(ts)


def test_tone_fit_separates_tones_inside_one_bin():
    rate, T = 1000.0, 10.0
    t = np.arange(int(rate * T)) / rate
    freqs = [45.0, 45.02, 55.0]
    amps = [1.0 + 0.5j, -0.3 + 0.2j, 0.7j]
    x = sum(a * np.exp(2j * np.pi * f * t) for a, f in zip(amps, freqs))
    c = tone_fit(x, t, np.hanning(t.size), freqs)
    assert np.allclose(c, amps, atol=1e-9)


# --------------------------------------------------------------------------
# impedance scan

def test_scan_geometry():
    assert so_grid_distance(61.0, 50.0, 10.0) == pytest.approx(1.0)
    assert so_grid_distance(52.0, 50.0, 0.0) == pytest.approx(2.0)
    assert mirror_distance(50.0, 50.0, 9.9) == 0.0
    assert mirror_distance(55.0, 50.0, 0.0) == pytest.approx(10.0)
    tones, lines = coupled_frequencies(45.0, 50.0, 9.9, order=2)
    assert tones[0] == 45.0 and 55.0 in tones and len(tones) == 1 + 4 + 5
    assert lines == pytest.approx([50 + n * 9.9 for n in range(-2, 3)])


def test_scan_skips_everything_colliding():
    snap = (0.0, np.zeros(8))
    with pytest.raises(ScanError):
        frequency_scan(STABLE, [0.0, 50.0, 50.05], snap)


def test_equilibrium_scan_matches_analytic():
    """Two independent routes to the same loop impedance at a stable equilibrium."""
    snap = so_snapshot(STABLE, t_settle=5.0, lg_start=None)
    f = [-20.0, 30.0, 70.0, 120.0]
    scan = frequency_scan(STABLE, f, snap, settle=5.0, length=10.0)
    ana = build_loop_response(equilibrium_solve(STABLE), STABLE, scan.f)
    ratio = scan.value / ana.value
    assert np.all(np.abs(np.abs(ratio) - 1) < 0.01), np.abs(ratio)
    assert np.all(np.abs(np.degrees(np.angle(ratio))) < 1.0)
