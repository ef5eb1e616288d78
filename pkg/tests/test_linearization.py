import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sohb.linearization import (FrequencyResponse, LoopModel, Mode, build_loop_response, conventional_mode,
                                default_grid, identify_modes, log_derivative, outside_bands, refine_mode,
                                response_peaks)
from sohb.model import SystemParams

from oracles import least_damped_oscillation

GRID = default_grid(-50.0, 150.0, 0.25)


def rational(zeros, poles, gain=1.0):
    def g(f):
        s = 2j * np.pi * np.asarray(f, dtype=float)
        out = gain * np.ones_like(s)
        for z in zeros:
            out = out * (s - z)
        for p in poles:
            out = out / (s - p)
        return out
    return g


def identify(g, grid=GRID):
    def fine(lo, hi, step):
        f = np.linspace(lo, hi, int(round((hi - lo) / step)) + 1)
        return log_derivative(FrequencyResponse(f, g(f)))
    return identify_modes(log_derivative(FrequencyResponse(grid, g(grid))), fine)


@st.composite
def features(draw):
    """1-3 zeros/poles with |alpha| in [0.5, 20], > 5 Hz apart, inside the grid."""
    n = draw(st.integers(1, 3))
    fs = []
    while len(fs) < n:
        f = draw(st.floats(-40.0, 140.0))
        if all(abs(f - q) > 5.0 for q in fs):
            fs.append(f)
        else:
            fs.append(max(fs) + 5.5 + draw(st.floats(0, 20)))
            if fs[-1] > 140:
                fs.pop()
                break
    out = []
    for f in fs:
        mag = draw(st.floats(0.5, 20.0))
        sign = draw(st.sampled_from([-1.0, 1.0]))
        kind = draw(st.sampled_from(["zero", "pole"]))
        out.append(Mode(sign * mag, 2 * math.pi * f, kind))
    return out


@settings(max_examples=60, deadline=None)
@given(feats=features())
def test_synthetic_modes_recovered_within_one_percent(feats):
    zs = [complex(m.alpha, m.omega) for m in feats if m.kind == "zero"]
    ps = [complex(m.alpha, m.omega) for m in feats if m.kind == "pole"]
    found = identify(rational(zs, ps, 3.0))
    for m in feats:
        near = [q for q in found if q.kind == m.kind and abs(q.omega - m.omega) < 2 * math.pi]
        assert near, f"{m} not recovered from {found}"
        q = min(near, key=lambda q: abs(q.omega - m.omega))
        assert q.alpha == pytest.approx(m.alpha, rel=0.01)
        assert q.omega == pytest.approx(m.omega, rel=0.01, abs=2 * math.pi * 0.01)


def test_single_zero_closed_form():
    w0 = 2 * math.pi * 58.8
    g = rational([complex(-3.0, w0)], [])
    dl = log_derivative(FrequencyResponse(GRID, g(GRID)))
    w = 2 * math.pi * GRID
    assert np.allclose(dl.value, 1j / (1j * (w - w0) + 3.0), rtol=1e-3, atol=1e-5)
    (m,) = identify(g)
    assert m.kind == "zero" and m.positive_damping


def test_flat_response_has_no_modes():
    assert identify(lambda f: np.full(np.shape(f), 2.0 + 1j)) == []


def test_frequency_response_validation():
    with pytest.raises(ValueError):
        FrequencyResponse([1.0, 0.5], [1, 1])
    with pytest.raises(ValueError):
        FrequencyResponse([1.0, 2.0], [1, np.nan])
    with pytest.raises(ValueError):
        log_derivative(FrequencyResponse([1.0, 2.0], [1, 1]))


def test_peaks_and_bands():
    g = rational([complex(-1.0, 2 * math.pi * 40)], [complex(-1.0, 2 * math.pi * 70)])
    fr = FrequencyResponse(GRID, g(GRID))
    peaks = response_peaks(fr)
    assert any(abs(p - 40) < 0.3 for p in peaks) and any(abs(p - 70) < 0.3 for p in peaks)
    mask = outside_bands(GRID, peaks)
    assert not mask[np.argmin(abs(GRID - 40))] and mask[np.argmin(abs(GRID - 55))]


@pytest.mark.parametrize("L_g,f_s0", [(1e-3, 9.9132), (1.5e-3, 9.8366)])
def test_conventional_mode(L_g, f_s0):
    p = SystemParams(L_g=L_g)
    m = conventional_mode(p)
    assert m.f == pytest.approx(f_s0, abs=0.05)
    assert m.alpha > 0
    alpha_o, f_o = least_damped_oscillation(p)
    assert m.f == pytest.approx(f_o, abs=1e-3)
    assert m.alpha == pytest.approx(alpha_o, abs=1e-3)


def test_stable_equilibrium_mode_is_damped():
    m = conventional_mode(SystemParams(L_g=0.1e-3))
    alpha_o, f_o = least_damped_oscillation(SystemParams(L_g=0.1e-3))
    assert m.alpha < 0
    assert m.alpha == pytest.approx(alpha_o, abs=1e-3)


def test_equilibrium_loop_response_has_negative_damping_pair(p1, eq1):
    lm = LoopModel(eq1, p1)
    f1 = p1.f_1
    found = []
    for f in (f1 + 9.9, f1 - 9.9):
        m = refine_mode(lm, Mode(0.0, 2 * math.pi * f))
        assert abs(lm.impedance(complex(m.alpha, m.omega))) < 1e-6
        found.append(m)
    assert all(m.alpha > 0 for m in found)
    assert sorted(abs(m.f - f1) for m in found) == pytest.approx([9.9132, 9.9132], abs=1e-3)


def test_loop_response_is_finite_on_the_default_grid(test1, p1):
    fr = build_loop_response(test1.solution, p1, default_grid(-50, 150, 2.5))
    assert len(fr) >= 79
    assert all(abs(f - p1.f_1 - round((f - p1.f_1) / test1.fs) * test1.fs) < 1e-6 for f in fr.skipped)
