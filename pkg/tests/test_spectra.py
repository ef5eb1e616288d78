import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sohb.spectra import (Kind, Spectrum, TruncationError, apply_derivative_gain, apply_pi_gain, make_spectrum,
                          toeplitz_matrix, toeplitz_product, wrap_angle, PolarCoeff)

F1, FS = 50.0, 9.8926
cplx = st.complex_numbers(max_magnitude=3.0, allow_nan=False, allow_infinity=False)


@st.composite
def spectra(draw, kind=None, order=None):
    N = draw(st.integers(1, 3)) if order is None else order
    kind = draw(st.sampled_from([Kind.AC, Kind.DC])) if kind is None else kind
    entries = {}
    if kind is Kind.DC:
        entries[(0, 0)] = draw(st.floats(-3, 3))
        for n in range(1, N + 1):
            entries[(0, n)] = draw(cplx)
    else:
        for n in range(-N, N + 1):
            entries[(1, n)] = draw(cplx)
    return make_spectrum(kind, N, F1, FS, entries)


def sample_times(n=64):
    return np.linspace(0.0, 1.3, n)


def test_make_spectrum_mirrors_and_validates():
    g = make_spectrum(Kind.AC, 2, F1, FS, {(1, -1): 1 + 2j})
    assert g[-1, 1] == 1 - 2j
    with pytest.raises(ValueError):
        make_spectrum(Kind.DC, 1, F1, FS, {(1, 0): 1.0})
    with pytest.raises(ValueError):
        make_spectrum(Kind.DC, 1, F1, FS, {(0, 0): 1j})
    with pytest.raises(ValueError):
        make_spectrum(Kind.AC, 1, F1, FS, {(1, 2): 1.0})
    with pytest.raises(ValueError):
        Spectrum(Kind.AC, 1, F1, FS, np.zeros((3, 4)))


def test_single_tone_reconstruction():
    g = make_spectrum(Kind.DC, 1, F1, FS, {(0, 1): 0.5 * np.exp(0.3j)})
    t = sample_times()
    assert np.allclose(g.evaluate(t), np.cos(2 * np.pi * FS * t + 0.3), atol=1e-12)


@st.composite
def pairs(draw, kinds=None):
    """Two spectra of one order; at least one is DC-type unless ``kinds`` says otherwise."""
    N = draw(st.integers(1, 3))
    ka, kb = kinds or draw(st.sampled_from([(Kind.DC, Kind.DC), (Kind.AC, Kind.DC), (Kind.DC, Kind.AC)]))
    return draw(spectra(kind=ka, order=N)), draw(spectra(kind=kb, order=N))


@settings(max_examples=80, deadline=None)
@given(ab=pairs())
def test_product_matches_time_sampling(ab):
    """Convolution equals the pointwise product when nothing spills (1e-9)."""
    a, b = ab
    c = toeplitz_product(a, b)
    assert c.spill == pytest.approx(0.0, abs=1e-15)
    t = sample_times()
    expect = a.evaluate(t) * b.evaluate(t)
    assert np.max(np.abs(c.evaluate(t) - expect)) <= 1e-9 * max(1.0, np.max(np.abs(expect)))


def phase_signal(g, t, ph):
    """Phase ``ph`` (0, 1, 2) of a balanced set: k-blocks rotated by -k*120 degrees."""
    N = g.order
    n = np.arange(-2 * N, 2 * N + 1)
    out = np.zeros_like(t, dtype=complex)
    for k in (-1, 0, 1):
        f = k * g.f1 + n * g.fs
        rot = np.exp(-2j * np.pi * k * ph / 3)
        out += (g.data[k + 1][None, :] * rot * np.exp(2j * np.pi * np.outer(t, f))).sum(axis=1)
    return out.real


@settings(max_examples=40, deadline=None)
@given(a=spectra(kind=Kind.AC, order=2), b=spectra(kind=Kind.AC, order=2))
def test_ac_product_is_three_phase_average(a, b):
    """AC*AC keeps the balanced part: the mean of the three phase products."""
    c = toeplitz_product(a, b)
    assert c.kind is Kind.DC
    t = sample_times()
    expect = np.mean([phase_signal(a, t, ph) * phase_signal(b, t, ph) for ph in range(3)], axis=0)
    assert np.max(np.abs(c.evaluate(t) - expect)) <= 1e-9 * max(1.0, np.max(np.abs(expect)))


def test_phase_signal_matches_evaluate():
    g = make_spectrum(Kind.AC, 1, F1, FS, {(1, 0): 1 + 1j, (1, 1): 0.2})
    t = sample_times()
    assert np.allclose(phase_signal(g, t, 0), g.evaluate(t), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(ab=pairs())
def test_toeplitz_matrix_equals_product(ab):
    a, b = ab
    c = toeplitz_product(a, b)
    T = toeplitz_matrix(a)
    assert np.allclose(T @ b.data.ravel(), c.data.ravel(), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(ab=pairs())
def test_products_commute_and_stay_conjugate_symmetric(ab):
    a, b = ab
    ab, ba = toeplitz_product(a, b), toeplitz_product(b, a)
    assert ab.allclose(ba)
    assert ab.is_conjugate_symmetric()


def test_spill_is_recorded_and_enforced():
    a = make_spectrum(Kind.DC, 1, F1, FS, {(0, 1): 1.0})
    sq = toeplitz_product(a, a)      # lands at n = 2 = 2N: kept
    assert sq.spill == 0.0
    cube = toeplitz_product(sq, a)   # n = 3 > 2N: dropped
    assert cube.spill > 0
    with pytest.raises(TruncationError):
        toeplitz_product(sq, a, max_spill=1e-12)


def test_derivative_gain_matches_time_derivative():
    g = make_spectrum(Kind.DC, 2, F1, FS, {(0, 1): 0.2 + 0.1j, (0, 2): 0.05j})
    d = apply_derivative_gain(g)
    t = sample_times()
    h = 1e-6
    fd = (g.evaluate(t + h) - g.evaluate(t - h)) / (2 * h)
    assert np.allclose(d.evaluate(t), fd, atol=1e-6)


def test_pi_gain_flags_integrated_constant():
    g = make_spectrum(Kind.DC, 1, F1, FS, {(0, 0): 2.0, (0, 1): 1.0})
    out, undefined = apply_pi_gain(g, 0.1, 10.0)
    assert undefined
    assert out[0, 0] == 0
    assert out[0, 1] == pytest.approx(0.1 + 10.0 / (2j * math.pi * FS))


def test_polar_and_wrap():
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi) or wrap_angle(3 * math.pi) == pytest.approx(-math.pi)
    z = 0.3 - 0.4j
    assert PolarCoeff.from_complex(z).to_complex() == pytest.approx(z)
