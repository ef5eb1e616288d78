"""Hann-windowed harmonic extraction from simulated SO waveforms."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.signal.windows import hann

from ..spectra import Kind, make_spectrum
from .simulate import TimeSeries

__all__ = ["HarmonicEstimate", "NoSODetected", "fft_extract", "dtft", "tone_fit", "locate_fs", "AC_CHANNELS", "DC_CHANNELS"]

AC_CHANNELS = ("u_ga", "i_a", "m_a")
DC_CHANNELS = ("u_dc", "i_dpp", "i_dstar", "theta0", "i_d", "i_q", "u_gq")


class NoSODetected(ValueError):
    pass


@dataclass
class HarmonicEstimate:
    fs: float
    spectra: dict
    window: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.fs > 0:
            raise ValueError("f_s must be positive")

    def coeffs(self) -> dict:
        """``{signal: {n: complex}}`` in the solver's naming (limiter input as i_dpp)."""
        out = {}
        for name, sp in self.spectra.items():
            N = sp.order
            if sp.kind is Kind.AC:
                out[name] = {n: sp[1, n] for n in range(-N, N + 1)}
            else:
                out[name] = {n: sp[0, n] for n in range(0, N + 1)}
        return out


def dtft(x: np.ndarray, t: np.ndarray, w: np.ndarray, f) -> np.ndarray:
    """Window-normalized coefficients of ``x`` at frequencies ``f`` (absolute time reference)."""
    f = np.atleast_1d(np.asarray(f, dtype=float))
    wx = w * x
    ph = np.exp(-2j * np.pi * np.outer(f, t))
    return ph @ wx / np.sum(w)


def tone_fit(x: np.ndarray, t: np.ndarray, w: np.ndarray, freqs, ramps=()) -> np.ndarray:
    """Weighted least-squares amplitudes of complex tones at known frequencies.

    Separates tones closer than the window's resolution, which a plain DTFT
    cannot.  ``ramps`` adds tones with a linearly growing amplitude (slow
    drift of an oscillation); their coefficients follow the plain ones.
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    tc = t - t.mean()
    cols = [np.exp(2j * np.pi * np.outer(t, freqs))]
    if len(ramps):
        cols.append(tc[:, None] * np.exp(2j * np.pi * np.outer(t, np.asarray(ramps, dtype=float))))
    A = np.hstack(cols)
    sw = np.sqrt(w)
    c, *_ = np.linalg.lstsq(A * sw[:, None], x * sw, rcond=None)
    return c


def locate_fs(ts: TimeSeries, channel: str = "u_dc", band=(1.0, 24.0), resolution: float | None = None) -> float:
    """Dominant sideband frequency of a DC-type channel.

    Coarse peak on the FFT grid (bin = 1/window length), parabolic
    interpolation of the log magnitude, then a bounded maximization of the
    windowed DTFT magnitude within one bin.
    """
    x = ts.channels[channel]
    n = x.size
    w = hann(n, sym=False)
    xw = (x - np.mean(x)) * w
    T = n * ts.ts
    spec = np.abs(np.fft.rfft(xw))
    fr = np.fft.rfftfreq(n, ts.ts)
    sel = np.flatnonzero((fr >= band[0]) & (fr <= band[1]))
    if sel.size < 3:
        raise NoSODetected("search band holds fewer than three bins")
    k = sel[np.argmax(spec[sel])]
    floor = np.median(spec[sel])
    if spec[k] < 100 * max(floor, 1e-300) or spec[k] / np.sum(w) < 1e-6 * max(abs(np.mean(x)), 1.0):
        raise NoSODetected("no sideband peak above the noise floor (no SO detected)")
    a, b, c = np.log(spec[k - 1:k + 2] + 1e-300)
    den = a - 2 * b + c
    delta = 0.5 * (a - c) / den if den != 0 else 0.0
    f0 = (k + delta) / T
    t = ts.t
    xm = x - np.mean(x)
    res = minimize_scalar(lambda f: -abs(dtft(xm, t, w, f)[0]), bounds=(f0 - 0.5 / T, f0 + 0.5 / T),
                          method="bounded", options={"xatol": 1e-9})
    return float(res.x)


def fft_extract(ts: TimeSeries, start: float | None = None, length: float = 40.0, order: int = 3,
                f1: float = 50.0, fs: float | None = None) -> HarmonicEstimate:
    """Harmonics at n*f_s (DC-type) and f_1 + n*f_s (AC-type) over a Hann window.

    The window defaults to the last ``length`` seconds of the series.
    """
    t_end = ts.t0 + ts.n * ts.ts
    start = t_end - length if start is None else start
    win = ts.window(start, start + length)
    fs = locate_fs(win) if fs is None else fs
    t = win.t
    w = hann(win.n, sym=False)
    spectra = {}
    for name in DC_CHANNELS:
        if name not in win.channels:
            continue
        c = dtft(win.channels[name], t, w, fs * np.arange(order + 1))
        entries = {(0, 0): c[0].real}
        entries.update({(0, n): c[n] for n in range(1, order + 1)})
        spectra[name] = make_spectrum(Kind.DC, order, f1, fs, entries)
    for name in AC_CHANNELS:
        if name not in win.channels:
            continue
        ns = np.arange(-order, order + 1)
        c = dtft(win.channels[name], t, w, f1 + fs * ns)
        spectra[name] = make_spectrum(Kind.AC, order, f1, fs, {(1, int(n)): v for n, v in zip(ns, c)})
    # solver naming: limiter input is the i_dpp unknown
    return HarmonicEstimate(fs, spectra, {"start": start, "length": length, "bin": 1.0 / length,
                                          "kind": "hann"})
