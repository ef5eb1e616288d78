"""Hard limit on the d-axis current reference, in the harmonic domain.

The crossing phases are estimated from the DC + first-harmonic part of the
limiter input; inside the unsaturated segments the full truncated input is
kept.  Fourier projections over the segments are evaluated in closed form so
the clipped spectrum is a smooth function of the input coefficients.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .spectra import Kind, Spectrum

__all__ = ["LimiterSpec", "TriggerMode", "LimiterError", "classify_trigger",
           "segment_moments", "clipped_fourier"]


class LimiterError(ValueError):
    """Crossing phases cannot be resolved from the first-harmonic estimate."""


@dataclass(frozen=True)
class LimiterSpec:
    I_up: float
    I_low: float

    def __post_init__(self):
        if not self.I_low < self.I_up:
            raise ValueError("lower limit must be below the upper limit")


class TriggerMode(enum.Enum):
    NONE = "None"
    UPPER = "UpperOnly"
    LOWER = "LowerOnly"
    BILATERAL = "Bilateral"

    @property
    def triggered(self) -> bool:
        return self is not TriggerMode.NONE


def _dc_and_first(i_pp: Spectrum) -> tuple[float, float, float]:
    if i_pp.kind is not Kind.DC:
        raise ValueError("limiter input must be a DC-type spectrum")
    m0 = i_pp[0, 0].real
    c1 = i_pp[0, 1] if i_pp.order >= 1 else 0j
    return m0, abs(c1), math.atan2(c1.imag, c1.real)


def classify_trigger(i_pp: Spectrum, lim: LimiterSpec) -> TriggerMode:
    m0, m1, _ = _dc_and_first(i_pp)
    up = m0 + 2 * m1 > lim.I_up
    low = m0 - 2 * m1 < lim.I_low
    if up and low:
        return TriggerMode.BILATERAL
    if up:
        return TriggerMode.UPPER
    if low:
        return TriggerMode.LOWER
    return TriggerMode.NONE


def _arccos(arg: float, which: str) -> float:
    if not -1.0 <= arg <= 1.0:
        raise LimiterError(
            f"{which} crossing unresolved (arccos argument {arg:.4g}); "
            "the first-harmonic estimate of the limiter input has broken down")
    return math.acos(arg)


def segment_moments(i_pp: Spectrum, lim: LimiterSpec) -> list[float]:
    """Sorted crossing phases, measured from the first harmonic's peak.

    A phase ``p`` corresponds to ``ws*t + A1 = p`` where ``A1`` is the angle
    of the first-harmonic coefficient.  Upper crossings come as ``+-a_up``,
    lower crossings as ``+-a_low``.
    """
    mode = classify_trigger(i_pp, lim)
    if mode is TriggerMode.NONE:
        return []
    m0, m1, _ = _dc_and_first(i_pp)
    if m1 <= 0:
        raise LimiterError("constant input outside the limits")
    phases = []
    if mode in (TriggerMode.UPPER, TriggerMode.BILATERAL):
        a = _arccos((lim.I_up - m0) / (2 * m1), "upper")
        phases += [-a, a]
    if mode in (TriggerMode.LOWER, TriggerMode.BILATERAL):
        a = _arccos((lim.I_low - m0) / (2 * m1), "lower")
        phases += [-a, a]
    return sorted(phases)


def _exp_integral(k: np.ndarray, a: float, b: float) -> np.ndarray:
    """Integral of exp(j*k*tau) over [a, b] for integer array k."""
    out = np.empty(k.shape, dtype=complex)
    zero = k == 0
    out[zero] = b - a
    kk = k[~zero]
    out[~zero] = (np.exp(1j * kk * b) - np.exp(1j * kk * a)) / (1j * kk)
    return out


def _saturated_segments(i_pp: Spectrum, lim: LimiterSpec) -> list[tuple[float, float, float]]:
    """(start, end, level) in tau = ws*t over one period."""
    mode = classify_trigger(i_pp, lim)
    if mode is TriggerMode.NONE:
        return []
    _, _, A1 = _dc_and_first(i_pp)
    ph = segment_moments(i_pp, lim)
    segs = []
    if mode is TriggerMode.BILATERAL:
        a_up, a_low = ph[2], ph[3]
        segs.append((-a_up, a_up, lim.I_up))
        segs.append((a_low, 2 * math.pi - a_low, lim.I_low))
    elif mode is TriggerMode.UPPER:
        segs.append((ph[0], ph[1], lim.I_up))
    else:
        a = ph[1]
        segs.append((a, 2 * math.pi - a, lim.I_low))
    return [(s - A1, e - A1, lvl) for s, e, lvl in segs]


def clipped_fourier(i_pp: Spectrum, lim: LimiterSpec, order: int | None = None) -> Spectrum:
    """Fourier coefficients of the clipped limiter input.

    Unsaturated segments follow the full truncated input; saturated segments
    sit at the bound.  With the limiter not triggered the input is returned
    unchanged (same object).
    """
    segs = _saturated_segments(i_pp, lim)
    if not segs:
        return i_pp
    N = i_pp.order
    order = N if order is None else order
    if order != N:
        raise ValueError("output order must match the input grid")
    n = np.arange(-N, N + 1)
    x = np.array([i_pp[0, m] for m in n])
    out = x.copy()
    for a, b, level in segs:
        # correction = (1/2pi) * int_seg (level - x(tau)) exp(-j n tau)
        corr = level * _exp_integral(-n, a, b)
        for m, xm in zip(n, x):
            if xm != 0:
                corr -= xm * _exp_integral(m - n, a, b)
        out += corr / (2 * math.pi)
    data = np.zeros_like(i_pp.data)
    data[1, N:3 * N + 1] = out
    # symmetrize against round-off
    data[1] = 0.5 * (data[1] + np.conj(data[1][::-1]))
    return i_pp.with_data(data)
