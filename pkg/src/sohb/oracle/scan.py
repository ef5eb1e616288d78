"""Single-tone impedance scan of the simulated system around its SO.

Each probe run starts from the same SO snapshot as an unperturbed baseline
run; the difference of the two current space vectors isolates the response
to the probe, so the SO's own harmonics largely cancel.
"""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np
from scipy.signal.windows import hann

from ..linearization import FrequencyResponse
from ..model import SystemParams
from .fft import tone_fit
from .simulate import Probe, Scenario, simulate

__all__ = ["ScanError", "so_snapshot", "frequency_scan", "so_grid_distance", "mirror_distance",
           "coupled_frequencies"]


class ScanError(ValueError):
    pass


def so_grid_distance(f: float, f1: float, fs: float) -> float:
    """Distance from ``f`` to the nearest SO line ``f1 + n*fs`` (or to f1 when fs = 0)."""
    if fs <= 0:
        return abs(f - f1)
    n = round((f - f1) / fs)
    return abs(f - f1 - n * fs)


def mirror_distance(f: float, f1: float, fs: float) -> float:
    """Distance from ``f`` to its nearest mirror-coupled tone ``2*f1 - f + n*fs``."""
    d = 2.0 * (f - f1)
    if fs <= 0:
        return abs(d)
    return abs(d - round(d / fs) * fs)


def coupled_frequencies(f: float, f1: float, fs: float, order: int = 4) -> tuple[list, list]:
    """Tones a probe at ``f`` excites (probe first) and the SO lines.

    The probe couples to ``f + n*fs`` and, through the mirror channel of the
    DC-side products, to ``2*f1 - f + n*fs``.
    """
    if fs <= 0:
        return [f, 2 * f1 - f], [f1]
    ns = range(-order, order + 1)
    tones = [f] + [f + n * fs for n in ns if n] + [2 * f1 - f + n * fs for n in ns]
    return tones, [f1 + n * fs for n in ns]


def so_snapshot(p: SystemParams, t_settle: float = 40.0, lg_start: float | None = 0.1e-3,
                dt: float = 20e-6) -> tuple[float, np.ndarray]:
    """State after letting the system fall into its SO (L_g switched from ``lg_start`` at 2 s)."""
    from .simulate import Event

    events = [] if lg_start is None else [Event(2.0, {"L_g": p.L_g})]
    p0 = p if lg_start is None else p.with_(L_g=lg_start)
    ts = simulate(Scenario(p0, duration=t_settle, dt=dt, events=events, sample_every=1000))
    return t_settle, ts.final_state


def frequency_scan(p: SystemParams, freqs: Iterable[float], snapshot: tuple[float, np.ndarray],
                   fs: float = 0.0, amp: float = 0.01, settle: float = 10.0, length: float = 20.0,
                   guard: float = 0.1, order: int = 4, dt: float = 20e-6) -> FrequencyResponse:
    """Loop impedance ``V_probe / dI`` at each probe frequency.

    ``fs`` is the SO frequency (0 for an equilibrium).  The current
    difference to an unperturbed baseline run is fitted by weighted least
    squares over every coupled tone plus drifting SO lines, so closely
    spaced mirror tones do not leak into the probe bin.  The analysis window
    is at least ``length`` s and at least 20 / (distance to the SO grid).
    Probes closer than ``guard`` Hz to DC, an SO line or their own mirror
    are skipped.
    """
    t_s, x_s = snapshot

    def run(probe, dwell):
        sc = Scenario(p, duration=settle + dwell, dt=dt, probe=probe, sample_every=25, x0=x_s, t0=t_s)
        return simulate(sc)

    bases: dict = {}
    out_f, out_v, skipped = [], [], []
    for f in sorted(float(f) for f in freqs):
        sep = so_grid_distance(f, p.f_1, fs)
        if abs(f) < guard or sep < guard or mirror_distance(f, p.f_1, fs) < guard:
            skipped.append(f)
            continue
        dwell = float(math.ceil(max(length, 20.0 / sep)))
        if dwell not in bases:
            bases[dwell] = run(None, dwell)
        pr = run(Probe(f, amp, t_on=t_s, ramp=0.5), dwell)
        wb = bases[dwell].window(t_s + settle, t_s + settle + dwell)
        wp = pr.window(t_s + settle, t_s + settle + dwell)
        di = (wp.channels["i_a"] - wb.channels["i_a"]) + 1j * (wp.channels["i_b"] - wb.channels["i_b"])
        tones, lines = coupled_frequencies(f, p.f_1, fs, order)
        c = tone_fit(di, wb.t, hann(wb.n, sym=False), tones + lines, lines)
        out_f.append(f)
        out_v.append(amp * p.u_peak / c[0])
    if not out_f:
        raise ScanError("every probe frequency collides with an SO or mirror tone")
    return FrequencyResponse(np.array(out_f), np.array(out_v), "Z_loop(scan)", skipped)
