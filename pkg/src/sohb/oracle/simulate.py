"""Average-model time-domain simulation of the grid-tied VSC.

The three-phase quantities are carried as complex space vectors in the
stationary frame (phase a is the real part).  Eight states:

    i (re, im), u_dc, x_dc (DC-voltage PI integrator), x_d, x_q (current PI
    integrators), theta0 (PLL angle deviation), x_pll (PLL PI integrator)

integrated with classic RK4 at a fixed step.  Parameter events (L_g, limits)
split the run into segments.  A series probe tone can be superimposed on the
grid source for impedance scans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from ..model import SystemParams

__all__ = ["Event", "Probe", "Scenario", "TimeSeries", "SimulationDiverged", "simulate", "CHANNELS",
           "initial_state"]

#: recorded channels, in storage order
CHANNELS = ("u_dc", "u_ga", "u_gb", "i_a", "i_b", "m_a", "m_b", "i_dpp", "i_dstar",
            "theta0", "i_d", "i_q", "u_gq")

# parameter vector layout for the compiled kernel
_P_FIELDS = ("L_g", "L_f", "C_dc", "u_peak", "I_load", "u_dc_ref", "i_q_ref", "w1",
             "kp_dc", "ki_dc", "kp_cc", "ki_cc", "kp_pll", "ki_pll", "k_pwm", "I_up", "I_low")


class SimulationDiverged(RuntimeError):
    def __init__(self, t: float):
        super().__init__(f"simulation diverged at t = {t:.4f} s (|u_dc| above 10x reference)")
        self.t = t


@dataclass(frozen=True)
class Event:
    """Parameter change at time ``t`` (keys: any SystemParams field, I_up, I_low)."""

    t: float
    changes: dict


@dataclass(frozen=True)
class Probe:
    """Series voltage tone ``amp * exp(j 2 pi f t)`` (space vector) at the grid source.

    ``amp`` is a fraction of the source phase peak; the tone is ramped on
    over ``ramp`` seconds from ``t_on``.
    """

    f: float
    amp: float = 0.01
    t_on: float = 0.0
    ramp: float = 0.5


@dataclass
class Scenario:
    params: SystemParams
    duration: float
    dt: float = 20e-6
    events: list = field(default_factory=list)
    probe: Probe | None = None
    sample_every: int = 25
    x0: np.ndarray | None = None
    t0: float = 0.0

    def __post_init__(self):
        if not 0 < self.dt <= 50e-6:
            raise ValueError("integration step must be in (0, 50 us]")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        ts = [e.t for e in self.events]
        if ts != sorted(ts):
            raise ValueError("events must be time-ordered")
        if self.sample_every < 1:
            raise ValueError("sample_every must be >= 1")

    def params_at(self, t: float) -> SystemParams:
        p = self.params
        for e in self.events:
            if e.t <= t:
                p = p.with_(**e.changes)
        return p


@dataclass
class TimeSeries:
    """Uniformly sampled channels; ``t[0] = t0``, spacing ``ts``."""

    t0: float
    ts: float
    channels: dict
    final_state: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        lens = {len(v) for v in self.channels.values()}
        if len(lens) != 1:
            raise ValueError("channels must have equal lengths")
        for k, v in self.channels.items():
            if not np.all(np.isfinite(v)):
                raise ValueError(f"channel {k} contains non-finite samples")

    @property
    def n(self) -> int:
        return len(next(iter(self.channels.values())))

    @property
    def t(self) -> np.ndarray:
        return self.t0 + self.ts * np.arange(self.n)

    def window(self, start: float, stop: float) -> "TimeSeries":
        i0 = int(math.ceil((start - self.t0) / self.ts - 1e-9))
        i1 = int(math.floor((stop - self.t0) / self.ts + 1e-9))
        if i0 < 0 or i1 > self.n or i1 - i0 < 3:
            raise ValueError(f"window [{start}, {stop}] s is outside the recorded span")
        return TimeSeries(self.t0 + i0 * self.ts, self.ts, {k: v[i0:i1] for k, v in self.channels.items()},
                          self.final_state, dict(self.meta))

    def save(self, path) -> None:
        np.savez_compressed(path, t0=self.t0, ts=self.ts, final_state=self.final_state,
                            names=np.array(list(self.channels)), format_version=1,
                            **{"ch_" + k: v for k, v in self.channels.items()})

    @classmethod
    def load(cls, path) -> "TimeSeries":
        with np.load(path, allow_pickle=False) as z:
            if int(z["format_version"]) != 1:
                raise ValueError("unsupported time-series dump version")
            ch = {str(k): z["ch_" + str(k)] for k in z["names"]}
            return cls(float(z["t0"]), float(z["ts"]), ch, z["final_state"])

    def to_csv(self, path) -> None:
        names = list(self.channels)
        data = np.column_stack([self.t] + [self.channels[k] for k in names])
        np.savetxt(path, data, delimiter=",", header="sohb-timeseries v1\nt," + ",".join(names), comments="")


def _pvec(p: SystemParams) -> np.ndarray:
    vals = dict(p.as_dict(), u_peak=p.u_peak, w1=p.w1)
    return np.array([float(vals[k]) for k in _P_FIELDS])


@numba.njit(cache=True)
def _outputs(t, x, P, probe):
    L_g, L_f, u_pk, u_ref, iq_ref, w1 = P[0], P[1], P[3], P[5], P[6], P[7]
    kp_dc, kp_cc, k_pwm, I_up, I_low = P[8], P[10], P[14], P[15], P[16]
    i = complex(x[0], x[1])
    u_dc, x_dc, x_d, x_q, th0 = x[2], x[3], x[4], x[5], x[6]
    theta = w1 * t + th0
    rot = complex(math.cos(theta), math.sin(theta))
    i_dq = i * rot.conjugate()
    i_dpp = kp_dc * (u_dc - u_ref) + x_dc
    i_dst = min(max(i_dpp, I_low), I_up)
    e_d = kp_cc * (i_dst - i_dq.real) + x_d
    e_q = kp_cc * (iq_ref - i_dq.imag) + x_q
    m = (k_pwm / u_ref) * complex(e_d, e_q) * rot
    e = 0.5 * u_dc * m
    # source with optional series probe
    u_s = u_pk * complex(math.cos(w1 * t), math.sin(w1 * t))
    if probe[2] != 0.0 and t > probe[3]:
        ramp = 1.0 if probe[4] <= 0.0 else min(1.0, (t - probe[3]) / probe[4])
        ph = 2.0 * math.pi * probe[2] * t
        u_s += ramp * complex(probe[0], probe[1]) * complex(math.cos(ph), math.sin(ph))
    di = (e - u_s) / (L_g + L_f)
    u_g = u_s + L_g * di
    u_gq = (u_g * rot.conjugate()).imag
    i_dc = 0.75 * (m * i.conjugate()).real
    return di, u_g, u_gq, i_dc, i_dpp, i_dst, i_dq, m


@numba.njit(cache=True)
def _rhs(t, x, P, probe, out):
    di, u_g, u_gq, i_dc, i_dpp, i_dst, i_dq, m = _outputs(t, x, P, probe)
    out[0] = di.real
    out[1] = di.imag
    out[2] = (P[4] - i_dc) / P[2]
    out[3] = P[9] * (x[2] - P[5])
    out[4] = P[11] * (i_dst - i_dq.real)
    out[5] = P[11] * (P[6] - i_dq.imag)
    out[6] = P[12] * u_gq + x[7]
    out[7] = P[13] * u_gq


@numba.njit(cache=True)
def _run(x, t0, nsteps, dt, every, P, probe, rec, r0):
    """RK4 from t0; records every ``every`` steps into rec[:, r0...]. Returns (steps done, records)."""
    k1 = np.empty(8)
    k2 = np.empty(8)
    k3 = np.empty(8)
    k4 = np.empty(8)
    xt = np.empty(8)
    r = r0
    lim = 10.0 * P[5]
    for s in range(nsteps):
        t = t0 + s * dt
        if s % every == 0 and r < rec.shape[1]:
            di, u_g, u_gq, i_dc, i_dpp, i_dst, i_dq, m = _outputs(t, x, P, probe)
            rec[0, r] = x[2]
            rec[1, r] = u_g.real
            rec[2, r] = u_g.imag
            rec[3, r] = x[0]
            rec[4, r] = x[1]
            rec[5, r] = m.real
            rec[6, r] = m.imag
            rec[7, r] = i_dpp
            rec[8, r] = i_dst
            rec[9, r] = x[6]
            rec[10, r] = i_dq.real
            rec[11, r] = i_dq.imag
            rec[12, r] = u_gq
            r += 1
        _rhs(t, x, P, probe, k1)
        for j in range(8):
            xt[j] = x[j] + 0.5 * dt * k1[j]
        _rhs(t + 0.5 * dt, xt, P, probe, k2)
        for j in range(8):
            xt[j] = x[j] + 0.5 * dt * k2[j]
        _rhs(t + 0.5 * dt, xt, P, probe, k3)
        for j in range(8):
            xt[j] = x[j] + dt * k3[j]
        _rhs(t + dt, xt, P, probe, k4)
        for j in range(8):
            x[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
        if not (abs(x[2]) < lim):
            return s + 1, r
    return nsteps, r


def initial_state(p: SystemParams) -> np.ndarray:
    """Rough operating point from the lossless power balance (the run settles it)."""
    i_d = 2 * p.I_load * p.u_dc_ref / (3 * p.u_peak)
    return np.array([i_d, 0.0, p.u_dc_ref, i_d, p.u_peak, 0.0, 0.0, 0.0])


def simulate(sc: Scenario) -> TimeSeries:
    """Integrate the scenario; raises :class:`SimulationDiverged` on blow-up."""
    dt, every = sc.dt, sc.sample_every
    n_total = int(round(sc.duration / dt))
    x = np.array(sc.x0 if sc.x0 is not None else initial_state(sc.params), dtype=float)
    if x.shape != (8,):
        raise ValueError("initial state must have 8 entries")
    probe = np.zeros(5)
    if sc.probe is not None:
        a = sc.probe.amp * sc.params.u_peak
        probe[:] = (a, 0.0, sc.probe.f, sc.probe.t_on, sc.probe.ramp)
        if sc.probe.f == 0:
            raise ValueError("probe frequency must be nonzero")
    n_rec = (n_total + every - 1) // every
    rec = np.zeros((len(CHANNELS), n_rec))
    # segment boundaries on the step grid
    bounds = [0]
    for e in sc.events:
        k = int(round((e.t - sc.t0) / dt))
        if 0 < k < n_total:
            bounds.append(k)
    bounds.append(n_total)
    r = 0
    for a, b in zip(bounds[:-1], bounds[1:]):
        P = _pvec(sc.params_at(sc.t0 + a * dt + 0.5 * dt))
        # keep the recording phase aligned with the global sample grid
        done, r = _run_aligned(x, sc.t0, a, b, dt, every, P, probe, rec, r)
        if done < b - a:
            raise SimulationDiverged(sc.t0 + (a + done) * dt)
    ch = {name: rec[i, :r].copy() for i, name in enumerate(CHANNELS)}
    return TimeSeries(sc.t0, dt * every, ch, x.copy(),
                      {"dt": dt, "duration": sc.duration, "probe": None if sc.probe is None else vars(sc.probe)})


def _run_aligned(x, t0, a, b, dt, every, P, probe, rec, r):
    # steps until the next recorded sample
    lead = (-a) % every
    done = 0
    if lead:
        n = min(lead, b - a)
        dummy = np.zeros((rec.shape[0], 0))
        d, _ = _run(x, t0 + a * dt, n, dt, every, P, probe, dummy, 0)
        done += d
        if d < n:
            return done, r
        a += n
    if a < b:
        d, r = _run(x, t0 + a * dt, b - a, dt, every, P, probe, rec, r)
        done += d
    return done, r
