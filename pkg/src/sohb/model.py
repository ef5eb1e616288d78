"""Harmonic-balance model of the grid-connected two-level VSC.

Topology (one phase shown, the other two follow by generalized sequence):

    u_ta --L_g-- u_ga (PCC) --L_f-- e_a = m_a*u_dc/2 | u_dc, C_dc, I_load

Control: a PLL tracking the PCC voltage (PI on its q component, integrated
into the angle deviation theta0), a DC-voltage PI producing the pre-limit
d-axis current reference i_d**, a hard limit producing i_d*, and dq current
PIs whose voltage outputs are scaled to modulation by ``k_pwm/u_dc*``.

The unknowns of the harmonic-balance system are the rectangular
coefficients of m_a, u_dc and u_ga, the polar coefficients of theta0 (and of
i_d** when the limiter is active) and the oscillation frequency f_s.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .limiter import LimiterSpec, TriggerMode, clipped_fourier
from .spectra import (Kind, Spectrum, apply_derivative_gain, apply_pi_gain,
                      grid_frequencies, make_spectrum, toeplitz_product, zeros)
from .trig import theta_trig_spectra

__all__ = [
    "SystemParams", "Slot", "Layout", "UnknownVector", "IntermediateSet",
    "ModelError", "passive_and_pi_relations", "control_stage_products",
    "dc_constraints", "assemble_residuals", "evaluate", "equilibrium_solve",
    "THETA_MAX_ORDER",
]

#: highest oscillation order carried by the PLL angle deviation
THETA_MAX_ORDER = 2


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class SystemParams:
    """Physical and control constants of the testing system.

    ``U_t`` is the line-to-line RMS source voltage (angle 0).  PI gains are
    in volts per ampere (current loop), amperes per volt (DC-voltage loop)
    and rad/s per volt (PLL).
    """

    L_g: float = 1e-3
    L_f: float = 0.55e-3
    C_dc: float = 5e-3
    U_t: float = 380.0
    I_load: float = 66.66
    u_dc_ref: float = 750.0
    i_q_ref: float = 0.0
    f_1: float = 50.0
    kp_dc: float = 0.1
    ki_dc: float = 100.0
    kp_cc: float = 0.1
    ki_cc: float = 10.0
    kp_pll: float = 3.0
    ki_pll: float = 100.0
    k_pwm: float = 2.0
    lim: LimiterSpec = field(default_factory=lambda: LimiterSpec(500.0, -500.0))

    def __post_init__(self):
        for name in ("L_g", "L_f", "C_dc", "U_t", "u_dc_ref", "f_1", "k_pwm"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def w1(self) -> float:
        return 2 * math.pi * self.f_1

    @property
    def u_peak(self) -> float:
        """Phase peak of the source voltage."""
        return self.U_t * math.sqrt(2.0 / 3.0)

    @property
    def u_coeff(self) -> float:
        """Two-sided coefficient of the source voltage at f_1."""
        return self.u_peak / 2

    @property
    def im_uga(self) -> float:
        """Fixed imaginary part of u_ga<1> from the AC/DC power balance."""
        return self.w1 * self.L_g * self.I_load * self.u_dc_ref / (3 * self.u_peak)

    def with_(self, **kw) -> "SystemParams":
        lim = kw.pop("lim", None)
        if "I_up" in kw or "I_low" in kw:
            lim = LimiterSpec(kw.pop("I_up", self.lim.I_up), kw.pop("I_low", self.lim.I_low))
        p = replace(self, **kw)
        return replace(p, lim=lim) if lim is not None else p

    def as_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "lim"}
        d["I_up"], d["I_low"] = self.lim.I_up, self.lim.I_low
        return d


# --------------------------------------------------------------------------
# unknown bookkeeping

@dataclass(frozen=True)
class Slot:
    """One real unknown: coefficient (k, n) of ``signal``, part R/I/M/A."""

    signal: str
    k: int
    n: int
    part: str

    @property
    def label(self) -> str:
        if self.signal == "f_s":
            return "f_s"
        if self.k == 0:
            where = "0" if self.n == 0 else ("s" if self.n == 1 else f"{self.n}s")
        else:
            where = "1" if self.n == 0 else f"1{self.n:+d}s".replace("+1s", "+s").replace("-1s", "-s")
        return f"{self.part}({self.signal}<{where}>)"


class Layout:
    """Ordered real unknowns for a given truncation order and limiter mode.

    Excluded by construction: the angle of theta0<s> (gauge), the imaginary
    part of u_ga<1> (closed-form power balance) and f_s when N = 0.
    """

    def __init__(self, order: int, limiter_active: bool = False):
        if order < 0:
            raise ValueError("order must be nonnegative")
        self.order = order
        self.limiter_active = limiter_active
        N = order
        slots: list[Slot] = []
        for n in range(-N, N + 1):
            slots += [Slot("m_a", 1, n, "R"), Slot("m_a", 1, n, "I")]
        slots.append(Slot("u_dc", 0, 0, "R"))
        for n in range(1, N + 1):
            slots += [Slot("u_dc", 0, n, "R"), Slot("u_dc", 0, n, "I")]
        for n in range(-N, N + 1):
            slots.append(Slot("u_ga", 1, n, "R"))
            if n != 0:
                slots.append(Slot("u_ga", 1, n, "I"))
        slots.append(Slot("theta0", 0, 0, "M"))
        for n in range(1, min(N, THETA_MAX_ORDER) + 1):
            slots.append(Slot("theta0", 0, n, "M"))
            if n > 1:
                slots.append(Slot("theta0", 0, n, "A"))
        if limiter_active:
            if N < 1:
                raise ValueError("the limiter-active system needs N >= 1")
            slots.append(Slot("i_dpp", 0, 0, "M"))
            for n in range(1, N + 1):
                slots += [Slot("i_dpp", 0, n, "M"), Slot("i_dpp", 0, n, "A")]
        if N >= 1:
            slots.append(Slot("f_s", 0, 0, "value"))
        self.slots = tuple(slots)
        self.index = {s: i for i, s in enumerate(slots)}

    def __len__(self) -> int:
        return len(self.slots)

    def __eq__(self, other) -> bool:
        return isinstance(other, Layout) and (self.order, self.limiter_active) == (other.order, other.limiter_active)

    def scales(self, p: SystemParams) -> np.ndarray:
        """Typical magnitude of each unknown, for finite-difference steps."""
        base = {"m_a": 1.0, "u_dc": p.u_dc_ref, "u_ga": p.u_coeff, "theta0": 1.0,
                "i_dpp": p.I_load, "f_s": p.f_1}
        return np.array([base[s.signal] for s in self.slots])


@dataclass
class UnknownVector:
    """Values of the harmonic-balance unknowns with their layout."""

    layout: Layout
    values: np.ndarray
    f1: float = 50.0
    im_uga: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (len(self.layout),):
            raise ValueError("value count does not match the layout")

    @property
    def order(self) -> int:
        return self.layout.order

    @property
    def fs(self) -> float:
        if self.order == 0:
            return 0.0
        return float(self.values[self.layout.index[Slot("f_s", 0, 0, "value")]])

    def get(self, signal: str, k: int, n: int, part: str) -> float:
        return float(self.values[self.layout.index[Slot(signal, k, n, part)]])

    def coeff(self, signal: str, n: int) -> complex:
        """Complex coefficient of ``signal`` at order n (k from the signal kind)."""
        N = self.order
        idx = self.layout.index
        if signal in ("m_a", "u_ga"):
            if abs(n) > N:
                return 0j
            re = self.get(signal, 1, n, "R")
            if signal == "u_ga" and n == 0:
                return complex(re, self.im_uga)
            return complex(re, self.get(signal, 1, n, "I"))
        if signal == "u_dc":
            if abs(n) > N:
                return 0j
            if n == 0:
                return complex(self.get("u_dc", 0, 0, "R"))
            c = complex(self.get("u_dc", 0, abs(n), "R"), self.get("u_dc", 0, abs(n), "I"))
            return c if n > 0 else c.conjugate()
        if signal in ("theta0", "i_dpp"):
            m = abs(n)
            if Slot(signal, 0, m, "M") not in idx:
                return 0j
            M = self.get(signal, 0, m, "M")
            A = self.get(signal, 0, m, "A") if Slot(signal, 0, m, "A") in idx else 0.0
            c = M * complex(math.cos(A), math.sin(A))
            return c if n >= 0 else c.conjugate()
        raise KeyError(signal)

    def spectrum(self, signal: str) -> Spectrum:
        N, f1, fs = self.order, self.f1, self.fs
        if signal in ("m_a", "u_ga"):
            return make_spectrum(Kind.AC, N, f1, fs, {(1, n): self.coeff(signal, n) for n in range(-N, N + 1)})
        return make_spectrum(Kind.DC, N, f1, fs, {(0, n): self.coeff(signal, n) for n in range(0, N + 1)})

    def copy(self) -> "UnknownVector":
        return UnknownVector(self.layout, self.values.copy(), self.f1, self.im_uga)

    def as_dict(self) -> dict[str, float]:
        return {s.label: float(v) for s, v in zip(self.layout.slots, self.values)}

    @classmethod
    def from_coeffs(cls, p: SystemParams, order: int, coeffs: dict, fs: float | None = None,
                    limiter_active: bool = False) -> "UnknownVector":
        """Build from ``{signal: {n: complex}}``.

        theta0 and i_dpp coefficients are given as complex numbers and
        converted to the polar unknowns; the angle of theta0<s> is dropped
        (it must already be in the gauge).
        """
        lay = Layout(order, limiter_active)
        vals = np.zeros(len(lay))
        for i, s in enumerate(lay.slots):
            if s.signal == "f_s":
                vals[i] = fs
                continue
            c = complex(coeffs.get(s.signal, {}).get(s.n, 0.0))
            if s.part == "R":
                vals[i] = c.real
            elif s.part == "I":
                vals[i] = c.imag
            elif s.part == "M":
                vals[i] = c.real if s.n == 0 or Slot(s.signal, 0, s.n, "A") not in lay.index else abs(c)
                if s.signal == "theta0" and s.n == 1:
                    vals[i] = abs(c) if c.real >= 0 else -abs(c)
            elif s.part == "A":
                vals[i] = math.atan2(c.imag, c.real)
        return cls(lay, vals, p.f_1, p.im_uga)

    def to_coeffs(self) -> dict[str, dict[int, complex]]:
        out: dict[str, dict[int, complex]] = {}
        sigs = ["m_a", "u_dc", "u_ga", "theta0"] + (["i_dpp"] if self.layout.limiter_active else [])
        for sig in sigs:
            rng = range(-self.order, self.order + 1) if sig in ("m_a", "u_ga") else range(0, self.order + 1)
            out[sig] = {n: self.coeff(sig, n) for n in rng}
        return out

    def rotated(self, phi: float) -> dict[str, dict[int, complex]]:
        """Coefficients with order-n content rotated by ``n*phi`` (time-origin shift of the oscillation)."""
        rot = {}
        for sig, cs in self.to_coeffs().items():
            rot[sig] = {n: c * complex(math.cos(n * phi), math.sin(n * phi)) for n, c in cs.items()}
        return rot


# --------------------------------------------------------------------------
# intermediate quantities

@dataclass
class IntermediateSet:
    """Every spectrum appearing in the balance equations."""

    m_a: Spectrum
    u_dc: Spectrum
    u_ga: Spectrum
    theta0: Spectrum
    u_ta: Spectrum
    u_ca: Spectrum
    i_a: Spectrum
    i_dc: Optional[Spectrum] = None
    i_dc_p: Optional[Spectrum] = None
    e_a: Optional[Spectrum] = None
    e_a_p: Optional[Spectrum] = None
    e_d: Optional[Spectrum] = None
    e_d_p: Optional[Spectrum] = None
    e_q: Optional[Spectrum] = None
    e_q_p: Optional[Spectrum] = None
    cos_t: Optional[Spectrum] = None
    sin_t: Optional[Spectrum] = None
    i_d: Optional[Spectrum] = None
    i_q: Optional[Spectrum] = None
    u_gd: Optional[Spectrum] = None
    u_gq: Optional[Spectrum] = None
    m_d: Optional[Spectrum] = None
    m_q: Optional[Spectrum] = None
    i_dpp: Optional[Spectrum] = None     # limiter input i_d**
    i_dpp_p: Optional[Spectrum] = None   # DC-voltage PI output (extra expression of i_d**)
    i_dstar: Optional[Spectrum] = None   # limiter output
    theta_p: Optional[Spectrum] = None
    dc_undefined: tuple = ()

    def signals(self) -> dict[str, Spectrum]:
        return {f.name: getattr(self, f.name) for f in fields(self)
                if isinstance(getattr(self, f.name), Spectrum)}


def _diag(g: Spectrum, fn) -> Spectrum:
    """Multiply each coefficient by fn(j*2*pi*f), mapping f = 0 to 0."""
    f = grid_frequencies(g.order, g.f1, g.fs)
    s = 2j * np.pi * f
    out = np.zeros_like(g.data)
    nz = f != 0
    out[nz] = g.data[nz] * fn(s[nz])
    return g.with_data(out, spill=g.spill)


def _park(x: Spectrum, cos_t: Spectrum, sin_t: Spectrum) -> tuple[Spectrum, Spectrum]:
    d = 2.0 * toeplitz_product(x, cos_t)
    q = -2.0 * toeplitz_product(x, sin_t)
    return d, q


def passive_and_pi_relations(x: UnknownVector, p: SystemParams, ims: IntermediateSet | None = None) -> IntermediateSet:
    """Linear relations of the passive branches and the PI controllers.

    Fills i_a, i_dc', e_a' and the DC-voltage PI output; if ``ims`` already
    holds the dq currents and PCC voltage, the current-loop and PLL
    expressions e_d', e_q' and theta' are filled as well.
    """
    if ims is None:
        m_a, u_dc, u_ga, th = (x.spectrum(s) for s in ("m_a", "u_dc", "u_ga", "theta0"))
        u_ta = make_spectrum(Kind.AC, x.order, x.f1, x.fs, {(1, 0): p.u_coeff})
        ims = IntermediateSet(m_a=m_a, u_dc=u_dc, u_ga=u_ga, theta0=th, u_ta=u_ta, u_ca=u_ga,
                              i_a=zeros(Kind.AC, x.order, x.f1, x.fs))
        ims.i_a = _diag(ims.u_ga - ims.u_ta, lambda s: 1.0 / (s * p.L_g))
        ims.e_a_p = ims.u_ca + apply_derivative_gain(ims.i_a) * p.L_f
        load = make_spectrum(Kind.DC, x.order, x.f1, x.fs, {(0, 0): p.I_load})
        ims.i_dc_p = load - apply_derivative_gain(ims.u_dc) * p.C_dc
        ref = make_spectrum(Kind.DC, x.order, x.f1, x.fs, {(0, 0): p.u_dc_ref})
        ims.i_dpp_p, und = apply_pi_gain(ims.u_dc - ref, p.kp_dc, p.ki_dc)
        ims.dc_undefined = ("i_dpp",) if und else ()
        return ims
    if ims.i_d is None or ims.i_dstar is None:
        raise ModelError("dq quantities are required for the controller relations")
    iq_ref = make_spectrum(Kind.DC, x.order, x.f1, x.fs, {(0, 0): p.i_q_ref})
    ims.e_d_p, u1 = apply_pi_gain(ims.i_dstar - ims.i_d, p.kp_cc, p.ki_cc)
    ims.e_q_p, u2 = apply_pi_gain(iq_ref - ims.i_q, p.kp_cc, p.ki_cc)
    ims.theta_p = _diag(ims.u_gq, lambda s: (p.kp_pll + p.ki_pll / s) / s)
    und = list(ims.dc_undefined)
    und += ["e_d"] if u1 else []
    und += ["e_q"] if u2 else []
    und += ["theta"] if ims.u_gq[0, 0] != 0 else []
    ims.dc_undefined = tuple(und)
    return ims


def control_stage_products(ims: IntermediateSet, p: SystemParams, trig: tuple[Spectrum, Spectrum] | None = None) -> IntermediateSet:
    """Modulation products and dq projections.

    e_a = T(m_a) u_dc / 2, i_dc = 1.5 T(m_a) i_a, dq projections of i_a,
    u_ga and m_a on the PLL frame, and e_dq = u_dc* m_dq / k_pwm.
    """
    cos_t, sin_t = trig if trig is not None else theta_trig_spectra(ims.theta0)
    ims.cos_t, ims.sin_t = cos_t, sin_t
    ims.e_a = 0.5 * toeplitz_product(ims.m_a, ims.u_dc)
    ims.i_dc = 1.5 * toeplitz_product(ims.m_a, ims.i_a)
    ims.i_d, ims.i_q = _park(ims.i_a, cos_t, sin_t)
    ims.u_gd, ims.u_gq = _park(ims.u_ga, cos_t, sin_t)
    ims.m_d, ims.m_q = _park(ims.m_a, cos_t, sin_t)
    scale = p.u_dc_ref / p.k_pwm
    ims.e_d = ims.m_d * scale
    ims.e_q = ims.m_q * scale
    return ims


def dc_constraints(ims: IntermediateSet, p: SystemParams) -> dict[str, float]:
    """Zero-frequency steady-state conditions of the integrating controllers.

    Raw (unscaled) residuals of i_d*(0) = i_d(0), i_q(0) = i_q*,
    u_gq(0) = 0 and u_dc(0) = u_dc*.
    """
    out = {
        "i_d": (ims.i_dstar[0, 0] - ims.i_d[0, 0]).real if ims.i_dstar is not None else 0.0,
        "i_q": (ims.i_q[0, 0]).real - p.i_q_ref,
        "u_gq": ims.u_gq[0, 0].real,
        "u_dc": ims.u_dc[0, 0].real - p.u_dc_ref,
    }
    return out


def evaluate(x: UnknownVector, p: SystemParams, mode: TriggerMode = TriggerMode.NONE) -> IntermediateSet:
    """All intermediate spectra at the point ``x``."""
    ims = passive_and_pi_relations(x, p)
    control_stage_products(ims, p)
    if x.layout.limiter_active:
        ims.i_dpp = x.spectrum("i_dpp")
        ims.i_dstar = clipped_fourier(ims.i_dpp, p.lim) if mode.triggered else ims.i_dpp
    else:
        # limiter blocked: i_d* = i_d**, whose integrator state settles at i_d(0)
        data = ims.i_dpp_p.data.copy()
        data[1, 2 * x.order] = ims.i_d[0, 0].real
        ims.i_dpp = ims.i_dpp_p.with_data(data)
        ims.i_dstar = ims.i_dpp
    passive_and_pi_relations(x, p, ims)
    return ims


def _rows_dc(diff: Spectrum, N: int, start: int = 1) -> list[float]:
    out = []
    for n in range(start, N + 1):
        c = diff[0, n]
        out += [c.real, c.imag]
    return out


def assemble_residuals(x: UnknownVector, p: SystemParams, mode: TriggerMode = TriggerMode.NONE,
                       ims: IntermediateSet | None = None) -> np.ndarray:
    """Scaled real residual vector, square against the layout of ``x``."""
    N = x.order
    if mode.triggered and not x.layout.limiter_active:
        raise ModelError("a triggered limiter needs the limiter-active layout")
    if ims is None:
        ims = evaluate(x, p, mode)
    dc = dc_constraints(ims, p)
    vs, ia, vu = p.u_coeff, p.I_load, p.u_dc_ref / 2
    tally: dict[str, int] = {}
    rows: list[float] = []

    def add(name, vals):
        tally[name] = tally.get(name, 0) + len(vals)
        rows.extend(vals)

    # modulation product coupling
    add("i_dc", [v / ia for v in _rows_dc(ims.i_dc - ims.i_dc_p, N)])
    d = ims.e_a - ims.e_a_p
    add("e_a", [v / vs for n in range(-N, N + 1) for v in (d[1, n].real, d[1, n].imag)])
    # inverse Park / PLL
    if x.layout.limiter_active:
        add("e_d", [dc["i_d"] / ia])
    else:
        add("e_d", [dc["u_dc"] / p.u_dc_ref])
    add("e_d", [v / vu for v in _rows_dc(ims.e_d - ims.e_d_p, N)])
    add("e_q", [dc["i_q"] / ia])
    add("e_q", [v / vu for v in _rows_dc(ims.e_q - ims.e_q_p, N)])
    add("theta", [dc["u_gq"] / vs])
    th = ims.theta0 - ims.theta_p
    add("theta", _rows_dc(th, min(N, THETA_MAX_ORDER)))
    # hard limit
    if x.layout.limiter_active:
        add("i_dpp", [dc["u_dc"] / p.u_dc_ref])
        add("i_dpp", [v / ia for v in _rows_dc(ims.i_dpp - ims.i_dpp_p, N)])
    r = np.array(rows)
    if r.size != len(x.layout):
        raise ModelError(f"system is not square: {r.size} equations {tally} vs {len(x.layout)} unknowns")
    return r


def equation_tally(order: int, limiter_active: bool = False) -> dict[str, int]:
    """Equations per balance principle for a given order and mode."""
    N = order
    t = {"i_dc": 2 * N, "e_a": 2 * (2 * N + 1), "e_d": 2 * N + 1, "e_q": 2 * N + 1,
         "theta": 2 * min(N, THETA_MAX_ORDER) + 1}
    if limiter_active:
        t["i_dpp"] = 2 * N + 1
    return t


def equilibrium_guess(p: SystemParams) -> UnknownVector:
    """Crude N = 0 starting point: unit power factor, no filter drop."""
    lay = Layout(0)
    vals = np.zeros(len(lay))
    vals[lay.index[Slot("m_a", 1, 0, "R")]] = 2 * p.u_coeff / p.u_dc_ref
    vals[lay.index[Slot("u_dc", 0, 0, "R")]] = p.u_dc_ref
    vals[lay.index[Slot("u_ga", 1, 0, "R")]] = p.u_coeff
    return UnknownVector(lay, vals, p.f_1, p.im_uga)


def equilibrium_solve(p: SystemParams, tol: float = 1e-12, max_iter: int = 50) -> UnknownVector:
    """Fundamental-plus-DC operating point (N = 0) by Newton-Raphson."""
    from .solver import SolveConfig, newton_solve  # local import: solver builds on this module

    x0 = equilibrium_guess(p)
    rep = newton_solve(lambda v: assemble_residuals(v, p), x0, SolveConfig(order=0, tol=tol, max_iter=max_iter),
                       scales=x0.layout.scales(p))
    if not rep.converged:
        raise ModelError(f"equilibrium Newton iteration diverged (residual {rep.residual_norm:.3g})")
    return rep.solution
