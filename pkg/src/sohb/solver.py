"""Newton-Raphson driver, staged initial values and the top-level SO flow."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .limiter import LimiterError, TriggerMode, classify_trigger
from .model import (Layout, ModelError, Slot, SystemParams, UnknownVector,
                    assemble_residuals, equilibrium_solve, evaluate)

log = logging.getLogger(__name__)

__all__ = ["SolveConfig", "SolveReport", "SolverError", "SingularJacobianError", "NoSOError",
           "newton_solve", "staged_initialization", "solve_so", "normalize_gauge",
           "promote", "fd_jacobian"]


class SolverError(RuntimeError):
    pass


class SingularJacobianError(SolverError):
    pass


class NoSOError(SolverError):
    """Scan exhausted without a nonzero (sideband-carrying) solution."""


@dataclass(frozen=True)
class SolveConfig:
    order: int = 3
    tol: float = 1e-9
    max_iter: int = 50
    jac_step: float = 1e-7
    max_halvings: int = 8
    scan_step: float = 0.01
    scan_mag: tuple[float, float] = (0.0, 0.4)
    scan_rect: tuple[float, float] = (-0.4, 0.4)
    # Newton budget per scan point; seeds that have not converged by then are abandoned
    scan_iter: int = 25
    # a converged solution gets a few more iterations towards this residual
    polish_tol: float = 1e-13
    polish_iter: int = 3

    def __post_init__(self):
        if self.order < 0:
            raise ValueError("order must be nonnegative")
        if not (self.tol > 0 and self.jac_step > 0 and self.scan_step > 0):
            raise ValueError("tolerances and steps must be positive")
        if self.max_iter < 1 or self.max_halvings < 0:
            raise ValueError("iteration limits must be positive")
        lo, hi = self.scan_mag
        if not 0 <= lo < hi:
            raise ValueError("magnitude scan domain must be an increasing nonnegative range")
        lo, hi = self.scan_rect
        if not lo < 0 < hi:
            raise ValueError("rectangular scan domain must straddle zero")


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residual_norm: float
    solution: UnknownVector
    mode: TriggerMode = TriggerMode.NONE
    trace: list = field(default_factory=list)
    history: list = field(default_factory=list)
    message: str = ""
    runtime: float = 0.0

    @property
    def fs(self) -> float:
        return self.solution.fs

    def summary(self) -> dict:
        x = self.solution
        out = {"converged": self.converged, "iterations": self.iterations,
               "residual_norm": self.residual_norm, "trigger_mode": self.mode.value,
               "order": x.order, "limiter_active": x.layout.limiter_active,
               "f_s": x.fs, "runtime_s": self.runtime, "message": self.message}
        out["unknowns"] = x.as_dict()
        out["trace"] = list(self.trace)
        return out


# --------------------------------------------------------------------------
# Newton-Raphson

def fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], v: np.ndarray, r0: np.ndarray,
                steps: np.ndarray) -> np.ndarray:
    J = np.empty((r0.size, v.size))
    for j in range(v.size):
        w = v.copy()
        w[j] += steps[j]
        J[:, j] = (fun(w) - r0) / steps[j]
    return J


def newton_solve(residual: Callable, x0, cfg: SolveConfig = SolveConfig(), scales: np.ndarray | None = None,
                 max_iter: int | None = None, abort: Callable | None = None) -> SolveReport:
    """Damped Newton-Raphson on a square system.

    ``x0`` is either an :class:`UnknownVector` (``residual`` then takes
    UnknownVectors) or a plain array.  The Jacobian is built by forward
    differences with step ``jac_step*max(|x_j|, scale_j)``.  A step is halved
    up to ``max_halvings`` times while the residual norm does not decrease.
    ``abort(x)`` is checked after every accepted step; returning True stops
    the iteration as not converged.
    """
    t0 = time.perf_counter()
    wrapped = isinstance(x0, UnknownVector)
    if wrapped:
        proto = x0

        def fun(v):
            return residual(UnknownVector(proto.layout, v, proto.f1, proto.im_uga))
        v = x0.values.copy()
    else:
        fun = residual
        v = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    max_iter = cfg.max_iter if max_iter is None else max_iter
    sc = np.ones_like(v) if scales is None else np.asarray(scales, dtype=float)

    def pack(vals, conv, it, norm, hist, msg=""):
        sol = UnknownVector(proto.layout, vals, proto.f1, proto.im_uga) if wrapped else vals
        return SolveReport(conv, it, norm, sol, history=hist, message=msg, runtime=time.perf_counter() - t0)

    r = np.asarray(fun(v), dtype=float)
    if r.size != v.size:
        raise ValueError(f"system is not square ({r.size} equations, {v.size} unknowns)")
    norm = float(np.max(np.abs(r)))
    hist = [norm]
    for it in range(max_iter + 1):
        if not math.isfinite(norm):
            return pack(v, False, it, norm, hist, "residual not finite")
        if norm <= cfg.tol:
            return pack(v, True, it, norm, hist)
        if it == max_iter:
            break
        steps = cfg.jac_step * np.maximum(np.abs(v), sc)
        J = fd_jacobian(fun, v, r, steps)
        try:
            dx = np.linalg.solve(J, -r)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobianError(f"singular Jacobian at iteration {it}") from exc
        if not np.all(np.isfinite(dx)) or np.linalg.cond(J) > 1e15:
            raise SingularJacobianError(f"singular Jacobian at iteration {it}")
        lam = 1.0
        for _ in range(cfg.max_halvings + 1):
            w = v + lam * dx
            try:
                rw = np.asarray(fun(w), dtype=float)
                nw = float(np.max(np.abs(rw)))
            except (ValueError, LimiterError, ModelError):
                nw = math.inf
            if nw < norm:
                break
            lam *= 0.5
        if not math.isfinite(nw):
            return pack(v, False, it + 1, norm, hist, "residual evaluation failed along the Newton step")
        v, r, norm = w, rw, nw
        hist.append(norm)
        if abort is not None and norm > cfg.tol and abort(pack(v, False, it + 1, norm, hist).solution):
            return pack(v, False, it + 1, norm, hist, "aborted")
    return pack(v, False, max_iter, norm, hist, "maximum iterations exceeded")


# --------------------------------------------------------------------------
# bookkeeping between orders and gauges

def promote(x: UnknownVector, order: int, limiter_active: bool | None = None,
            fs: float | None = None, extra: dict | None = None) -> UnknownVector:
    """Re-embed ``x`` at another order / limiter mode, new slots zero (or from ``extra``)."""
    la = x.layout.limiter_active if limiter_active is None else limiter_active
    lay = Layout(order, la)
    vals = np.zeros(len(lay))
    for i, s in enumerate(lay.slots):
        if s in x.layout.index:
            vals[i] = x.values[x.layout.index[s]]
        elif s.signal == "i_dpp" and s.part == "M" and s.n > 0:
            # a polar slot at zero magnitude has no angle derivative
            vals[i] = 1e-3
    if Slot("f_s", 0, 0, "value") in lay.index:
        cur = x.fs if x.order > 0 else 0.0
        vals[lay.index[Slot("f_s", 0, 0, "value")]] = fs if fs is not None else cur
    for s, val in (extra or {}).items():
        vals[lay.index[s]] = val
    return UnknownVector(lay, vals, x.f1, x.im_uga)


def normalize_gauge(x: UnknownVector) -> UnknownVector:
    """Flip the time origin by half a period when M(theta0<s>) came out negative.

    Rotating order-n coefficients by ``n*pi`` maps the signed first-order
    theta0 unknown to its magnitude and keeps A(theta0<s>) = 0.
    """
    if x.order < 1:
        return x
    key = Slot("theta0", 0, 1, "M")
    if x.values[x.layout.index[key]] >= 0:
        return x
    vals = x.values.copy()
    for i, s in enumerate(x.layout.slots):
        if s.signal == "f_s" or s.n == 0:
            continue
        if s.part in ("R", "I"):
            if s.n % 2:
                vals[i] = -vals[i]
        elif s.part == "M" and s.signal == "theta0" and s.n == 1:
            vals[i] = -vals[i]
        elif s.part == "A":
            vals[i] = math.remainder(vals[i] + s.n * math.pi, 2 * math.pi)
    return UnknownVector(x.layout, vals, x.f1, x.im_uga)


#: relative theta0<s> size below which an iterate counts as the trivial solution
TRIVIAL = 1e-3


def _collapsed(x: UnknownVector) -> bool:
    return _sideband_size(x) < TRIVIAL


def _sideband_size(x: UnknownVector) -> float:
    """Relative size of the first-order content (zero at the trivial point)."""
    if x.order < 1:
        return 0.0
    return abs(x.coeff("theta0", 1)) / max(abs(x.coeff("theta0", 0)), 1e-12)


# --------------------------------------------------------------------------
# staged initial values

def _scan_values(step: float, lo: float, hi: float, base: float) -> list[float]:
    """Grid points of a scan domain (fractions of ``base``), ascending in magnitude."""
    k_hi = int(round(hi / step))
    k_lo = int(round(lo / step))
    pts = [k * step for k in range(k_lo, k_hi + 1)]
    return [base * f for f in sorted(pts, key=lambda f: (abs(f), -f))]


def staged_initialization(p: SystemParams, cfg: SolveConfig = SolveConfig(), fs0: float | None = None,
                          eq: UnknownVector | None = None) -> tuple[UnknownVector, list]:
    """Staged search for a nonzero SO solution of the limiter-free system.

    Returns the converged order-N solution (gauge-normalized) and a trace of
    the stages.  Raises :class:`NoSOError` when every scan point falls back
    to the trivial sideband-free solution.
    """
    from .linearization import conventional_mode

    trace = []
    if eq is None:
        eq = equilibrium_solve(p)
    trace.append({"stage": 0, "theta0_0": eq.coeff("theta0", 0).real, "u_dc_0": eq.coeff("u_dc", 0).real})
    if cfg.order == 0:
        return eq, trace
    if fs0 is None:
        mode = conventional_mode(p, eq)
        if mode is None or mode.alpha <= 0:
            raise NoSOError("SO not found from this seed (no negative-damping conventional mode); "
                            "limiter likely required or reduce L_g")
        fs0 = mode.f
    trace[-1]["f_s0"] = fs0

    def res(v):
        return assemble_residuals(v, p)

    base = promote(eq, 1, fs=fs0)
    scales = base.layout.scales(p)
    udc0 = eq.coeff("u_dc", 0).real
    th0 = eq.coeff("theta0", 0).real
    found = None
    tried = 0
    lo, hi = cfg.scan_rect
    mlo, mhi = cfg.scan_mag
    for r_udc in _scan_values(cfg.scan_step, lo, hi, udc0):
        for m_th in _scan_values(cfg.scan_step, mlo, mhi, th0):
            if m_th == 0:
                continue  # zero theta0 ripple is the trivial point's basin
            x0 = promote(base, 1, extra={Slot("u_dc", 0, 1, "R"): r_udc, Slot("theta0", 0, 1, "M"): m_th})
            tried += 1
            try:
                rep = newton_solve(res, x0, cfg, scales=scales, max_iter=cfg.scan_iter, abort=_collapsed)
            except SolverError:
                continue
            if rep.converged and _sideband_size(rep.solution) > TRIVIAL and rep.solution.fs > 0:
                found = rep
                trace.append({"stage": 1, "seed": {"R(u_dc<s>)": r_udc, "M(theta0<s>)": m_th},
                              "attempts": tried, "iterations": rep.iterations, "f_s": rep.fs})
                break
        if found:
            break
    if found is None:
        raise NoSOError(f"SO not found from this seed after {tried} scan points; "
                        "limiter likely required or reduce L_g")
    x = normalize_gauge(found.solution)
    for n in range(2, cfg.order + 1):
        x, st = _stage_up(x, n, p, cfg, res)
        trace.append(st)
    return x, trace


def _stage_up(x: UnknownVector, n: int, p: SystemParams, cfg: SolveConfig, res) -> tuple[UnknownVector, dict]:
    """Raise the order to n, scanning M(theta0<n s>) (only present for n <= 2)."""
    m1 = abs(x.coeff("theta0", 1))
    base = promote(x, n)
    scales = base.layout.scales(p)
    key = Slot("theta0", 0, n, "M")
    if key in base.layout.index:
        seeds = [f for f in _scan_values(cfg.scan_step, *cfg.scan_mag, m1) if f > 0]
    else:
        seeds = [None]
    tried = 0
    last = None
    for m in seeds:
        x0 = base if m is None else promote(base, n, extra={key: m})
        tried += 1
        try:
            rep = newton_solve(res, x0, cfg, scales=scales, max_iter=cfg.scan_iter, abort=_collapsed)
        except SolverError:
            continue
        last = rep
        if rep.converged and _sideband_size(rep.solution) > TRIVIAL:
            return normalize_gauge(rep.solution), {"stage": n, "attempts": tried, "iterations": rep.iterations,
                                                   "f_s": rep.fs, "seed": m}
    msg = last.message if last else "no scan point converged"
    raise SolverError(f"stage {n} failed after {tried} scan points: {msg}")


# --------------------------------------------------------------------------
# top-level flow

def _limiter_seed(x: UnknownVector, p: SystemParams) -> UnknownVector:
    """Limiter-active layout seeded with the limiter input evaluated at ``x``."""
    ims = evaluate(x, p)
    extra = {Slot("i_dpp", 0, 0, "M"): ims.i_dpp[0, 0].real}
    for n in range(1, x.order + 1):
        c = ims.i_dpp[0, n]
        extra[Slot("i_dpp", 0, n, "M")] = abs(c)
        extra[Slot("i_dpp", 0, n, "A")] = math.atan2(c.imag, c.real)
    return promote(x, x.order, limiter_active=True, extra=extra)


def solve_limited(p: SystemParams, seed: UnknownVector, cfg: SolveConfig = SolveConfig(),
                  mode: TriggerMode | None = None) -> SolveReport:
    """Solve the limiter-active system from ``seed`` (limiter-free or limiter-active)."""
    x0 = seed if seed.layout.limiter_active else _limiter_seed(seed, p)
    if x0.order != cfg.order:
        x0 = promote(x0, cfg.order)
    if mode is None:
        mode = classify_trigger(x0.spectrum("i_dpp"), p.lim)
    for _ in range(4):
        rep = newton_solve(lambda v: assemble_residuals(v, p, mode), x0, cfg, scales=x0.layout.scales(p))
        if not rep.converged:
            rep.mode = mode
            return rep
        new = classify_trigger(rep.solution.spectrum("i_dpp"), p.lim)
        if new is mode:
            rep.solution = normalize_gauge(rep.solution)
            rep.mode = mode
            return rep
        mode, x0 = new, rep.solution
        if not mode.triggered:
            break
    rep.mode = mode
    rep.converged = False
    rep.message = "trigger mode did not settle"
    return rep


def _polish(rep: SolveReport, p: SystemParams, cfg: SolveConfig) -> SolveReport:
    """Push a converged solution further down (the controller constraints are checked in raw units)."""
    if not rep.converged or cfg.polish_iter < 1:
        return rep
    x, mode = rep.solution, rep.mode
    pol = newton_solve(lambda v: assemble_residuals(v, p, mode), x, replace(cfg, tol=cfg.polish_tol),
                       scales=x.layout.scales(p), max_iter=cfg.polish_iter)
    if pol.residual_norm < rep.residual_norm:
        rep.solution = normalize_gauge(pol.solution)
        rep.residual_norm = pol.residual_norm
        rep.iterations += pol.iterations
    return rep


def solve_so(p: SystemParams, cfg: SolveConfig = SolveConfig(), seed: UnknownVector | None = None) -> SolveReport:
    """Sustained-oscillation solve: limiter-free first, limiter-active if the limit is hit.

    Without a seed the staged initialization runs at ``p``; if it finds no
    SO (the limiter may be what shapes the oscillation) the staged search is
    repeated at reduced L_g and the result used as the limiter-active seed.
    """
    t0 = time.perf_counter()
    trace: list = []
    if seed is not None:
        x = seed if seed.order == cfg.order else promote(seed, cfg.order)
        if x.layout.limiter_active:
            rep = _polish(solve_limited(p, x, cfg), p, cfg)
            rep.trace = [{"stage": "seeded-limiter"}] + rep.trace
            rep.runtime = time.perf_counter() - t0
            return rep
        rep = newton_solve(lambda v: assemble_residuals(v, p), x, cfg, scales=x.layout.scales(p))
        trace.append({"stage": "seeded", "iterations": rep.iterations})
        free = rep.solution if rep.converged else x
    else:
        try:
            free, tr = staged_initialization(p, cfg)
            trace += tr
        except NoSOError as exc:
            return _fallback(p, cfg, trace, exc, t0)
    if cfg.order == 0:
        rep = SolveReport(True, 0, float(np.max(np.abs(assemble_residuals(free, p)))), free, trace=trace)
        rep.runtime = time.perf_counter() - t0
        return rep
    rep = newton_solve(lambda v: assemble_residuals(v, p), free, cfg, scales=free.layout.scales(p))
    rep.solution = normalize_gauge(rep.solution)
    mode = classify_trigger(evaluate(rep.solution, p).i_dpp, p.lim) if rep.converged else TriggerMode.NONE
    trace.append({"stage": "limiter-free", "converged": rep.converged, "iterations": rep.iterations,
                  "trigger": mode.value})
    if rep.converged and mode.triggered:
        rep = solve_limited(p, rep.solution, cfg, mode)
        trace.append({"stage": "limiter-active", "converged": rep.converged,
                      "iterations": rep.iterations, "trigger": rep.mode.value})
    rep = _polish(rep, p, cfg)
    rep.trace = trace
    rep.runtime = time.perf_counter() - t0
    return rep


def _fallback(p: SystemParams, cfg: SolveConfig, trace: list, exc: Exception, t0: float) -> SolveReport:
    """No limiter-free SO at ``p``: seed the limiter-active solve from reduced-L_g SOs.

    L_g is lowered in steps until the staged search finds an SO, whose
    spectra then seed the limiter-active system at the true parameters.
    """
    last = None
    for frac in FALLBACK_LG:
        q = p.with_(L_g=p.L_g * frac)
        try:
            x, _ = staged_initialization(q, cfg)
        except (NoSOError, SolverError, ModelError):
            continue
        x = UnknownVector(x.layout, x.values, p.f_1, p.im_uga)
        rep = solve_limited(p, x, cfg)
        trace.append({"stage": "fallback", "L_g": q.L_g, "seed_f_s": x.fs, "converged": rep.converged,
                      "trigger": rep.mode.value})
        last = rep
        if rep.converged and rep.mode.triggered:
            rep = _polish(rep, p, cfg)
            rep.trace = trace
            rep.runtime = time.perf_counter() - t0
            return rep
    if last is None:
        raise NoSOError(f"{exc}; reduced-L_g fallback found no seed either")
    last.trace = trace
    last.converged = False
    last.message = f"{exc}; limiter-active solve from reduced-L_g seeds did not converge"
    last.runtime = time.perf_counter() - t0
    return last


#: L_g reduction factors tried, in order, when no limiter-free SO exists
FALLBACK_LG = (0.9, 0.8, 0.67, 0.6)
