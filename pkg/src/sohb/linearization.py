"""Multiharmonic linearization about a periodic steady state.

A small perturbation at ``f_p`` couples to every frequency ``f_p - f1 +
k*f1 + n*fs`` of the padded grid.  Each nonlinear block of the control
diagram becomes a Toeplitz operator of a steady-state spectrum, each linear
block a diagonal of transfer-function values on the shifted grid.  The
blocks are stacked into one sparse-structured linear system whose solution
gives the loop admittance seen by a series voltage injected at the grid
source.  Zeros of the loop impedance are closed-loop modes; they are located
with the logarithmic derivative of the response.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .model import IntermediateSet, SystemParams, UnknownVector, evaluate
from .spectra import toeplitz_matrix, toeplitz_product

__all__ = ["FrequencyResponse", "Mode", "LinearizationError", "LoopModel", "build_loop_response",
           "log_derivative", "identify_modes", "refine_mode", "conventional_mode", "default_grid",
           "response_peaks", "outside_bands", "refined_response"]


class LinearizationError(ValueError):
    pass


@dataclass
class FrequencyResponse:
    f: np.ndarray
    value: np.ndarray
    quantity: str = "Z_loop"
    skipped: list = field(default_factory=list)

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        self.value = np.asarray(self.value, dtype=complex)
        if self.f.shape != self.value.shape or self.f.ndim != 1:
            raise ValueError("frequency and value arrays must be 1-D of equal length")
        if np.any(np.diff(self.f) <= 0):
            raise ValueError("frequencies must be strictly increasing")
        if np.any(~np.isfinite(self.value)):
            raise ValueError("response contains non-finite samples")

    def __len__(self):
        return self.f.size

    def scaled(self, c: complex) -> "FrequencyResponse":
        return FrequencyResponse(self.f, self.value * c, self.quantity)

    def inverted(self, quantity: str | None = None) -> "FrequencyResponse":
        return FrequencyResponse(self.f, 1.0 / self.value, quantity or self.quantity)


@dataclass(frozen=True)
class Mode:
    """Zero or pole ``lambda = alpha + j*omega``; positive damping iff alpha < 0."""

    alpha: float
    omega: float
    kind: str = "zero"
    confidence: str = "high"

    @property
    def f(self) -> float:
        return self.omega / (2 * math.pi)

    @property
    def positive_damping(self) -> bool:
        return self.alpha < 0

    def as_dict(self) -> dict:
        return {"kind": self.kind, "f_Hz": self.f, "alpha": self.alpha, "confidence": self.confidence,
                "damping": "positive" if self.positive_damping else "negative"}


def default_grid(lo: float = -50.0, hi: float = 150.0, step: float = 0.25) -> np.ndarray:
    n = int(round((hi - lo) / step))
    return lo + step * np.arange(n + 1)


# --------------------------------------------------------------------------
# loop model

class LoopModel:
    """Linearized VSC system about a limiter-free steady state.

    Perturbation unknowns (each on the padded grid): i_a, u_ga, m_a (AC
    type, k = +-1 blocks), u_dc, theta0, m_d, m_q (DC type, k = 0 block).
    """

    AC = ("i", "ug", "m")
    DC = ("udc", "th", "md", "mq")

    def __init__(self, x: UnknownVector, p: SystemParams, ims: IntermediateSet | None = None):
        if x.layout.limiter_active:
            raise LinearizationError("linearization of the triggered hard limit is not supported")
        self.x, self.p = x, p
        ims = ims or evaluate(x, p)
        self.ims = ims
        N = x.order
        self.N, self.W = N, 4 * N + 1
        T = toeplitz_matrix
        c, s = ims.cos_t, ims.sin_t
        self.T = {
            "m": T(ims.m_a), "udc": T(ims.u_dc), "i": T(ims.i_a),
            "cos": T(c), "sin": T(s),
            "i_sin": T(toeplitz_product(ims.i_a, s)), "i_cos": T(toeplitz_product(ims.i_a, c)),
            "ug_sin": T(toeplitz_product(ims.u_ga, s)), "ug_cos": T(toeplitz_product(ims.u_ga, c)),
            "md_sin": T(toeplitz_product(ims.m_d, s)), "mq_cos": T(toeplitz_product(ims.m_q, c)),
        }
        # active slots: AC variables live in k = +-1, DC variables in k = 0
        W = self.W
        ac = np.zeros(3 * W, bool)
        ac[:W] = ac[2 * W:] = True
        self.sel = {"AC": np.flatnonzero(ac), "DC": np.flatnonzero(~ac)}
        names = self.AC + self.DC
        self.offsets = {}
        off = 0
        for nm in names:
            self.offsets[nm] = off
            off += self.sel["AC" if nm in self.AC else "DC"].size
        self.size = off
        self.n_slot = 2 * W + 2 * N  # (k=1, n=0) in the flattened grid

    def _kind(self, nm):
        return "AC" if nm in self.AC else "DC"

    def grid_s(self, s: complex) -> np.ndarray:
        """Laplace variable at each flattened slot for perturbation ``f_p = s/(j 2 pi)``."""
        N, p = self.N, self.p
        k = np.repeat([-1, 0, 1], self.W)
        n = np.tile(np.arange(-2 * N, 2 * N + 1), 3)
        return s + 2j * math.pi * ((k - 1) * p.f_1 + n * self.x.fs)

    def matrix(self, s: complex) -> np.ndarray:
        """System matrix A(s) with A(s) @ dz = b for a unit injection."""
        p, Tm = self.p, self.T
        sg = self.grid_s(s)
        A = np.zeros((self.size, self.size), dtype=complex)
        eq_rows = {nm: self.offsets[nm] for nm in self.AC + self.DC}
        scale = p.u_dc_ref / p.k_pwm

        def put(row_name, col_name, M):
            ri = self.sel[self._kind(row_name)]
            ci = self.sel[self._kind(col_name)]
            r0, c0 = eq_rows[row_name], self.offsets[col_name]
            A[r0:r0 + ri.size, c0:c0 + ci.size] += M[np.ix_(ri, ci)]

        def diag(v):
            return np.diag(v)

        Z = np.eye(3 * self.W)
        # controllers act on DC-type slots only; AC slots get a dummy s
        sd = sg.copy()
        sd[self.sel["AC"]] = 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            pi_cc = p.kp_cc + p.ki_cc / sd
            pi_dc = p.kp_dc + p.ki_dc / sd
            g_pll = (p.kp_pll + p.ki_pll / sd) / sd
        if not (np.all(np.isfinite(pi_cc)) and np.all(np.isfinite(g_pll))):
            raise LinearizationError("perturbation grid hits a controller pole")
        # row "i": grid branch, u_ga - sL_g i = dv
        put("i", "ug", Z)
        put("i", "i", -diag(sg * p.L_g))
        # row "ug": converter branch, e_a - u_ga - sL_f i = 0
        put("ug", "udc", 0.5 * Tm["m"])
        put("ug", "m", 0.5 * Tm["udc"])
        put("ug", "ug", -Z)
        put("ug", "i", -diag(sg * p.L_f))
        # row "udc": DC link, 1.5 (m i) + sC u_dc = 0
        put("udc", "i", 1.5 * Tm["m"])
        put("udc", "m", 1.5 * Tm["i"])
        put("udc", "udc", diag(sg * p.C_dc))
        # row "th": PLL, theta0 = G_pll u_gq, u_gq = -2 sin ug - 2 (ug cos) theta
        G = diag(g_pll)
        put("th", "th", Z + G @ (2 * Tm["ug_cos"]))
        put("th", "ug", G @ (2 * Tm["sin"]))
        # row "md": scale m_d = PI_cc (PI_dc u_dc - i_d), i_d = 2 cos i - 2 (i sin) theta
        P = diag(pi_cc)
        put("md", "md", scale * Z)
        put("md", "udc", -P @ diag(pi_dc))
        put("md", "i", P @ (2 * Tm["cos"]))
        put("md", "th", -P @ (2 * Tm["i_sin"]))
        # row "mq": scale m_q = -PI_cc i_q, i_q = -2 sin i - 2 (i cos) theta
        put("mq", "mq", scale * Z)
        put("mq", "i", -P @ (2 * Tm["sin"]))
        put("mq", "th", -P @ (2 * Tm["i_cos"]))
        # row "m": inverse Park, m = cos m_d - sin m_q - (m_d sin + m_q cos) theta
        put("m", "m", Z)
        put("m", "md", -Tm["cos"])
        put("m", "mq", Tm["sin"])
        put("m", "th", Tm["md_sin"] + Tm["mq_cos"])
        return A

    def injection_index(self) -> int:
        ac = self.sel["AC"]
        return self.offsets["i"] + int(np.flatnonzero(ac == self.n_slot)[0])

    def admittance(self, s: complex) -> complex:
        """i_a at f_p per unit series voltage injected at f_p."""
        A = self.matrix(s)
        b = np.zeros(self.size, dtype=complex)
        idx = self.injection_index()
        b[idx] = 1.0
        z = np.linalg.solve(A, b)
        return complex(z[idx])

    def impedance(self, s: complex) -> complex:
        return 1.0 / self.admittance(s)


def build_loop_response(x: UnknownVector, p: SystemParams, f_grid: Iterable[float],
                        quantity: str = "Z_loop") -> FrequencyResponse:
    """Loop impedance (or admittance with ``quantity='Y_loop'``) on a frequency grid."""
    lm = LoopModel(x, p)
    fs, vals, skipped = [], [], []
    for f in f_grid:
        try:
            y = lm.admittance(2j * math.pi * f)
        except (np.linalg.LinAlgError, LinearizationError):
            skipped.append(float(f))
            continue
        v = y if quantity == "Y_loop" else (1.0 / y if y != 0 else np.nan)
        if not np.isfinite(v):
            skipped.append(float(f))
            continue
        fs.append(float(f))
        vals.append(v)
    return FrequencyResponse(np.array(fs), np.array(vals), quantity, skipped)


def response_peaks(fr: FrequencyResponse, prominence_db: float = 3.0, halfwidth: float = 2.0) -> list[float]:
    """Frequencies of resonant features: local extrema of |G| in dB (peaks or notches)
    standing out by ``prominence_db`` from both edges of a +-``halfwidth`` Hz neighbourhood."""
    db = 20 * np.log10(np.abs(fr.value))
    out = []
    for i in range(1, len(fr) - 1):
        up = db[i] > db[i - 1] and db[i] >= db[i + 1]
        down = db[i] < db[i - 1] and db[i] <= db[i + 1]
        if not (up or down):
            continue
        lo = int(np.searchsorted(fr.f, fr.f[i] - halfwidth))
        hi = int(np.searchsorted(fr.f, fr.f[i] + halfwidth, side="right")) - 1
        edge = np.array([db[lo], db[hi]])
        rise = (db[i] - edge) if up else (edge - db[i])
        if np.min(rise) >= prominence_db:
            out.append(float(fr.f[i]))
    return out


def outside_bands(f: np.ndarray, centers: Sequence[float], halfwidth: float = 2.0) -> np.ndarray:
    """Mask of frequencies farther than ``halfwidth`` from every band centre."""
    f = np.asarray(f, dtype=float)
    mask = np.ones(f.shape, bool)
    for c in centers:
        mask &= np.abs(f - c) > halfwidth
    return mask


def refined_response(x: UnknownVector, p: SystemParams, grid: np.ndarray | None = None, factor: int = 10,
                     halfwidth: float = 2.0, quantity: str = "Z_loop") -> FrequencyResponse:
    """Response on ``grid`` plus a ``factor``-times finer grid within +-``halfwidth`` Hz
    of every resonant feature and every Im[D_L] extremum of the coarse pass."""
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    coarse = build_loop_response(x, p, grid, quantity)
    step = float(np.min(np.diff(grid))) / factor
    centers = set(response_peaks(coarse))
    dl = log_derivative(coarse).value.imag
    a = np.abs(dl)
    thr = 3 * float(np.median(a))
    for i in range(1, a.size - 1):
        if a[i] > a[i - 1] and a[i] >= a[i + 1] and a[i] > thr:
            centers.add(float(coarse.f[i]))
    fine = [grid]
    for c in sorted(centers):
        fine.append(np.round(c + step * np.arange(-round(halfwidth / step), round(halfwidth / step) + 1), 9))
    f_all = np.unique(np.concatenate(fine))
    f_all = f_all[(f_all >= grid[0]) & (f_all <= grid[-1])]
    return build_loop_response(x, p, f_all, quantity)


# --------------------------------------------------------------------------
# logarithmic derivative and mode identification

def log_derivative(fr: FrequencyResponse) -> FrequencyResponse:
    """D_L = (dG/d omega)/G by central differences (one-sided at the ends)."""
    if len(fr) < 3:
        raise ValueError("at least three samples are needed")
    if np.any(fr.value == 0):
        raise ZeroDivisionError("response has a zero-magnitude sample")
    w = 2 * math.pi * fr.f
    dG = np.gradient(fr.value, w)
    return FrequencyResponse(fr.f, dG / fr.value, "D_L(" + fr.quantity + ")")


def _closed_form(alpha: float, w0: float, w: np.ndarray) -> np.ndarray:
    """D_L of a single zero factor (j w - alpha - j w0): 1j/(j(w-w0) - alpha)."""
    return 1j / (1j * (w - w0) - alpha)


def identify_modes(dl: FrequencyResponse, fine: Optional[callable] = None, min_strength: float = 0.02) -> list[Mode]:
    """Zeros and poles from the logarithmic derivative.

    A zero at ``alpha + j w0`` contributes ``j/(j(w-w0) - alpha)`` to D_L:
    Re crosses zero at w0 (slope ``1/alpha^2`` up for a zero, down for a
    pole) and Im peaks at ``-1/alpha`` (zero) or ``+1/alpha`` (pole).
    ``fine(f_lo, f_hi, step)`` may supply D_L sampled every ``step`` Hz over
    a sub-interval; it is called around each feature with a step matched to
    the coarse damping estimate.
    """
    modes = _crossings(dl, min_strength, strict=True)
    if fine is None:
        return modes
    df = float(np.median(np.diff(dl.f)))
    w = 2 * math.pi * dl.f
    modes = _confirmed(modes, [], fine, df, min_strength)
    for _ in range(3):
        # D_L is a sum over features: each window is refined with the others' closed forms removed,
        # sweeping until overlapping features stop pulling on each other
        for _ in range(8):
            moved = 0.0
            for k in range(len(modes)):
                r = _refine_locally(modes[k], fine, df, min_strength, modes[:k] + modes[k + 1:])
                if r is not None:
                    moved = max(moved, abs(complex(r.alpha - modes[k].alpha, r.omega - modes[k].omega))
                                / abs(r.alpha))
                    modes[k] = r
            if moved < 1e-4:
                break
        # peel the refined features off the coarse D_L; broad features masked by sharp ones surface
        rest = dl.value - sum((_sign(m) * _closed_form(m.alpha, m.omega, w) for m in modes), 0 * w)
        cands = [c for c in _crossings(FrequencyResponse(dl.f, rest, dl.quantity), min_strength, strict=True)
                 if not any(_overlaps(c, m, df) for m in modes)]
        new = _confirmed(cands, modes, fine, df, min_strength)
        if not new:
            break
        modes = modes + new
    rest = dl.value - sum((_sign(m) * _closed_form(m.alpha, m.omega, w) for m in modes), 0 * w)
    extra = _im_peaks(FrequencyResponse(dl.f, rest, dl.quantity), modes, df, min_strength)
    return sorted(_joint_fit(modes, extra, fine, df, min_strength), key=lambda m: m.omega)


def _overlaps(a: Mode, b: Mode, df: float) -> bool:
    """True when ``a`` sits within a width (or a coarse grid step) of ``b``.

    What peeling leaves right next to a known feature is mostly the
    sampling error of that feature.
    """
    return abs(a.omega - b.omega) < max(abs(a.alpha), abs(b.alpha), 2 * math.pi * df)


def _confirmed(cands, known, fine, df, min_strength) -> list[Mode]:
    """Candidates that survive a local resampling and overlap neither each other nor ``known``.

    Features already accepted are subtracted before resampling.  An
    undersampled narrow feature makes Re[D_L] flip sign several times on the
    coarse grid; the spurious crossings find no counterpart in the fine data
    and are dropped.
    """
    out: list[Mode] = []
    for c in cands:
        r = _refine_locally(c, fine, df, min_strength, known + out)
        if r is None:
            continue
        if any(_overlaps(r, q, df) for q in known + out):
            continue
        out.append(r)
    return out


def _im_peaks(dl: FrequencyResponse, known, df: float, min_strength: float) -> list[Mode]:
    """Provisional features at maxima of |Im[D_L]| away from ``known``.

    Two broad features a couple of widths apart share a single Re crossing
    (midway, and without an Im extremum next to it) but keep separate Im
    peaks.  The kind follows from the slope of Re at the peak.
    """
    w = 2 * math.pi * dl.f
    re, im = dl.value.real, dl.value.imag
    a = np.abs(im)
    out: list[Mode] = []
    for i in range(1, len(w) - 1):
        if not (a[i] >= a[i - 1] and a[i] > a[i + 1]) or im[i] == 0:
            continue
        kind = "zero" if re[i + 1] > re[i - 1] else "pole"
        alpha = (-1.0 if kind == "zero" else 1.0) / im[i]
        m = Mode(float(alpha), float(w[i]), kind, "low")
        if abs(alpha) <= 1 / min_strength and not any(_overlaps(m, q, df) for q in known + out):
            out.append(m)
    return out


def _joint_fit(modes, extra, fine, df: float, min_strength: float) -> list[Mode]:
    """Fit each cluster of overlapping features jointly on resampled data.

    D_L near a cluster is the sum of its members' closed forms plus a smooth
    remainder (a quadratic, projected out).  Members of ``extra`` are kept
    only when leaving them out makes the fit clearly worse.
    """
    from scipy.optimize import least_squares

    allm = list(modes) + list(extra)
    tags = [False] * len(modes) + [True] * len(extra)
    out = list(allm)
    keep = [not t for t in tags]
    for cl in _clusters(allm):
        others = [allm[j] for j in range(len(allm)) if j not in cl and (keep[j] or not tags[j])]
        parts = []
        for j in cl:
            width = abs(allm[j].alpha) / (2 * math.pi)
            sub = fine(allm[j].f - 6 * width, allm[j].f + 6 * width, min(df / 10, width / 25))
            wj = 2 * math.pi * sub.f
            # each stretch is taken from the narrowest member covering it, sampled finely enough for it
            sel = np.ones(wj.size, dtype=bool)
            for q in cl:
                if abs(allm[q].alpha) < abs(allm[j].alpha):
                    sel &= np.abs(wj - allm[q].omega) >= 6 * abs(allm[q].alpha)
            parts.append((wj[sel], sub.value[sel], np.full(np.count_nonzero(sel), abs(allm[j].alpha))))
        ww = np.concatenate([q[0] for q in parts])
        vv = np.concatenate([q[1] for q in parts])
        wt = np.concatenate([q[2] for q in parts])
        vv = vv - sum((_sign(o) * _closed_form(o.alpha, o.omega, ww) for o in others), 0 * ww)
        x = (ww - ww.mean()) / max(np.ptp(ww), 1e-12)
        Q, _ = np.linalg.qr(np.vstack([np.ones_like(x), x, x * x]).T.astype(complex) * wt[:, None])

        def fit(members):
            if not members:
                r = vv * wt
                r = r - Q @ (Q.conj().T @ r)
                return [], float(np.vdot(r, r).real)
            sg = np.array([_sign(allm[j]) for j in members])

            def resid(th):
                f = (sg[:, None] * 1j / (1j * (ww[None, :] - th[0::2, None]) - th[1::2, None])).sum(axis=0)
                r = (vv - f) * wt
                r = r - Q @ (Q.conj().T @ r)
                return np.concatenate([r.real, r.imag])

            th0 = np.ravel([[allm[j].omega, allm[j].alpha] for j in members])
            sol = least_squares(resid, th0, x_scale=np.ravel([[abs(allm[j].alpha)] * 2 for j in members]),
                                xtol=1e-13, ftol=1e-13, gtol=1e-13)
            th = sol.x
            for k, j in enumerate(members):
                a0 = allm[j].alpha
                if (not np.all(np.isfinite(th)) or np.sign(th[2 * k + 1]) != np.sign(a0)
                        or abs(th[2 * k + 1]) > 1 / min_strength
                        or abs(th[2 * k] - allm[j].omega) > max(6 * abs(a0), 4 * math.pi * df)):
                    return None, math.inf
            return [Mode(float(th[2 * k + 1]), float(th[2 * k]), allm[j].kind, allm[j].confidence)
                    for k, j in enumerate(members)], 2 * float(sol.cost)

        members = list(cl)
        best, cost = fit(members)
        for j in [j for j in cl if tags[j]]:
            rest = [q for q in members if q != j]
            alt, c_alt = fit(rest)
            if best is None or c_alt <= 25 * cost:
                members, best, cost = rest, alt, c_alt
        if best is None:
            for j in cl:
                keep[j] = not tags[j]
            continue
        for j in cl:
            keep[j] = j in members
        for j, m in zip(members, best):
            out[j] = Mode(m.alpha, m.omega, m.kind, "high" if tags[j] else m.confidence)
    return [m for m, k in zip(out, keep) if k]


def _clusters(modes) -> list[list[int]]:
    """Index groups of features whose six-width windows overlap."""
    order = sorted(range(len(modes)), key=lambda j: modes[j].omega)
    groups: list[list[int]] = []
    reach = -math.inf
    for j in order:
        lo = modes[j].omega - 6 * abs(modes[j].alpha)
        if groups and lo < reach:
            groups[-1].append(j)
        else:
            groups.append([j])
            reach = -math.inf
        reach = max(reach, modes[j].omega + 6 * abs(modes[j].alpha))
    return groups


def _sign(m: Mode) -> float:
    return 1.0 if m.kind == "zero" else -1.0


def _crossings(dl: FrequencyResponse, min_strength: float, strict: bool) -> list[Mode]:
    """Fitted features at every zero crossing of Re[D_L].

    ``strict`` demands an Im[D_L] extremum within a few samples of the
    crossing, which rejects crossings between two distant features on a
    coarse grid (inside a refinement window the extremum may sit many fine
    samples away).
    """
    w = 2 * math.pi * dl.f
    re, im = dl.value.real, dl.value.imag
    modes = []
    for i in range(len(w) - 1):
        if not (re[i] == 0 or re[i] * re[i + 1] < 0):
            continue
        kind = "zero" if re[i + 1] > re[i] else "pole"
        if strict:
            lo, hi = max(i - 3, 0), min(i + 5, len(w))
            k = int(np.argmax(np.abs(im[lo:hi])))
            if k == 0 or k == hi - lo - 1:
                continue
        mode = _fit_crossing(w, dl.value, i, kind, min_strength)
        if mode is not None:
            modes.append(mode)
    return modes


def _refine_locally(mode: Mode, fine, df: float, min_strength: float, others=(), rounds: int = 4) -> Optional[Mode]:
    """Resample around ``mode`` until the step is small against its width (|alpha|/25).

    The closed-form contributions of ``others`` are subtracted from each
    resampled window first.  None when the first resampling shows no
    matching crossing.
    """
    for r in range(rounds):
        width = abs(mode.alpha) / (2 * math.pi)
        step = min(df / 10, width / 25)
        half = max(6 * width, 4 * df)
        sub = fine(mode.f - half, mode.f + half, step)
        if others:
            w = 2 * math.pi * sub.f
            bg = sum(_sign(o) * _closed_form(o.alpha, o.omega, w) for o in others)
            sub = FrequencyResponse(sub.f, sub.value - bg, sub.quantity)
        # a coarse estimate may be off by a couple of grid steps, a refined one by its width
        reach = max(abs(mode.alpha), 4 * math.pi * df) if r == 0 else abs(mode.alpha)
        m = [q for q in _crossings(sub, min_strength, strict=False)
             if q.kind == mode.kind and abs(q.omega - mode.omega) <= reach]
        if not m:
            return None if r == 0 else mode
        mode = min(m, key=lambda q: abs(q.omega - mode.omega))
        df = step
        if step <= abs(mode.alpha) / (2 * math.pi * 25):
            break
    return mode


def _fit_crossing(w, val, i, kind, min_strength):
    """Mode from the sample pair bracketing a zero crossing of Re[D_L].

    A first estimate comes from the bare closed form on a 5-point stencil
    (``1/D_L`` is linear in w for an isolated feature); it is then refined by
    fitting ``sgn*j/(j(w-w0) - alpha)`` plus a quadratic background over
    +-4|alpha| around the crossing, so neighbouring features do not pull the
    estimate.
    """
    sgn = 1.0 if kind == "zero" else -1.0
    lo, hi = max(i - 2, 0), min(i + 4, len(w))
    ww, vv = w[lo:hi], val[lo:hi]
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / (sgn * vv)
    if not np.all(np.isfinite(inv)):
        return None
    A = np.vstack([np.ones_like(ww), ww - ww.mean()]).T
    coef_r, *_ = np.linalg.lstsq(A, inv.real, rcond=None)
    coef_i, *_ = np.linalg.lstsq(A, inv.imag, rcond=None)
    slope = coef_r[1]
    w0 = ww.mean() - coef_r[0] / slope if slope != 0 else 0.5 * (w[i] + w[i + 1])
    alpha = coef_i[0] + coef_i[1] * (w0 - ww.mean())
    # value estimator: Im peak = -sgn/alpha ; slope estimator: dRe/dw = sgn/alpha^2
    re, im = val.real, val.imag
    t = -re[i] / (re[i + 1] - re[i]) if re[i + 1] != re[i] else 0.5
    im_c = im[i] + t * (im[i + 1] - im[i])
    dre = (re[i + 1] - re[i]) / (w[i + 1] - w[i])
    alpha_v = -sgn / im_c if im_c != 0 else math.inf
    alpha_s = 1 / math.sqrt(abs(dre)) if dre != 0 else math.inf
    if not math.isfinite(alpha) or alpha == 0 or abs(alpha) > 1 / min_strength:
        return None
    w0, alpha = _feature_fit(w, val, sgn, w0, alpha)
    if abs(alpha) > 1 / min_strength:
        return None
    conf = "high"
    if not (math.isfinite(alpha_v) and abs(abs(alpha_v) - abs(alpha_s)) <= 0.25 * abs(alpha_s)):
        conf = "low"
    if abs(abs(alpha) - abs(alpha_v)) > 0.25 * abs(alpha_v):
        conf = "low"
    return Mode(float(alpha), float(w0), kind, conf)


def _feature_fit(w, val, sgn, w0, alpha):
    """Least-squares (w0, alpha) of one feature over a smooth background (Gauss-Newton, variable projection)."""
    dw = float(np.median(np.diff(w)))
    half = max(4 * abs(alpha), 4 * dw)
    sel = np.abs(w - w0) <= half
    if np.count_nonzero(sel) < 7:
        return w0, alpha
    ww, vv = w[sel], val[sel]
    x = (ww - w0) / half
    B = np.vstack([np.ones_like(x), x, x * x]).T.astype(complex)
    P = np.eye(ww.size) - B @ np.linalg.pinv(B)      # projector off the background

    def resid(th):
        f = sgn * 1j / (1j * (ww - th[0]) - th[1])
        r = P @ (vv - f)
        return np.concatenate([r.real, r.imag])

    th = np.array([w0, alpha], dtype=float)
    for _ in range(30):
        r = resid(th)
        J = np.empty((r.size, 2))
        for k in range(2):
            h = 1e-7 * max(abs(th[k]), abs(alpha), 1.0)
            d = np.zeros(2)
            d[k] = h
            J[:, k] = (resid(th + d) - r) / h
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        if not np.all(np.isfinite(step)):
            return w0, alpha
        th = th + step
        if abs(th[1]) < 1e-12 or abs(th[0] - w0) > half:
            return w0, alpha
        if np.all(np.abs(step) <= 1e-10 * np.maximum(np.abs(th), 1.0)):
            break
    if np.sign(th[1]) != np.sign(alpha):
        return w0, alpha
    return float(th[0]), float(th[1])


def refine_mode(lm: "LoopModel", mode: Mode, shift: float = 0.0, tol: float = 1e-10, max_iter: int = 50) -> Mode:
    """Polish a zero of the loop impedance in the complex s-plane (secant method)."""
    z = lambda s: lm.impedance(s)  # noqa: E731
    s0 = complex(mode.alpha, mode.omega + shift)
    s1 = s0 + complex(1e-3, 1e-3)
    f0, f1 = z(s0), z(s1)
    for _ in range(max_iter):
        if f1 == f0:
            break
        s2 = s1 - f1 * (s1 - s0) / (f1 - f0)
        s0, f0 = s1, f1
        s1, f1 = s2, z(s2)
        if abs(s1 - s0) < tol * max(1.0, abs(s1)):
            break
    return Mode(s1.real, s1.imag - shift, mode.kind, mode.confidence)


def conventional_mode(p: SystemParams, eq: UnknownVector | None = None) -> Optional[Mode]:
    """Least-damped oscillatory mode of the equilibrium, in the dq (f - f1) frame.

    The equilibrium loop impedance has a zero pair at ``f1 +- f_s0``; the
    positive-sequence member above f1 is located on a coarse grid, refined
    in the complex plane, and reported with ``omega = 2 pi f_s0``.
    """
    from .model import equilibrium_solve

    eq = eq if eq is not None else equilibrium_solve(p)
    lm = LoopModel(eq, p)
    grid = p.f_1 + default_grid(0.5, 0.45 * p.f_1, 0.25)
    fr = build_loop_response(eq, p, grid)
    modes = [m for m in identify_modes(log_derivative(fr)) if m.kind == "zero"]
    # local minima of |Z| also seed the complex-plane refinement
    mag = np.abs(fr.value)
    for i in range(1, len(mag) - 1):
        if mag[i] < mag[i - 1] and mag[i] < mag[i + 1]:
            modes.append(Mode(0.0, 2 * math.pi * fr.f[i]))
    best = []
    for m in modes:
        try:
            r = refine_mode(lm, m)
        except (np.linalg.LinAlgError, LinearizationError):
            continue
        if not (math.isfinite(r.alpha) and abs(lm.impedance(complex(r.alpha, r.omega))) < 1e-6):
            continue
        if all(abs(complex(r.alpha - q.alpha, r.omega - q.omega)) > 1e-6 for q in best):
            best.append(r)
    if not best:
        return None
    top = max(best, key=lambda m: m.alpha)
    return Mode(top.alpha, top.omega - 2 * math.pi * p.f_1, "zero", top.confidence)
