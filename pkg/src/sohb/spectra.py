"""Two-tone harmonic spectra and their algebra.

A periodic signal of the converter system is represented by its complex
Fourier coefficients at ``k*f1 + n*fs`` with ``k`` in ``{-1, 0, 1}`` and
``n`` in ``{-N..N}``.  Each k-block is stored with ``N`` guard slots on
either side (``4N+1`` slots per block) so that products of two order-N
spectra fit on the padded grid without loss.

Coefficients are two-sided: a component at ``f > 0`` contributes
``2*|g<f>|*cos(2*pi*f*t + arg g<f>)`` to the time signal.

DC-type signals (dq quantities, DC voltage, PLL angle) live in the k=0
block; AC-type signals (phase quantities) live in the k=+-1 blocks.  A
product of two AC signals keeps only its k=0 block, which is exact for the
balanced three-phase (generalized sequence) signals modelled here.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.signal import convolve2d

__all__ = [
    "Kind",
    "Spectrum",
    "PolarCoeff",
    "TruncationError",
    "make_spectrum",
    "zeros",
    "toeplitz_product",
    "toeplitz_matrix",
    "apply_derivative_gain",
    "apply_pi_gain",
    "grid_frequencies",
    "ATOL",
]

#: default absolute tolerance for coefficient comparisons
ATOL = 1e-9


class Kind(enum.Enum):
    DC = "DC"
    AC = "AC"


class TruncationError(ValueError):
    """Raised when a product spills more than the permitted energy off-grid."""


@dataclass(frozen=True)
class PolarCoeff:
    """Magnitude/angle pair with the angle wrapped to (-pi, pi]."""

    M: float
    A: float

    def __post_init__(self):
        if self.M < 0:
            raise ValueError("magnitude must be nonnegative")

    @classmethod
    def from_complex(cls, z: complex) -> "PolarCoeff":
        return cls(abs(z), wrap_angle(math.atan2(z.imag, z.real)))

    def to_complex(self) -> complex:
        return self.M * complex(math.cos(self.A), math.sin(self.A))


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(a, 2.0 * math.pi)
    if w <= -math.pi:
        w += 2.0 * math.pi
    return w


def _width(order: int) -> int:
    return 4 * order + 1


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Padded two-tone coefficient array.

    ``data[k+1, n+2N]`` holds ``g<k*f1 + n*fs>``.  Live slots are
    ``|n| <= N``; the guard slots ``N < |n| <= 2N`` are zero on spectra built
    with :func:`make_spectrum` and may carry product content afterwards.
    ``spill`` records the energy a product dropped beyond the padded grid.
    """

    kind: Kind
    order: int
    f1: float
    fs: float
    data: np.ndarray
    spill: float = field(default=0.0)

    def __post_init__(self):
        shape = (3, _width(self.order))
        if self.data.shape != shape:
            raise ValueError(f"coefficient array must have shape {shape}, got {self.data.shape}")
        arr = np.array(self.data, dtype=complex)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    # -- indexing -----------------------------------------------------------
    def __getitem__(self, kn: tuple[int, int]) -> complex:
        k, n = kn
        if abs(k) > 1 or abs(n) > 2 * self.order:
            return 0j
        return complex(self.data[k + 1, n + 2 * self.order])

    def polar(self, k: int, n: int) -> PolarCoeff:
        return PolarCoeff.from_complex(self[k, n])

    def freq(self, k: int, n: int) -> float:
        return k * self.f1 + n * self.fs

    @property
    def guard(self) -> np.ndarray:
        N = self.order
        return np.concatenate([self.data[:, :N], self.data[:, 3 * N + 1:]], axis=1)

    def live(self) -> "Spectrum":
        """Copy with guard slots zeroed."""
        N = self.order
        d = np.zeros_like(self.data)
        d[:, N:3 * N + 1] = self.data[:, N:3 * N + 1]
        return Spectrum(self.kind, N, self.f1, self.fs, d)

    def with_data(self, data: np.ndarray, kind: Kind | None = None, spill: float = 0.0) -> "Spectrum":
        if data.shape != self.data.shape:
            raise ValueError(f"coefficient array must have shape {self.data.shape}, got {data.shape}")
        return _raw(kind or self.kind, self.order, self.f1, self.fs, np.asarray(data, dtype=complex), spill)

    # -- arithmetic on compatible grids --------------------------------------
    def _check(self, other: "Spectrum"):
        if (self.order, self.f1, self.fs) != (other.order, other.f1, other.fs):
            raise ValueError("spectra live on incompatible grids")

    def __add__(self, other: "Spectrum") -> "Spectrum":
        self._check(other)
        if self.kind is not other.kind:
            raise ValueError("cannot add DC-type and AC-type spectra")
        return self.with_data(self.data + other.data, spill=self.spill + other.spill)

    def __sub__(self, other: "Spectrum") -> "Spectrum":
        return self + (-other)

    def __neg__(self) -> "Spectrum":
        return self.with_data(-self.data, spill=self.spill)

    def __mul__(self, c: complex) -> "Spectrum":
        if isinstance(c, Spectrum):
            return toeplitz_product(self, c)
        return self.with_data(self.data * c, spill=self.spill)

    __rmul__ = __mul__

    def allclose(self, other: "Spectrum", atol: float = ATOL) -> bool:
        self._check(other)
        return bool(np.allclose(self.data, other.data, rtol=0.0, atol=atol))

    def is_conjugate_symmetric(self, atol: float = ATOL) -> bool:
        return bool(np.allclose(self.data, np.conj(self.data[::-1, ::-1]), rtol=0.0, atol=atol))

    # -- time domain --------------------------------------------------------
    def evaluate(self, t) -> np.ndarray:
        """Reconstruct the (phase-a) time signal at times ``t``."""
        t = np.asarray(t, dtype=float)
        N = self.order
        out = np.zeros(t.shape, dtype=complex)
        for ki, k in enumerate((-1, 0, 1)):
            for j in range(_width(N)):
                c = self.data[ki, j]
                if c != 0:
                    out += c * np.exp(2j * np.pi * (k * self.f1 + (j - 2 * N) * self.fs) * t)
        return out.real

    def rows(self, live_only: bool = True):
        """Yield ``(k, n, f, coeff)`` for each stored slot of the kind's blocks."""
        N = self.order
        ks = (0,) if self.kind is Kind.DC else (-1, 1)
        lim = N if live_only else 2 * N
        for k in ks:
            for n in range(-lim, lim + 1):
                yield k, n, self.freq(k, n), self[k, n]


def _raw(kind: Kind, order: int, f1: float, fs: float, data: np.ndarray, spill: float = 0.0) -> Spectrum:
    """Trusted constructor for internal results (shape already checked, array owned)."""
    out = object.__new__(Spectrum)
    data.setflags(write=False)
    for k, v in (("kind", kind), ("order", order), ("f1", f1), ("fs", fs), ("data", data), ("spill", spill)):
        object.__setattr__(out, k, v)
    return out


def grid_frequencies(order: int, f1: float, fs: float, shift: float = 0.0) -> np.ndarray:
    """Frequencies of the padded grid as a (3, 4N+1) array, offset by ``shift``."""
    k = np.array([-1, 0, 1])[:, None]
    n = np.arange(-2 * order, 2 * order + 1)[None, :]
    return shift + k * f1 + n * fs


def zeros(kind: Kind, order: int, f1: float, fs: float) -> Spectrum:
    return Spectrum(kind, order, f1, fs, np.zeros((3, _width(order)), dtype=complex))


def make_spectrum(kind: Kind, order: int, f1: float, fs: float,
                  coeffs: Mapping[tuple[int, int], complex] | Iterable = ()) -> Spectrum:
    """Build a conjugate-symmetric spectrum from ``{(k, n): value}`` entries.

    Entries are given for one of each conjugate pair; the mirrored slot is
    filled automatically.  If both members of a pair are given they must be
    conjugates of each other.
    """
    if order < 0:
        raise ValueError("order must be nonnegative")
    items = coeffs.items() if isinstance(coeffs, Mapping) else coeffs
    data = np.zeros((3, _width(order)), dtype=complex)
    seen: dict[tuple[int, int], complex] = {}
    for (k, n), v in items:
        k, n, v = int(k), int(n), complex(v)
        if abs(k) > 1 or abs(n) > order:
            raise ValueError(f"slot (k={k}, n={n}) is off the order-{order} grid")
        if kind is Kind.DC and k != 0 and v != 0:
            raise ValueError("DC-type spectrum cannot carry k=+-1 content")
        if kind is Kind.AC and k == 0 and v != 0:
            raise ValueError("AC-type spectrum cannot carry k=0 content")
        if k == 0 and n == 0 and abs(v.imag) > 0:
            raise ValueError("zero-frequency coefficient must be real")
        mirror = (-k, -n)
        if mirror in seen and abs(seen[mirror] - v.conjugate()) > ATOL * max(1.0, abs(v)):
            raise ValueError(f"entries at {(k, n)} and {mirror} are not conjugates")
        seen[(k, n)] = v
        data[k + 1, n + 2 * order] = v
        data[-k + 1, -n + 2 * order] = v.conjugate()
    return Spectrum(kind, order, f1, fs, data)


def _product_kind(a: Kind, b: Kind) -> Kind:
    if a is Kind.DC and b is Kind.DC:
        return Kind.DC
    if a is Kind.AC and b is Kind.AC:
        return Kind.DC
    return Kind.AC


def toeplitz_product(a: Spectrum, b: Spectrum, max_spill: float | None = None) -> Spectrum:
    """Spectrum of the pointwise product ``a(t)*b(t)`` on the padded grid.

    Content landing at ``|n| > 2N`` is dropped and its energy recorded in
    ``spill`` (relative to the total energy of the exact product).  For AC*AC
    products the k=+-2 blocks are discarded; they cancel across the three
    phases.
    """
    a._check(b)
    N = a.order
    full = convolve2d(a.data, b.data)  # k in -2..2, n in -4N..4N
    kind = _product_kind(a.kind, b.kind)
    kept = full[1:4, 2 * N:6 * N + 1]
    out_n = np.concatenate([full[1:4, :2 * N], full[1:4, 6 * N + 1:]], axis=1)
    mid = full[1:4].ravel()
    total = float(np.vdot(mid, mid).real)
    lost = float(np.vdot(out_n, out_n).real)
    spill = lost / total if total > 0 else 0.0
    if max_spill is not None and spill > max_spill:
        raise TruncationError(f"product spilled {spill:.3g} of its energy off the grid")
    return _raw(kind, N, a.f1, a.fs, np.ascontiguousarray(kept), spill + a.spill + b.spill)


def toeplitz_matrix(g: Spectrum) -> np.ndarray:
    """Matrix T(g) with ``T(g) @ h.data.ravel() == toeplitz_product(g, h).data.ravel()``.

    The matrix acts on the flattened padded grid (block-major); it is the
    same for perturbation vectors living on a frequency-shifted grid.
    """
    N = g.order
    W = _width(N)
    T = np.zeros((3 * W, 3 * W), dtype=complex)
    for ko in range(3):
        for ki in range(3):
            dk = ko - ki
            if abs(dk) > 1:
                continue
            blk = np.zeros((W, W), dtype=complex)
            col = g.data[dk + 1]
            for d in range(-2 * N, 2 * N + 1):
                c = col[d + 2 * N]
                if c != 0:
                    blk += c * np.eye(W, k=-d)
            T[ko * W:(ko + 1) * W, ki * W:(ki + 1) * W] = blk
    return T


def apply_derivative_gain(g: Spectrum) -> Spectrum:
    """Multiply every coefficient by ``j*2*pi*f`` (time derivative)."""
    w = 2j * np.pi * grid_frequencies(g.order, g.f1, g.fs)
    return g.with_data(g.data * w, spill=g.spill)


def apply_pi_gain(g: Spectrum, kp: float, ki: float) -> tuple[Spectrum, bool]:
    """Apply ``kp + ki/(j*2*pi*f)`` off zero frequency.

    The zero-frequency slot of the output is left at 0.  The returned flag is
    True when the input carried zero-frequency content whose image is
    undefined (an integrator fed a constant); the caller must close that row
    with an explicit steady-state constraint instead.
    """
    f = grid_frequencies(g.order, g.f1, g.fs)
    nz = f != 0
    gain = np.zeros_like(g.data)
    gain[nz] = kp + ki / (2j * np.pi * f[nz])
    N = g.order
    undefined = bool(g.data[1, 2 * N] != 0)
    return g.with_data(g.data * gain, spill=g.spill), undefined
