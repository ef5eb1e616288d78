"""Spectra of cos(theta) and sin(theta) for a rippling PLL angle.

The PLL angle is ``theta(t) = w1*t + theta0(t)`` where the DC-type deviation

    theta0(t) = T0 + 2*M1*cos(ws*t + A1) + 2*M2*cos(2*ws*t + A2)

carries ripple at the first two oscillation orders only.  Each ripple term
is turned into cos/sin factors with the Jacobi-Anger expansion and the
factors are combined with the angle-addition formulas, one Toeplitz product
at a time.
"""

from __future__ import annotations

import math

import numpy as np

from .spectra import Kind, Spectrum, make_spectrum, toeplitz_product, zeros

__all__ = ["bessel_j", "ripple_trig_factors", "theta_trig_spectra", "BESSEL_DOMAIN"]

#: largest |x| accepted by :func:`bessel_j`
BESSEL_DOMAIN = 2.0


def bessel_j(n: int, x: float) -> float:
    """Bessel function of the first kind J_n(x) by its ascending series.

    Restricted to ``|x| <= 2``, where 30 terms are far more than enough for
    double precision.
    """
    if n < 0 or int(n) != n:
        raise ValueError("order must be a nonnegative integer")
    if abs(x) > BESSEL_DOMAIN:
        raise ValueError(f"argument {x} outside the validity domain |x| <= {BESSEL_DOMAIN}")
    half = 0.5 * x
    term = half ** n / math.factorial(n)
    total = term
    q = -half * half
    for m in range(1, 30):
        term *= q / (m * (m + n))
        total += term
        if abs(term) < 1e-18 * max(abs(total), 1e-300):
            break
    return total


def ripple_trig_factors(theta0: Spectrum, n: int, terms: int = 2) -> tuple[Spectrum, Spectrum]:
    """Spectra of ``cos(r(t))`` and ``sin(r(t))`` for ``r(t) = 2*M*cos(n*ws*t + A)``.

    ``M`` and ``A`` are read from the order-n coefficient of ``theta0``.
    Bessel terms up to ``J_terms`` are kept (the default keeps J0, J1, J2).
    Harmonics that fall off the padded grid are dropped.
    """
    if theta0.kind is not Kind.DC:
        raise ValueError("theta0 must be a DC-type spectrum")
    N = theta0.order
    if not 1 <= n <= max(N, 1):
        raise ValueError(f"sideband index {n} outside 1..{N}")
    c = theta0[0, n]
    M = abs(c)
    A = math.atan2(c.imag, c.real)
    z = 2.0 * M
    if z > BESSEL_DOMAIN:
        raise ValueError(f"ripple magnitude {M} outside the expansion's validity domain")
    lim = 2 * N
    cos_c: dict[tuple[int, int], complex] = {(0, 0): bessel_j(0, z)}
    sin_c: dict[tuple[int, int], complex] = {}
    for m in range(1, terms + 1):
        slot = m * n
        if slot > lim:
            break
        # cos(z cos p) = J0 + 2 sum (-1)^q J2q cos(2qp); sin(z cos p) = 2 sum (-1)^q J(2q+1) cos((2q+1)p)
        val = bessel_j(m, z) * complex(math.cos(m * A), math.sin(m * A))
        if m % 2 == 0:
            cos_c[(0, slot)] = (-1) ** (m // 2) * val
        else:
            sin_c[(0, slot)] = (-1) ** ((m - 1) // 2) * val
    cf = _padded(theta0, cos_c)
    sf = _padded(theta0, sin_c)
    return cf, sf


def _padded(like: Spectrum, entries: dict) -> Spectrum:
    N = like.order
    data = np.zeros((3, 4 * N + 1), dtype=complex)
    for (k, n), v in entries.items():
        data[1, n + 2 * N] = v
        data[1, -n + 2 * N] = np.conj(v)
    return Spectrum(Kind.DC, N, like.f1, like.fs, data)


def theta_trig_spectra(theta0: Spectrum, terms: int = 2) -> tuple[Spectrum, Spectrum]:
    """AC-type spectra of ``cos(w1*t + theta0(t))`` and ``sin(w1*t + theta0(t))``."""
    if theta0.kind is not Kind.DC:
        raise ValueError("theta0 must be a DC-type spectrum")
    N = theta0.order
    for n in range(3, 2 * N + 1):
        if theta0[0, n] != 0:
            raise ValueError("ripple of theta0 above order 2 is not supported")
    T0 = theta0[0, 0].real
    f1, fs = theta0.f1, theta0.fs
    rot = complex(math.cos(T0), math.sin(T0))
    c1 = make_spectrum(Kind.AC, N, f1, fs, {(1, 0): rot / 2})
    s1 = make_spectrum(Kind.AC, N, f1, fs, {(1, 0): rot / 2j})

    one = make_spectrum(Kind.DC, N, f1, fs, {(0, 0): 1.0})
    nil = zeros(Kind.DC, N, f1, fs)
    cs, ss = ripple_trig_factors(theta0, 1, terms) if N >= 1 else (one, nil)
    c2, s2 = ripple_trig_factors(theta0, 2, terms) if N >= 2 else (one, nil)

    # cos(a+b), sin(a+b) for the two ripple terms
    cab = toeplitz_product(cs, c2) - toeplitz_product(ss, s2)
    sab = toeplitz_product(ss, c2) + toeplitz_product(cs, s2)
    cos_t = toeplitz_product(c1, cab) - toeplitz_product(s1, sab)
    sin_t = toeplitz_product(s1, cab) + toeplitz_product(c1, sab)
    return cos_t, sin_t
