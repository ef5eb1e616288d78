"""Published steady-state harmonic tables and phase-aligned comparison.

The tables print rectangular parts of m_a, u_dc, u_ga and polar parts of
theta0 and the limiter input.  Their oscillation phase reference differs
from the solver's (which fixes A(theta0<s>) = 0), so every comparison first
rotates the order-n coefficients by ``n*phi`` with ``phi`` chosen to align
the phase of u_dc<s>.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass
from importlib import resources

from .model import UnknownVector

__all__ = ["TableEntry", "load_tables", "table_column", "align_phase", "compare_to_table", "Deviation",
           "PRESET_TABLE"]

PRESET_TABLE = {"test1": "test1", "test2": "test2", "test3": "test3", "test4": "test4"}


@dataclass(frozen=True)
class TableEntry:
    test: str
    part: str       # R, I, M, A or "f_s"
    signal: str
    n: int
    values: dict    # column -> float (missing columns absent)
    decimals: dict  # column -> printed decimals


def _num(txt: str):
    try:
        v = float(txt)
    except ValueError:
        return None, 0
    dec = len(txt.split(".")[1]) if "." in txt else 0
    return v, dec


def load_tables() -> dict[str, list[TableEntry]]:
    text = resources.files("sohb.data").joinpath("published_tables.tsv").read_text()
    cols: dict[str, list[str]] = {}
    out: dict[str, list[TableEntry]] = {}
    for line in text.splitlines():
        if line.startswith("#columns"):
            _, test, *names = line.split()
            cols[test] = names
            continue
        if not line.strip() or line.startswith("#"):
            continue
        f = line.split("\t")
        test, key, raw = f[0], f[1], f[2:]
        if key == "f_s":
            part, sig, n = "f_s", "f_s", 0
        else:
            part, sig, n = key.split()
            n = int(n)
        vals, decs = {}, {}
        for name, txt in zip(cols[test], raw):
            v, d = _num(txt)
            if v is not None:
                vals[name], decs[name] = v, d
        out.setdefault(test, []).append(TableEntry(test, part, sig, n, vals, decs))
    return out


def table_column(test: str, column: str = "N3") -> dict:
    """``{signal: {n: complex}}`` plus ``'f_s'`` for one table column.

    Polar entries are returned as complex numbers; the missing angle of
    theta0<s> is reported as 0 and the zero-order angles as 0.
    """
    rect: dict = {}
    polar: dict = {}
    fs = None
    for e in load_tables()[test]:
        if column not in e.values:
            continue
        v = e.values[column]
        if e.part == "f_s":
            fs = v
        elif e.part in ("R", "I"):
            c = rect.setdefault(e.signal, {}).get(e.n, 0j)
            c = complex(v, c.imag) if e.part == "R" else complex(c.real, v)
            rect[e.signal][e.n] = c
        else:
            m, a = polar.setdefault(e.signal, {}).get(e.n, (0.0, 0.0))
            polar[e.signal][e.n] = (v, a) if e.part == "M" else (m, v)
    out = {sig: dict(cs) for sig, cs in rect.items()}
    for sig, cs in polar.items():
        out[sig] = {n: m * cmath.exp(1j * a) for n, (m, a) in cs.items()}
    out["f_s"] = fs
    return out


def align_phase(coeffs: dict, ref_angle: float, key=("u_dc", 1)) -> tuple[dict, float]:
    """Rotate order-n coefficients by n*phi so ``key`` has angle ``ref_angle``."""
    sig, n0 = key
    c = coeffs[sig][n0]
    phi = (ref_angle - cmath.phase(c)) / n0
    rot = {s: {n: v * cmath.exp(1j * n * phi) for n, v in cs.items()} for s, cs in coeffs.items()}
    return rot, phi


@dataclass(frozen=True)
class Deviation:
    label: str
    table: float
    solved: float
    decimals: int

    @property
    def abs_err(self) -> float:
        if self.label.startswith("A("):
            return abs(math.remainder(self.solved - self.table, 2 * math.pi))
        return abs(self.solved - self.table)

    @property
    def rel_err(self) -> float:
        return self.abs_err / abs(self.table) if self.table else math.inf

    def within(self, rel: float) -> bool:
        """Relative tolerance, widened by half a unit of the printed last digit."""
        return self.abs_err <= rel * abs(self.table) + 0.5 * 10.0 ** (-self.decimals)


def _part(c: complex, part: str) -> float:
    return {"R": c.real, "I": c.imag, "M": abs(c), "A": cmath.phase(c)}[part]


def compare_to_table(x: UnknownVector, test: str, column: str = "N3") -> list[Deviation]:
    """Per-entry deviations of ``x`` from a table column after phase alignment."""
    tab = table_column(test, column)
    mine = x.to_coeffs()
    if x.order >= 1 and "u_dc" in tab and 1 in tab["u_dc"]:
        mine, _ = align_phase(mine, cmath.phase(tab["u_dc"][1]))
    out = []
    for e in load_tables()[test]:
        if column not in e.values:
            continue
        if e.part == "f_s":
            if x.order >= 1:
                out.append(Deviation("f_s", e.values[column], x.fs, e.decimals[column]))
            continue
        if e.signal not in mine or e.n not in mine[e.signal]:
            continue
        c = mine[e.signal][e.n]
        if e.signal in ("theta0", "i_dpp") and e.n == 0:
            c = complex(c.real)
        label = f"{e.part}({e.signal}<{e.n}>)"
        out.append(Deviation(label, e.values[column], _part(c, e.part), e.decimals[column]))
    return out
