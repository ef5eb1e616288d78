"""Versioned CSV/JSON artifacts: spectra, solve reports, responses, modes.

Every file starts with a header line naming the format and its version.
Numbers are written with ``repr`` so a read-back is exact and repeated runs
produce byte-identical files.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
from pathlib import Path

import numpy as np

from .linearization import FrequencyResponse, Mode
from .spectra import Kind, Spectrum

__all__ = ["FormatError", "write_spectra_csv", "read_spectra_csv", "write_report_json", "read_json",
           "write_response_csv", "read_response_csv", "write_modes_json", "read_modes_json", "write_json",
           "FORMAT_VERSION"]

FORMAT_VERSION = 1

SPECTRUM_HEADER = "# sohb-spectrum v{v} f1={f1!r} fs={fs!r} order={N}"
RESPONSE_HEADER = "# sohb-response v{v} quantity={q}"


class FormatError(ValueError):
    pass


def _num(x: float) -> str:
    return repr(float(x))


def _header_fields(line: str, tag: str) -> dict:
    parts = line.split()
    if len(parts) < 3 or parts[0] != "#" or parts[1] != tag:
        raise FormatError(f"missing '{tag}' header line")
    if parts[2] != f"v{FORMAT_VERSION}":
        raise FormatError(f"unsupported {tag} version {parts[2]}")
    out = {}
    for kv in parts[3:]:
        k, _, v = kv.partition("=")
        out[k] = v
    return out


# --------------------------------------------------------------------------
# spectra

def write_spectra_csv(path, spectra: dict[str, Spectrum]) -> None:
    """One row per live slot: signal, k, n, freq_Hz, Re, Im, M, A."""
    if not spectra:
        raise ValueError("nothing to write")
    first = next(iter(spectra.values()))
    buf = io.StringIO()
    buf.write(SPECTRUM_HEADER.format(v=FORMAT_VERSION, f1=first.f1, fs=first.fs, N=first.order) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["signal", "kind", "k", "n", "freq_Hz", "Re", "Im", "M", "A"])
    for name in spectra:
        sp = spectra[name]
        if (sp.order, sp.f1, sp.fs) != (first.order, first.f1, first.fs):
            raise ValueError("all spectra in one file must share order, f1 and fs")
        for k, n, f, c in sp.rows():
            w.writerow([name, sp.kind.value, k, n, _num(f), _num(c.real), _num(c.imag), _num(abs(c)),
                        _num(math.atan2(c.imag, c.real))])
    Path(path).write_text(buf.getvalue())


def read_spectra_csv(path) -> dict[str, Spectrum]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise FormatError("empty spectrum file")
    h = _header_fields(lines[0], "sohb-spectrum")
    try:
        f1, fs, N = float(h["f1"]), float(h["fs"]), int(h["order"])
    except (KeyError, ValueError) as exc:
        raise FormatError("malformed spectrum header") from exc
    data: dict[str, np.ndarray] = {}
    kinds: dict[str, Kind] = {}
    for line, row in enumerate(csv.DictReader(lines[1:]), start=3):
        try:
            name = row["signal"]
            kinds[name] = Kind(row["kind"])
            k, n = int(row["k"]), int(row["n"])
            c = complex(float(row["Re"]), float(row["Im"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"line {line}: malformed spectrum row ({exc})") from exc
        if abs(k) > 1 or abs(n) > N:
            raise FormatError(f"slot (k={k}, n={n}) is off the order-{N} grid")
        data.setdefault(name, np.zeros((3, 4 * N + 1), dtype=complex))[k + 1, n + 2 * N] = c
    return {name: Spectrum(kinds[name], N, f1, fs, arr) for name, arr in data.items()}


# --------------------------------------------------------------------------
# JSON documents

def _clean(obj):
    """JSON-safe copy: enums by value, numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else repr(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def write_json(path, fmt: str, payload: dict) -> None:
    doc = {"format": fmt, "version": FORMAT_VERSION}
    doc.update(_clean(payload))
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_json(path, fmt: str) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != fmt:
        raise FormatError(f"expected a {fmt} document, got {doc.get('format')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported {fmt} version {doc.get('version')!r}")
    return doc


def write_report_json(path, report, params=None, include_runtime: bool = False) -> None:
    """Scalars of a SolveReport.  Wall-clock time is left out unless asked for
    (it would break byte-identical reruns)."""
    s = report.summary()
    if not include_runtime:
        s.pop("runtime_s", None)
    if params is not None:
        s["params"] = params.as_dict()
    write_json(path, "sohb-solve-report", s)


# --------------------------------------------------------------------------
# frequency responses and modes

def write_response_csv(path, fr: FrequencyResponse) -> None:
    buf = io.StringIO()
    buf.write(RESPONSE_HEADER.format(v=FORMAT_VERSION, q=fr.quantity.replace(" ", "_")) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["f_Hz", "Re", "Im", "magnitude_dB", "phase_deg"])
    for f, v in zip(fr.f, fr.value):
        w.writerow([_num(f), _num(v.real), _num(v.imag), _num(20 * math.log10(abs(v))),
                    _num(math.degrees(math.atan2(v.imag, v.real)))])
    Path(path).write_text(buf.getvalue())


def read_response_csv(path) -> FrequencyResponse:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise FormatError("empty response file")
    h = _header_fields(lines[0], "sohb-response")
    f, v = [], []
    for line, row in enumerate(csv.DictReader(lines[1:]), start=3):
        try:
            f.append(float(row["f_Hz"]))
            v.append(complex(float(row["Re"]), float(row["Im"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"line {line}: malformed response row ({exc})") from exc
    if not f:
        raise FormatError("response file holds no samples")
    return FrequencyResponse(np.array(f), np.array(v), h.get("quantity", "Z_loop"))


def write_modes_json(path, modes: list[Mode], extra: dict | None = None) -> None:
    payload = {"modes": [m.as_dict() for m in modes]}
    payload.update(extra or {})
    write_json(path, "sohb-modes", payload)


def read_modes_json(path) -> list[Mode]:
    doc = read_json(path, "sohb-modes")
    return [Mode(float(m["alpha"]), 2 * math.pi * float(m["f_Hz"]), m["kind"], m["confidence"])
            for m in doc["modes"]]
