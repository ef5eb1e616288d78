"""Command-line front end: solve, simulate, fft, scan, response, modes, compare.

Every command writes into an output directory and records a run manifest
(``manifest.json``) before starting and again when it finishes.  Outputs
other than the manifest are deterministic: rerunning a manifest with
``sohb replay`` reproduces them byte for byte.

Exit codes: 0 success, 1 error (or failed comparison), 2 no SO found.
"""

from __future__ import annotations

import argparse
import cmath
import csv
import io as _io
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .io import (FormatError, read_json, read_response_csv, read_spectra_csv, write_json, write_modes_json,
                 write_report_json, write_response_csv, write_spectra_csv)
from .linearization import (LinearizationError, default_grid, identify_modes, log_derivative,
                            refined_response, refine_mode, LoopModel)
from .model import Layout, ModelError, SystemParams, UnknownVector, evaluate
from .limiter import LimiterSpec, TriggerMode, classify_trigger
from .solver import NoSOError, SolveConfig, SolverError, solve_so
from .spectra import Kind

log = logging.getLogger("sohb")

EXIT_OK, EXIT_ERROR, EXIT_NO_SO = 0, 1, 2

#: signals whose spectra the published tables print (the default oracle comparison set)
TABULATED = ("m_a", "u_dc", "u_ga", "theta0", "i_dpp", "i_dstar")
#: signals written by ``solve`` (solver unknowns first, then derived spectra)
SOLVE_SIGNALS = ("m_a", "u_dc", "u_ga", "theta0", "i_a", "i_dpp", "i_dstar", "i_d", "i_q", "u_gq")


# --------------------------------------------------------------------------
# manifest

class RunManifest:
    """Command, config, resolved parameters, output directory, version, timings."""

    def __init__(self, out: Path, command: str, argv: list[str], config: RunConfig | None):
        self.path = out / "manifest.json"
        self.doc = {"command": command, "argv": list(argv), "config": config.source if config else None,
                    "resolved": config.as_dict() if config else None, "output_dir": str(out),
                    "tool_version": __version__, "status": "running", "timings": {}}
        self.t0 = time.perf_counter()
        self.doc["timings"]["started"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        self._write()

    def finish(self, code: int, message: str = "", **extra):
        self.doc["status"] = "ok" if code == EXIT_OK else ("no-so" if code == EXIT_NO_SO else "error")
        self.doc["exit_code"] = code
        self.doc["message"] = message
        self.doc["timings"]["wall_s"] = round(time.perf_counter() - self.t0, 3)
        self.doc.update(extra)
        self._write()

    def _write(self):
        write_json(self.path, "sohb-manifest", self.doc)


def _outdir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# helpers

def _grid(txt: str | None, default=None) -> np.ndarray:
    """``lo:hi:step`` or a comma list."""
    if txt is None:
        return default
    if ":" in txt:
        lo, hi, step = (float(v) for v in txt.split(":"))
        n = int(round((hi - lo) / step))
        return lo + step * np.arange(n + 1)
    return np.array([float(v) for v in txt.split(",") if v.strip()])


def solver_spectra(x: UnknownVector, p: SystemParams) -> dict:
    # the clip is only applied when the limiter unknowns are live and triggered
    mode = classify_trigger(x.spectrum("i_dpp"), p.lim) if x.layout.limiter_active else TriggerMode.NONE
    ims = evaluate(x, p, mode)
    allsig = ims.signals()
    return {name: allsig[name] for name in SOLVE_SIGNALS if name in allsig}


def load_solution(d) -> tuple[UnknownVector, SystemParams, dict]:
    """Solution vector and parameters from a ``solve`` output directory."""
    d = Path(d)
    rep = read_json(d / "report.json", "sohb-solve-report")
    pd = dict(rep["params"])
    lim = LimiterSpec(pd.pop("I_up"), pd.pop("I_low"))
    p = SystemParams(**pd, lim=lim)
    lay = Layout(int(rep["order"]), bool(rep["limiter_active"]))
    try:
        vals = np.array([rep["unknowns"][s.label] for s in lay.slots], dtype=float)
    except KeyError as exc:
        raise FormatError(f"report lacks unknown {exc}") from exc
    return UnknownVector(lay, vals, p.f_1, p.im_uga), p, rep


def _coeffs(spectra: dict) -> dict:
    out = {}
    for name, sp in spectra.items():
        N = sp.order
        rng = range(-N, N + 1) if sp.kind is Kind.AC else range(0, N + 1)
        k = 1 if sp.kind is Kind.AC else 0
        out[name] = {n: sp[k, n] for n in rng}
    return out


# --------------------------------------------------------------------------
# commands

def cmd_solve(a, man_argv) -> int:
    cfg = load_config(a.config)
    order = cfg.order if a.order is None else a.order
    out = _outdir(a.out)
    man = RunManifest(out, "solve", man_argv, cfg)
    p = cfg.params
    try:
        rep = solve_so(p, SolveConfig(order=order))
    except NoSOError as exc:
        write_json(out / "report.json", "sohb-solve-report", {"converged": False, "message": str(exc),
                                                             "params": p.as_dict(), "order": order})
        man.finish(EXIT_NO_SO, str(exc))
        print(f"no SO found: {exc}", file=sys.stderr)
        return EXIT_NO_SO
    write_report_json(out / "report.json", rep, p)
    if not rep.converged:
        man.finish(EXIT_ERROR, rep.message, trace=rep.trace)
        print(f"solve failed: {rep.message}", file=sys.stderr)
        return EXIT_ERROR
    write_spectra_csv(out / "spectra.csv", solver_spectra(rep.solution, p))
    man.finish(EXIT_OK, "converged", f_s=rep.fs, trigger=rep.mode.value)
    print(f"converged: order {order}, f_s = {rep.fs:.6f} Hz, trigger {rep.mode.value}, "
          f"{rep.iterations} iterations")
    return EXIT_OK


def cmd_simulate(a, man_argv) -> int:
    from .oracle.simulate import simulate

    cfg = load_config(a.config)
    out = _outdir(a.out)
    man = RunManifest(out, "simulate", man_argv, cfg)
    ts = simulate(cfg.scenario(a.duration))
    ts.save(out / "timeseries.npz")
    if a.csv:
        ts.to_csv(out / "timeseries.csv")
    man.finish(EXIT_OK, f"{ts.n} samples")
    print(f"simulated {ts.n * ts.ts:.3f} s, {ts.n} samples -> {out / 'timeseries.npz'}")
    return EXIT_OK


def cmd_fft(a, man_argv) -> int:
    from .oracle.fft import fft_extract
    from .oracle.simulate import TimeSeries

    out = _outdir(a.out)
    man = RunManifest(out, "fft", man_argv, None)
    ts = TimeSeries.load(a.dump)
    start, length = None, a.length
    if a.window:
        lo, hi = (float(v) for v in a.window.split(":"))
        start, length = ts.t0 + lo, hi - lo
    est = fft_extract(ts, start=start, length=length, order=a.order)
    write_spectra_csv(out / "spectra.csv", est.spectra)
    write_json(out / "fft.json", "sohb-fft", {"f_s": est.fs, "window": est.window, "order": a.order})
    man.finish(EXIT_OK, "", f_s=est.fs)
    print(f"f_s = {est.fs:.6f} Hz ({est.window['length']:g} s Hann window)")
    return EXIT_OK


def cmd_scan(a, man_argv) -> int:
    from .oracle.fft import NoSODetected, fft_extract
    from .oracle.scan import frequency_scan
    from .oracle.simulate import simulate

    cfg = load_config(a.config)
    out = _outdir(a.out)
    man = RunManifest(out, "scan", man_argv, cfg)
    ts = simulate(cfg.scenario(a.settle))
    snap = (ts.t0 + ts.n * ts.ts, ts.final_state)
    try:
        fs = fft_extract(ts, length=min(cfg.fft_length, a.settle / 2)).fs
    except NoSODetected:
        fs = 0.0
    freqs = _grid(a.freqs, default_grid(-50, 150, 2.5))
    amp = cfg.scan_amp if a.amp is None else a.amp
    fr = frequency_scan(cfg.params, freqs, snap, fs=fs, amp=amp)
    write_response_csv(out / "response.csv", fr)
    man.finish(EXIT_OK, "", f_s=fs, skipped=fr.skipped)
    print(f"scanned {len(fr)} points around an SO at f_s = {fs:.4f} Hz ({len(fr.skipped)} skipped)")
    return EXIT_OK


def cmd_response(a, man_argv) -> int:
    x, p, _ = load_solution(a.solve_dir)
    out = _outdir(a.out)
    man = RunManifest(out, "response", man_argv, None)
    grid = _grid(a.grid, default_grid())
    fr = refined_response(x, p, grid) if not a.no_refine else None
    if fr is None:
        from .linearization import build_loop_response
        fr = build_loop_response(x, p, grid)
    write_response_csv(out / "response.csv", fr)
    man.finish(EXIT_OK, "", points=len(fr), skipped=fr.skipped)
    print(f"loop impedance at {len(fr)} frequencies -> {out / 'response.csv'}")
    return EXIT_OK


def cmd_modes(a, man_argv) -> int:
    fr = read_response_csv(a.response)
    out = _outdir(a.out if a.out else Path(a.response).parent / "modes")
    man = RunManifest(out, "modes", man_argv, None)
    modes = identify_modes(log_derivative(fr))
    extra = {"source": str(a.response)}
    if a.solve_dir:
        x, p, _ = load_solution(a.solve_dir)
        lm = LoopModel(x, p)
        polished = []
        for m in modes:
            if m.kind != "zero":
                continue
            try:
                r = refine_mode(lm, m)
            except (np.linalg.LinAlgError, LinearizationError):
                continue
            if math.isfinite(r.alpha) and abs(r.f - m.f) < 1.0:
                polished.append(r)
        extra["refined_zeros"] = [m.as_dict() for m in polished]
    write_modes_json(out / "modes.json", modes, extra)
    man.finish(EXIT_OK, f"{len(modes)} features")
    for m in modes:
        print(f"{m.kind:4s} {m.f:10.4f} Hz  alpha = {m.alpha:+.4f} 1/s  ({m.confidence})")
    return EXIT_OK


def _oracle_rows(solver: dict, oracle: dict, rel: float):
    """(signal, n, solver, oracle, rel_err, ok) for coefficients above 1% of their signal's largest."""
    rows = []
    for sig, cs in solver.items():
        dom = max(abs(c) for c in cs.values())
        for n, c in sorted(cs.items()):
            if abs(c) < 0.01 * dom or n not in oracle.get(sig, {}):
                continue
            o = oracle[sig][n]
            r = abs(o - c) / abs(c)
            rows.append((sig, n, c, o, r, r <= rel))
    return rows


def cmd_compare(a, man_argv) -> int:
    from .tables import align_phase, compare_to_table

    x, p, rep = load_solution(a.solve_dir)
    out = _outdir(a.out if a.out else Path(a.solve_dir) / "compare")
    man = RunManifest(out, "compare", man_argv, None)
    signals = [s.strip() for s in a.signals.split(",") if s.strip()]
    solver = {s: cs for s, cs in _coeffs(read_spectra_csv(Path(a.solve_dir) / "spectra.csv")).items()
              if s in signals}
    buf = _io.StringIO()
    buf.write(f"# sohb-compare v1 rel_oracle={a.rel!r} rel_table={a.rel_table!r}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["route", "quantity", "solver", "reference", "rel_err", "pass"])
    n_fail, n_rows, fs_o = 0, 0, None
    if a.oracle_dir:
        odir = Path(a.oracle_dir)
        oracle = _coeffs(read_spectra_csv(odir / "spectra.csv"))
        fs_o = read_json(odir / "fft.json", "sohb-fft")["f_s"]
        if x.order >= 1:
            oracle, _ = align_phase(oracle, cmath.phase(solver["u_dc"][1]))
        for sig, n, c, o, r, ok in _oracle_rows(solver, oracle, a.rel):
            w.writerow(["oracle", f"M({sig}<{n}>)", repr(abs(c)), repr(abs(o)), repr(r), "pass" if ok else "FAIL"])
            print(f"oracle  {sig:8s} {n:+d}  {abs(c):12.6g}  {abs(o):12.6g}  {r:9.2e}  {'pass' if ok else 'FAIL'}")
            n_fail += not ok
            n_rows += 1
        fs_ok = abs(fs_o - x.fs) <= a.fs_tol
        w.writerow(["oracle", "f_s", repr(x.fs), repr(fs_o), repr(abs(fs_o - x.fs)), "pass" if fs_ok else "FAIL"])
        print(f"oracle  f_s: solver {x.fs:.5f}  oracle {fs_o:.5f}  {'pass' if fs_ok else 'FAIL'}")
        n_fail += not fs_ok
        n_rows += 1
    if a.table:
        for d in compare_to_table(x, a.table, a.column):
            ok = d.within(a.rel_table)
            w.writerow(["table", d.label, repr(d.solved), repr(d.table), repr(d.rel_err), "pass" if ok else "FAIL"])
            print(f"table   {d.label:20s} {d.solved:12.6g}  {d.table:12.6g}  {d.rel_err:9.2e}  "
                  f"{'pass' if ok else 'FAIL'}")
            n_fail += not ok
            n_rows += 1
    (out / "compare.csv").write_text(buf.getvalue())
    summary = {"f_s_solver": x.fs, "f_s_oracle": fs_o, "rows": n_rows, "failed": n_fail}
    write_json(out / "compare.json", "sohb-compare-summary", summary)
    code = EXIT_OK if n_fail == 0 else EXIT_ERROR
    man.finish(code, f"{n_fail} comparisons out of tolerance")
    return code


def cmd_replay(a, _argv) -> int:
    doc = read_json(a.manifest, "sohb-manifest")
    return main(doc["argv"])


# --------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sohb", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"sohb {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="harmonic-balance SO solve")
    s.add_argument("config", help="config file or preset name")
    s.add_argument("--order", type=int, default=None)
    s.add_argument("--out", default="out/solve")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("simulate", help="time-domain oracle run")
    s.add_argument("config")
    s.add_argument("--duration", type=float, default=None)
    s.add_argument("--csv", action="store_true", help="also export CSV")
    s.add_argument("--out", default="out/sim")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fft", help="harmonics of a simulation dump")
    s.add_argument("dump", help="timeseries.npz")
    s.add_argument("--window", default=None, help="START:STOP seconds from the dump start")
    s.add_argument("--length", type=float, default=40.0, help="trailing window length when --window is absent")
    s.add_argument("--order", type=int, default=3)
    s.add_argument("--out", default="out/fft")
    s.set_defaults(func=cmd_fft)

    s = sub.add_parser("scan", help="oracle frequency scan at the simulated steady state")
    s.add_argument("config")
    s.add_argument("--freqs", default=None, help="LO:HI:STEP or comma list (Hz)")
    s.add_argument("--amp", type=float, default=None, help="probe amplitude, fraction of the phase peak")
    s.add_argument("--settle", type=float, default=60.0, help="seconds simulated before probing")
    s.add_argument("--out", default="out/scan")
    s.set_defaults(func=cmd_scan)

    s = sub.add_parser("response", help="analytic loop impedance about a solved steady state")
    s.add_argument("solve_dir")
    s.add_argument("--grid", default=None, help="LO:HI:STEP (default -50:150:0.25)")
    s.add_argument("--no-refine", action="store_true", help="skip the 10x refinement near extrema")
    s.add_argument("--out", default="out/response")
    s.set_defaults(func=cmd_response)

    s = sub.add_parser("modes", help="zeros/poles from a response CSV")
    s.add_argument("response")
    s.add_argument("--solve-dir", default=None, help="polish zeros in the complex plane with this solution")
    s.add_argument("--out", default=None, help="output directory (default: modes/ next to the response)")
    s.set_defaults(func=cmd_modes)

    s = sub.add_parser("compare", help="solver vs oracle vs published tables")
    s.add_argument("solve_dir")
    s.add_argument("oracle_dir", nargs="?", default=None, help="fft output directory")
    s.add_argument("--table", default=None, help="test1..test4")
    s.add_argument("--column", default="N3")
    s.add_argument("--rel", type=float, default=0.01, help="solver-oracle relative tolerance")
    s.add_argument("--rel-table", type=float, default=0.02, help="solver-table relative tolerance")
    s.add_argument("--fs-tol", type=float, default=0.05, help="solver-oracle f_s tolerance (Hz)")
    s.add_argument("--signals", default=",".join(TABULATED), help="signals checked against the oracle")
    s.add_argument("--out", default=None, help="output directory (default: compare/ inside the solve directory)")
    s.set_defaults(func=cmd_compare)

    s = sub.add_parser("replay", help="rerun the command recorded in a manifest")
    s.add_argument("manifest")
    s.set_defaults(func=cmd_replay)
    return ap


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return a.func(a, argv)
    except (ConfigError, FormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (SolverError, ModelError, LinearizationError, ValueError, RuntimeError) as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
