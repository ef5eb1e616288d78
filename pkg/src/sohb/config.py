"""INI-style run configuration and the bundled test presets.

Example::

    [system]            # keys named after the SystemParams fields
    L_g = 1 mH
    [limiter]
    I_up = 200
    I_low = 0
    [initial]           # overrides in force from t = 0 (simulation only)
    L_g = 0.1 mH
    [events]            # label = time: key=value, key=value
    switch = 2.0: L_g=1 mH
    [simulation]
    duration = 70
    dt = 20e-6
    [fft]
    length = 40
    [solve]
    order = 3

Values may carry a unit suffix (H, mH, uH, F, mF, uF, V, A, Hz, s, ms, us).
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path

from .limiter import LimiterSpec
from .model import SystemParams
from .oracle.simulate import Event, Scenario

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "preset_names", "parse_value"]

_UNITS = {"": 1.0, "H": 1.0, "mH": 1e-3, "uH": 1e-6, "F": 1.0, "mF": 1e-3, "uF": 1e-6, "V": 1.0, "A": 1.0,
          "Hz": 1.0, "s": 1.0, "ms": 1e-3, "us": 1e-6}
_NUM = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*([A-Za-z]*)\s*$")
_PARAM_KEYS = {f.name for f in fields(SystemParams)} - {"lim"}
_KNOWN = {"system", "limiter", "initial", "events", "simulation", "fft", "solve", "scan"}


class ConfigError(ValueError):
    pass


def parse_value(txt: str) -> float:
    m = _NUM.match(txt)
    if not m or m.group(2) not in _UNITS:
        raise ConfigError(f"cannot read a number from {txt!r}")
    return float(m.group(1)) * _UNITS[m.group(2)]


def _param_overrides(items, where: str) -> dict:
    out = {}
    for key, val in items:
        if key not in _PARAM_KEYS | {"I_up", "I_low"}:
            raise ConfigError(f"unknown parameter {key!r} in [{where}]")
        out[key] = parse_value(val)
    return out


@dataclass
class RunConfig:
    params: SystemParams
    initial: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    duration: float = 70.0
    dt: float = 20e-6
    sample_every: int = 25
    fft_length: float = 40.0
    order: int = 3
    scan_amp: float = 0.01
    source: str = ""

    def scenario(self, duration: float | None = None) -> Scenario:
        p0 = self.params.with_(**self.initial) if self.initial else self.params
        return Scenario(p0, duration=self.duration if duration is None else duration, dt=self.dt,
                        events=list(self.events), sample_every=self.sample_every)

    def as_dict(self) -> dict:
        return {"params": self.params.as_dict(), "initial": dict(self.initial),
                "events": [{"t": e.t, **e.changes} for e in self.events], "duration": self.duration,
                "dt": self.dt, "sample_every": self.sample_every, "fft_length": self.fft_length,
                "order": self.order, "scan_amp": self.scan_amp, "source": self.source}


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive symbols
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    extra = set(cp.sections()) - _KNOWN
    if extra:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(extra))}")
    kw = _param_overrides(cp.items("system"), "system") if cp.has_section("system") else {}
    lim = SystemParams().lim
    if cp.has_section("limiter"):
        lk = _param_overrides(cp.items("limiter"), "limiter")
        lim = LimiterSpec(lk.pop("I_up", lim.I_up), lk.pop("I_low", lim.I_low))
        if lk:
            raise ConfigError("[limiter] takes I_up and I_low only")
    try:
        p = SystemParams(**{k: v for k, v in kw.items() if k not in ("I_up", "I_low")}, lim=lim)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    rc = RunConfig(p, source=source)
    if cp.has_section("initial"):
        rc.initial = _param_overrides(cp.items("initial"), "initial")
    if cp.has_section("events"):
        evs = []
        for label, val in cp.items("events"):
            t_txt, sep, rest = val.partition(":")
            if not sep:
                raise ConfigError(f"event {label!r} needs the form 'time: key=value, ...'")
            pairs = [kv.split("=", 1) for kv in rest.split(",") if kv.strip()]
            if any(len(kv) != 2 for kv in pairs):
                raise ConfigError(f"event {label!r} has a malformed key=value list")
            evs.append(Event(parse_value(t_txt), _param_overrides([(k.strip(), v) for k, v in pairs], "events")))
        rc.events = sorted(evs, key=lambda e: e.t)
    sim = cp["simulation"] if cp.has_section("simulation") else {}
    rc.duration = parse_value(sim.get("duration", "70"))
    rc.dt = parse_value(sim.get("dt", "20e-6"))
    rc.sample_every = int(parse_value(sim.get("sample_every", "25")))
    if cp.has_section("fft"):
        rc.fft_length = parse_value(cp["fft"].get("length", "40"))
    if cp.has_section("solve"):
        rc.order = int(parse_value(cp["solve"].get("order", "3")))
    if cp.has_section("scan"):
        rc.scan_amp = parse_value(cp["scan"].get("amp", "0.01"))
    try:
        rc.scenario()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return rc


def preset_names() -> list[str]:
    root = resources.files("sohb.presets")
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def load_config(path_or_preset) -> RunConfig:
    """Read a config file, or a bundled preset by name (``test1``..``test4``, ``stable``)."""
    path = Path(path_or_preset)
    if path.is_file():
        return parse_config(path.read_text(), str(path))
    name = path.name[:-4] if path.name.endswith(".cfg") else path.name
    if name in preset_names():
        text = resources.files("sohb.presets").joinpath(name + ".cfg").read_text()
        return parse_config(text, f"preset:{name}")
    raise ConfigError(f"no config file or preset named {str(path_or_preset)!r}")
