"""TOML experiment configuration: parsing, unit conversion and validation.

Frequencies may be written as

* a plain number, read in units of omega0;
* ``"<x> w0"``: explicit omega0 units;
* ``"<x> rad/s"``: angular frequency;
* ``"<x> MHz x2pi"``, ``"2pi x <x> kHz"``, ``"2π×<x> MHz"``: ordinary
  frequency with the 2 pi written out.

A bare ``"<x> MHz"`` is rejected: it is exactly the ambiguity that produces
factor-of-2pi errors.  Grids are ``{start, stop, count}`` tables or lists.
"""
from __future__ import annotations

import hashlib
import json
import math
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .crystal import SPECIES, IonArraySpec, doppler_occupation, unit_scale

RUN_KINDS = ("cavity-design", "decay-verify", "single-mode", "two-mode", "phase-diagram")

_PREFIX = {"hz": 1.0, "khz": 1e3, "mhz": 1e6, "ghz": 1e9}
_NUM = r"([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
_TWO_PI = r"(?:2\s*(?:pi|π)\s*(?:x|×|\*)?)"
_X_TWO_PI = r"(?:(?:x|×|\*)\s*2\s*(?:pi|π))"


class ConfigError(ValueError):
    """Schema or value error, tagged with the offending field path."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def parse_frequency(value, omega0: float, path: str) -> float:
    """Return ``value`` in units of omega0."""
    if isinstance(value, bool):
        raise ConfigError(path, "expected a frequency")
    if isinstance(value, (int, float)):
        return float(value)
    if not isinstance(value, str):
        raise ConfigError(path, f"expected a frequency, got {type(value).__name__}")
    s = value.strip().lower().replace("omega0", "w0").replace("ω₀", "w0").replace("ω0", "w0")
    m = re.fullmatch(_NUM + r"\s*w0", s)
    if m:
        return float(m.group(1))
    m = re.fullmatch(_NUM + r"\s*rad\s*/\s*s", s)
    if m:
        return float(m.group(1)) / omega0
    m = re.fullmatch(_NUM + r"\s*(hz|khz|mhz|ghz)\s*" + _X_TWO_PI, s) or \
        re.fullmatch(_TWO_PI + r"\s*" + _NUM + r"\s*(hz|khz|mhz|ghz)", s)
    if m:
        return 2 * math.pi * float(m.group(1)) * _PREFIX[m.group(2)] / omega0
    if re.fullmatch(_NUM + r"\s*(hz|khz|mhz|ghz)", s):
        raise ConfigError(path, f"{value!r} is ambiguous; write '{value} x2pi' for an ordinary frequency "
                                "or give rad/s")
    raise ConfigError(path, f"cannot parse frequency {value!r}")


def parse_length(value, path: str) -> float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        m = re.fullmatch(_NUM + r"\s*(m|mm|um|µm|μm|nm)", value.strip().lower())
        if m:
            scale = {"m": 1.0, "mm": 1e-3, "um": 1e-6, "µm": 1e-6, "μm": 1e-6, "nm": 1e-9}[m.group(2)]
            return float(m.group(1)) * scale
    raise ConfigError(path, f"cannot parse length {value!r}")


def parse_grid(value, path: str, conv=None) -> list[float]:
    conv = conv or _num
    if isinstance(value, dict):
        missing = {"start", "stop", "count"} - set(value)
        if missing:
            raise ConfigError(path, f"grid table needs {sorted(missing)}")
        extra = set(value) - {"start", "stop", "count"}
        if extra:
            raise ConfigError(path, f"unknown grid keys {sorted(extra)}")
        count = value["count"]
        if not isinstance(count, int) or count < 1:
            raise ConfigError(f"{path}.count", "must be a positive integer")
        a, b = conv(value["start"], f"{path}.start"), conv(value["stop"], f"{path}.stop")
        return [float(x) for x in np.linspace(a, b, count)]
    if isinstance(value, list):
        if not value:
            raise ConfigError(path, "grid must be non-empty")
        return [conv(v, f"{path}[{i}]") for i, v in enumerate(value)]
    return [conv(value, path)]


def _num(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(path, f"expected a number, got {value!r}")
    return float(value)


class _Section:
    """Key access with field paths and unknown-key detection."""

    def __init__(self, data: dict, path: str):
        if not isinstance(data, dict):
            raise ConfigError(path, "expected a table")
        self.data, self.path, self.used = data, path, set()

    def get(self, key, default=None, required=False):
        self.used.add(key)
        if key not in self.data:
            if required:
                raise ConfigError(f"{self.path}.{key}", "is required")
            return default
        return self.data[key]

    def p(self, key):
        return f"{self.path}.{key}"

    def finish(self):
        extra = set(self.data) - self.used
        if extra:
            raise ConfigError(self.path, f"unknown keys {sorted(extra)}")


def _positive(x, path):
    if not x > 0:
        raise ConfigError(path, f"must be positive (got {x})")
    return x


def _non_negative(x, path):
    if not x >= 0:
        raise ConfigError(path, f"must be non-negative (got {x})")
    return x


@dataclass
class ArrayConfig:
    species: str = "40Ca+"
    n_ions: int = 2000
    d0: float = 7e-6
    center: int | None = None

    def spec(self) -> IonArraySpec:
        return IonArraySpec(SPECIES[self.species], self.n_ions, self.d0)

    @property
    def omega0(self) -> float:
        return unit_scale(self.spec())

    @property
    def cavity_center(self) -> int:
        return self.n_ions // 2 if self.center is None else self.center


@dataclass
class CavityConfig:
    n_s: int = 1
    walls: list = field(default_factory=lambda: [2])
    tweezers: list = field(default_factory=lambda: [2 * math.pi * 2.4e6])   # rad/s
    window: float | None = None


@dataclass
class DecayVerifyConfig:
    t_max: float = 500.0
    samples: int = 2001
    mode: int = 0


@dataclass
class SingleModeConfig:
    omega: float = 2.0
    kappa: float = 6.1e-3
    n_th: float = 10.0
    gamma: float = 43.2
    delta_b: float = 0.0
    eta_omega: list = field(default_factory=lambda: list(np.linspace(0.05, 0.6, 56)))
    lineshape_eta_omega: list = field(default_factory=lambda: [0.2, 0.3, 0.4])
    evolve_eta_omega: float | None = 0.4
    evolve_t_max: float = 30.0    # units of 1/kappa


@dataclass
class TwoModeConfig:
    omega: tuple = (1.6, 2.5)
    kappa: tuple = (0.05, 0.01)
    n_th: tuple = (13.0, 8.2)
    eta_ratio: float = math.sqrt(1.6 / 2.5)
    gamma: float = 43.2
    delta: float = 2.5
    coupling_factor: float = 1.0
    t_max: float | None = None
    rtol: float = 1e-8
    eta_omega: list = field(default_factory=lambda: [1.0])
    E_com0: list = field(default_factory=lambda: [0.5])
    E_br0: list = field(default_factory=lambda: [0.5])
    onsets: bool = True


@dataclass
class ExperimentConfig:
    run: str
    array: ArrayConfig
    cavity: CavityConfig
    decay_verify: DecayVerifyConfig
    singlemode: SingleModeConfig
    twomode: TwoModeConfig
    out: str = "out"
    cache: bool = True
    cache_dir: str | None = None
    figures: bool = False
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    return hashlib.sha256(json.dumps(raw, sort_keys=True, default=str).encode()).hexdigest()[:16]


def load(path, run_kind: str | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError("<file>", f"invalid TOML: {exc}") from exc
    return from_dict(raw, run_kind)


def from_dict(raw: dict, run_kind: str | None = None) -> ExperimentConfig:
    top = _Section(raw, "config")
    run = top.get("run", run_kind)
    if run is None:
        raise ConfigError("config.run", "no run kind given")
    if run not in RUN_KINDS:
        raise ConfigError("config.run", f"unknown run kind {run!r}; choose from {', '.join(RUN_KINDS)}")
    if run_kind is not None and run != run_kind:
        raise ConfigError("config.run", f"config is for {run!r} but {run_kind!r} was requested")

    arr = _Section(top.get("array", {}), "array")
    species = arr.get("species", "40Ca+")
    if species not in SPECIES:
        raise ConfigError(arr.p("species"), f"unknown species {species!r}")
    n_ions = arr.get("n_ions", 2000)
    if not isinstance(n_ions, int) or n_ions < 3:
        raise ConfigError(arr.p("n_ions"), "must be an integer >= 3")
    d0 = _positive(parse_length(arr.get("d0", 7e-6), arr.p("d0")), arr.p("d0"))
    center = arr.get("center")
    if center is not None and (not isinstance(center, int) or not 0 <= center < n_ions):
        raise ConfigError(arr.p("center"), "must be a site index")
    arr.finish()
    array = ArrayConfig(species, n_ions, d0, center)
    w0 = array.omega0

    def freq(sec, key, default):
        v = sec.get(key, default)
        return parse_frequency(v, w0, sec.p(key))

    cav = _Section(top.get("cavity", {}), "cavity")
    n_s = cav.get("n_s", 1)
    if not isinstance(n_s, int) or n_s < 1:
        raise ConfigError(cav.p("n_s"), "must be a positive integer")
    walls = cav.get("walls", [2])
    walls = walls if isinstance(walls, list) else [walls]
    if not walls or any(not isinstance(w, int) or w < 0 for w in walls):
        raise ConfigError(cav.p("walls"), "must be non-negative integers")
    tweezers = [_positive(x * w0, cav.p("tweezer")) for x in
                parse_grid(cav.get("tweezer", "2.4 MHz x2pi"), cav.p("tweezer"),
                           lambda v, p: parse_frequency(v, w0, p))]
    window = cav.get("window")
    if window is not None:
        window = _positive(parse_frequency(window, w0, cav.p("window")), cav.p("window"))
    cav.finish()
    cavity = CavityConfig(n_s, walls, tweezers, window)

    dv = _Section(top.get("decay_verify", {}), "decay_verify")
    decay = DecayVerifyConfig(_positive(_num(dv.get("t_max", 500.0), dv.p("t_max")), dv.p("t_max")),
                              int(_positive(_num(dv.get("samples", 2001), dv.p("samples")), dv.p("samples"))),
                              int(_non_negative(_num(dv.get("mode", 0), dv.p("mode")), dv.p("mode"))))
    dv.finish()

    sec = _Section(top.get("singlemode", {}), "singlemode")
    gamma = _positive(freq(sec, "gamma", f"{SPECIES[species].linewidth} rad/s"), sec.p("gamma"))
    omega = _positive(freq(sec, "omega", 2.0), sec.p("omega"))
    n_th = sec.get("n_th", 10.0)
    n_th = doppler_occupation(gamma, omega) if n_th == "doppler" else _num(n_th, sec.p("n_th"))
    evolve = sec.get("evolve_eta_omega", 0.4)
    single = SingleModeConfig(
        omega=omega,
        kappa=_positive(freq(sec, "kappa", 6.1e-3), sec.p("kappa")),
        n_th=_non_negative(n_th, sec.p("n_th")),
        gamma=gamma,
        delta_b=freq(sec, "delta_b", 0.0),
        eta_omega=[_non_negative(x, sec.p("eta_omega")) for x in
                   parse_grid(sec.get("eta_omega", {"start": 0.05, "stop": 0.6, "count": 56}), sec.p("eta_omega"),
                              lambda v, p: parse_frequency(v, w0, p))],
        lineshape_eta_omega=parse_grid(sec.get("lineshape_eta_omega", [0.2, 0.3, 0.4]),
                                       sec.p("lineshape_eta_omega"), lambda v, p: parse_frequency(v, w0, p)),
        evolve_eta_omega=None if evolve is False else parse_frequency(evolve, w0, sec.p("evolve_eta_omega")),
        evolve_t_max=_positive(_num(sec.get("evolve_t_max", 30.0), sec.p("evolve_t_max")), sec.p("evolve_t_max")),
    )
    sec.finish()

    tm = _Section(top.get("twomode", {}), "twomode")
    tm_gamma = _positive(freq(tm, "gamma", f"{SPECIES[species].linewidth} rad/s"), tm.p("gamma"))

    def pair(key, default, conv):
        v = tm.get(key, default)
        if not isinstance(v, list) or len(v) != 2:
            raise ConfigError(tm.p(key), "needs two values (COM, BR)")
        return tuple(conv(x, f"{tm.p(key)}[{i}]") for i, x in enumerate(v))

    tm_omega = pair("omega", [1.6, 2.5], lambda v, p: _positive(parse_frequency(v, w0, p), p))
    n_th_raw = tm.get("n_th", [13.0, 8.2])
    tm.used.add("n_th")
    if n_th_raw == "doppler":
        tm_nth = tuple(float(doppler_occupation(tm_gamma, w)) for w in tm_omega)
    else:
        tm_nth = pair("n_th", n_th_raw, lambda v, p: _non_negative(_num(v, p), p))
    t_max = tm.get("t_max")
    two = TwoModeConfig(
        omega=tm_omega,
        kappa=pair("kappa", [0.05, 0.01], lambda v, p: _positive(parse_frequency(v, w0, p), p)),
        n_th=tm_nth,
        eta_ratio=_positive(_num(tm.get("eta_ratio", math.sqrt(tm_omega[0] / tm_omega[1])), tm.p("eta_ratio")),
                            tm.p("eta_ratio")),
        gamma=tm_gamma,
        delta=freq(tm, "delta", tm_omega[1]),
        coupling_factor=_positive(_num(tm.get("coupling_factor", 1.0), tm.p("coupling_factor")),
                                  tm.p("coupling_factor")),
        t_max=None if t_max is None else _positive(_num(t_max, tm.p("t_max")), tm.p("t_max")),
        rtol=_positive(_num(tm.get("rtol", 1e-8), tm.p("rtol")), tm.p("rtol")),
        eta_omega=[_non_negative(x, tm.p("eta_omega")) for x in
                   parse_grid(tm.get("eta_omega", [1.0]), tm.p("eta_omega"), lambda v, p: parse_frequency(v, w0, p))],
        E_com0=[_non_negative(x, tm.p("E_COM0")) for x in parse_grid(tm.get("E_COM0", [0.5]), tm.p("E_COM0"), _num)],
        E_br0=[_non_negative(x, tm.p("E_BR0")) for x in parse_grid(tm.get("E_BR0", [0.5]), tm.p("E_BR0"), _num)],
        onsets=bool(tm.get("onsets", True)),
    )
    tm.finish()

    out = _Section(top.get("output", {}), "output")
    out_dir = out.get("dir", "out")
    figures = bool(out.get("figures", False))
    out.finish()
    cache = _Section(top.get("cache", {}), "cache")
    cache_on = bool(cache.get("enabled", True))
    cache_dir = cache.get("dir")
    cache.finish()
    top.finish()
    return ExperimentConfig(run, array, cavity, decay, single, two, out_dir, cache_on, cache_dir, figures, raw)
