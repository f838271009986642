"""
Run configuration: an INI-like ``[section]`` / ``key = value`` format.

Every key has a default (the rectangle example), so an empty file is a
valid configuration. Unknown keys, bad values and invariant violations are
reported with the offending line number.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field

from .materials import PhysicalParams
from .mesh import BoundaryTag, TriangleMesh, generate_annulus_mesh, generate_rectangle_mesh
from .optimizer import OptimParams
from .pnp import SolverTolerances


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


SIDES = ("left", "right", "bottom", "top")
_TAG_NAMES = {"gamma_in": BoundaryTag.GAMMA_IN, "gamma_one": BoundaryTag.GAMMA_ONE,
              "gamma_two": BoundaryTag.GAMMA_TWO}


@dataclass(frozen=True)
class Geometry:
    kind: str = "rectangle"
    nx: int = 16
    ny: int = 32
    width: float = 1.0
    height: float = 2.0
    nr: int = 12
    ntheta: int = 96
    r_inner: float = 0.2
    r_outer: float = 1.0
    left: str = "gamma_in"
    right: str = "gamma_two"
    bottom: str = "gamma_one"
    top: str = "gamma_one"

    def validate(self):
        errors = []
        if self.kind not in ("rectangle", "annulus"):
            errors.append(f"kind must be rectangle or annulus, got {self.kind!r}")
        for name in ("nx", "ny", "nr"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if self.ntheta < 3:
            errors.append("ntheta must be >= 3")
        if not (self.width > 0 and self.height > 0):
            errors.append("width and height must be > 0")
        if not (0 < self.r_inner < self.r_outer):
            errors.append("need 0 < r_inner < r_outer")
        for side in SIDES:
            if getattr(self, side) not in _TAG_NAMES:
                errors.append(f"{side} must be one of {sorted(_TAG_NAMES)}")
        if errors:
            raise ValueError("; ".join(errors))
        return self

    def build(self) -> TriangleMesh:
        if self.kind == "annulus":
            return generate_annulus_mesh(self.nr, self.ntheta, self.r_inner, self.r_outer)
        tags = {side: _TAG_NAMES[getattr(self, side)] for side in SIDES}
        return generate_rectangle_mesh(self.nx, self.ny, self.width, self.height, tags)


@dataclass(frozen=True)
class RunSettings:
    initial_m: int = 4
    output_dir: str = "output"
    snapshot_stride: int = 100
    seed: int = 0
    gradient_directions: int = 5
    gradient_threshold: float = 1e-4

    def validate(self):
        errors = []
        if self.initial_m < 1:
            errors.append("initial_m must be >= 1")
        if self.snapshot_stride < 1:
            errors.append("snapshot_stride must be >= 1")
        if self.gradient_directions < 1:
            errors.append("gradient_directions must be >= 1")
        if not self.gradient_threshold > 0:
            errors.append("gradient_threshold must be > 0")
        if errors:
            raise ValueError("; ".join(errors))
        return self


@dataclass(frozen=True)
class RunConfig:
    geometry: Geometry = field(default_factory=Geometry)
    physical: PhysicalParams = field(default_factory=PhysicalParams)
    optim: OptimParams = field(default_factory=OptimParams)
    tolerances: SolverTolerances = field(default_factory=SolverTolerances)
    run: RunSettings = field(default_factory=RunSettings)
    # when set, optim.v_target was resolved as this fraction of the mesh area
    v_target_fraction: float | None = None

    @property
    def initial_m(self):
        return self.run.initial_m

    @property
    def output_dir(self):
        return self.run.output_dir

    @property
    def snapshot_stride(self):
        return self.run.snapshot_stride

    @property
    def seed(self):
        return self.run.seed


_SECTIONS = {
    "geometry": Geometry,
    "physical": PhysicalParams,
    "optim": OptimParams,
    "tolerances": SolverTolerances,
    "run": RunSettings,
}


def _field_types(cls):
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls) if f.init}


def _convert(raw: str, typ, key: str):
    text = raw.strip()
    if typ is bool:
        low = text.lower()
        if low in ("true", "yes", "on", "1"):
            return True
        if low in ("false", "no", "off", "0"):
            return False
        raise ValueError(f"{key} expects a boolean, got {text!r}")
    if typ is int:
        try:
            return int(text)
        except ValueError:
            raise ValueError(f"{key} expects an integer, got {text!r}") from None
    if typ is float:
        try:
            return float(text)
        except ValueError:
            raise ValueError(f"{key} expects a number, got {text!r}") from None
    if typ is tuple:
        try:
            return tuple(int(v) for v in text.split(","))
        except ValueError:
            raise ValueError(f"{key} expects comma-separated integers, got {text!r}") from None
    return text


def _tokenize(text: str):
    """Yield ``(line, section, key, value)``; raises on malformed lines."""
    section = None
    seen = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]"):
                raise ConfigError(f"malformed section header {stripped!r}", lineno)
            section = stripped[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in stripped:
            raise ConfigError(f"expected 'key = value', got {stripped!r}", lineno)
        if section is None:
            raise ConfigError("key outside of any [section]", lineno)
        key, value = (s.strip() for s in stripped.split("=", 1))
        if (section, key) in seen:
            raise ConfigError(f"duplicate key {key!r} (first on line {seen[section, key]})",
                              lineno)
        seen[section, key] = lineno
        yield lineno, section, key, value


def _build(cls, values: dict, lines: dict, section: str):
    try:
        return cls(**values).validate()
    except ValueError as exc:
        msg = str(exc)
        hit = [lines[k] for k in values if k in lines and k in msg]
        raise ConfigError(f"[{section}] {msg}", min(hit) if hit else None) from None


def parse_config(text: str) -> RunConfig:
    """Parse and validate a configuration text."""
    values = {s: {} for s in _SECTIONS}
    lines = {s: {} for s in _SECTIONS}
    fraction = fraction_line = None
    for lineno, section, key, raw in _tokenize(text):
        if section == "optim" and key == "v_target_fraction":
            try:
                fraction = float(raw)
            except ValueError:
                raise ConfigError(f"v_target_fraction expects a number, got {raw!r}",
                                  lineno) from None
            fraction_line = lineno
            continue
        types = _field_types(_SECTIONS[section])
        if key not in types:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        try:
            values[section][key] = _convert(raw, types[key], key)
        except ValueError as exc:
            raise ConfigError(str(exc), lineno) from None
        lines[section][key] = lineno

    geometry = _build(Geometry, values["geometry"], lines["geometry"], "geometry")
    physical = _build(PhysicalParams, values["physical"], lines["physical"], "physical")
    tolerances = _build(SolverTolerances, values["tolerances"], lines["tolerances"],
                        "tolerances")
    run = _build(RunSettings, values["run"], lines["run"], "run")

    mesh = geometry.build()
    area = mesh.area()
    optim_values = dict(values["optim"])
    if fraction is not None:
        if "v_target" in optim_values:
            raise ConfigError("v_target and v_target_fraction are mutually exclusive",
                              fraction_line)
        if not 0.0 < fraction < 1.0:
            raise ConfigError("v_target_fraction must lie in (0, 1)", fraction_line)
        optim_values["v_target"] = fraction * area
    try:
        optim = OptimParams(**optim_values).validate(area)
    except ValueError as exc:
        msg = str(exc)
        hit = [lines["optim"][k] for k in optim_values if k in lines["optim"] and k in msg]
        if not hit and fraction_line and "v_target" in msg:
            hit = [fraction_line]
        raise ConfigError(f"[optim] {msg}", min(hit) if hit else None) from None
    return RunConfig(geometry, physical, optim, tolerances, run, fraction)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    return str(v)


def format_config(cfg: RunConfig) -> str:
    """Serialize every value; ``parse_config(format_config(c)) == c``."""
    out = []
    for name in _SECTIONS:
        obj = getattr(cfg, name)
        out.append(f"[{name}]")
        for f in dataclasses.fields(obj):
            if not f.init:
                continue
            if name == "optim" and f.name == "v_target" and cfg.v_target_fraction is not None:
                out.append(f"v_target_fraction = {_format_value(cfg.v_target_fraction)}")
                continue
            out.append(f"{f.name} = {_format_value(getattr(obj, f.name))}")
        out.append("")
    return "\n".join(out)
