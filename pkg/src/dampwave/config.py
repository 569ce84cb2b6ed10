"""INI experiment configuration: parsing, validation and canonical serialization."""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field, fields

from .errors import ConfigurationError

EXPERIMENTS = ("simulate", "diagnose", "split", "attractor", "semicontinuity", "metric")
FAMILIES = ("builtin", "zero", "constant")


@dataclass(frozen=True)
class DomainBlock:
    dim: int = 1
    lengths: tuple[float, ...] = (math.pi,)
    N: int = 16
    quad_oversample: int = 4  # nodes per axis = max(oversample x highest index, 32)


@dataclass(frozen=True)
class FamilyBlock:
    name: str = "builtin"
    kappa: float = 1.0
    g: tuple[float, ...] = ()  # ascending polynomial coefficients
    a: str = "sin"
    eps: tuple[float, ...] = (0.0,)
    phases: tuple[float, ...] = (0.0,)
    constant: float = 0.0


@dataclass(frozen=True)
class SolverBlock:
    dt: float = 0.005  # time units
    method: str = "rk4"
    horizon: float = 10.0  # time units
    record_every: int = 10
    blowup_ceiling: float = 1e6  # E0 norm


@dataclass(frozen=True)
class ExperimentBlock:
    kind: str = "simulate"
    seed: int = 42
    u0: tuple[float, ...] = (1.0,)  # leading coefficients of u(0)
    u1: tuple[float, ...] = ()  # leading coefficients of u_t(0)
    ensemble_count: int = 64
    ensemble_sampling: str = "grid"
    ensemble_radius: float = 5.0
    ensemble_modes: int = 8
    hull_count: int = 4
    cauchy_tol: float = 1e-3
    alpha1: float = 0.18
    strichartz_h: tuple[float, ...] = (0.5, 1.0, 2.0, 4.0)
    invariance_t: tuple[float, ...] = (math.pi / 4, math.pi / 2)
    metric_i_max: int = 20
    metric_grid: int = 2048


@dataclass(frozen=True)
class OutputBlock:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class ExperimentConfig:
    domain: DomainBlock = field(default_factory=DomainBlock)
    family: FamilyBlock = field(default_factory=FamilyBlock)
    solver: SolverBlock = field(default_factory=SolverBlock)
    experiment: ExperimentBlock = field(default_factory=ExperimentBlock)
    output: OutputBlock = field(default_factory=OutputBlock)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        from dataclasses import replace

        return replace(self, experiment=replace(self.experiment, seed=int(seed)))


SECTIONS = {
    "domain": DomainBlock,
    "family": FamilyBlock,
    "solver": SolverBlock,
    "experiment": ExperimentBlock,
    "output": OutputBlock,
}


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"\[(.+)\]$", s)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if current == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", s):
            return i
    return None


def _convert(raw: str, typ, key: str):
    raw = raw.strip()
    origin = getattr(typ, "__origin__", None)
    if origin is tuple or typ in ("tuple[float, ...]", "tuple[str, ...]"):
        inner = typ.__args__[0] if origin is tuple else (float if "float" in typ else str)
        parts = [x.strip() for x in raw.split(",") if x.strip()]
        return tuple(_convert(x, inner, key) for x in parts)
    if typ in (int, "int"):
        val = float(raw)
        if val != int(val):
            raise ValueError(f"expected an integer, got {raw!r}")
        return int(val)
    if typ in (float, "float"):
        val = float(raw)
        if not math.isfinite(val):
            raise ValueError(f"expected a finite number, got {raw!r}")
        return val
    return raw


def _types(cls) -> dict:
    import typing

    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in fields(cls)}


def parse_config(text: str) -> ExperimentConfig:
    """Parse INI text; unknown sections/keys and invalid values raise ConfigurationError with line numbers."""
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"unparseable config: {exc}", line=getattr(exc, "lineno", None)) from exc
    blocks = {}
    for name in cp.sections():
        if name not in SECTIONS:
            raise ConfigurationError(f"unknown section [{name}]", key=name, line=_line_of(text, name, None))
    for name, cls in SECTIONS.items():
        types = _types(cls)
        kwargs = {}
        if cp.has_section(name):
            for key, raw in cp.items(name):
                if key not in types:
                    raise ConfigurationError(f"unknown key in [{name}]", key=key, line=_line_of(text, name, key))
                try:
                    kwargs[key] = _convert(raw, types[key], key)
                except ValueError as exc:
                    raise ConfigurationError(str(exc), key=f"{name}.{key}", line=_line_of(text, name, key)) from exc
        blocks[name] = cls(**kwargs)
    cfg = ExperimentConfig(**blocks)
    validate(cfg, text)
    return cfg


def validate(cfg: ExperimentConfig, text: str = "") -> None:
    def fail(section, key, msg):
        raise ConfigurationError(msg, key=f"{section}.{key}", line=_line_of(text, section, key) if text else None)

    d, f, s, e = cfg.domain, cfg.family, cfg.solver, cfg.experiment
    if d.dim not in (1, 2):
        fail("domain", "dim", "dim must be 1 or 2")
    if len(d.lengths) != d.dim or min(d.lengths) <= 0:
        fail("domain", "lengths", "need one positive length per axis")
    if d.N < 1:
        fail("domain", "N", "N must be positive")
    if d.quad_oversample < 4:
        fail("domain", "quad_oversample", "quad_oversample must be at least 4")
    if f.name not in FAMILIES:
        fail("family", "name", f"family must be one of {FAMILIES}")
    if not 0 < f.kappa < 4:
        fail("family", "kappa", "kappa must lie in (0, 4)")
    if len(f.g) > 4:
        fail("family", "g", "g must have degree at most 3")
    if f.a not in ("sin", "cos", "quasiperiodic"):
        fail("family", "a", "a must be sin, cos or quasiperiodic")
    if not f.eps or any(not 0 <= x <= 1 for x in f.eps):
        fail("family", "eps", "eps values must lie in [0, 1]")
    if not f.phases:
        fail("family", "phases", "need at least one phase")
    if s.dt <= 0:
        fail("solver", "dt", "dt must be positive")
    if s.method not in ("rk4", "exp_mode"):
        fail("solver", "method", "method must be rk4 or exp_mode")
    if s.horizon <= 0:
        fail("solver", "horizon", "horizon must be positive")
    if s.record_every < 1:
        fail("solver", "record_every", "record_every must be >= 1")
    if s.blowup_ceiling <= 0:
        fail("solver", "blowup_ceiling", "blowup_ceiling must be positive")
    if e.kind not in EXPERIMENTS:
        fail("experiment", "kind", f"unknown experiment {e.kind!r}; choose from {EXPERIMENTS}")
    if e.ensemble_count < 1:
        fail("experiment", "ensemble_count", "ensemble_count must be positive")
    if e.ensemble_sampling not in ("grid", "sphere"):
        fail("experiment", "ensemble_sampling", "sampling must be grid or sphere")
    if e.ensemble_radius < 0:
        fail("experiment", "ensemble_radius", "radius must be nonnegative")
    if len(e.u0) > d.N or len(e.u1) > d.N:
        fail("experiment", "u0", "more initial coefficients than modes")
    if not 0 < e.alpha1 <= 0.45:
        fail("experiment", "alpha1", "alpha1 must lie in (0, 0.45]")
    if e.hull_count < 1:
        fail("experiment", "hull_count", "hull_count must be positive")
    if e.metric_i_max < 1 or e.metric_grid < 4:
        fail("experiment", "metric_i_max", "metric truncation and grid must be positive")
    if e.kind == "semicontinuity" and 0.0 not in f.eps:
        fail("family", "eps", "semicontinuity needs eps = 0 in the grid")


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(_fmt(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical INI text; parse_config(serialize_config(c)) == c."""
    lines = []
    for name in SECTIONS:
        block = getattr(cfg, name)
        lines.append(f"[{name}]")
        for f in fields(block):
            lines.append(f"{f.name} = {_fmt(getattr(block, f.name))}")
        lines.append("")
    return "\n".join(lines)
