"""Run configuration, benchmark presets and the flat TOML config format."""

from __future__ import annotations

import dataclasses
import json
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .geometry import QuarterRing, Rectangle


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    preset: str = "cantilever"
    geometry: str = "rectangle"
    width: float = 2.0
    height: float = 1.0
    r_in: float = 1.0
    r_out: float = 2.0
    nelems: int = 128
    p: int = 2
    d: int = 2
    alpha_in: float = 1.0
    alpha_out: float = 1e-4
    l: float = 5.0
    gamma: float = 1e-4
    E: float = 1.0
    nu: float = 1.0 / 3.0
    eps_theta_deg: float = 1.0
    max_iter: int = 200
    phi_init: float = -1.0
    dirichlet_edges: tuple[str, ...] = ("xi0",)
    load_location: tuple[float, float] = (1.0, 0.5)
    load_direction: tuple[float, float] = (0.0, -1.0)
    load_magnitude: float = 1.0
    solver_tol: float = 1e-10
    export_stride: int = 10
    export_resolution: int = 129
    out_dir: str = "out"
    seed: int = 0  # reserved

    def geometry_map(self):
        if self.geometry == "rectangle":
            return Rectangle(self.width, self.height)
        return QuarterRing(self.r_in, self.r_out)

    def replace(self, **changes) -> RunConfig:
        return validate(dataclasses.replace(self, **changes))


PRESETS = {
    "cantilever": dict(
        geometry="rectangle",
        width=2.0,
        height=1.0,
        dirichlet_edges=("xi0",),
        load_location=(1.0, 0.5),
        load_direction=(0.0, -1.0),
        load_magnitude=1.0,
    ),
    "quarter_ring": dict(
        geometry="quarter_ring",
        r_in=1.0,
        r_out=2.0,
        dirichlet_edges=("xi0",),
        load_location=(1.0, 1.0),
        load_direction=(-1.0, 0.0),
        load_magnitude=1.0,
    ),
}

_FIELDS = {f.name: f for f in fields(RunConfig)}
_EDGES = {"xi0", "xi1", "eta0", "eta1", "left", "right", "bottom", "top"}


def _coerce(name, value):
    default = getattr(RunConfig, name)
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{name}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if isinstance(value, str):
            value = [value]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name}: expected a list, got {value!r}")
        if default and isinstance(default[0], str):
            return tuple(str(v) for v in value)
        try:
            return tuple(float(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name}: expected a list of numbers, got {value!r}") from None
    return value


def validate(cfg: RunConfig) -> RunConfig:
    """Check all constraints and report every violation at once."""
    errs = []
    if cfg.preset not in PRESETS:
        errs.append(f"preset: unknown preset {cfg.preset!r} (choose from {sorted(PRESETS)})")
    if cfg.geometry not in ("rectangle", "quarter_ring"):
        errs.append(f"geometry: must be 'rectangle' or 'quarter_ring', got {cfg.geometry!r}")
    if cfg.width <= 0 or cfg.height <= 0:
        errs.append("width, height: must be positive")
    if not 0 < cfg.r_in < cfg.r_out:
        errs.append("r_in, r_out: need 0 < r_in < r_out")
    if cfg.p < 1:
        errs.append(f"p: solution degree must be >= 1, got {cfg.p}")
    if cfg.d < 1:
        errs.append(f"d: level-set degree must be >= 1, got {cfg.d}")
    if max(cfg.p, cfg.d) > 15:
        errs.append("p, d: degrees above 15 are not supported")
    if cfg.nelems < 2:
        errs.append(f"nelems: need >= 2 elements per direction, got {cfg.nelems}")
    if not 0 < cfg.alpha_out < cfg.alpha_in:
        errs.append("alpha_out, alpha_in: need 0 < alpha_out < alpha_in")
    if cfg.l < 0:
        errs.append("l: must be >= 0")
    if cfg.gamma < 0:
        errs.append("gamma: must be >= 0")
    if cfg.E <= 0:
        errs.append("E: must be positive")
    if not 0 <= cfg.nu < 0.5:
        errs.append("nu: must lie in [0, 0.5)")
    if cfg.eps_theta_deg <= 0:
        errs.append("eps_theta_deg: must be positive")
    if cfg.max_iter < 1:
        errs.append("max_iter: must be >= 1")
    if not cfg.dirichlet_edges or not set(cfg.dirichlet_edges) <= _EDGES:
        errs.append(f"dirichlet_edges: entries must be among {sorted(_EDGES)}")
    if len(cfg.load_location) != 2 or not all(0 <= v <= 1 for v in cfg.load_location):
        errs.append("load_location: need two parametric coordinates in [0, 1]")
    if len(cfg.load_direction) != 2 or not math.isclose(math.hypot(*cfg.load_direction), 1.0, abs_tol=1e-12):
        errs.append("load_direction: need a unit 2-vector")
    if cfg.solver_tol <= 0:
        errs.append("solver_tol: must be positive")
    if cfg.export_stride < 0:
        errs.append("export_stride: must be >= 0 (0 exports only the final state)")
    if cfg.export_resolution < 2:
        errs.append("export_resolution: must be >= 2")
    if errs:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(errs))
    return cfg


def _apply(values: dict, source: str) -> dict:
    unknown = sorted(set(values) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"{source}: unknown key(s) {', '.join(unknown)}")
    return {k: _coerce(k, v) for k, v in values.items()}


def parse_config(path=None, preset: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Resolve a configuration from preset, config file and flags (later wins).

    Parameters
    ----------
    path : str or Path, optional
        Flat TOML file of ``key = value`` pairs.
    preset : str, optional
        Benchmark preset; overrides a ``preset`` key in the file.
    overrides : dict, optional
        Values from command-line flags; ``None`` entries are ignored.
    """
    file_values = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"{path}: cannot read config ({exc})") from exc
        try:
            raw = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: parse error: {exc}") from exc
        nested = [k for k, v in raw.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f"{path}: config must be flat, found table(s) {', '.join(nested)}")
        file_values = _apply(raw, str(path))
    flag_values = _apply({k: v for k, v in (overrides or {}).items() if v is not None}, "flags")

    name = preset or flag_values.get("preset") or file_values.get("preset") or RunConfig.preset
    if name not in PRESETS:
        raise ConfigError(f"preset: unknown preset {name!r} (choose from {sorted(PRESETS)})")
    values = dict(PRESETS[name], preset=name)
    values.update(file_values)
    values.update(flag_values)
    values["preset"] = name
    return validate(RunConfig(**values))


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    return "[" + ", ".join(_toml_value(x) for x in v) + "]"


def serialize_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name} = {_toml_value(getattr(cfg, f.name))}\n" for f in fields(cfg))


def write_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(serialize_config(cfg))
