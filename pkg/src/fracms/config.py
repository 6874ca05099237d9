"""Run configuration: a TOML file whose keys are flattened to ``section.name``.

Every key has a typed default; unknown keys are rejected so that a typo never
silently falls back to a default. Time is given in days and years.
"""
from __future__ import annotations

import math
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .fine_solver import CG_RTOL, DAY, DIRECT_SOLVE_LIMIT, YEAR, DirichletBC, TimeGrid
from .mesh import LEFT, CoarseGrid, FineMesh, build_coarse_grid, read_mesh
from .offline import RANK_TOL
from .online import EnrichmentPolicy
from .physics import (
    ConstantCoefficients,
    FixedPermeability,
    LangmuirParams,
    NonlinearCoefficients,
    StressDependentPermeability,
)


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "mesh.source": "reference",
    "mesh.cells": 70,
    "mesh.lock_every": 7,
    "mesh.aperture": 0.01,
    "coarse.nx": 5,
    "coarse.ny": 5,
    "physics.model": "constant",
    "physics.permeability": "fixed",
    "physics.a_m": 0.8,
    "physics.b_m": 1.3e-7,
    "physics.a_f": 0.001,
    "physics.b_f": 1.0,
    "physics.phi": 0.04,
    "physics.phi_f": 0.001,
    "physics.D_k": 1e-7,
    "physics.D_i": 1e-8,
    "physics.D_s": 1e-7,
    "physics.kappa_f": 1e-12,
    "physics.mu": 2e-5,
    "physics.T": 413.0,
    "physics.R": 8.314,
    "physics.gamma": 1.0,
    "physics.s": 0.26e-3,
    "physics.c_mus": 0.25e-5,
    "physics.kappa0": 1e-18,
    "physics.p_c": 1e9,
    "physics.p_1": 1.8e9,
    "physics.alpha": 0.5,
    "physics.exponent": 0.5,
    "time.tau_days": 10.0,
    "time.t_max_years": 5.0,
    "initial.c0": 10000.0,
    "boundary.left": 5000.0,
    "offline.M_off": 4,
    "offline.snapshots": "full",
    "offline.M_i": 24,
    "offline.layers": 0,
    "offline.seed": 0,
    "offline.variant": "standard",
    "offline.include_constant": True,
    "online.enabled": False,
    "online.schedule": "warmup_then_every",
    "online.k": 30,
    "online.warmup": 5,
    "online.theta": 0.0,
    "online.iterations": 2,
    "online.replace_previous": True,
    "output.dir": "out",
    "output.export_years": [1.0, 3.0, 5.0],
    "output.field": "concentration",
    "sweep.key": "offline.M_off",
    "sweep.values": [1, 2, 4, 8, 12],
}

# numerical settings that are not configurable; they are echoed with every run and a
# configuration may repeat them (e.g. a resolved config fed back in) but not change them
FIXED: dict = {
    "solver.quadrature": "barycenter",
    "solver.direct_limit": DIRECT_SOLVE_LIMIT,
    "solver.cg_rtol": CG_RTOL,
    "solver.eigen_rank_tol": RANK_TOL,
}

CHOICES = {
    "physics.model": ("constant", "nonlinear"),
    "physics.permeability": ("fixed", "stress"),
    "offline.snapshots": ("full", "randomized"),
    "offline.variant": ("standard", "tau"),
    "online.schedule": ("every_k", "warmup_then_every"),
    "output.field": ("concentration", "pressure"),
}


def flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in tree.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(key, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        if key in CHOICES and value not in CHOICES[key]:
            raise ConfigError(f"{key}: must be one of {', '.join(CHOICES[key])}, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return list(value)
    return value


def resolve(overrides: dict | None = None) -> dict:
    """Defaults updated with ``overrides`` (nested or dotted), type-checked."""
    flat = flatten(overrides or {})
    unknown = sorted(set(flat) - set(DEFAULTS) - set(FIXED))
    if unknown:
        raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
    cfg = dict(DEFAULTS)
    for k, v in flat.items():
        if k in FIXED:
            if v != FIXED[k]:
                raise ConfigError(f"{k} is fixed at {FIXED[k]!r}")
            continue
        cfg[k] = _coerce(k, v, DEFAULTS[k])
    cfg.update(FIXED)
    _validate(cfg)
    return cfg


def _validate(cfg):
    positive = ["mesh.cells", "coarse.nx", "coarse.ny", "time.tau_days", "offline.M_i", "online.k"]
    for k in positive:
        if cfg[k] <= 0:
            raise ConfigError(f"{k} must be positive")
    for k in ["time.t_max_years", "offline.layers", "online.warmup", "online.iterations", "initial.c0"]:
        if cfg[k] < 0:
            raise ConfigError(f"{k} must be non-negative")
    if cfg["mesh.aperture"] <= 0:
        raise ConfigError("mesh.aperture must be positive")
    if not 0 <= cfg["online.theta"] < 1:
        raise ConfigError("online.theta must lie in [0, 1); 0 disables the adaptive rule")
    if cfg["offline.M_off"] < 1:
        raise ConfigError("offline.M_off must be at least 1")
    if cfg["sweep.key"] not in DEFAULTS:
        raise ConfigError(f"sweep.key {cfg['sweep.key']!r} is not a configuration key")


def load_config(path, overrides: dict | None = None) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"configuration file not found: {path}")
    try:
        with open(path, "rb") as fh:
            tree = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    flat = flatten(tree)
    flat.update(overrides or {})
    cfg = resolve(flat)
    if cfg["mesh.source"] not in ("reference",):
        mesh_path = Path(cfg["mesh.source"])
        if not mesh_path.is_absolute():
            mesh_path = (path.parent / mesh_path).resolve()
        cfg["mesh.source"] = str(mesh_path)
    return cfg


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return str(v)


def dumps(cfg: dict) -> str:
    """Resolved configuration as TOML, one section per prefix, keys sorted."""
    sections: dict = {}
    for k in sorted(cfg):
        sec, name = k.split(".", 1)
        sections.setdefault(sec, []).append((name, cfg[k]))
    parts = []
    for sec in sorted(sections):
        parts.append(f"[{sec}]")
        parts.extend(f"{n} = {_toml_value(v)}" for n, v in sections[sec])
        parts.append("")
    return "\n".join(parts)


def build_mesh(cfg) -> FineMesh:
    if cfg["mesh.source"] == "reference":
        from .scenarios import reference_mesh

        return reference_mesh(cfg["mesh.cells"], cfg["mesh.lock_every"] or None, cfg["mesh.aperture"])
    return read_mesh(cfg["mesh.source"])


def build_grid(cfg, mesh: FineMesh) -> CoarseGrid:
    x0, y0, x1, y1 = mesh.bounds
    return build_coarse_grid((x1 - x0, y1 - y0), cfg["coarse.nx"], cfg["coarse.ny"])


def build_model(cfg):
    p = {k.split(".", 1)[1]: v for k, v in cfg.items() if k.startswith("physics.")}
    if p["model"] == "constant":
        return ConstantCoefficients(p["a_m"], p["b_m"], p["a_f"], p["b_f"])
    if p["permeability"] == "fixed":
        perm = FixedPermeability(p["kappa0"])
    else:
        perm = StressDependentPermeability(p["kappa0"], p["p_c"], p["p_1"], p["alpha"], p["exponent"])
    return NonlinearCoefficients(
        p["phi"], p["phi_f"], p["D_k"], p["D_i"], p["D_s"], p["kappa_f"], p["mu"], p["T"], p["R"],
        p["gamma"], LangmuirParams(p["s"], p["c_mus"]), perm,
    )


def build_time(cfg) -> TimeGrid:
    return TimeGrid(cfg["time.tau_days"] * DAY, cfg["time.t_max_years"] * YEAR)


def build_bc(cfg, mesh: FineMesh) -> DirichletBC:
    return DirichletBC.from_markers(mesh, {LEFT: cfg["boundary.left"]})


def build_policy(cfg) -> EnrichmentPolicy | None:
    if not cfg["online.enabled"]:
        return None
    theta = cfg["online.theta"] or None
    return EnrichmentPolicy(cfg["online.schedule"], cfg["online.k"], cfg["online.warmup"], theta,
                            cfg["online.replace_previous"], cfg["online.iterations"])


def export_steps(cfg, grid: TimeGrid) -> list[int]:
    """Steps closest to the requested export times, plus the final step."""
    n = grid.n_steps
    days = cfg["time.tau_days"]
    steps = {min(n, max(0, int(math.floor(y * 365.0 / days + 0.5)))) for y in cfg["output.export_years"]}
    steps.add(n)
    return sorted(steps)
