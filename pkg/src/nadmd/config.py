"""Experiment configuration: a single JSON document checked against
:data:`SCHEMA` and then against the chosen system's dimensions."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .dmd import RankPolicy
from .errors import ConfigError
from .manifold import InterpolantSpec
from .observables import ObservableSpec
from .signals import InputSignal, ParameterGrid, cartesian_grid, signal_from_declaration
from .systems import IntegratorConfig, ReferenceSystem, get_system

__all__ = ["SCHEMA", "ExperimentConfig", "load_config", "parse_config", "preset_names"]

_interval = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}
_box = {"type": "array", "items": _interval, "minItems": 1}
_signal = {
    "type": "object",
    "required": ["kind"],
    "properties": {"kind": {"type": "string"}},
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "nadmd experiment",
    "type": "object",
    "required": ["system", "dt", "n_snap", "observable", "test"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "system": {"enum": ["linear_scalar", "predator_prey", "forced_oscillator", "heat_1d"]},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "nodes": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "points_per_dim": {"type": "integer", "minimum": 2},
        "n_snap": {"type": "integer", "minimum": 1},
        "state_box": _box,
        "param_bounds": _box,
        "substeps": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "observable": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["identity", "monomials"]},
                "degree": {"type": "integer", "minimum": 1},
                "constant": {"type": "boolean"},
            },
        },
        "rank": {
            "type": "object",
            "required": ["policy", "value"],
            "additionalProperties": False,
            "properties": {
                "policy": {"enum": ["fixed", "energy"]},
                "value": {"type": "number"},
            },
        },
        "ref_node": {"type": ["integer", "null"], "minimum": 0},
        "interpolant": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "scheme": {"enum": ["tensor_lagrange", "nearest"]},
                "stencil": {
                    "oneOf": [
                        {"enum": ["full", "cell"]},
                        {"type": "array", "items": {"type": "integer", "minimum": 0},
                         "minItems": 1},
                    ]
                },
                "allow_extrapolation": {"type": "boolean"},
                "operator": {"enum": ["manifold", "entrywise"]},
            },
        },
        "test": {
            "type": "object",
            "required": ["signals", "s0", "T"],
            "additionalProperties": False,
            "properties": {
                "signals": {"type": "array", "items": _signal, "minItems": 1},
                "s0": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "t0": {"type": "number"},
                "T": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dts": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
            },
        },
        "output": {"type": "string"},
    },
}


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated experiment settings with the library objects they describe."""

    name: str
    system: ReferenceSystem
    dt: float
    nodes: tuple[int, ...]
    grid: ParameterGrid
    n_snap: int
    state_box: np.ndarray
    integrator: IntegratorConfig
    seed: int
    observable: ObservableSpec
    rank: RankPolicy
    ref_node: int | None
    interpolant: InterpolantSpec
    signals: tuple[InputSignal, ...]
    s0: np.ndarray
    t0: float
    T: float
    sweep_dts: tuple[float, ...]
    output: str
    raw: dict

    def with_overrides(self, **kw) -> "ExperimentConfig":
        """Re-parse the underlying document with top-level keys replaced."""
        doc = dict(self.raw)
        doc.update({k: v for k, v in kw.items() if v is not None})
        return parse_config(doc)


def parse_config(doc: dict) -> ExperimentConfig:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        msg = "; ".join(f"{_path(e.absolute_path)}: {e.message}" for e in errors[:5])
        raise ConfigError(f"invalid config: {msg}")

    system = get_system(doc["system"])
    nodes = tuple(doc.get("nodes", system.nodes))
    if len(nodes) != system.n_channels:
        raise ConfigError(
            f"nodes: {len(nodes)} entries for {system.n_channels} input channel(s) "
            f"{list(system.channel_labels)}"
        )
    n_par = sum(nodes)
    bounds = np.asarray(doc.get("param_bounds", system.param_bounds), dtype=float)
    if "param_bounds" not in doc and n_par != len(bounds):
        raise ConfigError(f"nodes: default parameter bounds have {len(bounds)} dimensions, "
                          f"nodes {list(nodes)} need {n_par}; give param_bounds explicitly")
    if len(bounds) != n_par:
        raise ConfigError(f"param_bounds: {len(bounds)} intervals, nodes {list(nodes)} "
                          f"need {n_par}")
    if np.any(bounds[:, 0] >= bounds[:, 1]):
        raise ConfigError("param_bounds: every interval needs lower < upper")
    box = np.asarray(doc.get("state_box", system.state_box), dtype=float)
    if len(box) != system.state_dim:
        raise ConfigError(f"state_box: {len(box)} intervals for state_dim {system.state_dim}")
    if np.any(box[:, 0] > box[:, 1]):
        raise ConfigError("state_box: every interval needs lower <= upper")

    obs = doc["observable"]
    observable = ObservableSpec(kind=obs["kind"], state_dim=system.state_dim,
                                degree=obs.get("degree", 1), constant=obs.get("constant", False))
    rank = doc.get("rank", {"policy": "energy", "value": 1.0 - 1e-10})
    try:
        policy = RankPolicy(rank["policy"], rank["value"])
    except ValueError as exc:
        raise ConfigError(f"rank: {exc}") from None
    ip = dict(doc.get("interpolant", {}))
    interpolant = InterpolantSpec(**ip)

    test = doc["test"]
    if len(test["signals"]) != system.n_channels:
        raise ConfigError(f"test.signals: {len(test['signals'])} declared, system has "
                          f"{system.n_channels} channel(s) {list(system.channel_labels)}")
    signals = []
    for i, (decl, label) in enumerate(zip(test["signals"], system.channel_labels)):
        try:
            signals.append(signal_from_declaration(decl, label=label))
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"test.signals[{i}]: {exc}") from None
    s0 = np.asarray(test["s0"], dtype=float)
    if len(s0) != system.state_dim:
        raise ConfigError(f"test.s0: length {len(s0)}, state_dim is {system.state_dim}")

    grid = cartesian_grid(bounds, doc.get("points_per_dim", 3))
    ref = doc.get("ref_node")
    if ref is not None and ref >= len(grid):
        raise ConfigError(f"ref_node: {ref} out of range for {len(grid)} grid points")
    return ExperimentConfig(
        name=doc.get("name", doc["system"]),
        system=system,
        dt=float(doc["dt"]),
        nodes=nodes,
        grid=grid,
        n_snap=int(doc["n_snap"]),
        state_box=box,
        integrator=IntegratorConfig(doc.get("substeps", system.substeps)),
        seed=int(doc.get("seed", 0)),
        observable=observable,
        rank=policy,
        ref_node=ref,
        interpolant=interpolant,
        signals=tuple(signals),
        s0=s0,
        t0=float(test.get("t0", 0.0)),
        T=float(test["T"]),
        sweep_dts=tuple(float(x) for x in doc.get("sweep", {}).get("dts", ())),
        output=doc.get("output", f"runs/{doc.get('name', doc['system'])}"),
        raw=doc,
    )


def preset_names() -> list[str]:
    files = resources.files("nadmd").joinpath("presets")
    return sorted(p.name[:-4] for p in files.iterdir() if p.name.endswith(".cfg"))


def load_config(ref) -> ExperimentConfig:
    """Load a config from a file path or a shipped preset name (``e1``..)."""
    path = Path(ref)
    if path.is_file():
        text = path.read_text()
    else:
        preset = resources.files("nadmd").joinpath("presets", f"{ref}.cfg")
        if not preset.is_file():
            raise ConfigError(f"{ref}: no such file or preset (presets: {preset_names()})")
        text = preset.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{ref}: not valid JSON: {exc}") from None
    return parse_config(doc)
