"""Experiment configuration: one strict JSON document.

Every key is checked against the schema below; unknown keys anywhere in the
tree raise ConfigurationError so a typo in a hyperparameter name cannot fall
back to a default silently. The seed is mandatory (no wall-clock seeding).
The resolved configuration (defaults applied) hashes to a stable identifier
stamped into every artifact the harness writes.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError

# (expected type(s), default); REQUIRED means the key must be present
REQUIRED = object()

_SCHEMA = {
    "seed": (int, REQUIRED),
    "out_dir": (str, "runs"),
    "system": {
        "dt": ((int, float), 0.01),
    },
    "lqr": {
        "q": ((int, float), 10.0),
        "r": ((int, float), 0.1),
    },
    "sweep": {
        "steps": (list, [0.05, 0.05, 0.05, 0.05]),
        "bounds": (list, [0.15, 0.15, 0.15, 0.15]),
        "limit": (int, 200),
        "equilibrium_shift": ((int, float), 0.3),
    },
    "dataset": {
        "horizon": ((int, float), 10.0),
        "x0_scale": ((int, float), 0.05),
        "n_scenarios": (int, 9),
        "bias_fraction": ((int, float), 0.20),
        "max_windows_per_trajectory": ((int, type(None)), None),
    },
    "gan": {
        "w": (int, 5),
        "lam": ((int, float), 1.0),
        "epochs": (int, 120),
        "batch_size": (int, 32),
        "hidden_g": (int, 64),
        "hidden_d": (int, 64),
        "lr_g": ((int, float), 1e-3),
        "lr_d": ((int, float), 1e-3),
        "d_steps": (int, 1),
        "non_saturating": (bool, False),
        "d_gate": ((int, float), 0.6),
        "d_input_noise": ((int, float), 0.0),
    },
    "comm": {
        "mean_delay": ((int, float), 0.0),
        "jitter_fraction": ((int, float), 0.0),
    },
    "defense": {
        "eps": ((int, float), 0.5),
        "d": (int, 4),
        "hold_steps": (int, 0),
        "n_sigma": ((int, float), 3.0),
    },
    "scenarios": (list, []),
}

_SCENARIO_SCHEMA = {
    "id": (str, REQUIRED),
    "kind": (str, REQUIRED),
    "links": (list, REQUIRED),
    "t_start": ((int, float), REQUIRED),
    "t_end": ((int, float), REQUIRED),
    "bias_fraction": ((int, float), 0.0),
    "seed": (int, 0),
    "horizon": ((int, float), 8.0),
    "x0_scale": ((int, float), 0.05),
}


def _check_leaf(path: str, value, spec):
    expected, _ = spec
    if expected is int and isinstance(value, bool):
        raise ConfigurationError(f"{path}: expected int, got bool")
    if not isinstance(value, expected):
        raise ConfigurationError(
            f"{path}: expected {expected}, got {type(value).__name__}"
        )


def _resolve(raw: dict, schema: dict, path: str = "") -> dict:
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{path or 'config'}: expected an object")
    for key in raw:
        if key not in schema:
            raise ConfigurationError(f"unknown config key '{path}{key}'")
    out = {}
    for key, spec in schema.items():
        here = f"{path}{key}"
        if isinstance(spec, dict):
            out[key] = _resolve(raw.get(key, {}), spec, path=f"{here}.")
            continue
        if key in raw:
            _check_leaf(here, raw[key], spec)
            out[key] = raw[key]
        elif spec[1] is REQUIRED:
            raise ConfigurationError(f"missing required config key {here!r}")
        else:
            out[key] = spec[1]
    return out


@dataclass(frozen=True)
class ScenarioSpec:
    id: str
    kind: str
    links: tuple[tuple[int, int], ...]
    t_start: float
    t_end: float
    bias_fraction: float = 0.0
    seed: int = 0
    horizon: float = 8.0
    x0_scale: float = 0.05


@dataclass
class ExperimentConfig:
    """Validated, fully defaulted experiment description."""

    data: dict
    scenarios: list[ScenarioSpec] = field(default_factory=list)
    hash: str = ""

    def __getitem__(self, key):
        return self.data[key]

    def scenario(self, scenario_id: str) -> ScenarioSpec:
        for sc in self.scenarios:
            if sc.id == scenario_id:
                return sc
        known = [sc.id for sc in self.scenarios]
        raise ConfigurationError(
            f"unknown scenario {scenario_id!r}; configured: {known}"
        )


def _parse_scenarios(entries: list) -> list[ScenarioSpec]:
    specs = []
    seen = set()
    for i, entry in enumerate(entries):
        resolved = _resolve(entry, _SCENARIO_SCHEMA, path=f"scenarios[{i}].")
        links = []
        for pair in resolved["links"]:
            if (
                not isinstance(pair, list)
                or len(pair) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in pair)
            ):
                raise ConfigurationError(
                    f"scenarios[{i}].links entries must be [sender, receiver] pairs"
                )
            links.append((pair[0], pair[1]))
        if resolved["id"] in seen:
            raise ConfigurationError(f"duplicate scenario id {resolved['id']!r}")
        seen.add(resolved["id"])
        specs.append(
            ScenarioSpec(
                id=resolved["id"],
                kind=resolved["kind"],
                links=tuple(links),
                t_start=float(resolved["t_start"]),
                t_end=float(resolved["t_end"]),
                bias_fraction=float(resolved["bias_fraction"]),
                seed=resolved["seed"],
                horizon=float(resolved["horizon"]),
                x0_scale=float(resolved["x0_scale"]),
            )
        )
    return specs


def config_hash(resolved: dict) -> str:
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def parse_config(raw: dict) -> ExperimentConfig:
    resolved = _resolve(raw, _SCHEMA)
    scenarios = _parse_scenarios(resolved["scenarios"])
    for sc in scenarios:
        if sc.kind == "fdi" and sc.bias_fraction <= 0.0:
            raise ConfigurationError(
                f"scenario {sc.id!r}: FDI needs a positive bias_fraction"
            )
    return ExperimentConfig(
        data=resolved, scenarios=scenarios, hash=config_hash(resolved)
    )


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid JSON: {exc}")
    return parse_config(raw)
