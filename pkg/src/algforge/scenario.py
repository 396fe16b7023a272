"""Scenario documents: one JSON file bundles an algebroid, an optional
connection, an optional field configuration, gauge parameters, and
sampling settings.  Bundled examples live in ``algforge/scenarios``."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .algebroid import LieAlgebroid, algebroid_from_json
from .connections import LinearConnection, connection_from_json, flat_connection
from .exprcore import DEFAULT_BOX, DEFAULT_POINTS, DEFAULT_SEED
from .gauge import FieldConfig, GaugeParameter, config_from_json, parameter_from_exprs

__all__ = ["Scenario", "ScenarioError", "load_scenario", "scenario_from_doc", "bundled_scenario_path"]


class ScenarioError(Exception):
    pass


@dataclass
class Scenario:
    name: str
    algebroid: LieAlgebroid
    connection: LinearConnection
    config: FieldConfig | None
    params: dict = field(default_factory=dict)  # "epsilon" | "theta" | "eta" -> GaugeParameter
    box: tuple = DEFAULT_BOX
    count: int = DEFAULT_POINTS
    seed: int = DEFAULT_SEED
    digest: str = ""

    def require_config(self, check_id: str) -> FieldConfig:
        if self.config is None:
            raise ScenarioError(f"{check_id} needs a field configuration in the scenario")
        return self.config

    def require_param(self, check_id: str, name: str) -> GaugeParameter:
        p = self.params.get(name)
        if p is None:
            raise ScenarioError(f"{check_id} needs the gauge parameter {name!r} in the scenario")
        return p


def scenario_from_doc(doc: dict, name: str = "") -> Scenario:
    try:
        L = algebroid_from_json(doc["algebroid"])
    except KeyError:
        raise ScenarioError("scenario document needs an 'algebroid' block") from None
    conn = (
        connection_from_json(L, doc["connection"]) if "connection" in doc else flat_connection(L)
    )
    config = None
    params: dict = {}
    if "config" in doc:
        config = config_from_json(L, doc["config"])
        if "epsilon" in doc["config"]:
            params["epsilon"] = parameter_from_exprs(L, config.d, doc["config"]["epsilon"])
    d = config.d if config is not None else int(doc.get("spacetime_dim", 2))
    for pname, exprs in doc.get("parameters", {}).items():
        params[pname] = parameter_from_exprs(L, d, exprs)
    sampling = doc.get("sampling", {})
    box = tuple(sampling.get("box", DEFAULT_BOX))
    if len(box) != 2 or not box[0] < box[1]:
        raise ScenarioError(f"sampling box must be [lo, hi], got {box}")
    digest = hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]
    return Scenario(
        name=doc.get("name", name),
        algebroid=L,
        connection=conn,
        config=config,
        params=params,
        box=box,
        count=int(sampling.get("count", DEFAULT_POINTS)),
        seed=int(sampling.get("seed", DEFAULT_SEED)),
        digest=digest,
    )


def load_scenario(path: str | Path) -> Scenario:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as err:
        raise ScenarioError(f"{p}: invalid JSON at line {err.lineno}, column {err.colno}") from None
    except OSError as err:
        raise ScenarioError(f"{p}: {err.strerror}") from None
    try:
        return scenario_from_doc(doc, name=p.stem)
    except (ValueError, KeyError, TypeError) as err:
        raise ScenarioError(f"{p}: {err}") from None


def bundled_scenario_path(name: str) -> Path:
    """Path of a bundled scenario ('so3_flat', 'broken_so3', ...)."""
    base = resources.files("algforge") / "scenarios" / f"{name}.json"
    return Path(str(base))
