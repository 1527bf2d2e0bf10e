"""Versioned JSON files for fitted attack models: ``{kind, version, params}``."""
from __future__ import annotations

import json
from pathlib import Path

from ..errors import ConfigError, DataError
from .abtest import AbAttack
from .active import SecondTokenOracle
from .boost import BoostEnsemble
from .multiclass import SignatureClassifier

SCHEMA_VERSION = 1


def _kind(model) -> tuple[str, str]:
    if isinstance(model, AbAttack):
        return "gmm", "ab"
    if isinstance(model, SignatureClassifier):
        return model.arch, "multiclass"
    if isinstance(model, BoostEnsemble):
        return "boost", "boost"
    if isinstance(model, SecondTokenOracle):
        return "oracle", "second-token"
    raise ConfigError("unknown-model", type(model).__name__)


def model_to_json(model) -> str:
    kind, task = _kind(model)
    return json.dumps({"kind": kind, "version": SCHEMA_VERSION, "task": task, "params": model.to_dict()}, sort_keys=True)


def model_from_json(text: str):
    try:
        d = json.loads(text)
        kind, version, task, params = d["kind"], d["version"], d["task"], d["params"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DataError("bad-model-file", str(exc)) from None
    if version != SCHEMA_VERSION:
        raise DataError("bad-model-version", f"expected {SCHEMA_VERSION}, got {version}")
    loaders = {
        ("gmm", "ab"): AbAttack.from_dict,
        ("gmm", "multiclass"): SignatureClassifier.from_dict,
        ("convnet", "multiclass"): SignatureClassifier.from_dict,
        ("boost", "boost"): BoostEnsemble.from_dict,
        ("oracle", "second-token"): SecondTokenOracle.from_dict,
    }
    try:
        return loaders[(kind, task)](params)
    except KeyError:
        raise DataError("bad-model-file", f"unknown kind/task {kind}/{task}") from None


def save_model(model, path: str | Path) -> None:
    Path(path).write_text(model_to_json(model))


def load_model(path: str | Path):
    path = Path(path)
    if not path.exists():
        raise ConfigError("model-not-found", str(path))
    return model_from_json(path.read_text())
