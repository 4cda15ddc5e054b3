"""Experiment configs: environment keys at top level, plus [experiment] and [brw] tables."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .eigen import BRWModel, brw_model_from_mapping
from .env import DEFAULT_GRID, ConfigError, EnvironmentSpec, env_from_mapping, load_document

EXPERIMENT_KEYS = frozenset({
    "model", "t", "trials", "seed", "prune_window", "dt", "hard_cap",
    "t_end", "dx", "level", "fit_range", "t0", "n_grid",
})


@dataclass(frozen=True, eq=False)
class Config:
    text: str
    source: str
    env: EnvironmentSpec | None
    brw: BRWModel | None
    experiment: dict = field(default_factory=dict)

    def get(self, key: str, default: Any = None) -> Any:
        return self.experiment.get(key, default)


def load_config(path: str | Path | None = None, *, text: str | None = None,
                source: str | None = None, n_grid: int = DEFAULT_GRID) -> Config:
    if text is None:
        if path is None:
            raise ValueError("need a path or text")
        try:
            text = Path(path).read_text(encoding="utf-8")
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        source = source or str(path)
    doc = load_document(text)
    experiment = doc.pop("experiment", {})
    brw_doc = doc.pop("brw", None)
    if not isinstance(experiment, dict):
        raise ConfigError("[experiment] must be a table")
    unknown = set(experiment) - EXPERIMENT_KEYS
    if unknown:
        raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
    brw = None
    if brw_doc is not None:
        if not isinstance(brw_doc, dict):
            raise ConfigError("[brw] must be a table")
        brw = brw_model_from_mapping(brw_doc)
    env = env_from_mapping(doc, n_grid) if doc or brw is None else None
    return Config(text, source or "<text>", env, brw, dict(experiment))
