"""Run configuration files (YAML) and run manifests.

A config file has the sections ``scenario``, ``dataset``, ``codec``,
``search`` and ``arch`` plus a top-level ``seed``. Unset per-section seeds
follow the top-level one. A manifest stores the fully resolved config next to
library versions and the command line, and is itself accepted as a config.
"""

from __future__ import annotations

import dataclasses
import platform
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import __version__
from .channel import PRESETS, ScenarioConfig
from .evaluate import ArchitectureConfig
from .search import SearchConfig

MANIFEST_VERSION = 1

# keys of SearchConfig that live in the codec section of a config file
_CODEC_KEYS = {"cr": "cr", "bits": "quant_bits", "split": "split"}


@dataclass
class RunConfig:
    seed: int = 0
    preset: str | None = None
    count: int = 2000
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    search: SearchConfig = field(default_factory=SearchConfig)
    arch: ArchitectureConfig = field(default_factory=ArchitectureConfig)

    def to_dict(self) -> dict:
        search = self.search.to_dict()
        codec = {k: search.pop(v) for k, v in _CODEC_KEYS.items()}
        return {
            "seed": self.seed,
            "scenario": {"preset": self.preset, **self.scenario.to_dict()},
            "dataset": {"count": self.count},
            "codec": codec,
            "search": search,
            "arch": self.arch.to_dict(),
        }


def _check_keys(section: str, given: dict, allowed) -> None:
    unknown = set(given) - set(allowed)
    if unknown:
        raise ValueError(f"config section {section!r}: unknown keys {sorted(unknown)}")


def _field_names(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def build_config(raw: dict | None, seed: int | None = None) -> RunConfig:
    """Resolve a parsed config mapping. ``seed`` overrides the top-level seed."""
    raw = dict(raw or {})
    if "manifest_version" in raw:
        raw = dict(raw["config"])
    _check_keys("<top>", raw, {"seed", "scenario", "dataset", "codec", "search", "arch"})
    top_seed = int(raw.get("seed", 0) if seed is None else seed)

    scen = dict(raw.get("scenario") or {})
    preset_name = scen.pop("preset", None)
    _check_keys("scenario", scen, _field_names(ScenarioConfig))
    if seed is not None or "seed" not in scen:
        scen["seed"] = top_seed
    if preset_name:
        if preset_name not in PRESETS:
            raise ValueError(f"unknown scenario preset {preset_name!r}; choose from {sorted(PRESETS)}")
        scen = {**PRESETS[preset_name], **scen}
    scenario = ScenarioConfig(**scen)

    dataset = dict(raw.get("dataset") or {})
    _check_keys("dataset", dataset, {"count"})
    count = int(dataset.get("count", 2000))
    if count < 1:
        raise ValueError("dataset.count must be >= 1")

    codec = dict(raw.get("codec") or {})
    _check_keys("codec", codec, _CODEC_KEYS)
    search = dict(raw.get("search") or {})
    _check_keys("search", search, _field_names(SearchConfig) - set(_CODEC_KEYS.values()))
    search.update({_CODEC_KEYS[k]: v for k, v in codec.items()})
    if seed is not None or "seed" not in search:
        search["seed"] = top_seed
    if "op_set" in search:
        search["op_set"] = tuple(search["op_set"])

    arch = dict(raw.get("arch") or {})
    _check_keys("arch", arch, _field_names(ArchitectureConfig))
    if seed is not None or "seed" not in arch:
        arch["seed"] = top_seed

    return RunConfig(top_seed, preset_name, count, scenario, SearchConfig(**search), ArchitectureConfig(**arch))


def load_config(path: str | Path | None, seed: int | None = None) -> RunConfig:
    if path is None:
        return build_config({}, seed)
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    raw = yaml.safe_load(p.read_text(encoding="utf-8"))
    if raw is not None and not isinstance(raw, dict):
        raise ValueError(f"{p}: top level must be a mapping")
    return build_config(raw, seed)


def versions() -> dict[str, str]:
    return {
        "csinas": __version__,
        "numpy": np.__version__,
        "pyyaml": yaml.__version__,
        "python": platform.python_version(),
    }


def manifest(cfg: RunConfig, command: str, argv: list[str] | None = None, extra: dict | None = None) -> dict[str, Any]:
    return {
        "manifest_version": MANIFEST_VERSION,
        "command": command,
        "argv": list(sys.argv[1:] if argv is None else argv),
        "versions": versions(),
        "seeds": {"global": cfg.seed, "scenario": cfg.scenario.seed, "search": cfg.search.seed, "arch": cfg.arch.seed},
        "adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
        "config": cfg.to_dict(),
        **(extra or {}),
    }


def dump_yaml(obj: Any) -> str:
    return yaml.safe_dump(obj, sort_keys=False, default_flow_style=None)


def write_manifest(path: str | Path, cfg: RunConfig, command: str, argv=None, extra=None) -> None:
    Path(path).write_text(dump_yaml(manifest(cfg, command, argv, extra)), encoding="utf-8")
