"""YAML configuration for scenarios, engine parameters and evaluations.

Scenario file::

    workload:     {message_size_bytes: 1048576, duration_s: 50, seed: 7}
    disturbance:  {kind: D3_NIC, onset_s: 38, duration_s: 2.5,
                   magnitude_sigma: 6, latency_lag_ms: 80}
    engine:
      detection:  {threshold: 3.0, window_s: 5.0, baseline_s: 30.0}
      rca:        {alpha: 0.5, max_lag: 20}

Evaluation file: ``evaluation`` (trials, seed_base, workers, ablate),
``sampling`` (ranges, see :class:`ScenarioSampling`) and ``engine``.
Unknown keys are rejected so typos do not silently fall back to defaults.
"""
from __future__ import annotations

import dataclasses
import os
from typing import Any, Mapping

import yaml

from .evaluation import EvalConfig, ScenarioSampling
from .rca import RcaParams
from .simulator import Disturbance, Scenario, WorkloadModel
from .spikes import DetectionConfig


class ConfigError(ValueError):
    pass


def load_yaml(path: str | os.PathLike | None) -> dict:
    if path is None:
        return {}
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def _build(cls, block: Mapping[str, Any] | None, where: str, **extra):
    block = dict(block or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(block) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    for k, v in block.items():
        if isinstance(v, list):
            block[k] = tuple(v)
    try:
        return cls(**{**block, **extra})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _check_sections(data: Mapping, allowed: set[str], where: str):
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown sections {sorted(unknown)}")


def engine_from_dict(data: Mapping | None) -> tuple[DetectionConfig, RcaParams]:
    data = data or {}
    _check_sections(data, {"detection", "rca"}, "engine")
    return _build(DetectionConfig, data.get("detection"), "engine.detection"), _build(
        RcaParams, data.get("rca"), "engine.rca"
    )


def workload_from_dict(block: Mapping | None, seed: int | None = None) -> WorkloadModel:
    block = dict(block or {})
    if seed is not None:
        block["seed"] = seed
    if "base_latency_us" not in block and "message_size_bytes" in block:
        size = block.pop("message_size_bytes")
        unknown = set(block) - {"duration_s", "seed"}
        if unknown:
            raise ConfigError(f"workload: unknown keys {sorted(unknown)}")
        return WorkloadModel.for_message_size(int(size), **block)
    return _build(WorkloadModel, block, "workload")


def scenario_from_dict(data: Mapping, seed: int | None = None) -> Scenario:
    _check_sections(data, {"workload", "disturbance", "engine"}, "scenario")
    wl = workload_from_dict(data.get("workload"), seed)
    dist = data.get("disturbance")
    d = None if dist is None else _build(Disturbance, dist, "disturbance")
    return Scenario(wl, d)


def eval_config_from_dict(data: Mapping, **overrides) -> EvalConfig:
    _check_sections(data, {"evaluation", "sampling", "engine"}, "evaluation config")
    detection, rca = engine_from_dict(data.get("engine"))
    sampling = _build(ScenarioSampling, data.get("sampling"), "sampling")
    block = dict(data.get("evaluation") or {})
    block.update({k: v for k, v in overrides.items() if v is not None})
    return _build(EvalConfig, block, "evaluation", sampling=sampling, detection=detection, rca=rca)
