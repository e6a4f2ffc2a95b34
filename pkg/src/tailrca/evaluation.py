"""Batch evaluation: labelled trials, accuracy, Time-to-RCA and confusion.

Trial ``i`` of category ``c`` (declaration index) uses seed
``seed_base + 10000 * c + i``, so any single trial can be re-run alone with
:func:`trial_scenario`. Report assembly is an ordered reduction; the worker
count never changes the output bytes.
"""
from __future__ import annotations

import hashlib
import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .rca import RcaParams
from .simulator import (
    DEFAULT_COUPLING,
    PROFILES,
    Disturbance,
    DisturbanceKind,
    Scenario,
    TrialResult,
    WorkloadModel,
    run_trial,
)
from .spikes import DetectionConfig
from .telemetry import CauseCategory, MetricId

CATEGORIES = tuple(CauseCategory)
SEED_STRIDE = 10000


@dataclass(frozen=True)
class ScenarioSampling:
    """Ranges the per-trial scenario parameters are drawn from (uniformly).

    The defaults are the frozen calibration; see README for how they were set.
    """

    duration_s: float = 50.0
    onset_s: tuple[float, float] = (36.0, 40.0)
    disturbance_s: tuple[float, float] = (2.0, 3.5)
    magnitude_sigma: tuple[float, float] = (0.05, 2.0)
    latency_lag_ms: tuple[float, float] = (0.0, 200.0)
    latency_sigma: float = 6.0
    ramp_ms: float = 200.0
    message_size_bytes: int = 1 << 20


@dataclass(frozen=True)
class EvalConfig:
    trials: int = 17
    seed_base: int = 0
    workers: int = 1
    ablate: tuple[MetricId, ...] = ()
    sampling: ScenarioSampling = field(default_factory=ScenarioSampling)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    rca: RcaParams = field(default_factory=RcaParams)

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        object.__setattr__(self, "ablate", tuple(sorted({MetricId(m) for m in self.ablate}, key=list(MetricId).index)))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("workers")
        d["ablate"] = [str(m) for m in self.ablate]
        return d

    def fingerprint(self) -> str:
        # simulator tables are part of the calibration, so they are hashed too
        payload = {
            "config": self.to_dict(),
            "profiles": {str(m): asdict(p) for m, p in PROFILES.items()},
            "coupling": {str(k): {str(m): g for m, g in c.items()} for k, c in DEFAULT_COUPLING.items()},
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def trial_seed(seed_base: int, category: CauseCategory, index: int) -> int:
    return seed_base + SEED_STRIDE * CATEGORIES.index(CauseCategory(category)) + index


def sample_scenario(kind: DisturbanceKind, seed: int, sampling: ScenarioSampling = ScenarioSampling()) -> Scenario:
    # parameter draws use a stream separate from the telemetry noise
    rng = np.random.default_rng([seed, 1])
    d = Disturbance(
        kind=kind,
        onset_s=float(rng.uniform(*sampling.onset_s)),
        duration_s=float(rng.uniform(*sampling.disturbance_s)),
        magnitude_sigma=float(rng.uniform(*sampling.magnitude_sigma)),
        latency_lag_ms=float(rng.uniform(*sampling.latency_lag_ms)),
        latency_sigma=sampling.latency_sigma,
        ramp_ms=sampling.ramp_ms,
    )
    wl = WorkloadModel.for_message_size(sampling.message_size_bytes, duration_s=sampling.duration_s, seed=seed)
    return Scenario(wl, d)


def trial_scenario(config: EvalConfig, category: CauseCategory, index: int) -> Scenario:
    seed = trial_seed(config.seed_base, category, index)
    return sample_scenario(DisturbanceKind.for_category(category), seed, config.sampling)


def _run_one(args) -> TrialResult:
    config, category, index = args
    res = run_trial(trial_scenario(config, category, index), config.detection, config.rca, config.ablate)
    res.diagnosis = None  # keep inter-process payloads small
    return res


@dataclass
class CategoryStats:
    category: CauseCategory
    trials: int
    detected: int
    correct: int
    accuracy_pct: float
    median_time_to_rca_s: float | None
    predicted: dict[CauseCategory, int]

    @property
    def missed(self) -> int:
        return self.trials - self.detected


@dataclass
class EvaluationReport:
    per_category: dict[CauseCategory, CategoryStats]
    mean_accuracy_pct: float
    confusion_pct: dict[CauseCategory, dict[CauseCategory, float]]
    fingerprint: str
    config: dict
    trials: list[tuple[CauseCategory, int, TrialResult]] = field(default_factory=list, repr=False)

    def accuracy(self, category: CauseCategory) -> float:
        return self.per_category[CauseCategory(category)].accuracy_pct

    def diagonal_dominant(self) -> bool:
        return all(
            row[c] > max(v for k, v in row.items() if k is not c)
            for c, row in self.confusion_pct.items()
            if sum(row.values()) > 0
        )

    def to_record(self) -> dict:
        return {
            "fingerprint": self.fingerprint,
            "mean_accuracy_pct": self.mean_accuracy_pct,
            "categories": [
                {
                    "category": str(c),
                    "trials": s.trials,
                    "detected": s.detected,
                    "missed": s.missed,
                    "correct": s.correct,
                    "accuracy_pct": s.accuracy_pct,
                    "median_time_to_rca_s": s.median_time_to_rca_s,
                }
                for c, s in self.per_category.items()
            ],
            "confusion_pct": {str(c): {str(k): v for k, v in row.items()} for c, row in self.confusion_pct.items()},
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), separators=(",", ":"), allow_nan=False)

    def render(self) -> str:
        lines = [f"evaluation {self.fingerprint}  ablate={','.join(self.config['ablate']) or 'none'}", ""]
        lines.append(f"{'Disturbance':<12}{'n':>5}{'miss':>6}{'Acc (%)':>10}{'RCA (s)':>10}")
        lines.append("-" * 43)
        for c, s in self.per_category.items():
            ttr = "-" if s.median_time_to_rca_s is None else f"{s.median_time_to_rca_s:.2f}"
            lines.append(f"{str(c):<12}{s.trials:>5}{s.missed:>6}{s.accuracy_pct:>10.1f}{ttr:>10}")
        lines.append("-" * 43)
        lines.append(f"{'mean':<12}{'':>11}{self.mean_accuracy_pct:>10.1f}")
        lines += ["", "confusion (% of detected, rows = injected)", f"{'':<8}" + "".join(f"{str(c):>8}" for c in CATEGORIES)]
        for c, row in self.confusion_pct.items():
            lines.append(f"{str(c):<8}" + "".join(f"{row[k]:>8.1f}" for k in CATEGORIES))
        return "\n".join(lines) + "\n"


def build_report(config: EvalConfig, results: Sequence[tuple[CauseCategory, int, TrialResult]]) -> EvaluationReport:
    per_cat = {}
    confusion = {}
    for c in CATEGORIES:
        rows = [r for cat, _, r in results if cat is c]
        detected = [r for r in rows if r.detected]
        counts = {k: sum(r.predicted is k for r in detected) for k in CATEGORIES}
        ttr = [r.time_to_rca_s for r in detected]
        per_cat[c] = CategoryStats(
            category=c,
            trials=len(rows),
            detected=len(detected),
            correct=sum(r.correct for r in rows),
            accuracy_pct=100.0 * sum(r.correct for r in rows) / len(rows) if rows else 0.0,
            median_time_to_rca_s=statistics.median(ttr) if ttr else None,
            predicted=counts,
        )
        confusion[c] = {k: (100.0 * counts[k] / len(detected) if detected else 0.0) for k in CATEGORIES}
    mean_acc = sum(s.accuracy_pct for s in per_cat.values()) / len(per_cat)
    return EvaluationReport(per_cat, mean_acc, confusion, config.fingerprint(), config.to_dict(), list(results))


def evaluate(config: EvalConfig = EvalConfig()) -> EvaluationReport:
    jobs = [(config, c, i) for c in CATEGORIES for i in range(config.trials)]
    if config.workers > 1:
        with ProcessPoolExecutor(config.workers) as pool:
            results = list(pool.map(_run_one, jobs, chunksize=8))
    else:
        results = [_run_one(j) for j in jobs]
    return build_report(config, [(c, i, r) for (_, c, i), r in zip(jobs, results)])


def with_ablation(config: EvalConfig, metrics: Sequence[MetricId]) -> EvalConfig:
    return replace(config, ablate=tuple(metrics))
