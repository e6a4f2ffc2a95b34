"""Synthetic telemetry for an all-reduce workload with injected interference.

The simulator is the reference collector for evaluation. Each metric is
stationary noise around a fixed mean; a disturbance adds a raised plateau
(linear ramp up, hold, linear ramp down) to the metrics named in its
coupling table, and a lagged plateau to the all-reduce latency.

Noise is Gaussian truncated at +/-2.5 sigma (out-of-range draws are redrawn),
which keeps an undisturbed trace below the 3-sigma detector threshold.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .engine import RcaEngine
from .errors import InvalidScenario, RcaError
from .rca import Diagnosis, RcaParams
from .spikes import DetectionConfig
from .telemetry import (
    HOST_METRICS,
    TARGET,
    CauseCategory,
    MetricId,
    MetricSeries,
    Stream,
    grid_step_ns,
    seconds,
)
from .trace_io import ReplayCollector

NOISE_CLIP = 2.5
LATENCY_FLOOR_US = 1.0
MAX_LATENCY_LAG_MS = 200.0

FAST_HZ = 100
SLOW_HZ = 10  # NVML-style gauges


@dataclass(frozen=True)
class MetricProfile:
    mean: float
    sigma: float
    rate_hz: int


# Baseline operating point of a healthy node. Values are free simulator
# parameters, not hardware claims.
PROFILES: Mapping[MetricId, MetricProfile] = MappingProxyType({
    MetricId.NCCL_LATENCY: MetricProfile(500.0, 20.0, FAST_HZ),
    MetricId.NET_RX_SOFTIRQ: MetricProfile(1200.0, 80.0, FAST_HZ),
    MetricId.NIC_QUEUE_LEN: MetricProfile(12.0, 2.0, FAST_HZ),
    MetricId.SCHED_SWITCH: MetricProfile(900.0, 60.0, FAST_HZ),
    MetricId.BLKIO_THROUGHPUT: MetricProfile(2.0e8, 1.5e7, FAST_HZ),
    MetricId.PCIE_THROUGHPUT: MetricProfile(8.0e9, 4.0e8, FAST_HZ),
    MetricId.GPU_UTIL: MetricProfile(92.0, 1.5, SLOW_HZ),
    MetricId.GPU_MEM: MetricProfile(30000.0, 40.0, SLOW_HZ),
    MetricId.GPU_POWER: MetricProfile(320.0, 8.0, SLOW_HZ),
    MetricId.GPU_TEMP: MetricProfile(68.0, 0.8, SLOW_HZ),
})

# Mean all-reduce latency per message-size tag; jitter is 4% of the mean.
MESSAGE_SIZE_LATENCY_US: Mapping[int, float] = MappingProxyType({
    1 << 10: 60.0,
    64 << 10: 120.0,
    1 << 20: 500.0,
    16 << 20: 2600.0,
    64 << 20: 9200.0,
})
JITTER_FRACTION = 0.04


class DisturbanceKind(str, enum.Enum):
    D1_IO = "D1_IO"
    D2_CPU = "D2_CPU"
    D3_NIC = "D3_NIC"
    D4_GPU_THROTTLE = "D4_GPU_THROTTLE"

    @property
    def category(self) -> CauseCategory:
        return _KIND_CATEGORY[self]

    @classmethod
    def for_category(cls, category: CauseCategory) -> "DisturbanceKind":
        return next(k for k, c in _KIND_CATEGORY.items() if c is CauseCategory(category))

    def __str__(self) -> str:
        return self.value


_KIND_CATEGORY = {
    DisturbanceKind.D1_IO: CauseCategory.IO,
    DisturbanceKind.D2_CPU: CauseCategory.CPU,
    DisturbanceKind.D3_NIC: CauseCategory.NIC,
    DisturbanceKind.D4_GPU_THROTTLE: CauseCategory.GPU,
}

# Metric that carries each disturbance most strongly; ablation studies
# switch these off one at a time.
PRIMARY_METRIC: Mapping[DisturbanceKind, MetricId] = MappingProxyType({
    DisturbanceKind.D1_IO: MetricId.BLKIO_THROUGHPUT,
    DisturbanceKind.D2_CPU: MetricId.SCHED_SWITCH,
    DisturbanceKind.D3_NIC: MetricId.NET_RX_SOFTIRQ,
    DisturbanceKind.D4_GPU_THROTTLE: MetricId.GPU_TEMP,
})

# Gain per metric, in units of magnitude_sigma * metric sigma. Each kind has
# one out-of-category confuser at 0.25.
DEFAULT_COUPLING: Mapping[DisturbanceKind, Mapping[MetricId, float]] = MappingProxyType({
    DisturbanceKind.D1_IO: MappingProxyType({
        MetricId.BLKIO_THROUGHPUT: 1.0,
        MetricId.PCIE_THROUGHPUT: 0.6,
        MetricId.SCHED_SWITCH: 0.25,
    }),
    DisturbanceKind.D2_CPU: MappingProxyType({
        MetricId.SCHED_SWITCH: 1.0,
        MetricId.NET_RX_SOFTIRQ: 0.25,
    }),
    DisturbanceKind.D3_NIC: MappingProxyType({
        MetricId.NET_RX_SOFTIRQ: 1.0,
        MetricId.NIC_QUEUE_LEN: 0.7,
        MetricId.SCHED_SWITCH: 0.25,
    }),
    DisturbanceKind.D4_GPU_THROTTLE: MappingProxyType({
        MetricId.GPU_TEMP: 1.0,
        MetricId.GPU_POWER: -0.5,
        MetricId.GPU_UTIL: -0.3,
        MetricId.PCIE_THROUGHPUT: 0.25,
    }),
})


@dataclass(frozen=True)
class WorkloadModel:
    base_latency_us: float = 500.0
    jitter_sigma_us: float = 20.0
    message_size_bytes: int = 1 << 20
    duration_s: float = 50.0
    seed: int = 0
    noise_scale: float = 1.0  # 0 gives noise-free traces for lag checks

    def __post_init__(self):
        if self.base_latency_us <= 0:
            raise InvalidScenario("base_latency_us must be positive")
        if self.jitter_sigma_us < 0:
            raise InvalidScenario("jitter_sigma_us must be non-negative")
        if not (1 << 10) <= self.message_size_bytes <= (64 << 20):
            raise InvalidScenario("message_size_bytes must lie in [1 KiB, 64 MiB]")
        if self.duration_s <= 0:
            raise InvalidScenario("duration_s must be positive")
        if self.noise_scale < 0:
            raise InvalidScenario("noise_scale must be non-negative")

    @classmethod
    def for_message_size(cls, message_size_bytes: int, **kw) -> "WorkloadModel":
        """Workload whose latency mean is interpolated (log-log) from the size table."""
        sizes = np.log(np.array(list(MESSAGE_SIZE_LATENCY_US), dtype=float))
        lat = np.log(np.array(list(MESSAGE_SIZE_LATENCY_US.values())))
        mean = float(np.exp(np.interp(np.log(message_size_bytes), sizes, lat)))
        return cls(mean, JITTER_FRACTION * mean, message_size_bytes, **kw)


@dataclass(frozen=True)
class Disturbance:
    kind: DisturbanceKind
    onset_s: float
    duration_s: float
    magnitude_sigma: float
    latency_lag_ms: float = 0.0
    latency_sigma: float = 6.0
    ramp_ms: float = 200.0
    coupling: Mapping[MetricId, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", DisturbanceKind(self.kind))
        if self.coupling is None:
            coupling = DEFAULT_COUPLING[self.kind]
        else:
            coupling = {MetricId(m): float(g) for m, g in self.coupling.items()}
            if TARGET in coupling:
                raise InvalidScenario("latency is driven by latency_sigma, not coupling")
        object.__setattr__(self, "coupling", MappingProxyType(dict(coupling)))
        if not 0.0 <= self.latency_lag_ms <= MAX_LATENCY_LAG_MS:
            raise InvalidScenario(f"latency_lag_ms must lie in [0, {MAX_LATENCY_LAG_MS}]")
        if self.onset_s < 0 or self.duration_s <= 0 or self.ramp_ms < 0:
            raise InvalidScenario("onset must be >= 0, duration > 0, ramp >= 0")

    @property
    def end_s(self) -> float:
        return self.onset_s + self.duration_s + self.latency_lag_ms / 1000.0

    @property
    def label(self) -> CauseCategory:
        return self.kind.category


@dataclass(frozen=True)
class Scenario:
    workload: WorkloadModel = field(default_factory=WorkloadModel)
    disturbance: Disturbance | None = None

    def __post_init__(self):
        d = self.disturbance
        if d is not None and d.end_s > self.workload.duration_s:
            raise InvalidScenario(
                f"disturbance ends at {d.end_s:.3f} s, past trace end {self.workload.duration_s:.3f} s"
            )

    @property
    def label(self) -> CauseCategory | None:
        return None if self.disturbance is None else self.disturbance.label

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, workload=replace(self.workload, seed=seed))


def envelope(t_s: np.ndarray, onset_s: float, duration_s: float, ramp_ms: float) -> np.ndarray:
    """Plateau shape in [0, 1]; a zero ramp gives a rectangular step."""
    end = onset_s + duration_s
    if ramp_ms <= 0:
        return ((t_s >= onset_s) & (t_s < end)).astype(np.float64)
    ramp = ramp_ms / 1000.0
    return np.clip(np.minimum(t_s - onset_s, end - t_s) / ramp, 0.0, 1.0)


def truncated_normal(rng: np.random.Generator, n: int, clip: float = NOISE_CLIP) -> np.ndarray:
    z = rng.standard_normal(n)
    bad = np.flatnonzero(np.abs(z) > clip)
    while bad.size:
        z[bad] = rng.standard_normal(bad.size)
        bad = bad[np.abs(z[bad]) > clip]
    return z


def metric_profile(metric: MetricId, workload: WorkloadModel) -> MetricProfile:
    if metric is TARGET:
        return MetricProfile(workload.base_latency_us, workload.jitter_sigma_us, FAST_HZ)
    return PROFILES[metric]


def generate(scenario: Scenario) -> dict[MetricId, MetricSeries]:
    """Generate every metric at its native rate, starting at t=0.

    Latency and eBPF-style metrics come out at 100 Hz, ``gpu_*`` gauges at
    10 Hz. Output is a pure function of the scenario (including its seed).
    """
    wl = scenario.workload
    d = scenario.disturbance
    rng = np.random.default_rng(wl.seed)
    out = {}
    for m in (TARGET, *HOST_METRICS):
        prof = metric_profile(m, wl)
        n = int(round(wl.duration_s * prof.rate_hz))
        step = grid_step_ns(prof.rate_hz)
        t_s = np.arange(n, dtype=np.int64) * step / 1e9
        values = prof.mean + wl.noise_scale * prof.sigma * truncated_normal(rng, n)
        if d is not None:
            if m is TARGET:
                shape = envelope(t_s - d.latency_lag_ms / 1000.0, d.onset_s, d.duration_s, d.ramp_ms)
                values += d.latency_sigma * prof.sigma * shape
            elif d.coupling.get(m, 0.0):
                shape = envelope(t_s, d.onset_s, d.duration_s, d.ramp_ms)
                values += d.coupling[m] * d.magnitude_sigma * prof.sigma * shape
        if m is TARGET:
            values = np.maximum(values, LATENCY_FLOOR_US)
        out[m] = MetricSeries(m, prof.rate_hz, 0, values)
    return out


@dataclass
class TrialResult:
    label: CauseCategory | None
    predicted: CauseCategory | None
    correct: bool
    detected: bool
    time_to_rca_s: float | None = None
    detection_delay_s: float | None = None
    diagnosis: Diagnosis | None = None
    error: str | None = None

    @property
    def missed(self) -> bool:
        return self.label is not None and not self.detected


def series_streams(series: Mapping[MetricId, MetricSeries]) -> dict[MetricId, Stream]:
    return {m: s.to_stream() for m, s in series.items()}


def run_trial(
    scenario: Scenario,
    detection: DetectionConfig = DetectionConfig(),
    rca: RcaParams = RcaParams(),
    disabled=(),
) -> TrialResult:
    """Stream one generated scenario through detect -> diagnose.

    Engine errors become a failed trial rather than an exception.
    """
    collector = ReplayCollector(series_streams(generate(scenario)))
    engine = RcaEngine(detection, rca, disabled=disabled, max_diagnoses=1)
    label = scenario.label
    try:
        result = engine.run(collector)
    except RcaError as exc:
        return TrialResult(label, None, False, False, error=f"{type(exc).__name__}: {exc}")
    if not result.diagnoses:
        return TrialResult(label, None, label is None, False)
    diag = result.diagnoses[0]
    delay = None
    if scenario.disturbance is not None:
        delay = seconds(diag.detection_ts) - scenario.disturbance.onset_s
    return TrialResult(
        label=label,
        predicted=diag.top_cause,
        correct=diag.top_cause is label,
        detected=True,
        time_to_rca_s=diag.time_to_rca_s,
        detection_delay_s=delay,
        diagnosis=diag,
    )
