"""Metric identities, the cause taxonomy and multi-rate alignment.

Everything downstream works on :class:`MetricSeries` values that sit on a
uniform nanosecond grid. Raw collector output (possibly jittered, possibly
10 Hz NVML-style) is brought onto that grid with a zero-order hold.

The metric set is a closed enumeration. Adding a metric means adding a
member to :class:`MetricId` *and* an entry in ``_CATEGORY``; the mapping
test keeps the two in sync.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence, Union

import numpy as np

from .errors import EmptyStream, GapTooLarge

NS_PER_S = 1_000_000_000
DEFAULT_GRID_HZ = 100
DEFAULT_MAX_GAP_NS = 2 * NS_PER_S


class MetricId(str, enum.Enum):
    NCCL_LATENCY = "nccl_latency"
    NET_RX_SOFTIRQ = "net_rx_softirq"
    NIC_QUEUE_LEN = "nic_queue_len"
    SCHED_SWITCH = "sched_switch"
    BLKIO_THROUGHPUT = "blkio_throughput"
    GPU_UTIL = "gpu_util"
    GPU_MEM = "gpu_mem"
    GPU_POWER = "gpu_power"
    GPU_TEMP = "gpu_temp"
    PCIE_THROUGHPUT = "pcie_throughput"

    def __str__(self) -> str:
        return self.value


class CauseCategory(str, enum.Enum):
    # Declaration order doubles as the deterministic tie-break order.
    IO = "IO"
    CPU = "CPU"
    NIC = "NIC"
    GPU = "GPU"

    def __str__(self) -> str:
        return self.value


TARGET = MetricId.NCCL_LATENCY

_CATEGORY: dict[MetricId, CauseCategory] = {
    MetricId.BLKIO_THROUGHPUT: CauseCategory.IO,
    MetricId.PCIE_THROUGHPUT: CauseCategory.IO,
    MetricId.SCHED_SWITCH: CauseCategory.CPU,
    MetricId.NET_RX_SOFTIRQ: CauseCategory.NIC,
    MetricId.NIC_QUEUE_LEN: CauseCategory.NIC,
    MetricId.GPU_UTIL: CauseCategory.GPU,
    MetricId.GPU_MEM: CauseCategory.GPU,
    MetricId.GPU_POWER: CauseCategory.GPU,
    MetricId.GPU_TEMP: CauseCategory.GPU,
}

HOST_METRICS: tuple[MetricId, ...] = tuple(m for m in MetricId if m is not TARGET)

UNITS: dict[MetricId, str] = {
    MetricId.NCCL_LATENCY: "us",
    MetricId.NET_RX_SOFTIRQ: "count/interval",
    MetricId.NIC_QUEUE_LEN: "packets",
    MetricId.SCHED_SWITCH: "count/interval",
    MetricId.BLKIO_THROUGHPUT: "B/s",
    MetricId.GPU_UTIL: "%",
    MetricId.GPU_MEM: "MiB",
    MetricId.GPU_POWER: "W",
    MetricId.GPU_TEMP: "degC",
    MetricId.PCIE_THROUGHPUT: "B/s",
}


def metric_category(metric: MetricId) -> CauseCategory | None:
    """Cause category a host metric implicates; ``None`` for the latency target."""
    return _CATEGORY.get(MetricId(metric))


def category_members(category: CauseCategory) -> tuple[MetricId, ...]:
    return tuple(m for m in HOST_METRICS if _CATEGORY[m] is category)


def grid_step_ns(grid_hz: float) -> int:
    step = NS_PER_S / grid_hz
    if grid_hz <= 0 or step != int(step):
        raise ValueError(f"grid_hz={grid_hz} does not give an integer nanosecond step")
    return int(step)


@dataclass(frozen=True)
class Sample:
    ts: int
    value: float


class Stream(NamedTuple):
    """Raw samples of one metric as parallel arrays (int64 ns, float64)."""

    ts: np.ndarray
    values: np.ndarray

    @classmethod
    def from_samples(cls, samples: Iterable[Sample]) -> "Stream":
        samples = list(samples)
        ts = np.fromiter((s.ts for s in samples), dtype=np.int64, count=len(samples))
        values = np.fromiter((s.value for s in samples), dtype=np.float64, count=len(samples))
        return cls(ts, values)

    def samples(self) -> list[Sample]:
        return [Sample(int(t), float(v)) for t, v in zip(self.ts, self.values)]

    def __len__(self) -> int:
        return len(self.ts)


RawStream = Union[Stream, Sequence[Sample]]


def as_stream(raw: RawStream) -> Stream:
    if isinstance(raw, Stream):
        return raw
    if isinstance(raw, tuple) and len(raw) == 2 and isinstance(raw[0], np.ndarray):
        return Stream(np.asarray(raw[0], dtype=np.int64), np.asarray(raw[1], dtype=np.float64))
    return Stream.from_samples(raw)


@dataclass(frozen=True)
class MetricSeries:
    """Uniformly gridded samples; sample ``t`` sits at ``start_ts + t * step``."""

    id: MetricId
    grid_hz: float
    start_ts: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise ValueError("values must be one-dimensional")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"{self.id}: non-finite values are not admitted")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "id", MetricId(self.id))
        grid_step_ns(self.grid_hz)

    @property
    def step_ns(self) -> int:
        return grid_step_ns(self.grid_hz)

    @property
    def end_ts(self) -> int:
        """Exclusive end of the covered interval."""
        return self.start_ts + len(self.values) * self.step_ns

    def __len__(self) -> int:
        return len(self.values)

    def timestamps(self) -> np.ndarray:
        return self.start_ts + np.arange(len(self.values), dtype=np.int64) * self.step_ns

    def index_range(self, start_ns: int, end_ns: int) -> tuple[int, int]:
        """Sample index range covering grid points in ``[start_ns, end_ns)``."""
        step = self.step_ns
        lo = -((self.start_ts - start_ns) // step)  # ceil division
        hi = -((self.start_ts - end_ns) // step)
        return int(lo), int(hi)

    def covers(self, start_ns: int, end_ns: int) -> bool:
        return self.start_ts <= start_ns and end_ns <= self.end_ts

    def slice(self, start_ns: int, end_ns: int) -> "MetricSeries":
        lo, hi = self.index_range(start_ns, end_ns)
        lo, hi = max(lo, 0), min(hi, len(self.values))
        return MetricSeries(self.id, self.grid_hz, self.start_ts + lo * self.step_ns, self.values[lo:hi])

    def to_stream(self) -> Stream:
        return Stream(self.timestamps(), self.values.copy())


@dataclass(frozen=True)
class AlignedFrame:
    """Target latency plus host metrics on one common grid and window."""

    grid_hz: float
    window_start: int
    window_end: int
    target: MetricSeries
    hosts: Mapping[MetricId, MetricSeries]

    def __post_init__(self):
        n = (self.window_end - self.window_start) // grid_step_ns(self.grid_hz)
        for s in (self.target, *self.hosts.values()):
            if s.grid_hz != self.grid_hz or s.start_ts != self.window_start or len(s) != n:
                raise ValueError(f"{s.id} is not on the frame grid")

    @property
    def n_samples(self) -> int:
        return len(self.target)

    def series(self) -> dict[MetricId, MetricSeries]:
        return {self.target.id: self.target, **self.hosts}

    def slice(self, start_ns: int, end_ns: int) -> "AlignedFrame":
        return AlignedFrame(
            self.grid_hz,
            start_ns,
            end_ns,
            self.target.slice(start_ns, end_ns),
            {m: s.slice(start_ns, end_ns) for m, s in self.hosts.items()},
        )

    def without(self, disabled: Iterable[MetricId]) -> "AlignedFrame":
        disabled = set(disabled)
        hosts = {m: s for m, s in self.hosts.items() if m not in disabled}
        return AlignedFrame(self.grid_hz, self.window_start, self.window_end, self.target, hosts)


def hold_last(stream: Stream, grid: np.ndarray, max_gap_ns: int, metric=None) -> np.ndarray:
    """Zero-order hold of ``stream`` evaluated at ``grid`` timestamps."""
    if len(stream) == 0:
        raise EmptyStream(f"{metric}: no samples")
    idx = np.searchsorted(stream.ts, grid, side="right") - 1
    if idx[0] < 0:
        raise GapTooLarge(f"{metric}: no sample at or before {int(grid[0])} ns")
    gaps = grid - stream.ts[idx]
    if np.any(gaps > max_gap_ns):
        worst = int(np.argmax(gaps))
        raise GapTooLarge(
            f"{metric}: nearest sample is {gaps[worst] / NS_PER_S:.3f} s before grid point {int(grid[worst])}"
        )
    return stream.values[idx]


def align(
    raw_streams: Mapping[MetricId, RawStream],
    window: tuple[int, int],
    grid_hz: float = DEFAULT_GRID_HZ,
    max_gap_ns: int = DEFAULT_MAX_GAP_NS,
    metrics: Iterable[MetricId] | None = None,
) -> AlignedFrame:
    """Resample raw streams onto a common grid over the half-open ``window``.

    Each grid point takes the latest sample at or before it. ``metrics``
    restricts which host metrics are required; by default every host metric
    present in ``raw_streams`` is aligned. The target stream is mandatory.
    """
    start, end = int(window[0]), int(window[1])
    step = grid_step_ns(grid_hz)
    if end <= start or (end - start) % step:
        raise ValueError(f"window [{start}, {end}) is not a whole number of {step} ns steps")
    grid = start + np.arange((end - start) // step, dtype=np.int64) * step

    streams = {MetricId(m): s for m, s in raw_streams.items()}
    if TARGET not in streams:
        raise EmptyStream(f"{TARGET}: stream missing")
    wanted = [m for m in HOST_METRICS if m in streams] if metrics is None else [MetricId(m) for m in metrics]

    def resample(m: MetricId) -> MetricSeries:
        if m not in streams:
            raise EmptyStream(f"{m}: stream missing")
        return MetricSeries(m, grid_hz, start, hold_last(as_stream(streams[m]), grid, max_gap_ns, m))

    target = resample(TARGET)
    hosts = {m: resample(m) for m in wanted if m is not TARGET}
    return AlignedFrame(grid_hz, start, end, target, hosts)


def seconds(ns: int | float) -> float:
    return ns / NS_PER_S


def to_ns(s: float) -> int:
    return int(round(s * NS_PER_S))
