"""Baseline statistics and max-z spike scoring.

A window is scored against the mean and population standard deviation of a
baseline window; the score is the largest upper-tail z value inside the
window. Only the latency target is gated on the threshold. Host metrics are
scored the same way and their raw score feeds the confidence mix.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import InsufficientBaseline, NoOnset, WindowOutOfRange
from .telemetry import MetricId, MetricSeries, to_ns

Interval = tuple[int, int]


@dataclass(frozen=True)
class DetectionConfig:
    threshold: float = 3.0
    window_s: float = 5.0
    baseline_s: float = 30.0
    stride_s: float = 0.1
    sigma_floor: float = 1e-9
    min_baseline_samples: int = 100

    def __post_init__(self):
        if self.window_s <= 0 or self.baseline_s <= 0 or self.stride_s <= 0:
            raise ValueError("window, baseline and stride must be positive")
        if self.sigma_floor <= 0:
            raise ValueError("sigma_floor must be positive")

    @property
    def window_ns(self) -> int:
        return to_ns(self.window_s)

    @property
    def baseline_ns(self) -> int:
        return to_ns(self.baseline_s)

    @property
    def stride_ns(self) -> int:
        return to_ns(self.stride_s)

    @property
    def history_ns(self) -> int:
        return self.window_ns + self.baseline_ns

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BaselineStats:
    metric: MetricId
    mu: float
    sigma: float
    window: Interval
    n: int


@dataclass(frozen=True)
class SpikeReport:
    metric: MetricId
    score: float
    peak_ts: int
    window: Interval
    is_spike: bool
    threshold: float = 3.0


def _window_values(series: MetricSeries, window: Interval) -> tuple[np.ndarray, int]:
    lo, hi = series.index_range(*window)
    if lo < 0 or hi > len(series) or hi <= lo:
        raise WindowOutOfRange(
            f"{series.id}: window [{window[0]}, {window[1]}) outside series "
            f"[{series.start_ts}, {series.end_ts})"
        )
    return series.values[lo:hi], lo


def baseline(
    series: MetricSeries,
    window: Interval,
    sigma_floor: float = 1e-9,
    min_samples: int = 100,
) -> BaselineStats:
    lo, hi = series.index_range(*window)
    lo, hi = max(lo, 0), min(hi, len(series))
    n = max(hi - lo, 0)
    if n < min_samples:
        raise InsufficientBaseline(f"{series.id}: {n} baseline samples, need {min_samples}")
    values = series.values[lo:hi]
    mu = float(np.mean(values))
    sigma = max(float(np.std(values)), sigma_floor)
    return BaselineStats(series.id, mu, sigma, (int(window[0]), int(window[1])), n)


def zscores(series: MetricSeries, stats: BaselineStats, window: Interval) -> tuple[np.ndarray, int]:
    values, lo = _window_values(series, window)
    return (values - stats.mu) / stats.sigma, lo


def spike_score(
    series: MetricSeries,
    stats: BaselineStats,
    window: Interval,
    threshold: float = 3.0,
) -> SpikeReport:
    if stats.metric != series.id:
        raise ValueError(f"baseline is for {stats.metric}, series is {series.id}")
    z, lo = zscores(series, stats, window)
    peak = int(np.argmax(z))  # first maximum wins ties
    score = float(z[peak])
    return SpikeReport(
        metric=series.id,
        score=score,
        peak_ts=series.start_ts + (lo + peak) * series.step_ns,
        window=(int(window[0]), int(window[1])),
        is_spike=score > threshold,
        threshold=threshold,
    )


def spike_onset(
    series: MetricSeries,
    stats: BaselineStats,
    window: Interval,
    threshold: float = 3.0,
) -> int:
    """Timestamp of the first sample in ``window`` above ``mu + threshold * sigma``.

    The comparison is done on z values so that a window reported as a spike
    by :func:`spike_score` always has an onset.
    """
    z, lo = zscores(series, stats, window)
    above = np.flatnonzero(z > threshold)
    if above.size == 0:
        raise NoOnset(f"{series.id}: no sample above {threshold} sigma")
    return series.start_ts + (lo + int(above[0])) * series.step_ns


def windows_at(now: int, config: DetectionConfig) -> tuple[Interval, Interval]:
    """(baseline, observation) intervals for an evaluation at ``now``."""
    obs = (now - config.window_ns, now)
    return (obs[0] - config.baseline_ns, obs[0]), obs


def detect(target: MetricSeries, now: int, config: DetectionConfig = DetectionConfig()) -> SpikeReport | None:
    """Score the trailing observation window against the baseline right before it."""
    base_win, obs = windows_at(now, config)
    if not target.covers(base_win[0], obs[1]):
        raise InsufficientBaseline(
            f"need history from {base_win[0]} to {obs[1]} ns, have [{target.start_ts}, {target.end_ts})"
        )
    stats = baseline(target, base_win, config.sigma_floor, config.min_baseline_samples)
    report = spike_score(target, stats, obs, config.threshold)
    return report if report.is_spike else None
