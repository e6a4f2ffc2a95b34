"""Streaming detect -> diagnose pipeline fed by a collector.

The engine evaluates the latency target every ``stride``. A threshold
crossing opens a candidate spike at its onset; the candidate is confirmed
once a full observation window has elapsed since onset and the trailing
window still scores above threshold. Detection therefore lands between
``W`` and ``W + stride`` after onset, and the observation window used for
correlation is the one that follows the spike's rise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import InsufficientBaseline
from .rca import Diagnosis, RcaParams, diagnose
from .spikes import DetectionConfig, SpikeReport, baseline, spike_onset, spike_score, windows_at
from .telemetry import (
    DEFAULT_GRID_HZ,
    DEFAULT_MAX_GAP_NS,
    HOST_METRICS,
    TARGET,
    MetricId,
    MetricSeries,
    Stream,
    align,
    grid_step_ns,
)
from .trace_io import CollectorEndpoint

log = logging.getLogger(__name__)


class _Buffer:
    """Append-only sample buffer that can drop history older than a cutoff."""

    def __init__(self):
        self.ts = np.empty(0, dtype=np.int64)
        self.values = np.empty(0, dtype=np.float64)

    def extend(self, s: Stream):
        if len(s):
            self.ts = np.concatenate([self.ts, s.ts])
            self.values = np.concatenate([self.values, s.values])

    def trim(self, cutoff: int):
        # keep the last sample at or before cutoff for the zero-order hold
        i = int(np.searchsorted(self.ts, cutoff, side="right")) - 1
        if i > 0:
            self.ts, self.values = self.ts[i:], self.values[i:]

    def stream(self) -> Stream:
        return Stream(self.ts, self.values)


class SpikeDetector:
    """Candidate/confirm state machine for one target stream (single owner)."""

    def __init__(self, config: DetectionConfig = DetectionConfig()):
        self.config = config
        self.onset: int | None = None

    def reset(self):
        self.onset = None

    def step(self, target: MetricSeries, now: int) -> tuple[SpikeReport, int] | None:
        """Evaluate at ``now``; returns (report, onset) when a spike is confirmed."""
        cfg = self.config
        base_win, obs = windows_at(now, cfg)
        if not target.covers(base_win[0], obs[1]):
            raise InsufficientBaseline(f"history starts at {target.start_ts}, need {base_win[0]}")
        if self.onset is not None and now < self.onset + cfg.window_ns:
            return None
        stats = baseline(target, base_win, cfg.sigma_floor, cfg.min_baseline_samples)
        report = spike_score(target, stats, obs, cfg.threshold)
        if self.onset is None:
            if report.is_spike:
                self.onset = spike_onset(target, stats, obs, cfg.threshold)
                if now >= self.onset + cfg.window_ns:
                    return self._confirm(report)
            return None
        if report.is_spike:
            return self._confirm(report)
        log.debug("candidate at %d not sustained; discarded", self.onset)
        self.onset = None
        return None

    def _confirm(self, report: SpikeReport) -> tuple[SpikeReport, int]:
        onset, self.onset = self.onset, None
        return report, onset


@dataclass
class EngineResult:
    diagnoses: list[Diagnosis]
    evaluations: int
    end_ts: int


class RcaEngine:
    def __init__(
        self,
        detection: DetectionConfig = DetectionConfig(),
        rca: RcaParams = RcaParams(),
        grid_hz: float = DEFAULT_GRID_HZ,
        max_gap_ns: int = DEFAULT_MAX_GAP_NS,
        disabled: Iterable[MetricId] = (),
        max_diagnoses: int | None = None,
    ):
        self.detection = detection
        self.rca = rca
        self.grid_hz = grid_hz
        self.step_ns = grid_step_ns(grid_hz)
        if detection.stride_ns % self.step_ns or detection.history_ns % self.step_ns:
            raise ValueError("stride, window and baseline must be whole grid steps")
        self.max_gap_ns = max_gap_ns
        self.disabled = frozenset(MetricId(m) for m in disabled)
        if TARGET in self.disabled:
            raise ValueError("the latency target cannot be disabled")
        self.max_diagnoses = max_diagnoses

    def host_metrics(self, available: Iterable[MetricId]) -> list[MetricId]:
        available = set(available)
        return [m for m in HOST_METRICS if m in available and m not in self.disabled]

    def diagnose_at(self, buffers: dict[MetricId, _Buffer], now: int, report: SpikeReport, onset: int) -> Diagnosis:
        cfg = self.detection
        base_win, obs = windows_at(now, cfg)
        frame = align(
            {m: b.stream() for m, b in buffers.items()},
            (base_win[0], obs[1]),
            self.grid_hz,
            self.max_gap_ns,
            metrics=self.host_metrics(buffers),
        )
        stats = {
            m: baseline(s, base_win, cfg.sigma_floor, cfg.min_baseline_samples)
            for m, s in frame.series().items()
        }
        return diagnose(frame, report, stats, self.rca, onset_ts=onset)

    def run(self, collector: CollectorEndpoint) -> EngineResult:
        """Consume the collector until exhausted (or ``max_diagnoses`` reached)."""
        cfg = self.detection
        detector = SpikeDetector(cfg)
        buffers: dict[MetricId, _Buffer] = {}
        diagnoses: list[Diagnosis] = []
        next_eval: int | None = None
        evaluations = 0
        watermark = 0
        while True:
            batch = collector.poll()
            if batch is None:
                break
            watermark = batch.watermark
            for m, s in batch.samples.items():
                if m in self.disabled:
                    continue
                buffers.setdefault(MetricId(m), _Buffer()).extend(s)
            target = buffers.get(TARGET)
            if target is None or not len(target.ts):
                continue
            if next_eval is None:
                first = -(-int(target.ts[0]) // self.step_ns) * self.step_ns
                next_eval = first + cfg.history_ns
            while next_eval <= watermark:
                now = next_eval
                next_eval += cfg.stride_ns
                start = now - cfg.history_ns
                series = align({TARGET: target.stream()}, (start, now), self.grid_hz, self.max_gap_ns, metrics=()).target
                evaluations += 1
                hit = detector.step(series, now)
                if hit is None:
                    continue
                diagnoses.append(self.diagnose_at(buffers, now, *hit))
                if self.max_diagnoses is not None and len(diagnoses) >= self.max_diagnoses:
                    return EngineResult(diagnoses, evaluations, watermark)
                # next observation window must not overlap the diagnosed one
                next_eval = now + cfg.window_ns
            keep_from = (next_eval or watermark) - cfg.history_ns - self.max_gap_ns
            for b in buffers.values():
                b.trim(keep_from)
        if evaluations == 0:
            raise InsufficientBaseline(
                f"trace ends before {cfg.history_ns / 1e9:.1f} s of history could accumulate"
            )
        return EngineResult(diagnoses, evaluations, watermark)
