"""Lagged cross-correlation, confidence scoring and cause ranking.

Lag convention: for ``k >= 0`` the latency sample at ``t`` is paired with
the metric sample at ``t + k`` (the metric trails latency). Negative lags
swap the roles, so ``k < 0`` means the host metric leads latency by ``|k|``
samples. Interference normally shows up in the host metric first, so
causal evidence typically has a negative best lag.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from .errors import DegenerateSeries
from .spikes import BaselineStats, SpikeReport, spike_onset, spike_score
from .telemetry import (
    TARGET,
    AlignedFrame,
    CauseCategory,
    MetricId,
    metric_category,
    seconds,
    to_ns,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RcaParams:
    alpha: float = 0.5
    max_lag: int = 20
    score_cap: float = 10.0
    low_confidence: float = 0.2
    analysis_budget_s: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.max_lag < 0:
            raise ValueError("max_lag must be >= 0")
        if self.score_cap <= 0:
            raise ValueError("score_cap must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CorrelationResult:
    metric: MetricId | None
    best_lag: int
    best_corr: float
    rho_curve: np.ndarray  # index i holds lag i - K

    @property
    def max_lag(self) -> int:
        return (len(self.rho_curve) - 1) // 2

    def rho(self, k: int) -> float:
        return float(self.rho_curve[k + self.max_lag])


@dataclass(frozen=True)
class Evidence:
    metric: MetricId
    spike_score: float
    spike_score_norm: float
    correlation: float
    best_lag: int
    best_lag_ms: float
    confidence: float
    degenerate: bool = False

    @property
    def category(self) -> CauseCategory:
        return metric_category(self.metric)


@dataclass(frozen=True)
class Diagnosis:
    spike: SpikeReport
    onset_ts: int
    evidence: tuple[Evidence, ...]
    ranking: tuple[tuple[CauseCategory, float], ...]
    rca_ts: int
    time_to_rca_s: float
    low_confidence: bool

    @property
    def top_cause(self) -> CauseCategory:
        return self.ranking[0][0]

    @property
    def detection_ts(self) -> int:
        return self.spike.window[1]

    @property
    def detection_latency_s(self) -> float:
        return seconds(self.detection_ts - self.onset_ts)

    def leading_evidence(self, category: CauseCategory | None = None) -> Evidence | None:
        category = self.top_cause if category is None else category
        members = [e for e in self.evidence if e.category is category]
        return max(members, key=lambda e: e.confidence, default=None)


def _centered_norm(x: np.ndarray) -> tuple[np.ndarray, float]:
    c = x - x.mean()
    norm = float(np.sqrt(np.dot(c, c)))
    scale = max(1.0, float(np.max(np.abs(x))) * np.sqrt(len(x)))
    if norm < 1e-12 * scale:
        raise DegenerateSeries("series is constant within the window")
    return c, norm


def lagged_xcorr(target, metric, max_lag: int = 20, metric_id: MetricId | None = None) -> CorrelationResult:
    """Cross-correlation of ``target`` against ``metric`` for lags in ``[-K, K]``.

    Means and norms come from all ``N`` samples; lag ``k`` sums only the
    ``N - |k|`` overlapping pairs, so large lags are shrunk slightly toward
    zero relative to a per-lag Pearson coefficient.
    """
    a = np.asarray(target, dtype=np.float64)
    b = np.asarray(metric, dtype=np.float64)
    n = len(a)
    if len(b) != n:
        raise ValueError(f"length mismatch: {n} vs {len(b)}")
    if max_lag < 0 or n < 2 * max_lag + 2:
        raise ValueError(f"need at least {2 * max_lag + 2} samples for K={max_lag}, got {n}")
    a, na = _centered_norm(a)
    b, nb = _centered_norm(b)
    denom = na * nb

    curve = np.empty(2 * max_lag + 1)
    curve[max_lag] = np.dot(a, b) / denom
    for k in range(1, max_lag + 1):
        curve[max_lag + k] = np.dot(a[: n - k], b[k:]) / denom
        curve[max_lag - k] = np.dot(b[: n - k], a[k:]) / denom

    lag, best = best_lag(curve)
    return CorrelationResult(metric_id, lag, best, curve)


def best_lag(curve: np.ndarray) -> tuple[int, float]:
    """Lag of the largest ``|rho|``; ties go to the smallest ``|k|``, negative first."""
    max_lag = (len(curve) - 1) // 2
    mag = np.abs(curve)
    best = float(mag.max())
    lag = next(k for k in sorted(range(-max_lag, max_lag + 1), key=lambda k: (abs(k), k))
               if mag[k + max_lag] == best)
    return lag, best


def normalize_spike(score: float, cap: float = 10.0) -> float:
    """Map a sigma-unit score onto [0, 1] by clipping at ``cap``."""
    if not np.isfinite(score):
        raise ValueError("spike score must be finite")
    return min(max(score, 0.0), cap) / cap


def rank_categories(evidence, params: RcaParams) -> tuple[tuple[CauseCategory, float], ...]:
    best = {c: 0.0 for c in CauseCategory}
    for e in evidence:
        best[e.category] = max(best[e.category], e.confidence)
    order = list(CauseCategory)
    return tuple(sorted(best.items(), key=lambda kv: (-kv[1], order.index(kv[0]))))


def diagnose(
    frame: AlignedFrame,
    spike: SpikeReport,
    baselines: Mapping[MetricId, BaselineStats],
    params: RcaParams = RcaParams(),
    onset_ts: int | None = None,
) -> Diagnosis:
    """Rank cause categories for a confirmed latency spike.

    ``onset_ts`` is the first threshold crossing seen by the detector; when
    omitted it is recomputed from the target inside the spike window.
    """
    if not spike.is_spike:
        raise ValueError("diagnose needs a confirmed spike")
    window = spike.window
    if onset_ts is None:
        onset_ts = spike_onset(frame.target, baselines[TARGET], window, spike.threshold)

    target = frame.target.slice(*window).values
    step_ms = 1000.0 / frame.grid_hz
    evidence = []
    for m, series in frame.hosts.items():
        s = spike_score(series, baselines[m], window, spike.threshold).score
        s_norm = normalize_spike(s, params.score_cap)
        try:
            xc = lagged_xcorr(target, series.slice(*window).values, params.max_lag, m)
            corr, lag, degenerate = xc.best_corr, xc.best_lag, False
        except DegenerateSeries:
            corr, lag, degenerate = 0.0, 0, True
        conf = params.alpha * s_norm + (1.0 - params.alpha) * corr
        evidence.append(Evidence(m, s, s_norm, corr, lag, lag * step_ms, conf, degenerate))

    ranking = rank_categories(evidence, params)
    rca_ts = window[1] + to_ns(params.analysis_budget_s)
    low = ranking[0][1] < params.low_confidence
    if low:
        log.warning("low-confidence diagnosis: top cause %s at %.3f", ranking[0][0], ranking[0][1])
    return Diagnosis(
        spike=spike,
        onset_ts=int(onset_ts),
        evidence=tuple(evidence),
        ranking=ranking,
        rca_ts=rca_ts,
        time_to_rca_s=seconds(rca_ts - onset_ts),
        low_confidence=low,
    )
