import numpy as np
import pytest

from conftest import make_series
from tailrca.engine import RcaEngine, SpikeDetector
from tailrca.simulator import Disturbance, DisturbanceKind, Scenario, WorkloadModel, generate, series_streams
from tailrca.spikes import DetectionConfig
from tailrca.telemetry import TARGET, CauseCategory, MetricId
from tailrca.trace_io import ReplayCollector

S = 1_000_000_000
STEP = 10_000_000


def scan(values, cfg=DetectionConfig()):
    det = SpikeDetector(cfg)
    s = make_series(values)
    hits = []
    for now in range(cfg.history_ns, s.end_ts + 1, cfg.stride_ns):
        r = det.step(s, now)
        if r:
            hits.append((now, r))
    return hits


def noise(n, seed=0):
    return np.random.default_rng(seed).uniform(-1, 1, n)


def test_step_confirmed_one_window_after_onset():
    v = noise(6000)
    v[4023:] += 10.0
    hits = scan(v)
    now, (rep, onset) = hits[0]
    assert onset == 4023 * STEP
    assert now == 4030 * STEP + 5 * S  # first stride point >= onset + W
    assert rep.window == (now - 5 * S, now) and rep.is_spike


def test_transient_exceedance_is_discarded():
    v = noise(6000)
    v[4003] += 10.0  # confirmation at 45.1 s looks at [40.1, 45.1), which excludes it
    assert scan(v) == []


def test_stationary_stream_never_fires():
    assert scan(noise(8000, seed=4)) == []


def test_exact_threshold_step_not_declared():
    v = np.tile([-1.0, 1.0], 3000)
    v[4000:] = 3.0  # baseline mu=0, sigma=1 -> z exactly 3
    assert scan(v) == []


def test_engine_disables_metrics():
    d = Disturbance(DisturbanceKind.D3_NIC, 38.0, 2.5, magnitude_sigma=3.0)
    series = series_streams(generate(Scenario(WorkloadModel(seed=2), d)))
    full = RcaEngine().run(ReplayCollector(series)).diagnoses[0]
    cut = RcaEngine(disabled=[MetricId.NET_RX_SOFTIRQ]).run(ReplayCollector(series)).diagnoses[0]
    assert MetricId.NET_RX_SOFTIRQ in {e.metric for e in full.evidence}
    assert MetricId.NET_RX_SOFTIRQ not in {e.metric for e in cut.evidence}
    assert len(cut.ranking) == 4


def test_engine_rejects_disabling_target():
    with pytest.raises(ValueError):
        RcaEngine(disabled=[TARGET])


def test_engine_finds_two_separate_spikes():
    wl = WorkloadModel(seed=5, duration_s=90.0)
    a = generate(Scenario(wl, Disturbance(DisturbanceKind.D2_CPU, 38.0, 2.0, magnitude_sigma=4.0)))
    b = generate(Scenario(wl, Disturbance(DisturbanceKind.D1_IO, 80.0, 2.0, magnitude_sigma=4.0)))
    # splice: first 60 s from a, rest from b
    streams = {}
    for m in a:
        sa, sb = a[m].to_stream(), b[m].to_stream()
        cut = np.searchsorted(sa.ts, 60 * S)
        streams[m] = (np.concatenate([sa.ts[:cut], sb.ts[cut:]]), np.concatenate([sa.values[:cut], sb.values[cut:]]))
    diags = RcaEngine().run(ReplayCollector(streams)).diagnoses
    assert [d.top_cause for d in diags] == [CauseCategory.CPU, CauseCategory.IO]


def test_batch_size_does_not_change_diagnosis():
    d = Disturbance(DisturbanceKind.D4_GPU_THROTTLE, 37.0, 3.0, magnitude_sigma=2.0, latency_lag_ms=120.0)
    series = series_streams(generate(Scenario(WorkloadModel(seed=8), d)))
    a = RcaEngine().run(ReplayCollector(series, batch_s=0.1)).diagnoses
    b = RcaEngine().run(ReplayCollector(series, batch_s=1.37)).diagnoses
    assert a == b
