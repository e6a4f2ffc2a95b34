import numpy as np
import pytest

from tailrca.errors import InvalidScenario
from tailrca.rca import lagged_xcorr
from tailrca.simulator import (
    DEFAULT_COUPLING,
    PROFILES,
    Disturbance,
    DisturbanceKind,
    Scenario,
    WorkloadModel,
    envelope,
    generate,
    run_trial,
)
from tailrca.spikes import DetectionConfig
from tailrca.telemetry import TARGET, CauseCategory, MetricId, align

S = 1_000_000_000


def nic(lag_ms=80.0, magnitude=6.0, seed=1, noise=1.0, **kw):
    d = Disturbance(DisturbanceKind.D3_NIC, onset_s=38.0, duration_s=2.5, magnitude_sigma=magnitude,
                    latency_lag_ms=lag_ms, **kw)
    return Scenario(WorkloadModel(seed=seed, noise_scale=noise), d)


def test_rates_and_lengths():
    out = generate(Scenario(WorkloadModel(duration_s=60.0)))
    assert len(out[TARGET]) == 6000 and out[TARGET].grid_hz == 100
    assert len(out[MetricId.NET_RX_SOFTIRQ]) == 6000
    for m in (MetricId.GPU_UTIL, MetricId.GPU_MEM, MetricId.GPU_POWER, MetricId.GPU_TEMP):
        assert out[m].grid_hz == 10 and len(out[m]) == 600
    assert all(s.start_ts == 0 for s in out.values())


def test_identical_seeds_are_bit_identical():
    a, b = generate(nic(seed=9)), generate(nic(seed=9))
    assert all(np.array_equal(a[m].values, b[m].values) for m in a)
    c = generate(nic(seed=10))
    assert not np.array_equal(a[TARGET].values, c[TARGET].values)


def test_disturbance_past_trace_end():
    d = Disturbance(DisturbanceKind.D2_CPU, onset_s=48.0, duration_s=3.0, magnitude_sigma=3.0)
    with pytest.raises(InvalidScenario):
        Scenario(WorkloadModel(duration_s=50.0), d)


def test_invalid_lag_and_coupling():
    with pytest.raises(InvalidScenario):
        Disturbance(DisturbanceKind.D1_IO, 30.0, 2.0, 3.0, latency_lag_ms=250.0)
    with pytest.raises(InvalidScenario):
        Disturbance(DisturbanceKind.D1_IO, 30.0, 2.0, 3.0, coupling={"nccl_latency": 1.0})


def test_labels_follow_kind():
    assert Scenario().label is None
    for kind, cat in zip(DisturbanceKind, CauseCategory):
        d = Disturbance(kind, 36.0, 2.0, 3.0)
        assert Scenario(WorkloadModel(), d).label is cat
        assert DisturbanceKind.for_category(cat) is kind


def test_message_size_table():
    wl = WorkloadModel.for_message_size(1 << 20)
    assert (wl.base_latency_us, wl.jitter_sigma_us) == pytest.approx((500.0, 20.0))
    small, big = WorkloadModel.for_message_size(1 << 10), WorkloadModel.for_message_size(64 << 20)
    assert small.base_latency_us < wl.base_latency_us < big.base_latency_us
    with pytest.raises(InvalidScenario):
        WorkloadModel.for_message_size(128 << 20)


def test_latency_floor():
    out = generate(Scenario(WorkloadModel(base_latency_us=2.0, jitter_sigma_us=5.0, duration_s=10.0)))
    assert out[TARGET].values.min() >= 1.0


def test_envelope_shape():
    t = np.arange(0, 5, 0.01)
    e = envelope(t, 1.0, 2.0, 200.0)
    assert e[:101].max() == 0.0 and e[int(1.5 / 0.01)] == 1.0 and e[-1] == 0.0
    step = envelope(t, 1.0, 2.0, 0.0)
    assert step[100] == 1.0 and step[99] == 0.0 and step[300] == 0.0


def test_nic_burst_elevates_nic_metrics_and_lagged_latency():
    out = generate(nic(lag_ms=80.0))
    plateau = slice(3830, 4010)
    for m in (MetricId.NET_RX_SOFTIRQ, MetricId.NIC_QUEUE_LEN):
        p = PROFILES[m]
        gain = DEFAULT_COUPLING[DisturbanceKind.D3_NIC][m]
        assert out[m].values[plateau].mean() == pytest.approx(p.mean + 6.0 * gain * p.sigma, abs=p.sigma)
    assert out[TARGET].values[plateau].mean() > 500 + 5 * 20


def test_injected_lag_recovered_by_cross_correlation():
    # host metric leads latency, so the lag comes out negative
    out = generate(nic(lag_ms=80.0, noise=0.0))
    r = lagged_xcorr(out[TARGET].values[3000:5000], out[MetricId.NET_RX_SOFTIRQ].values[3000:5000], 20)
    assert r.best_lag == -8


def test_injected_lag_recovered_under_noise_on_average():
    lags = []
    for seed in range(30):
        out = generate(nic(lag_ms=80.0, seed=seed))
        lo, hi = 3000, 5000
        lags.append(lagged_xcorr(out[TARGET].values[lo:hi], out[MetricId.NET_RX_SOFTIRQ].values[lo:hi], 20).best_lag)
    assert abs(np.median(lags) + 8) <= 1


@pytest.mark.parametrize("lag_ms", [0.0, 30.0, 80.0, 110.0, 200.0])
def test_lag_fidelity_noise_free(lag_ms):
    out = generate(nic(lag_ms=lag_ms, noise=0.0))
    r = lagged_xcorr(out[TARGET].values[3000:5000], out[MetricId.NET_RX_SOFTIRQ].values[3000:5000], 20)
    assert abs(-r.best_lag - lag_ms / 10) <= 1


def test_gpu_throttle_coupling_signs():
    d = Disturbance(DisturbanceKind.D4_GPU_THROTTLE, 38.0, 3.0, magnitude_sigma=6.0)
    out = generate(Scenario(WorkloadModel(seed=4), d))
    coupling = d.coupling
    for m in (MetricId.GPU_POWER, MetricId.GPU_TEMP, MetricId.GPU_UTIL):
        before = out[m].values[300:370].mean()
        during = out[m].values[384:405].mean()
        assert np.sign(during - before) == np.sign(coupling[m])
    assert coupling[MetricId.GPU_POWER] < 0 < coupling[MetricId.GPU_TEMP] and coupling[MetricId.GPU_UTIL] < 0


def test_baseline_split_half_stationarity():
    ok = 0
    for seed in range(40):
        out = generate(Scenario(WorkloadModel(seed=seed, duration_s=30.0)))
        fine = all(
            abs(s.values[: len(s) // 2].mean() - s.values[len(s) // 2:].mean())
            < 0.5 * (PROFILES[m].sigma if m is not TARGET else 20.0)
            for m, s in out.items()
        )
        ok += fine
    assert ok >= 0.95 * 40


def test_undisturbed_trace_stays_below_threshold():
    # truncated noise: max z of an undisturbed window sits well below 3
    out = generate(Scenario(WorkloadModel(seed=2, duration_s=40.0)))
    v = out[TARGET].values
    assert ((v[3500:] - v[:3000].mean()) / v[:3000].std()).max() < 3.0


def test_generated_frame_aligns():
    out = generate(nic())
    frame = align({m: s.to_stream() for m, s in out.items()}, (0, 50 * S))
    assert frame.n_samples == 5000 and len(frame.hosts) == 9


# -- trials --------------------------------------------------------------


def test_strong_io_trial_is_correct():
    d = Disturbance(DisturbanceKind.D1_IO, 38.0, 2.5, magnitude_sigma=8.0,
                    coupling={"blkio_throughput": 1.0, "pcie_throughput": 0.6, "sched_switch": 0.05})
    r = run_trial(Scenario(WorkloadModel(seed=11), d))
    assert r.detected and r.predicted is CauseCategory.IO and r.correct
    assert r.diagnosis.top_cause is CauseCategory.IO


def test_raised_threshold_forces_missed_detection():
    r = run_trial(nic(), DetectionConfig(threshold=50.0))
    assert not r.detected and r.missed and not r.correct and r.predicted is None


def test_trial_determinism():
    a, b = run_trial(nic(seed=21)), run_trial(nic(seed=21))
    assert a.diagnosis.evidence == b.diagnosis.evidence and a.diagnosis.ranking == b.diagnosis.ranking
    assert a.time_to_rca_s == b.time_to_rca_s


def test_nic_trials_time_to_rca_band():
    rng = np.random.default_rng(0)
    for seed in range(15):
        d = Disturbance(DisturbanceKind.D3_NIC, float(rng.uniform(36, 40)), float(rng.uniform(2, 3.5)),
                        float(rng.uniform(0.5, 2.0)), latency_lag_ms=float(rng.uniform(0, 200)))
        r = run_trial(Scenario(WorkloadModel(seed=seed), d))
        assert r.detected and 5.0 <= r.time_to_rca_s <= 10.0


def test_engine_error_is_recorded_not_raised():
    r = run_trial(Scenario(WorkloadModel(duration_s=10.0)))
    assert not r.detected and r.error and "InsufficientBaseline" in r.error
