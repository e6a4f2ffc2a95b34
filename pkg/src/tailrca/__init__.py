"""Root-cause analysis of GPU collective tail-latency spikes from host telemetry."""

from .engine import RcaEngine, SpikeDetector
from .errors import RcaError
from .rca import CorrelationResult, Diagnosis, Evidence, RcaParams, diagnose, lagged_xcorr, normalize_spike
from .simulator import Disturbance, DisturbanceKind, Scenario, TrialResult, WorkloadModel, generate, run_trial
from .spikes import BaselineStats, DetectionConfig, SpikeReport, baseline, detect, spike_onset, spike_score
from .telemetry import AlignedFrame, CauseCategory, MetricId, MetricSeries, Sample, Stream, align, metric_category
from .trace_io import ReplayCollector, read_trace, replay, write_trace

__version__ = "0.1.0"
