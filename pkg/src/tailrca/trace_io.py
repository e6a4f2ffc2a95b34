"""Line-delimited trace files, diagnosis records and the collector contract.

Trace format, one JSON object per line with fixed key order::

    {"ts_ns":1000000,"metric":"net_rx_softirq","value":1187.25}

``value`` is rendered with Python's shortest round-trip float repr, so a
write/read cycle reproduces every sample bit for bit and identical input
always gives identical bytes.
"""
from __future__ import annotations

import contextlib
import heapq
import io
import json
import logging
import os
import time
from array import array
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Mapping, NamedTuple, Protocol, TextIO, Union

import numpy as np

from .errors import MalformedRecord, OrderViolation, WriteOrderError
from .telemetry import MetricId, MetricSeries, Sample, Stream, as_stream, seconds

log = logging.getLogger(__name__)

PathOrFile = Union[str, os.PathLike, TextIO]
_METRIC_ORDER = {m: i for i, m in enumerate(MetricId)}
_KNOWN = {m.value: m for m in MetricId}


class TraceRecord(NamedTuple):
    ts_ns: int
    metric: str
    value: float


def format_record(rec: TraceRecord) -> str:
    value = float(rec.value)
    if not np.isfinite(value):
        raise ValueError(f"non-finite value at ts {rec.ts_ns}")
    return f'{{"ts_ns":{int(rec.ts_ns)},"metric":"{rec.metric}","value":{value!r}}}\n'


@contextlib.contextmanager
def _open(dest: PathOrFile, mode: str):
    if isinstance(dest, (str, os.PathLike)):
        with open(dest, mode, encoding="utf-8", newline="\n") as fh:
            yield fh
    else:
        yield dest


def records_from_series(series: Mapping[MetricId, MetricSeries | Stream]) -> Iterator[TraceRecord]:
    """Merge per-metric series into one stream ordered by (ts, metric declaration order)."""

    def one(metric: MetricId, data) -> Iterator[tuple[int, int, str, float]]:
        s = data.to_stream() if isinstance(data, MetricSeries) else as_stream(data)
        rank, name = _METRIC_ORDER[metric], metric.value
        for t, v in zip(s.ts.tolist(), s.values.tolist()):
            yield t, rank, name, v

    iters = [one(MetricId(m), data) for m, data in series.items()]
    for t, _, name, v in heapq.merge(*iters):
        yield TraceRecord(t, name, v)


def write_trace(source, dest: PathOrFile) -> int:
    """Write records (or a metric -> series mapping) as a trace; returns the count."""
    records = records_from_series(source) if isinstance(source, Mapping) else source
    count = 0
    last = None
    with _open(dest, "w") as fh:
        for rec in records:
            rec = TraceRecord(*rec)
            if last is not None and rec.ts_ns < last:
                raise WriteOrderError(f"record {count}: ts {rec.ts_ns} after {last}")
            fh.write(format_record(rec))
            last = rec.ts_ns
            count += 1
    return count


def parse_record(line: str, line_no: int) -> TraceRecord:
    try:
        obj = json.loads(line)
        ts, metric, value = obj["ts_ns"], obj["metric"], obj["value"]
    except (ValueError, KeyError, TypeError) as exc:
        raise MalformedRecord(line_no, f"unparseable record ({exc})") from None
    if not isinstance(ts, int) or isinstance(ts, bool):
        raise MalformedRecord(line_no, "ts_ns must be an integer")
    if not isinstance(metric, str):
        raise MalformedRecord(line_no, "metric must be a string")
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value):
        raise MalformedRecord(line_no, "value must be a finite number")
    return TraceRecord(ts, metric, float(value))


def iter_records(source: PathOrFile) -> Iterator[tuple[int, TraceRecord]]:
    """Yield (line number, record) without buffering the file."""
    with _open(source, "r") as fh:
        for line_no, line in enumerate(fh, 1):
            if line.strip():
                yield line_no, parse_record(line, line_no)


@dataclass
class TraceData:
    streams: dict[MetricId, Stream]
    skipped: int = 0
    unknown: set[str] = field(default_factory=set)

    def __getitem__(self, metric) -> Stream:
        return self.streams[MetricId(metric)]

    def __contains__(self, metric) -> bool:
        return MetricId(metric) in self.streams

    @property
    def n_records(self) -> int:
        return sum(len(s) for s in self.streams.values())


def read_trace(source: PathOrFile) -> TraceData:
    """Demultiplex a trace into per-metric streams.

    Unknown metric names are skipped and counted. Timestamps must not go
    backwards within a metric.
    """
    ts: dict[MetricId, array] = {}
    vals: dict[MetricId, array] = {}
    data = TraceData({})
    for line_no, rec in iter_records(source):
        metric = _KNOWN.get(rec.metric)
        if metric is None:
            data.skipped += 1
            data.unknown.add(rec.metric)
            continue
        if metric not in ts:
            ts[metric], vals[metric] = array("q"), array("d")
        elif rec.ts_ns < ts[metric][-1]:
            raise OrderViolation(f"line {line_no}: {metric} ts {rec.ts_ns} < {ts[metric][-1]}")
        ts[metric].append(rec.ts_ns)
        vals[metric].append(rec.value)
    if data.skipped:
        log.warning("skipped %d records with unknown metrics: %s", data.skipped, sorted(data.unknown))
    data.streams = {
        m: Stream(np.frombuffer(ts[m], dtype=np.int64).copy(), np.frombuffer(vals[m], dtype=np.float64).copy())
        for m in sorted(ts, key=_METRIC_ORDER.get)
    }
    return data


# -- collector contract ------------------------------------------------------


@dataclass(frozen=True)
class Batch:
    """Samples with ``ts < watermark`` not delivered by earlier polls."""

    watermark: int
    samples: Mapping[MetricId, Stream]


class CollectorEndpoint(Protocol):
    """Pull interface implemented by simulated, replayed or live collectors.

    ``poll`` returns the next batch (per-metric samples strictly newer than
    anything delivered before, in timestamp order) or ``None`` once the
    source is exhausted. A live eBPF/NVML collector would implement the same
    three members.
    """

    provides: frozenset[MetricId]
    native_rate_hz: Mapping[MetricId, float]

    def poll(self) -> Batch | None: ...


def _rate(stream: Stream) -> float:
    if len(stream) < 2:
        return 0.0
    return 1e9 / float(np.median(np.diff(stream.ts)))


class ReplayCollector:
    """Replays recorded streams through the collector contract.

    With ``speed=None`` batches are produced as fast as the consumer polls
    and only the simulated clock advances. With ``speed=s`` each poll waits
    until ``elapsed simulated time / s`` of wall time has passed.
    """

    def __init__(
        self,
        streams: Mapping[MetricId, Stream | MetricSeries | Iterable[Sample]],
        speed: float | None = None,
        batch_s: float = 0.1,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if speed is not None and speed <= 0:
            raise ValueError("speed must be positive")
        self.streams = {
            MetricId(m): (s.to_stream() if isinstance(s, MetricSeries) else as_stream(s))
            for m, s in streams.items()
        }
        self.provides = frozenset(self.streams)
        self.native_rate_hz = {m: _rate(s) for m, s in self.streams.items()}
        self.speed = speed
        self.batch_ns = int(round(batch_s * 1e9))
        self._clock, self._sleep = clock, sleep
        self._pos = {m: 0 for m in self.streams}
        firsts = [int(s.ts[0]) for s in self.streams.values() if len(s)]
        self.start_ns = min(firsts) if firsts else 0
        self.watermark = self.start_ns
        self._wall0: float | None = None

    @property
    def exhausted(self) -> bool:
        return all(self._pos[m] >= len(s) for m, s in self.streams.items())

    def poll(self) -> Batch | None:
        if self.exhausted:
            return None
        if self._wall0 is None:
            self._wall0 = self._clock()
        self.watermark += self.batch_ns
        out = {}
        for m, s in self.streams.items():
            lo = self._pos[m]
            hi = int(np.searchsorted(s.ts, self.watermark, side="left"))
            out[m] = Stream(s.ts[lo:hi], s.values[lo:hi])
            self._pos[m] = hi
        if self.speed is not None:
            due = self._wall0 + seconds(self.watermark - self.start_ns) / self.speed
            delay = due - self._clock()
            if delay > 0:
                self._sleep(delay)
        return Batch(self.watermark, out)


def replay(streams, speed: float | None = None, batch_s: float = 0.1) -> ReplayCollector:
    return ReplayCollector(streams, speed=speed, batch_s=batch_s)


# -- diagnosis records ----------------------------------------------------------


def diagnosis_record(diag) -> dict:
    """Machine-readable form of a Diagnosis with a fixed key order."""
    spike = diag.spike
    return {
        "spike": {
            "metric": str(spike.metric),
            "window_start_ns": int(spike.window[0]),
            "window_end_ns": int(spike.window[1]),
            "score": spike.score,
            "peak_ts_ns": int(spike.peak_ts),
            "threshold": spike.threshold,
        },
        "onset_ts_ns": int(diag.onset_ts),
        "evidence": [
            {
                "metric": str(e.metric),
                "category": str(e.category),
                "spike_score": e.spike_score,
                "spike_score_norm": e.spike_score_norm,
                "correlation": e.correlation,
                "best_lag": e.best_lag,
                "best_lag_ms": e.best_lag_ms,
                "confidence": e.confidence,
                "degenerate": e.degenerate,
            }
            for e in diag.evidence
        ],
        "ranking": [{"category": str(c), "confidence": v} for c, v in diag.ranking],
        "top_cause": str(diag.top_cause),
        "low_confidence": diag.low_confidence,
        "rca_ts_ns": int(diag.rca_ts),
        "time_to_rca_s": diag.time_to_rca_s,
    }


def dumps_record(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def write_diagnoses(diagnoses, dest: PathOrFile) -> int:
    n = 0
    with _open(dest, "w") as fh:
        for d in diagnoses:
            fh.write(dumps_record(diagnosis_record(d)) + "\n")
            n += 1
    return n


def read_diagnoses(source: PathOrFile) -> list[dict]:
    with _open(source, "r") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def trace_bytes(series) -> bytes:
    buf = io.StringIO()
    write_trace(series, buf)
    return buf.getvalue().encode()
