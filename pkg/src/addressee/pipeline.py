"""Staged streaming deployment with a wizard-style control channel.

The runtime is a chain of stages

    Source -> SpeakerGate -> Sequencer -> Classifier -> Aggregator -> Sink

fed by a replayed (or synthetic) frame stream plus explicit control
events: an operator marks UTTERANCE_START / UTTERANCE_END, the gate
admits frames only inside that span, and the aggregator emits the final
utterance estimate at END.

Two execution modes share the stage objects:

  afap       single-threaded, simulated clock; deterministic, used for
             batch-equivalence checks
  realtime   one worker thread per stage connected by bounded channels;
             frames are paced at 80 ms wall clock and may be dropped
             (oldest first) under backpressure

Every item moving between stages is a (t_ms, payload) pair; t_ms is
simulated milliseconds in afap mode and measured wall milliseconds since
run start in realtime mode, so latency accounting is uniform.
"""

from __future__ import annotations

import threading
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .core import (
    FRAME_PERIOD_MS,
    AddresseeClass,
    ConfigError,
    Estimate,
    Frame,
    NumericError,
    ProtocolError,
)
from .evaluate import aggregate_utterance, predict_utterances
from .nn.model import Model
from .sequencer import SEQUENCE_LEN, Sequence, StreamState
from .synthgen import Utterance

UTTERANCE_START = "utterance_start"
UTTERANCE_END = "utterance_end"
MODES = ("afap", "realtime")
INTER_UTTERANCE_GAP_MS = 160


@dataclass(frozen=True)
class ControlEvent:
    """Operator marker for the start or end of one utterance."""

    kind: str
    utterance_id: str
    t_ms: float
    speaker_id: str = "speaker0"
    true_label: AddresseeClass | None = None

    def __post_init__(self):
        if self.kind not in (UTTERANCE_START, UTTERANCE_END):
            raise ConfigError(f"unknown control event kind {self.kind!r}")


@dataclass(frozen=True)
class PipelineConfig:
    mode: str = "afap"
    queue_capacity: int = 32
    drop_policy: str = "drop_oldest"

    def __post_init__(self):
        mode = {"as-fast-as-possible": "afap"}.get(self.mode, self.mode)
        object.__setattr__(self, "mode", mode)
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.queue_capacity < 1:
            raise ConfigError("queue_capacity must be >= 1")
        if self.drop_policy not in ("block", "drop_oldest"):
            raise ConfigError("drop_policy must be 'block' or 'drop_oldest'")


@dataclass(frozen=True)
class TimedEstimate:
    """One sequence estimate with its distance from utterance start."""

    estimate: Estimate
    utterance_id: str
    sequence_index: int
    latency_ms: float
    padded: bool = False


@dataclass(frozen=True)
class UtteranceResult:
    """Final aggregated estimate for one utterance."""

    utterance_id: str
    estimate: Estimate
    n_sequences: int
    latency_ms: float
    true_label: AddresseeClass | None = None


@dataclass
class RunResult:
    timed: list[TimedEstimate] = field(default_factory=list)
    utterances: list[UtteranceResult] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def replay_source(utterances: list[Utterance], gap_ms: int = INTER_UTTERANCE_GAP_MS):
    """Schedule of (t_ms, item) pairs replaying a dataset.

    START fires at the utterance's first instant; frame k is delivered one
    period after it was captured, i.e. at start + (k+1) * 80 ms; END fires
    as the last frame lands. Utterances follow each other after a short
    idle gap.
    """
    t = 0.0
    for utt in utterances:
        yield t, ControlEvent(UTTERANCE_START, utt.id, t, true_label=utt.label)
        for k, frame in enumerate(utt.frames):
            yield t + (k + 1) * FRAME_PERIOD_MS, frame
        t_end = t + len(utt.frames) * FRAME_PERIOD_MS
        yield t_end, ControlEvent(UTTERANCE_END, utt.id, t_end, true_label=utt.label)
        t = t_end + gap_ms


class SpeakerGate:
    """Admits frames only inside the selected speaker's open utterance."""

    def __init__(self):
        self.open_id: str | None = None
        self.frames_admitted = 0
        self.frames_gated_out = 0

    def handle(self, t_ms: float, item):
        if isinstance(item, ControlEvent):
            if item.kind == UTTERANCE_START:
                if self.open_id is not None:
                    raise ProtocolError(
                        f"START for {item.utterance_id!r} while {self.open_id!r} is open")
                self.open_id = item.utterance_id
            else:
                if self.open_id is None:
                    raise ProtocolError(f"END for {item.utterance_id!r} without a START")
                if item.utterance_id != self.open_id:
                    raise ProtocolError(
                        f"END for {item.utterance_id!r} does not match open "
                        f"utterance {self.open_id!r}")
                self.open_id = None
            return [(t_ms, item)]
        if isinstance(item, Frame):
            if self.open_id is not None and item.utterance_id == self.open_id:
                self.frames_admitted += 1
                return [(t_ms, item)]
            self.frames_gated_out += 1
            return []
        raise ProtocolError(f"unexpected item in gate: {type(item).__name__}")


class SequencerStage:
    """Streaming windower with resynchronization after dropped frames."""

    def __init__(self):
        self.state = StreamState()
        self.resync_discarded = 0
        self.sequences = 0

    def handle(self, t_ms: float, item):
        if isinstance(item, ControlEvent):
            if item.kind == UTTERANCE_START:
                self.state.flush()  # defensive; gate guarantees clean alternation
                return [(t_ms, item)]
            seq = self.state.flush()
            out = []
            if seq is not None:
                self.sequences += 1
                out.append((t_ms, seq))
            out.append((t_ms, item))
            return out
        buf = self.state.buffer
        if buf and item.t_ms != buf[-1].t_ms + FRAME_PERIOD_MS:
            # a gap (dropped frame) invalidates the partial window
            self.resync_discarded += len(buf)
            buf.clear()
        seq = self.state.push_frame(item)
        if seq is None:
            return []
        self.sequences += 1
        return [(t_ms, seq)]


class ClassifierStage:
    """Runs the model on each sequence as it completes."""

    def __init__(self, model: Model, now=None):
        self.model = model
        self.now = now  # realtime: callable giving ms since run start
        self.start_ms: dict[str, float] = {}
        self.estimates = 0

    def handle(self, t_ms: float, item):
        if isinstance(item, ControlEvent):
            if item.kind == UTTERANCE_START:
                self.start_ms[item.utterance_id] = t_ms
            else:
                self.start_ms.pop(item.utterance_id, None)
            return [(t_ms, item)]
        seq: Sequence = item
        try:
            est = self.model.estimate_sequence(seq)
        except NumericError as exc:
            raise NumericError(f"utterance {seq.utterance_id!r}: {exc}") from exc
        t_emit = self.now() if self.now is not None else t_ms
        latency = t_emit - self.start_ms.get(seq.utterance_id, 0.0)
        self.estimates += 1
        timed = TimedEstimate(estimate=est, utterance_id=seq.utterance_id,
                              sequence_index=seq.index, latency_ms=latency,
                              padded=seq.padded)
        return [(t_emit, timed)]


class AggregatorStage:
    """Collects per-sequence estimates and closes them out at END."""

    def __init__(self, method: str = "mean", now=None):
        self.method = method
        self.now = now
        self.pending: dict[str, list[TimedEstimate]] = {}
        self.start_ms: dict[str, float] = {}

    def handle(self, t_ms: float, item):
        if isinstance(item, TimedEstimate):
            self.pending.setdefault(item.utterance_id, []).append(item)
            return [(t_ms, item)]
        event: ControlEvent = item
        if event.kind == UTTERANCE_START:
            self.pending[event.utterance_id] = []
            self.start_ms[event.utterance_id] = t_ms
            return [(t_ms, event)]
        collected = self.pending.pop(event.utterance_id, [])
        out = [(t_ms, event)]
        if collected:
            agg = aggregate_utterance([te.estimate for te in collected], method=self.method)
            t_emit = self.now() if self.now is not None else t_ms
            latency = t_emit - self.start_ms.pop(event.utterance_id, 0.0)
            result = UtteranceResult(utterance_id=event.utterance_id, estimate=agg,
                                     n_sequences=len(collected), latency_ms=latency,
                                     true_label=event.true_label)
            out.append((t_emit, result))
        return out


class _Sink:
    """Terminal stage: event log plus collected results."""

    def __init__(self):
        self.result = RunResult()

    def collect(self, t_ms: float, item):
        if isinstance(item, ControlEvent):
            self.result.events.append({
                "event": item.kind, "utterance_id": item.utterance_id,
                "t_ms": round(t_ms, 3),
            })
        elif isinstance(item, TimedEstimate):
            self.result.timed.append(item)
            self.result.events.append({
                "event": "estimate", "utterance_id": item.utterance_id,
                "sequence_index": item.sequence_index,
                "predicted": item.estimate.predicted.name,
                "confidence": item.estimate.confidence,
                "logp": item.estimate.logp.tolist(),
                "latency_ms": round(item.latency_ms, 3),
                "padded": item.padded, "t_ms": round(t_ms, 3),
            })
        elif isinstance(item, UtteranceResult):
            self.result.utterances.append(item)
            self.result.events.append({
                "event": "utterance_estimate", "utterance_id": item.utterance_id,
                "predicted": item.estimate.predicted.name,
                "confidence": item.estimate.confidence,
                "logp": item.estimate.logp.tolist(),
                "n_sequences": item.n_sequences,
                "latency_ms": round(item.latency_ms, 3),
                "t_ms": round(t_ms, 3),
            })


class _Channel:
    """Bounded FIFO between stage threads.

    `put` blocks when full, unless drop_oldest is set and the queue holds
    a droppable item, in which case the oldest droppable entry is evicted
    (control events are never dropped). `get` returns None after the
    channel is closed and drained, which is the shutdown cascade.
    """

    def __init__(self, capacity: int, drop_oldest: bool):
        self.capacity = capacity
        self.drop_oldest = drop_oldest
        self.items: deque = deque()
        self.lock = threading.Lock()
        self.not_empty = threading.Condition(self.lock)
        self.not_full = threading.Condition(self.lock)
        self.closed = False
        self.dropped = 0

    def put(self, t_ms: float, item, droppable: bool = False):
        with self.lock:
            while len(self.items) >= self.capacity:
                if self.closed:
                    return  # shutting down; discard quietly
                if self.drop_oldest and droppable:
                    for i, entry in enumerate(self.items):
                        if entry[2]:
                            del self.items[i]
                            self.dropped += 1
                            break
                    else:
                        self.not_full.wait(0.05)
                        continue
                    break
                self.not_full.wait(0.05)
            if self.closed:
                return
            self.items.append((t_ms, item, droppable))
            self.not_empty.notify()

    def get(self):
        with self.lock:
            while not self.items and not self.closed:
                self.not_empty.wait(0.05)
            if self.items:
                t_ms, item, _ = self.items.popleft()
                self.not_full.notify()
                return t_ms, item
            return None

    def close(self):
        with self.lock:
            self.closed = True
            self.not_empty.notify_all()
            self.not_full.notify_all()


def _percentiles(values: list[float]) -> dict:
    if not values:
        return {"count": 0}
    arr = np.asarray(values)
    return {
        "count": int(arr.size),
        "min": float(arr.min()),
        "p50": float(np.percentile(arr, 50)),
        "p95": float(np.percentile(arr, 95)),
        "max": float(arr.max()),
    }


def _summarize(sink: _Sink, gate: SpeakerGate, seqstage: SequencerStage,
               frames_emitted: int, dropped: int, mode: str, wall_s: float) -> dict:
    res = sink.result
    first = [te.latency_ms for te in res.timed if te.sequence_index == 0]
    return {
        "mode": mode,
        "utterances": len(res.utterances),
        "frames_emitted": frames_emitted,
        "frames_admitted": gate.frames_admitted,
        "frames_dropped": dropped,
        "frames_gated_out": gate.frames_gated_out,
        "resync_discarded": seqstage.resync_discarded,
        "sequences": seqstage.sequences,
        "estimates": len(res.timed),
        "padded_estimates": sum(1 for te in res.timed if te.padded),
        "first_estimate_latency_ms": _percentiles(first),
        "estimate_latency_ms": _percentiles([te.latency_ms for te in res.timed]),
        "wall_time_s": round(wall_s, 3),
    }


def run_pipeline(model: Model, source, config: PipelineConfig,
                 method: str = "mean") -> RunResult:
    """Drive (t_ms, item) pairs from `source` through the stage chain."""
    if config.mode == "afap":
        return _run_afap(model, source, config, method)
    return _run_realtime(model, source, config, method)


def _run_afap(model: Model, source, config: PipelineConfig, method: str) -> RunResult:
    gate = SpeakerGate()
    seqstage = SequencerStage()
    classifier = ClassifierStage(model)
    aggregator = AggregatorStage(method=method)
    sink = _Sink()
    stages = (gate, seqstage, classifier, aggregator)
    frames_emitted = 0
    t_begin = time.perf_counter()
    for t_ms, item in source:
        if isinstance(item, Frame):
            frames_emitted += 1
        batch = [(t_ms, item)]
        for stage in stages:
            nxt = []
            for pair in batch:
                nxt.extend(stage.handle(*pair))
            batch = nxt
        for pair in batch:
            sink.collect(*pair)
    wall = time.perf_counter() - t_begin
    sink.result.summary = _summarize(sink, gate, seqstage, frames_emitted, 0,
                                     "afap", wall)
    return sink.result


def _run_realtime(model: Model, source, config: PipelineConfig, method: str) -> RunResult:
    t0 = time.monotonic()

    def now_ms() -> float:
        return (time.monotonic() - t0) * 1000.0

    gate = SpeakerGate()
    seqstage = SequencerStage()
    classifier = ClassifierStage(model, now=now_ms)
    aggregator = AggregatorStage(method=method, now=now_ms)
    sink = _Sink()

    drop = config.drop_policy == "drop_oldest"
    ch_gate = _Channel(config.queue_capacity, drop)  # sensor buffer: droppable frames
    ch_seq = _Channel(config.queue_capacity, False)
    ch_cls = _Channel(config.queue_capacity, False)
    ch_agg = _Channel(config.queue_capacity, False)
    ch_out = _Channel(config.queue_capacity, False)

    counters = {"frames_emitted": 0}
    errors: list[BaseException] = []

    def feeder():
        try:
            for t_sched, item in source:
                delay = t0 + t_sched / 1000.0 - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                if isinstance(item, Frame):
                    counters["frames_emitted"] += 1
                ch_gate.put(now_ms(), item, droppable=isinstance(item, Frame))
        except BaseException as exc:
            errors.append(exc)
        finally:
            ch_gate.close()

    def worker(stage, inp: _Channel, outp: _Channel):
        def run():
            try:
                while True:
                    got = inp.get()
                    if got is None:
                        break
                    for t_ms, item in stage.handle(*got):
                        outp.put(t_ms, item)
            except BaseException as exc:
                errors.append(exc)
                inp.close()  # unblock the upstream producer
            finally:
                outp.close()
        return run

    threads = [threading.Thread(target=feeder, name="source", daemon=True)]
    for stage, inp, outp in ((gate, ch_gate, ch_seq), (seqstage, ch_seq, ch_cls),
                             (classifier, ch_cls, ch_agg), (aggregator, ch_agg, ch_out)):
        threads.append(threading.Thread(target=worker(stage, inp, outp),
                                        name=type(stage).__name__, daemon=True))
    t_begin = time.perf_counter()
    for th in threads:
        th.start()
    while True:
        got = ch_out.get()
        if got is None:
            break
        sink.collect(*got)
    for th in threads:
        th.join(timeout=10.0)
    wall = time.perf_counter() - t_begin
    if errors:
        raise errors[0]
    sink.result.summary = _summarize(sink, gate, seqstage, counters["frames_emitted"],
                                     ch_gate.dropped, "realtime", wall)
    return sink.result


def run_replay(model: Model, utterances: list[Utterance], config: PipelineConfig,
               method: str = "mean") -> RunResult:
    return run_pipeline(model, replay_source(utterances), config, method=method)


@dataclass(frozen=True)
class EquivalenceReport:
    matched: bool
    n_utterances: int
    n_sequences: int
    diffs: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {"matched": self.matched, "n_utterances": self.n_utterances,
                "n_sequences": self.n_sequences, "diffs": list(self.diffs)}


def equivalence_check(model: Model, utterances: list[Utterance],
                      method: str = "mean") -> EquivalenceReport:
    """Assert the streaming path reproduces the batch path bit for bit.

    Compares every per-sequence log-probability vector and every
    aggregated utterance estimate; any mismatch is reported with both
    vectors.
    """
    batch = predict_utterances(model, utterances)
    run = run_replay(model, utterances, PipelineConfig(mode="afap"), method=method)
    diffs: list[dict] = []

    streamed: dict[str, list[TimedEstimate]] = {}
    for te in run.timed:
        streamed.setdefault(te.utterance_id, []).append(te)
    n_sequences = 0
    for utt, batch_ests in zip(utterances, batch):
        stream_tes = sorted(streamed.get(utt.id, []), key=lambda te: te.sequence_index)
        if len(stream_tes) != len(batch_ests):
            diffs.append({"utterance_id": utt.id, "kind": "sequence_count",
                          "batch": len(batch_ests), "stream": len(stream_tes)})
            continue
        for k, (be, te) in enumerate(zip(batch_ests, stream_tes)):
            n_sequences += 1
            if not np.array_equal(be.logp, te.estimate.logp) or be.predicted != te.estimate.predicted:
                diffs.append({"utterance_id": utt.id, "kind": "sequence",
                              "sequence_index": k,
                              "batch_logp": be.logp.tolist(),
                              "stream_logp": te.estimate.logp.tolist()})
    agg_stream = {ur.utterance_id: ur for ur in run.utterances}
    for utt, batch_ests in zip(utterances, batch):
        agg_batch = aggregate_utterance(batch_ests, method=method)
        ur = agg_stream.get(utt.id)
        if ur is None:
            diffs.append({"utterance_id": utt.id, "kind": "missing_aggregate"})
            continue
        if not np.array_equal(agg_batch.logp, ur.estimate.logp):
            diffs.append({"utterance_id": utt.id, "kind": "aggregate",
                          "batch_logp": agg_batch.logp.tolist(),
                          "stream_logp": ur.estimate.logp.tolist()})
    return EquivalenceReport(matched=not diffs, n_utterances=len(utterances),
                             n_sequences=n_sequences, diffs=tuple(diffs))
