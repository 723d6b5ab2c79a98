"""Real-time loop: circular frame buffer, periodic polling, erroneous spans.

Per-frame predictions enter a fixed-capacity ring whose slots recycle
oldest-first. A poller tallies the buffered records at a regular
interval: records at or above the threshold confidence vote for their
class, plurality wins, and ties break toward the class of the most
recent above-threshold record. When no record clears the threshold for a
stipulated stretch of stream time, one erroneous-action event fires for
the whole low-confidence span.

Offline clip runs derive "time" from frame indices, so their event logs
are pure functions of the inputs. Live mode feeds frames through a
bounded drop-oldest queue into an inference worker and polls on the wall
clock; it is excluded from determinism guarantees.
"""

from __future__ import annotations

import enum
import os
import threading
from collections import deque
from dataclasses import dataclass, replace
from typing import Callable, Iterable, Iterator, Optional

import numpy as np

from .errors import ContractViolationError
from .mediaio import read_clip_meta, read_frame
from .preprocess import PreprocessConfig, preprocess_pair, sample_frames


@dataclass(frozen=True)
class FrameRecord:
    timestamp: float
    class_id: int
    confidence: float


class Verdict(enum.Enum):
    CLASS = "class"
    NO_CONFIDENT = "noconfident"
    ERRONEOUS = "erroneous"


@dataclass(frozen=True)
class WindowDecision:
    verdict: Verdict
    class_id: Optional[int]
    poll_time: float
    vote_counts: dict[int, int]


@dataclass(frozen=True)
class ErroneousEvent:
    time: float


@dataclass(frozen=True)
class ErroneousState:
    """Tracks the running low-confidence span; edge-triggered."""

    last_confident_time: float = 0.0
    triggered: bool = False


@dataclass(frozen=True)
class RuntimeConfig:
    poll_interval: float = 0.5
    threshold_confidence: float = 0.0
    stipulated_time: float = 2.0
    window_seconds: float = 1.0
    fps: int = 30

    def __post_init__(self):
        if self.poll_interval <= 0:
            raise ContractViolationError("poll_interval must be > 0")
        if self.stipulated_time < self.poll_interval:
            raise ContractViolationError("stipulated_time must be >= poll_interval")
        if not 0 <= self.threshold_confidence < 1:
            raise ContractViolationError("threshold_confidence must be in [0, 1)")
        if self.window_seconds <= 0 or self.fps < 1:
            raise ContractViolationError("window_seconds and fps must be positive")


class FrameBuffer:
    """Fixed-capacity ring of FrameRecords; eviction is strictly oldest-first.

    push and poll are each atomic with respect to the other, so one
    producer and one poller may run concurrently.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ContractViolationError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._slots: list[Optional[FrameRecord]] = [None] * capacity
        self._cursor = 0
        self._size = 0
        self._last_timestamp = -np.inf
        self._lock = threading.Lock()

    def push(self, record: FrameRecord) -> None:
        with self._lock:
            if record.timestamp < self._last_timestamp:
                raise ContractViolationError(
                    f"timestamp {record.timestamp} decreases below {self._last_timestamp}"
                )
            self._last_timestamp = record.timestamp
            self._slots[self._cursor] = record
            self._cursor = (self._cursor + 1) % self.capacity
            self._size = min(self._size + 1, self.capacity)

    def records(self) -> list[FrameRecord]:
        """Snapshot in insertion order, oldest first."""
        with self._lock:
            if self._size < self.capacity:
                return [r for r in self._slots[: self._size]]
            return self._slots[self._cursor :] + self._slots[: self._cursor]

    def __len__(self):
        with self._lock:
            return self._size


def plurality_vote(
    records: Iterable[tuple[int, float]], threshold: float
) -> tuple[Optional[int], dict[int, int]]:
    """Tally (class_id, confidence) pairs given in temporal order.

    Returns (winner, counts) where counts covers only records with
    confidence >= threshold; ties break toward the class of the most
    recent above-threshold record among the tied classes. Winner is None
    when nothing clears the threshold.
    """
    counts: dict[int, int] = {}
    last_seen: dict[int, int] = {}
    for order, (class_id, confidence) in enumerate(records):
        if confidence >= threshold:
            counts[class_id] = counts.get(class_id, 0) + 1
            last_seen[class_id] = order
    if not counts:
        return None, counts
    top = max(counts.values())
    tied = [c for c, n in counts.items() if n == top]
    winner = max(tied, key=lambda c: last_seen[c])
    return winner, counts


def buffer_push(buf: FrameBuffer, record: FrameRecord) -> None:
    buf.push(record)


def buffer_poll(buf: FrameBuffer, threshold: float, poll_time: float = 0.0) -> WindowDecision:
    snapshot = buf.records()
    winner, counts = plurality_vote(
        ((r.class_id, r.confidence) for r in snapshot), threshold
    )
    if winner is None:
        return WindowDecision(Verdict.NO_CONFIDENT, None, poll_time, counts)
    return WindowDecision(Verdict.CLASS, winner, poll_time, counts)


def update_erroneous(
    state: ErroneousState, decision: WindowDecision, config: RuntimeConfig
) -> tuple[ErroneousState, Optional[ErroneousEvent]]:
    """Advance the low-confidence span tracker by one poll.

    A confident decision resets the span; once consecutive low-confidence
    polls cover at least ``stipulated_time`` of stream time, exactly one
    event fires and nothing re-fires until the next confident decision.
    """
    if decision.verdict is Verdict.CLASS:
        return ErroneousState(last_confident_time=decision.poll_time, triggered=False), None
    span = decision.poll_time - state.last_confident_time
    if span >= config.stipulated_time - 1e-9 and not state.triggered:
        return replace(state, triggered=True), ErroneousEvent(decision.poll_time)
    return state, None


# ---------------------------------------------------------------------------
# Event log
# ---------------------------------------------------------------------------

def format_poll_line(decision: WindowDecision, erroneous_now: bool) -> str:
    verdict = Verdict.ERRONEOUS if (erroneous_now and decision.verdict is not Verdict.CLASS) else decision.verdict
    class_part = str(decision.class_id) if decision.class_id is not None else "-"
    if decision.vote_counts:
        votes = ",".join(f"{c}={decision.vote_counts[c]}" for c in sorted(decision.vote_counts))
    else:
        votes = "-"
    return f"POLL\t{decision.poll_time:.3f}\t{verdict.value}\t{class_part}\t{votes}"


def format_erroneous_line(event: ErroneousEvent) -> str:
    return f"ERRONEOUS\t{event.time:.3f}"


# ---------------------------------------------------------------------------
# Offline (virtual-time) pipeline
# ---------------------------------------------------------------------------

def run_pipeline_offline(
    clip_dir: str | os.PathLike,
    model,
    config: RuntimeConfig = RuntimeConfig(),
    pre_config: PreprocessConfig = PreprocessConfig(),
) -> list[str]:
    """Classify a clip directory in virtual time; returns the event log lines.

    Frames are sampled per the preprocess config; each sampled pair is
    predicted and pushed with timestamp i/fps. The poller fires at every
    multiple of poll_interval up to the clip duration, then once more
    after source exhaustion. The buffer holds one window of the
    prediction stream (sample rate x window_seconds slots).
    """
    meta = read_clip_meta(os.path.join(clip_dir, "clip.meta"))
    sample_fps = pre_config.sample_frames_per_second
    pairs = sample_frames(meta, sample_fps, pre_config.rng_seed)
    duration = meta.frame_count / meta.fps

    capacity = max(1, round(sample_fps * config.window_seconds))
    buf = FrameBuffer(capacity)
    state = ErroneousState()
    lines: list[str] = []

    def do_poll(t: float):
        nonlocal state
        decision = buffer_poll(buf, config.threshold_confidence, t)
        state, event = update_erroneous(state, decision, config)
        lines.append(format_poll_line(decision, erroneous_now=state.triggered))
        if event is not None:
            lines.append(format_erroneous_line(event))

    poll_times = []
    k = 1
    while k * config.poll_interval <= duration + 1e-9:
        poll_times.append(k * config.poll_interval)
        k += 1
    next_poll = 0

    for i, j in pairs:
        t = i / meta.fps
        while next_poll < len(poll_times) and poll_times[next_poll] < t:
            do_poll(poll_times[next_poll])
            next_poll += 1
        rgb, flow, hog = preprocess_pair(
            read_frame(clip_dir, i, meta), read_frame(clip_dir, j, meta), pre_config
        )
        pred = model.predict(rgb, flow, hog)
        buf.push(FrameRecord(timestamp=t, class_id=pred.class_id, confidence=pred.confidence))
    while next_poll < len(poll_times):
        do_poll(poll_times[next_poll])
        next_poll += 1
    do_poll(duration)  # final poll on clean exhaustion
    return lines


# ---------------------------------------------------------------------------
# Live (wall-clock) pipeline
# ---------------------------------------------------------------------------

class BoundedQueue:
    """Bounded FIFO that drops its oldest item instead of blocking the producer.

    Consumers block on get(); close() wakes them with None once drained.
    """

    def __init__(self, maxsize: int):
        if maxsize < 1:
            raise ContractViolationError("queue maxsize must be >= 1")
        self.maxsize = maxsize
        self.dropped = 0
        self._items: deque = deque()
        self._cond = threading.Condition()
        self._closed = False

    def put(self, item) -> None:
        with self._cond:
            if self._closed:
                raise ContractViolationError("put on a closed queue")
            if len(self._items) >= self.maxsize:
                self._items.popleft()
                self.dropped += 1
            self._items.append(item)
            self._cond.notify()

    def get(self, timeout: float | None = None):
        with self._cond:
            while not self._items and not self._closed:
                if not self._cond.wait(timeout=timeout):
                    return None
            if self._items:
                return self._items.popleft()
            return None  # closed and drained

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()


def run_pipeline_live(
    frames: Iterator[tuple[float, np.ndarray]],
    model,
    config: RuntimeConfig = RuntimeConfig(),
    pre_config: PreprocessConfig = PreprocessConfig(),
    queue_size: int = 8,
    clock: Callable[[], float] | None = None,
    sleep: Callable[[float], None] | None = None,
) -> tuple[list[str], int]:
    """Wall-clock pipeline: ingest -> bounded queue -> inference -> buffer.

    ``frames`` yields (timestamp, HxWx3 uint8). If inference lags, the
    oldest undecoded frames are dropped; the drop count is returned
    alongside the event lines. Not deterministic; offline mode is the
    reference behaviour.
    """
    import time as _time

    clock = clock or _time.monotonic
    sleep = sleep or _time.sleep
    queue = BoundedQueue(queue_size)
    capacity = max(1, round(config.fps * config.window_seconds))
    buf = FrameBuffer(capacity)
    done = threading.Event()

    def ingest():
        try:
            for ts, frame in frames:
                queue.put((ts, frame))
        finally:
            queue.close()

    def infer():
        prev = None
        while True:
            item = queue.get(timeout=0.1)
            if item is None:
                if done.is_set() or queue._closed:
                    break
                continue
            ts, frame = item
            if prev is not None:
                rgb, flow, hog = preprocess_pair(prev[1], frame, pre_config)
                pred = model.predict(rgb, flow, hog)
                buf.push(FrameRecord(timestamp=prev[0], class_id=pred.class_id,
                                     confidence=pred.confidence))
            prev = (ts, frame)

    t_ingest = threading.Thread(target=ingest, daemon=True)
    t_infer = threading.Thread(target=infer, daemon=True)
    start = clock()
    t_ingest.start()
    t_infer.start()

    lines: list[str] = []
    state = ErroneousState()
    next_poll = config.poll_interval
    while t_infer.is_alive() or t_ingest.is_alive():
        now = clock() - start
        if now < next_poll:
            sleep(min(next_poll - now, 0.02))
            if t_infer.is_alive() or t_ingest.is_alive():
                continue
            break
        decision = buffer_poll(buf, config.threshold_confidence, next_poll)
        state, event = update_erroneous(state, decision, config)
        lines.append(format_poll_line(decision, erroneous_now=state.triggered))
        if event is not None:
            lines.append(format_erroneous_line(event))
        next_poll += config.poll_interval
    done.set()
    t_ingest.join()
    t_infer.join()
    final = clock() - start
    decision = buffer_poll(buf, config.threshold_confidence, final)
    state, event = update_erroneous(state, decision, config)
    lines.append(format_poll_line(decision, erroneous_now=state.triggered))
    if event is not None:
        lines.append(format_erroneous_line(event))
    return lines, queue.dropped


def run_pipeline(source, model, config: RuntimeConfig = RuntimeConfig(),
                 pre_config: PreprocessConfig = PreprocessConfig(), live: bool = False):
    """Dispatch to the offline clip-directory or live frame-stream pipeline."""
    if live:
        return run_pipeline_live(source, model, config, pre_config)
    return run_pipeline_offline(source, model, config, pre_config)
