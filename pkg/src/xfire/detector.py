"""Streaming early warning on top of the per-sample LSTM classifier.

Raw per-sample decisions are pushed into a fixed-capacity buffer; an attack
is declared only while the buffer is full and every entry is positive.
Latency is counted 1-based from the first warm-up sample, so a perfect
per-sample predictor with capacity 7 reports latency 7.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .models.base import check_norm_stats
from .nn.layers import softmax
from .traffic import normalize_values


class SmoothingBuffer:
    def __init__(self, capacity: int = 7):
        if capacity < 1:
            raise ValueError("buffer capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[int] = deque(maxlen=capacity)

    def __len__(self):
        return len(self._items)

    @property
    def contents(self) -> tuple[int, ...]:
        return tuple(self._items)

    def push(self, prediction: int) -> int:
        """Add a 0/1 prediction and return the smoothed decision."""
        if prediction not in (0, 1):
            raise ValueError(f"prediction must be 0 or 1, got {prediction!r}")
        self._items.append(int(prediction))
        return int(len(self._items) == self.capacity and all(self._items))

    def reset(self):
        self._items.clear()


def push_and_decide(buffer: SmoothingBuffer, prediction: int) -> int:
    return buffer.push(prediction)


def smooth_trace(raw, capacity: int) -> np.ndarray:
    """Causal smoothed decisions for a whole 0/1 trace (vectorised buffer)."""
    raw = np.asarray(raw).astype(np.int64)
    csum = np.concatenate([[0], np.cumsum(raw)])
    t = np.arange(len(raw))
    full = t >= capacity - 1
    window = csum[t + 1] - csum[np.maximum(t + 1 - capacity, 0)]
    return (full & (window == capacity)).astype(np.int64)


def run_filter(raw, capacity: int) -> np.ndarray:
    """Mark every sample covered by a firing buffer.

    A sample is kept iff it belongs to a run of at least ``capacity``
    consecutive positives, i.e. it sat in the buffer at some moment the
    smoothed decision was 1.
    """
    fired = smooth_trace(raw, capacity)
    out = np.zeros(len(fired), dtype=np.int64)
    for t in np.flatnonzero(fired):
        out[t - capacity + 1:t + 1] = 1
    return out


@dataclass(frozen=True)
class DetectionEvent:
    instance_id: int
    detect_index: int
    latency: int | None

    def to_dict(self) -> dict:
        return {"instance_id": self.instance_id, "detect_index": self.detect_index, "latency": self.latency}


def first_event(smoothed, warmup_start: int | None, instance_id: int = 0) -> DetectionEvent | None:
    """First smoothed positive at or after ``warmup_start``."""
    start = 0 if warmup_start is None else warmup_start
    hits = np.flatnonzero(np.asarray(smoothed)[start:])
    if not hits.size:
        return None
    idx = int(hits[0]) + start
    latency = None if warmup_start is None else idx - warmup_start + 1
    return DetectionEvent(instance_id, idx, latency)


class StreamState:
    """Per-stream recurrent state, smoothing buffer and sample counter."""

    def __init__(self, model, capacity: int = 7, threshold: float = 0.5):
        self.model = model
        self.threshold = threshold
        self.buffer = SmoothingBuffer(capacity)
        self.lstm_state = model.init_state(1)
        self.t = 0

    def push(self, sample_normalized):
        """Feed one normalized sample; returns ``(t, p_attack, raw, smoothed, logits)``."""
        logits, self.lstm_state = self.model.step(np.asarray(sample_normalized)[None, :], self.lstm_state)
        p = float(softmax(logits)[0, 1])
        raw = int(p >= self.threshold)
        smoothed = self.buffer.push(raw)
        t = self.t
        self.t += 1
        return t, p, raw, smoothed, logits[0]


@dataclass
class StreamResult:
    event: DetectionEvent | None
    probabilities: np.ndarray
    raw: np.ndarray
    smoothed: np.ndarray
    logits: np.ndarray


def stream_detect(model, instance, buffer_capacity: int = 7, threshold: float = 0.5,
                  normalized: bool = False) -> StreamResult:
    """Feed ``instance`` sample by sample through a fresh stream.

    ``instance.values`` are raw Kbps unless ``normalized`` is set, in which
    case they are used as-is.
    """
    stats = check_norm_stats(model)
    values = np.asarray(instance.values)
    if values.shape[1] != model.n_features_in_:
        raise ValueError(f"model expects {model.n_features_in_} servers, instance has {values.shape[1]}")
    if not normalized:
        values = normalize_values(values, stats)
    state = StreamState(model, buffer_capacity, threshold)
    T = len(values)
    probs, raw, smoothed = np.empty(T), np.empty(T, np.int64), np.empty(T, np.int64)
    logits = np.empty((T, 2), dtype=np.float64)
    for i in range(T):
        _, probs[i], raw[i], smoothed[i], logits[i] = state.push(values[i])
    event = first_event(smoothed, instance.warmup_start, instance.index)
    return StreamResult(event, probs, raw, smoothed, logits)


def batch_probabilities(model, instances, normalized: bool = False) -> np.ndarray:
    """Per-sample attack probability for whole instances ``[n, T]`` (batch path)."""
    stats = check_norm_stats(model)
    X = np.stack([np.asarray(i.values) for i in instances])
    if not normalized:
        X = normalize_values(X, stats)
    return model.predict_proba(X.astype(np.float32))[..., 1]


@dataclass
class TradeoffRow:
    capacity: int
    precision: float
    recall: float
    f1: float
    event_recall: float
    max_latency: int | None
    mean_latency: float | None
    n_events: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def latency_tradeoff(model, instances, capacities, threshold: float = 0.5, normalized: bool = False,
                     probabilities: np.ndarray | None = None) -> list[TradeoffRow]:
    """Evaluate smoothing capacities on one shared set of per-sample predictions."""
    from .metrics import ConfusionCounts, prf1

    if any(c < 1 for c in capacities):
        raise ValueError("capacities must be >= 1")
    if probabilities is None:
        probabilities = batch_probabilities(model, instances, normalized)
    raw = (probabilities >= threshold).astype(np.int64)
    rows = []
    for cap in capacities:
        counts = ConfusionCounts()
        latencies, in_warmup = [], 0
        for inst, r in zip(instances, raw):
            counts += ConfusionCounts.from_predictions(run_filter(r, cap), inst.labels)
            ev = first_event(smooth_trace(r, cap), inst.warmup_start, inst.index)
            if ev is not None and ev.latency is not None:
                latencies.append(ev.latency)
                in_warmup += ev.detect_index < inst.warmup_end
        p, r_, f1, _ = prf1(counts)
        attacked = sum(1 for i in instances if i.warmup_start is not None)
        rows.append(TradeoffRow(cap, p, r_, f1, in_warmup / attacked if attacked else 0.0,
                                max(latencies) if latencies else None,
                                float(np.mean(latencies)) if latencies else None, len(latencies)))
    return rows
