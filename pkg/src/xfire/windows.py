"""Model-specific example extraction and the instance-level split.

Three views of an instance are produced:

* CNN windows: ``[15, n_servers]`` grids, positive when at least 5 of the 15
  rows are warm-up samples.
* AE windows: 5 consecutive samples flattened time-major into one vector
  (element ``n_servers * j + k`` is sample ``t0 + j``, server ``k``),
  positive on a 3-of-5 majority.
* LSTM sequences: 64 consecutive samples with their per-sample labels.

All extractors return a :class:`Windows` bundle that remembers the source
instance of every example, so leakage across splits can be audited.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np

CNN_ROWS = 15
CNN_MIN_WARMUP = 5
AE_STEPS = 5
AE_MIN_WARMUP = 3
LSTM_STEPS = 64

SPLIT_FRACTIONS = (0.7, 0.2, 0.1)


class Windows(NamedTuple):
    X: np.ndarray
    y: np.ndarray
    instance_ids: np.ndarray
    offsets: np.ndarray


def _offsets(n_samples: int, length: int, stride: int, what: str) -> np.ndarray:
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if n_samples < length:
        raise ValueError(f"{what} needs at least {length} samples, instance has {n_samples}")
    return np.arange(0, n_samples - length + 1, stride)


def _window_view(values: np.ndarray, length: int, offsets: np.ndarray) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(values, length, axis=0)
    # sliding_window_view puts the window axis last
    return np.moveaxis(view[offsets], -1, 1)


def count_rule(labels: np.ndarray, length: int, min_count: int, offsets: np.ndarray) -> np.ndarray:
    csum = np.concatenate([[0], np.cumsum(labels.astype(np.int64))])
    return (csum[offsets + length] - csum[offsets]) >= min_count


def make_cnn_windows(instance, stride: int = 1) -> Windows:
    offs = _offsets(instance.n_samples, CNN_ROWS, stride, "CNN window")
    X = _window_view(np.asarray(instance.values), CNN_ROWS, offs)
    y = count_rule(instance.labels, CNN_ROWS, CNN_MIN_WARMUP, offs)
    ids = np.full(len(offs), instance.index)
    return Windows(np.ascontiguousarray(X), y, ids, offs)


def make_ae_windows(instance, stride: int = 1) -> Windows:
    offs = _offsets(instance.n_samples, AE_STEPS, stride, "AE window")
    X = _window_view(np.asarray(instance.values), AE_STEPS, offs)
    X = X.reshape(len(offs), -1)
    y = count_rule(instance.labels, AE_STEPS, AE_MIN_WARMUP, offs)
    ids = np.full(len(offs), instance.index)
    return Windows(np.ascontiguousarray(X), y, ids, offs)


def make_lstm_sequences(instance, stride: int = 56) -> Windows:
    offs = _offsets(instance.n_samples, LSTM_STEPS, stride, "LSTM sequence")
    X = _window_view(np.asarray(instance.values), LSTM_STEPS, offs)
    y = np.stack([instance.labels[o:o + LSTM_STEPS] for o in offs])
    ids = np.full(len(offs), instance.index)
    return Windows(np.ascontiguousarray(X), y, ids, offs)


def concat_windows(parts: Iterable[Windows]) -> Windows:
    parts = list(parts)
    if not parts:
        raise ValueError("no windows to concatenate")
    return Windows(*(np.concatenate([getattr(p, f) for p in parts]) for f in Windows._fields))


def build_windows(instances, kind: str, stride: int | None = None, dtype=np.float32) -> Windows:
    """Extract and stack windows of ``kind`` ("cnn", "ae" or "lstm")."""
    makers = {"cnn": (make_cnn_windows, 1), "ae": (make_ae_windows, 1), "lstm": (make_lstm_sequences, 56)}
    if kind not in makers:
        raise ValueError(f"unknown window kind {kind!r}")
    fn, default_stride = makers[kind]
    w = concat_windows(fn(inst, stride or default_stride) for inst in instances)
    return w._replace(X=w.X.astype(dtype, copy=False))


@dataclass(frozen=True)
class SplitSpec:
    train: tuple[int, ...]
    val: tuple[int, ...]
    test: tuple[int, ...]
    seed: int
    fractions: tuple[float, float, float] = SPLIT_FRACTIONS

    def partition_of(self, index: int) -> str:
        for name in ("train", "val", "test"):
            if index in getattr(self, name):
                return name
        raise KeyError(index)

    def indices(self, name: str) -> tuple[int, ...]:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown partition {name!r}")
        return getattr(self, name)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "fractions": list(self.fractions),
                "train": list(self.train), "val": list(self.val), "test": list(self.test)}

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(tuple(d["train"]), tuple(d["val"]), tuple(d["test"]), int(d["seed"]),
                   tuple(d.get("fractions", SPLIT_FRACTIONS)))


def split_dataset(n_instances: int, seed: int) -> SplitSpec:
    """70:20:10 split of whole instances after a seeded permutation."""
    if n_instances < 10:
        raise ValueError("need at least 10 instances to split 70:20:10")
    from .seeding import make_rng

    perm = make_rng(seed, "split").permutation(n_instances)
    n_train = round(n_instances * SPLIT_FRACTIONS[0])
    n_val = round(n_instances * SPLIT_FRACTIONS[1])
    as_tuple = lambda a: tuple(int(i) for i in sorted(a))
    return SplitSpec(
        as_tuple(perm[:n_train]),
        as_tuple(perm[n_train:n_train + n_val]),
        as_tuple(perm[n_train + n_val:]),
        int(seed),
    )
