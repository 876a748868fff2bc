"""On-disk dataset format.

A dataset directory holds ``manifest.json`` and one ``.xfir`` file per
instance.  The binary container is::

    b"XFIR" | u32 version | u32 rows | u32 cols | rows*cols float32 (LE, row-major) | rows * u8 label

Windowed datasets reuse the container with one flattened example per row
(LSTM sequences are stored step-by-step) and a sidecar JSON describing the
window type, stride and label rule.
"""
from __future__ import annotations

import csv
import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .traffic import NormStats, ScenarioConfig, UtilizationInstance
from .windows import SplitSpec, Windows

MAGIC = b"XFIR"
CONTAINER_VERSION = 1
MANIFEST_VERSION = 1
_HEADER = struct.Struct("<4sIII")


class DatasetFormatError(ValueError):
    pass


def encode_container(values: np.ndarray, labels: np.ndarray) -> bytes:
    values = np.asarray(values)
    if values.ndim != 2:
        raise ValueError("container holds a 2-D matrix")
    rows, cols = values.shape
    labels = np.asarray(labels).astype(np.uint8).reshape(-1)
    if labels.shape[0] != rows:
        raise ValueError("one label per row required")
    body = values.astype("<f4").tobytes(order="C")
    return _HEADER.pack(MAGIC, CONTAINER_VERSION, rows, cols) + body + labels.tobytes()


def decode_container(blob: bytes) -> tuple[np.ndarray, np.ndarray]:
    if len(blob) < _HEADER.size:
        raise DatasetFormatError("truncated container header")
    magic, version, rows, cols = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}")
    if version != CONTAINER_VERSION:
        raise DatasetFormatError(f"unsupported container version {version}")
    expected = _HEADER.size + rows * cols * 4 + rows
    if len(blob) != expected:
        raise DatasetFormatError(f"container size {len(blob)} != expected {expected}")
    off = _HEADER.size
    values = np.frombuffer(blob, dtype="<f4", count=rows * cols, offset=off).reshape(rows, cols)
    labels = np.frombuffer(blob, dtype=np.uint8, count=rows, offset=off + rows * cols * 4)
    if labels.max(initial=0) > 1:
        raise DatasetFormatError("labels must be 0/1")
    return values.astype(np.float32), labels.astype(bool)


def write_container(path: Path, values, labels) -> str:
    blob = encode_container(values, labels)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def read_container(path: Path) -> tuple[np.ndarray, np.ndarray]:
    return decode_container(Path(path).read_bytes())


def _dump_json(obj, path: Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_dataset(
    directory,
    config: ScenarioConfig,
    instances: list[UtilizationInstance],
    norm_stats: NormStats,
    split: SplitSpec,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for inst in instances:
        name = f"instance_{inst.index:05d}.xfir"
        digest = write_container(directory / name, inst.values, inst.labels)
        entries.append({
            "index": inst.index,
            "file": name,
            "instance_seed": inst.instance_seed,
            "attacked_set": list(inst.attacked_set),
            "sha256": digest,
        })
    manifest = {
        "format": "xfire-dataset",
        "format_version": MANIFEST_VERSION,
        "scenario": config.to_dict(),
        "condition": config.condition,
        "norm_stats": norm_stats.to_dict(),
        "split": split.to_dict(),
        "instances": entries,
    }
    _dump_json(manifest, directory / "manifest.json")
    return directory / "manifest.json"


class Dataset:
    """Lazy view over a dataset directory."""

    def __init__(self, directory):
        self.directory = Path(directory)
        path = self.directory / "manifest.json"
        if not path.is_file():
            raise FileNotFoundError(f"no manifest.json in {self.directory}")
        self.manifest = json.loads(path.read_text())
        if self.manifest.get("format_version") != MANIFEST_VERSION:
            raise DatasetFormatError(f"unsupported manifest version {self.manifest.get('format_version')}")
        self.config = ScenarioConfig.from_dict(self.manifest["scenario"])
        self.norm_stats = NormStats.from_dict(self.manifest["norm_stats"])
        self.split = SplitSpec.from_dict(self.manifest["split"])
        self._entries = {e["index"]: e for e in self.manifest["instances"]}

    @property
    def condition(self) -> str:
        return self.config.condition

    def __len__(self) -> int:
        return len(self._entries)

    def load(self, index: int) -> UtilizationInstance:
        e = self._entries[index]
        blob = (self.directory / e["file"]).read_bytes()
        if hashlib.sha256(blob).hexdigest() != e["sha256"]:
            raise DatasetFormatError(f"{e['file']} does not match its manifest checksum")
        values, labels = decode_container(blob)
        return UtilizationInstance(values, labels, tuple(e["attacked_set"]), e["instance_seed"], index)

    def instances(self, partition: str | None = None) -> list[UtilizationInstance]:
        idx = sorted(self._entries) if partition is None else self.split.indices(partition)
        return [self.load(i) for i in idx]


def export_csv(instance: UtilizationInstance, path) -> None:
    n_servers = instance.values.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "label"] + [f"s{k}" for k in range(n_servers)])
        for t, (row, lab) in enumerate(zip(instance.values, instance.labels)):
            w.writerow([t, int(lab)] + [repr(float(v)) for v in row])


def save_windows(directory, name: str, windows: Windows, window_type: str, stride: int, label_rule: str) -> Path:
    """Store a windowed view in the XFIR container plus ``<name>.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    X = np.asarray(windows.X)
    if window_type == "lstm":
        rows, labels = X.reshape(-1, X.shape[-1]), np.asarray(windows.y).reshape(-1)
    else:
        rows, labels = X.reshape(X.shape[0], -1), windows.y
    digest = write_container(directory / f"{name}.xfir", rows, labels)
    meta = {
        "format_version": MANIFEST_VERSION,
        "window_type": window_type,
        "stride": stride,
        "label_rule": label_rule,
        "window_shape": list(X.shape[1:]),
        "n_windows": int(X.shape[0]),
        "instance_ids": [int(i) for i in windows.instance_ids],
        "offsets": [int(o) for o in windows.offsets],
        "file": f"{name}.xfir",
        "sha256": digest,
    }
    _dump_json(meta, directory / f"{name}.json")
    return directory / f"{name}.json"


def load_windows(directory, name: str) -> tuple[Windows, dict]:
    directory = Path(directory)
    meta = json.loads((directory / f"{name}.json").read_text())
    rows, labels = read_container(directory / meta["file"])
    n, shape = meta["n_windows"], tuple(meta["window_shape"])
    X = rows.reshape((n,) + shape)
    y = labels.reshape(n, -1) if meta["window_type"] == "lstm" else labels
    w = Windows(X, y, np.array(meta["instance_ids"]), np.array(meta["offsets"]))
    return w, meta
