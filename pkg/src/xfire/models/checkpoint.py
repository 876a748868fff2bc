"""Model checkpoint container.

Layout::

    b"XFCK" | u32 version | u32 header_len | header (UTF-8 JSON)
    | float32 LE tensor blobs | u32 CRC-32 of every preceding byte

The JSON header records the architecture tag, constructor parameters and
fitted state of each component, the normalization stats, caller-supplied
training metadata, and a tensor directory (name, shape, byte offset relative
to the start of the blob section).
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from ..traffic import NormStats
from .aeforest import AeForestClassifier
from .autoencoder import AutoencoderTransformer
from .cnn import CnnWindowClassifier
from .forest import GiniForest
from .lstm import LstmSequenceClassifier

MAGIC = b"XFCK"
VERSION = 1

_CLASSES = {
    "ae": AutoencoderTransformer,
    "cnn": CnnWindowClassifier,
    "lstm": LstmSequenceClassifier,
    "forest": GiniForest,
}


class CheckpointError(ValueError):
    pass


def architecture_of(model) -> str:
    if isinstance(model, AeForestClassifier):
        return "rf"
    for tag, cls in _CLASSES.items():
        if type(model) is cls:
            return tag
    raise TypeError(f"cannot checkpoint {type(model).__name__}")


def _jsonable(value):
    if isinstance(value, NormStats):
        return value.to_dict()
    if isinstance(value, (tuple, list)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _components(model) -> list[tuple[str, object]]:
    if isinstance(model, AeForestClassifier):
        return [("autoencoder", model.autoencoder_), ("forest", model.forest_)]
    return [("model", model)]


def _describe(est) -> dict:
    params = {k: _jsonable(v) for k, v in est.get_params(deep=False).items()}
    return {"class": architecture_of(est), "params": params, "state": est.fitted_state()}


def encode_checkpoint(model, training: dict | None = None) -> bytes:
    arch = architecture_of(model)
    stats = getattr(model, "norm_stats", None)
    components, directory, blobs, offset = {}, [], [], 0
    for cname, est in _components(model):
        components[cname] = _describe(est)
        for tname, arr in est.get_tensors().items():
            data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            directory.append({"name": f"{cname}/{tname}", "shape": list(np.shape(arr)),
                              "offset": offset, "nbytes": len(data)})
            blobs.append(data)
            offset += len(data)
    header = {
        "format_version": VERSION,
        "architecture": arch,
        "norm_stats": _jsonable(stats),
        "training": training or {},
        "components": components,
        "tensors": directory,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + struct.pack("<II", VERSION, len(hbytes)) + hbytes + b"".join(blobs)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def _restore_params(cls, params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if k == "norm_stats" and v is not None:
            v = NormStats.from_dict(v)
        elif isinstance(v, list):
            v = tuple(v)
        out[k] = v
    return out


def decode_checkpoint(blob: bytes):
    """Return ``(model, header)``."""
    if len(blob) < 16:
        raise CheckpointError("checkpoint file is truncated")
    if blob[:4] != MAGIC:
        raise CheckpointError(f"not a checkpoint (magic {blob[:4]!r})")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError("checkpoint is corrupt (checksum mismatch)")
    version, hlen = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = 12 + hlen
    header = json.loads(blob[12:start].decode("utf-8"))
    blob_section = blob[start:-4]

    tensors: dict[str, dict[str, np.ndarray]] = {}
    for entry in header["tensors"]:
        cname, tname = entry["name"].split("/", 1)
        count = int(np.prod(entry["shape"], dtype=np.int64))
        if entry["offset"] + entry["nbytes"] > len(blob_section) or entry["nbytes"] != 4 * count:
            raise CheckpointError(f"tensor {entry['name']} out of bounds")
        arr = np.frombuffer(blob_section, dtype="<f4", count=count, offset=entry["offset"])
        tensors.setdefault(cname, {})[tname] = arr.reshape(entry["shape"]).astype(np.float32)

    built = {}
    for cname, desc in header["components"].items():
        cls = _CLASSES[desc["class"]]
        est = cls(**_restore_params(cls, desc["params"]))
        est.restore_fitted(tensors.get(cname, {}), desc["state"])
        built[cname] = est

    if header["architecture"] == "rf":
        stats = header["norm_stats"]
        model = AeForestClassifier(norm_stats=NormStats.from_dict(stats) if stats else None)
        model.autoencoder_, model.forest_ = built["autoencoder"], built["forest"]
        model.classes_ = model.forest_.classes_
        model.n_features_in_ = model.autoencoder_.n_features_in_
    else:
        model = built["model"]
    return model, header


def save_checkpoint(model, path, training: dict | None = None) -> Path:
    path = Path(path)
    path.write_bytes(encode_checkpoint(model, training))
    return path


def load_checkpoint(path):
    """Load ``(model, header)`` from ``path``."""
    return decode_checkpoint(Path(path).read_bytes())
