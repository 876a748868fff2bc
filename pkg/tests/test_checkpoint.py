import struct
import zlib

import numpy as np
import pytest

from xfire.models import (AeForestClassifier, AutoencoderTransformer, CheckpointError, CnnWindowClassifier,
                          GiniForest, LstmSequenceClassifier, MissingNormalizationError, load_checkpoint,
                          save_checkpoint)
from xfire.models.checkpoint import decode_checkpoint, encode_checkpoint
from xfire.traffic import NormStats

STATS = NormStats(95.5, 181.25)


@pytest.fixture(scope="module")
def models():
    r = np.random.default_rng(0)
    ae_X = r.random((60, 400)).astype(np.float32)
    ae = AutoencoderTransformer(hidden_sizes=(16, 8, 16), max_epochs=2, norm_stats=STATS).fit(ae_X)
    rf = AeForestClassifier(autoencoder=ae, forest=GiniForest(n_trees=4), norm_stats=STATS).fit(
        ae_X, r.integers(0, 2, 60))
    cnn_X = r.random((20, 15, 80, 1)).astype(np.float32)
    cnn = CnnWindowClassifier(max_epochs=2, learning_rate=1e-3, norm_stats=STATS).fit(cnn_X, r.integers(0, 2, 20))
    lstm_X = r.random((6, 64, 80)).astype(np.float32)
    lstm = LstmSequenceClassifier(hidden_sizes=(8, 8), max_epochs=2, norm_stats=STATS).fit(
        lstm_X, r.integers(0, 2, (6, 64)))
    return {"ae": (ae, ae_X), "rf": (rf, ae_X), "cnn": (cnn, cnn_X), "lstm": (lstm, lstm_X)}


def _outputs(kind, model, X):
    if kind == "ae":
        return model.transform(X)
    if kind == "rf":
        return model.predict_proba(X)
    return model.decision_function(X)


@pytest.mark.parametrize("kind", ["ae", "rf", "cnn", "lstm"])
def test_round_trip(tmp_path, models, kind):
    model, X = models[kind]
    path = save_checkpoint(model, tmp_path / f"{kind}.xfck", {"note": "t"})
    back, header = load_checkpoint(path)
    assert header["architecture"] == kind
    assert header["training"] == {"note": "t"}
    assert NormStats.from_dict(header["norm_stats"]) == STATS
    assert np.array_equal(_outputs(kind, back, X), _outputs(kind, model, X))
    # re-encoding the loaded model reproduces the file exactly
    assert encode_checkpoint(back, {"note": "t"}) == path.read_bytes()


def test_params_survive(models):
    lstm = models["lstm"][0]
    back, _ = decode_checkpoint(encode_checkpoint(lstm))
    assert back.get_params()["hidden_sizes"] == (8, 8)
    assert back.norm_stats == STATS
    assert back.best_epoch_ == lstm.best_epoch_ and back.history_ == lstm.history_


def test_truncated(tmp_path, models):
    blob = encode_checkpoint(models["cnn"][0])
    for cut in (3, 15, len(blob) // 2, len(blob) - 1):
        with pytest.raises(CheckpointError):
            decode_checkpoint(blob[:cut])
    path = tmp_path / "t.xfck"
    path.write_bytes(blob[:100])
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_bit_flip_and_magic(models):
    blob = bytearray(encode_checkpoint(models["lstm"][0]))
    blob[len(blob) // 2] ^= 1
    with pytest.raises(CheckpointError, match="checksum"):
        decode_checkpoint(bytes(blob))
    with pytest.raises(CheckpointError):
        decode_checkpoint(b"NOPE" + bytes(40))


def test_version_rejected(models):
    blob = bytearray(encode_checkpoint(models["lstm"][0]))
    blob[4:8] = struct.pack("<I", 2)
    body = bytes(blob[:-4])
    with pytest.raises(CheckpointError, match="version"):
        decode_checkpoint(body + struct.pack("<I", zlib.crc32(body)))


def test_missing_norm_stats_blocks_prediction(models):
    lstm, X = models["lstm"]
    lstm2, _ = decode_checkpoint(encode_checkpoint(lstm))
    lstm2.norm_stats = None
    blob = encode_checkpoint(lstm2)
    back, header = decode_checkpoint(blob)
    assert header["norm_stats"] is None
    with pytest.raises(MissingNormalizationError):
        back.predict(X)
