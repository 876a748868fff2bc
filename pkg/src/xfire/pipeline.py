"""End-to-end steps shared by the CLI and the acceptance suite."""
from __future__ import annotations

import csv
import logging
from pathlib import Path

import numpy as np

from .config import RunConfig
from .models import (AeForestClassifier, AutoencoderTransformer, CnnWindowClassifier, GiniForest,
                     LstmSequenceClassifier, load_checkpoint, save_checkpoint)
from .storage import Dataset, save_dataset
from .traffic import compute_minmax, normalize, synthesize_dataset
from .windows import Windows, build_windows, split_dataset

log = logging.getLogger(__name__)

MODEL_KINDS = ("ae", "rf", "cnn", "lstm")


class DependencyError(RuntimeError):
    """A training step needs an artifact that was not supplied."""


def simulate(config: RunConfig, out_dir, n_jobs: int | None = None) -> dict:
    """Generate, split, fit normalization on the training split and write to ``out_dir``."""
    out_dir = Path(out_dir)
    instances = synthesize_dataset(config.scenario, n_jobs=n_jobs)
    split = split_dataset(len(instances), config.effective_split_seed)
    stats = compute_minmax([instances[i] for i in split.train])
    save_dataset(out_dir, config.scenario, instances, stats, split)
    config.save(out_dir / "config.json")
    n_pos = int(sum(inst.labels.sum() for inst in instances))
    n_total = int(sum(inst.labels.size for inst in instances))
    return {
        "instances": len(instances),
        "servers": config.scenario.n_servers,
        "samples_per_instance": config.scenario.n_samples,
        "condition": config.scenario.condition,
        "split": {k: len(v) for k, v in (("train", split.train), ("val", split.val), ("test", split.test))},
        "warmup_samples": n_pos,
        "other_samples": n_total - n_pos,
        "norm_stats": stats.to_dict(),
    }


def normalized_instances(dataset: Dataset, partition: str):
    return [normalize(inst, dataset.norm_stats) for inst in dataset.instances(partition)]


def split_windows(dataset: Dataset, partition: str, kind: str, stride: int) -> Windows:
    return build_windows(normalized_instances(dataset, partition), kind, stride)


def train(kind: str, dataset: Dataset, config: RunConfig, ae_model=None):
    """Train one architecture on ``dataset``'s train split, validating on its val split."""
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; choose from {MODEL_KINDS}")
    stats = dataset.norm_stats
    w = config.windows
    params = config.model_params(kind)
    if kind == "ae":
        tr = split_windows(dataset, "train", "ae", w["ae_stride"])
        va = split_windows(dataset, "val", "ae", w["ae_stride"])
        return AutoencoderTransformer(norm_stats=stats, **params).fit(tr.X, X_val=va.X)
    if kind == "rf":
        if ae_model is None:
            raise DependencyError("training the random forest requires a trained autoencoder checkpoint")
        tr = split_windows(dataset, "train", "ae", w["ae_stride"])
        return AeForestClassifier(autoencoder=ae_model, forest=GiniForest(**params), norm_stats=stats).fit(tr.X, tr.y)
    if kind == "cnn":
        tr = split_windows(dataset, "train", "cnn", w["cnn_train_stride"])
        va = split_windows(dataset, "val", "cnn", w["cnn_train_stride"])
        model = CnnWindowClassifier(n_servers=dataset.config.n_servers, norm_stats=stats, **params)
        return model.fit(tr.X, tr.y, va.X, va.y)
    tr = split_windows(dataset, "train", "lstm", w["lstm_train_stride"])
    va = split_windows(dataset, "val", "lstm", w["lstm_train_stride"])
    return LstmSequenceClassifier(norm_stats=stats, **params).fit(tr.X, tr.y, va.X, va.y)


def training_metadata(kind: str, dataset: Dataset, model) -> dict:
    meta = {"kind": kind, "condition": dataset.condition, "scenario": dataset.config.to_dict(),
            "split_seed": dataset.split.seed}
    for attr in ("learning_rate", "random_state"):
        if hasattr(model, attr):
            meta[attr] = getattr(model, attr)
    if hasattr(model, "n_epochs_"):
        meta["epochs_run"] = model.n_epochs_
        meta["best_epoch"] = model.best_epoch_
    return meta


def write_training_curve(model, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tr, va in getattr(model, "history_", []):
            w.writerow([epoch, repr(tr), repr(va)])


def train_to_dir(kind: str, dataset_dir, out_dir, config: RunConfig, ae_checkpoint=None) -> Path:
    dataset = Dataset(dataset_dir)
    ae_model = None
    if kind == "rf":
        if ae_checkpoint is None:
            raise DependencyError("`train rf` needs --ae-checkpoint (train the autoencoder first)")
        ae_model, header = load_checkpoint(ae_checkpoint)
        if header["architecture"] != "ae":
            raise DependencyError(f"{ae_checkpoint} is a {header['architecture']} checkpoint, not an autoencoder")
    model = train(kind, dataset, config, ae_model)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = save_checkpoint(model, out_dir / f"{kind}.xfck", training_metadata(kind, dataset, model))
    # the forest has no epochs; its curve file carries only the header
    write_training_curve(model, out_dir / "training_curve.csv")
    config.save(out_dir / "config.json")
    return ckpt


def stack_instances(instances) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([np.asarray(i.values) for i in instances]).astype(np.float32)
    y = np.stack([i.labels for i in instances])
    return X, y
