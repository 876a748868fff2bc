"""Test-split evaluation of trained detectors and report rendering."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .detector import batch_probabilities, first_event, latency_tradeoff, run_filter, smooth_trace
from .metrics import ConfusionCounts, prf1, roc_auc
from .pipeline import normalized_instances
from .seeding import make_rng
from .storage import Dataset
from .windows import build_windows

MODEL_TITLES = {"cnn": "CNN", "rf": "Autoencoder + Random Forest", "lstm": "LSTM", "ae": "Autoencoder"}


class LeakageError(RuntimeError):
    """Evaluation was requested on data the model was trained on."""


class ConditionMismatchError(ValueError):
    pass


@dataclass
class EvalReport:
    condition: str
    model: str
    split: str
    n_instances: int
    metrics: dict = field(default_factory=dict)
    auc: float | None = None
    permutation_aucs: list | None = None
    roc_points: list | None = None
    latency: dict | None = None
    tradeoff: list | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**d)


def _section(counts: ConfusionCounts, title: str) -> dict:
    p, r, f1, degenerate = prf1(counts)
    return {"precision": p, "recall": r, "f1": f1, "degenerate": degenerate, "title": title,
            "counts": counts.to_dict()}


def _lstm_metrics(model, instances, capacity: int, capacities):
    probs = batch_probabilities(model, instances, normalized=True)
    raw = (probs >= 0.5).astype(np.int64)
    raw_c, filt_c, causal_c, event_c = ConfusionCounts(), ConfusionCounts(), ConfusionCounts(), ConfusionCounts()
    latencies = []
    for inst, r in zip(instances, raw):
        labels = inst.labels
        sm = smooth_trace(r, capacity)
        raw_c += ConfusionCounts.from_predictions(r, labels)
        filt_c += ConfusionCounts.from_predictions(run_filter(r, capacity), labels)
        causal_c += ConfusionCounts.from_predictions(sm, labels)
        ev = first_event(sm, inst.warmup_start, inst.index)
        if ev is not None and ev.latency is not None:
            latencies.append(ev.latency)
        hit = ev is not None and inst.warmup_end is not None and ev.detect_index < inst.warmup_end
        false_alarm = bool(np.any(sm.astype(bool) & ~labels))
        event_c += ConfusionCounts(tp=int(hit), fn=int(inst.warmup_start is not None and not hit),
                                   fp=int(false_alarm), tn=int(not false_alarm))
    metrics = {
        "per_sample_smoothed": _section(filt_c, f"Per sample, buffer {capacity} (samples inside a firing buffer)"),
        "per_sample_raw": _section(raw_c, "Per sample, raw predictions"),
        "per_sample_causal": _section(causal_c, f"Per sample, causal decision of the buffer-{capacity} rule"),
        "event": _section(event_c, "Per instance (event inside the warm-up)"),
    }
    latency = {"capacity": capacity, "n_events": len(latencies), "n_instances": len(instances),
               "min": min(latencies) if latencies else None,
               "mean": float(np.mean(latencies)) if latencies else None,
               "max": max(latencies) if latencies else None}
    tradeoff = None
    if capacities:
        tradeoff = [row.to_dict() for row in latency_tradeoff(model, instances, capacities, probabilities=probs)]
    return metrics, latency, tradeoff


def evaluate_model(model, header: dict, dataset: Dataset, partition: str = "test", allow_leakage: bool = False,
                   buffer_capacity: int = 7, capacities=None, n_permutations: int = 5) -> EvalReport:
    arch = header["architecture"]
    trained_on = header.get("training", {}).get("condition")
    if trained_on is not None and trained_on != dataset.condition:
        raise ConditionMismatchError(
            f"checkpoint was trained on condition {trained_on} but the dataset is {dataset.condition}")
    if partition == "train" and not allow_leakage:
        raise LeakageError("refusing to evaluate on the training split (use --allow-leakage to override)")
    instances = normalized_instances(dataset, partition)
    report = EvalReport(dataset.condition, arch, partition, len(instances), config=header.get("training", {}))

    if arch == "cnn":
        w = build_windows(instances, "cnn", 1)
        pred = model.predict(w.X)
        report.metrics["per_window"] = _section(ConfusionCounts.from_predictions(pred, w.y), "Per window")
    elif arch == "rf":
        w = build_windows(instances, "ae", 1)
        scores = model.score_samples(w.X)
        report.metrics["per_window"] = _section(ConfusionCounts.from_predictions(scores >= 0.5, w.y), "Per window")
        roc = roc_auc(scores, w.y)
        report.auc = roc.auc
        report.roc_points = [[float(a), float(b)] for a, b in roc.points()]
        rng = make_rng(header.get("training", {}).get("random_state", 0), "permutation-baseline")
        report.permutation_aucs = [roc_auc(scores, rng.permutation(w.y)).auc for _ in range(n_permutations)]
    elif arch == "lstm":
        report.metrics, report.latency, report.tradeoff = _lstm_metrics(model, instances, buffer_capacity, capacities)
    else:
        raise ValueError(f"cannot evaluate a {arch!r} checkpoint on its own; evaluate the rf checkpoint instead")
    return report


def _fmt(x) -> str:
    return "n/a" if x is None else f"{x:.3f}"


def render_report(reports: list[EvalReport], fmt: str = "markdown") -> str:
    if fmt == "json":
        return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True) + "\n"
    if fmt != "markdown":
        raise ValueError(f"unknown format {fmt!r}")

    lines = []
    for arch in sorted({r.model for r in reports}):
        group = [r for r in reports if r.model == arch]
        lines.append(f"## Performance of {MODEL_TITLES.get(arch, arch)}")
        lines.append("")
        for section in group[0].metrics:
            lines.append(f"### {group[0].metrics[section]['title']}")
            lines.append("")
            lines.append("| Servers under attack | Precision | Recall | F1 Score |")
            lines.append("|---|---|---|---|")
            for r in group:
                m = r.metrics[section]
                flag = " (degenerate)" if m["degenerate"] else ""
                lines.append(f"| {r.condition} | {_fmt(m['precision'])} | {_fmt(m['recall'])} | {_fmt(m['f1'])}{flag} |")
            lines.append("")
        for r in group:
            if r.auc is not None:
                perm = ", ".join(_fmt(a) for a in r.permutation_aucs or [])
                lines.append(f"ROC AUC ({r.condition}): {_fmt(r.auc)}; label-permutation baseline: {perm}")
                lines.append("")
            if r.latency is not None:
                lat = r.latency
                lines.append(f"Detection latency ({r.condition}, buffer {lat['capacity']}, samples): "
                             f"min {lat['min']}, mean {_fmt(lat['mean'])}, max {lat['max']} "
                             f"over {lat['n_events']}/{lat['n_instances']} instances")
                lines.append("")
            if r.tradeoff:
                lines.append(f"Buffer trade-off ({r.condition}):")
                lines.append("")
                lines.append("| Buffer | Precision | Recall | F1 Score | Event recall | Max latency | Mean latency |")
                lines.append("|---|---|---|---|---|---|---|")
                for row in r.tradeoff:
                    lines.append(f"| {row['capacity']} | {_fmt(row['precision'])} | {_fmt(row['recall'])} | "
                                 f"{_fmt(row['f1'])} | {_fmt(row['event_recall'])} | {row['max_latency']} | "
                                 f"{_fmt(row['mean_latency'])} |")
                lines.append("")
    return "\n".join(lines)


def write_reports(reports: list[EvalReport], out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(render_report(reports, "json"))
    (out_dir / "report.md").write_text(render_report(reports, "markdown") + "\n")
    roc = [r for r in reports if r.roc_points]
    if roc:
        with open(out_dir / "roc_points.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fpr", "tpr"] if len(roc) == 1 else ["condition", "fpr", "tpr"])
            for r in roc:
                for fpr, tpr in r.roc_points:
                    w.writerow([repr(fpr), repr(tpr)] if len(roc) == 1 else [r.condition, repr(fpr), repr(tpr)])
    return out_dir
