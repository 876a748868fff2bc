"""Command-line entry point: simulate, train, eval, detect, gradcheck."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import PROFILES, RunConfig
from .detector import StreamState
from .evaluation import ConditionMismatchError, LeakageError, evaluate_model, render_report, write_reports
from .models import CheckpointError, load_checkpoint
from .models.base import MissingNormalizationError
from .nn.suite import LAYER_TYPES, run_suite
from .pipeline import MODEL_KINDS, DependencyError, simulate, train_to_dir
from .storage import Dataset, DatasetFormatError
from .traffic import normalize_values

log = logging.getLogger("xfire")

EXIT_OK, EXIT_NO_EVENT, EXIT_ERROR = 0, 1, 2

_EXPECTED_ERRORS = (DependencyError, CheckpointError, DatasetFormatError, LeakageError, ConditionMismatchError,
                    MissingNormalizationError, ValueError, OSError, KeyError)


def parse_buffer(text: str) -> list[int]:
    """``7``, ``1..9`` (inclusive) or ``1,3,7``."""
    text = text.strip()
    try:
        if ".." in text:
            lo, hi = (int(p) for p in text.split("..", 1))
            values = list(range(lo, hi + 1))
        else:
            values = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad buffer spec {text!r}; use N, A..B or A,B,C") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("buffer capacities must be >= 1")
    return values


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # Accepted before or after the subcommand; SUPPRESS keeps the subparser
    # from overwriting a value given before it.
    default = argparse.SUPPRESS if suppress else None
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", metavar="PATH", default=default, help="JSON run config (flags override it)")
    g.add_argument("--seed", type=int, metavar="N", default=default, help="master seed")
    g.add_argument("--out", metavar="DIR", default=default, help="output directory")
    g.add_argument("--profile", choices=PROFILES, default=default, help="desk (1000 instances) or paper (6000)")
    g.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xfire", parents=[_global_flags(False)],
                                     description="Crossfire warm-up detection: simulate, train, evaluate, detect.")
    sub = parser.add_subparsers(dest="command", required=True)
    flags = _global_flags(True)

    p = sub.add_parser("simulate", parents=[flags], help="generate a labelled dataset")
    p.add_argument("--instances", type=int, help="number of instances (overrides the profile)")
    p.add_argument("--attacked", type=int, help="servers under attack (80 or 70 for the two conditions)")
    p.add_argument("--servers", type=int, help="servers monitored")

    p = sub.add_parser("train", parents=[flags], help="train one architecture")
    p.add_argument("model", choices=MODEL_KINDS)
    p.add_argument("dataset", help="dataset directory written by `simulate`")
    p.add_argument("--ae-checkpoint", help="trained autoencoder (required for rf)")
    p.add_argument("--max-epochs", type=int, help="override the epoch cap")

    p = sub.add_parser("eval", parents=[flags], help="evaluate checkpoints on a dataset split")
    p.add_argument("checkpoint", nargs="?")
    p.add_argument("dataset", nargs="?")
    p.add_argument("--pair", nargs=2, action="append", default=[], metavar=("CKPT", "DATASET"),
                   help="additional checkpoint/dataset pair (repeatable)")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--buffer", type=parse_buffer, default=None,
                   help="buffer capacity N, or a sweep A..B / A,B,C for the latency trade-off")
    p.add_argument("--allow-leakage", action="store_true", help="permit evaluation on the training split")
    p.add_argument("--format", choices=("markdown", "json"), default="markdown", help="stdout format")

    p = sub.add_parser("detect", parents=[flags], help="stream samples through an LSTM checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("input", nargs="?", default="-", help="file of comma-separated samples (default stdin)")
    p.add_argument("--buffer", type=int, default=None, help="smoothing buffer capacity")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--normalized", action="store_true", help="input is already min/max normalized")
    p.add_argument("--warmup-start", type=int, help="known warm-up onset, for the latency in the event record")

    p = sub.add_parser("gradcheck", parents=[flags], help="finite-difference check of every layer type")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--corrupt", choices=LAYER_TYPES, help="double one layer's analytic gradient (negative control)")
    return parser


def resolve_config(args, fallback: Path | None = None) -> RunConfig:
    """Config file (or ``fallback``, or the profile defaults) with flags applied on top."""
    path = args.config or (fallback if fallback is not None and fallback.exists() else None)
    if path is not None:
        d = json.loads(Path(path).read_text())
        if args.profile:
            d["profile"] = args.profile
        config = RunConfig.from_dict(d)
    else:
        config = RunConfig.for_profile(args.profile or "desk")
    overrides = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    for flag, key in (("instances", "n_instances"), ("attacked", "n_attacked"), ("servers", "n_servers")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if overrides.get("n_servers") and "n_attacked" not in overrides:
        overrides["n_attacked"] = min(config.scenario.n_attacked, overrides["n_servers"])
    if overrides:
        config.scenario = dataclasses.replace(config.scenario, **overrides)
    return config


def cmd_simulate(args) -> int:
    config = resolve_config(args)
    out = Path(args.out or "data")
    summary = simulate(config, out)
    print(json.dumps({"out": str(out), **summary}, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    dataset_dir = Path(args.dataset)
    config = resolve_config(args, fallback=dataset_dir / "config.json")
    if args.max_epochs is not None:
        config.models[args.model]["max_epochs"] = args.max_epochs
    out = Path(args.out or f"runs/{args.model}")
    ckpt = train_to_dir(args.model, dataset_dir, out, config, args.ae_checkpoint)
    print(ckpt)
    return EXIT_OK


def cmd_eval(args) -> int:
    pairs = list(args.pair)
    if args.checkpoint:
        if not args.dataset:
            raise ValueError("eval needs a dataset directory after the checkpoint")
        pairs.insert(0, (args.checkpoint, args.dataset))
    if not pairs:
        raise ValueError("eval needs CHECKPOINT DATASET or at least one --pair")
    capacities = args.buffer
    capacity = 7
    if capacities and len(capacities) == 1:
        capacity, capacities = capacities[0], None
    reports = []
    for ckpt, data in pairs:
        model, header = load_checkpoint(ckpt)
        if args.buffer is None:
            capacity = resolve_config(args, fallback=Path(data) / "config.json").buffer_capacity
        reports.append(evaluate_model(model, header, Dataset(data), args.split, args.allow_leakage,
                                      capacity, capacities))
    out = write_reports(reports, args.out or "reports")
    sys.stdout.write(render_report(reports, args.format))
    log.info("reports written to %s", out)
    return EXIT_OK


def _read_samples(stream, n_features: int):
    """Yield ``(line_number, values)``; malformed lines are reported and skipped."""
    for lineno, line in enumerate(stream, start=1):
        text = line.strip()
        if not text:
            continue
        try:
            values = np.array([float(v) for v in text.split(",")], dtype=np.float64)
            if values.size != n_features:
                raise ValueError(f"expected {n_features} values, got {values.size}")
            if not np.all(np.isfinite(values)):
                raise ValueError("non-finite value")
        except ValueError as exc:
            print(f"warning: line {lineno}: skipped malformed sample ({exc})", file=sys.stderr)
            continue
        yield lineno, values


def cmd_detect(args) -> int:
    model, header = load_checkpoint(args.checkpoint)
    if header["architecture"] != "lstm":
        raise ValueError(f"detect needs an LSTM checkpoint, got {header['architecture']!r}")
    capacity = args.buffer if args.buffer is not None else 7
    state = StreamState(model, capacity, args.threshold)
    stream = sys.stdin if args.input == "-" else open(args.input)
    fired = False
    try:
        for _, values in _read_samples(stream, model.n_features_in_):
            x = values if args.normalized else normalize_values(values, model.norm_stats)
            t, p, raw, smoothed, _ = state.push(x.astype(np.float32))
            sys.stdout.write(json.dumps({"t": t, "p": p, "raw": raw, "smoothed": smoothed}) + "\n")
            if smoothed and not fired:
                fired = True
                event = {"event": "warmup_detected", "t": t, "buffer": capacity}
                if args.warmup_start is not None:
                    if t >= args.warmup_start:
                        event["latency"] = t - args.warmup_start + 1
                    else:
                        event["before_warmup"] = True
                print(json.dumps(event), file=sys.stderr)
    finally:
        if stream is not sys.stdin:
            stream.close()
    return EXIT_OK if fired else EXIT_NO_EVENT


def cmd_gradcheck(args) -> int:
    result = run_suite(args.trials, seed=args.seed or 0, corrupt=args.corrupt)
    for rep in result.reports:
        print(rep)
    print(f"{'all checks passed' if result.passed else 'gradient check FAILED'} in {result.seconds:.1f}s")
    return EXIT_OK if result.passed else EXIT_NO_EVENT


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "eval": cmd_eval, "detect": cmd_detect,
            "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except _EXPECTED_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
