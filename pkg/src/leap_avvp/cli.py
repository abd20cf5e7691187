"""Command line entry point: gen-data, train, eval, compare, ablate.

Exit codes: 0 success, 2 validation error, 1 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import DatasetConfig, dataset_stats, generate_dataset, save_dataset
from .harness import (Checkpoint, ExperimentConfig, ablate, compare, evaluate, evaluation_result,
                      resolve_dataset, train, training_result)
from .report import emit_report

log = logging.getLogger("leap_avvp")


class ValidationError(Exception):
    pass


def _read_json(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ValidationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc


def _experiment(raw: dict, seed: int | None) -> ExperimentConfig:
    if seed is not None:
        raw = {**raw, "seed": seed}
    return ExperimentConfig.from_dict(raw)


def cmd_gen_data(args) -> None:
    raw = _read_json(args.config)
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = DatasetConfig.from_dict(raw)
    ds = generate_dataset(cfg)
    out = save_dataset(ds, args.out)
    (out / "stats.json").write_text(json.dumps(dataset_stats(ds), indent=2, sort_keys=True) + "\n")
    print(f"wrote {sum(len(r) for r in ds.splits.values())} videos to {out}")


def cmd_train(args) -> None:
    cfg = _experiment(_read_json(args.config), args.seed)
    ckpt, history = train(cfg)
    out = Path(args.out)
    ckpt.save(out / "checkpoint.npz")
    emit_report(training_result(ckpt, history), out / "train_log.json")
    print(f"best epoch {ckpt.epoch}; checkpoint written to {out / 'checkpoint.npz'}")


def cmd_eval(args) -> None:
    raw = _read_json(args.config)
    ckpt_path = args.checkpoint or raw.pop("checkpoint", None)
    raw.pop("checkpoint", None)
    if ckpt_path is None:
        raise ValidationError("eval needs --checkpoint (or a 'checkpoint' key in the config)")
    ckpt = Checkpoint.load(ckpt_path)
    cfg = ckpt.config if not raw else _experiment({**ckpt.config.to_dict(), **raw}, args.seed)
    dataset = resolve_dataset(cfg.dataset)
    metrics = evaluate(ckpt, dataset, args.split, args.threshold)
    path = emit_report(evaluation_result(ckpt, metrics, args.split), args.out)
    print(f"Type@AV (segment) {metrics['all'].segment['type_at_av']:.4f}; report written to {path}")


def _seeds(raw: dict, seed: int | None) -> list[int]:
    if seed is not None:
        return [seed]
    seeds = raw.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds:
        raise ValidationError("'seeds' must be a nonempty list")
    return [int(s) for s in seeds]


def cmd_compare(args) -> None:
    raw = _read_json(args.config)
    entries = raw.get("configs")
    if not isinstance(entries, dict) or len(entries) < 2:
        raise ValidationError("compare config needs a 'configs' object with at least two named entries")
    shared = raw.get("shared", {})
    configs = {name: ExperimentConfig.from_dict({**shared, **c}) for name, c in entries.items()}
    result = compare(configs, _seeds(raw, args.seed), raw.get("split", "test"))
    path = emit_report(result, args.out)
    print(path.with_suffix(".txt").read_text(), end="")


def cmd_ablate(args) -> None:
    raw = _read_json(args.config)
    for key in ("axis", "values"):
        if key not in raw:
            raise ValidationError(f"ablate config needs '{key}'")
    base = ExperimentConfig.from_dict(raw.get("base", {}))
    result = ablate(base, raw["axis"], raw["values"], _seeds(raw, args.seed), raw.get("split", "test"))
    path = emit_report(result, args.out)
    print(path.with_suffix(".txt").read_text(), end="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leap-avvp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "gen-data": (cmd_gen_data, "generate a synthetic dataset (DatasetConfig JSON)"),
        "train": (cmd_train, "train a model (ExperimentConfig JSON)"),
        "eval": (cmd_eval, "evaluate a checkpoint"),
        "compare": (cmd_compare, "train and compare named configs over seeds"),
        "ablate": (cmd_ablate, "sweep one config axis over seeds"),
    }
    for name, (fn, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config path")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", required=True, help="output path")
        if name == "eval":
            p.add_argument("--checkpoint", help="checkpoint .npz from train")
            p.add_argument("--split", default="test")
            p.add_argument("--threshold", type=float)
        p.set_defaults(func=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValidationError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0
