"""Command-line entry point: ``toat {synth,train,eval,ablate,topics}``.

Exit codes: 0 success, 2 input error, 3 training failure, 4 incompatible
artifact.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .config import ConfigError, TrainingConfig
from .data import (
    DataError,
    SplitManifest,
    SynthSpec,
    TopicCatalog,
    apply_split,
    load_dataset,
    make_manifest,
    save_dataset,
    synth_generate,
)
from .encoders import load_feature_file
from .evaluation import (
    evaluate,
    plot_topic_analysis,
    render_table,
    run_ablation,
    run_topic_subsets,
    topic_rows_to_csv,
    usage_rates,
)
from .trainer import Checkpoint, CheckpointError, TrainingError, train, write_history

logger = logging.getLogger("toat")

EXIT_OK, EXIT_INPUT, EXIT_TRAINING, EXIT_ARTIFACT = 0, 2, 3, 4


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    dataset_root: str = "."
    dataset: str = "dataset.jsonl"
    split: str = "split.json"
    out: str = "runs/default"
    n_topics: int = 10
    dump_attention: bool = False
    feature_file: str | None = None
    training: TrainingConfig = field(default_factory=TrainingConfig)

    @classmethod
    def from_dict(cls, obj: dict) -> "RunConfig":
        obj = dict(obj)
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown run config field(s): {', '.join(sorted(unknown))}")
        obj["training"] = TrainingConfig.from_dict(obj.get("training", {}))
        return cls(**obj)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "training"}
        d["training"] = self.training.to_dict()
        return d

    def resolve(self, name: str) -> Path:
        return Path(self.dataset_root) / name


def _read_json(path: str | Path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _prepare_out(path: str | Path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and any(out.iterdir()) and not force:
        raise InputError(f"output directory {out} is not empty (use --force)")
    out.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(handler)
    logging.getLogger().setLevel(logging.INFO)
    return out


def _run_config(args) -> RunConfig:
    cfg = RunConfig.from_dict(_read_json(args.config)) if args.config else RunConfig()
    training = cfg.training
    if args.dataset_root is not None:
        cfg.dataset_root = args.dataset_root
    if args.split is not None:
        cfg.split = args.split
    if args.out is not None:
        cfg.out = args.out
    if args.dump_attention:
        cfg.dump_attention = True
    changes = {}
    if args.alpha is not None:
        changes["alpha"] = args.alpha if args.alpha in ("auto", "off") else float(args.alpha)
    if args.modality is not None:
        changes["modality"] = args.modality
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.epochs is not None:
        changes["epochs"] = args.epochs
    if changes:
        training = TrainingConfig.from_dict({**training.to_dict(), **changes})
    cfg.training = training
    return cfg


def _load_splits(cfg: RunConfig):
    dataset_path = cfg.resolve(cfg.dataset)
    if not dataset_path.exists():
        raise InputError(f"dataset not found: {dataset_path}")
    samples = load_dataset(dataset_path, TopicCatalog.of_size(cfg.n_topics))
    split_path = Path(cfg.split) if Path(cfg.split).is_absolute() else cfg.resolve(cfg.split)
    if not split_path.exists():
        raise InputError(f"split manifest not found: {split_path}")
    manifest = SplitManifest.load(split_path)
    return samples, apply_split(samples, manifest)


def _features(cfg: RunConfig):
    if cfg.feature_file is None:
        return None, None
    path = cfg.resolve(cfg.feature_file)
    if not path.exists():
        raise InputError(f"feature file not found: {path}")
    dims = cfg.training.dims
    return load_feature_file(path), (dims.d_model, dims.d_audio)


def _write_dumps(path: Path, dumps) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in dumps:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args) -> int:
    spec_obj = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        spec_obj["seed"] = args.seed
    spec = SynthSpec.from_dict(spec_obj)
    out = _prepare_out(args.out or "synth", args.force)
    samples = synth_generate(spec)
    save_dataset(samples, out / "dataset.jsonl")
    make_manifest([s.participant_id for s in samples], spec.seed).save(out / "split.json")
    _write_json(out / "synth_spec.json", spec.to_dict())
    logger.info("wrote %d samples to %s", len(samples), out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _run_config(args)
    _, (train_set, val_set, test_set) = _load_splits(cfg)
    features, feature_dims = _features(cfg)
    out = _prepare_out(cfg.out, args.force)
    _write_json(out / "effective_config.json", cfg.to_dict())
    best, history = train(cfg.training, train_set, val_set, features, feature_dims)
    best.save(out / "checkpoint.npz")
    write_history(history, out / "history.csv")
    if cfg.dump_attention:
        model = best.build_model(features)
        _, dumps = evaluate(model, val_set + test_set)
        _write_dumps(out / "attention.jsonl", dumps)
    logger.info("best epoch %d, validation F1 %.4f", best.epoch, best.metrics["validation"]["f1"])
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else Path(cfg.out) / "checkpoint.npz"
    if not ckpt_path.exists():
        raise InputError(f"checkpoint not found: {ckpt_path}")
    ckpt = Checkpoint.load(ckpt_path)
    _, (_, val_set, test_set) = _load_splits(cfg)
    features, _ = _features(cfg)
    out = _prepare_out(args.eval_out or Path(cfg.out) / "eval", args.force)
    try:
        model = ckpt.build_model(features)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(str(exc)) from exc
    reports = []
    all_dumps = []
    for name, split in (("validation", val_set), ("test", test_set)):
        report, dumps = evaluate(model, split, name)
        reports.append(report)
        all_dumps.extend(dumps)
    _write_json(out / "report.json", {r.name: r.to_dict() for r in reports})
    (out / "report.txt").write_text(render_table(reports), encoding="utf-8")
    test_rates = reports[1].usage_rates
    if test_rates is not None:
        with open(out / "usage_rates.csv", "w", encoding="utf-8") as fh:
            fh.write("topic,usage_rate\n")
            for i, rate in enumerate(test_rates, start=1):
                fh.write(f"{i},{'' if rate is None else repr(rate)}\n")
    if cfg.dump_attention:
        _write_dumps(out / "attention.jsonl", all_dumps)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _run_config(args)
    _, (train_set, val_set, test_set) = _load_splits(cfg)
    features, feature_dims = _features(cfg)
    out = _prepare_out(cfg.out, args.force)
    _write_json(out / "effective_config.json", cfg.to_dict())
    reports = run_ablation(
        train_set, val_set, test_set, cfg.training, parallel=args.parallel, features=features, feature_dims=feature_dims
    )
    _write_json(out / "ablation.json", [r.to_dict() for r in reports])
    (out / "ablation.txt").write_text(render_table(reports), encoding="utf-8")
    return EXIT_OK


def cmd_topics(args) -> int:
    cfg = _run_config(args)
    samples, (train_set, val_set, test_set) = _load_splits(cfg)
    features, feature_dims = _features(cfg)
    out = _prepare_out(cfg.out, args.force)
    _write_json(out / "effective_config.json", cfg.to_dict())
    rows = run_topic_subsets(train_set, val_set, test_set, cfg.training, features, feature_dims)
    # usage rates come from a full topic-attention model over the whole dataset
    if args.checkpoint:
        model = Checkpoint.load(args.checkpoint).build_model(features)
    else:
        full_cfg = cfg.training if cfg.training.alpha != "off" else cfg.training.replace(alpha="auto")
        best, _ = train(full_cfg, train_set, val_set, features, feature_dims)
        model = best.build_model(features)
    _, dumps = evaluate(model, train_set + val_set + test_set)
    rates = usage_rates(dumps, model.alpha, model.n_topics) if dumps else None
    if cfg.dump_attention:
        _write_dumps(out / "attention.jsonl", dumps)
    _write_json(
        out / "topics.json",
        {
            "alpha": model.alpha,
            "usage_rates": rates,
            "topics": [
                {**{k: v for k, v in r.items() if k != "report"}, "report": None if r["report"] is None else r["report"].to_dict()}
                for r in rows
            ],
        },
    )
    topic_rows_to_csv(rows, rates, out / "topics.csv")
    if args.plot:
        plot_topic_analysis(rows, rates, out / "topics.png")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "topics": cmd_topics}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="toat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config (synth spec for 'synth', run config otherwise)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--force", action="store_true", help="reuse a non-empty output directory")
        if name == "synth":
            continue
        p.add_argument("--dataset-root")
        p.add_argument("--split", help="split manifest path, relative to the dataset root")
        p.add_argument("--alpha", help="threshold, 'auto' (1/N) or 'off'")
        p.add_argument("--modality", choices=("both", "text", "audio"))
        p.add_argument("--epochs", type=int)
        p.add_argument("--dump-attention", action="store_true")
        if name in ("eval", "topics"):
            p.add_argument("--checkpoint")
        if name == "eval":
            p.add_argument("--eval-out", help="report directory (default <out>/eval)")
        if name == "ablate":
            p.add_argument("--parallel", type=int, default=1)
        if name == "topics":
            p.add_argument("--plot", action="store_true", help="also write topics.png")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (InputError, DataError, ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        for handler in list(logging.getLogger().handlers):
            if isinstance(handler, logging.FileHandler):
                logging.getLogger().removeHandler(handler)
                handler.close()


if __name__ == "__main__":
    sys.exit(main())
