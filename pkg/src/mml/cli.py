"""Command-line entry point: ``mml train | eval | cross-eval | trace``.

Exit codes: 0 success, 1 usage or config error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import ast
import configparser
import csv
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .data import NLI_CLASSES, PRESETS, Dataset, DatasetSpec, apply_transform, load_tsv, native_spec
from .errors import FormatVersionError, InvalidConfigError, InvalidInputError, InvalidTransformError, MMLError
from .evaluation import (CrossTarget, cross_evaluate, evaluate, format_reports, summary_table, write_reports)
from .model import FORMAT_VERSION, load_checkpoint, save_checkpoint
from .multiverse import TaskKind, write_orthogonality_tables
from .trainer import TrainerConfig, Trainer

log = logging.getLogger("mml")

TRACE_FORMAT_VERSION = 1
MANIFEST_NAME = "run_manifest.json"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

_TRAINER_FIELDS = {
    "K": int, "gamma": float, "threshold": int, "alpha": float, "lam": float, "lambda": float,
    "batch_size": int, "epochs": int, "m": int, "prune_enabled": "bool", "max_steps": int,
}
_ENCODER_FIELDS = {"feature_dim": int, "hidden_dims": "ints", "coding_dim": int}
_DATA_FIELDS = {"train", "dev", "preset", "task", "classes", "sentence1", "sentence2", "label",
                "id_column", "header", "name", "lenient"}


class ConfigError(InvalidConfigError):
    pass


@dataclass
class ExperimentConfig:
    trainer: TrainerConfig
    train_path: Path
    spec: DatasetSpec
    dev_path: Path | None = None
    dataset_name: str = "train"
    out: Path = Path("runs/mml")
    run_name: str = "mml"
    lenient: bool = False
    sections: dict = field(default_factory=dict)
    base_dir: Path = Path(".")


def _convert(section: str, key: str, raw: str, kind):
    where = f"[{section}] {key}"
    try:
        if kind == "bool":
            low = raw.strip().lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError
            return low in ("true", "yes", "1", "on")
        if kind == "ints":
            return tuple(int(v) for v in raw.replace(",", " ").split())
        if kind is int and raw.strip().lower() in ("", "none"):
            return None
        return kind(raw)
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {getattr(kind, '__name__', kind)}") from None


def _dataset_spec(section: dict) -> DatasetSpec:
    def col(key, default):
        raw = section.get(key)
        if raw is None:
            return default
        if raw.strip().lower() in ("", "none"):
            return None
        return _convert("data", key, raw, int)

    preset = section.get("preset", "native").strip().lower()
    task = section.get("task", "classification").strip()
    classes = tuple(c.strip() for c in section.get("classes", "0,1").split(",") if c.strip())
    if preset == "native":
        kind = TaskKind.regression() if task == "regression" else TaskKind.classification(max(2, len(classes)))
        base = native_spec(section.get("name", "train"), kind, classes)
    elif preset in PRESETS:
        base = PRESETS[preset]
    else:
        raise ConfigError(f"[data] preset: unknown preset {preset!r}; choose native or one of {sorted(PRESETS)}")
    header = base.header
    if "header" in section:
        header = _convert("data", "header", section["header"], "bool")
    try:
        return DatasetSpec(section.get("name", base.name), task=section.get("task", base.task),
                           class_names=classes if "classes" in section else base.class_names,
                           score_range=base.score_range,
                           sentence1=col("sentence1", base.sentence1), sentence2=col("sentence2", base.sentence2),
                           label=col("label", base.label), id_column=col("id_column", base.id_column), header=header)
    except MMLError as exc:
        raise ConfigError(f"[data] {exc}") from None


def parse_sections(sections: dict, base_dir: Path, seed: int | None = None) -> ExperimentConfig:
    for name in sections:
        if name not in ("run", "data", "encoder", "trainer"):
            raise ConfigError(f"unknown section [{name}]")
    run = sections.get("run", {})
    data = sections.get("data", {})
    for key in data:
        if key not in _DATA_FIELDS:
            raise ConfigError(f"[data] {key}: unknown field")
    kwargs = {}
    for key, raw in sections.get("trainer", {}).items():
        if key not in _TRAINER_FIELDS:
            raise ConfigError(f"[trainer] {key}: unknown field")
        kwargs["lam" if key == "lambda" else key] = _convert("trainer", key, raw, _TRAINER_FIELDS[key])
    for key, raw in sections.get("encoder", {}).items():
        if key not in _ENCODER_FIELDS:
            raise ConfigError(f"[encoder] {key}: unknown field")
        kwargs[key] = _convert("encoder", key, raw, _ENCODER_FIELDS[key])
    for key in run:
        if key not in ("name", "out", "seed"):
            raise ConfigError(f"[run] {key}: unknown field")
    if "seed" in run:
        kwargs["seed"] = _convert("run", "seed", run["seed"], int)
    if seed is not None:
        kwargs["seed"] = seed
    if "train" not in data:
        raise ConfigError("[data] train: required field missing")
    spec = _dataset_spec(data)
    kwargs["task"] = spec.kind.name
    kwargs["n_classes"] = spec.kind.n_classes
    try:
        trainer = TrainerConfig(**kwargs)
    except MMLError as exc:
        raise ConfigError(f"[trainer] {exc}") from None

    def resolve(p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else (base_dir / path)

    train_path = resolve(data["train"])
    if not train_path.is_file():
        raise ConfigError(f"[data] train: dataset file not found: {train_path}")
    dev_path = None
    if data.get("dev"):
        dev_path = resolve(data["dev"])
        if not dev_path.is_file():
            raise ConfigError(f"[data] dev: dataset file not found: {dev_path}")
    lenient = _convert("data", "lenient", data["lenient"], "bool") if "lenient" in data else False
    return ExperimentConfig(trainer, train_path, spec, dev_path, data.get("name", spec.name),
                            resolve(run.get("out", "runs/" + run.get("name", "mml"))), run.get("name", "mml"),
                            lenient, sections, base_dir)


def _ini_error(path: Path, exc: configparser.Error) -> ConfigError:
    """Turn configparser's exceptions into ``path:line: message``."""
    if isinstance(exc, configparser.ParsingError):
        lineno, text = exc.errors[0]
        try:
            text = ast.literal_eval(text)
        except (ValueError, SyntaxError):
            pass
        return ConfigError(f"{path}:{lineno}: cannot parse {text.strip()!r}")
    if isinstance(exc, configparser.DuplicateOptionError):
        return ConfigError(f"{path}:{exc.lineno}: [{exc.section}] {exc.option}: given twice")
    if isinstance(exc, configparser.DuplicateSectionError):
        return ConfigError(f"{path}:{exc.lineno}: section [{exc.section}] given twice")
    if isinstance(exc, configparser.MissingSectionHeaderError):
        return ConfigError(f"{path}:{exc.lineno}: key outside any [section]")
    return ConfigError(f"{path}: {exc.message}")


def load_experiment(path: str | Path, seed: int | None = None) -> ExperimentConfig:
    """Read an INI experiment config, or a run manifest written by ``train``."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    if path.suffix == ".json":
        manifest = json.loads(path.read_text(encoding="utf-8"))
        if "config" not in manifest:
            raise ConfigError(f"{path}: manifest has no 'config' field")
        return parse_sections(manifest["config"], Path(manifest.get("base_dir", path.parent)), seed)
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise _ini_error(path, exc) from None
    sections = {s: dict(parser.items(s)) for s in parser.sections()}
    return parse_sections(sections, path.parent.resolve(), seed)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _check_outputs(paths: list[Path], force: bool) -> None:
    existing = [p for p in paths if p.exists()]
    if existing and not force:
        raise ConfigError(f"refusing to overwrite {existing[0]} (pass --force)")


def cmd_train(args) -> int:
    exp = load_experiment(args.config, args.seed)
    out = Path(args.out) if args.out else exp.out
    artifacts = [out / "checkpoint.bin", out / "trace.csv", out / "prunes.csv", out / MANIFEST_NAME]
    _check_outputs(artifacts, args.force)
    train_ds = load_tsv(exp.train_path, exp.spec, lenient=exp.lenient, name=exp.dataset_name)
    dev_ds = load_tsv(exp.dev_path, exp.spec, lenient=exp.lenient, name=exp.dataset_name) if exp.dev_path else None
    log.info("training on %d examples (%s), dev %s", len(train_ds), exp.train_path,
             len(dev_ds) if dev_ds is not None else "none")
    result = Trainer(exp.trainer, train_ds, dev_ds, name=exp.run_name).run()
    result.model.config["dataset"] = exp.dataset_name
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(result.model, out / "checkpoint.bin")
    if result.best_model is not None:
        result.best_model.config["dataset"] = exp.dataset_name
        save_checkpoint(result.best_model, out / "best.bin")
    result.trace.write(out)
    write_orthogonality_tables(result.model.bank, out / "orthogonality")
    sections = {s: dict(v) for s, v in exp.sections.items()}
    sections.setdefault("run", {})["seed"] = str(exp.trainer.seed)
    manifest = {
        "config": sections,
        "base_dir": str(exp.base_dir),
        "seed": exp.trainer.seed,
        "trainer": exp.trainer.to_dict(),
        "versions": {"package": __version__, "checkpoint_format": FORMAT_VERSION,
                     "trace_format": TRACE_FORMAT_VERSION},
        "datasets": {"train": {"path": str(exp.train_path), "sha256": _sha256(exp.train_path)}}
        | ({"dev": {"path": str(exp.dev_path), "sha256": _sha256(exp.dev_path)}} if exp.dev_path else {}),
        "result": {"steps": len(result.trace.steps), "active_heads": result.model.n_active,
                   "best_dev_metric": result.best_metric},
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"trained {len(result.trace.steps)} steps; {result.model.n_active} active heads; outputs in {out}")
    return EXIT_OK


def _spec_for(model, preset: str | None, name: str, transforms=("identity",)) -> DatasetSpec:
    """Column layout for an evaluation file.

    Presets carry their own label space. The native layout takes it from
    the input side of the first transform, falling back to the model's own.
    """
    if preset and preset != "native":
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose native or one of {sorted(PRESETS)}")
        spec = PRESETS[preset]
        return DatasetSpec(name, spec.task, spec.class_names, spec.score_range, spec.sentence1,
                           spec.sentence2, spec.label, spec.id_column, spec.header)
    first = next((t for t in transforms if t != "identity"), "identity")
    if first == "binarize-stsb":
        return native_spec(name, TaskKind.regression())
    if first == "collapse-nli":
        return native_spec(name, TaskKind.classification(len(NLI_CLASSES)), NLI_CLASSES)
    return native_spec(name, model.kind, model.class_names)


def _load_for(path, spec: DatasetSpec, name: str, transforms) -> Dataset:
    """Load an evaluation file, blaming the transform when its labels do not fit."""
    try:
        return load_tsv(path, spec, name=name)
    except InvalidInputError as exc:
        chain = [t for t in transforms if t != "identity"]
        if not chain:
            raise
        raise InvalidTransformError(f"{', '.join(chain)} cannot apply to {path}: {exc}") from None


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    name = args.name or Path(args.dataset).stem
    ds = _load_for(args.dataset, _spec_for(model, args.preset, name, [args.transform]), name, [args.transform])
    ds = apply_transform(ds, args.transform)
    log.info("evaluating %s on %d examples after %s", args.checkpoint, len(ds), args.transform)
    report = evaluate(model, ds, args.split, workers=args.workers)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "eval_report.jsonl"
    _check_outputs([out], args.force)
    write_reports([report], out)
    print(format_reports([report]))
    return EXIT_OK


def load_targets(path: str | Path) -> list[tuple[str, dict]]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise _ini_error(Path(path), exc) from None
    targets = []
    for name in parser.sections():
        entry = dict(parser.items(name))
        if "transform" not in entry:
            raise ConfigError(f"[{name}] transform: every target must name its transform")
        if not ({"train", "dev"} & set(entry)):
            raise ConfigError(f"[{name}]: give at least one of train/dev")
        targets.append((name, entry))
    if not targets:
        raise ConfigError(f"{path}: no targets listed")
    return targets


def cmd_cross_eval(args) -> int:
    targets_path = Path(args.targets)
    if not targets_path.is_file():
        raise ConfigError(f"target list not found: {targets_path}")
    entries = load_targets(targets_path)
    models = [load_checkpoint(p) for p in args.checkpoint]
    labels = [args_label or m.name for args_label, m in
              zip((args.label or []) + [None] * len(models), models)]
    by_model, all_reports = {}, []
    for label, model in zip(labels, models):
        model.name = label
        cross = []
        for name, entry in entries:
            transforms = [t.strip() for t in entry["transform"].split(",") if t.strip()]
            spec = _spec_for(model, entry.get("preset"), name, transforms)
            splits = {}
            for split in ("train", "dev"):
                if split in entry:
                    p = Path(entry[split])
                    p = p if p.is_absolute() else targets_path.parent / p
                    splits[split] = _load_for(p, spec, name, transforms)
            cross.append(CrossTarget(name, splits, transforms))
        reports = cross_evaluate(model, cross, workers=args.workers)
        by_model[label] = reports
        all_reports += reports
    out_dir = Path(args.out) if args.out else Path(args.checkpoint[0]).parent
    out_files = [out_dir / "cross_eval.jsonl", out_dir / "cross_eval_summary.txt"]
    _check_outputs(out_files, args.force)
    write_reports(all_reports, out_files[0])
    compare = (labels[0], labels[1]) if len(labels) == 2 else None
    source = args.source or models[0].config.get("dataset")
    table = summary_table(by_model, [n for n, _ in entries], compare, source)
    out_files[1].write_text(table + "\n", encoding="utf-8")
    print(format_reports(all_reports))
    print()
    print(table)
    return EXIT_OK


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_trace(args) -> int:
    run = Path(args.run)
    files = {k: run / f"{k}.csv" for k in ("trace", "prunes", "prune_ema")}
    for k, p in files.items():
        if not p.is_file():
            raise MMLError(f"missing trace file {p}")
    steps = _read_csv(files["trace"])
    if not steps:
        raise MMLError(f"{files['trace']} holds no steps")
    out = Path(args.out) if args.out else run
    out_files = [out / "heads_curve.csv", out / "prune_events.csv"]
    _check_outputs(out_files, args.force)
    out.mkdir(parents=True, exist_ok=True)

    segments = []
    for row in steps:
        step, heads = int(row["step"]), int(row["active_heads"])
        if segments and segments[-1][2] == heads:
            segments[-1][1] = step
        else:
            segments.append([step, step, heads])
    with open(out_files[0], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start_step", "end_step", "active_heads"])
        w.writerows(segments)

    events = {int(r["step"]) for r in _read_csv(files["prunes"]) if r["eliminated"].strip()}
    with open(out_files[1], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "head", "ema", "status"])
        for r in _read_csv(files["prune_ema"]):
            if int(r["step"]) in events:
                w.writerow([r["step"], r["head"], r["ema"], r["status"]])
    print(f"{len(segments)} segment(s), {len(events)} elimination event(s); wrote {out_files[0]} and {out_files[1]}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mml", description="Maximal multiverse learning on sentence-pair tasks")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model from a config file or run manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    transforms = ["identity", "collapse-nli", "binarize-stsb"]
    p = sub.add_parser("eval", help="evaluate a checkpoint on one dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--preset", default="native")
    p.add_argument("--name")
    p.add_argument("--split", default="dev")
    p.add_argument("--transform", choices=transforms, default="identity")
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cross-eval", help="evaluate checkpoints across a list of targets")
    p.add_argument("--checkpoint", required=True, action="append",
                   help="repeat to compare; the first is the baseline")
    p.add_argument("--label", action="append", help="display name per checkpoint")
    p.add_argument("--targets", required=True)
    p.add_argument("--source", help="target excluded from the improvement average")
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_cross_eval)

    p = sub.add_parser("trace", help="export plot-ready head-count and prune-event CSVs")
    p.add_argument("--run", required=True)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, InvalidTransformError, FormatVersionError) as exc:
        print(f"mml {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MMLError as exc:
        print(f"mml {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
