"""Metrics, single-dataset evaluation and the cross-dataset robustness harness."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import BINARY_NLI_CLASSES, NLI_CLASSES, Dataset, apply_transform
from .errors import InvalidEvalError, InvalidInputError, InvalidTransformError
from .model import MMLModel


def accuracy(predictions, labels) -> float:
    p, y = np.asarray(predictions), np.asarray(labels)
    if p.shape != y.shape:
        raise InvalidInputError(f"length mismatch: {p.shape} predictions vs {y.shape} labels")
    if p.size == 0:
        raise InvalidInputError("accuracy of an empty set is undefined")
    return float(np.mean(p == y))


def average_ranks(x) -> np.ndarray:
    """1-based ranks; tied values share the mean of the ranks they span."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="mergesort")
    sorted_x = x[order]
    ranks = np.empty(x.size, dtype=np.float64)
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sorted_x[j + 1] == sorted_x[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidInputError(f"spearman needs two equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise InvalidInputError("spearman needs at least two points")
    rx, ry = average_ranks(x), average_ranks(y)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = np.sqrt(np.dot(rx, rx) * np.dot(ry, ry))
    if denom == 0:
        raise InvalidInputError("spearman is undefined when either input has constant rank")
    return float(np.clip(np.dot(rx, ry) / denom, -1.0, 1.0))


@dataclass
class EvalReport:
    model: str
    dataset: str
    split: str
    metric: str
    value: float
    n: int
    active_heads: int
    transform_chain: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _prediction_map(model: MMLModel, dataset: Dataset):
    """How model outputs line up with the dataset's labels, or raise if they cannot."""
    if model.kind.is_regression != dataset.kind.is_regression:
        raise InvalidEvalError(f"{model.kind.name} model cannot be scored on {dataset.kind.name} dataset "
                               f"{dataset.name!r}; apply a transform first")
    if model.kind.is_regression:
        return None
    m_names, d_names = tuple(model.class_names), tuple(dataset.class_names)
    if model.kind.n_classes == dataset.kind.n_classes and (not m_names or not d_names or m_names == d_names):
        return None
    if m_names == NLI_CLASSES and d_names == BINARY_NLI_CLASSES:
        entail = NLI_CLASSES.index("entailment")
        return lambda pred: np.where(pred == entail, 0, 1)
    raise InvalidEvalError(f"model classes {list(m_names)} do not match dataset {dataset.name!r} "
                           f"classes {list(d_names)}")


def predict(model: MMLModel, dataset: Dataset, workers: int = 1, chunk: int = 256) -> np.ndarray:
    X = model.featurize(dataset.pairs)
    if workers <= 1 or len(X) <= chunk:
        return model.predict(X)
    parts = [X[i:i + chunk] for i in range(0, len(X), chunk)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(model.predict, parts)))


def evaluate(model: MMLModel, dataset: Dataset, split: str = "dev", workers: int = 1) -> EvalReport:
    """Accuracy for classification, Spearman for regression, using averaged active heads."""
    if len(dataset) == 0:
        raise InvalidEvalError(f"dataset {dataset.name!r} is empty")
    remap = _prediction_map(model, dataset)
    pred = predict(model, dataset, workers)
    if model.kind.is_regression:
        metric, value = "spearman", spearman(pred, dataset.labels)
    else:
        if remap is not None:
            pred = remap(pred)
        metric, value = "accuracy", accuracy(pred, dataset.labels)
    return EvalReport(model.name, dataset.name, split, metric, value, len(dataset), model.n_active,
                      list(dataset.transforms))


@dataclass
class CrossTarget:
    """One target dataset with its splits and the transform chain aligning its labels."""

    name: str
    splits: dict[str, Dataset]
    transforms: Sequence[str] = ("identity",)


def cross_evaluate(model: MMLModel, targets: Sequence[CrossTarget], workers: int = 1) -> list[EvalReport]:
    """One report per (target, split); transforms touch only the target data."""
    reports = []
    for target in targets:
        if not target.transforms:
            raise InvalidTransformError(f"target {target.name!r} names no transform")
        for split, ds in target.splits.items():
            for t in target.transforms:
                ds = apply_transform(ds, t)
            try:
                rep = evaluate(model, ds, split, workers)
            except InvalidEvalError as exc:
                raise InvalidTransformError(f"target {target.name!r}: {exc}") from None
            rep.dataset = target.name
            rep.transform_chain = list(target.transforms)
            reports.append(rep)
    return reports


def write_reports(reports: Sequence[EvalReport], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(r.to_json() + "\n" for r in reports), encoding="utf-8")
    return path


def read_reports(path: str | Path) -> list[EvalReport]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [EvalReport(**json.loads(line)) for line in lines if line.strip()]


def format_reports(reports: Sequence[EvalReport]) -> str:
    rows = [("model", "dataset", "split", "metric", "value", "n", "heads")]
    rows += [(r.model, r.dataset, r.split, r.metric, f"{r.value:.4f}", str(r.n), str(r.active_heads))
             for r in reports]
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows)


def relative_improvement(baseline: dict[str, float], candidate: dict[str, float],
                         holdouts: Sequence[str]) -> float:
    """Mean over holdout targets of candidate/baseline - 1, in percent."""
    ratios = [candidate[t] / baseline[t] for t in holdouts]
    return 100.0 * (float(np.mean(ratios)) - 1.0)


def _cells(reports: Sequence[EvalReport]) -> dict[tuple[str, str], float]:
    return {(r.dataset, r.split): r.value for r in reports}


def summary_table(by_model: dict[str, Sequence[EvalReport]], targets: Sequence[str],
                  compare: tuple[str, str] | None = None, source: str | None = None) -> str:
    """Rows are models, columns targets, each cell ``train/dev`` in percent.

    With ``compare=(baseline, candidate)`` an extra column gives the
    candidate's average relative improvement over the holdout targets
    (every target except ``source``), for train and dev separately.
    """
    header = ["model", *targets]
    if compare:
        header.append("avg cross-dataset improvement")
    rows = [header]
    cells = {name: _cells(reps) for name, reps in by_model.items()}
    for name in by_model:
        row = [name]
        for t in targets:
            parts = []
            for split in ("train", "dev"):
                v = cells[name].get((t, split))
                parts.append("-" if v is None else f"{100 * v:.2f}")
            row.append("/".join(parts))
        if compare:
            if name == compare[1]:
                holdouts = [t for t in targets if t != source]
                imp = []
                for split in ("train", "dev"):
                    base, cand = cells[compare[0]], cells[compare[1]]
                    have = [t for t in holdouts if (t, split) in base and (t, split) in cand]
                    if not have:
                        imp.append("-")
                        continue
                    value = relative_improvement({t: base[(t, split)] for t in have},
                                                 {t: cand[(t, split)] for t in have}, have)
                    imp.append(f"{value:+.2f}%")
                row.append("/".join(imp))
            else:
                row.append("-")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows)
