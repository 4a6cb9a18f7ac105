"""GLUE-style TSV ingestion, cross-dataset label transforms and synthetic data."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import SentencePair, tokenize
from .errors import InvalidInputError, InvalidTransformError
from .multiverse import TaskKind
from .numerics import spawn_rngs

log = logging.getLogger(__name__)

NLI_CLASSES = ("entailment", "neutral", "contradiction")
BINARY_NLI_CLASSES = ("entailment", "not_entailment")
BINARY_CLASSES = ("0", "1")


@dataclass(frozen=True)
class Example:
    pair: SentencePair
    label: int | float
    id: str


@dataclass(frozen=True)
class Dataset:
    name: str
    kind: TaskKind
    examples: tuple[Example, ...]
    class_names: tuple[str, ...] = ()
    transforms: tuple[str, ...] = ()
    dropped: tuple[str, ...] = ()
    skipped: tuple[tuple[int, str], ...] = ()
    bayes_accuracy: float | None = None

    def __len__(self) -> int:
        return len(self.examples)

    @property
    def pairs(self) -> list[SentencePair]:
        return [e.pair for e in self.examples]

    @property
    def labels(self) -> np.ndarray:
        if self.kind.is_regression:
            return np.array([e.label for e in self.examples], dtype=np.float64)
        return np.array([e.label for e in self.examples], dtype=np.int64)


@dataclass(frozen=True)
class DatasetSpec:
    """Column layout of a TSV file. Negative column indices count from the end."""

    name: str
    task: str = "classification"
    class_names: tuple[str, ...] = BINARY_CLASSES
    score_range: tuple[float, float] | None = None
    sentence1: int = 0
    sentence2: int | None = 1
    label: int = 2
    id_column: int | None = None
    header: bool = True

    def __post_init__(self):
        cols = [self.sentence1, self.label]
        if self.sentence2 is not None:
            cols.append(self.sentence2)
        if self.id_column is not None:
            cols.append(self.id_column)
        if len(set(cols)) != len(cols):
            raise InvalidInputError(f"{self.name}: column indices must be distinct, got {cols}")
        if self.task == "classification" and len(self.class_names) < 2:
            raise InvalidInputError(f"{self.name}: classification needs >= 2 class names")
        if self.task not in ("classification", "regression"):
            raise InvalidInputError(f"{self.name}: unknown task {self.task!r}")

    @property
    def kind(self) -> TaskKind:
        if self.task == "regression":
            return TaskKind.regression()
        return TaskKind.classification(len(self.class_names))


PRESETS: dict[str, DatasetSpec] = {
    "rte": DatasetSpec("rte", class_names=BINARY_NLI_CLASSES, sentence1=1, sentence2=2, label=3, id_column=0),
    "qnli": DatasetSpec("qnli", class_names=BINARY_NLI_CLASSES, sentence1=1, sentence2=2, label=3, id_column=0),
    "mnli": DatasetSpec("mnli", class_names=NLI_CLASSES, sentence1=8, sentence2=9, label=-1, id_column=0),
    "snli": DatasetSpec("snli", class_names=NLI_CLASSES, sentence1=7, sentence2=8, label=-1, id_column=0),
    "mrpc": DatasetSpec("mrpc", sentence1=3, sentence2=4, label=0),
    "qqp": DatasetSpec("qqp", sentence1=3, sentence2=4, label=5, id_column=0),
    "sts-b": DatasetSpec("sts-b", task="regression", class_names=(), score_range=(0.0, 5.0),
                         sentence1=7, sentence2=8, label=-1, id_column=0),
    "cola": DatasetSpec("cola", sentence1=3, sentence2=None, label=1, header=False),
    "sst-2": DatasetSpec("sst-2", sentence1=0, sentence2=None, label=1),
}


def native_spec(name: str, kind: TaskKind, class_names: Sequence[str] = ()) -> DatasetSpec:
    """Layout written by ``save_tsv``: id, sentence1, sentence2, label."""
    if kind.is_regression:
        return DatasetSpec(name, task="regression", class_names=(), sentence1=1, sentence2=2, label=3, id_column=0)
    return DatasetSpec(name, class_names=tuple(class_names), sentence1=1, sentence2=2, label=3, id_column=0)


def _parse_label(raw: str, spec: DatasetSpec):
    raw = raw.strip()
    if spec.task == "regression":
        try:
            value = float(raw)
        except ValueError:
            raise InvalidInputError(f"bad score {raw!r}") from None
        if not math.isfinite(value):
            raise InvalidInputError(f"non-finite score {raw!r}")
        return value
    if raw not in spec.class_names:
        raise InvalidInputError(f"label {raw!r} not in {list(spec.class_names)}")
    return spec.class_names.index(raw)


def load_tsv(path: str | Path, spec: DatasetSpec, lenient: bool = False, name: str | None = None) -> Dataset:
    """Parse a tab-separated file into examples in file order.

    Malformed rows raise ``InvalidInputError`` naming the line, unless
    ``lenient`` is set, in which case they are skipped and recorded in
    ``Dataset.skipped``.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    needed = [spec.sentence1, spec.label]
    if spec.sentence2 is not None:
        needed.append(spec.sentence2)
    if spec.id_column is not None:
        needed.append(spec.id_column)
    min_width = max(c + 1 if c >= 0 else -c for c in needed)

    examples, skipped = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t", quoting=csv.QUOTE_NONE)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and spec.header:
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                if len(row) < min_width:
                    raise InvalidInputError(f"row has {len(row)} columns, needs {min_width}")
                label = _parse_label(row[spec.label], spec)
            except InvalidInputError as exc:
                if not lenient:
                    raise InvalidInputError(f"{path}:{lineno}: {exc}") from None
                log.warning("%s:%d skipped: %s", path, lineno, exc)
                skipped.append((lineno, str(exc)))
                continue
            second = row[spec.sentence2] if spec.sentence2 is not None else ""
            ex_id = row[spec.id_column] if spec.id_column is not None else str(lineno)
            examples.append(Example(SentencePair.from_text(row[spec.sentence1], second), label, ex_id))
    return Dataset(name or spec.name, spec.kind, tuple(examples), spec.class_names,
                   skipped=tuple(skipped))


def save_tsv(dataset: Dataset, path: str | Path) -> Path:
    """Write in the native layout; dropped ids go to a ``.dropped.txt`` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", quoting=csv.QUOTE_NONE, escapechar=None, lineterminator="\n")
        w.writerow(["id", "sentence1", "sentence2", "label"])
        for ex in dataset.examples:
            if dataset.kind.is_regression:
                label = repr(float(ex.label))
            else:
                label = dataset.class_names[ex.label]
            w.writerow([ex.id, " ".join(ex.pair.first), " ".join(ex.pair.second), label])
    if dataset.dropped:
        sidecar = path.with_suffix(path.suffix + ".dropped.txt")
        sidecar.write_text("".join(f"{i}\n" for i in dataset.dropped), encoding="utf-8")
    return path


def collapse_nli_labels(dataset: Dataset) -> Dataset:
    """Map neutral and contradiction onto a single not_entailment class."""
    if tuple(dataset.class_names) != NLI_CLASSES:
        raise InvalidTransformError(
            f"collapse-nli needs classes {list(NLI_CLASSES)}, {dataset.name} has {list(dataset.class_names)}")
    entail = NLI_CLASSES.index("entailment")
    examples = tuple(replace(e, label=0 if e.label == entail else 1) for e in dataset.examples)
    return replace(dataset, kind=TaskKind.classification(2), examples=examples,
                   class_names=BINARY_NLI_CLASSES, transforms=dataset.transforms + ("collapse-nli",))


def binarize_stsb(dataset: Dataset, tol: float = 1e-9) -> Dataset:
    """Scores in [1, 2] become class 0, [4, 5] class 1; the open band (2, 4) is dropped."""
    if not dataset.kind.is_regression:
        raise InvalidTransformError(f"binarize-stsb needs a regression dataset, {dataset.name} is not")
    kept, dropped = [], []
    for e in dataset.examples:
        s = float(e.label)
        if not (1.0 - tol <= s <= 5.0 + tol):
            raise InvalidInputError(f"{dataset.name}: score {s} of example {e.id} outside [1, 5]")
        if s <= 2.0:
            kept.append(replace(e, label=0))
        elif s >= 4.0:
            kept.append(replace(e, label=1))
        else:
            dropped.append(e.id)
    return replace(dataset, kind=TaskKind.classification(2), examples=tuple(kept), class_names=BINARY_CLASSES,
                   transforms=dataset.transforms + ("binarize-stsb",), dropped=dataset.dropped + tuple(dropped))


TRANSFORMS = {
    "identity": lambda ds: ds,
    "collapse-nli": collapse_nli_labels,
    "binarize-stsb": binarize_stsb,
}


def apply_transform(dataset: Dataset, name: str) -> Dataset:
    try:
        fn = TRANSFORMS[name]
    except KeyError:
        raise InvalidTransformError(f"unknown transform {name!r}; choose from {sorted(TRANSFORMS)}") from None
    return fn(dataset)


def _class_means(rng: np.random.Generator, d_features: int, c: int, informative: int,
                 separation: float) -> np.ndarray:
    means = np.zeros((c, d_features))
    if c == 2:
        u = np.full(informative, 1.0 / np.sqrt(informative))
        means[0, :informative] = -0.5 * separation * u
        means[1, :informative] = 0.5 * separation * u
        return means
    dirs = rng.normal(size=(c, informative))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    means[:, :informative] = separation / np.sqrt(2.0) * dirs
    return means


def _render(x: np.ndarray, scale: float, n_bins: int) -> str:
    # each coordinate becomes one token naming the feature and its quantile bin
    edges = np.clip(np.floor((x / scale + 3.0) / 6.0 * n_bins), 0, n_bins - 1).astype(int)
    return " ".join(f"f{k}b{b}" for k, b in enumerate(edges))


def nearest_mean_accuracy(means: np.ndarray, noise: float, rng: np.random.Generator,
                          n_samples: int = 20000) -> float:
    """Monte Carlo accuracy of the Bayes rule for equal-prior isotropic Gaussians."""
    c, d = means.shape
    y = np.arange(n_samples) % c
    x = means[y] + noise * rng.normal(size=(n_samples, d))
    dist = ((x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    return float(np.mean(np.argmin(dist, axis=1) == y))


def synth_gaussian(n: int, d_features: int, c: int, class_separation: float, noise: float, seed: int,
                   informative: int | None = None, sample_seed: int = 0, n_bins: int = 12,
                   name: str = "synth") -> Dataset:
    """Class-conditional Gaussians rendered as pseudo-text token strings.

    ``seed`` fixes the class means; ``sample_seed`` picks the draw, so train
    and dev splits share one generating distribution. Only the first
    ``informative`` coordinates separate the classes. Each example is a
    single sentence with one ``f<k>b<bin>`` token per coordinate.
    """
    if n < c:
        raise InvalidInputError(f"need n >= c, got n={n}, c={c}")
    if class_separation < 0 or noise <= 0:
        raise InvalidInputError("class_separation must be >= 0 and noise > 0")
    informative = min(c, d_features) if informative is None else informative
    if not 1 <= informative <= d_features:
        raise InvalidInputError(f"informative must be in [1, {d_features}], got {informative}")
    mean_rng, bayes_rng = spawn_rngs(seed, 2)
    means = _class_means(mean_rng, d_features, c, informative, class_separation)
    draw_rng = spawn_rngs(seed * 1_000_003 + sample_seed + 1, 1)[0]
    y = draw_rng.permutation(np.arange(n) % c)
    x = means[y] + noise * draw_rng.normal(size=(n, d_features))
    scale = float(np.sqrt(noise ** 2 + np.mean(means ** 2)))
    examples = tuple(
        Example(SentencePair(tokenize(_render(x[i], scale, n_bins))), int(y[i]), f"{name}-{sample_seed}-{i}")
        for i in range(n))
    bayes = nearest_mean_accuracy(means, noise, bayes_rng)
    return Dataset(name, TaskKind.classification(c), examples, tuple(str(k) for k in range(c)),
                   bayes_accuracy=bayes)


def separation_for_bayes(accuracy: float, noise: float = 1.0) -> float:
    """Mean distance giving the requested Bayes accuracy for two classes."""
    from statistics import NormalDist
    return 2.0 * noise * NormalDist().inv_cdf(accuracy)


def toy_path() -> Path:
    return Path(__file__).parent / "resources" / "toy.tsv"


def load_toy(name: str = "toy") -> Dataset:
    return load_tsv(toy_path(), native_spec(name, TaskKind.classification(2), BINARY_CLASSES), name=name)
