"""Bank of parallel linear heads with a mutual-orthogonality penalty."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidConfigError, InvalidLabelError, NoActiveHeadsError, ShapeError
from .numerics import DTYPE, log_softmax, softmax

DEFAULT_LAMBDA = 0.005


@dataclass(frozen=True)
class TaskKind:
    name: str
    n_classes: int = 2

    def __post_init__(self):
        if self.name == "classification":
            if self.n_classes < 2:
                raise InvalidConfigError(f"classification needs >= 2 classes, got {self.n_classes}")
        elif self.name == "regression":
            object.__setattr__(self, "n_classes", 1)
        else:
            raise InvalidConfigError(f"unknown task kind {self.name!r}")

    @classmethod
    def classification(cls, n_classes: int = 2) -> "TaskKind":
        return cls("classification", n_classes)

    @classmethod
    def regression(cls) -> "TaskKind":
        return cls("regression", 1)

    @property
    def is_regression(self) -> bool:
        return self.name == "regression"

    @property
    def output_width(self) -> int:
        return self.n_classes


@dataclass
class HeadBank:
    """``weights[j]`` is head j's d x c matrix; column k is its class-k vector."""

    weights: np.ndarray  # (m, d, c)
    biases: np.ndarray  # (m, c)
    beta: np.ndarray  # (m,) bool

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=DTYPE)
        self.biases = np.asarray(self.biases, dtype=DTYPE)
        self.beta = np.asarray(self.beta, dtype=bool)
        if self.weights.ndim != 3:
            raise ShapeError(f"head weights must be (m, d, c), got {self.weights.shape}")
        m, _, c = self.weights.shape
        if self.biases.shape != (m, c):
            raise ShapeError(f"biases {self.biases.shape} do not match weights {self.weights.shape}")
        if self.beta.shape != (m,):
            raise ShapeError(f"beta mask {self.beta.shape} does not match m={m}")

    @property
    def m(self) -> int:
        return self.weights.shape[0]

    @property
    def d(self) -> int:
        return self.weights.shape[1]

    @property
    def c(self) -> int:
        return self.weights.shape[2]

    @property
    def active(self) -> np.ndarray:
        return np.flatnonzero(self.beta)

    @property
    def n_active(self) -> int:
        return int(self.beta.sum())

    def copy(self) -> "HeadBank":
        return HeadBank(self.weights.copy(), self.biases.copy(), self.beta.copy())


def init_head_bank(d: int, c: int, m: int | None, rng: np.random.Generator) -> HeadBank:
    """Random heads with N(0, 1/d) weights, zero biases, every head active.

    ``m`` defaults to ``d``.
    """
    if m is None:
        m = d
    if min(d, c, m) < 1:
        raise InvalidConfigError(f"d, c and m must all be >= 1 (got d={d}, c={c}, m={m})")
    weights = rng.normal(0.0, 1.0 / np.sqrt(d), size=(m, d, c)).astype(DTYPE)
    return HeadBank(weights, np.zeros((m, c), dtype=DTYPE), np.ones(m, dtype=bool))


def _as_batch(bank: HeadBank, Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=DTYPE)
    if Z.ndim == 1:
        Z = Z[None, :]
    if Z.ndim != 2 or Z.shape[1] != bank.d:
        raise ShapeError(f"coding vectors must have width {bank.d}, got shape {Z.shape}")
    return Z


def forward_heads_batch(bank: HeadBank, Z) -> np.ndarray:
    """Logits of every head (active or not) for a batch: shape (n, m, c)."""
    Z = _as_batch(bank, Z)
    out = np.empty((Z.shape[0], bank.m, bank.c), dtype=DTYPE)
    for j in range(bank.m):
        out[:, j, :] = Z @ bank.weights[j] + bank.biases[j]
    return out


def forward_heads(bank: HeadBank, d_i) -> np.ndarray:
    """Logits matrix (m x c) for one coding vector."""
    d_i = np.asarray(d_i, dtype=DTYPE)
    if d_i.shape != (bank.d,):
        raise ShapeError(f"coding vector must have shape ({bank.d},), got {d_i.shape}")
    return forward_heads_batch(bank, d_i)[0]


def _check_labels(labels, kind: TaskKind, n: int) -> np.ndarray:
    if kind.is_regression:
        y = np.asarray(labels, dtype=DTYPE).reshape(-1)
        if y.shape != (n,) or not np.all(np.isfinite(y)):
            raise InvalidLabelError("regression targets must be finite, one per example")
        return y
    y = np.asarray(labels)
    if y.shape != (n,):
        raise InvalidLabelError(f"expected {n} labels, got shape {y.shape}")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise InvalidLabelError("classification labels must be integers")
        y = y.astype(np.int64)
    if np.any(y < 0) or np.any(y >= kind.n_classes):
        bad = y[(y < 0) | (y >= kind.n_classes)][0]
        raise InvalidLabelError(f"label {bad} outside [0, {kind.n_classes})")
    return y.astype(np.int64)


def _per_example_head_losses(logits: np.ndarray, y: np.ndarray, kind: TaskKind) -> np.ndarray:
    """(n, m) loss of each head on each example."""
    if kind.is_regression:
        diff = y[:, None] - logits[:, :, 0]
        return diff * diff
    logp = log_softmax(logits)
    return -np.take_along_axis(logp, y[:, None, None], axis=2)[:, :, 0]


def task_loss(bank: HeadBank, logits, labels, kind: TaskKind) -> tuple[float, np.ndarray]:
    """Mean-over-batch task loss summed over active heads.

    ``logits`` is (n, m, c) or a single (m, c) matrix with a scalar label.
    Returns the masked total and the per-head losses (0 for inactive heads).
    """
    logits = np.asarray(logits, dtype=DTYPE)
    if logits.ndim == 2:
        logits = logits[None]
        labels = np.atleast_1d(labels)
    if logits.shape[1:] != (bank.m, bank.c):
        raise ShapeError(f"logits {logits.shape} do not match bank (m={bank.m}, c={bank.c})")
    if kind.output_width != bank.c:
        raise ShapeError(f"task expects width {kind.output_width}, bank has c={bank.c}")
    y = _check_labels(labels, kind, logits.shape[0])
    per_head = _per_example_head_losses(logits, y, kind).mean(axis=0)
    per_head = np.where(bank.beta, per_head, 0.0)
    return float(per_head.sum()), per_head


def _class_gram(bank: HeadBank, k: int, heads: np.ndarray) -> np.ndarray:
    A = bank.weights[heads, :, k]
    return A @ A.T


def multiverse_loss(bank: HeadBank) -> float:
    """Sum over classes and active head pairs r < s of |<f_r^k, f_s^k>|."""
    heads = bank.active
    if heads.size < 2:
        return 0.0
    iu = np.triu_indices(heads.size, k=1)
    total = 0.0
    for k in range(bank.c):
        total += float(np.abs(_class_gram(bank, k, heads)[iu]).sum())
    return total


def multiverse_grad(bank: HeadBank) -> np.ndarray:
    """Subgradient of ``multiverse_loss`` w.r.t. head weights, (m, d, c).

    sign(0) is taken as 0; inactive heads get exactly zero.
    """
    grad = np.zeros_like(bank.weights)
    heads = bank.active
    if heads.size < 2:
        return grad
    for k in range(bank.c):
        A = bank.weights[heads, :, k]
        S = np.sign(A @ A.T)
        np.fill_diagonal(S, 0.0)
        grad[heads, :, k] = S @ A
    return grad


def orthogonality_tables(bank: HeadBank) -> np.ndarray:
    """(c, m, m) tables of |<f_r^k, f_s^k>| with a zero diagonal, all heads included."""
    tables = np.empty((bank.c, bank.m, bank.m), dtype=DTYPE)
    everyone = np.arange(bank.m)
    for k in range(bank.c):
        T = np.abs(_class_gram(bank, k, everyone))
        np.fill_diagonal(T, 0.0)
        tables[k] = T
    return tables


def mean_off_diagonal(tables: np.ndarray, heads) -> float:
    """Mean table entry over distinct pairs of ``heads``, across all classes."""
    heads = np.asarray(heads, dtype=np.int64)
    if heads.size < 2:
        return 0.0
    iu = np.triu_indices(heads.size, k=1)
    sub = tables[:, heads][:, :, heads]
    return float(np.mean(sub[:, iu[0], iu[1]]))


def write_orthogonality_tables(bank: HeadBank, out_dir: str | Path, prefix: str = "orthogonality") -> list[Path]:
    """One CSV per class; row/column headers are head indices, inactive heads marked '*'."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = [f"{j}" if bank.beta[j] else f"{j}*" for j in range(bank.m)]
    paths = []
    for k, T in enumerate(orthogonality_tables(bank)):
        path = out_dir / f"{prefix}_class{k}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["head", *names])
            for j, row in enumerate(T):
                w.writerow([names[j], *(repr(float(v)) for v in row)])
        paths.append(path)
    return paths


@dataclass
class LossResult:
    total: float
    task: float
    mv: float
    head_losses: np.ndarray  # (m,)
    grad_weights: np.ndarray  # (m, d, c)
    grad_biases: np.ndarray  # (m, c)
    grad_coding: np.ndarray  # (n, d)


def total_loss(bank: HeadBank, Z, labels, kind: TaskKind, lam: float = DEFAULT_LAMBDA) -> LossResult:
    """Batch-mean task loss plus ``lam`` times the multiverse loss, with gradients.

    Gradients cover every head parameter and each coding vector; inactive
    heads get zero gradient.
    """
    if lam < 0:
        raise InvalidConfigError(f"lambda must be >= 0, got {lam}")
    Z = _as_batch(bank, Z)
    n = Z.shape[0]
    if n == 0:
        raise InvalidConfigError("total_loss needs a nonempty batch")
    logits = forward_heads_batch(bank, Z)
    task, per_head = task_loss(bank, logits, labels, kind)
    y = _check_labels(labels, kind, n)

    gW = np.zeros_like(bank.weights)
    gb = np.zeros_like(bank.biases)
    gZ = np.zeros_like(Z)
    if kind.is_regression:
        resid = logits[:, :, 0] - y[:, None]
    else:
        onehot = np.zeros((n, bank.c), dtype=DTYPE)
        onehot[np.arange(n), y] = 1.0
    for j in bank.active:
        if kind.is_regression:
            G = (2.0 * resid[:, j:j + 1]) / n
        else:
            G = (softmax(logits[:, j, :]) - onehot) / n
        gW[j] = Z.T @ G
        gb[j] = G.sum(axis=0)
        gZ += G @ bank.weights[j].T

    mv = 0.0
    if lam > 0:
        mv = multiverse_loss(bank)
        gW += lam * multiverse_grad(bank)
    return LossResult(task + lam * mv, task, mv, per_head, gW, gb, gZ)


@dataclass
class Prediction:
    logits: np.ndarray
    probabilities: np.ndarray | None
    label: int | None
    value: float | None


def aggregate_logits(bank: HeadBank, Z) -> np.ndarray:
    """Average of active heads' logits, (n, c).

    Summation is exactly rounded, so the result does not depend on head order.
    """
    heads = bank.active
    if heads.size == 0:
        raise NoActiveHeadsError("inference requires at least one active head")
    logits = forward_heads_batch(bank, Z)[:, heads, :]
    n, _, c = logits.shape
    out = np.empty((n, c), dtype=DTYPE)
    for i in range(n):
        for k in range(c):
            out[i, k] = math.fsum(logits[i, :, k]) / heads.size
    return out


def aggregate_inference(bank: HeadBank, d_i, kind: TaskKind) -> Prediction:
    y_hat = aggregate_logits(bank, np.asarray(d_i, dtype=DTYPE).reshape(1, -1))[0]
    if kind.is_regression:
        return Prediction(y_hat, None, None, float(y_hat[0]))
    p = softmax(y_hat)
    return Prediction(y_hat, p, int(np.argmax(p)), None)
