"""Maximal multiverse training: Adam steps, per-head loss EMAs, MeanShift pruning."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import Dataset
from .encoder import DEFAULT_FEATURE_DIM, DEFAULT_HIDDEN_DIMS, DEFAULT_OUTPUT_DIM, featurize_many, init_encoder
from .errors import InvalidConfigError, InvalidInputError
from .meanshift import mean_shift_1d, min_centroid_members
from .model import MMLModel
from .multiverse import DEFAULT_LAMBDA, HeadBank, TaskKind, init_head_bank, total_loss
from .numerics import Adam, make_rng

log = logging.getLogger(__name__)


@dataclass
class TrainerConfig:
    K: int = 1000
    gamma: float = 0.99
    threshold: int = 5
    alpha: float = 2e-5
    lam: float = DEFAULT_LAMBDA
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0
    task: str = "classification"
    n_classes: int = 2
    m: int | None = None
    prune_enabled: bool = True
    feature_dim: int = DEFAULT_FEATURE_DIM
    hidden_dims: tuple[int, ...] = DEFAULT_HIDDEN_DIMS
    coding_dim: int = DEFAULT_OUTPUT_DIM
    max_steps: int | None = None

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        problems = []
        if self.K < 1:
            problems.append(f"K must be >= 1 (got {self.K})")
        if not 0 < self.gamma < 1:
            problems.append(f"gamma must lie in (0, 1) (got {self.gamma})")
        if self.threshold < 1:
            problems.append(f"threshold must be >= 1 (got {self.threshold})")
        if not self.alpha > 0:
            problems.append(f"alpha must be > 0 (got {self.alpha})")
        if self.lam < 0:
            problems.append(f"lam must be >= 0 (got {self.lam})")
        if self.batch_size < 1:
            problems.append(f"batch_size must be >= 1 (got {self.batch_size})")
        if self.epochs < 1:
            problems.append(f"epochs must be >= 1 (got {self.epochs})")
        if self.m is not None and self.m < 1:
            problems.append(f"m must be >= 1 (got {self.m})")
        if self.max_steps is not None and self.max_steps < 1:
            problems.append(f"max_steps must be >= 1 (got {self.max_steps})")
        if problems:
            raise InvalidConfigError("; ".join(problems))
        self.kind  # validates task / n_classes

    @property
    def kind(self) -> TaskKind:
        return TaskKind(self.task, self.n_classes)

    @property
    def heads(self) -> int:
        return self.coding_dim if self.m is None else self.m

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainerConfig":
        return cls(**d)


@dataclass
class EmaTracker:
    a: np.ndarray

    @classmethod
    def zeros(cls, m: int) -> "EmaTracker":
        return cls(np.zeros(m, dtype=np.float64))


def ema_update(tracker: EmaTracker, head_losses: np.ndarray, gamma: float, beta: np.ndarray) -> EmaTracker:
    """a_j <- gamma * a_j + (1 - gamma) * loss_j for active heads; inactive entries stay put."""
    head_losses = np.asarray(head_losses, dtype=np.float64)
    if head_losses.shape != tracker.a.shape or np.shape(beta) != tracker.a.shape:
        raise InvalidInputError(f"EMA of length {tracker.a.size} cannot take losses {head_losses.shape}")
    active = np.asarray(beta, dtype=bool)
    tracker.a[active] = gamma * tracker.a[active] + (1.0 - gamma) * head_losses[active]
    return tracker


@dataclass
class StepRecord:
    step: int
    total_loss: float
    task_loss: float
    mv_loss: float
    active_heads: int


@dataclass
class PruneRecord:
    step: int
    n_clusters: int
    survivors: list[int]
    eliminated: list[int]
    ema: dict[int, float] = field(default_factory=dict)


@dataclass
class TrainTrace:
    steps: list[StepRecord] = field(default_factory=list)
    prunes: list[PruneRecord] = field(default_factory=list)

    def write(self, out_dir: str | Path) -> list[Path]:
        """trace.csv, prunes.csv and prune_ema.csv (EMA of every head checked at a prune step)."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = [out_dir / "trace.csv", out_dir / "prunes.csv", out_dir / "prune_ema.csv"]
        with open(paths[0], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "total_loss", "task_loss", "mv_loss", "active_heads"])
            for r in self.steps:
                w.writerow([r.step, repr(r.total_loss), repr(r.task_loss), repr(r.mv_loss), r.active_heads])
        with open(paths[1], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "n_clusters", "survivors", "eliminated"])
            for p in self.prunes:
                w.writerow([p.step, p.n_clusters, " ".join(map(str, p.survivors)), " ".join(map(str, p.eliminated))])
        with open(paths[2], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "head", "ema", "status"])
            for p in self.prunes:
                survivors = set(p.survivors)
                for j in sorted(p.ema):
                    w.writerow([p.step, j, repr(p.ema[j]), "survivor" if j in survivors else "eliminated"])
        return paths


def prune_heads(tracker: EmaTracker, bank: HeadBank, threshold: int,
                step: int = 0) -> tuple[HeadBank, PruneRecord | None]:
    """Cluster active heads' EMAs; keep only the lowest-centroid cluster.

    No-op (``None`` record) while fewer than ``threshold`` heads are active.
    With a single cluster the record lists no eliminations.
    """
    active = bank.active
    if active.size < threshold:
        return bank, None
    values = tracker.a[active]
    result = mean_shift_1d(values)
    ema = {int(j): float(tracker.a[j]) for j in active}
    if result.n_clusters < 2:
        return bank, PruneRecord(step, result.n_clusters, [int(j) for j in active], [], ema)
    survivors = min_centroid_members(result, active)
    eliminated = np.setdiff1d(active, survivors)
    bank.beta[eliminated] = False
    return bank, PruneRecord(step, result.n_clusters, [int(j) for j in survivors],
                             [int(j) for j in eliminated], ema)


def train_step(model: MMLModel, X: np.ndarray, y: np.ndarray, config: TrainerConfig, optimizer: Adam,
               tracker: EmaTracker, step: int) -> StepRecord:
    """Forward, exact gradients of the total loss, EMA update, one Adam step on active parameters."""
    if X.shape[0] < 1:
        raise InvalidInputError("train_step needs a nonempty batch")
    bank = model.bank
    Z, cache = model.encoder.forward(X)
    res = total_loss(bank, Z, y, model.kind, config.lam)
    enc_grads = model.encoder.backward(cache, res.grad_coding)
    ema_update(tracker, res.head_losses, config.gamma, bank.beta)

    params = dict(model.encoder.parameters())
    grads = dict(enc_grads)
    params["heads.W"], grads["heads.W"] = bank.weights, res.grad_weights
    params["heads.b"], grads["heads.b"] = bank.biases, res.grad_biases
    optimizer.step(params, grads, row_masks={"heads.W": bank.beta, "heads.b": bank.beta})
    return StepRecord(step, res.total, res.task, res.mv, bank.n_active)


@dataclass
class TrainResult:
    model: MMLModel
    trace: TrainTrace
    best_model: MMLModel | None = None
    best_metric: float | None = None
    initial_bank: HeadBank | None = None


class Trainer:
    """Stateful driver around ``train_step``; ``run`` executes the whole schedule.

    ``on_step(trainer, record)`` is called after every step (and any prune).
    """

    def __init__(self, config: TrainerConfig, dataset: Dataset, dev: Dataset | None = None,
                 on_step: Callable[["Trainer", StepRecord], None] | None = None, name: str = "mml"):
        if len(dataset) == 0:
            raise InvalidInputError("cannot train on an empty dataset")
        if dataset.kind != config.kind:
            raise InvalidConfigError(f"config task {config.kind} does not match dataset task {dataset.kind}")
        self.config = config
        self.dataset = dataset
        self.dev = dev
        self.on_step = on_step
        self.X = featurize_many(dataset.pairs, config.feature_dim)
        self.y = dataset.labels
        self.rng = make_rng(config.seed)
        encoder = init_encoder(self.rng, config.feature_dim, config.hidden_dims, config.coding_dim)
        bank = init_head_bank(config.coding_dim, config.kind.output_width, config.heads, self.rng)
        self.model = MMLModel(encoder, bank, config.kind, dataset.class_names, config.to_dict(), name)
        self.initial_bank = bank.copy()
        self.optimizer = Adam(config.alpha)
        self.tracker = EmaTracker.zeros(bank.m)
        self.trace = TrainTrace()
        self.step = 0

    @property
    def steps_per_epoch(self) -> int:
        return math.ceil(len(self.dataset) / self.config.batch_size)

    @property
    def total_steps(self) -> int:
        total = self.config.epochs * self.steps_per_epoch
        return total if self.config.max_steps is None else min(total, self.config.max_steps)

    def train_batch(self, idx: np.ndarray) -> StepRecord:
        self.step += 1
        cfg = self.config
        record = train_step(self.model, self.X[idx], self.y[idx], cfg, self.optimizer, self.tracker, self.step)
        if cfg.prune_enabled and self.step % cfg.K == 0:
            _, prune = prune_heads(self.tracker, self.model.bank, cfg.threshold, self.step)
            if prune is not None:
                self.trace.prunes.append(prune)
                if prune.eliminated:
                    log.info("step %d: %d clusters, kept %d heads, eliminated %d", self.step,
                             prune.n_clusters, len(prune.survivors), len(prune.eliminated))
            record.active_heads = self.model.bank.n_active
        self.trace.steps.append(record)
        if self.on_step is not None:
            self.on_step(self, record)
        return record

    def run(self) -> TrainResult:
        from .evaluation import evaluate

        n, bs = len(self.dataset), self.config.batch_size
        best, best_metric = None, None
        limit = self.total_steps
        for epoch in range(self.config.epochs):
            perm = self.rng.permutation(n)
            for start in range(0, n, bs):
                if self.step >= limit:
                    break
                self.train_batch(perm[start:start + bs])
            if self.dev is not None:
                metric = evaluate(self.model, self.dev).value
                log.info("epoch %d: dev %.4f, %d active heads", epoch + 1, metric, self.model.n_active)
                if best_metric is None or metric > best_metric:
                    best, best_metric = self.model.copy(), metric
            if self.step >= limit:
                break
        return TrainResult(self.model, self.trace, best, best_metric, self.initial_bank)


def train(config: TrainerConfig, dataset: Dataset, dev: Dataset | None = None, name: str = "mml") -> TrainResult:
    return Trainer(config, dataset, dev, name=name).run()
