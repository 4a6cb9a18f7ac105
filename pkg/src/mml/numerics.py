"""Dense float64 helpers, seeded RNG, softmax and a from-scratch Adam."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, ShapeError

DTYPE = np.float64


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; the same seed always yields the same stream."""
    return np.random.Generator(np.random.PCG64(np.uint64(seed)))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Split one seed into ``n`` independent, reproducible generators."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [np.random.Generator(np.random.PCG64(s)) for s in children]


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    arr = np.asarray(values, dtype=DTYPE)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-d matrix, got shape {arr.shape}")
    if rows is not None and arr.shape[0] != rows:
        raise ShapeError(f"expected {rows} rows, got {arr.shape[0]}")
    if cols is not None and arr.shape[1] != cols:
        raise ShapeError(f"expected {cols} cols, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError("matrix contains non-finite entries")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "arrays") -> None:
    if np.shape(a) != np.shape(b):
        raise ShapeError(f"{what}: shape {np.shape(a)} != {np.shape(b)}")


def softmax(logits) -> np.ndarray:
    """Softmax over the last axis with max-subtraction.

    Accepts a single logit vector or a stack of them.
    """
    z = np.asarray(logits, dtype=DTYPE)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("softmax: logits must be finite")
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=DTYPE)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("log_softmax: logits must be finite")
    shifted = z - np.max(z, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


@dataclass
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros_like(cls, params: np.ndarray, **kwargs) -> "AdamState":
        return cls(np.zeros_like(params, dtype=DTYPE), np.zeros_like(params, dtype=DTYPE), **kwargs)


def adam_update(params: np.ndarray, grads: np.ndarray, state: AdamState, alpha: float,
                rows: np.ndarray | None = None) -> np.ndarray:
    """One bias-corrected Adam step, applied to ``params`` in place.

    ``rows`` optionally restricts the update to a boolean selection over the
    first axis; moments of unselected rows are left untouched, so those
    parameters stay bitwise frozen. ``step_count`` advances either way.
    """
    check_same_shape(params, grads, "adam params/grads")
    check_same_shape(params, state.first_moment, "adam params/first moment")
    check_same_shape(params, state.second_moment, "adam params/second moment")
    if not alpha > 0:
        raise InvalidInputError(f"alpha must be > 0, got {alpha}")
    if not np.all(np.isfinite(grads)):
        raise InvalidInputError("adam: non-finite gradient")

    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    if rows is None:
        sel = slice(None)
    else:
        sel = np.asarray(rows, dtype=bool)
        if sel.shape != (params.shape[0],):
            raise ShapeError(f"row mask shape {sel.shape} does not match {params.shape[0]} rows")
    g = grads[sel]
    m = b1 * state.first_moment[sel] + (1.0 - b1) * g
    v = b2 * state.second_moment[sel] + (1.0 - b2) * (g * g)
    state.first_moment[sel] = m
    state.second_moment[sel] = v
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    params[sel] = params[sel] - alpha * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return params


@dataclass
class Adam:
    """Adam over a dict of named parameter arrays, one ``AdamState`` each."""

    alpha: float
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    states: dict[str, AdamState] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             row_masks: dict[str, np.ndarray] | None = None) -> None:
        row_masks = row_masks or {}
        for name in params:
            if name not in self.states:
                self.states[name] = AdamState.zeros_like(
                    params[name], beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon)
            adam_update(params[name], grads[name], self.states[name], self.alpha,
                        rows=row_masks.get(name))
