"""Reference sentence-pair encoder: hashed n-gram features into a small tanh MLP.

The trainer only relies on the ``Backbone`` protocol (``forward``,
``backward``, ``parameters``), so a pretrained network can stand in for
``EncoderParams`` without touching the training loop.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Protocol, Sequence

import numpy as np

from .errors import InvalidConfigError, ShapeError
from .numerics import DTYPE

DEFAULT_FEATURE_DIM = 4096
DEFAULT_HIDDEN_DIMS = (128,)
DEFAULT_OUTPUT_DIM = 64

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)

SALT_FIRST = "s1"
SALT_SECOND = "s2"
SALT_CROSS = "x"


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase, then split on whitespace and at punctuation boundaries."""
    return tuple(_TOKEN_RE.findall(text.lower()))


@dataclass(frozen=True)
class SentencePair:
    first: tuple[str, ...]
    second: tuple[str, ...] = ()

    @classmethod
    def from_text(cls, first: str, second: str | None = "") -> "SentencePair":
        return cls(tokenize(first or ""), tokenize(second or ""))


@lru_cache(maxsize=1 << 18)
def _hash(key: str) -> int:
    return int.from_bytes(hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest(), "little")


def _ngrams(tokens: Sequence[str]) -> list[str]:
    grams = list(tokens)
    grams += [f"{a} {b}" for a, b in zip(tokens, tokens[1:])]
    return grams


def featurize(pair: SentencePair, feature_dim: int = DEFAULT_FEATURE_DIM) -> np.ndarray:
    """Signed hashed bag of unigrams and bigrams, L2-normalized.

    Each sentence hashes with its own salt; unigrams present in both
    sentences add an extra cross-pair feature.
    """
    if feature_dim < 1:
        raise InvalidConfigError(f"feature_dim must be >= 1, got {feature_dim}")
    x = np.zeros(feature_dim, dtype=DTYPE)
    keys = [f"{SALT_FIRST}\x1f{g}" for g in _ngrams(pair.first)]
    keys += [f"{SALT_SECOND}\x1f{g}" for g in _ngrams(pair.second)]
    shared = sorted(set(pair.first) & set(pair.second))
    keys += [f"{SALT_CROSS}\x1f{t}" for t in shared]
    for key in keys:
        h = _hash(key)
        x[h % feature_dim] += 1.0 if (h >> 63) & 1 else -1.0
    norm = np.sqrt(np.dot(x, x))
    if norm > 0:
        x /= norm
    return x


def featurize_many(pairs: Sequence[SentencePair], feature_dim: int = DEFAULT_FEATURE_DIM) -> np.ndarray:
    out = np.zeros((len(pairs), feature_dim), dtype=DTYPE)
    for i, p in enumerate(pairs):
        out[i] = featurize(p, feature_dim)
    return out


class Backbone(Protocol):
    output_dim: int

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, list]: ...

    def backward(self, cache: list, grad_out: np.ndarray) -> dict[str, np.ndarray]: ...

    def parameters(self) -> dict[str, np.ndarray]: ...


@dataclass
class EncoderParams:
    """Layer ``k`` maps ``weights[k].shape[0]`` inputs to ``weights[k].shape[1]`` outputs."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden_dims: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("encoder needs one bias per weight matrix and at least one layer")
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ShapeError(f"layer {k}: weight {W.shape} incompatible with bias {b.shape}")
            if k and self.weights[k - 1].shape[1] != W.shape[0]:
                raise ShapeError(f"layer {k} expects {W.shape[0]} inputs, "
                                 f"previous layer gives {self.weights[k - 1].shape[1]}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise ShapeError(f"layer {k} has non-finite parameters")
        self.hidden_dims = tuple(W.shape[1] for W in self.weights[:-1])

    @property
    def feature_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> dict[str, np.ndarray]:
        """Live references to the parameter arrays, keyed ``W0, b0, W1, ...``."""
        params = {}
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            params[f"W{k}"] = W
            params[f"b{k}"] = b
        return params

    def flatten(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.parameters().values()])

    def load_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=DTYPE)
        total = sum(a.size for a in self.parameters().values())
        if flat.shape != (total,):
            raise ShapeError(f"flat vector has shape {flat.shape}, expected ({total},)")
        pos = 0
        for a in self.parameters().values():
            a[...] = flat[pos:pos + a.size].reshape(a.shape)
            pos += a.size

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, list]:
        return encode_batch(self, X)

    def backward(self, cache: list, grad_out: np.ndarray) -> dict[str, np.ndarray]:
        grads, _ = encode_backward(self, cache, grad_out)
        return grads


def init_encoder(rng: np.random.Generator, feature_dim: int = DEFAULT_FEATURE_DIM,
                 hidden_dims: Sequence[int] = DEFAULT_HIDDEN_DIMS,
                 output_dim: int = DEFAULT_OUTPUT_DIM) -> EncoderParams:
    dims = [feature_dim, *hidden_dims, output_dim]
    if any(d < 1 for d in dims):
        raise InvalidConfigError(f"all encoder dims must be >= 1, got {dims}")
    weights, biases = [], []
    for k, (n_in, n_out) in enumerate(zip(dims, dims[1:])):
        # hashed inputs are unit-norm, so the first layer needs no fan-in scaling
        scale = 1.0 if k == 0 else 1.0 / np.sqrt(n_in)
        weights.append(rng.normal(0.0, scale, size=(n_in, n_out)).astype(DTYPE))
        biases.append(np.zeros(n_out, dtype=DTYPE))
    return EncoderParams(weights, biases)


def encode_batch(params: EncoderParams, X: np.ndarray) -> tuple[np.ndarray, list]:
    """Forward pass for a batch of feature rows.

    Returns the coding vectors (n x d) and the per-layer inputs needed by
    ``encode_backward``.
    """
    h = np.asarray(X, dtype=DTYPE)
    if h.ndim != 2 or h.shape[1] != params.feature_dim:
        raise ShapeError(f"encoder expects (n, {params.feature_dim}) input, got {h.shape}")
    cache = []
    last = len(params.weights) - 1
    for k, (W, b) in enumerate(zip(params.weights, params.biases)):
        cache.append(h)
        h = h @ W + b
        if k < last:
            h = np.tanh(h)
    cache.append(h)
    return h, cache


def encode(params: EncoderParams, pair: SentencePair) -> tuple[np.ndarray, list]:
    x = featurize(pair, params.feature_dim)
    Z, cache = encode_batch(params, x[None, :])
    return Z[0], cache


def encode_backward(params: EncoderParams, cache: list, grad_out: np.ndarray,
                    want_input_grad: bool = False) -> tuple[dict[str, np.ndarray], np.ndarray | None]:
    """Reverse-mode gradients for the affine/tanh stack.

    ``cache`` holds the input of every layer followed by the final output,
    as produced by ``encode_batch``.
    """
    n_layers = len(params.weights)
    if len(cache) != n_layers + 1:
        raise ShapeError(f"cache has {len(cache)} entries, expected {n_layers + 1}")
    g = np.asarray(grad_out, dtype=DTYPE)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != cache[-1].shape:
        raise ShapeError(f"upstream gradient {g.shape} does not match output {cache[-1].shape}")
    grads: dict[str, np.ndarray] = {}
    for k in range(n_layers - 1, -1, -1):
        W = params.weights[k]
        h_in = cache[k]
        if h_in.shape[1] != W.shape[0]:
            raise ShapeError(f"cache entry {k} has width {h_in.shape[1]}, layer expects {W.shape[0]}")
        grads[f"W{k}"] = h_in.T @ g
        grads[f"b{k}"] = g.sum(axis=0)
        if k == 0 and not want_input_grad:
            break
        g = g @ W.T
        if k > 0:
            # h_in = tanh(pre-activation); d tanh = 1 - tanh^2
            g = g * (1.0 - h_in * h_in)
    grads = {name: grads[name] for name in params.parameters()}
    return grads, (g if want_input_grad else None)
