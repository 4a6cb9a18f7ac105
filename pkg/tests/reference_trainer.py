"""Plain single-head softmax/cross-entropy trainer with a textbook Adam.

Shares only the encoder and the seeded initializers with the package, so a
bitwise match against the multiverse trainer (lambda = 0, m = 1, no
pruning) checks that the head bank, the loss plumbing and the masked
optimizer collapse to ordinary training.
"""

import math

import numpy as np

from mml.encoder import encode_backward, encode_batch, featurize_many, init_encoder
from mml.multiverse import init_head_bank
from mml.numerics import make_rng


def _softmax(z):
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


class _Adam:
    def __init__(self, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m, self.v, self.t = {}, {}, 0

    def step(self, params, grads):
        self.t += 1
        for k, p in params.items():
            g = grads[k]
            if k not in self.m:
                self.m[k] = np.zeros_like(p)
                self.v[k] = np.zeros_like(p)
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * (g * g)
            m_hat = self.m[k] / (1.0 - self.b1 ** self.t)
            v_hat = self.v[k] / (1.0 - self.b2 ** self.t)
            p[...] = p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def reference_trajectory(config, dataset, n_steps):
    """Yield (step, encoder params, head W, head b) snapshots after each step."""
    X = featurize_many(dataset.pairs, config.feature_dim)
    y = dataset.labels
    rng = make_rng(config.seed)
    enc = init_encoder(rng, config.feature_dim, config.hidden_dims, config.coding_dim)
    bank = init_head_bank(config.coding_dim, config.n_classes, 1, rng)
    W, b = bank.weights[0].copy(), bank.biases[0].copy()
    opt = _Adam(config.alpha)
    n, bs = len(y), config.batch_size
    step = 0
    for _ in range(config.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            if step >= n_steps:
                return
            idx = perm[start:start + bs]
            xb, yb = X[idx], y[idx]
            Z, cache = encode_batch(enc, xb)
            logits = Z @ W + b
            onehot = np.zeros_like(logits)
            onehot[np.arange(len(yb)), yb] = 1.0
            G = (_softmax(logits) - onehot) / len(yb)
            gW = Z.T @ G
            gb = G.sum(axis=0)
            gZ = G @ W.T
            enc_grads, _ = encode_backward(enc, cache, gZ)
            params = dict(enc.parameters())
            params.update({"W": W, "b": b})
            grads = dict(enc_grads)
            grads.update({"W": gW, "b": gb})
            opt.step(params, grads)
            step += 1
            yield step, enc, W, b
    assert math.isfinite(float(W.sum()))
