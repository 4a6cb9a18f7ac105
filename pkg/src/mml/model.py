"""The aggregated model (encoder, head bank, mask) and its checkpoint container.

Checkpoint layout: the 8-byte magic ``MMLCKPT\\n``, a little-endian u32
header length, a UTF-8 JSON header (format tag, version, task, class names,
config echo, array table), then the raw little-endian float64/bool arrays
in header order. Identical models always serialize to identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import EncoderParams, SentencePair, featurize_many
from .errors import FormatVersionError
from .multiverse import HeadBank, TaskKind, aggregate_logits
from .numerics import softmax

MAGIC = b"MMLCKPT\n"
FORMAT_TAG = "mml-checkpoint"
FORMAT_VERSION = 1


@dataclass
class MMLModel:
    encoder: EncoderParams
    bank: HeadBank
    kind: TaskKind
    class_names: tuple[str, ...] = ()
    config: dict = field(default_factory=dict)
    name: str = "mml"

    @property
    def n_active(self) -> int:
        return self.bank.n_active

    def copy(self) -> "MMLModel":
        enc = EncoderParams([W.copy() for W in self.encoder.weights], [b.copy() for b in self.encoder.biases])
        return MMLModel(enc, self.bank.copy(), self.kind, tuple(self.class_names), dict(self.config), self.name)

    def featurize(self, pairs: Sequence[SentencePair]) -> np.ndarray:
        return featurize_many(pairs, self.encoder.feature_dim)

    def logits(self, X: np.ndarray) -> np.ndarray:
        Z, _ = self.encoder.forward(X)
        return aggregate_logits(self.bank, Z)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Class indices for classification, real scores for regression."""
        y_hat = self.logits(X)
        if self.kind.is_regression:
            return y_hat[:, 0]
        return np.argmax(softmax(y_hat), axis=1)

    def predict_pairs(self, pairs: Sequence[SentencePair]) -> np.ndarray:
        return self.predict(self.featurize(pairs))


def _arrays(model: MMLModel) -> list[tuple[str, np.ndarray]]:
    out = [(k, v) for k, v in model.encoder.parameters().items()]
    out += [("heads.W", model.bank.weights), ("heads.b", model.bank.biases), ("heads.beta", model.bank.beta)]
    return out


def checkpoint_bytes(model: MMLModel) -> bytes:
    table, blobs, offset = [], [], 0
    for name, arr in _arrays(model):
        if arr.dtype == bool:
            data = np.ascontiguousarray(arr, dtype=np.uint8).tobytes()
            dtype = "bool"
        else:
            data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
            dtype = "<f8"
        table.append({"name": name, "dtype": dtype, "shape": list(arr.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    header = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "name": model.name,
        "task": {"name": model.kind.name, "n_classes": model.kind.n_classes},
        "class_names": list(model.class_names),
        "n_layers": len(model.encoder.weights),
        "config": model.config,
        "arrays": table,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return MAGIC + struct.pack("<I", len(head)) + head + b"".join(blobs)


def save_checkpoint(model: MMLModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(model))
    return path


def read_header(raw: bytes) -> tuple[dict, int]:
    if raw[:len(MAGIC)] != MAGIC:
        raise FormatVersionError("not an MML checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", raw[len(MAGIC):len(MAGIC) + 4])
    start = len(MAGIC) + 4
    header = json.loads(raw[start:start + hlen].decode("utf-8"))
    if header.get("format") != FORMAT_TAG:
        raise FormatVersionError(f"unexpected container format {header.get('format')!r}")
    if header.get("version") != FORMAT_VERSION:
        raise FormatVersionError(
            f"checkpoint format version {header.get('version')} is not supported (expected {FORMAT_VERSION})")
    return header, start + hlen


def load_checkpoint(path: str | Path) -> MMLModel:
    raw = Path(path).read_bytes()
    header, base = read_header(raw)
    arrays = {}
    for entry in header["arrays"]:
        chunk = raw[base + entry["offset"]: base + entry["offset"] + entry["nbytes"]]
        if entry["dtype"] == "bool":
            arr = np.frombuffer(chunk, dtype=np.uint8).astype(bool)
        else:
            arr = np.frombuffer(chunk, dtype="<f8").astype(np.float64)
        arrays[entry["name"]] = arr.reshape(entry["shape"])
    n_layers = header["n_layers"]
    encoder = EncoderParams([arrays[f"W{k}"] for k in range(n_layers)], [arrays[f"b{k}"] for k in range(n_layers)])
    bank = HeadBank(arrays["heads.W"], arrays["heads.b"], arrays["heads.beta"])
    task = header["task"]
    kind = TaskKind(task["name"], task["n_classes"])
    return MMLModel(encoder, bank, kind, tuple(header["class_names"]), header["config"], header["name"])
