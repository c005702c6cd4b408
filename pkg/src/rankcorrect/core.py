"""Item catalog, positive interaction set and the matrix-factorization model."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"RCMFCKPT"
CHECKPOINT_VERSION = 1


class ContractError(ValueError):
    """Raised when an id or argument violates an operation's precondition."""


@dataclass(frozen=True)
class ItemCatalog:
    n_items: int

    def __post_init__(self):
        if int(self.n_items) < 2:
            raise ContractError(f"catalog needs at least 2 items, got {self.n_items}")

    def check(self, item: int) -> None:
        if not 0 <= item < self.n_items:
            raise ContractError(f"item id {item} outside [0, {self.n_items})")


class InteractionSet:
    """Deduplicated set of positive (context, item) pairs.

    Entries are stored in CSR form: ``indptr[c]:indptr[c+1]`` slices the sorted
    item ids of context ``c``.  The flat ``contexts``/``items`` arrays list every
    entry in context-major, item-ascending order and are what the positive
    sampler draws from.
    """

    def __init__(self, n_contexts: int, n_items: int, contexts, items):
        if n_contexts < 1:
            raise ContractError("n_contexts must be positive")
        contexts = np.asarray(contexts, dtype=np.int64).ravel()
        items = np.asarray(items, dtype=np.int64).ravel()
        if contexts.shape != items.shape:
            raise ContractError("contexts and items differ in length")
        if contexts.size and (contexts.min() < 0 or contexts.max() >= n_contexts):
            raise ContractError("context id out of range")
        if items.size and (items.min() < 0 or items.max() >= n_items):
            raise ContractError("item id out of range")
        keys = np.unique(contexts * n_items + items)
        self.n_contexts = int(n_contexts)
        self.n_items = int(n_items)
        self.contexts = keys // n_items
        self.items = keys % n_items
        counts = np.bincount(self.contexts, minlength=n_contexts)
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)

    @classmethod
    def from_pairs(cls, n_contexts: int, n_items: int, pairs) -> "InteractionSet":
        pairs = list(pairs)
        if not pairs:
            return cls(n_contexts, n_items, [], [])
        c, i = zip(*pairs)
        return cls(n_contexts, n_items, c, i)

    def __len__(self) -> int:
        return int(self.items.size)

    def __contains__(self, pair) -> bool:
        c, i = pair
        if not 0 <= c < self.n_contexts:
            return False
        row = self.items_of(c)
        pos = np.searchsorted(row, i)
        return bool(pos < row.size and row[pos] == i)

    def __eq__(self, other) -> bool:
        if not isinstance(other, InteractionSet):
            return NotImplemented
        return (
            self.n_contexts == other.n_contexts
            and self.n_items == other.n_items
            and np.array_equal(self.contexts, other.contexts)
            and np.array_equal(self.items, other.items)
        )

    def items_of(self, c: int) -> np.ndarray:
        return self.items[self.indptr[c]:self.indptr[c + 1]]

    def counts(self) -> np.ndarray:
        return np.diff(self.indptr)

    def pairs(self):
        return list(zip(self.contexts.tolist(), self.items.tolist()))


@dataclass
class FactorModel:
    """Dot-product model: score(c, i) = <context_factors[c], item_factors[i]>."""

    context_factors: np.ndarray
    item_factors: np.ndarray
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.context_factors.ndim != 2 or self.item_factors.ndim != 2:
            raise ContractError("factor matrices must be 2-d")
        if self.context_factors.shape[1] != self.item_factors.shape[1]:
            raise ContractError("context and item factors disagree on dim")

    @property
    def dim(self) -> int:
        return self.context_factors.shape[1]

    @property
    def n_contexts(self) -> int:
        return self.context_factors.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_factors.shape[0]

    @property
    def dtype(self):
        return self.context_factors.dtype

    def copy(self) -> "FactorModel":
        return FactorModel(self.context_factors.copy(), self.item_factors.copy(),
                           self.seed, dict(self.meta))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.context_factors).all()
                    and np.isfinite(self.item_factors).all())

    def check_context(self, c: int) -> None:
        if not 0 <= c < self.n_contexts:
            raise ContractError(f"context id {c} outside [0, {self.n_contexts})")

    def check_item(self, i: int) -> None:
        if not 0 <= i < self.n_items:
            raise ContractError(f"item id {i} outside [0, {self.n_items})")


def init_model(n_contexts: int, n_items: int, dim: int, seed: int,
               dtype=np.float64) -> FactorModel:
    """Gaussian init with std 1/sqrt(dim), drawn from a Philox stream of ``seed``."""
    if n_contexts < 1 or n_items < 1 or dim < 1:
        raise ContractError("model dimensions must be positive")
    from .sampling import make_rng

    rng = make_rng(seed)
    scale = 1.0 / np.sqrt(dim)
    u = rng.normal(0.0, scale, size=(n_contexts, dim))
    v = rng.normal(0.0, scale, size=(n_items, dim))
    return FactorModel(u.astype(dtype), v.astype(dtype), seed=int(seed))


def zero_model(n_contexts: int, n_items: int, dim: int, dtype=np.float64) -> FactorModel:
    return FactorModel(np.zeros((n_contexts, dim), dtype), np.zeros((n_items, dim), dtype))


def score(model: FactorModel, c: int, i: int) -> float:
    model.check_context(c)
    model.check_item(i)
    return float(np.dot(model.context_factors[c], model.item_factors[i]))


def score_all(model: FactorModel, c: int) -> np.ndarray:
    # Row-by-row dot keeps each entry bit-identical to score(c, i); a matmul
    # may use a different summation order.
    model.check_context(c)
    u = model.context_factors[c]
    return np.array([np.dot(u, v) for v in model.item_factors], dtype=np.float64)


def score_matrix(model: FactorModel) -> np.ndarray:
    """Dense n_contexts x n_items scores (BLAS; not bit-tied to ``score``)."""
    return model.context_factors @ model.item_factors.T


# ---------------------------------------------------------------------------
# checkpoint container
#
#   magic (8 bytes) | version u32 | header length u32 | JSON header | U bytes | V bytes
#
# Matrices are written C-order in the dtype named by the header, little endian.


def save_model(model: FactorModel, path) -> None:
    u = np.ascontiguousarray(model.context_factors)
    v = np.ascontiguousarray(model.item_factors)
    dtype = np.dtype(u.dtype).newbyteorder("<")
    header = {
        "n_contexts": model.n_contexts,
        "n_items": model.n_items,
        "dim": model.dim,
        "dtype": dtype.str,
        "seed": int(model.seed),
        "meta": model.meta,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        f.write(u.astype(dtype, copy=False).tobytes())
        f.write(v.astype(dtype, copy=False).tobytes())


def load_model(path) -> FactorModel:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a model checkpoint")
    off = len(CHECKPOINT_MAGIC)
    version, hlen = struct.unpack_from("<II", data, off)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off += 8
    header = json.loads(data[off:off + hlen])
    off += hlen
    dtype = np.dtype(header["dtype"])
    nu = header["n_contexts"] * header["dim"]
    nv = header["n_items"] * header["dim"]
    expected = off + (nu + nv) * dtype.itemsize
    if len(data) != expected:
        raise ValueError(f"{path}: checkpoint truncated or padded")
    u = np.frombuffer(data, dtype, nu, off).reshape(header["n_contexts"], header["dim"])
    v = np.frombuffer(data, dtype, nv, off + nu * dtype.itemsize).reshape(
        header["n_items"], header["dim"])
    native = dtype.newbyteorder("=")
    return FactorModel(u.astype(native), v.astype(native),
                       seed=header["seed"], meta=header.get("meta", {}))
