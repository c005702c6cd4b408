"""Interaction log ingestion, filtering, reindexing, splitting and caching."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .core import ItemCatalog, InteractionSet
from .metrics import TEST, TUNING, EvalSplit

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"RCCACHE\x00"
CACHE_VERSION = (1, 0, 0)
MAX_MALFORMED_FRACTION = 0.01


class CacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class RawInteraction:
    user_key: str
    item_key: str
    rating: Optional[float] = None
    timestamp: Optional[int] = None


@dataclass
class PrepConfig:
    """Preprocessing and split settings.

    ``rating_threshold`` keeps interactions with rating >= threshold and is
    ignored for records without a rating.  The ``synthetic_*`` keys describe the
    planted generator used when no input file is given.
    """

    min_user_interactions: int = 1
    min_item_interactions: int = 1
    rating_threshold: Optional[float] = None
    holdout_fraction: float = 0.2
    n_eval_users: int = 100
    split_seed: int = 0
    synthetic_users: int = 500
    synthetic_items: int = 200
    synthetic_dim: int = 8
    synthetic_top: int = 20
    synthetic_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in (0, 1)")
        if self.min_user_interactions < 1 or self.min_item_interactions < 1:
            raise ValueError("min counts must be >= 1")
        if self.n_eval_users < 1:
            raise ValueError("n_eval_users must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "PrepConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown prep config keys: {sorted(unknown)}")
        return cls(**d)

    def config_hash(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


@dataclass
class PreparedData:
    catalog: ItemCatalog
    split: EvalSplit
    user_keys: List[str]
    item_keys: List[str]
    config: PrepConfig = field(default_factory=PrepConfig)

    @property
    def train(self) -> InteractionSet:
        return self.split.train


# ---------------------------------------------------------------------------
# loading


def load_interactions(path, fmt: Optional[str] = None) -> List[RawInteraction]:
    """Parse a CSV/TSV log with header ``user,item[,rating[,timestamp]]``.

    Malformed lines are logged with their line number and skipped; more than
    1% malformed lines raises ``ValueError``.
    """
    path = Path(path)
    if fmt is None:
        fmt = "tsv" if path.suffix.lower() in (".tsv", ".tab") else "csv"
    if fmt not in ("csv", "tsv"):
        raise ValueError(f"unsupported format {fmt!r}")
    delimiter = "," if fmt == "csv" else "\t"
    records: List[RawInteraction] = []
    bad = 0
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            return records
        cols = [h.strip().lower() for h in header]
        if cols[:2] != ["user", "item"] or len(cols) > 4:
            raise ValueError(f"{path}: header must be user,item[,rating[,timestamp]]")
        ncol = len(cols)
        for row in reader:
            lineno = reader.line_num
            if not row:
                continue
            try:
                records.append(_parse_row(row, ncol))
            except ValueError as exc:
                bad += 1
                logger.warning("%s:%d: malformed line skipped (%s)", path, lineno, exc)
    total = len(records) + bad
    if total and bad / total > MAX_MALFORMED_FRACTION:
        raise ValueError(f"{path}: {bad} of {total} lines malformed; aborting")
    return records


def _parse_row(row, ncol) -> RawInteraction:
    if len(row) != ncol:
        raise ValueError(f"expected {ncol} fields, got {len(row)}")
    user, item = row[0].strip(), row[1].strip()
    if not user or not item:
        raise ValueError("empty user or item key")
    rating = float(row[2]) if ncol > 2 and row[2].strip() else None
    if rating is not None and not math.isfinite(rating):
        raise ValueError("non-finite rating")
    timestamp = int(row[3]) if ncol > 3 and row[3].strip() else None
    return RawInteraction(user, item, rating, timestamp)


# ---------------------------------------------------------------------------
# preprocessing


def _key_order(keys):
    keys = list(keys)
    try:
        return sorted(keys, key=int)
    except ValueError:
        return sorted(keys)


def preprocess(raw, config: PrepConfig):
    """Threshold, filter to a fixed point, deduplicate and reindex.

    Returns ``(catalog, interactions, user_keys, item_keys)`` where the key
    lists map dense ids back to raw keys.
    """
    raw = list(raw)
    if not raw:
        raise ValueError("no interactions to preprocess")
    pairs = set()
    for r in raw:
        if config.rating_threshold is not None and r.rating is not None \
                and r.rating < config.rating_threshold:
            continue
        pairs.add((r.user_key, r.item_key))

    while True:
        size = len(pairs)
        user_counts: Dict[str, int] = {}
        for u, _ in pairs:
            user_counts[u] = user_counts.get(u, 0) + 1
        pairs = {(u, i) for u, i in pairs if user_counts[u] >= config.min_user_interactions}
        item_counts: Dict[str, int] = {}
        for _, i in pairs:
            item_counts[i] = item_counts.get(i, 0) + 1
        pairs = {(u, i) for u, i in pairs if item_counts[i] >= config.min_item_interactions}
        if len(pairs) == size:
            break
    if not pairs:
        raise ValueError("every interaction was filtered out; relax the thresholds")

    user_keys = _key_order({u for u, _ in pairs})
    item_keys = _key_order({i for _, i in pairs})
    if len(item_keys) < 2:
        raise ValueError("fewer than two items survive preprocessing")
    uid = {k: n for n, k in enumerate(user_keys)}
    iid = {k: n for n, k in enumerate(item_keys)}
    ctx = np.fromiter((uid[u] for u, _ in pairs), dtype=np.int64, count=len(pairs))
    itm = np.fromiter((iid[i] for _, i in pairs), dtype=np.int64, count=len(pairs))
    data = InteractionSet(len(user_keys), len(item_keys), ctx, itm)
    return ItemCatalog(len(item_keys)), data, user_keys, item_keys


def to_raw(data: InteractionSet, user_keys=None, item_keys=None) -> List[RawInteraction]:
    uk = user_keys or [str(u) for u in range(data.n_contexts)]
    ik = item_keys or [str(i) for i in range(data.n_items)]
    return [RawInteraction(uk[c], ik[i]) for c, i in data.pairs()]


def holdout_count(count: int, fraction: float) -> int:
    """round-half-up(fraction * count), clamped to [1, count - 1]."""
    h = math.floor(fraction * count + 0.5)
    return min(max(h, 1), count - 1)


def make_split(data: InteractionSet, config: PrepConfig,
               rng: np.random.Generator) -> EvalSplit:
    counts = data.counts()
    eligible = np.flatnonzero(counts >= 2)
    if eligible.size < config.n_eval_users:
        raise ValueError(
            f"only {eligible.size} users have >= 2 interactions; "
            f"{config.n_eval_users} evaluation users requested")
    chosen = np.sort(rng.choice(eligible, size=config.n_eval_users, replace=False))
    keep = np.ones(len(data), dtype=bool)
    holdout = {}
    for u in chosen.tolist():
        lo, hi = data.indptr[u], data.indptr[u + 1]
        h = holdout_count(hi - lo, config.holdout_fraction)
        picked = np.sort(rng.choice(hi - lo, size=h, replace=False)) + lo
        keep[picked] = False
        holdout[u] = data.items[picked].copy()
    order = rng.permutation(chosen).tolist()
    half = len(order) // 2
    partition = {u: (TUNING if n < half else TEST) for n, u in enumerate(order)}
    train = InteractionSet(data.n_contexts, data.n_items,
                           data.contexts[keep], data.items[keep])
    split = EvalSplit(train, holdout, partition)
    split.check()
    return split


def generate_synthetic(n_users: int, n_items: int, dim: int, top: int,
                       seed: int) -> InteractionSet:
    """Planted low-rank data: each user's ``top`` highest-scoring items under
    Gaussian ground-truth factors become that user's positives."""
    if top >= n_items:
        raise ValueError("top must be smaller than n_items")
    from .sampling import make_rng

    rng = make_rng(seed, shard=0x5EED)
    u = rng.normal(size=(n_users, dim))
    v = rng.normal(size=(n_items, dim))
    scores = u @ v.T
    best = np.argsort(-scores, axis=1, kind="stable")[:, :top]
    ctx = np.repeat(np.arange(n_users), top)
    return InteractionSet(n_users, n_items, ctx, best.ravel())


def prepare(raw, config: PrepConfig) -> PreparedData:
    from .sampling import make_rng

    catalog, data, user_keys, item_keys = preprocess(raw, config)
    split = make_split(data, config, make_rng(config.split_seed, shard=1))
    return PreparedData(catalog, split, user_keys, item_keys, config)


def prepare_synthetic(config: PrepConfig) -> PreparedData:
    data = generate_synthetic(config.synthetic_users, config.synthetic_items,
                              config.synthetic_dim, config.synthetic_top,
                              config.synthetic_seed)
    return prepare(to_raw(data), config)


# ---------------------------------------------------------------------------
# cache
#
#   magic (8) | major, minor, patch u16 | config hash (64 ascii hex)
#   | sha256(payload) (32) | payload length u64 | payload (npz)


def save_cache(prepared: PreparedData, path) -> None:
    split = prepared.split
    users = np.array(sorted(split.holdout), dtype=np.int64)
    held = [split.holdout[u] for u in users.tolist()]
    indptr = np.concatenate([[0], np.cumsum([h.size for h in held])]).astype(np.int64)
    buf = io.BytesIO()
    np.savez(
        buf,
        n_users=np.int64(split.train.n_contexts),
        n_items=np.int64(prepared.catalog.n_items),
        train_contexts=split.train.contexts,
        train_items=split.train.items,
        holdout_users=users,
        holdout_indptr=indptr,
        holdout_items=np.concatenate(held) if held else np.zeros(0, np.int64),
        holdout_is_test=np.array([split.partition[u] == TEST for u in users.tolist()]),
        user_keys=np.array(prepared.user_keys, dtype=str),
        item_keys=np.array(prepared.item_keys, dtype=str),
        config=np.array(json.dumps(asdict(prepared.config), sort_keys=True)),
    )
    payload = buf.getvalue()
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<3H", *CACHE_VERSION))
        f.write(prepared.config.config_hash().encode("ascii"))
        f.write(hashlib.sha256(payload).digest())
        f.write(struct.pack("<Q", len(payload)))
        f.write(payload)


def read_cache_hash(path) -> str:
    with open(path, "rb") as f:
        head = f.read(len(CACHE_MAGIC) + 6 + 64)
    if not head.startswith(CACHE_MAGIC) or len(head) < len(CACHE_MAGIC) + 70:
        raise CacheError(f"{path}: not a rankcorrect cache")
    return head[len(CACHE_MAGIC) + 6:].decode("ascii")


def load_cache(path, expected_config: Optional[PrepConfig] = None) -> PreparedData:
    redo = "re-run `rankcorrect prep --force` to rebuild it"
    data = Path(path).read_bytes()
    if not data.startswith(CACHE_MAGIC):
        raise CacheError(f"{path}: not a rankcorrect cache; {redo}")
    off = len(CACHE_MAGIC)
    if len(data) < off + 6 + 64 + 32 + 8:
        raise CacheError(f"{path}: cache truncated; {redo}")
    version = struct.unpack_from("<3H", data, off)
    off += 6
    if version[0] != CACHE_VERSION[0]:
        raise CacheError(f"{path}: cache version {version} unsupported; {redo}")
    config_hash = data[off:off + 64].decode("ascii")
    off += 64
    digest = data[off:off + 32]
    off += 32
    (length,) = struct.unpack_from("<Q", data, off)
    off += 8
    payload = data[off:off + length]
    if len(payload) != length or hashlib.sha256(payload).digest() != digest:
        raise CacheError(f"{path}: checksum mismatch; {redo}")
    if expected_config is not None and expected_config.config_hash() != config_hash:
        raise CacheError(f"{path}: built with a different prep config; {redo}")

    z = np.load(io.BytesIO(payload), allow_pickle=False)
    config = PrepConfig.from_dict(json.loads(str(z["config"])))
    n_users, n_items = int(z["n_users"]), int(z["n_items"])
    train = InteractionSet(n_users, n_items, z["train_contexts"], z["train_items"])
    users = z["holdout_users"].tolist()
    indptr = z["holdout_indptr"]
    items = z["holdout_items"]
    holdout = {u: items[indptr[n]:indptr[n + 1]].copy() for n, u in enumerate(users)}
    partition = {u: (TEST if t else TUNING)
                 for u, t in zip(users, z["holdout_is_test"].tolist())}
    return PreparedData(ItemCatalog(n_items), EvalSplit(train, holdout, partition),
                        z["user_keys"].tolist(), z["item_keys"].tolist(), config)
