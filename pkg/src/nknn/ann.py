"""Nearest-neighbor search over datastore keys.

Distances are squared L2 everywhere. Results are totally ordered by
(distance, entry id), so the IVF index probing every list returns exactly
what brute force returns.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ConfigError
from .datastore import CorruptFileError, Datastore, DatastoreError, VersionError

INDEX_MAGIC = b"NKNNIX\x00\x01"
INDEX_VERSION = 1
_INDEX_HEADER = struct.Struct("<8sIIIIQIqH")


@dataclass(frozen=True)
class NeighborSet:
    ids: np.ndarray  # int64, ascending by (distance, id)
    distances: np.ndarray  # float64 squared L2
    values: np.ndarray  # (len, n) int32

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def empty(cls, n: int) -> "NeighborSet":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.float64), np.zeros((0, n), np.int32))


@dataclass(frozen=True)
class IVFConfig:
    n_centroids: int
    n_probe: int
    kmeans_iters: int = 20
    seed: int = 17

    def __post_init__(self) -> None:
        if self.n_centroids < 1:
            raise ConfigError(f"n_centroids must be >= 1, got {self.n_centroids}")
        if not 1 <= self.n_probe <= self.n_centroids:
            raise ConfigError(f"n_probe must lie in [1, {self.n_centroids}], got {self.n_probe}")
        if self.kmeans_iters < 0:
            raise ConfigError("kmeans_iters must be >= 0")

    @classmethod
    def for_size(cls, n_entries: int, seed: int = 17, **overrides) -> "IVFConfig":
        """Desk-scale defaults: about 64 keys per list, probe an eighth of the lists."""
        n_centroids = overrides.pop("n_centroids", max(1, n_entries // 64))
        n_probe = overrides.pop("n_probe", max(1, n_centroids // 8))
        return cls(n_centroids=n_centroids, n_probe=n_probe, seed=seed, **overrides)


@dataclass(eq=False)
class VectorIndex:
    centroids: np.ndarray  # (C, D) float64
    list_offsets: np.ndarray  # (C + 1,) int64
    list_ids: np.ndarray  # entry ids grouped by list, ascending within a list
    config: IVFConfig
    store: Datastore

    @property
    def n_centroids(self) -> int:
        return len(self.centroids)

    def inverted_list(self, c: int) -> np.ndarray:
        return self.list_ids[self.list_offsets[c] : self.list_offsets[c + 1]]

    def assignment(self) -> np.ndarray:
        out = np.empty(len(self.store), dtype=np.int64)
        for c in range(self.n_centroids):
            out[self.inverted_list(c)] = c
        return out


def sq_l2(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Row-wise squared L2 between float64 ``points`` and one query."""
    return np.square(points - query).sum(axis=1)


def _pairwise_sq_l2(points: np.ndarray, centroids: np.ndarray, chunk: int = 2048) -> np.ndarray:
    # same per-row reduction as sq_l2, so assignment and probing agree bit for bit
    out = np.empty((len(points), len(centroids)))
    for start in range(0, len(points), chunk):
        block = points[start : start + chunk]
        out[start : start + chunk] = np.square(block[:, None, :] - centroids[None, :, :]).sum(axis=2)
    return out


def _select(ids: np.ndarray, dists: np.ndarray, k: int, store: Datastore) -> NeighborSet:
    if len(ids) > k:
        kth = np.partition(dists, k - 1)[k - 1]
        keep = dists <= kth
        ids, dists = ids[keep], dists[keep]
    order = np.lexsort((ids, dists))[:k]
    ids, dists = ids[order], dists[order]
    return NeighborSet(ids=ids.astype(np.int64), distances=dists, values=store.values[ids])


def _check_query(store: Datastore, query: np.ndarray, k: int) -> np.ndarray:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (store.dim,):
        raise ValueError(f"query shape {q.shape} does not match datastore dim {store.dim}")
    return q


def exact_search(store: Datastore, query: np.ndarray, k: int) -> NeighborSet:
    """Brute-force k nearest keys; ties go to the lower entry id."""
    q = _check_query(store, query, k)
    if len(store) == 0:
        return NeighborSet.empty(store.n)
    return _select(np.arange(len(store)), sq_l2(store.keys64, q), k, store)


def _kmeanspp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    chosen = [int(rng.integers(n))]
    d2 = sq_l2(points, points[chosen[0]])
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            idx = int(rng.choice(np.setdiff1d(np.arange(n), chosen)))
        chosen.append(idx)
        d2 = np.minimum(d2, sq_l2(points, points[idx]))
    return points[chosen].copy()


def _fast_assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d = (points**2).sum(1)[:, None] - 2.0 * points @ centroids.T + (centroids**2).sum(1)[None, :]
    return d.argmin(axis=1)


def _repair_empty(points, centroids, assign, counts) -> None:
    for c in np.flatnonzero(counts == 0):
        big = int(counts.argmax())
        members = np.flatnonzero(assign == big)
        if len(members) < 2:
            continue
        far = members[int(sq_l2(points[members], centroids[big]).argmax())]
        centroids[c] = points[far]
        assign[far] = c
        counts[big] -= 1
        counts[c] = 1


def kmeans(points: np.ndarray, k: int, iters: int = 20, seed: int = 17) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; returns float64 centroids."""
    rng = np.random.default_rng(seed)
    centroids = _kmeanspp(points, k, rng)
    for _ in range(iters):
        assign = _fast_assign(points, centroids)
        counts = np.bincount(assign, minlength=k)
        _repair_empty(points, centroids, assign, counts)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, points)
        filled = counts > 0
        new = centroids.copy()
        new[filled] = sums[filled] / counts[filled, None]
        if np.array_equal(new, centroids):
            break
        centroids = new
    return centroids


def _build_lists(assign: np.ndarray, n_centroids: int) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(assign, kind="stable")
    counts = np.bincount(assign, minlength=n_centroids)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return offsets, order.astype(np.int64)


def train_ivf(store: Datastore, config: IVFConfig) -> VectorIndex:
    if len(store) < config.n_centroids:
        raise ConfigError(f"{len(store)} entries cannot support {config.n_centroids} centroids")
    points = store.keys64
    centroids = kmeans(points, config.n_centroids, config.kmeans_iters, config.seed)
    assign = _pairwise_sq_l2(points, centroids).argmin(axis=1)
    offsets, ids = _build_lists(assign, config.n_centroids)
    return VectorIndex(centroids=centroids, list_offsets=offsets, list_ids=ids, config=config, store=store)


def probe_order(index: VectorIndex, query: np.ndarray) -> np.ndarray:
    dc = sq_l2(index.centroids, np.asarray(query, dtype=np.float64))
    return np.lexsort((np.arange(len(dc)), dc))


def ivf_search(index: VectorIndex, query: np.ndarray, k: int, n_probe: int | None = None) -> NeighborSet:
    """Search the ``n_probe`` lists whose centroids are nearest the query."""
    store = index.store
    n_probe = index.config.n_probe if n_probe is None else n_probe
    if not 1 <= n_probe <= index.n_centroids:
        raise ValueError(f"n_probe must lie in [1, {index.n_centroids}], got {n_probe}")
    q = _check_query(store, query, k)
    lists = probe_order(index, q)[:n_probe]
    ids = np.concatenate([index.inverted_list(c) for c in lists])
    if len(ids) == 0:
        return NeighborSet.empty(store.n)
    return _select(ids, sq_l2(store.keys64[ids], q), k, store)


def search(store: Datastore, index: VectorIndex | None, query: np.ndarray, k: int) -> NeighborSet:
    """IVF search with the index's own n_probe, or brute force without an index."""
    if index is None or len(store) == 0:
        return exact_search(store, query, k)
    return ivf_search(index, query, k)


def recall_at_k(index: VectorIndex, queries: np.ndarray, k: int, n_probe: int) -> float:
    """Mean fraction of the exact k neighbors that the IVF search recovers."""
    hits = 0
    total = 0
    for q in queries:
        truth = set(exact_search(index.store, q, k).ids.tolist())
        found = set(ivf_search(index, q, k, n_probe).ids.tolist())
        hits += len(truth & found)
        total += len(truth)
    return hits / total if total else 0.0


def save_index(index: VectorIndex, path: str | Path) -> int:
    store = index.store
    fp = store.model_fingerprint.encode("ascii")
    cfg = index.config
    header = _INDEX_HEADER.pack(
        INDEX_MAGIC,
        INDEX_VERSION,
        cfg.n_centroids,
        cfg.n_probe,
        cfg.kmeans_iters,
        len(store),
        store.dim,
        cfg.seed,
        len(fp),
    )
    payload = b"".join(
        [
            header,
            fp,
            index.centroids.astype("<f8").tobytes(),
            index.list_offsets.astype("<i8").tobytes(),
            index.list_ids.astype("<i8").tobytes(),
        ]
    )
    with open(path, "wb") as fh:
        fh.write(payload)
    return len(payload)


def load_index(path: str | Path, store: Datastore) -> VectorIndex:
    """Load an index and check that it belongs to ``store``."""
    blob = Path(path).read_bytes()
    if len(blob) < _INDEX_HEADER.size:
        raise CorruptFileError(f"{path}: truncated index header")
    magic, version, nc, n_probe, iters, count, dim, seed, fp_len = _INDEX_HEADER.unpack_from(blob)
    if magic != INDEX_MAGIC:
        raise CorruptFileError(f"{path}: not an index file")
    if version != INDEX_VERSION:
        raise VersionError(f"{path}: index version {version}, expected {INDEX_VERSION}")
    if fp_len == 0:
        raise CorruptFileError(f"{path}: missing model fingerprint")
    off = _INDEX_HEADER.size
    expected = off + fp_len + 8 * (nc * dim + nc + 1 + count)
    if len(blob) != expected:
        raise CorruptFileError(f"{path}: size {len(blob)} bytes, expected {expected}")
    fingerprint = blob[off : off + fp_len].decode("ascii", errors="replace")
    if fingerprint != store.model_fingerprint or count != len(store) or dim != store.dim:
        raise DatastoreError(
            f"{path}: index was built for fingerprint {fingerprint} with {count} entries, "
            f"datastore has {store.model_fingerprint} with {len(store)}"
        )
    off += fp_len
    centroids = np.frombuffer(blob, "<f8", nc * dim, off).reshape(nc, dim).astype(np.float64)
    off += 8 * nc * dim
    offsets = np.frombuffer(blob, "<i8", nc + 1, off).astype(np.int64)
    off += 8 * (nc + 1)
    ids = np.frombuffer(blob, "<i8", count, off).astype(np.int64)
    config = IVFConfig(n_centroids=nc, n_probe=n_probe, kmeans_iters=iters, seed=seed)
    return VectorIndex(centroids=centroids, list_offsets=offsets, list_ids=ids, config=config, store=store)
