"""Query pool: central points, per-batch neighbor-preserving updates,
reservoir-sampled center replacement, and the pool-scoped query path.

The pool stores global sample ids only; features are looked up on demand,
so neighbor lists survive model updates without copying. Per query, at most
beta neighbor lists are re-encoded with the latest projection - the cost
bound that makes pool-mode queries independent of database growth.

Concurrency contract: queries are read-only and may run concurrently;
neighbor_update and reservoir_refresh mutate the pool and require
exclusive access (single writer, no reader during a write).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .hashing import CodeMatrix, FormatError, HashModel, HyperParams, encode, top_alpha

POOL_MAGIC = b"FOHP"
POOL_VERSION = 1


@dataclass
class QueryPool:
    """u center ids, each with a v-length neighbor id list (lists may
    overlap), plus the reservoir counters driving center replacement."""

    centers: np.ndarray           # (u,) int64 global ids
    neighbors: list[np.ndarray]   # u arrays of int64 global ids
    v: int
    seen_count: int               # stream length already run through the reservoir
    seed: int

    @property
    def u(self) -> int:
        return self.centers.shape[0]

    def candidate_union(self, center_slots: np.ndarray) -> np.ndarray:
        """Deduplicated, ascending ids across the given slots' lists."""
        if len(center_slots) == 0:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate([self.neighbors[int(s)] for s in center_slots]))


@dataclass
class StreamState:
    """Arrival-ordered ids of all accumulated samples with their stored
    (possibly stale) codes; the refresh scan works off these directly."""

    ids: np.ndarray
    codes: CodeMatrix
    stage: int = 0

    def __post_init__(self):
        self.ids = np.ascontiguousarray(self.ids, dtype=np.int64)
        if self.ids.shape[0] != self.codes.n:
            raise ValueError("ids and codes must align")

    def extend(self, ids: np.ndarray, codes: CodeMatrix, stage: int) -> "StreamState":
        return StreamState(ids=np.concatenate([self.ids, ids]),
                           codes=self.codes.concat(codes), stage=stage)


@dataclass
class QueryRecord:
    """Operation counts for one query; the pool-mode cost contract is
    candidates_encoded <= beta*v and codes_compared <= u + beta*v."""

    centers_scanned: int
    candidates_encoded: int
    codes_compared: int
    truncated: bool = False


def init_pool(features: np.ndarray, ids: np.ndarray, model: HashModel,
              hyper: HyperParams) -> QueryPool:
    """Draw u centers uniformly without replacement from the first batch and
    seed each neighbor list with the v nearest batch members (self included)
    under the given model."""
    ids = np.asarray(ids, dtype=np.int64)
    n = ids.shape[0]
    if n < hyper.u:
        raise ValueError(f"first batch ({n}) smaller than u={hyper.u}")
    if n < hyper.v:
        raise ValueError(f"first batch ({n}) smaller than v={hyper.v}")
    rng = np.random.default_rng([hyper.seed, 0])
    order = np.argsort(ids, kind="stable")
    feats_sorted = features[:, order]
    ids_sorted = ids[order]
    pick = rng.choice(n, size=hyper.u, replace=False)
    centers = ids_sorted[pick]
    codes = encode(model, feats_sorted)
    center_codes = codes.take(pick)
    nn = top_alpha(center_codes, codes, hyper.v)  # (v, u) indices into the batch
    neighbors = [ids_sorted[nn[:, i]] for i in range(hyper.u)]
    return QueryPool(centers=centers, neighbors=neighbors, v=hyper.v,
                     seen_count=n, seed=hyper.seed)


def neighbor_update(pool: QueryPool, model: HashModel, batch_features: np.ndarray,
                    batch_ids: np.ndarray, batch_codes: CodeMatrix,
                    dataset: Dataset) -> None:
    """Refresh every neighbor list against the union of the new batch and
    the current list, all compared under the latest model (stale list
    members are re-encoded here). Ties go to the lower global id."""
    batch_ids = np.asarray(batch_ids, dtype=np.int64)
    if batch_ids.shape[0] == 0:
        return
    old_ids = np.unique(np.concatenate(pool.neighbors))
    # one encoding pass over ids not present in the batch
    stale = np.setdiff1d(old_ids, batch_ids, assume_unique=False)
    fresh_ids = np.concatenate([batch_ids, stale])
    fresh_codes = batch_codes
    if stale.shape[0]:
        fresh_codes = batch_codes.concat(encode(model, dataset.features_by_id(stale)))
    sort_idx = np.argsort(fresh_ids, kind="stable")
    fresh_sorted = fresh_ids[sort_idx]

    center_codes = encode(model, dataset.features_by_id(pool.centers))
    for i in range(pool.u):
        cand = np.unique(np.concatenate([batch_ids, pool.neighbors[i]]))
        rows = sort_idx[np.searchsorted(fresh_sorted, cand)]
        cand_codes = fresh_codes.take(rows)
        keep = min(pool.v, cand.shape[0])
        nn = top_alpha(center_codes.take([i]), cand_codes, keep)
        pool.neighbors[i] = cand[nn[:, 0]]


def reservoir_refresh(pool: QueryPool, stream: StreamState, dataset: Dataset,
                      model: HashModel, hyper: HyperParams) -> list[int]:
    """Run the classic reservoir rule over samples seen since the last
    refresh: arrival j lands in a uniform slot with probability u/j. At most
    r slot replacements materialize; each replaced center gets its list
    rebuilt by a full scan over the stored accumulated codes. Returns the
    slots whose centers were replaced."""
    r = hyper.effective_r
    total = stream.ids.shape[0]
    start = pool.seen_count
    if total < start:
        raise ValueError("stream shorter than reservoir counter")
    new_ids = stream.ids[start:]
    rng = np.random.default_rng([pool.seed, 1, start])
    pool.seen_count = total
    if new_ids.shape[0] == 0:
        return []
    arrivals = np.arange(start + 1, total + 1, dtype=np.float64)
    accepted = rng.random(new_ids.shape[0]) < pool.u / arrivals
    slots = rng.integers(0, pool.u, size=int(accepted.sum()))
    pending: dict[int, int] = {}
    for sid, slot in zip(new_ids[accepted], slots):
        pending[int(slot)] = int(sid)  # later arrivals overwrite the slot
    if not pending:
        return []
    chosen = sorted(pending)
    if len(chosen) > r:
        chosen = sorted(int(s) for s in rng.choice(chosen, size=r, replace=False))
    new_centers = np.array([pending[s] for s in chosen], dtype=np.int64)
    center_codes = encode(model, dataset.features_by_id(new_centers))
    nn = top_alpha(center_codes, stream.codes, min(pool.v, total))
    for col, slot in enumerate(chosen):
        pool.centers[slot] = new_centers[col]
        pool.neighbors[slot] = stream.ids[nn[:, col]]
    return chosen


def online_query(q: np.ndarray, model: HashModel, pool: QueryPool,
                 dataset: Dataset, K: int, hyper: HyperParams,
                 ) -> tuple[np.ndarray, QueryRecord]:
    """Pool-scoped query: route to the beta nearest centers, re-encode only
    the union of their neighbor lists, and rank those candidates. Returns
    up to K global ids (fewer only when the candidate union is smaller,
    flagged in the record)."""
    if K > hyper.beta * pool.v:
        raise ValueError(f"K={K} exceeds the pool bound beta*v={hyper.beta * pool.v}")
    q_code = encode(model, np.asarray(q, dtype=np.float64).reshape(-1, 1))
    center_codes = encode(model, dataset.features_by_id(pool.centers))
    near = top_alpha(q_code, center_codes, hyper.beta)[:, 0]
    cand = pool.candidate_union(near)
    cand_codes = encode(model, dataset.features_by_id(cand))
    keep = min(K, cand.shape[0])
    nn = top_alpha(q_code, cand_codes, keep)
    record = QueryRecord(centers_scanned=pool.u,
                         candidates_encoded=int(cand.shape[0]),
                         codes_compared=pool.u + int(cand.shape[0]),
                         truncated=keep < K)
    # the pool's cost contract, independent of database size
    assert record.candidates_encoded <= hyper.beta * pool.v
    assert record.codes_compared <= pool.u + hyper.beta * pool.v
    return cand[nn[:, 0]], record


def full_scan_query(q: np.ndarray, model: HashModel, dataset: Dataset,
                    K: int) -> tuple[np.ndarray, QueryRecord]:
    """Re-encode the whole database under the latest model and rank all of
    it - the cost every query pays without a pool."""
    if dataset.n == 0:
        raise ValueError("empty dataset")
    if K > dataset.n:
        raise ValueError(f"K={K} exceeds database size {dataset.n}")
    q_code = encode(model, np.asarray(q, dtype=np.float64).reshape(-1, 1))
    codes = encode(model, dataset.features)
    nn = top_alpha(q_code, codes, K)
    record = QueryRecord(centers_scanned=0, candidates_encoded=dataset.n,
                         codes_compared=dataset.n)
    return dataset.ids[nn[:, 0]], record


# ---------------------------------------------------------------------------
# persistence


def save_pool(pool: QueryPool, path) -> None:
    for i, lst in enumerate(pool.neighbors):
        if lst.shape[0] != pool.v:
            raise ValueError(f"neighbor list {i} has {lst.shape[0]} ids, expected {pool.v}")
    with open(path, "wb") as f:
        f.write(POOL_MAGIC)
        f.write(struct.pack("<IIIQQ", POOL_VERSION, pool.u, pool.v,
                            pool.seen_count, pool.seed))
        f.write(pool.centers.astype("<u8").tobytes())
        f.write(np.stack(pool.neighbors).astype("<u8").tobytes(order="C"))


def load_pool(path) -> QueryPool:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != POOL_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {POOL_MAGIC!r}")
        version, u, v, seen, seed = struct.unpack("<IIIQQ", f.read(28))
        if version != POOL_VERSION:
            raise FormatError(f"unsupported pool file version {version}")
        centers = np.frombuffer(f.read(u * 8), dtype="<u8").astype(np.int64)
        buf = f.read(u * v * 8)
        if len(buf) != u * v * 8:
            raise FormatError("truncated pool file")
        mat = np.frombuffer(buf, dtype="<u8").reshape(u, v).astype(np.int64)
        return QueryPool(centers=centers, neighbors=[mat[i].copy() for i in range(u)],
                         v=v, seen_count=seen, seed=seed)
