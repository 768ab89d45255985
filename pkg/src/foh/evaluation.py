"""Retrieval metrics, ground-truth construction, the untrained
random-projection baseline, and the pool-vs-full query benchmark."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .hashing import HashModel, HyperParams
from .pool import QueryPool, QueryRecord, full_scan_query, online_query


@dataclass
class GroundTruth:
    """Per-query sets of relevant global ids under a label rule."""

    relevant: list[np.ndarray]
    rule: str  # share_any_label | same_single_label


@dataclass
class MetricsReport:
    map: float
    precision_at: dict[int, float]
    recall_at: dict[int, float]
    pr_curve: list[tuple[float, float]]
    timing: dict = field(default_factory=dict)
    op_counts: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "map": self.map,
            "precision_at": {str(k): v for k, v in self.precision_at.items()},
            "recall_at": {str(k): v for k, v in self.recall_at.items()},
            "pr_curve": [[r, p] for r, p in self.pr_curve],
            "timing": self.timing,
            "op_counts": self.op_counts,
        }


def average_precision(ranked, relevant, mode: str = "full") -> float:
    """Mean of precision-at-rank over the relevant items retrieved.

    mode 'full' divides by |relevant| (missed items count against the
    score); 'truncated' divides by the number of relevant items actually
    retrieved. An empty relevant set scores 0.
    """
    if mode not in ("full", "truncated"):
        raise ValueError(f"unknown AP mode {mode!r}")
    relevant = {int(x) for x in relevant}
    if not relevant:
        return 0.0
    hits = 0
    precisions = []
    for rank, rid in enumerate(ranked, start=1):
        if int(rid) in relevant:
            hits += 1
            precisions.append(hits / rank)
    if not precisions:
        return 0.0
    denom = len(relevant) if mode == "full" else hits
    return float(sum(precisions) / denom)


def precision_recall_at_k(ranked, relevant, k: int) -> tuple[float, float]:
    if k < 1:
        raise ValueError("k must be >= 1")
    relevant = {int(x) for x in relevant}
    top = [int(x) for x in list(ranked)[:k]]
    inter = sum(1 for x in top if x in relevant)
    precision = inter / k
    recall = inter / len(relevant) if relevant else 0.0
    return precision, recall


def pr_curve(ranked, relevant) -> list[tuple[float, float]]:
    """(recall, precision) at every rank where recall changes."""
    relevant = {int(x) for x in relevant}
    if not relevant:
        return []
    pts = []
    hits = 0
    for rank, rid in enumerate(ranked, start=1):
        if int(rid) in relevant:
            hits += 1
            pts.append((hits / len(relevant), hits / rank))
    return pts


def build_ground_truth(queries: Dataset, base: Dataset,
                       rule: str = "share_any_label") -> GroundTruth:
    """Label-based relevance: intersecting label sets (share_any_label) or
    identical single labels (same_single_label). A query present in the
    base set (matched by global id) is excluded from its own relevant set."""
    if rule not in ("share_any_label", "same_single_label"):
        raise ValueError(f"unknown relevance rule {rule!r}")
    if queries.c != base.c:
        raise ValueError("label spaces must match")
    Lq = queries.labels.astype(np.int64)
    Lb = base.labels.astype(np.int64)
    if rule == "same_single_label":
        if np.any(Lq.sum(axis=0) != 1) or np.any(Lb.sum(axis=0) != 1):
            raise ValueError("same_single_label rule requires single-label data")
        qlab = Lq.argmax(axis=0)
        blab = Lb.argmax(axis=0)
        rel_mask = qlab[:, None] == blab[None, :]
    else:
        rel_mask = (Lq.T @ Lb) > 0
    base_pos = {int(g): j for j, g in enumerate(base.ids)}
    relevant = []
    for i in range(queries.n):
        ids = base.ids[rel_mask[i]]
        qid = int(queries.ids[i])
        j = base_pos.get(qid)
        # exclude the query itself only when it really is the same sample
        if j is not None and np.array_equal(queries.features[:, i],
                                            base.features[:, j]):
            ids = ids[ids != qid]
        relevant.append(ids)
    return GroundTruth(relevant=relevant, rule=rule)


def lsh_baseline(d: int, k: int, seed: int, c: int = 1) -> HashModel:
    """Untrained comparator: seeded Gaussian projections, zero label
    projector, zero center."""
    rng = np.random.default_rng(seed)
    return HashModel(W=rng.standard_normal((d, k)), P=np.zeros((k, c)),
                     center=np.zeros(d))


DEFAULT_PR_KS = (1, 5, 10, 50, 100)


def evaluate_rankings(rankings: list[np.ndarray], gt: GroundTruth,
                      ks=DEFAULT_PR_KS, map_mode: str = "full") -> MetricsReport:
    """Aggregate metrics over a query set. The report's PR curve is the
    mean precision/recall over queries at each rank of the ranked lists."""
    if len(rankings) != len(gt.relevant):
        raise ValueError("one ranking per ground-truth query required")
    aps, rows_p, rows_r = [], [], []
    max_len = max((len(r) for r in rankings), default=0)
    ks = sorted(x for x in set(int(k) for k in ks) if x <= max_len)
    prec_at = {k: [] for k in ks}
    rec_at = {k: [] for k in ks}
    for ranked, rel in zip(rankings, gt.relevant):
        aps.append(average_precision(ranked, rel, mode=map_mode))
        for k in ks:
            p, r = precision_recall_at_k(ranked, rel, k)
            prec_at[k].append(p)
            rec_at[k].append(r)
        relset = set(int(x) for x in rel)
        hitcum = np.cumsum([1 if int(x) in relset else 0 for x in ranked])
        ranks = np.arange(1, len(ranked) + 1)
        pad = np.full(max_len, hitcum[-1] if len(ranked) else 0)
        pad[: len(ranked)] = hitcum
        rows_p.append(np.concatenate([hitcum / ranks,
                                      np.repeat(np.nan, max_len - len(ranked))]))
        rows_r.append(pad / max(len(relset), 1))
    curve = []
    if max_len:
        mean_p = np.nanmean(np.vstack(rows_p), axis=0)
        mean_r = np.vstack(rows_r).mean(axis=0)
        curve = [(float(r), float(p)) for r, p in zip(mean_r, mean_p)]
    return MetricsReport(
        map=float(np.mean(aps)) if aps else 0.0,
        precision_at={k: float(np.mean(v)) for k, v in prec_at.items()},
        recall_at={k: float(np.mean(v)) for k, v in rec_at.items()},
        pr_curve=curve,
    )


def save_pr_csv(report: MetricsReport, path) -> None:
    with open(path, "w") as f:
        f.write("recall,precision\n")
        for r, p in report.pr_curve:
            f.write(f"{r},{p}\n")


def run_queries(queries: Dataset, model: HashModel, dataset: Dataset, K: int,
                hyper: HyperParams, pool: QueryPool | None = None,
                threads: int = 1) -> tuple[list[np.ndarray], list[QueryRecord]]:
    """Rank every query in pool or full-scan mode. Results are independent
    of the thread count: queries are partitioned into fixed chunks whose
    integer rankings are concatenated in query order."""

    def one(j: int):
        q = queries.features[:, j].astype(np.float64)
        if pool is not None:
            return online_query(q, model, pool, dataset, K, hyper)
        return full_scan_query(q, model, dataset, K)

    if threads > 1 and queries.n > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, range(queries.n)))
    else:
        results = [one(j) for j in range(queries.n)]
    return [r[0] for r in results], [r[1] for r in results]


def _timed(fn, repetitions: int = 3) -> tuple[float, object]:
    """Median wall time over `repetitions` monotonic-clock runs after one
    discarded warm-up pass."""
    fn()
    times = []
    out = None
    for _ in range(repetitions):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)), out


def summarize_records(records: list[QueryRecord]) -> dict:
    if not records:
        return {}
    return {
        "queries": len(records),
        "centers_scanned": int(records[0].centers_scanned),
        "candidates_encoded_max": int(max(r.candidates_encoded for r in records)),
        "candidates_encoded_total": int(sum(r.candidates_encoded for r in records)),
        "codes_compared_max": int(max(r.codes_compared for r in records)),
        "codes_compared_total": int(sum(r.codes_compared for r in records)),
        "truncated_queries": int(sum(r.truncated for r in records)),
    }


def bench_compare(model: HashModel, pool: QueryPool, dataset: Dataset,
                  queries: Dataset, K: int, hyper: HyperParams,
                  gt: GroundTruth | None = None, map_mode: str = "full",
                  threads: int = 1, repetitions: int = 3,
                  ) -> tuple[MetricsReport, MetricsReport]:
    """Run the query set through both paths against the same ground truth.
    Wall times are medians over `repetitions` runs with a warm-up pass
    discarded; accuracy and op counts come from the timed rankings."""
    if gt is None:
        gt = build_ground_truth(queries, dataset)
    pool_secs, (pool_ranks, pool_recs) = _timed(
        lambda: run_queries(queries, model, dataset, K, hyper, pool=pool,
                            threads=threads), repetitions)
    full_secs, (full_ranks, full_recs) = _timed(
        lambda: run_queries(queries, model, dataset, K, hyper, pool=None,
                            threads=threads), repetitions)
    pool_report = evaluate_rankings(pool_ranks, gt, map_mode=map_mode)
    full_report = evaluate_rankings(full_ranks, gt, map_mode=map_mode)
    nq = max(queries.n, 1)
    pool_report.timing = {"query_secs_total": pool_secs,
                          "query_secs_per_query": pool_secs / nq}
    full_report.timing = {"query_secs_total": full_secs,
                          "query_secs_per_query": full_secs / nq}
    pool_report.op_counts = summarize_records(pool_recs)
    full_report.op_counts = summarize_records(full_recs)
    return pool_report, full_report
