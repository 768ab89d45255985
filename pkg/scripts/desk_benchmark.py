#!/usr/bin/env python3
"""End-to-end desk-scale benchmark: synthesize data, stream-train, then
compare pool-mode and full-rebuild queries on accuracy, op counts and wall
time, with the untrained random-projection baseline as the accuracy floor.

Runs in a couple of minutes on two cores:

    python scripts/desk_benchmark.py --out runs/desk
"""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from foh.cli import train_run
from foh.config import RunConfig
from foh.data import SyntheticSpec, gen_synthetic, save_dataset
from foh.evaluation import (bench_compare, build_ground_truth,
                            evaluate_rankings, lsh_baseline, run_queries)
from foh.hashing import load_model
from foh.pool import load_pool


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--n", type=int, default=20_000)
    ap.add_argument("--queries", type=int, default=1_000)
    ap.add_argument("--bits", type=int, default=32)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--eval-k", type=int, default=1_000)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = SyntheticSpec(n_clusters=10, dim=32, n=args.n + args.queries,
                         labels_per_sample=(1, 2), cluster_std=1.5,
                         seed=args.seed)
    ds = gen_synthetic(spec)
    base = ds.take(np.arange(args.n))
    queries = ds.take(np.arange(args.n, ds.n))
    save_dataset(base, out / "base.fohd")

    cfg = RunConfig(dataset=str(out / "base.fohd"), out=str(out / "run"),
                    bits=args.bits, batch_size=2_000, seed=args.seed,
                    u=500, v=500, beta=10, eval_k=args.eval_k)
    prov = {f: "default" for f in cfg.__dataclass_fields__}

    with threadpool_limits(limits=1):
        t0 = time.perf_counter()
        train_run(cfg, prov, log=lambda *a: None)
        train_secs = time.perf_counter() - t0
        model = load_model(out / "run" / "model.fohm")
        pool = load_pool(out / "run" / "pool.fohp")
        hyper = cfg.hyper()
        gt = build_ground_truth(queries, base)

        pool_rep, full_rep = bench_compare(model, pool, base, queries,
                                           args.eval_k, hyper, gt=gt)
        lsh_ranks, _ = run_queries(queries, lsh_baseline(32, args.bits,
                                                         seed=args.seed, c=10),
                                   base, args.eval_k, hyper)
        lsh_rep = evaluate_rankings(lsh_ranks, gt)

    rows = [
        ("trained / pool", pool_rep.map,
         pool_rep.timing["query_secs_per_query"] * 1e3,
         pool_rep.op_counts["codes_compared_max"]),
        ("trained / full rebuild", full_rep.map,
         full_rep.timing["query_secs_per_query"] * 1e3,
         full_rep.op_counts["codes_compared_max"]),
        ("random projections / full", lsh_rep.map, float("nan"), base.n),
    ]
    print(f"\nbase={base.n} queries={queries.n} bits={args.bits} "
          f"train={train_secs:.1f}s")
    print(f"{'method':28s} {'mAP@' + str(args.eval_k):>10s} "
          f"{'ms/query':>9s} {'codes compared':>15s}")
    for name, m, ms, codes in rows:
        ms_s = f"{ms:9.2f}" if np.isfinite(ms) else "        -"
        print(f"{name:28s} {m:10.4f} {ms_s} {codes:15d}")
    speedup = (full_rep.timing["query_secs_per_query"]
               / pool_rep.timing["query_secs_per_query"])
    print(f"\npool-mode speedup over full rebuild: {speedup:.1f}x")
    (out / "summary.json").write_text(json.dumps({
        "train_secs": train_secs,
        "pool": pool_rep.to_json_dict(),
        "full": full_rep.to_json_dict(),
        "lsh_map": lsh_rep.map,
        "speedup": speedup,
    }, indent=2) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
