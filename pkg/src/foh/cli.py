"""Command-line pipeline: synth, ingest, train, query, eval, bench,
ablate, sweep-refresh.

Every run resolves a RunConfig (defaults <- config file <- flags), writes
its artifacts under the output directory, and records a manifest with the
config snapshot, provenance and artifact hashes. BLAS is pinned to one
thread for reproducibility; --threads parallelizes the per-query scan loop
only, which cannot change results."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, config_snapshot, parse_config
from .data import (Dataset, StreamBatcher, SyntheticSpec, gen_synthetic,
                   ingest, save_dataset)
from .evaluation import (DEFAULT_PR_KS, bench_compare, build_ground_truth,
                         evaluate_rankings, run_queries, save_pr_csv,
                         summarize_records)
from .hashing import (CodeMatrix, FormatError, encode, load_model, save_codes,
                      save_model, zero_model)
from .pool import (StreamState, init_pool, load_pool, neighbor_update,
                   reservoir_refresh, save_pool)
from .similarity import build_balanced_target, pick_mode
from .trainer import TrainState, train_stage


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outdir: Path, subcommand: str, cfg: RunConfig,
                    provenance: dict, artifacts: list[Path],
                    inputs: list[Path] = ()) -> None:
    manifest = {
        "tool": "foh",
        "version": __version__,
        "subcommand": subcommand,
        "seed": cfg.seed,
        "config": config_snapshot(cfg, provenance),
        "inputs": {str(p): _sha256(Path(p)) for p in inputs if Path(p).is_file()},
        "artifacts": {p.name: _sha256(p) for p in artifacts if p.is_file()},
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def resolve_sim_mode(cfg: RunConfig, labels: np.ndarray) -> str:
    if cfg.binary_similarity:
        return "binary"
    if cfg.sim_mode == "auto":
        return pick_mode(labels)
    return cfg.sim_mode


def _load_queries(path: str) -> Dataset:
    """Query files may be a dataset container, a combined CSV, or a plain
    CSV of feature rows (labels default to zero)."""
    try:
        return ingest(path)
    except (FormatError, ValueError):
        feats = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
        return Dataset(features=feats.T,
                       labels=np.zeros((1, feats.shape[0]), dtype=np.uint8))


# ---------------------------------------------------------------------------
# subcommand pipelines


def synth_run(cfg: RunConfig, provenance: dict) -> Path:
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    spec = SyntheticSpec(
        n_clusters=cfg.synth_clusters, dim=cfg.synth_dim,
        n=cfg.synth_n + cfg.synth_queries,
        labels_per_sample=(cfg.synth_labels_min, cfg.synth_labels_max),
        cluster_std=cfg.synth_std, seed=cfg.seed)
    ds = gen_synthetic(spec)
    base = ds.take(np.arange(cfg.synth_n))
    queries = ds.take(np.arange(cfg.synth_n, ds.n))
    save_dataset(base, outdir / "base.fohd")
    save_dataset(queries, outdir / "queries.fohd")
    _write_manifest(outdir, "synth", cfg, provenance,
                    [outdir / "base.fohd", outdir / "queries.fohd"])
    return outdir


def ingest_run(cfg: RunConfig, provenance: dict, features: str,
               labels: str | None) -> Path:
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    ds = ingest(features, labels)
    out = outdir / "dataset.fohd"
    save_dataset(ds, out)
    inputs = [Path(features)] + ([Path(labels)] if labels else [])
    _write_manifest(outdir, "ingest", cfg, provenance, [out], inputs)
    print(f"ingested n={ds.n} d={ds.d} c={ds.c} -> {out}")
    return out


def train_run(cfg: RunConfig, provenance: dict, log=print) -> Path:
    if not cfg.dataset:
        raise ConfigError("train requires a dataset path")
    ds = ingest(cfg.dataset)
    hyper = cfg.hyper()
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    sim_mode = resolve_sim_mode(cfg, ds.labels)
    batcher = StreamBatcher(ds, cfg.batch_size, seed=cfg.seed)

    model = zero_model(ds.d, cfg.bits, ds.c, hyper)
    state = TrainState.fresh(cfg.bits)
    stream = StreamState(ids=np.empty(0, dtype=np.int64),
                         codes=CodeMatrix.empty(cfg.bits))
    pool = None
    labels_acc = np.zeros((ds.c, 0), dtype=np.uint8)
    feat_sum = np.zeros(ds.d, dtype=np.float64)
    seen = 0
    train_secs = 0.0
    update_secs = 0.0

    with open(outdir / "train_log.jsonl", "w") as logf:
        for batch in batcher:
            seen += batch.features.shape[1]
            feat_sum += batch.features.sum(axis=1, dtype=np.float64)
            model = replace(model, center=feat_sum / seen)

            t0 = time.perf_counter()
            model, state, report = train_stage(
                model, state, batch.features, batch.labels, labels_acc, sim_mode)
            train_secs += time.perf_counter() - t0

            for i, obj in enumerate(report.objective_trace):
                secs = report.iter_secs[i - 1] if i >= 1 else 0.0
                log(f"stage={report.stage} iter={i} objective={obj:.6f} secs={secs:.4f}")
                logf.write(json.dumps({"stage": report.stage, "iter": i,
                                       "objective": obj, "secs": secs}) + "\n")
            if cfg.dump_similarity:
                S = build_balanced_target(batch.labels, labels_acc, hyper, sim_mode)
                np.savetxt(outdir / f"similarity_stage{report.stage}.csv", S,
                           delimiter=",")

            stream = StreamState(ids=np.concatenate([stream.ids, batch.ids]),
                                 codes=state.all_codes(), stage=batch.stage)
            labels_acc = np.concatenate([labels_acc, batch.labels], axis=1)

            if not cfg.no_pool:
                t0 = time.perf_counter()
                if pool is None:
                    pool = init_pool(batch.features, batch.ids, model, hyper)
                else:
                    neighbor_update(pool, model, batch.features, batch.ids,
                                    encode(model, batch.features), ds)
                if batch.stage % hyper.refresh_every == 0:
                    reservoir_refresh(pool, stream, ds, model, hyper)
                update_secs += time.perf_counter() - t0

    dead = model.warn_dead_bits()
    if dead:
        print(f"warning: uninformative hash bits (all-zero projection columns): "
              f"{dead}", file=sys.stderr)
    save_model(model, outdir / "model.fohm")
    order = np.argsort(stream.ids, kind="stable")
    save_codes(stream.codes.take(order), outdir / "codes.fohc")
    artifacts = [outdir / "model.fohm", outdir / "codes.fohc"]
    if pool is not None:
        save_pool(pool, outdir / "pool.fohp")
        artifacts.append(outdir / "pool.fohp")
    (outdir / "run_timing.json").write_text(json.dumps(
        {"train_secs": train_secs, "update_secs": update_secs}, indent=2) + "\n")
    _write_manifest(outdir, "train", cfg, provenance, artifacts,
                    [Path(cfg.dataset)])
    return outdir


def _load_run(cfg: RunConfig, need_pool: bool):
    outdir = Path(cfg.out)
    model_path = outdir / "model.fohm"
    if not model_path.is_file():
        raise FileNotFoundError(f"missing artifact {model_path}; run train first")
    model = load_model(model_path)
    pool = None
    if need_pool:
        pool_path = outdir / "pool.fohp"
        if not pool_path.is_file():
            raise FileNotFoundError(
                f"missing artifact {pool_path}; train without no_pool first")
        pool = load_pool(pool_path)
    return outdir, model, pool


def query_run(cfg: RunConfig, provenance: dict) -> Path:
    if not cfg.dataset or not cfg.queries:
        raise ConfigError("query requires dataset and queries paths")
    outdir, model, pool = _load_run(cfg, need_pool=cfg.mode == "pool")
    ds = ingest(cfg.dataset)
    queries = _load_queries(cfg.queries)
    hyper = cfg.hyper()
    rankings, records = run_queries(queries, model, ds, cfg.eval_k, hyper,
                                    pool=pool if cfg.mode == "pool" else None,
                                    threads=cfg.threads)
    out = outdir / f"results_{cfg.mode}.json"
    payload = {
        "mode": cfg.mode,
        "k": cfg.eval_k,
        "results": [{"ids": [int(x) for x in ids],
                     "op_counts": {"centers_scanned": rec.centers_scanned,
                                   "candidates_encoded": rec.candidates_encoded,
                                   "codes_compared": rec.codes_compared,
                                   "truncated": rec.truncated}}
                    for ids, rec in zip(rankings, records)],
    }
    out.write_text(json.dumps(payload, indent=2) + "\n")
    # mode-independent ranking file: byte-comparable across query paths
    ranking = outdir / f"ranking_{cfg.mode}.csv"
    with open(ranking, "w") as f:
        for ids in rankings:
            f.write(",".join(str(int(x)) for x in ids) + "\n")
    _write_manifest(outdir, "query", cfg, provenance, [out, ranking],
                    [Path(cfg.dataset), Path(cfg.queries)])
    return out


def eval_run(cfg: RunConfig, provenance: dict) -> Path:
    if not cfg.dataset or not cfg.queries:
        raise ConfigError("eval requires dataset and queries paths")
    outdir, model, pool = _load_run(cfg, need_pool=cfg.mode == "pool")
    ds = ingest(cfg.dataset)
    queries = ingest(cfg.queries)
    hyper = cfg.hyper()
    gt = build_ground_truth(queries, ds, cfg.gt_rule)
    t0 = time.perf_counter()
    rankings, records = run_queries(queries, model, ds, cfg.eval_k, hyper,
                                    pool=pool if cfg.mode == "pool" else None,
                                    threads=cfg.threads)
    query_secs = time.perf_counter() - t0
    report = evaluate_rankings(rankings, gt, ks=set(DEFAULT_PR_KS) | {cfg.eval_k},
                               map_mode=cfg.map_mode)
    report.timing = {"query_secs_total": query_secs}
    timing_file = outdir / "run_timing.json"
    if timing_file.is_file():
        report.timing.update(json.loads(timing_file.read_text()))
    report.op_counts = summarize_records(records)
    out = outdir / f"metrics_{cfg.mode}.json"
    out.write_text(json.dumps(report.to_json_dict(), indent=2) + "\n")
    save_pr_csv(report, outdir / f"pr_{cfg.mode}.csv")
    _write_manifest(outdir, "eval", cfg, provenance,
                    [out, outdir / f"pr_{cfg.mode}.csv"],
                    [Path(cfg.dataset), Path(cfg.queries)])
    return out


def bench_run(cfg: RunConfig, provenance: dict) -> Path:
    if not cfg.dataset or not cfg.queries:
        raise ConfigError("bench requires dataset and queries paths")
    outdir, model, pool = _load_run(cfg, need_pool=True)
    ds = ingest(cfg.dataset)
    queries = ingest(cfg.queries)
    hyper = cfg.hyper()
    gt = build_ground_truth(queries, ds, cfg.gt_rule)
    pool_rep, full_rep = bench_compare(model, pool, ds, queries, cfg.eval_k,
                                       hyper, gt=gt, map_mode=cfg.map_mode,
                                       threads=cfg.threads,
                                       repetitions=cfg.bench_reps)
    timing_file = outdir / "run_timing.json"
    if timing_file.is_file():
        shared = json.loads(timing_file.read_text())
        pool_rep.timing.update(shared)
        full_rep.timing.update(shared)
    out = outdir / "bench.json"
    out.write_text(json.dumps({"pool": pool_rep.to_json_dict(),
                               "full": full_rep.to_json_dict()}, indent=2) + "\n")
    _write_manifest(outdir, "bench", cfg, provenance, [out],
                    [Path(cfg.dataset), Path(cfg.queries)])
    return out


ABLATION_VARIANTS = ("foh", "foh-q", "foh-l", "foh-s")


def _variant_config(cfg: RunConfig, name: str) -> RunConfig:
    sub = replace(cfg, out=str(Path(cfg.out) / f"variant_{name.replace('-', '_')}"))
    if name == "foh-q":
        return replace(sub, no_pool=True, mode="full")
    if name == "foh-l":
        return replace(sub, no_label_projection=True)
    if name == "foh-s":
        return replace(sub, binary_similarity=True)
    return sub


def ablate_run(cfg: RunConfig, provenance: dict, variants=ABLATION_VARIANTS,
               log=print) -> Path:
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = {}
    for name in variants:
        if name not in ABLATION_VARIANTS:
            raise ConfigError(f"unknown ablation variant {name!r}")
        sub = _variant_config(cfg, name)
        train_run(sub, provenance, log=lambda *_: None)
        metrics_path = eval_run(sub, provenance)
        metrics = json.loads(metrics_path.read_text())
        summary[name] = {"map": metrics["map"], "mode": sub.mode,
                         "metrics": str(metrics_path)}
        log(f"variant={name} mode={sub.mode} map={metrics['map']:.4f}")
    out = outdir / "ablate.json"
    out.write_text(json.dumps(summary, indent=2) + "\n")
    _write_manifest(outdir, "ablate", cfg, provenance, [out], [Path(cfg.dataset)])
    return out


def sweep_refresh_run(cfg: RunConfig, provenance: dict, cadences=(1, 2, 3, 4, 5),
                      log=print) -> Path:
    outdir = Path(cfg.out)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = {}
    for cadence in cadences:
        sub = replace(cfg, refresh_every=int(cadence),
                      out=str(outdir / f"cadence_{cadence}"))
        train_run(sub, provenance, log=lambda *_: None)
        metrics_path = eval_run(sub, provenance)
        metrics = json.loads(metrics_path.read_text())
        summary[str(cadence)] = {"map": metrics["map"]}
        log(f"refresh_every={cadence} map={metrics['map']:.4f}")
    out = outdir / "sweep_refresh.json"
    out.write_text(json.dumps(summary, indent=2) + "\n")
    _write_manifest(outdir, "sweep-refresh", cfg, provenance, [out],
                    [Path(cfg.dataset)])
    return out


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="foh", description="streaming learned-hashing retrieval engine")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def add_common(p):
        p.add_argument("-c", "--config", help="key=value config file")
        for f in fields(RunConfig):
            flag = "--" + f.name.replace("_", "-")
            p.add_argument(flag, dest=f"cfg_{f.name}", metavar=f.name.upper())
        p.add_argument("--lambda", dest="cfg_lam2", metavar="LAM",
                       help="alias for --lam")

    for name, desc in [
        ("synth", "generate a synthetic base/query dataset pair"),
        ("train", "stream-train a model, codes and query pool"),
        ("query", "rank queries in pool or full mode"),
        ("eval", "compute retrieval metrics for one query mode"),
        ("bench", "time and score pool mode against full rebuild"),
        ("ablate", "train and score model variants"),
        ("sweep-refresh", "sweep the center refresh cadence"),
    ]:
        p = sub.add_parser(name, help=desc)
        add_common(p)
        if name == "ablate":
            p.add_argument("--variants",
                           help="comma list from: " + ",".join(ABLATION_VARIANTS))
            p.add_argument("--variant", help="run a single variant")

    p = sub.add_parser("ingest", help="validate and convert a dataset")
    add_common(p)
    p.add_argument("--features", help="feature CSV (d floats per line) or full container")
    p.add_argument("--labels", help="label CSV (c 0/1 ints per line)")
    p.add_argument("--input", help="binary container or combined CSV")
    return parser


def _collect_overrides(args) -> dict[str, str]:
    overrides = {}
    for key, val in vars(args).items():
        if key.startswith("cfg_") and val is not None:
            name = key[4:]
            overrides["lam" if name == "lam2" else name] = val
    return overrides


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        from threadpoolctl import threadpool_limits
        cfg, provenance = parse_config(args.config, _collect_overrides(args))
        if provenance["threads"] == "default" and os.environ.get("FOH_THREADS"):
            cfg = replace(cfg, threads=int(os.environ["FOH_THREADS"]))
        with threadpool_limits(limits=1):
            if args.subcommand == "synth":
                synth_run(cfg, provenance)
            elif args.subcommand == "ingest":
                feats = args.features or args.input
                if not feats:
                    raise ConfigError("ingest requires --features/--labels or --input")
                ingest_run(cfg, provenance, feats, args.labels)
            elif args.subcommand == "train":
                train_run(cfg, provenance)
            elif args.subcommand == "query":
                query_run(cfg, provenance)
            elif args.subcommand == "eval":
                eval_run(cfg, provenance)
            elif args.subcommand == "bench":
                bench_run(cfg, provenance)
            elif args.subcommand == "ablate":
                variants = ABLATION_VARIANTS
                if args.variants:
                    variants = tuple(v.strip() for v in args.variants.split(","))
                if args.variant:
                    variants = (args.variant.strip(),)
                ablate_run(cfg, provenance, variants)
            elif args.subcommand == "sweep-refresh":
                sweep_refresh_run(cfg, provenance)
        return 0
    except (ConfigError, FormatError, ValueError, OSError) as e:
        print(json.dumps({"error": type(e).__name__, "message": str(e)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
