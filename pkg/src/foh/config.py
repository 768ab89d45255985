"""Run configuration: flat key=value files, flag overrides, provenance.

Every key has a default; unknown keys are rejected so config files stay
diffable and manifests stay exact. `lambda` is accepted in files and flags
for the projection regularizer (stored as `lam`).
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .hashing import HyperParams

_BOOL_TRUE = ("1", "true", "yes", "on")
_BOOL_FALSE = ("0", "false", "no", "off")


@dataclass
class RunConfig:
    # paths
    dataset: str = ""
    queries: str = ""
    out: str = "runs/out"
    # model
    bits: int = 32
    batch_size: int = 2000
    seed: int = 42
    # objective weights
    sigma: float = 0.8
    theta: float = 1.2
    mu: float = 0.5
    lam: float = 0.6
    tau: float = 0.6
    eta_s: float = 1.2
    eta_d: float = 0.2
    # pool
    u: int = 500
    v: int = 500
    beta: int = 10
    r: int = 0
    refresh_every: int = 1
    # optimizer
    max_alt_iters: int = 5
    tol: float = 1e-4
    existing_cap: int = 0
    paper_sign_z: bool = False
    # supervision / evaluation
    sim_mode: str = "auto"  # auto | multi | single | binary
    gt_rule: str = "share_any_label"
    eval_k: int = 100
    map_mode: str = "full"  # full | truncated
    bench_reps: int = 3
    # ablation switches
    no_pool: bool = False
    no_label_projection: bool = False
    binary_similarity: bool = False
    # execution
    threads: int = 1
    mode: str = "pool"  # pool | full
    dump_similarity: bool = False
    # synthetic generation
    synth_clusters: int = 10
    synth_dim: int = 32
    synth_n: int = 20000
    synth_queries: int = 1000
    synth_labels_min: int = 1
    synth_labels_max: int = 3
    synth_std: float = 1.0

    def hyper(self) -> HyperParams:
        theta = 0.0 if self.no_label_projection else self.theta
        mu = 0.0 if self.no_label_projection else self.mu
        return HyperParams(sigma=self.sigma, theta=theta, mu=mu, lam=self.lam,
                           tau=self.tau, eta_s=self.eta_s, eta_d=self.eta_d,
                           u=self.u, v=self.v, beta=self.beta, r=self.r,
                           refresh_every=self.refresh_every,
                           max_alt_iters=self.max_alt_iters, tol=self.tol,
                           seed=self.seed, existing_cap=self.existing_cap,
                           paper_sign_z=self.paper_sign_z)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_ALIASES = {"lambda": "lam", "k": "bits"}


class ConfigError(ValueError):
    pass


def _coerce(key: str, raw: str):
    ftype = _FIELDS[key].type
    raw = raw.strip()
    try:
        if ftype == "bool":
            low = raw.lower()
            if low in _BOOL_TRUE:
                return True
            if low in _BOOL_FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if ftype == "int":
            return int(raw)
        if ftype == "float":
            return float(raw)
        return raw
    except ValueError as e:
        raise ConfigError(f"cannot parse value for {key!r}: {e}") from None


def _canonical(key: str) -> str:
    key = key.strip()
    key = _ALIASES.get(key, key)
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    return key


def _validate(cfg: RunConfig) -> None:
    if cfg.beta > cfg.u:
        raise ConfigError(f"beta exceeds u ({cfg.beta} > {cfg.u})")
    if cfg.sim_mode not in ("auto", "multi", "single", "binary"):
        raise ConfigError(f"unknown sim_mode {cfg.sim_mode!r}")
    if cfg.gt_rule not in ("share_any_label", "same_single_label"):
        raise ConfigError(f"unknown gt_rule {cfg.gt_rule!r}")
    if cfg.map_mode not in ("full", "truncated"):
        raise ConfigError(f"unknown map_mode {cfg.map_mode!r}")
    if cfg.mode not in ("pool", "full"):
        raise ConfigError(f"unknown mode {cfg.mode!r}")
    if cfg.bits < 1:
        raise ConfigError("bits must be >= 1")
    if cfg.eval_k < 1:
        raise ConfigError("eval_k must be >= 1")
    try:
        cfg.hyper()
    except ValueError as e:
        raise ConfigError(str(e)) from None


def parse_config(path: str | Path | None = None,
                 overrides: dict[str, str] | None = None,
                 ) -> tuple[RunConfig, dict[str, str]]:
    """Resolve defaults <- file <- flag overrides. Returns the config and a
    per-key provenance map ('default' | 'file' | 'flag')."""
    cfg = RunConfig()
    provenance = {f.name: "default" for f in fields(RunConfig)}
    if path is not None:
        text = Path(path).read_text()
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            key = _canonical(key)
            setattr(cfg, key, _coerce(key, val))
            provenance[key] = "file"
    for key, val in (overrides or {}).items():
        key = _canonical(key)
        setattr(cfg, key, _coerce(key, str(val)))
        provenance[key] = "flag"
    _validate(cfg)
    return cfg, provenance


def config_snapshot(cfg: RunConfig, provenance: dict[str, str]) -> dict:
    return {f.name: {"value": getattr(cfg, f.name), "source": provenance[f.name]}
            for f in fields(RunConfig)}
