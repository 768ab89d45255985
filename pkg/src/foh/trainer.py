"""Stage objective and the four-step alternating optimizer.

Each stream stage minimizes, over W, P and the binary codes of the stream
batch (B_s) and the accumulated data (B_e):

    ||B_s^T B_e - k*S||_F^2  +  sigma ||W^T X_s - B_s||_F^2
      + theta ||B_s - P L_s||_F^2  +  mu ||B_e - P L_e||_F^2
      + lam ||W||_F^2  +  tau ||P||_F^2

with S the balanced similarity target. W and P have closed-form ridge
solutions; B_e takes one sign sweep against a linearized surrogate; B_s is
optimized bit-row by bit-row (discrete cyclic coordinate descent). All four
steps are deterministic given their inputs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .hashing import CodeMatrix, HashModel, HyperParams, sgn
from .similarity import build_balanced_target


@dataclass
class TrainState:
    """Codes and trace carried across stages; arrival order is preserved."""

    bs: CodeMatrix              # optimized codes of the latest stream batch
    be: CodeMatrix              # codes of all earlier batches
    objective_trace: list[float] = field(default_factory=list)
    stage: int = 0

    @classmethod
    def fresh(cls, k: int) -> "TrainState":
        return cls(bs=CodeMatrix.empty(k), be=CodeMatrix.empty(k))

    def all_codes(self) -> CodeMatrix:
        """Accumulated codes [B_e, B_s] in arrival order."""
        return self.be.concat(self.bs)


def objective(model: HashModel, bs: CodeMatrix, be: CodeMatrix,
              X_s: np.ndarray, L_s: np.ndarray, L_e: np.ndarray,
              S: np.ndarray) -> float:
    """Full stage objective. X_s must already be centered."""
    h = model.hyper
    k = model.k
    Bs = bs.to_signs().astype(np.float64)
    Be = be.to_signs().astype(np.float64)
    if S.shape != (bs.n, be.n):
        raise ValueError(f"target shape {S.shape} != ({bs.n}, {be.n})")
    val = np.linalg.norm(Bs.T @ Be - k * S) ** 2
    val += h.sigma * np.linalg.norm(model.W.T @ X_s - Bs) ** 2
    val += h.theta * np.linalg.norm(Bs - model.P @ L_s) ** 2
    val += h.mu * np.linalg.norm(Be - model.P @ L_e) ** 2
    val += h.lam * np.linalg.norm(model.W) ** 2
    val += h.tau * np.linalg.norm(model.P) ** 2
    return float(val)


def w_step(X_s: np.ndarray, bs: CodeMatrix, hyper: HyperParams) -> np.ndarray:
    """Ridge minimizer of sigma||W^T X - B_s||^2 + lam||W||^2:
    W = (sigma X X^T + lam I)^{-1} sigma X B_s^T, solved via SPD factorization."""
    Bs = bs.to_signs().astype(np.float64)
    d = X_s.shape[0]
    A = hyper.sigma * (X_s @ X_s.T) + hyper.lam * np.eye(d)
    rhs = hyper.sigma * (X_s @ Bs.T)
    return scipy.linalg.solve(A, rhs, assume_a="pos")


def p_step(bs: CodeMatrix, be: CodeMatrix, L_s: np.ndarray, L_e: np.ndarray,
           hyper: HyperParams) -> np.ndarray:
    """Exact minimizer of the three P-dependent terms:
    P = (mu B_e L_e^T + theta B_s L_s^T)(theta L_s L_s^T + mu L_e L_e^T + tau I)^{-1}.
    Zero-width existing data (m_t = 0) drops the mu terms naturally."""
    Bs = bs.to_signs().astype(np.float64)
    Be = be.to_signs().astype(np.float64)
    Ls = L_s.astype(np.float64)
    Le = L_e.astype(np.float64)
    c = Ls.shape[0]
    A = hyper.theta * (Ls @ Ls.T) + hyper.mu * (Le @ Le.T) + hyper.tau * np.eye(c)
    rhs = hyper.mu * (Be @ Le.T) + hyper.theta * (Bs @ Ls.T)
    return scipy.linalg.solve(A, rhs.T, assume_a="pos").T


def be_step(bs: CodeMatrix, be_old: CodeMatrix, S: np.ndarray, P: np.ndarray,
            L_e: np.ndarray, hyper: HyperParams) -> CodeMatrix:
    """One sign sweep on the accumulated codes:
    B_e <- sgn(2Z - B_s B_s^T B_e_old) with Z = k B_s S + mu P L_e.

    The +mu follows from expanding the loss; paper_sign_z switches to the
    printed -mu variant for comparison runs.
    """
    if be_old.n < 1:
        raise ValueError("be_step needs at least one accumulated code")
    k = bs.k
    Bs = bs.to_signs().astype(np.float64)
    Be = be_old.to_signs().astype(np.float64)
    mu_term = hyper.mu * (P @ L_e.astype(np.float64))
    Z = k * (Bs @ S) + (-mu_term if hyper.paper_sign_z else mu_term)
    return CodeMatrix.from_signs(sgn(2.0 * Z - (Bs @ Bs.T) @ Be))


def bs_step(bs_old: CodeMatrix, be: CodeMatrix, S: np.ndarray, W: np.ndarray,
            X_s: np.ndarray, P: np.ndarray, L_s: np.ndarray,
            hyper: HyperParams, g_override: np.ndarray | None = None) -> CodeMatrix:
    """Discrete cyclic coordinate descent over bit rows of the stream codes.

    Row i is set to sgn(g_i - b_e_i B_e'^T B_s') where the primed matrices
    exclude row i and carry the values current at that point of the sweep;
    G = k B_e S^T + sigma W^T X_s + theta P L_s unless overridden. Sweeps
    repeat until no row changes, so every returned row is optimal for its
    row subproblem given the others (each flip strictly decreases the row
    objective and ties settle at +1, so termination is guaranteed).
    """
    k = bs_old.k
    Bs = bs_old.to_signs().astype(np.float64)
    Be = be.to_signs().astype(np.float64)
    if g_override is not None:
        G = np.asarray(g_override, dtype=np.float64)
        if G.shape != Bs.shape:
            raise ValueError(f"G override shape {G.shape} != {Bs.shape}")
    else:
        G = (k * (Be @ S.T) + hyper.sigma * (W.T @ X_s)
             + hyper.theta * (P @ L_s.astype(np.float64)))
    R = Be @ Be.T  # (k, k), fixed during the sweeps
    for _ in range(max(4 * k, 64)):
        changed = False
        for i in range(k):
            cross = R[i] @ Bs - R[i, i] * Bs[i]
            row = sgn(G[i] - cross)
            if not np.array_equal(row, Bs[i]):
                Bs[i] = row
                changed = True
        if not changed:
            break
    return CodeMatrix.from_signs(Bs.astype(np.int8))


@dataclass
class StageReport:
    stage: int
    objective_trace: list[float]
    iter_secs: list[float]
    existing_used: int  # accumulated columns that entered this stage's objective


def train_stage(model: HashModel, state: TrainState, X_s: np.ndarray,
                L_s: np.ndarray, L_e: np.ndarray, sim_mode: str = "multi",
                ) -> tuple[HashModel, TrainState, StageReport]:
    """Run one stream stage: absorb the previous batch into the accumulated
    codes, build the balanced target, then alternate the four steps until
    the relative objective change falls below tol or max_alt_iters is hit.

    X_s and L_e are raw; centering uses model.center. L_e must align with
    the accumulated codes in arrival order. At stage 1 the projection is
    (re)initialized with seeded standard-normal entries and the first
    bit-sweep uses a seeded standard-normal auxiliary in place of G.
    """
    hyper = model.hyper
    t = state.stage + 1
    k = model.k
    Xc = np.asarray(X_s, dtype=np.float64) - model.center[:, None]
    n_t = Xc.shape[1]

    be = state.all_codes() if state.stage >= 1 else CodeMatrix.empty(k)
    if be.n != L_e.shape[1]:
        raise ValueError(f"existing labels ({L_e.shape[1]}) do not match "
                         f"accumulated codes ({be.n})")

    if t == 1:
        W = np.random.default_rng(hyper.seed).standard_normal((model.d, k))
    else:
        W = model.W.copy()
    P = model.P.copy()

    sel = None
    if hyper.existing_cap and be.n > hyper.existing_cap:
        rng = np.random.default_rng([hyper.seed, t])
        sel = np.sort(rng.choice(be.n, size=hyper.existing_cap, replace=False))
    be_used = be.take(sel) if sel is not None else be
    Le_used = L_e[:, sel] if sel is not None else L_e
    m_used = be_used.n

    S = build_balanced_target(L_s, Le_used, hyper, sim_mode)
    Bs = CodeMatrix.from_signs(sgn(W.T @ Xc))

    work = replace(model, W=W, P=P)
    trace = [objective(work, Bs, be_used, Xc, L_s, Le_used, S)]
    iter_secs: list[float] = []
    for it in range(1, hyper.max_alt_iters + 1):
        t0 = time.perf_counter()
        W = w_step(Xc, Bs, hyper)
        P = p_step(Bs, be_used, L_s, Le_used, hyper)
        if m_used > 0:
            be_used = be_step(Bs, be_used, S, P, Le_used, hyper)
        g_override = None
        if t == 1 and it == 1:
            g_override = np.random.default_rng([hyper.seed, 1]).standard_normal((k, n_t))
        Bs = bs_step(Bs, be_used, S, W, Xc, P, L_s, hyper, g_override)
        work = replace(model, W=W, P=P)
        val = objective(work, Bs, be_used, Xc, L_s, Le_used, S)
        trace.append(val)
        iter_secs.append(time.perf_counter() - t0)
        prev = trace[-2]
        if abs(prev - val) / max(abs(prev), 1e-12) < hyper.tol:
            break

    if sel is not None:
        words = be.words.copy()
        words[sel] = be_used.words
        be = CodeMatrix(k=k, words=words)
    else:
        be = be_used

    new_state = TrainState(bs=Bs, be=be, objective_trace=trace, stage=t)
    report = StageReport(stage=t, objective_trace=trace, iter_secs=iter_secs,
                         existing_used=m_used)
    return work, new_state, report
