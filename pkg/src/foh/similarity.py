"""Pairwise supervision targets from label bitsets.

Three modes produce a stream-vs-existing target matrix in [-1, 1] before
balancing:

* ``multi``  - graded overlap: the average of |a&b|/|a| and |a&b|/|b|,
  affine-mapped from [0, 1] to [-1, 1] so that disjoint label sets push
  codes maximally apart, consistent with the single-label convention.
* ``single`` - exact-match +1/-1; every sample must carry exactly one label.
* ``binary`` - the traditional multi-label rule: +1 when the sets share at
  least one label, else -1 (ablation comparator).

Balancing then scales positive entries by eta_s and non-positive entries by
eta_d to counteract target sparsity; the trainer uses k times the result as
the inner-product target.
"""

from __future__ import annotations

import numpy as np

from .hashing import HyperParams

MODES = ("multi", "single", "binary")


def pair_similarity_multilabel(l_i: np.ndarray, l_j: np.ndarray) -> float:
    """Graded similarity in [0, 1] between two label bitsets.

    Averages the shared-label fraction from each side's point of view;
    an empty set on either side yields 0.
    """
    l_i = np.asarray(l_i, dtype=bool)
    l_j = np.asarray(l_j, dtype=bool)
    ni, nj = int(l_i.sum()), int(l_j.sum())
    if ni == 0 or nj == 0:
        return 0.0
    inter = int((l_i & l_j).sum())
    return 0.5 * (inter / ni + inter / nj)


def pair_similarity_single(l_i: np.ndarray, l_j: np.ndarray) -> int:
    """+1 when two single-label samples carry the same label, else -1."""
    l_i = np.asarray(l_i, dtype=bool)
    l_j = np.asarray(l_j, dtype=bool)
    if l_i.sum() != 1 or l_j.sum() != 1:
        raise ValueError("not single-label: each bitset must have exactly one set bit")
    return 1 if np.array_equal(l_i, l_j) else -1


def _check_single_label(L: np.ndarray, name: str) -> None:
    counts = L.sum(axis=0)
    if L.shape[1] and not np.all(counts == 1):
        bad = int(np.flatnonzero(counts != 1)[0])
        raise ValueError(f"not single-label: {name} sample {bad} has "
                         f"{int(counts[bad])} set bits")


def raw_similarity(L_s: np.ndarray, L_e: np.ndarray, mode: str) -> np.ndarray:
    """Unbalanced target in [-1, 1], shape (n_s, n_e)."""
    if mode not in MODES:
        raise ValueError(f"unknown similarity mode {mode!r}")
    if L_s.shape[0] != L_e.shape[0]:
        raise ValueError(f"category count mismatch: {L_s.shape[0]} vs {L_e.shape[0]}")
    Ls = L_s.astype(np.float64)
    Le = L_e.astype(np.float64)
    inter = Ls.T @ Le  # (n_s, n_e) shared-label counts
    if mode == "single":
        _check_single_label(L_s, "stream")
        _check_single_label(L_e, "existing")
        return np.where(inter > 0, 1.0, -1.0)
    if mode == "binary":
        return np.where(inter > 0, 1.0, -1.0)
    cs = Ls.sum(axis=0)  # labels per stream sample
    ce = Le.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = 0.5 * (inter / cs[:, None] + inter / ce[None, :])
    s[~np.isfinite(s)] = 0.0  # empty label sets
    return 2.0 * s - 1.0


def build_balanced_target(L_s: np.ndarray, L_e: np.ndarray,
                          hyper: HyperParams, mode: str = "multi") -> np.ndarray:
    """Balanced training target: eta_s scales entries with positive mapped
    similarity, eta_d the rest. Shape (n_s, n_e), float64."""
    s = raw_similarity(L_s, L_e, mode)
    return np.where(s > 0, hyper.eta_s * s, hyper.eta_d * s)


def pick_mode(labels: np.ndarray) -> str:
    """'single' when every sample has exactly one label, else 'multi'."""
    return "single" if labels.size == 0 or np.all(labels.sum(axis=0) == 1) else "multi"
