"""Representation diagnostics: anisotropy, per-dimension contribution to
cosine similarity, confused-class groups, separability gap, 2D PCA export.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist

from .dataio import Dataset
from .encoder import MLPParams, encode_batch
from .errors import DegenerateTotal, DimensionMismatch, InsufficientClasses, MissingClass, RankDeficient
from .numeric import normalize_rows

SHARE_THRESHOLDS = (0.5, 0.8, 0.9)
TOP_K = (1, 2, 3)
# enumerate group selections exactly up to this many candidates, greedy beyond
EXACT_GROUP_LIMIT = 200_000


def _unit_rows(E):
    X = normalize_rows(E)
    if X.shape[0] < 2:
        raise DimensionMismatch("need at least two rows")
    return X


def anisotropy(E) -> float:
    """Mean cosine similarity over all unordered pairs of distinct rows.

    Uses cos = 1 - |x_i - x_j|^2 / 2 on unit rows, which is exact for
    identical rows (1) and for orthonormal ones (0).
    """
    X = _unit_rows(E)
    return float(np.mean(1.0 - 0.5 * pdist(X, "sqeuclidean")))


@dataclass
class DimContributionProfile:
    values: np.ndarray
    ranked: np.ndarray
    cumulative: np.ndarray
    top_k_share: dict[int, float]
    dims_to_share: dict[float, int]

    def to_dict(self):
        return {
            "values": self.values.tolist(),
            "ranked": self.ranked.tolist(),
            "top_k_share": {str(k): v for k, v in self.top_k_share.items()},
            "dims_to_share": {str(k): v for k, v in self.dims_to_share.items()},
        }


def dim_contribution(E) -> DimContributionProfile:
    """Split the mean pairwise cosine into per-coordinate terms.

    C_d is the mean over unordered pairs of x_id * x_jd on unit rows, so
    sum(C_d) equals the anisotropy. Ranking and shares use |C_d|.
    """
    X = _unit_rows(E)
    n = X.shape[0]
    col = X.sum(axis=0)
    values = (col * col - (X * X).sum(axis=0)) / (n * (n - 1))
    mag = np.abs(values)
    total = mag.sum()
    if total < 1e-12:
        raise DegenerateTotal("all per-dimension contributions vanish")
    ranked = np.argsort(-mag, kind="stable")
    cumulative = np.concatenate([[0.0], np.cumsum(mag[ranked]) / total])
    cumulative = np.maximum.accumulate(np.minimum(cumulative, 1.0))
    cumulative[-1] = 1.0
    d = X.shape[1]
    top = {k: float(cumulative[min(k, d)]) for k in TOP_K}
    to_share = {th: int(np.argmax(cumulative >= th - 1e-12)) for th in SHARE_THRESHOLDS}
    return DimContributionProfile(values, ranked, cumulative, top, to_share)


def class_mean_embeddings(encoder: MLPParams, dataset: Dataset) -> np.ndarray:
    R, _ = encode_batch(encoder, dataset.clips)
    return class_means(R, dataset.labels, dataset.class_count)


def class_means(R, labels, class_count) -> np.ndarray:
    counts = np.bincount(labels, minlength=class_count)
    missing = np.flatnonzero(counts == 0)
    if missing.size:
        raise MissingClass(f"classes absent from dataset: {missing.tolist()}")
    sums = np.zeros((class_count, R.shape[1]))
    np.add.at(sums, labels, R)
    return normalize_rows(sums / counts[:, None])


def within_between_gap(E, labels) -> float:
    """Mean within-class pairwise cosine minus mean between-class pairwise cosine."""
    X = _unit_rows(E)
    labels = np.asarray(labels)
    S = X @ X.T
    iu = np.triu_indices(X.shape[0], 1)
    same = labels[iu[0]] == labels[iu[1]]
    if same.all() or not same.any():
        raise MissingClass("separability gap needs both within- and between-class pairs")
    sims = S[iu]
    return float(sims[same].mean() - sims[~same].mean())


# --------------------------------------------------------------------------
# difficult classes


def _confusion_mass(confusion):
    M = np.asarray(confusion, dtype=np.float64)
    M = M + M.T
    np.fill_diagonal(M, 0.0)
    return M


def group_mass(M, group) -> float:
    g = list(group)
    return float(M[np.ix_(g, g)].sum() / 2.0)


def _n_selections(C, g, q):
    return math.factorial(C) // (math.factorial(g) ** q * math.factorial(q) * math.factorial(C - g * q))


def _greedy_groups(M, g, q):
    C = M.shape[0]
    free = np.ones(C, dtype=bool)
    groups = []
    for _ in range(q):
        idx = np.flatnonzero(free)
        sub = M[np.ix_(idx, idx)]
        iu = np.triu_indices(len(idx), 1)
        best = int(np.argmax(sub[iu]))  # row-major first max = lowest (i, j)
        group = [int(idx[iu[0][best]]), int(idx[iu[1][best]])]
        free[group] = False
        while len(group) < g:
            cand = np.flatnonzero(free)
            gain = M[np.ix_(cand, group)].sum(axis=1)
            pick = int(cand[int(np.argmax(gain))])
            group.append(pick)
            free[pick] = False
        groups.append(sorted(group))
    return groups


def _exact_groups(M, g, q):
    C = M.shape[0]
    best_total, best = -1.0, None

    def rec(free, chosen, total, min_first):
        nonlocal best_total, best
        if len(chosen) == q:
            if total > best_total + 1e-12:
                best_total, best = total, list(chosen)
            return
        # groups are generated with strictly increasing smallest members
        for comb in itertools.combinations(free, g):
            if comb[0] <= min_first:
                continue
            rest = [c for c in free if c not in comb]
            rec(rest, chosen + [list(comb)], total + group_mass(M, comb), comb[0])

    rec(list(range(C)), [], 0.0, -1)
    return best


def difficult_groups(confusion, group_size=3, n_groups=1) -> list[list[int]]:
    """Disjoint class groups carrying the most mutual confusion.

    Exact search when the number of candidate selections is small, else a
    greedy max-pair seed grown by max marginal mass. Groups come back sorted
    by mass (descending), each group's members ascending.
    """
    M = _confusion_mass(confusion)
    C = M.shape[0]
    if group_size < 2:
        raise InsufficientClasses("group_size must be >= 2")
    if group_size * n_groups > C:
        raise InsufficientClasses(f"{n_groups} groups of {group_size} need more than {C} classes")
    if _n_selections(C, group_size, n_groups) <= EXACT_GROUP_LIMIT:
        groups = _exact_groups(M, group_size, n_groups)
    else:
        groups = _greedy_groups(M, group_size, n_groups)
    return sorted(groups, key=lambda grp: (-group_mass(M, grp), grp))


# --------------------------------------------------------------------------
# 2D export


def pca_project_2d(E) -> np.ndarray:
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] < 3:
        raise DimensionMismatch("PCA projection needs at least three rows")
    X = E - E.mean(axis=0)
    _, s, Vt = np.linalg.svd(X, full_matrices=False)
    tol = max(X.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > max(tol, 1e-12)))
    V = Vt[:2].copy()
    for row in V:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    if rank < 2:
        coords = np.zeros((E.shape[0], 2))
        if rank == 1:
            coords[:, 0] = X @ V[0]
        raise RankDeficient(f"only {rank} non-zero singular values", coords)
    return X @ V.T


def projection_2d(E) -> np.ndarray:
    """pca_project_2d, zero-padding missing components for rank < 2 input."""
    try:
        return pca_project_2d(E)
    except RankDeficient as exc:
        return exc.coords


# --------------------------------------------------------------------------
# report


@dataclass
class DiagnosticsReport:
    anisotropy: float
    dim_profile: DimContributionProfile
    confusion: np.ndarray
    difficult_groups: list[list[int]]
    projection_2d: np.ndarray
    within_between_gap: float
    accuracy: float | None = None
    clip_ids: list[str] = field(default_factory=list)
    labels: np.ndarray | None = None

    def to_dict(self):
        return {
            "anisotropy": self.anisotropy,
            "dim_contribution": self.dim_profile.to_dict(),
            "confusion": self.confusion.tolist(),
            "difficult_groups": self.difficult_groups,
            "within_between_gap": self.within_between_gap,
            "accuracy": self.accuracy,
        }

    def write(self, report_path, projection_path):
        Path(report_path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")
        with Path(projection_path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["clip_id", "label", "x", "y"])
            for cid, lab, (x, y) in zip(self.clip_ids, self.labels, self.projection_2d):
                w.writerow([cid, int(lab), repr(float(x)), repr(float(y))])


def diagnose(encoder: MLPParams, probe: MLPParams, dataset: Dataset, group_size=3, n_groups=3) -> DiagnosticsReport:
    """Full report for one model on one (usually held-out) dataset."""
    from .trainer import evaluate

    if dataset.class_count < 2:
        raise MissingClass("diagnostics need at least two classes")
    R, _ = encode_batch(encoder, dataset.clips)
    labels = dataset.labels
    acc, confusion = evaluate(encoder, probe, dataset)
    n_groups = min(n_groups, dataset.class_count // group_size)
    groups = difficult_groups(confusion, group_size, n_groups) if n_groups else []
    return DiagnosticsReport(
        anisotropy=anisotropy(R),
        dim_profile=dim_contribution(class_means(R, labels, dataset.class_count)),
        confusion=confusion,
        difficult_groups=groups,
        projection_2d=projection_2d(R),
        within_between_gap=within_between_gap(R, labels),
        accuracy=acc,
        clip_ids=[c.clip_id for c in dataset.clips],
        labels=labels,
    )
