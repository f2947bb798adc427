"""Supervised contrastive loss with its exact gradient, and hard pair mining."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpec, NoNegative, NoPositive, NoPositivePairs, NotNormalized

MINING_MODES = ("none", "hard")


@dataclass(frozen=True)
class SupConConfig:
    temperature: float = 0.1
    mining: str = "hard"
    k_pos: int = 1
    k_neg: int = 1

    def __post_init__(self):
        if not self.temperature > 0:
            raise InvalidSpec(f"temperature must be positive, got {self.temperature}")
        if self.mining not in MINING_MODES:
            raise InvalidSpec(f"mining must be one of {MINING_MODES}, got {self.mining!r}")
        if self.k_pos < 1 or self.k_neg < 1:
            raise InvalidSpec("k_pos and k_neg must be >= 1")


@dataclass
class MiningResult:
    positives: list[np.ndarray]
    negatives: list[np.ndarray]

    def masks(self, n):
        pos = np.zeros((n, n), dtype=bool)
        neg = np.zeros((n, n), dtype=bool)
        for i in range(n):
            pos[i, self.positives[i]] = True
            neg[i, self.negatives[i]] = True
        return pos, neg


def _check_inputs(Z, labels):
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    if Z.ndim != 2 or Z.shape[0] < 2 or labels.shape != (Z.shape[0],):
        raise InvalidSpec(f"need N >= 2 rows with one label each, got Z {Z.shape}, labels {labels.shape}")
    dev = np.abs(np.linalg.norm(Z, axis=1) - 1.0)
    if np.any(dev > 1e-6):
        raise NotNormalized(f"row {int(np.argmax(dev))} has norm off by {dev.max():.3g}")
    return Z, labels


def _masked_supcon(Z, pos_mask, denom_mask, tau):
    """Loss and dL/dZ for arbitrary per-anchor positive and denominator sets.

    Anchor i contributes  log sum_{a in A(i)} exp(s_ia) - mean_{p in P(i)} s_ip
    with s = Z Z^T / tau; anchors with empty P(i) are skipped.
    """
    n_pos = pos_mask.sum(axis=1)
    active = n_pos > 0
    n_active = int(active.sum())
    if n_active == 0:
        raise NoPositivePairs("no anchor has a positive in the batch")

    S = (Z @ Z.T) / tau
    masked = np.where(denom_mask, S, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    row_max = np.where(np.isfinite(row_max), row_max, 0.0)
    expd = np.where(denom_mask, np.exp(masked - row_max), 0.0)
    denom = expd.sum(axis=1)

    safe_pos = np.maximum(n_pos, 1)
    log_denom = np.log(np.where(active, denom, 1.0)) + row_max[:, 0]
    pos_mean = np.where(pos_mask, S, 0.0).sum(axis=1) / safe_pos
    per_anchor = np.where(active, log_denom - pos_mean, 0.0)
    loss = float(per_anchor.sum() / n_active)

    soft = expd / np.where(active, denom, 1.0)[:, None]
    G = soft - pos_mask / safe_pos[:, None]
    G[~active] = 0.0
    G /= n_active
    grad = (G + G.T) @ Z / tau
    return max(loss, 0.0), grad


def supcon_loss(Z, labels, cfg: SupConConfig | None = None):
    """Full-batch SupCon: P(i) = same-label others, A(i) = everyone but i."""
    cfg = cfg or SupConConfig(mining="none")
    Z, labels = _check_inputs(Z, labels)
    n = Z.shape[0]
    off_diag = ~np.eye(n, dtype=bool)
    pos = (labels[:, None] == labels[None, :]) & off_diag
    return _masked_supcon(Z, pos, off_diag, cfg.temperature)


def mine_hard_pairs(Z, labels, cfg: SupConConfig | None = None, strict=False) -> MiningResult:
    """Per anchor: the k_pos least similar positives and k_neg most similar negatives.

    Similarity is the cosine in the space of ``Z``; ties go to the lower index.
    An anchor lacking candidates gets an empty selection, or raises
    NoPositive / NoNegative when ``strict``.
    """
    cfg = cfg or SupConConfig()
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    norms = np.linalg.norm(Z, axis=1)
    sims = (Z @ Z.T) / np.outer(norms, norms)
    n = Z.shape[0]
    index = np.arange(n)
    positives, negatives = [], []
    for i in range(n):
        same = labels == labels[i]
        pos = np.flatnonzero(same & (index != i))
        neg = np.flatnonzero(~same)
        if strict and pos.size == 0:
            raise NoPositive(i)
        if strict and neg.size == 0:
            raise NoNegative(i)
        # lexsort: last key is primary
        pos = pos[np.lexsort((pos, sims[i, pos]))][: cfg.k_pos]
        neg = neg[np.lexsort((neg, -sims[i, neg]))][: cfg.k_neg]
        positives.append(pos)
        negatives.append(neg)
    return MiningResult(positives, negatives)


def mined_supcon_loss(Z, labels, cfg: SupConConfig | None = None):
    """SupCon restricted to mined pairs: P'(i) = hard positives, A'(i) = P'(i) + hard negatives.

    Selection is treated as constant, so the gradient is exact for the
    restricted objective at fixed selection.
    """
    cfg = cfg or SupConConfig()
    Z, labels = _check_inputs(Z, labels)
    mined = mine_hard_pairs(Z, labels, cfg)
    for i, negs in enumerate(mined.negatives):
        if negs.size == 0:
            raise NoNegative(i)
    pos, neg = mined.masks(Z.shape[0])
    return _masked_supcon(Z, pos, pos | neg, cfg.temperature)


def contrastive_loss(Z, labels, cfg: SupConConfig):
    if cfg.mining == "hard":
        return mined_supcon_loss(Z, labels, cfg)
    return supcon_loss(Z, labels, cfg)
