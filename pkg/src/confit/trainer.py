"""Two-stage training (contrastive pair-tuning, then a frozen linear probe),
the end-to-end cross-entropy baseline, Adam, and evaluation.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import Dataset, StratifiedBatchSampler
from .encoder import (
    MLPParams,
    encode_backward,
    encode_batch,
    init_encoder,
    init_mlp,
    init_projection,
    mlp_backward,
    mlp_forward,
    project_backward,
    project_batch,
)
from .errors import EmptyGrid, InvalidSpec, NonFiniteLoss, ShapeMismatch
from .numeric import derive_rng
from .supcon import SupConConfig, contrastive_loss


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    lr: float
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, arrays, lr, **kw) -> AdamState:
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], lr, **kw)


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update. Returns new arrays and a new state."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch(f"{len(params)} params, {len(grads)} grads, {len(state.m)} moment slots")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"param {p.shape} vs grad {g.shape} vs moment {m.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, state.lr, t, b1, b2, state.eps)


# --------------------------------------------------------------------------
# configs and trace


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    learning_rate: float = 5e-5
    batch_classes: int = 5
    per_class: int = 4
    supcon: SupConConfig = field(default_factory=SupConConfig)
    seed: int = 0
    eval_every: int = 1
    encoder_hidden: tuple[int, ...] = (128,)
    embed_dim: int = 64
    proj_dim: int = 32
    proj_hidden: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidSpec("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise InvalidSpec("learning_rate must be positive")
        if self.eval_every < 1:
            raise InvalidSpec("eval_every must be >= 1")


@dataclass(frozen=True)
class GridSearchSpec:
    learning_rates: tuple[float, ...] = (1e-3, 1e-2, 1e-1)
    batch_sizes: tuple[int, ...] = (16, 32, 64)
    probe_epochs: int = 30

    def cells(self):
        return [(lr, bs) for lr in sorted(self.learning_rates) for bs in sorted(self.batch_sizes)]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_accuracy: float | None
    seconds: float


@dataclass
class TrainingTrace:
    records: list[EpochRecord] = field(default_factory=list)

    def add(self, rec: EpochRecord):
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("trace epochs must be strictly increasing")
        self.records.append(rec)

    def losses(self):
        return [r.train_loss for r in self.records]

    def accuracy_at(self, epoch):
        for r in self.records:
            if r.epoch == epoch:
                return r.val_accuracy
        return None

    def curve(self):
        return [[r.epoch, r.val_accuracy] for r in self.records if r.val_accuracy is not None]

    def to_csv(self, path):
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_accuracy", "seconds"])
            for r in self.records:
                acc = "" if r.val_accuracy is None else repr(r.val_accuracy)
                w.writerow([r.epoch, repr(r.train_loss), acc, f"{r.seconds:.6f}"])


# --------------------------------------------------------------------------
# helpers


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    n = logits.shape[0]
    loss = float(np.mean(log_z - shifted[np.arange(n), labels]))
    grad = np.exp(shifted - log_z[:, None])
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def embed_dataset(encoder: MLPParams, dataset: Dataset) -> np.ndarray:
    R, _ = encode_batch(encoder, dataset.clips)
    return R


def centroid_accuracy(R_train, y_train, R_val, y_val, class_count):
    """Nearest class-centroid (cosine) accuracy; used as the stage-1 progress proxy."""
    d = R_train.shape[1]
    centroids = np.zeros((class_count, d))
    np.add.at(centroids, y_train, R_train)
    norms = np.linalg.norm(centroids, axis=1, keepdims=True)
    centroids = centroids / np.where(norms > 0, norms, 1.0)
    pred = np.argmax(R_val @ centroids.T, axis=1)
    return float(np.mean(pred == y_val))


def _check_finite(loss, epoch, batch):
    if not np.isfinite(loss):
        raise NonFiniteLoss(epoch, batch)


# --------------------------------------------------------------------------
# stage 1


def pairtune(train: Dataset, val: Dataset, cfg: TrainConfig, rng, encoder: MLPParams | None = None,
             projection: MLPParams | None = None):
    """Contrastive fine-tuning of encoder + projection head; the head is dropped on return."""
    train.check_trainable()
    if encoder is None:
        encoder = init_encoder(train.feature_dim, rng, cfg.encoder_hidden, cfg.embed_dim)
    if projection is None:
        projection = init_projection(encoder.out_dim, rng, cfg.proj_dim, cfg.proj_hidden)
    sampler = StratifiedBatchSampler(train, cfg.batch_classes, cfg.per_class, rng)
    labels = train.labels
    n_enc = len(encoder.arrays())
    state = AdamState.for_params(encoder.arrays() + projection.arrays(), cfg.learning_rate)
    trace = TrainingTrace()

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for b, idx in enumerate(sampler):
            R, cache = encode_batch(encoder, [train.clips[i] for i in idx])
            Z, pcache = project_batch(projection, R)
            loss, grad_z = contrastive_loss(Z, labels[idx], cfg.supcon)
            _check_finite(loss, epoch, b)
            grads_p, grad_r = project_backward(projection, pcache, grad_z)
            grads_e = encode_backward(encoder, cache, grad_r)
            arrays, state = adam_step(encoder.arrays() + projection.arrays(), grads_e + grads_p, state)
            encoder = encoder.with_arrays(arrays[:n_enc])
            projection = projection.with_arrays(arrays[n_enc:])
            losses.append(loss)
        acc = None
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            acc = centroid_accuracy(embed_dataset(encoder, train), labels,
                                    embed_dataset(encoder, val), val.labels, train.class_count)
        trace.add(EpochRecord(epoch, float(np.mean(losses)), acc, time.perf_counter() - t0))
    return encoder, trace


# --------------------------------------------------------------------------
# stage 2


@dataclass
class ProbeResult:
    probe: MLPParams
    best_cell: tuple[float, int]
    accuracy: float
    cells: list[dict]


def train_probe(R, y, class_count, lr, batch_size, epochs, rng) -> MLPParams:
    probe = init_mlp([R.shape[1], class_count], rng, "probe", {"widths": [R.shape[1], class_count]})
    state = AdamState.for_params(probe.arrays(), lr)
    n = R.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            logits, acts = mlp_forward(probe, R[idx])
            _, g = softmax_cross_entropy(logits, y[idx])
            grads, _ = mlp_backward(probe, acts, g)
            arrays, state = adam_step(probe.arrays(), grads, state)
            probe = probe.with_arrays(arrays)
    return probe


def predict(probe: MLPParams, R):
    logits, _ = mlp_forward(probe, R)
    return np.argmax(logits, axis=1)  # first maximum, i.e. lower class index on ties


def linear_probe(encoder: MLPParams, train: Dataset, val: Dataset, grid: GridSearchSpec, rng) -> ProbeResult:
    """Grid search over (lr, batch size) for a softmax probe on frozen, pooled features."""
    cells = grid.cells()
    if not cells:
        raise EmptyGrid("grid search needs at least one learning rate and one batch size")
    R_train = embed_dataset(encoder, train)
    R_val = embed_dataset(encoder, val)
    y_train, y_val = train.labels, val.labels
    base_seed = int(rng.integers(0, 2**63))

    results = []
    for i, (lr, bs) in enumerate(cells):
        probe = train_probe(R_train, y_train, train.class_count, lr, bs, grid.probe_epochs,
                            derive_rng(base_seed, i))
        acc = float(np.mean(predict(probe, R_val) == y_val))
        results.append((acc, lr, bs, probe))

    # cells are sorted by (lr, batch) so the first maximum wins ties
    best = max(range(len(results)), key=lambda j: (results[j][0], -j))
    acc, lr, bs, probe = results[best]
    table = [{"learning_rate": r[1], "batch_size": r[2], "val_accuracy": r[0]} for r in results]
    return ProbeResult(probe, (lr, bs), acc, table)


# --------------------------------------------------------------------------
# baseline


def finetune_baseline(train: Dataset, val: Dataset, cfg: TrainConfig, rng, encoder: MLPParams | None = None,
                      head: MLPParams | None = None):
    """End-to-end cross-entropy training of encoder + linear head, nothing frozen."""
    train.check_trainable()
    if encoder is None:
        encoder = init_encoder(train.feature_dim, rng, cfg.encoder_hidden, cfg.embed_dim)
    if head is None:
        widths = [encoder.out_dim, train.class_count]
        head = init_mlp(widths, rng, "probe", {"widths": widths})
    sampler = StratifiedBatchSampler(train, cfg.batch_classes, cfg.per_class, rng)
    labels = train.labels
    n_enc = len(encoder.arrays())
    state = AdamState.for_params(encoder.arrays() + head.arrays(), cfg.learning_rate)
    trace = TrainingTrace()

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for b, idx in enumerate(sampler):
            R, cache = encode_batch(encoder, [train.clips[i] for i in idx])
            logits, acts = mlp_forward(head, R)
            loss, g = softmax_cross_entropy(logits, labels[idx])
            _check_finite(loss, epoch, b)
            grads_h, grad_r = mlp_backward(head, acts, g)
            grads_e = encode_backward(encoder, cache, grad_r)
            arrays, state = adam_step(encoder.arrays() + head.arrays(), grads_e + grads_h, state)
            encoder = encoder.with_arrays(arrays[:n_enc])
            head = head.with_arrays(arrays[n_enc:])
            losses.append(loss)
        acc = None
        if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
            acc, _ = evaluate(encoder, head, val)
        trace.add(EpochRecord(epoch, float(np.mean(losses)), acc, time.perf_counter() - t0))
    return encoder, head, trace


# --------------------------------------------------------------------------
# evaluation


def evaluate(encoder: MLPParams, probe: MLPParams, dataset: Dataset):
    R = embed_dataset(encoder, dataset)
    pred = predict(probe, R)
    C = dataset.class_count
    confusion = np.zeros((C, C), dtype=np.int64)
    np.add.at(confusion, (dataset.labels, pred), 1)
    return float(np.trace(confusion) / confusion.sum()), confusion


def inference_param_count(encoder: MLPParams, probe: MLPParams) -> int:
    return encoder.n_params() + probe.n_params()


