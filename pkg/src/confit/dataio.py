"""Frame-feature datasets: Frames-CSV I/O, synthetic clusters, m x k batching."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    InconsistentDim,
    InfeasibleBatch,
    InvalidSpec,
    ParseError,
    UnknownLabel,
)

HEADER_RE = re.compile(r"^#confit-frames v1 classes=(\d+) dim=(\d+)$")
SPLITS = ("train", "validation")


@dataclass(frozen=True)
class FrameSequence:
    """One clip: a T x F matrix of frame features and its class index."""

    clip_id: str
    frames: np.ndarray
    label: int

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class Dataset:
    clips: list[FrameSequence]
    class_count: int
    split: str = "train"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise InvalidSpec(f"unknown split {self.split!r}")
        if not self.clips:
            raise InvalidSpec("dataset has no clips")
        dims = {c.frames.shape[1] for c in self.clips}
        if len(dims) != 1:
            raise InvalidSpec(f"clips disagree on feature dim: {sorted(dims)}")
        ids = [c.clip_id for c in self.clips]
        if len(set(ids)) != len(ids):
            raise InvalidSpec("clip ids are not unique within the split")
        for c in self.clips:
            if c.n_frames < 1:
                raise InvalidSpec(f"clip {c.clip_id} has no frames")
            if not 0 <= c.label < self.class_count:
                raise InvalidSpec(f"clip {c.clip_id} label {c.label} outside [0, {self.class_count})")

    def __len__(self):
        return len(self.clips)

    @property
    def feature_dim(self) -> int:
        return self.clips[0].frames.shape[1]

    @property
    def labels(self) -> np.ndarray:
        return np.array([c.label for c in self.clips], dtype=np.int64)

    def class_indices(self) -> list[np.ndarray]:
        labels = self.labels
        return [np.flatnonzero(labels == c) for c in range(self.class_count)]

    def check_trainable(self):
        """Every class needs two train clips so each anchor can have a positive."""
        counts = np.bincount(self.labels, minlength=self.class_count)
        short = np.flatnonzero(counts < 2)
        if short.size:
            raise InvalidSpec(f"classes with fewer than 2 clips: {short.tolist()}")


# --------------------------------------------------------------------------
# Frames-CSV


def load_frames_csv(path, split="train") -> Dataset:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError("empty file", line=1)
    m = HEADER_RE.match(lines[0].strip())
    if m is None:
        raise ParseError(f"bad header {lines[0]!r}", line=1)
    class_count, dim = int(m.group(1)), int(m.group(2))
    if class_count < 1 or dim < 1:
        raise ParseError("classes and dim must be positive", line=1)

    rows: dict[str, dict[int, np.ndarray]] = {}
    labels: dict[str, int] = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) < 4:
            raise ParseError("expected clip_id,frame_idx,label,features...", line=lineno)
        clip_id = parts[0].strip()
        if not clip_id:
            raise ParseError("empty clip_id", line=lineno)
        try:
            frame_idx = int(parts[1])
            label = int(parts[2])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        feats = parts[3:]
        if len(feats) != dim:
            raise InconsistentDim(f"row has {len(feats)} features, header declares {dim}", line=lineno)
        try:
            values = np.array([float(x) for x in feats], dtype=np.float64)
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if not np.all(np.isfinite(values)):
            raise ParseError("non-finite feature value", line=lineno)
        if not 0 <= label < class_count:
            raise UnknownLabel(f"label {label} outside [0, {class_count})", line=lineno)
        if frame_idx < 0:
            raise ParseError(f"negative frame_idx {frame_idx}", line=lineno)
        if clip_id in labels and labels[clip_id] != label:
            raise ParseError(f"clip {clip_id} changes label {labels[clip_id]} -> {label}", line=lineno)
        frames = rows.setdefault(clip_id, {})
        if frame_idx in frames:
            raise ParseError(f"duplicate frame_idx {frame_idx} for clip {clip_id}", line=lineno)
        labels[clip_id] = label
        frames[frame_idx] = values

    clips = []
    for clip_id, frames in rows.items():
        T = len(frames)
        if sorted(frames) != list(range(T)):
            raise ParseError(f"clip {clip_id} frame indices are not 0..{T - 1}")
        clips.append(FrameSequence(clip_id, np.stack([frames[t] for t in range(T)]), labels[clip_id]))
    if not clips:
        raise ParseError("file contains no rows")
    return Dataset(clips, class_count, split)


def save_frames_csv(dataset: Dataset, path):
    path = Path(path)
    out = [f"#confit-frames v1 classes={dataset.class_count} dim={dataset.feature_dim}"]
    for clip in dataset.clips:
        for t, frame in enumerate(clip.frames):
            vals = ",".join(repr(float(x)) for x in frame)
            out.append(f"{clip.clip_id},{t},{clip.label},{vals}")
    path.write_text("\n".join(out) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SynthSpec:
    class_count: int
    clips_per_class: int
    frame_count: int
    feature_dim: int
    class_separation: float
    shared_noise_dims: int = 0
    seed: int = 0
    validation_fraction: float = field(default=0.2, repr=False)

    def validate(self):
        if self.class_count < 2:
            raise InvalidSpec("class_count must be at least 2")
        if self.frame_count < 1 or self.feature_dim < 1:
            raise InvalidSpec("frame_count and feature_dim must be positive")
        if not 0 <= self.shared_noise_dims < self.feature_dim:
            raise InvalidSpec("shared_noise_dims must lie in [0, feature_dim)")
        if self.class_separation < 0:
            raise InvalidSpec("class_separation must be non-negative")
        n_val = round(self.validation_fraction * self.clips_per_class)
        if self.clips_per_class - n_val < 2:
            raise InvalidSpec("need at least 2 train clips per class")


def generate_clusters(spec: SynthSpec, rng) -> tuple[Dataset, Dataset]:
    """Gaussian class clusters of frame sequences, split 80/20 per class.

    The first ``shared_noise_dims`` feature dimensions are replaced by
    class-independent noise: one per-clip offset plus per-frame jitter, so
    the nuisance survives temporal pooling.
    """
    spec.validate()
    C, n, T, F = spec.class_count, spec.clips_per_class, spec.frame_count, spec.feature_dim
    means = rng.standard_normal((C, F))
    diffs = means[:, None, :] - means[None, :, :]
    dist = np.sqrt((diffs**2).sum(-1))[np.triu_indices(C, 1)].mean()
    means *= spec.class_separation / dist

    s = spec.shared_noise_dims
    n_val = round(spec.validation_fraction * n)
    train, val = [], []
    for c in range(C):
        clips = []
        for i in range(n):
            frames = means[c] + rng.standard_normal((T, F))
            if s:
                frames[:, :s] = rng.standard_normal(s) + rng.standard_normal((T, s))
            clips.append(FrameSequence(f"c{c:03d}_{i:04d}", frames, c))
        order = rng.permutation(n)
        val.extend(clips[j] for j in sorted(order[:n_val]))
        train.extend(clips[j] for j in sorted(order[n_val:]))
    return Dataset(train, C, "train"), Dataset(val, C, "validation")


# --------------------------------------------------------------------------
# batching


class StratifiedBatchSampler:
    """Yields index batches of ``m`` distinct classes times ``k`` clips each.

    Each pass over the sampler is one epoch; clips are drawn without
    replacement, so an index appears at most once per epoch. Leftover clips
    that cannot fill a k-chunk, or chunks from fewer than m classes, are
    dropped for that epoch.
    """

    def __init__(self, dataset: Dataset, batch_classes: int, per_class: int, rng):
        if batch_classes < 2 or per_class < 2:
            raise InfeasibleBatch("batch_classes and per_class must both be >= 2")
        if batch_classes > dataset.class_count:
            raise InfeasibleBatch(f"batch_classes={batch_classes} exceeds class_count={dataset.class_count}")
        self.by_class = dataset.class_indices()
        short = [c for c, idx in enumerate(self.by_class) if len(idx) < per_class]
        if short:
            raise InfeasibleBatch(f"classes with fewer than {per_class} clips: {short}")
        self.m = batch_classes
        self.k = per_class
        self.rng = rng

    def __iter__(self):
        k, m, rng = self.k, self.m, self.rng
        chunks = []
        for idx in self.by_class:
            perm = rng.permutation(idx)
            chunks.append([perm[j : j + k] for j in range(0, len(perm) - k + 1, k)])
        while True:
            remaining = np.array([len(ch) for ch in chunks])
            if np.count_nonzero(remaining) < m:
                return
            order = rng.permutation(len(chunks))
            # classes with the most chunks left go first, random among ties
            order = order[np.argsort(-remaining[order], kind="stable")]
            picked = order[:m]
            yield np.concatenate([chunks[c].pop() for c in picked])
