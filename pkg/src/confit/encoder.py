"""Frame encoder (per-frame MLP, temporal mean pooling, unit sphere) and
projection head, with exact forward/backward passes and JSON checkpoints.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArchitectureMismatch, DimensionMismatch, ParseError, ZeroNorm
from .numeric import NORM_EPS

CHECKPOINT_FORMAT = "confit-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class MLPParams:
    """Stack of affine layers; tanh between layers, identity on the output.

    ``layers[i]`` is ``(W, b)`` with ``W`` of shape (out, in).
    """

    layers: list[tuple[np.ndarray, np.ndarray]]
    kind: str = "mlp"
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise DimensionMismatch("an MLP needs at least one layer")
        prev = None
        for i, (W, b) in enumerate(self.layers):
            if W.ndim != 2 or b.shape != (W.shape[0],):
                raise DimensionMismatch(f"layer {i}: weight {W.shape} and bias {b.shape} disagree")
            if prev is not None and W.shape[1] != prev:
                raise DimensionMismatch(f"layer {i} expects input {W.shape[1]}, previous layer gives {prev}")
            prev = W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def widths(self) -> list[int]:
        return [self.in_dim] + [W.shape[0] for W, _ in self.layers]

    def arrays(self) -> list[np.ndarray]:
        return [a for layer in self.layers for a in layer]

    def with_arrays(self, arrays) -> MLPParams:
        arrays = list(arrays)
        layers = [(arrays[2 * i], arrays[2 * i + 1]) for i in range(len(self.layers))]
        return MLPParams(layers, self.kind, dict(self.config))

    def copy(self) -> MLPParams:
        return self.with_arrays(a.copy() for a in self.arrays())

    def n_params(self) -> int:
        return sum(a.size for a in self.arrays())


# Aliases naming the role each stack plays.
EncoderParams = MLPParams
ProjectionParams = MLPParams
LinearProbe = MLPParams


def init_mlp(widths, rng, kind="mlp", config=None) -> MLPParams:
    """Glorot-uniform weights in U(-s, s), s = sqrt(6 / (fan_in + fan_out)); zero biases."""
    layers = []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-s, s, size=(fan_out, fan_in))
        layers.append((W, np.zeros(fan_out)))
    return MLPParams(layers, kind, dict(config or {}))


def init_encoder(feature_dim, rng, hidden=(128,), out_dim=64) -> MLPParams:
    widths = [feature_dim, *hidden, out_dim]
    return init_mlp(widths, rng, "encoder", {"widths": widths})


def init_projection(in_dim, rng, out_dim=32, hidden_width=0) -> MLPParams:
    """Single linear layer when ``hidden_width == 0``, else one tanh hidden layer."""
    widths = [in_dim, hidden_width, out_dim] if hidden_width else [in_dim, out_dim]
    return init_mlp(widths, rng, "projection", {"widths": widths})


# --------------------------------------------------------------------------
# raw MLP passes over row batches


def mlp_forward(params: MLPParams, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.in_dim:
        raise DimensionMismatch(f"input has shape {X.shape}, network expects {params.in_dim} columns")
    acts = [X]
    h = X
    last = len(params.layers) - 1
    for i, (W, b) in enumerate(params.layers):
        h = h @ W.T + b
        if i < last:
            h = np.tanh(h)
        acts.append(h)
    return h, acts


def mlp_backward(params: MLPParams, acts, grad_out):
    """Gradients w.r.t. every array (same order as ``arrays()``) and the input."""
    grads = []
    g = grad_out
    last = len(params.layers) - 1
    for i in range(last, -1, -1):
        W, _ = params.layers[i]
        if i < last:
            g = g * (1.0 - acts[i + 1] ** 2)
        grads.append(g.sum(axis=0))
        grads.append(g.T @ acts[i])
        g = g @ W
    grads.reverse()
    return grads, g


# --------------------------------------------------------------------------
# encoder f_e


@dataclass
class ForwardCache:
    acts: list[np.ndarray]      # per-layer activations over all frames of the batch
    offsets: np.ndarray         # clip boundaries into the stacked frames
    counts: np.ndarray          # frames per clip
    pooled: np.ndarray          # (B, d) before normalization
    norms: np.ndarray           # (B,)
    r: np.ndarray               # (B, d) unit rows


def _frames_of(clips):
    mats = []
    for c in clips:
        frames = c.frames if hasattr(c, "frames") else c
        mats.append(np.asarray(frames, dtype=np.float64))
    return mats


def encode_batch(params: MLPParams, clips) -> tuple[np.ndarray, ForwardCache]:
    """Encode clips (FrameSequence or bare T x F arrays) to unit rows of R."""
    mats = _frames_of(clips)
    counts = np.array([m.shape[0] for m in mats])
    if np.any(counts < 1):
        raise DimensionMismatch("every clip needs at least one frame")
    offsets = np.concatenate([[0], np.cumsum(counts)[:-1]])
    X = np.concatenate(mats, axis=0)
    H, acts = mlp_forward(params, X)
    pooled = np.add.reduceat(H, offsets, axis=0) / counts[:, None]
    norms = np.linalg.norm(pooled, axis=1)
    bad = np.flatnonzero(norms < NORM_EPS)
    if bad.size:
        raise ZeroNorm("pooled encoder output vanished", index=int(bad[0]))
    R = pooled / norms[:, None]
    return R, ForwardCache(acts, offsets, counts, pooled, norms, R)


def encode(params: MLPParams, clip):
    R, cache = encode_batch(params, [clip])
    return R[0], cache


def normalize_backward(r, norms, grad_r):
    """Push gradients through x -> x/|x|: (I - r r^T) g / |x| row-wise."""
    radial = np.sum(r * grad_r, axis=1, keepdims=True)
    return (grad_r - r * radial) / norms[:, None]


def encode_backward(params: MLPParams, cache: ForwardCache, grad_r) -> list[np.ndarray]:
    grad_r = np.atleast_2d(np.asarray(grad_r, dtype=np.float64))
    if grad_r.shape != cache.r.shape:
        raise DimensionMismatch(f"grad_r shape {grad_r.shape} does not match cache {cache.r.shape}")
    grad_u = normalize_backward(cache.r, cache.norms, grad_r)
    grad_frames = np.repeat(grad_u / cache.counts[:, None], cache.counts, axis=0)
    grads, _ = mlp_backward(params, cache.acts, grad_frames)
    return grads


# --------------------------------------------------------------------------
# projection head f_p


@dataclass
class ProjectionCache:
    acts: list[np.ndarray]
    norms: np.ndarray
    z: np.ndarray


def project_batch(params: MLPParams, R):
    R = np.atleast_2d(np.asarray(R, dtype=np.float64))
    out, acts = mlp_forward(params, R)
    norms = np.linalg.norm(out, axis=1)
    bad = np.flatnonzero(norms < NORM_EPS)
    if bad.size:
        raise ZeroNorm("projection output vanished", index=int(bad[0]))
    Z = out / norms[:, None]
    return Z, ProjectionCache(acts, norms, Z)


def project(params: MLPParams, r):
    Z, _ = project_batch(params, np.asarray(r)[None, :])
    return Z[0]


def project_backward(params: MLPParams, cache_or_r, grad_z):
    """Returns (param grads, grad w.r.t. the head input).

    Accepts either a ProjectionCache from ``project_batch`` or the raw input
    (vector or row batch), in which case the forward pass is recomputed.
    """
    if isinstance(cache_or_r, ProjectionCache):
        cache = cache_or_r
        single = False
    else:
        r = np.asarray(cache_or_r, dtype=np.float64)
        single = r.ndim == 1
        _, cache = project_batch(params, r)
    grad_z = np.atleast_2d(np.asarray(grad_z, dtype=np.float64))
    if grad_z.shape != cache.z.shape:
        raise DimensionMismatch(f"grad_z shape {grad_z.shape} does not match output {cache.z.shape}")
    grad_out = normalize_backward(cache.z, cache.norms, grad_z)
    grads, grad_r = mlp_backward(params, cache.acts, grad_out)
    return grads, (grad_r[0] if single else grad_r)


# --------------------------------------------------------------------------
# checkpoints


def params_to_dict(params: MLPParams) -> dict:
    return {
        "kind": params.kind,
        "config": params.config,
        "layers": [
            {"shape": list(W.shape), "weight": W.ravel().tolist(), "bias": b.tolist()}
            for W, b in params.layers
        ],
    }


def params_from_dict(doc) -> MLPParams:
    try:
        layers = []
        for layer in doc["layers"]:
            shape = tuple(int(s) for s in layer["shape"])
            W = np.array(layer["weight"], dtype=np.float64).reshape(shape)
            b = np.array(layer["bias"], dtype=np.float64)
            layers.append((W, b))
        return MLPParams(layers, doc.get("kind", "mlp"), dict(doc.get("config", {})))
    except (KeyError, ValueError, TypeError) as exc:
        raise ParseError(f"malformed checkpoint: {exc}") from None


def save_checkpoint(path, params: MLPParams, run_config=None):
    # json writes floats with repr(), which round-trips float64 exactly
    doc = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION, "run_config": run_config or {}}
    doc.update(params_to_dict(params))
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path, expect_kind=None) -> MLPParams:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"{path} is not a confit v{CHECKPOINT_VERSION} checkpoint")
    params = params_from_dict(doc)
    if expect_kind is not None and params.kind != expect_kind:
        raise ArchitectureMismatch(f"{path} holds a {params.kind!r} checkpoint, expected {expect_kind!r}")
    return params
