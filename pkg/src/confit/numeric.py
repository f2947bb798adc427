"""Dense float64 geometry primitives and the run RNG."""

import numpy as np

from .errors import DimensionMismatch, ZeroNorm

NORM_EPS = 1e-12


def make_rng(seed):
    """Return the single generator threaded through a run.

    PCG64 seeded from an unsigned 64-bit integer; identical seeds give
    bit-identical draws.
    """
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_rng(seed, *stream):
    """Independent generator for a sub-task, e.g. one grid-search cell."""
    seq = np.random.SeedSequence([int(seed), *map(int, stream)])
    return np.random.Generator(np.random.PCG64(seq))


def as_vector(v):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise DimensionMismatch(f"expected a non-empty vector, got shape {v.shape}")
    return v


def l2_normalize(v):
    v = as_vector(v)
    n = np.linalg.norm(v)
    if n < NORM_EPS:
        raise ZeroNorm()
    return v / n


def normalize_rows(E):
    """Row-wise unit normalization; raises ZeroNorm naming the first bad row."""
    E = np.asarray(E, dtype=np.float64)
    if E.ndim != 2:
        raise DimensionMismatch(f"expected a matrix, got shape {E.shape}")
    norms = np.linalg.norm(E, axis=1)
    bad = np.flatnonzero(norms < NORM_EPS)
    if bad.size:
        raise ZeroNorm(index=int(bad[0]))
    return E / norms[:, None]


def cosine_sim(u, v):
    u = as_vector(u)
    v = as_vector(v)
    if u.shape != v.shape:
        raise DimensionMismatch(f"lengths differ: {u.size} vs {v.size}")
    c = float(np.dot(l2_normalize(u), l2_normalize(v)))
    return min(1.0, max(-1.0, c))


def pairwise_cosine_matrix(E):
    X = normalize_rows(E)
    if X.shape[0] < 2:
        raise DimensionMismatch("need at least two rows")
    S = X @ X.T
    S = 0.5 * (S + S.T)
    np.fill_diagonal(S, 1.0)
    return np.clip(S, -1.0, 1.0)
