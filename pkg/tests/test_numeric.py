import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from confit.errors import DimensionMismatch, ZeroNorm
from confit.numeric import cosine_sim, derive_rng, l2_normalize, make_rng, pairwise_cosine_matrix

from oracles import cosine

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)
nonzero_vec = arrays(np.float64, st.integers(1, 12), elements=finite).filter(lambda v: np.linalg.norm(v) > 1e-3)


class TestL2Normalize:
    @pytest.mark.parametrize("v, expected", [
        ((3, 4), (0.6, 0.8)),
        ((0, 0, 1), (0, 0, 1)),
        ((1, 1, 1, 1), (0.5, 0.5, 0.5, 0.5)),
    ])
    def test_examples(self, v, expected):
        np.testing.assert_allclose(l2_normalize(v), expected, atol=1e-15)

    def test_zero_vector_raises(self):
        with pytest.raises(ZeroNorm):
            l2_normalize([0.0, 1e-13])

    def test_empty_raises(self):
        with pytest.raises(DimensionMismatch):
            l2_normalize([])

    @given(nonzero_vec)
    def test_unit_and_idempotent(self, v):
        u = l2_normalize(v)
        assert abs(np.linalg.norm(u) - 1.0) < 1e-12
        np.testing.assert_allclose(l2_normalize(u), u, atol=1e-12)


class TestCosine:
    @pytest.mark.parametrize("u, v, expected", [
        ((1, 0), (0, 1), 0.0),
        ((1, 0), (-1, 0), -1.0),
        ((1, 1), (1, 0), 0.7071067811865475),
    ])
    def test_examples(self, u, v, expected):
        assert cosine_sim(u, v) == pytest.approx(expected, abs=1e-15)

    def test_mismatch(self):
        with pytest.raises(DimensionMismatch):
            cosine_sim([1, 0], [1, 0, 0])

    def test_zero(self):
        with pytest.raises(ZeroNorm):
            cosine_sim([0, 0], [1, 0])

    @given(nonzero_vec, st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.randoms(use_true_random=False))
    def test_symmetric_self_and_scale_invariant(self, u, a, b, r):
        v = np.array([r.uniform(-1, 1) for _ in u])
        if np.linalg.norm(v) < 1e-3:
            return
        assert cosine_sim(u, u) == pytest.approx(1.0, abs=1e-12)
        assert cosine_sim(u, v) == pytest.approx(cosine_sim(v, u), abs=1e-15)
        assert cosine_sim(a * u, b * v) == pytest.approx(cosine_sim(u, v), abs=1e-12)


class TestPairwise:
    def test_identity_rows(self):
        np.testing.assert_array_equal(pairwise_cosine_matrix(np.eye(3)), np.eye(3))

    def test_identical_rows(self):
        np.testing.assert_allclose(pairwise_cosine_matrix([[1, 2], [1, 2]]), np.ones((2, 2)), atol=1e-15)

    def test_matches_pair_loop(self):
        E = make_rng(3).standard_normal((5, 8))
        S = pairwise_cosine_matrix(E)
        for i in range(5):
            for j in range(5):
                assert S[i, j] == pytest.approx(cosine(E[i], E[j]), abs=1e-12)

    def test_zero_row_named(self):
        E = np.ones((4, 3))
        E[2] = 0
        with pytest.raises(ZeroNorm) as exc:
            pairwise_cosine_matrix(E)
        assert exc.value.index == 2

    @settings(max_examples=25)
    @given(st.integers(0, 10_000))
    def test_rotation_invariant(self, seed):
        rng = make_rng(seed)
        E = rng.standard_normal((6, 5))
        Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
        np.testing.assert_allclose(pairwise_cosine_matrix(E @ Q), pairwise_cosine_matrix(E), atol=1e-9)


class TestRng:
    def test_same_seed_same_draws(self):
        assert np.array_equal(make_rng(7).standard_normal(10), make_rng(7).standard_normal(10))

    def test_derived_streams_differ(self):
        a = derive_rng(7, 0).standard_normal(5)
        b = derive_rng(7, 1).standard_normal(5)
        assert not np.array_equal(a, b)
        assert np.array_equal(a, derive_rng(7, 0).standard_normal(5))
