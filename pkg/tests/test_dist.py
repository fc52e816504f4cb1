import itertools
import math

import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, strategies as st

from prcurves.dist import (Categorical, FactorizedSeqDist, entropy, sample, sample_rows,
                           seq_prob, support, temper, temper_probs, temper_seq, top_p,
                           top_p_probs)
from prcurves.errors import DomainError

from conftest import random_probs

prob_vectors = st.integers(2, 9).flatmap(
    lambda v: st.lists(st.floats(0.01, 10), min_size=v, max_size=v)
).map(lambda w: np.array(w) / np.sum(w))


class TestCategorical:
    def test_rejects_bad_mass(self):
        with pytest.raises(DomainError):
            Categorical([0.5, 0.6])
        with pytest.raises(DomainError):
            Categorical([1.5, -0.5])
        with pytest.raises(DomainError):
            Categorical([])

    def test_immutable(self):
        d = Categorical([0.5, 0.5])
        with pytest.raises(ValueError):
            d.probs[0] = 1.0

    def test_uniform_on_subset(self):
        npt.assert_allclose(Categorical.uniform(4, {1, 3}).probs, [0, 0.5, 0, 0.5])


class TestTemper:
    def test_uniform_is_fixed(self):
        npt.assert_allclose(temper(Categorical([0.25] * 4), 7.3).probs, [0.25] * 4, atol=1e-15)

    def test_identity_at_one(self):
        d = Categorical([0.8, 0.2])
        assert temper(d, 1) == d

    def test_square_root(self):
        npt.assert_allclose(temper(Categorical([0.8, 0.2]), 2).probs, [2 / 3, 1 / 3], atol=1e-12)

    @pytest.mark.parametrize("t", [0, -1, math.inf, math.nan])
    def test_bad_temperature(self, t):
        with pytest.raises(DomainError):
            temper(Categorical([0.5, 0.5]), t)

    def test_zeros_stay_zero(self):
        for t in (0.05, 0.5, 3, 1e6):
            out = temper_probs([0.0, 0.3, 0.7], t)
            assert out[0] == 0.0

    def test_tiny_temperature_no_underflow(self):
        # plain p**(1/t) underflows both entries to 0 here
        out = temper_probs([0.4, 0.6], 0.001)
        assert np.all(np.isfinite(out))
        npt.assert_allclose(out.sum(), 1.0)

    @given(prob_vectors, st.sampled_from([0.1, 0.3, 2.0, 9.0]))
    def test_argmax_preserved(self, p, t):
        out = temper_probs(p, t)
        top = set(np.flatnonzero(p == p.max()))
        assert set(np.flatnonzero(out >= out.max() * (1 - 1e-12))) >= top

    @given(prob_vectors, st.floats(0.2, 5), st.floats(0.2, 5))
    def test_composition(self, p, t1, t2):
        npt.assert_allclose(temper_probs(temper_probs(p, t1), t2), temper_probs(p, t1 * t2),
                            atol=1e-12)

    def test_entropy_rises_with_t(self, rng):
        grid = [0.25, 0.5, 1, 2, 4, 8]
        for _ in range(50):
            d = Categorical(random_probs(rng, 7, zeros=rng.integers(0, 3)))
            h = [entropy(temper(d, t)) for t in grid]
            assert np.all(np.diff(h) >= -1e-12)

    def test_matches_tempered_softmax(self, rng):
        z = rng.standard_normal(6) * 3
        p = np.exp(z - z.max())
        p /= p.sum()
        ez = np.exp(z / 0.7 - (z / 0.7).max())
        npt.assert_allclose(temper_probs(p, 0.7), ez / ez.sum(), atol=1e-12)


class TestEntropy:
    def test_values(self):
        assert entropy(Categorical([1, 0, 0])) == 0
        npt.assert_allclose(entropy(Categorical([0.5, 0.5])), math.log(2))
        npt.assert_allclose(entropy(Categorical([0.8, 0.2])), 0.5004024235381879, rtol=1e-14)


class TestTopP:
    d = Categorical([0.5, 0.3, 0.2])

    def test_full_mass(self):
        npt.assert_allclose(top_p(self.d, 1.0).probs, [0.5, 0.3, 0.2])

    def test_half(self):
        npt.assert_allclose(top_p(self.d, 0.5).probs, [1, 0, 0])

    def test_renormalized_pair(self):
        npt.assert_allclose(top_p(self.d, 0.75).probs, [0.625, 0.375, 0], atol=1e-15)

    def test_ties_keep_lower_id(self):
        npt.assert_allclose(top_p_probs([0.25, 0.25, 0.25, 0.25], 0.5), [0.5, 0.5, 0, 0])

    @pytest.mark.parametrize("p", [0, -0.1, 1.01])
    def test_bad_mass(self, p):
        with pytest.raises(DomainError):
            top_p(self.d, p)

    @given(prob_vectors, st.floats(0.01, 1), st.floats(0.01, 1))
    def test_kept_sets_nested(self, probs, p1, p2):
        p1, p2 = sorted((p1, p2))
        k1 = top_p_probs(probs, p1) > 0
        k2 = top_p_probs(probs, p2) > 0
        assert np.all(k2[k1])

    @given(prob_vectors, st.floats(0.01, 1))
    def test_minimal_prefix(self, probs, p):
        kept = top_p_probs(probs, p) > 0
        assert probs[kept].sum() >= p - 1e-12
        # dropping the smallest kept token falls short
        if kept.sum() > 1:
            smallest = probs[kept].min()
            assert probs[kept].sum() - smallest < p + 1e-12


class TestSupport:
    def test_examples(self):
        assert support(Categorical([0.5, 0.5, 0])) == {0, 1}
        assert support(Categorical([1e-15, 1 - 1e-15]), tol=1e-12) == {1}
        assert support(Categorical.uniform(10)) == set(range(10))


class TestSample:
    def test_point_masses(self, rng):
        assert all(sample(Categorical([1, 0, 0]), rng) == 0 for _ in range(20))
        assert all(sample(Categorical([0, 1]), rng) == 1 for _ in range(20))

    def test_fair_coin(self):
        rng = np.random.default_rng(7)
        draws = sample_rows(np.tile([0.5, 0.5], (10**5, 1)), rng)
        assert 0.49 <= (draws == 0).mean() <= 0.51

    def test_deterministic_given_stream(self):
        probs = random_probs(np.random.default_rng(0), 5)
        a = sample_rows(np.tile(probs, (100, 1)), np.random.default_rng(3))
        b = sample_rows(np.tile(probs, (100, 1)), np.random.default_rng(3))
        npt.assert_array_equal(a, b)

    def test_never_draws_zero_mass(self, rng):
        probs = np.array([0.3, 0.7, 0.0])
        u = np.array([0.0, 0.3, 0.9999999999999999, 1.0 - 1e-17])
        npt.assert_array_equal(sample_rows(np.tile(probs, (4, 1)), None, u=u), [0, 1, 1, 1])


def _random_tables(rng, v, L, zeros=0):
    return [np.array([random_probs(rng, v, zeros) for _ in range(v ** d)]) for d in range(L)]


class TestSeqProb:
    def test_single_position(self):
        d = FactorizedSeqDist.independent([[0.2, 0.8]])
        assert seq_prob(d, [1]) == 0.8

    def test_uniform(self):
        d = FactorizedSeqDist(5, 3, lambda ctx: np.full(5, 0.2))
        npt.assert_allclose(seq_prob(d, [4, 0, 2]), 5.0**-3)

    @pytest.mark.parametrize("v, L", [(2, 4), (3, 3), (5, 2), (8, 2), (4, 4)])
    def test_enumeration_sums_to_one(self, rng, v, L):
        d = FactorizedSeqDist.from_tables(_random_tables(rng, v, L, zeros=1))
        total = sum(seq_prob(d, x) for x in itertools.product(range(v), repeat=L))
        npt.assert_allclose(total, 1.0, atol=1e-9)

    def test_length_mismatch(self):
        d = FactorizedSeqDist.independent([[0.5, 0.5]] * 2)
        with pytest.raises(DomainError):
            seq_prob(d, [0])
        with pytest.raises(DomainError):
            seq_prob(d, [0, 2])

    def test_conditional_shape_checked(self):
        d = FactorizedSeqDist(3, 2, lambda ctx: np.ones(2) / 2)
        with pytest.raises(DomainError):
            d.cond(())

    def test_tables_match_callable(self, rng):
        tables = _random_tables(rng, 3, 3)
        d = FactorizedSeqDist.from_tables(tables)
        slow = FactorizedSeqDist(3, 3, d.conditional)
        for a, b in zip(d.tables, slow.tables):
            npt.assert_array_equal(a, b)

    def test_temper_seq_per_conditional(self, rng):
        d = FactorizedSeqDist.from_tables(_random_tables(rng, 3, 2))
        dt = temper_seq(d, 0.6)
        x = (2, 1)
        expect = temper_probs(d.cond(()), 0.6)[2] * temper_probs(d.cond((2,)), 0.6)[1]
        npt.assert_allclose(seq_prob(dt, x), expect, rtol=1e-13)
