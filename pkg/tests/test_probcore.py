import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import GOF_SIGNIFICANCE, categorical_gof_pvalue, poisson_gof_pvalue
from shufflepriv import DiscreteDistribution, Histogram, InvalidParameterError, RandomSource
from shufflepriv.probcore import (
    l2_distance_sq,
    make_far_distribution,
    sample_categorical,
    sample_poisson,
    tv_distance,
)


def random_distribution(k, seed):
    w = np.random.default_rng(seed).random(k) + 1e-3
    return DiscreteDistribution(w / w.sum())


distributions = st.tuples(st.integers(2, 12), st.integers(0, 2**32 - 1)).map(lambda a: random_distribution(*a))


class TestDiscreteDistribution:
    def test_rejects_unnormalised(self):
        with pytest.raises(InvalidParameterError):
            DiscreteDistribution([0.5, 0.4])

    def test_rejects_negative(self):
        with pytest.raises(InvalidParameterError):
            DiscreteDistribution([1.5, -0.5])

    def test_tolerance_is_tight(self):
        DiscreteDistribution([0.5, 0.5 + 5e-13])
        with pytest.raises(InvalidParameterError):
            DiscreteDistribution([0.5, 0.5 + 1e-11])

    def test_no_silent_renormalisation(self):
        with pytest.raises(InvalidParameterError):
            DiscreteDistribution.from_weights([0.5, 0.5 + 1e-6])
        d = DiscreteDistribution.from_weights([0.5, 0.5 + 1e-10], tol=1e-9)
        assert math.fsum(d.probs) == pytest.approx(1, abs=1e-15)

    def test_input_array_not_frozen(self):
        w = np.array([0.25, 0.75])
        DiscreteDistribution(w)
        w[0] = 0.3  # caller's array stays writable


def test_histogram_total():
    h = Histogram.from_symbols([0, 2, 2, 3], k=4)
    assert list(h.counts) == [1, 0, 2, 1]
    assert h.total == 4


class TestRandomSource:
    def test_same_stream_same_draws(self):
        a = RandomSource(7, 3).gen.random(5)
        b = RandomSource(7, 3).gen.random(5)
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        assert not np.array_equal(RandomSource(7, 3).gen.random(5), RandomSource(7, 4).gen.random(5))

    def test_children_are_distinct(self):
        r = RandomSource(7, 3)
        assert not np.array_equal(r.child(0).gen.random(5), r.child(1).gen.random(5))

    def test_streams_uncorrelated(self):
        x = RandomSource(1, 0).gen.random(20000)
        y = RandomSource(1, 1).gen.random(20000)
        # |corr| below 4 standard errors
        assert abs(np.corrcoef(x, y)[0, 1]) < 4 / math.sqrt(20000)

    def test_rejects_out_of_range_seed(self):
        with pytest.raises(InvalidParameterError):
            RandomSource(-1)


class TestSamplePoisson:
    def test_zero_rate(self):
        for seed in range(5):
            assert sample_poisson(0, RandomSource(seed)) == 0

    @pytest.mark.parametrize("rate", [-1.0, math.inf, math.nan])
    def test_invalid_rate(self, rate):
        with pytest.raises(InvalidParameterError):
            sample_poisson(rate, RandomSource(0))

    def test_mean_rate_20(self):
        draws = sample_poisson(20, RandomSource(11), size=10**5)
        assert abs(draws.mean() - 20) <= 0.15

    def test_gof_rate_10(self):
        draws = sample_poisson(10, RandomSource(12), size=10**5)
        assert poisson_gof_pvalue(draws, 10, lo=0, hi=30) > GOF_SIGNIFICANCE

    def test_gof_large_rate(self):
        draws = sample_poisson(850, RandomSource(13), size=10**5)
        assert poisson_gof_pvalue(draws, 850) > GOF_SIGNIFICANCE


class TestSampleCategorical:
    def test_point_mass(self):
        d = DiscreteDistribution.point_mass(5, 2)
        assert set(sample_categorical(d, RandomSource(0), size=1000)) == {2}
        assert sample_categorical(d, RandomSource(1)) == 2

    def test_uniform_counts(self):
        x = sample_categorical(DiscreteDistribution.uniform(4), RandomSource(2), size=10**5)
        counts = np.bincount(x, minlength=4)
        assert np.all(np.abs(counts - 25000) <= 412)

    def test_biased_coin(self):
        x = sample_categorical(DiscreteDistribution([0.75, 0.25]), RandomSource(3), size=10**5)
        assert abs(np.sum(x == 0) - 75000) <= 411

    def test_gof(self):
        d = random_distribution(7, 4)
        x = sample_categorical(d, RandomSource(4), size=10**5)
        assert categorical_gof_pvalue(x, d.probs) > GOF_SIGNIFICANCE


class TestDistances:
    def test_tv_examples(self):
        u4 = DiscreteDistribution.uniform(4)
        assert tv_distance(u4, u4) == 0
        assert tv_distance(DiscreteDistribution([1, 0]), DiscreteDistribution([0, 1])) == 1
        assert tv_distance(DiscreteDistribution([0.4, 0.1, 0.4, 0.1]), u4) == pytest.approx(0.3, abs=1e-15)

    def test_l2_examples(self):
        u2 = DiscreteDistribution.uniform(2)
        assert l2_distance_sq(u2, u2) == 0
        assert l2_distance_sq(DiscreteDistribution([0.75, 0.25]), u2) == pytest.approx(0.125, abs=1e-15)
        assert l2_distance_sq(DiscreteDistribution([1, 0]), DiscreteDistribution([0, 1])) == 2

    def test_mismatched_k(self):
        with pytest.raises(InvalidParameterError):
            tv_distance(DiscreteDistribution.uniform(2), DiscreteDistribution.uniform(3))
        with pytest.raises(InvalidParameterError):
            l2_distance_sq(DiscreteDistribution.uniform(2), DiscreteDistribution.uniform(3))

    @given(distributions, st.integers(0, 2**32 - 1), st.integers(0, 2**32 - 1))
    @settings(max_examples=200)
    def test_tv_is_metric(self, p, s1, s2):
        q = random_distribution(p.k, s1)
        r = random_distribution(p.k, s2)
        assert tv_distance(p, q) == pytest.approx(tv_distance(q, p), abs=1e-15)
        assert tv_distance(p, p) == 0
        assert tv_distance(p, q) <= tv_distance(p, r) + tv_distance(r, q) + 1e-12
        assert 0 <= tv_distance(p, q) <= 1

    @given(distributions)
    @settings(max_examples=200)
    def test_cauchy_schwarz(self, p):
        u = DiscreteDistribution.uniform(p.k)
        assert p.k * l2_distance_sq(p, u) >= (2 * tv_distance(p, u)) ** 2 - 1e-12


class TestFarDistribution:
    def test_examples(self):
        assert np.allclose(make_far_distribution(2, 0.25).probs, [0.75, 0.25], atol=1e-15)
        assert np.allclose(make_far_distribution(4, 0.1).probs, [0.3, 0.2, 0.3, 0.2], atol=1e-15)

    @given(st.integers(1, 50).map(lambda h: 2 * h), st.floats(1e-6, 0.5))
    def test_tv_exact(self, k, a):
        d = make_far_distribution(k, a)
        assert tv_distance(d, DiscreteDistribution.uniform(k)) == pytest.approx(a, abs=1e-12)

    def test_odd_k(self):
        with pytest.raises(InvalidParameterError):
            make_far_distribution(5, 0.1)

    @pytest.mark.parametrize("a", [0.0, 0.6])
    def test_alpha_range(self, a):
        with pytest.raises(InvalidParameterError):
            make_far_distribution(4, a)


@pytest.mark.parametrize("lam", [2, 10, 20])
@pytest.mark.parametrize("p", [0.25, 0.5, 0.9])
def test_binomial_of_poisson(lam, p):
    rng = RandomSource(100, int(lam * 10 + p * 100))
    n = sample_poisson(lam, rng, size=10**5)
    thinned = rng.gen.binomial(n, p)
    assert poisson_gof_pvalue(thinned, lam * p, lo=0) > GOF_SIGNIFICANCE
