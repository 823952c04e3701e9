import math

import numpy as np
import pytest
from scipy import stats

from thermoq.stochastic import (EULER_GAMMA, PowerDistribution, draw_tau, lhs_sample, lhs_unit,
                                params_from_moments, stream)


def test_gumbel_moment_inversion():
    p = params_from_moments(PowerDistribution("gumbel", mean=30000, std=6000))
    # scale = std*sqrt(6)/pi, loc = mean - gamma*scale, computed independently
    assert p["scale"] == pytest.approx(6000 * 6**0.5 / math.pi, rel=1e-12)
    assert p["scale"] == pytest.approx(4678.18, abs=0.01)
    assert p["loc"] == pytest.approx(30000 - 0.5772156649015329 * p["scale"], rel=1e-12)
    assert p["loc"] == pytest.approx(27299.7, abs=0.1)


def test_gumbel_sampled_moments():
    d = PowerDistribution("gumbel", mean=30000, std=6000)
    x = d.frozen().rvs(size=10**6, random_state=np.random.default_rng(0))
    assert abs(x.mean() / 30000 - 1) < 0.01
    assert abs(x.std() / 6000 - 1) < 0.01


def test_lognormal_moments():
    d = PowerDistribution("lognormal", mean=10.0, std=4.0)
    f = d.frozen()
    assert f.mean() == pytest.approx(10.0, rel=1e-12)
    assert f.std() == pytest.approx(4.0, rel=1e-12)


def test_passthrough():
    assert params_from_moments(PowerDistribution("normal", mean=35000, std=5000)) == {"loc": 35000, "scale": 5000}
    assert params_from_moments(PowerDistribution("uniform", lower=100, upper=12000)) == {"lower": 100, "upper": 12000}


@pytest.mark.parametrize("kw", [dict(kind="normal", mean=1, std=0), dict(kind="lognormal", mean=0, std=1),
                                dict(kind="uniform", lower=2, upper=1), dict(kind="weibull", mean=1, std=1)])
def test_invalid_distributions(kw):
    with pytest.raises(ValueError):
        PowerDistribution(**kw)


def test_euler_gamma():
    assert EULER_GAMMA == 0.5772156649015329


def test_lhs_quartiles():
    u = lhs_unit(4, 1, stream(0, "t"))[:, 0]
    assert sorted(np.floor(u * 4).astype(int)) == [0, 1, 2, 3]


def test_lhs_strata_through_cdf():
    dists = [PowerDistribution("normal", mean=35000, std=5000), PowerDistribution("gumbel", mean=3, std=1)]
    x = lhs_sample(50, dists, stream(3, "t"))
    for j, d in enumerate(dists):
        strata = np.floor(d.cdf(x[:, j]) * 50).astype(int)
        assert sorted(strata) == list(range(50))


def test_lhs_single_draw():
    d = PowerDistribution("uniform", lower=100, upper=12000)
    x = lhs_sample(1, [d], stream(0, "t"))
    assert 100 < x[0, 0] < 12000


def test_lhs_normal_mean():
    x = lhs_sample(10**4, [PowerDistribution("normal", mean=35000, std=5000)], stream(1, "t"))
    assert abs(x.mean() - 35000) < 200


@pytest.mark.parametrize("d", [PowerDistribution("normal", mean=35000, std=5000),
                               PowerDistribution("gumbel", mean=30000, std=6000),
                               PowerDistribution("lognormal", mean=10, std=4),
                               PowerDistribution("uniform", lower=100, upper=12000)])
def test_lhs_ks(d):
    x = lhs_sample(10**4, [d], stream(2, "ks"))[:, 0]
    assert stats.kstest(x, d.cdf).pvalue > 0.01


def test_lhs_reproducible():
    dists = [PowerDistribution("normal", mean=1, std=1)] * 3
    a = lhs_sample(20, dists, stream(9, "data"))
    b = lhs_sample(20, dists, stream(9, "data"))
    assert a.tobytes() == b.tobytes()


def test_tau_open_interval_and_mean():
    t = draw_tau(stream(5, "tau"), 10**5)
    assert t.min() > 0 and t.max() < 1
    assert abs(t.mean() - 0.5) < 0.005


def test_tau_reproducible():
    assert np.array_equal(draw_tau(stream(1, "tau", 3), 10), draw_tau(stream(1, "tau", 3), 10))
    assert not np.array_equal(draw_tau(stream(1, "tau", 3), 10), draw_tau(stream(1, "tau", 4), 10))


def test_streams_independent_by_name():
    assert stream(0, "a").random() != stream(0, "b").random()


def test_dist_dict_round_trip():
    for d in [PowerDistribution("uniform", lower=1, upper=2), PowerDistribution("gumbel", mean=5, std=1)]:
        assert PowerDistribution.from_dict(d.to_dict()) == d
