import numpy as np
import pytest

from entangle_ot.errors import NotSPD
from entangle_ot.gaussian import (
    GaussianPair,
    cross_term_check,
    expected_conditional,
    gaussian_w2_squared,
    random_pair,
    sqrtm_psd,
    verify_scaled_decomposition,
)


def test_mean_only_spot_value():
    s = np.eye(4)
    assert gaussian_w2_squared(np.zeros(4), s, np.array([3.0, 4.0, 0, 0]), s) == pytest.approx(25.0, abs=1e-12)


def test_scale_only_spot_value():
    sigma = np.diag([1.0, 2.0, 0.5, 1.5])
    for s in (0.3, 1.0, 2.0, 3.0):
        got = gaussian_w2_squared(np.zeros(4), sigma, np.zeros(4), s * s * sigma)
        assert got == pytest.approx((s - 1) ** 2 * np.trace(sigma), abs=1e-12)


def test_one_dimensional_formula(rng):
    for _ in range(20):
        m1, m2 = rng.normal(size=2)
        v1, v2 = rng.uniform(0.1, 3, 2)
        expected = (m1 - m2) ** 2 + (np.sqrt(v1) - np.sqrt(v2)) ** 2
        assert gaussian_w2_squared([m1], [[v1]], [m2], [[v2]]) == pytest.approx(expected, abs=1e-12)


def test_sqrtm_and_spd_check(rng):
    a = rng.normal(size=(3, 3))
    s = a @ a.T + np.eye(3)
    r = sqrtm_psd(s)
    np.testing.assert_allclose(r @ r, s, atol=1e-10)
    with pytest.raises(NotSPD):
        gaussian_w2_squared(np.zeros(2), np.diag([1.0, -1.0]), np.zeros(2), np.eye(2))


@pytest.mark.parametrize("dims", [(2, 2), (3, 3), (1, 2)])
def test_decomposition_quadrature(rng, dims):
    for _ in range(10):
        pair = random_pair(rng, *dims, scale=rng.uniform(0.3, 3))
        r = verify_scaled_decomposition(pair)
        assert r.passed, r


def test_decomposition_montecarlo(rng):
    pair = random_pair(rng, 2, 2, scale=1.7)
    r = verify_scaled_decomposition(pair, method="montecarlo", samples=20_000)
    assert r.passed and r.context["se"] > 0


def test_quadrature_is_exact_for_quadratic_cost(rng):
    pair = random_pair(rng, 2, 2, scale=0.6)
    mc, se = expected_conditional(pair, "montecarlo", samples=200_000, seed=1)
    quad, _ = expected_conditional(pair)
    assert abs(mc - quad) <= 4 * se


def test_cross_term_bound(rng):
    pair = random_pair(rng, 2, 2, scale=2.0)
    assert cross_term_check(pair, samples=5000).passed


def test_pair_validation_and_round_trip(tmp_path, rng):
    with pytest.raises(ValueError):
        GaussianPair(np.zeros(2), np.zeros(2), np.eye(2), 1.0, 2)
    with pytest.raises(ValueError):
        GaussianPair(np.zeros(2), np.zeros(2), np.eye(2), -1.0, 1)
    with pytest.raises(ValueError):
        GaussianPair.from_dict({"mu": [0, 0], "mu_prime": [0, 0], "sigma": [[1, 0], [0, 1]],
                                "scale": 1, "dim_x": 1, "extra": 1})
    pair = random_pair(rng, 2, 1, 1.5, diagonal=True)
    path = tmp_path / "g.json"
    pair.save(path)
    back = GaussianPair.load(path)
    np.testing.assert_array_equal(back.sigma, pair.sigma)
    assert back.scale == pair.scale
