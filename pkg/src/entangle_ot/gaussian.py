"""Closed-form W2 between Gaussians and the scaled-covariance decomposition.

For a joint Gaussian over ``(x, y)`` and a second one with the same
covariance scaled by ``s**2``, the squared W2 splits into the label-block
term plus the expected conditional term along the map
``T(y) = mu'_y + s (y - mu_y)``. :func:`verify_scaled_decomposition`
evaluates both sides independently; the right side is integrated numerically.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import product

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from .bounds import BoundReport, make_report
from .errors import NotSPD, QuadratureNotConverged

SPD_TOL = 1e-10
CLAMP = 1e-12


def _check_spd(s, name="covariance"):
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise NotSPD(f"{name} must be square")
    if not np.allclose(s, s.T, atol=1e-12, rtol=1e-10):
        raise NotSPD(f"{name} is not symmetric")
    if np.linalg.eigvalsh(s).min() <= SPD_TOL:
        raise NotSPD(f"{name} is not positive definite")
    return 0.5 * (s + s.T)


def sqrtm_psd(a, check=True):
    """Symmetric square root via eigendecomposition, eigenvalues clamped at 1e-12."""
    a = 0.5 * (np.asarray(a, dtype=float) + np.asarray(a, dtype=float).T)
    vals, vecs = np.linalg.eigh(a)
    r = (vecs * np.sqrt(np.maximum(vals, CLAMP))) @ vecs.T
    if check:
        scale = max(1.0, float(np.abs(a).max()))
        if np.abs(r @ r - a).max() > 1e-9 * scale:
            raise NotSPD("matrix square root failed to verify")
    return r


def gaussian_w2_squared(mu, sigma, mu_prime, sigma_prime) -> float:
    mu, mu_prime = np.atleast_1d(np.asarray(mu, float)), np.atleast_1d(np.asarray(mu_prime, float))
    sigma = _check_spd(np.atleast_2d(sigma), "sigma")
    sigma_prime = _check_spd(np.atleast_2d(sigma_prime), "sigma_prime")
    if mu.shape != mu_prime.shape or sigma.shape != sigma_prime.shape or sigma.shape[0] != mu.size:
        raise ValueError("Gaussian parameter shapes do not match")
    r = sqrtm_psd(sigma)
    cross = sqrtm_psd(r @ sigma_prime @ r)
    val = float(np.sum((mu - mu_prime) ** 2) + np.trace(sigma + sigma_prime - 2 * cross))
    return max(val, 0.0)


@dataclass(frozen=True)
class GaussianPair:
    mu: np.ndarray
    mu_prime: np.ndarray
    sigma: np.ndarray
    scale: float
    dim_x: int

    def __post_init__(self):
        mu = np.asarray(self.mu, float)
        mp = np.asarray(self.mu_prime, float)
        sg = _check_spd(self.sigma, "sigma")
        if mu.shape != mp.shape or sg.shape != (mu.size, mu.size):
            raise ValueError("mean and covariance dimensions disagree")
        if not (0 < self.dim_x < mu.size):
            raise ValueError("dim_x must split the joint into two nonempty blocks")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "mu_prime", mp)
        object.__setattr__(self, "sigma", sg)

    @property
    def sigma_prime(self):
        return self.scale ** 2 * self.sigma

    def blocks(self):
        k = self.dim_x
        s = self.sigma
        return s[:k, :k], s[:k, k:], s[k:, :k], s[k:, k:]

    def to_dict(self):
        return {"mu": self.mu.tolist(), "mu_prime": self.mu_prime.tolist(), "sigma": self.sigma.tolist(),
                "scale": float(self.scale), "dim_x": int(self.dim_x)}

    @classmethod
    def from_dict(cls, d):
        extra = set(d) - {"mu", "mu_prime", "sigma", "scale", "dim_x"}
        if extra:
            raise ValueError(f"unknown keys {sorted(extra)}")
        for key in ("mu", "mu_prime", "sigma"):
            if not np.all(np.isfinite(np.asarray(d[key], float))):
                raise ValueError(f"{key} must be finite")
        return cls(d["mu"], d["mu_prime"], d["sigma"], float(d["scale"]), int(d["dim_x"]))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def random_pair(rng, dim_x, dim_y, scale, diagonal=False) -> GaussianPair:
    d = dim_x + dim_y
    if diagonal:
        sigma = np.diag(rng.uniform(0.2, 2.0, d))
    else:
        a = rng.normal(size=(d, d))
        sigma = a @ a.T / d + 0.2 * np.eye(d)
    return GaussianPair(rng.normal(size=d), rng.normal(size=d), sigma, scale, dim_x)


def _conditional_parts(pair):
    sxx, sxy, syx, syy = pair.blocks()
    gain = sxy @ np.linalg.inv(syy)
    return gain, sxx - gain @ syx, syy


def conditional_cost(pair, y):
    """``W2^2(p_{x|y}, q_{x|T(y)})`` for each row of ``y``."""
    k = pair.dim_x
    mu, mp, s = pair.mu, pair.mu_prime, pair.scale
    gain, cond_cov, _ = _conditional_parts(pair)
    y = np.atleast_2d(y)
    ty = mp[k:] + s * (y - mu[k:])
    m_p = mu[:k] + (y - mu[k:]) @ gain.T
    m_q = mp[:k] + (ty - mp[k:]) @ gain.T
    cov_term = gaussian_w2_squared(np.zeros(k), cond_cov, np.zeros(k), s * s * cond_cov)
    return np.sum((m_p - m_q) ** 2, axis=1) + cov_term


def _hermite_expectation(pair, order):
    """Tensor Gauss-Hermite estimate of ``E_y[conditional_cost]``, y ~ N(mu_y, S_y)."""
    k = pair.dim_x
    _, _, syy = _conditional_parts(pair)
    chol = np.linalg.cholesky(syy)
    nodes, weights = hermegauss(order)
    weights = weights / weights.sum()
    dy = syy.shape[0]
    z = np.array(list(product(nodes, repeat=dy)))
    w = np.prod(np.array(list(product(weights, repeat=dy))), axis=1)
    y = pair.mu[k:] + z @ chol.T
    return float(w @ conditional_cost(pair, y))


def expected_conditional(pair, method="quadrature", samples=100_000, seed=0, order=3):
    """Right-side conditional term and its standard error (0 for quadrature)."""
    if method == "quadrature":
        lo = _hermite_expectation(pair, order)
        hi = _hermite_expectation(pair, order + 2)
        if abs(hi - lo) > 1e-9 * max(1.0, abs(hi)):
            raise QuadratureNotConverged(f"quadrature changed by {abs(hi - lo):.3e}")
        return hi, 0.0
    if method == "montecarlo":
        k = pair.dim_x
        _, _, syy = _conditional_parts(pair)
        rng = np.random.Generator(np.random.Philox(seed))
        y = rng.multivariate_normal(pair.mu[k:], syy, size=samples)
        vals = conditional_cost(pair, y)
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples))
    raise ValueError(f"unknown integration method {method!r}")


def verify_scaled_decomposition(pair: GaussianPair, method="quadrature", samples=100_000, seed=0,
                                rel_tol=1e-6) -> BoundReport:
    """Joint W2^2 against label-block W2^2 plus the expected conditional W2^2.

    Passes when the two sides agree within ``max(rel_tol * scale, 3 SE)``.
    """
    k = pair.dim_x
    lhs = gaussian_w2_squared(pair.mu, pair.sigma, pair.mu_prime, pair.sigma_prime)
    _, _, syy = _conditional_parts(pair)
    marginal = gaussian_w2_squared(pair.mu[k:], syy, pair.mu_prime[k:], pair.scale ** 2 * syy)
    cond, se = expected_conditional(pair, method, samples, seed)
    rhs = marginal + cond
    allowed = max(rel_tol * max(1.0, abs(lhs)), 3 * se)
    diff = abs(lhs - rhs)
    return BoundReport("gaussian_decomposition", lhs, rhs, allowed - diff, bool(diff <= allowed),
                       {"marginal": marginal, "conditional": cond, "se": se, "method": method})


def cross_term_check(pair: GaussianPair, samples=100_000, seed=0) -> BoundReport:
    """Cauchy-Schwarz control of the joint cost ``(|x - x'| + |y - y'|)^2``.

    Samples the coupling built from ``T`` and the conditional affine maps and
    compares the sample mean with ``A + B + 2 sqrt(A B)``, where A and B are
    the sample means of the squared label and input displacements.
    """
    k = pair.dim_x
    s = pair.scale
    gain, cond_cov, syy = _conditional_parts(pair)
    rng = np.random.Generator(np.random.Philox(seed))
    y = rng.multivariate_normal(pair.mu[k:], syy, size=samples)
    m_p = pair.mu[:k] + (y - pair.mu[k:]) @ gain.T
    x = m_p + rng.multivariate_normal(np.zeros(k), cond_cov, size=samples)
    ty = pair.mu_prime[k:] + s * (y - pair.mu[k:])
    m_q = pair.mu_prime[:k] + (ty - pair.mu_prime[k:]) @ gain.T
    tx = m_q + s * (x - m_p)
    dy = np.linalg.norm(y - ty, axis=1)
    dx = np.linalg.norm(x - tx, axis=1)
    a, b = float(np.mean(dy ** 2)), float(np.mean(dx ** 2))
    return make_report("gaussian_cross_term", float(np.mean((dx + dy) ** 2)), a + b + 2 * math.sqrt(a * b),
                       marginal=a, conditional=b)
