"""Proper scoring rules and PIT calibration for GEV posterior ensembles.

An ensemble is a set of posterior GEV parameter draws for one station-year,
given as three equal-length arrays ``(mu, sigma, xi)``. All scores are
negatively oriented (lower is better).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from . import gev

QS_PROBS = (0.9, 0.98, 0.99)
PIT_BINS = 10


@dataclass(frozen=True)
class PredictiveEnsemble:
    mu: np.ndarray
    sigma: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        mu, sigma, xi = (np.atleast_1d(np.asarray(a, float)) for a in (self.mu, self.sigma, self.xi))
        mu, sigma, xi = np.broadcast_arrays(mu, sigma, xi)
        if mu.size == 0:
            raise ValueError("predictive ensemble must be nonempty")
        if np.any(~np.isfinite(mu)) or np.any(~np.isfinite(xi)) or np.any(~(sigma > 0)):
            raise ValueError("invalid GEV draw in ensemble")
        object.__setattr__(self, "mu", mu.copy())
        object.__setattr__(self, "sigma", sigma.copy())
        object.__setattr__(self, "xi", xi.copy())

    @classmethod
    def from_params(cls, params) -> "PredictiveEnsemble":
        params = list(params)
        return cls([p.mu for p in params], [p.sigma for p in params], [p.xi for p in params])

    def __len__(self):
        return len(self.mu)


def log_score(y: float, ens: PredictiveEnsemble) -> float:
    """Negative log of the mixture predictive density at ``y``.

    Returns ``inf`` when ``y`` lies outside every draw's support.
    """
    lp = gev.logpdf_array(y, ens.mu, ens.sigma, ens.xi)
    if np.all(np.isneginf(lp)):
        return np.inf
    return float(-(logsumexp(lp) - np.log(len(lp))))


def pinball(u, p):
    u = np.asarray(u, float)
    return np.where(u > 0, p * u, (p - 1.0) * u)


def quantile_score(y: float, ens: PredictiveEnsemble, p: float) -> float:
    """Mean pinball loss of ``y`` against each draw's ``p``-quantile."""
    if not 0 < p < 1:
        raise ValueError("probability must lie strictly between 0 and 1")
    q = gev.quantile_array(p, ens.mu, ens.sigma, ens.xi)
    return float(np.mean(pinball(y - q, p)))


@dataclass(frozen=True)
class CrpsEstimate:
    value: float
    stderr: float

    def __float__(self):
        return self.value


def predictive_draws(ens: PredictiveEnsemble, size: int, rng: np.random.Generator) -> np.ndarray:
    """Sample the posterior-predictive mixture: pick a draw, then a GEV variate."""
    k = rng.integers(0, len(ens), size=size)
    return gev.gev_sample(rng, size, ens.mu[k], ens.sigma[k], ens.xi[k])


def crps(y: float, ens: PredictiveEnsemble, mc_draws: int = 4000, rng=None) -> CrpsEstimate:
    """Energy-form Monte-Carlo CRPS: ``E|X - y| - E|X - X'| / 2``.

    The pair term uses independent halves of the draw budget; the standard
    error comes from the per-pair terms.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    m = max(int(mc_draws) // 2, 1)
    x1 = predictive_draws(ens, m, rng)
    x2 = predictive_draws(ens, m, rng)
    terms = 0.5 * (np.abs(x1 - y) + np.abs(x2 - y)) - 0.5 * np.abs(x1 - x2)
    se = float(terms.std(ddof=1) / np.sqrt(m)) if m > 1 else float("nan")
    return CrpsEstimate(float(terms.mean()), se)


def crps_quadrature(y: float, cdf, lower: float, upper: float) -> float:
    """Reference CRPS by integrating ``(F(x) - 1{x >= y})**2`` numerically."""
    from scipy import integrate

    left, _ = integrate.quad(lambda x: cdf(x) ** 2, lower, y, limit=500)
    right, _ = integrate.quad(lambda x: (1.0 - cdf(x)) ** 2, y, upper, limit=500)
    return left + right


def pit_values(y, ensembles) -> np.ndarray:
    """Posterior-mean CDF of each observation under its ensemble."""
    return np.array([float(np.mean(gev.cdf_array(v, e.mu, e.sigma, e.xi))) for v, e in zip(y, ensembles)])


@dataclass(frozen=True)
class PitHistogram:
    counts: np.ndarray
    edges: np.ndarray
    values: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def max_deviation(self) -> float:
        """Largest absolute gap between a bin count and ``N / bins``."""
        return float(np.max(np.abs(self.counts - self.n / len(self.counts))))

    def within_binomial_bound(self, significance: float = 0.001) -> bool:
        lo, hi = binomial_band(self.n, len(self.counts), significance)
        return bool(np.all((self.counts >= lo) & (self.counts <= hi)))


def binomial_band(n: int, bins: int = PIT_BINS, significance: float = 0.001):
    """Per-bin acceptance interval for counts of a uniform PIT.

    Two-sided, Bonferroni-corrected over ``bins`` bins.
    """
    a = significance / bins
    dist = stats.binom(n, 1.0 / bins)
    return int(dist.ppf(a / 2)), int(dist.isf(a / 2))


def pit_histogram_from_values(values, bins: int = PIT_BINS) -> PitHistogram:
    values = np.clip(np.asarray(values, float), 0.0, 1.0)
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts, _ = np.histogram(values, bins=edges)
    return PitHistogram(counts=counts, edges=edges, values=values)


def pit_histogram(y, ensembles, bins: int = PIT_BINS) -> PitHistogram:
    return pit_histogram_from_values(pit_values(y, ensembles), bins)


def score_observation(y: float, ens: PredictiveEnsemble, rng, mc_draws: int = 4000) -> dict:
    row = {"LogS": log_score(y, ens)}
    for p in QS_PROBS:
        row[f"QS({p})"] = quantile_score(y, ens, p)
    row["CRPS"] = crps(y, ens, mc_draws, rng).value
    return row
