"""Convergence diagnostics: rank-normalized split R-hat and effective sample size."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

RHAT_INF = 1e6


@dataclass(frozen=True)
class Diagnostics:
    names: list
    rhat: np.ndarray
    ess: np.ndarray
    zero_variance: np.ndarray
    n_divergent: int

    @property
    def max_rhat(self) -> float:
        return float(np.max(self.rhat)) if len(self.rhat) else 1.0

    def rows(self):
        for name, r, e, z in zip(self.names, self.rhat, self.ess, self.zero_variance):
            yield {"parameter": name, "rhat": float(r), "ess": float(e), "zero_variance": bool(z)}


def _chains(samples, index=None) -> np.ndarray:
    """Return a ``(chains, draws)`` array for one parameter."""
    if hasattr(samples, "draws"):
        arr = samples.draws[:, :, index]
    else:
        arr = np.asarray(samples, float)
        if arr.ndim == 3:
            arr = arr[:, :, index]
    if arr.ndim != 2:
        raise ValueError("expected draws shaped (chains, draws)")
    return arr


def _split(x):
    n = x.shape[1] // 2
    return np.concatenate([x[:, :n], x[:, x.shape[1] - n:]], axis=0)


def _basic_rhat(x):
    m, n = x.shape
    means = x.mean(axis=1)
    W = x.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if W <= 0:
        return np.inf if B > 0 else 1.0
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def _rank_normalize(x):
    ranks = stats.rankdata(x, method="average").reshape(x.shape)
    S = x.size
    return stats.norm.ppf((ranks - 0.375) / (S + 0.25))


def rhat_detail(samples, index=None):
    """``(rhat, zero_variance)``; see :func:`rhat`."""
    x = _chains(samples, index)
    m, n = x.shape
    if m < 2:
        raise ValueError("R-hat needs at least two chains")
    if n < 4:
        raise ValueError("R-hat needs at least four draws per chain")
    if np.ptp(x) == 0:
        return 1.0, True
    xs = _split(x)
    if np.all(xs.var(axis=1) == 0):
        # each half-chain constant but the constants differ
        return RHAT_INF, True
    bulk = _basic_rhat(_rank_normalize(xs))
    folded = np.abs(xs - np.median(xs))
    tail = _basic_rhat(_rank_normalize(folded)) if np.ptp(folded) > 0 else 1.0
    value = max(bulk, tail)
    if not np.isfinite(value):
        value = RHAT_INF
    return float(value), False


def rhat(samples, index=None) -> float:
    """Rank-normalized split R-hat (max of bulk and folded-tail versions).

    All-equal constant chains give the sentinel 1.0; chains stuck at different
    constants give ``RHAT_INF``. Use :func:`rhat_detail` to get the
    zero-variance flag.
    """
    return rhat_detail(samples, index)[0]


def _autocovariance(x):
    n = len(x)
    m = 1 << (2 * n - 1).bit_length()
    xc = x - x.mean()
    f = np.fft.rfft(xc, m)
    acov = np.fft.irfft(f * np.conjugate(f), m)[:n] / n
    return acov


def ess(samples, index=None) -> float:
    """Multi-chain effective sample size with Geyer's monotone truncation.

    Returns NaN for degenerate (constant) input.
    """
    x = _chains(samples, index)
    m, n = x.shape
    if m < 2:
        raise ValueError("ESS needs at least two chains")
    if n < 4:
        raise ValueError("ESS needs at least four draws per chain")
    if np.ptp(x) == 0 or np.all(x.var(axis=1) == 0):
        return float("nan")
    acov = np.array([_autocovariance(c) for c in x])
    chain_var = acov[:, 0] * n / (n - 1.0)
    W = chain_var.mean()
    B = n * x.mean(axis=1).var(ddof=1)
    var_plus = (n - 1.0) / n * W + B / n
    rho = 1.0 - (W - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # initial positive sequence over pairs, then monotone
    t = 0
    pair_sums = []
    while t + 1 < n:
        s = rho[t] + rho[t + 1]
        if s < 0:
            break
        pair_sums.append(s)
        t += 2
    pair_sums = np.minimum.accumulate(np.array(pair_sums)) if pair_sums else np.array([1.0])
    tau = -1.0 + 2.0 * pair_sums.sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def summarize(samples, names=None) -> Diagnostics:
    """Per-parameter R-hat/ESS for PosteriorSamples or a ``(chains, draws, dim)`` array."""
    if hasattr(samples, "draws"):
        dim, default_names, n_div = samples.dim, samples.param_names, samples.n_divergent
    else:
        samples = np.asarray(samples, float)
        if samples.ndim != 3:
            raise ValueError("expected draws shaped (chains, draws, dim)")
        dim, default_names, n_div = samples.shape[2], None, 0
    names = list(names or default_names or [f"theta[{i}]" for i in range(dim)])
    r = np.empty(dim)
    e = np.empty(dim)
    z = np.zeros(dim, dtype=bool)
    for i in range(dim):
        r[i], z[i] = rhat_detail(samples, i)
        e[i] = ess(samples, i)
    return Diagnostics(names=names, rhat=r, ess=e, zero_variance=z, n_divergent=n_div)
