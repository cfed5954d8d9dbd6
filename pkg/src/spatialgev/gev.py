"""GEV distribution primitives.

All depths are in inches. The shape convention is the climatological one:
``xi > 0`` is the heavy (Frechet) tail, so ``scipy.stats.genextreme`` uses
``c = -xi``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GUMBEL_TOL = 1e-6


@dataclass(frozen=True)
class GevParams:
    """Location ``mu``, scale ``sigma`` (> 0) and shape ``xi``."""

    mu: float
    sigma: float
    xi: float

    def __post_init__(self):
        for name in ("mu", "sigma", "xi"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"GEV parameter {name} must be finite")
        if self.sigma <= 0:
            raise ValueError(f"GEV scale must be positive, got {self.sigma}")

    def in_support(self, y) -> np.ndarray:
        if self.xi == 0:
            return np.isfinite(y)
        return 1.0 + self.xi * (np.asarray(y) - self.mu) / self.sigma > 0

    def lower_bound(self) -> float:
        """Lower support bound (``-inf`` unless ``xi > 0``)."""
        if self.xi > 0:
            return self.mu - self.sigma / self.xi
        return -np.inf

    def upper_bound(self) -> float:
        if self.xi < 0:
            return self.mu - self.sigma / self.xi
        return np.inf


@dataclass(frozen=True)
class ReturnPeriod:
    years: float

    def __post_init__(self):
        if not np.isfinite(self.years) or self.years <= 1:
            raise ValueError(f"return period must exceed 1 year, got {self.years}")

    @property
    def probability(self) -> float:
        """Annual non-exceedance probability ``1 - 1/T``."""
        return 1.0 - 1.0 / self.years


def _check_inputs(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input to GEV function")


def _unpack(params):
    if isinstance(params, GevParams):
        return params.mu, params.sigma, params.xi
    mu, sigma, xi = params
    return mu, sigma, xi


# ---------------------------------------------------------------------------
# Vectorized kernels (no validation; used on hot paths)
# ---------------------------------------------------------------------------


def _gumbel_branch(z, sigma, xi):
    """Gumbel log-density plus its first-order shape correction.

    The correction keeps the branch consistent with the shape gradient; it is
    dropped where the base density has already underflowed to ``-inf``.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        ez = np.exp(-z)
        dxi = 0.5 * z * z * (1.0 - ez) - z
        base = -np.log(sigma) - z - ez
        val = base + xi * dxi
    return np.where(np.isfinite(base), val, -np.inf), dxi


def logpdf_array(y, mu, sigma, xi):
    """Broadcasting GEV log-density; ``-inf`` outside the support."""
    y, mu, sigma, xi = np.broadcast_arrays(
        np.asarray(y, float), np.asarray(mu, float),
        np.asarray(sigma, float), np.asarray(xi, float),
    )
    z = (y - mu) / sigma
    out = np.full(z.shape, -np.inf)
    small = np.abs(xi) < GUMBEL_TOL

    if np.any(small):
        out[small], _ = _gumbel_branch(z[small], sigma[small], xi[small])

    big = ~small
    if np.any(big):
        xb, zb = xi[big], z[big]
        t = 1.0 + xb * zb
        ok = t > 0
        vals = np.full(xb.shape, -np.inf)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            lt = np.log1p(xb[ok] * zb[ok])
            vals[ok] = (-np.log(sigma[big][ok]) - (1.0 + 1.0 / xb[ok]) * lt
                        - np.exp(-lt / xb[ok]))
        out[big] = vals
    return out


def _shape_ratio(u):
    """``(log1p(u)/u - 1/(1+u)) / u``, by series where cancellation bites."""
    u = np.asarray(u, float)
    out = np.empty(u.shape)
    near = np.abs(u) < 1e-2
    un = u[near]
    # coefficient of u**k is (-1)**k (k + 1) / (k + 2)
    acc = np.zeros_like(un)
    for k in range(7, -1, -1):
        acc = acc * un + (-1) ** k * (k + 1) / (k + 2)
    out[near] = acc
    uf = u[~near]
    out[~near] = (np.log1p(uf) / uf - 1.0 / (1.0 + uf)) / uf
    return out


def logpdf_and_grad_array(y, mu, sigma, xi):
    """Log-density and its partials w.r.t. (mu, sigma, xi).

    Inputs must lie strictly inside the support; out-of-support entries get
    ``-inf`` value and NaN gradients.
    """
    y, mu, sigma, xi = np.broadcast_arrays(
        np.asarray(y, float), np.asarray(mu, float),
        np.asarray(sigma, float), np.asarray(xi, float),
    )
    z = (y - mu) / sigma
    shape = z.shape
    val = np.full(shape, -np.inf)
    gmu = np.full(shape, np.nan)
    gsig = np.full(shape, np.nan)
    gxi = np.full(shape, np.nan)
    small = np.abs(xi) < GUMBEL_TOL

    if np.any(small):
        zs, ss = z[small], sigma[small]
        vs, dxi = _gumbel_branch(zs, ss, xi[small])
        with np.errstate(over="ignore", invalid="ignore"):
            ez = np.exp(-zs)
            gm = (1.0 - ez) / ss
            gs = (zs - 1.0 - zs * ez) / ss
        dead = ~np.isfinite(vs)  # density underflowed far below the mode
        val[small] = vs
        gmu[small] = np.where(dead, np.nan, gm)
        gsig[small] = np.where(dead, np.nan, gs)
        gxi[small] = np.where(dead, np.nan, dxi)

    big = ~small
    if np.any(big):
        xb, zb, sb = xi[big], z[big], sigma[big]
        t = 1.0 + xb * zb
        ok = t > 0
        v = np.full(xb.shape, -np.inf)
        a = np.full(xb.shape, np.nan)
        b = np.full(xb.shape, np.nan)
        c = np.full(xb.shape, np.nan)
        xo, zo, so, to = xb[ok], zb[ok], sb[ok], t[ok]
        with np.errstate(over="ignore", invalid="ignore"):
            lt = np.log1p(xo * zo)
            tpow = np.exp(-lt / xo)  # t^(-1/xi)
            v[ok] = -np.log(so) - (1.0 + 1.0 / xo) * lt - tpow
            a[ok] = ((1.0 + xo) - tpow) / (so * to)
            b[ok] = (-1.0 + zo * ((1.0 + xo) - tpow) / to) / so
            inner = zo * zo * _shape_ratio(xo * zo)
            c[ok] = (1.0 - tpow) * inner - zo / to
        val[big], gmu[big], gsig[big], gxi[big] = v, a, b, c
    return val, gmu, gsig, gxi


def cdf_array(y, mu, sigma, xi):
    y, mu, sigma, xi = np.broadcast_arrays(
        np.asarray(y, float), np.asarray(mu, float),
        np.asarray(sigma, float), np.asarray(xi, float),
    )
    z = (y - mu) / sigma
    out = np.empty(z.shape)
    small = np.abs(xi) < GUMBEL_TOL
    with np.errstate(over="ignore"):
        out[small] = np.exp(-np.exp(-z[small]))
    big = ~small
    xb, zb = xi[big], z[big]
    t = 1.0 + xb * zb
    res = np.where(xb > 0, 0.0, 1.0)  # value beyond the finite bound
    ok = t > 0
    with np.errstate(over="ignore"):
        res[ok] = np.exp(-np.exp(-np.log1p(xb[ok] * zb[ok]) / xb[ok]))
    out[big] = res
    return out


def quantile_array(p, mu, sigma, xi):
    p, mu, sigma, xi = np.broadcast_arrays(
        np.asarray(p, float), np.asarray(mu, float),
        np.asarray(sigma, float), np.asarray(xi, float),
    )
    w = -np.log(p)  # F = exp(-t^(-1/xi)) => t = w^(-xi)
    out = np.empty(p.shape)
    small = np.abs(xi) < GUMBEL_TOL
    out[small] = mu[small] - sigma[small] * np.log(w[small])
    big = ~small
    xb = xi[big]
    # (w^-xi - 1)/xi via expm1 for accuracy at small xi
    out[big] = mu[big] + sigma[big] * np.expm1(-xb * np.log(w[big])) / xb
    return out


# ---------------------------------------------------------------------------
# Public validated API
# ---------------------------------------------------------------------------


def gev_logpdf(y, params):
    """Log-density of the GEV at ``y``.

    Returns ``-inf`` outside the support rather than raising, so samplers can
    reject by value. Raises ``ValueError`` on non-finite input.
    """
    mu, sigma, xi = _unpack(params)
    _check_inputs(y, mu, sigma, xi)
    if np.any(np.asarray(sigma) <= 0):
        raise ValueError("GEV scale must be positive")
    out = logpdf_array(y, mu, sigma, xi)
    return out.item() if out.ndim == 0 else out


def gev_cdf(y, params):
    mu, sigma, xi = _unpack(params)
    _check_inputs(y, mu, sigma, xi)
    if np.any(np.asarray(sigma) <= 0):
        raise ValueError("GEV scale must be positive")
    out = cdf_array(y, mu, sigma, xi)
    return out.item() if out.ndim == 0 else out


def gev_quantile(p, params):
    """Inverse CDF. ``p`` must lie strictly in (0, 1)."""
    mu, sigma, xi = _unpack(params)
    _check_inputs(p, mu, sigma, xi)
    p_arr = np.asarray(p, float)
    if np.any((p_arr <= 0) | (p_arr >= 1)):
        raise ValueError("probability must lie strictly between 0 and 1")
    out = quantile_array(p_arr, mu, sigma, xi)
    return out.item() if out.ndim == 0 else out


def return_level(T, params):
    """Depth exceeded with annual probability ``1/T``."""
    if isinstance(T, ReturnPeriod):
        T = T.years
    T_arr = np.asarray(T, float)
    if np.any(~np.isfinite(T_arr)) or np.any(T_arr <= 1):
        raise ValueError("return period must exceed 1 year")
    return gev_quantile(1.0 - 1.0 / T_arr, params)


def gev_logpdf_grad(y, params):
    """Gradient of :func:`gev_logpdf` w.r.t. ``(mu, sigma, xi)``.

    Raises ``ValueError`` if ``y`` is on or outside the support boundary.
    """
    mu, sigma, xi = _unpack(params)
    _check_inputs(y, mu, sigma, xi)
    if np.any(np.asarray(sigma) <= 0):
        raise ValueError("GEV scale must be positive")
    _, gmu, gsig, gxi = logpdf_and_grad_array(y, mu, sigma, xi)
    if np.any(~np.isfinite(gmu)):
        raise ValueError("gradient undefined: observation on or outside the GEV support")
    if gmu.ndim == 0:
        return gmu.item(), gsig.item(), gxi.item()
    return gmu, gsig, gxi


def gev_sample(rng: np.random.Generator, size, mu, sigma, xi):
    """Inverse-transform GEV draws."""
    u = rng.uniform(size=size)
    u = np.clip(u, 1e-300, 1.0 - 1e-16)
    return quantile_array(u, mu, sigma, xi)
