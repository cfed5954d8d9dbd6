"""Exponential-kernel Gaussian process layer.

Distances are plain Euclidean on (lon, lat) degrees. Fields are zero mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

JITTER_START = 1e-8
JITTER_MAX = 1e-4
LOG_2PI = np.log(2.0 * np.pi)


class GPNumericalError(ArithmeticError):
    """Covariance could not be factorized even after jitter escalation."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


@dataclass(frozen=True)
class SiteSet:
    """Ordered site coordinates, shape ``(n, 2)`` as (lon, lat)."""

    coords: np.ndarray
    ids: tuple = field(default=())

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.coords, dtype=float))
        if c.ndim != 2 or c.shape[1] != 2:
            raise ValueError("site coordinates must have shape (n, 2)")
        if not np.all(np.isfinite(c)):
            raise ValueError("site coordinates must be finite")
        object.__setattr__(self, "coords", c)
        if self.ids and len(self.ids) != len(c):
            raise ValueError("site ids must match the number of sites")
        object.__setattr__(self, "ids", tuple(self.ids))

    def __len__(self):
        return len(self.coords)

    def subset(self, index) -> "SiteSet":
        index = np.asarray(index)
        ids = tuple(np.asarray(self.ids, dtype=object)[index]) if self.ids else ()
        return SiteSet(self.coords[index], ids)

    def check_distinct(self):
        d = distance_matrix(self.coords, self.coords)
        np.fill_diagonal(d, np.inf)
        if len(self) > 1 and d.min() <= 0:
            raise ValueError("duplicate site coordinates in SiteSet")


@dataclass(frozen=True)
class KernelConfig:
    """``K(d) = alpha**2 * exp(-d / rho)`` plus ``jitter`` on the diagonal.

    ``jitter=None`` means the relative policy: ``1e-8 * alpha**2`` escalated
    tenfold up to ``1e-4 * alpha**2`` until the Cholesky factorization succeeds.
    """

    alpha: float
    rho: float
    jitter: float | None = None

    def __post_init__(self):
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ValueError(f"kernel variance alpha must be positive, got {self.alpha}")
        if not (np.isfinite(self.rho) and self.rho > 0):
            raise ValueError(f"kernel length rho must be positive, got {self.rho}")
        if self.jitter is not None and self.jitter < 0:
            raise ValueError("jitter must be nonnegative")


def distance_matrix(a, b) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, float))
    b = np.atleast_2d(np.asarray(b, float))
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def exp_kernel(a, b, cfg: KernelConfig) -> float:
    d = float(np.linalg.norm(np.asarray(a, float) - np.asarray(b, float)))
    return cfg.alpha**2 * np.exp(-d / cfg.rho)


def cross_covariance(a, b, cfg: KernelConfig) -> np.ndarray:
    return cfg.alpha**2 * np.exp(-distance_matrix(a, b) / cfg.rho)


def _coords(sites):
    return sites.coords if isinstance(sites, SiteSet) else np.atleast_2d(np.asarray(sites, float))


def _factor(dist, alpha, rho, jitter):
    """Return (K, lower Cholesky factor, jitter used)."""
    base = alpha * alpha * np.exp(-dist / rho)
    base = 0.5 * (base + base.T)
    n = base.shape[0]
    if jitter is not None:
        schedule = [jitter]
    else:
        schedule = []
        j = JITTER_START
        while j <= JITTER_MAX * (1 + 1e-9):
            schedule.append(j * alpha * alpha)
            j *= 10.0
    for jit in schedule:
        K = base + jit * np.eye(n)
        try:
            L = linalg.cholesky(K, lower=True, check_finite=False)
        except linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            return K, L, jit
    min_eig = float(np.linalg.eigvalsh(base).min())
    raise GPNumericalError(
        f"covariance not positive definite after jitter escalation "
        f"(minimum eigenvalue estimate {min_eig:.3e})",
        min_eigenvalue=min_eig,
    )


def covariance_matrix(sites, cfg: KernelConfig) -> np.ndarray:
    """Symmetric covariance with jitter; guaranteed to be Cholesky-factorizable."""
    c = _coords(sites)
    if len(c) < 1:
        raise ValueError("need at least one site")
    K, _, _ = _factor(distance_matrix(c, c), cfg.alpha, cfg.rho, cfg.jitter)
    return K


def gp_logdensity(field_values, sites, cfg: KernelConfig) -> float:
    f = np.asarray(field_values, float)
    c = _coords(sites)
    if f.shape != (len(c),):
        raise ValueError("field length must equal the number of sites")
    _, L, _ = _factor(distance_matrix(c, c), cfg.alpha, cfg.rho, cfg.jitter)
    w = linalg.solve_triangular(L, f, lower=True, check_finite=False)
    return float(-0.5 * w @ w - np.log(np.diag(L)).sum() - 0.5 * len(f) * LOG_2PI)


def gp_logdensity_and_grad(field_values, dist, log_alpha, log_rho, jitter=None):
    """Zero-mean GP log-density with gradients.

    Args:
        field_values: latent values, shape ``(n,)``.
        dist: pairwise site distance matrix.
        log_alpha, log_rho: log kernel hyperparameters.
        jitter: absolute jitter, or ``None`` for the relative policy.

    Returns:
        ``(logp, d_field, d_log_alpha, d_log_rho)``.
    """
    alpha, rho = np.exp(log_alpha), np.exp(log_rho)
    K, L, jit = _factor(dist, alpha, rho, jitter)
    n = len(field_values)
    Linv = linalg.solve_triangular(L, np.eye(n), lower=True, check_finite=False)
    Kinv = Linv.T @ Linv
    a = Kinv @ field_values
    logp = -0.5 * field_values @ a - np.log(np.diag(L)).sum() - 0.5 * n * LOG_2PI
    W = np.outer(a, a) - Kinv
    R = K - jit * np.eye(n)
    # dK/dlog_alpha = 2K when jitter scales with alpha**2
    dK_dla = 2.0 * K if jitter is None else 2.0 * R
    dK_dlr = R * (dist / rho)
    g_la = 0.5 * np.sum(W * dK_dla)
    g_lr = 0.5 * np.sum(W * dK_dlr)
    return logp, -a, g_la, g_lr


def gp_condition(observed, observed_sites, target_sites, cfg: KernelConfig):
    """Gaussian conditional of a zero-mean field at new sites.

    Returns ``(mean, covariance)`` at the targets.
    """
    f = np.asarray(observed, float)
    A = _coords(observed_sites)
    B = _coords(target_sites)
    if len(A) == 0:
        raise ValueError("need at least one observed site")
    if f.shape != (len(A),):
        raise ValueError("observed field length must equal the number of observed sites")
    _, L, jit = _factor(distance_matrix(A, A), cfg.alpha, cfg.rho, cfg.jitter)
    K_ba = cross_covariance(B, A, cfg)
    K_bb = cross_covariance(B, B, cfg)
    V = linalg.solve_triangular(L, K_ba.T, lower=True, check_finite=False)
    w = linalg.solve_triangular(L, f, lower=True, check_finite=False)
    mean = V.T @ w
    cov = K_bb - V.T @ V
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def kriging_weights(observed_sites, target_sites, cfg: KernelConfig):
    """Weights ``W`` with conditional mean ``W @ f_A`` and marginal variances."""
    A = _coords(observed_sites)
    B = _coords(target_sites)
    _, L, _ = _factor(distance_matrix(A, A), cfg.alpha, cfg.rho, cfg.jitter)
    K_ba = cross_covariance(B, A, cfg)
    V = linalg.solve_triangular(L, K_ba.T, lower=True, check_finite=False)
    W = linalg.solve_triangular(L.T, V, lower=False, check_finite=False).T
    var = cfg.alpha**2 - np.sum(V * V, axis=0)
    return W, np.clip(var, 0.0, None)
