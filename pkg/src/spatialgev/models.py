"""Hierarchical GEV model families as differentiable log-posteriors.

Every family maps an unconstrained parameter vector ``theta`` to per-observation
GEV parameters. Positive quantities (scale, shape, kernel hyperparameters) are
carried on the log scale and the prior includes the matching log-Jacobians, so
``logp_and_grad`` is a density on the unconstrained space.

Layouts (``n`` stations)::

    pooled_stationary        mu[n] log_sigma[n] xi_raw ka(mu) kr(mu) ka(ls) kr(ls)
    nonpooled_nonstationary  mu0[n] log_sigma0[n] beta_mu[n] beta_sigma[n] xi_raw[n]
    svc                      mu0[n] log_sigma0[n] beta_mu[n] beta_sigma[n] xi_raw
                             then (log_alpha, log_rho) for each of the four fields
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from . import gev
from .gp import GPNumericalError, SiteSet, distance_matrix, gp_logdensity_and_grad

LOG_2PI = np.log(2.0 * np.pi)


class Family(str, enum.Enum):
    POOLED_STATIONARY = "pooled_stationary"
    NONPOOLED_NONSTATIONARY = "nonpooled_nonstationary"
    SVC = "svc"

    @classmethod
    def parse(cls, value) -> "Family":
        if isinstance(value, cls):
            return value
        aliases = {
            "pooled": cls.POOLED_STATIONARY,
            "stationary": cls.POOLED_STATIONARY,
            "nonpooled": cls.NONPOOLED_NONSTATIONARY,
            "spatially_varying_covariates": cls.SVC,
        }
        key = str(value).strip().lower().replace("-", "_")
        if key in aliases:
            return aliases[key]
        return cls(key)

    @property
    def label(self) -> str:
        return {
            Family.POOLED_STATIONARY: "Pooled Stationary",
            Family.NONPOOLED_NONSTATIONARY: "Nonpooled Nonstationary",
            Family.SVC: "Spatially Varying Covariates",
        }[self]


# ---------------------------------------------------------------------------
# Prior densities
# ---------------------------------------------------------------------------


def normal_logpdf(x, mean, sd):
    z = (np.asarray(x, float) - mean) / sd
    return -0.5 * z * z - np.log(sd) - 0.5 * LOG_2PI


def half_normal_logpdf(x, sd):
    x = np.asarray(x, float)
    out = np.log(2.0) + normal_logpdf(x, 0.0, sd)
    return np.where(x >= 0, out, -np.inf)


def gamma_logpdf(x, shape, rate):
    x = np.asarray(x, float)
    with np.errstate(divide="ignore"):
        out = shape * np.log(rate) - gammaln(shape) + (shape - 1) * np.log(x) - rate * x
    return np.where(x > 0, out, -np.inf)


def inv_gamma_logpdf(x, shape, scale):
    x = np.asarray(x, float)
    with np.errstate(divide="ignore"):
        out = shape * np.log(scale) - gammaln(shape) - (shape + 1) * np.log(x) - scale / x
    return np.where(x > 0, out, -np.inf)


@dataclass(frozen=True)
class PriorConfig:
    """Prior hyperparameters. Defaults reproduce the published model."""

    mu0_mean: float = 5.0
    mu0_sd: float = 5.0
    log_sigma0_mean: float = 0.0
    log_sigma0_sd: float = 1.0
    beta_sd: float = 1.0
    xi_sd: float = 0.5
    kernel_alpha_shape: float = 5.0
    kernel_alpha_scale: float = 5.0
    kernel_rho_shape: float = 5.0
    kernel_rho_rate: float = 1.0
    jitter: float | None = None


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Ragged annual-maximum observations at a set of stations.

    Attributes:
        sites: station coordinates (and ids).
        station: station index of each observation.
        year: year of each observation.
        value: annual maximum depth (inches), strictly positive.
        covariate: mapping year -> transformed covariate ``x(t)``.
    """

    sites: SiteSet
    station: np.ndarray
    year: np.ndarray
    value: np.ndarray
    covariate: dict = field(default_factory=dict)

    def __post_init__(self):
        station = np.asarray(self.station, dtype=int)
        year = np.asarray(self.year, dtype=int)
        value = np.asarray(self.value, dtype=float)
        if not (station.shape == year.shape == value.shape) or station.ndim != 1:
            raise ValueError("station, year and value must be 1-d arrays of equal length")
        if len(value) and (station.min() < 0 or station.max() >= len(self.sites)):
            raise ValueError("station index out of range")
        if np.any(~np.isfinite(value)) or np.any(value <= 0):
            raise ValueError("annual maxima must be finite and positive")
        missing = sorted(set(year.tolist()) - set(self.covariate))
        if missing:
            raise ValueError(f"no covariate value for years {missing}")
        object.__setattr__(self, "station", station)
        object.__setattr__(self, "year", year)
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "covariate", {int(k): float(v) for k, v in self.covariate.items()})

    @property
    def n_stations(self) -> int:
        return len(self.sites)

    @property
    def n_obs(self) -> int:
        return len(self.value)

    @property
    def x(self) -> np.ndarray:
        """Covariate value at each observation."""
        return self.covariate_at(self.year)

    def covariate_at(self, years) -> np.ndarray:
        years = np.atleast_1d(np.asarray(years, dtype=int))
        try:
            return np.array([self.covariate[int(y)] for y in years], dtype=float)
        except KeyError as err:
            raise ValueError(f"no covariate value for year {err.args[0]}") from None

    def select(self, mask) -> "Dataset":
        """Keep only the observations where ``mask`` is true (all stations kept)."""
        mask = np.asarray(mask, dtype=bool)
        return replace(self, station=self.station[mask], year=self.year[mask], value=self.value[mask])

    def drop_stations(self, stations) -> "Dataset":
        """Remove whole stations and renumber the rest."""
        drop = set(int(s) for s in np.atleast_1d(stations))
        keep = np.array([s for s in range(self.n_stations) if s not in drop], dtype=int)
        remap = -np.ones(self.n_stations, dtype=int)
        remap[keep] = np.arange(len(keep))
        mask = remap[self.station] >= 0
        return Dataset(
            sites=self.sites.subset(keep),
            station=remap[self.station[mask]],
            year=self.year[mask],
            value=self.value[mask],
            covariate=self.covariate,
        )

    def station_ids(self) -> list:
        if self.sites.ids:
            return list(self.sites.ids)
        return [f"S{i:03d}" for i in range(self.n_stations)]


# ---------------------------------------------------------------------------
# Model specification
# ---------------------------------------------------------------------------

_FIELDS = {
    Family.POOLED_STATIONARY: ("mu", "log_sigma"),
    Family.NONPOOLED_NONSTATIONARY: ("mu0", "log_sigma0", "beta_mu", "beta_sigma"),
    Family.SVC: ("mu0", "log_sigma0", "beta_mu", "beta_sigma"),
}


class ModelSpec:
    """One model family bound to a dataset and priors.

    Immutable after construction; :meth:`logp_and_grad` is pure and safe to
    call from several chains at once.
    """

    def __init__(self, family, dataset: Dataset, priors: PriorConfig | None = None):
        self.family = Family.parse(family)
        self.dataset = dataset
        self.priors = priors or PriorConfig()
        n = dataset.n_stations
        self.n_stations = n
        self.field_names = _FIELDS[self.family]
        self.slices = {}
        pos = 0
        for name in self.field_names:
            self.slices[name] = slice(pos, pos + n)
            pos += n
        n_xi = n if self.family is Family.NONPOOLED_NONSTATIONARY else 1
        self.slices["xi_raw"] = slice(pos, pos + n_xi)
        pos += n_xi
        self.kernel_fields = () if self.family is Family.NONPOOLED_NONSTATIONARY else self.field_names
        for name in self.kernel_fields:
            self.slices[f"log_alpha_{name}"] = slice(pos, pos + 1)
            self.slices[f"log_rho_{name}"] = slice(pos + 1, pos + 2)
            pos += 2
        self.dim = pos
        self._dist = distance_matrix(dataset.sites.coords, dataset.sites.coords)
        self._station = dataset.station
        self._x = dataset.x
        self._y = dataset.value
        self._nonstationary = self.family is not Family.POOLED_STATIONARY

    def __getstate__(self):
        return self.__dict__

    def __setstate__(self, state):
        self.__dict__.update(state)

    def __repr__(self):
        return (f"ModelSpec({self.family.value}, stations={self.n_stations}, "
                f"obs={self.dataset.n_obs}, dim={self.dim})")

    def with_dataset(self, dataset: Dataset) -> "ModelSpec":
        return ModelSpec(self.family, dataset, self.priors)

    # -- names and decoding -------------------------------------------------

    @property
    def param_names(self) -> list:
        ids = self.dataset.station_ids()
        names = []
        for name in self.field_names:
            names += [f"{name}[{sid}]" for sid in ids]
        if self.family is Family.NONPOOLED_NONSTATIONARY:
            names += [f"xi_raw[{sid}]" for sid in ids]
        else:
            names.append("xi_raw")
        for name in self.kernel_fields:
            names += [f"log_alpha_{name}", f"log_rho_{name}"]
        return names

    def _check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.dim:
            raise ValueError(f"theta has dimension {theta.shape[-1]}, {self.family.value} expects {self.dim}")
        return theta

    def decode(self, theta) -> dict:
        """Constrained, named view of ``theta`` (works on stacked draws too).

        Keys: ``mu0``, ``log_sigma0``, ``beta_mu``, ``beta_sigma`` (per station),
        ``xi`` (per station), and ``alpha_<field>``/``rho_<field>`` for GP families.
        """
        theta = self._check(theta)
        out = {}
        if self.family is Family.POOLED_STATIONARY:
            out["mu0"] = theta[..., self.slices["mu"]]
            out["log_sigma0"] = theta[..., self.slices["log_sigma"]]
            out["beta_mu"] = np.zeros_like(out["mu0"])
            out["beta_sigma"] = np.zeros_like(out["mu0"])
        else:
            for name in self.field_names:
                out[name] = theta[..., self.slices[name]]
        xi = np.exp(theta[..., self.slices["xi_raw"]])
        out["xi"] = np.broadcast_to(xi, out["mu0"].shape).copy()
        for name in self.kernel_fields:
            out[f"alpha_{name}"] = np.exp(theta[..., self.slices[f"log_alpha_{name}"]][..., 0])
            out[f"rho_{name}"] = np.exp(theta[..., self.slices[f"log_rho_{name}"]][..., 0])
        return out

    def encode(self, values: dict) -> np.ndarray:
        """Inverse of :meth:`decode` for a single parameter set."""
        theta = np.zeros(self.dim)
        if self.family is Family.POOLED_STATIONARY:
            theta[self.slices["mu"]] = values["mu0"]
            theta[self.slices["log_sigma"]] = values["log_sigma0"]
        else:
            for name in self.field_names:
                theta[self.slices[name]] = values[name]
        xi = np.atleast_1d(np.asarray(values["xi"], float))
        if self.family is not Family.NONPOOLED_NONSTATIONARY:
            xi = xi[:1]
        theta[self.slices["xi_raw"]] = np.log(xi)
        for name in self.kernel_fields:
            theta[self.slices[f"log_alpha_{name}"]] = np.log(values[f"alpha_{name}"])
            theta[self.slices[f"log_rho_{name}"]] = np.log(values[f"rho_{name}"])
        return theta

    def obs_params(self, theta):
        """Per-observation ``(mu, sigma, xi)``; a stack of draws gives ``(draws, obs)`` arrays."""
        d = self.decode(theta)
        s = self._station
        mu = d["mu0"][..., s] + d["beta_mu"][..., s] * self._x
        sigma = np.exp(d["log_sigma0"][..., s] + d["beta_sigma"][..., s] * self._x)
        return mu, sigma, d["xi"][..., s]

    def assemble_gev_params(self, theta, station: int, year: int) -> gev.GevParams:
        d = self.decode(theta)
        x = float(self.dataset.covariate_at([year])[0]) if self._nonstationary else 0.0
        mu = d["mu0"][station] + d["beta_mu"][station] * x
        sigma = np.exp(d["log_sigma0"][station] + d["beta_sigma"][station] * x)
        return gev.GevParams(float(mu), float(sigma), float(d["xi"][station]))

    # -- densities ----------------------------------------------------------

    def log_likelihood(self, theta) -> float:
        theta = self._check(theta)
        if self.dataset.n_obs == 0:
            return 0.0
        mu, sigma, xi = self.obs_params(theta)
        return float(np.sum(gev.logpdf_array(self._y, mu, sigma, xi)))

    def log_prior(self, theta) -> float:
        return self._log_prior_and_grad(self._check(theta), need_grad=False)[0]

    def log_posterior(self, theta) -> float:
        ll = self.log_likelihood(theta)
        if not np.isfinite(ll):
            return -np.inf
        return ll + self.log_prior(theta)

    def _log_prior_and_grad(self, theta, need_grad=True):
        pr = self.priors
        grad = np.zeros(self.dim)
        lp = 0.0
        xi_raw = theta[self.slices["xi_raw"]]
        xi = np.exp(xi_raw)
        # half-normal shape prior on xi = exp(xi_raw), plus log-Jacobian xi_raw
        lp += np.sum(half_normal_logpdf(xi, pr.xi_sd) + xi_raw)
        grad[self.slices["xi_raw"]] = 1.0 - xi * xi / pr.xi_sd**2

        if self.family is Family.NONPOOLED_NONSTATIONARY:
            for name, mean, sd in (
                ("mu0", pr.mu0_mean, pr.mu0_sd),
                ("log_sigma0", pr.log_sigma0_mean, pr.log_sigma0_sd),
                ("beta_mu", 0.0, pr.beta_sd),
                ("beta_sigma", 0.0, pr.beta_sd),
            ):
                v = theta[self.slices[name]]
                lp += np.sum(normal_logpdf(v, mean, sd))
                grad[self.slices[name]] = -(v - mean) / sd**2
            return float(lp), grad

        for name in self.kernel_fields:
            la = theta[self.slices[f"log_alpha_{name}"]][0]
            lr = theta[self.slices[f"log_rho_{name}"]][0]
            alpha, rho = np.exp(la), np.exp(lr)
            lp += float(inv_gamma_logpdf(alpha, pr.kernel_alpha_shape, pr.kernel_alpha_scale)) + la
            lp += float(gamma_logpdf(rho, pr.kernel_rho_shape, pr.kernel_rho_rate)) + lr
            g_la = -pr.kernel_alpha_shape + pr.kernel_alpha_scale / alpha
            g_lr = pr.kernel_rho_shape - pr.kernel_rho_rate * rho
            values = theta[self.slices[name]]
            try:
                lgp, g_f, g_la_gp, g_lr_gp = gp_logdensity_and_grad(values, self._dist, la, lr, pr.jitter)
            except GPNumericalError:
                return -np.inf, np.full(self.dim, np.nan)
            lp += lgp
            grad[self.slices[name]] = g_f
            grad[self.slices[f"log_alpha_{name}"]] = g_la + g_la_gp
            grad[self.slices[f"log_rho_{name}"]] = g_lr + g_lr_gp
        return float(lp), grad

    def _log_likelihood_and_grad(self, theta):
        grad = np.zeros(self.dim)
        if self.dataset.n_obs == 0:
            return 0.0, grad
        mu, sigma, xi = self.obs_params(theta)
        val, gmu, gsig, gxi = gev.logpdf_and_grad_array(self._y, mu, sigma, xi)
        ll = float(np.sum(val))
        if not np.isfinite(ll):
            return -np.inf, np.full(self.dim, np.nan)
        n = self.n_stations
        s = self._station
        gls = gsig * sigma
        first, second = self.field_names[0], self.field_names[1]
        grad[self.slices[first]] = np.bincount(s, gmu, minlength=n)
        grad[self.slices[second]] = np.bincount(s, gls, minlength=n)
        if self._nonstationary:
            grad[self.slices["beta_mu"]] = np.bincount(s, gmu * self._x, minlength=n)
            grad[self.slices["beta_sigma"]] = np.bincount(s, gls * self._x, minlength=n)
        gxr = gxi * xi
        if self.family is Family.NONPOOLED_NONSTATIONARY:
            grad[self.slices["xi_raw"]] = np.bincount(s, gxr, minlength=n)
        else:
            grad[self.slices["xi_raw"]] = gxr.sum()
        return ll, grad

    def logp_and_grad(self, theta):
        """Log-posterior and its gradient on the unconstrained space.

        A ``-inf`` value comes with an all-NaN gradient.
        """
        theta = self._check(theta)
        if not np.all(np.isfinite(theta)):
            return -np.inf, np.full(self.dim, np.nan)
        ll, gl = self._log_likelihood_and_grad(theta)
        if not np.isfinite(ll):
            return -np.inf, gl
        lp, gp = self._log_prior_and_grad(theta)
        if not np.isfinite(lp):
            return -np.inf, np.full(self.dim, np.nan)
        return ll + lp, gl + gp

    # -- starting points ----------------------------------------------------

    def prior_mean_theta(self) -> np.ndarray:
        pr = self.priors
        theta = np.zeros(self.dim)
        theta[self.slices["xi_raw"]] = np.log(pr.xi_sd * np.sqrt(2.0 / np.pi))
        if self.family is Family.NONPOOLED_NONSTATIONARY:
            theta[self.slices["mu0"]] = pr.mu0_mean
            theta[self.slices["log_sigma0"]] = pr.log_sigma0_mean
            return theta
        alpha_mean = pr.kernel_alpha_scale / (pr.kernel_alpha_shape - 1)
        rho_mean = pr.kernel_rho_shape / pr.kernel_rho_rate
        for name in self.kernel_fields:
            theta[self.slices[f"log_alpha_{name}"]] = np.log(alpha_mean)
            theta[self.slices[f"log_rho_{name}"]] = np.log(rho_mean)
        return theta

    def prior_draw(self, rng: np.random.Generator) -> np.ndarray:
        pr = self.priors
        n = self.n_stations
        theta = np.zeros(self.dim)
        xi = np.abs(rng.normal(0.0, pr.xi_sd, size=self.slices["xi_raw"].stop - self.slices["xi_raw"].start))
        theta[self.slices["xi_raw"]] = np.log(np.maximum(xi, 1e-3))
        if self.family is Family.NONPOOLED_NONSTATIONARY:
            theta[self.slices["mu0"]] = rng.normal(pr.mu0_mean, pr.mu0_sd, n)
            theta[self.slices["log_sigma0"]] = rng.normal(pr.log_sigma0_mean, pr.log_sigma0_sd, n)
            theta[self.slices["beta_mu"]] = rng.normal(0.0, pr.beta_sd, n)
            theta[self.slices["beta_sigma"]] = rng.normal(0.0, pr.beta_sd, n)
            return theta
        for name in self.kernel_fields:
            alpha = pr.kernel_alpha_scale / rng.gamma(pr.kernel_alpha_shape)
            rho = rng.gamma(pr.kernel_rho_shape) / pr.kernel_rho_rate
            K = alpha**2 * np.exp(-self._dist / rho) + 1e-8 * alpha**2 * np.eye(n)
            theta[self.slices[name]] = rng.multivariate_normal(np.zeros(n), K, method="cholesky")
            theta[self.slices[f"log_alpha_{name}"]] = np.log(alpha)
            theta[self.slices[f"log_rho_{name}"]] = np.log(rho)
        return theta

    def moment_fields(self) -> dict:
        """Per-station Gumbel method-of-moments location and log-scale."""
        n = self.n_stations
        counts = np.bincount(self._station, minlength=n)
        mean = np.bincount(self._station, self._y, minlength=n) / np.maximum(counts, 1)
        sq = np.bincount(self._station, self._y**2, minlength=n) / np.maximum(counts, 1)
        sd = np.sqrt(np.maximum(sq - mean**2, 1e-6))
        sigma = np.sqrt(6.0) * sd / np.pi
        return {"mu0": mean - 0.5772156649 * sigma, "log_sigma0": np.log(sigma)}

    def repair_start(self, theta) -> np.ndarray:
        """Move an infeasible start to moment-based station parameters.

        Kernel hyperparameters are kept; trends are zeroed and the shape is
        set small so every observation sits inside its support.
        """
        theta = np.array(theta, dtype=float)
        mom = self.moment_fields()
        if self.family is Family.POOLED_STATIONARY:
            theta[self.slices["mu"]] = mom["mu0"]
            theta[self.slices["log_sigma"]] = mom["log_sigma0"]
        else:
            theta[self.slices["mu0"]] = mom["mu0"]
            theta[self.slices["log_sigma0"]] = mom["log_sigma0"]
            theta[self.slices["beta_mu"]] = 0.0
            theta[self.slices["beta_sigma"]] = 0.0
        theta[self.slices["xi_raw"]] = np.log(0.05)
        return theta

    def initial_points(self, count: int, rng: np.random.Generator) -> list:
        """Prior mean followed by ``count - 1`` prior draws, infeasible ones repaired."""
        points = [self.prior_mean_theta()] + [self.prior_draw(rng) for _ in range(count - 1)]
        return [p if np.isfinite(self.logp_and_grad(p)[0]) else self.repair_start(p) for p in points]


def log_posterior_and_grad(theta, spec: ModelSpec):
    return spec.logp_and_grad(theta)


def log_likelihood(theta, spec: ModelSpec) -> float:
    return spec.log_likelihood(theta)


def log_prior(theta, spec: ModelSpec) -> float:
    return spec.log_prior(theta)


def assemble_gev_params(theta, spec: ModelSpec, station: int, year: int) -> gev.GevParams:
    return spec.assemble_gev_params(theta, station, year)
