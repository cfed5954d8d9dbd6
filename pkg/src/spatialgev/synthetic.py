"""Synthetic station bundles with known spatially smooth truth."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gev
from .data import CovariateSeries, covariate_transform
from .gp import SiteSet, distance_matrix
from .models import Dataset


def co2_curve(years) -> CovariateSeries:
    """Smooth stand-in CO2 trajectory (~296 ppm in 1900, ~416 ppm in 2022)."""
    years = np.asarray(list(years), dtype=int)
    ppm = 280.0 + 35.0 * np.exp((years - 1958) / 47.0)
    return CovariateSeries(years, ppm, tuple("synthetic" for _ in years))


def lattice(n_lon: int = 5, n_lat: int = 4, spacing: float = 0.5, origin=(-95.0, 29.0)) -> SiteSet:
    coords = [(origin[0] + i * spacing, origin[1] + j * spacing) for j in range(n_lat) for i in range(n_lon)]
    ids = tuple(f"SYN{k:03d}" for k in range(len(coords)))
    return SiteSet(np.array(coords), ids)


@dataclass(frozen=True)
class FieldTruth:
    """Truth field = ``offset + GP(0, alpha**2 exp(-d/rho))`` draw."""

    offset: float
    alpha: float


@dataclass(frozen=True)
class TruthConfig:
    mu0: FieldTruth = FieldTruth(4.0, 0.6)
    log_sigma0: FieldTruth = FieldTruth(np.log(1.3), 0.2)
    beta_mu: FieldTruth = FieldTruth(3.0, 1.0)
    beta_sigma: FieldTruth = FieldTruth(1.0, 0.5)
    xi: float = 0.1
    rho: float = 3.0
    stationary: bool = False


@dataclass
class SyntheticBundle:
    dataset: Dataset
    truth: dict
    co2: CovariateSeries
    reference_year: int
    config: TruthConfig = field(default_factory=TruthConfig)

    def true_params(self, station: int, year: int) -> gev.GevParams:
        x = self.dataset.covariate[int(year)]
        t = self.truth
        return gev.GevParams(
            float(t["mu0"][station] + t["beta_mu"][station] * x),
            float(np.exp(t["log_sigma0"][station] + t["beta_sigma"][station] * x)),
            float(self.truth["xi"]),
        )

    def true_return_level(self, station: int, year: int, period: float) -> float:
        return float(gev.return_level(period, self.true_params(station, year)))


def simulate_bundle(seed: int = 0, sites: SiteSet | None = None, years=range(1963, 2023),
                    truth: TruthConfig | None = None, reference_year: int = 1990,
                    co2: CovariateSeries | None = None) -> SyntheticBundle:
    """Draw smooth truth fields on ``sites`` and simulate annual maxima."""
    rng = np.random.default_rng(seed)
    sites = sites or lattice()
    truth = truth or TruthConfig()
    years = np.asarray(list(years), dtype=int)
    co2 = co2 or co2_curve(range(min(1900, years.min(), reference_year), max(years.max(), reference_year) + 1))
    cov = covariate_transform(co2, reference_year)

    n = len(sites)
    R = np.exp(-distance_matrix(sites.coords, sites.coords) / truth.rho) + 1e-9 * np.eye(n)
    L = np.linalg.cholesky(R)
    fields = {}
    for name in ("mu0", "log_sigma0", "beta_mu", "beta_sigma"):
        ft = getattr(truth, name)
        fields[name] = ft.offset + ft.alpha * (L @ rng.standard_normal(n))
    if truth.stationary:
        fields["beta_mu"] = np.zeros(n)
        fields["beta_sigma"] = np.zeros(n)
    fields["xi"] = truth.xi

    station = np.repeat(np.arange(n), len(years))
    year = np.tile(years, n)
    x = np.array([cov[int(y)] for y in year])
    mu = fields["mu0"][station] + fields["beta_mu"][station] * x
    sigma = np.exp(fields["log_sigma0"][station] + fields["beta_sigma"][station] * x)
    values = gev.gev_sample(rng, len(station), mu, sigma, truth.xi)
    # synthetic depths must stay positive; resample the rare non-positive draw
    while np.any(values <= 0):
        bad = values <= 0
        values[bad] = gev.gev_sample(rng, int(bad.sum()), mu[bad], sigma[bad], truth.xi)
    ds = Dataset(sites=sites, station=station, year=year, value=values, covariate=cov)
    return SyntheticBundle(dataset=ds, truth=fields, co2=co2, reference_year=reference_year, config=truth)
