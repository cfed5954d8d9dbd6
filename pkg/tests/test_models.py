import math

import numpy as np
import pytest
from scipy import stats
from scipy.special import gammaln

from spatialgev import gev
from spatialgev.gp import SiteSet
from spatialgev.models import (
    Dataset,
    Family,
    ModelSpec,
    assemble_gev_params,
    gamma_logpdf,
    half_normal_logpdf,
    inv_gamma_logpdf,
    log_likelihood,
    log_posterior_and_grad,
    log_prior,
)

FAMILIES = list(Family)


def make_dataset(rng, n_stations=3, years=range(2000, 2004), drop=0.0):
    coords = rng.uniform([-95, 29], [-93, 31], size=(n_stations, 2))
    cov = {y: 0.02 * (y - 2000) for y in range(1990, 2030)}
    station, year = np.meshgrid(np.arange(n_stations), list(years), indexing="ij")
    station, year = station.ravel(), year.ravel()
    keep = rng.uniform(size=len(station)) >= drop
    station, year = station[keep], year[keep]
    value = gev.gev_sample(rng, len(station), 4.0, 1.2, 0.1)
    value = np.abs(value) + 0.1
    return Dataset(SiteSet(coords), station, year, value, cov)


def interior_theta(spec, rng):
    """Random theta whose decoded GEVs all contain the data."""
    for _ in range(1000):
        theta = spec.prior_draw(rng)
        if spec.family is not Family.POOLED_STATIONARY:
            theta[spec.slices["mu0"]] = rng.normal(3.0, 0.3, spec.n_stations)
        else:
            theta[spec.slices["mu"]] = rng.normal(3.0, 0.3, spec.n_stations)
        theta[spec.slices["xi_raw"]] = np.log(rng.uniform(0.02, 0.3, theta[spec.slices["xi_raw"]].shape))
        if np.isfinite(spec.logp_and_grad(theta)[0]):
            return theta
    raise AssertionError("no interior point found")


class TestFamily:
    def test_parse_aliases(self):
        assert Family.parse("svc") is Family.SVC
        assert Family.parse("pooled_stationary") is Family.POOLED_STATIONARY
        assert Family.parse(Family.SVC) is Family.SVC
        with pytest.raises(ValueError):
            Family.parse("bogus")

    def test_layout_is_deterministic(self):
        ds = make_dataset(np.random.default_rng(0))
        for fam in FAMILIES:
            a, b = ModelSpec(fam, ds), ModelSpec(fam, ds)
            assert a.param_names == b.param_names
            assert len(a.param_names) == a.dim

    def test_dimensions(self):
        ds = make_dataset(np.random.default_rng(0), n_stations=4)
        assert ModelSpec("nonpooled_nonstationary", ds).dim == 4 * 5
        assert ModelSpec("svc", ds).dim == 4 * 4 + 1 + 8
        assert ModelSpec("pooled_stationary", ds).dim == 4 * 2 + 1 + 4


class TestDataset:
    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            Dataset(SiteSet(np.zeros((1, 2))), [0], [2000], [0.0], {2000: 0.0})

    def test_requires_covariate(self):
        with pytest.raises(ValueError):
            Dataset(SiteSet(np.zeros((1, 2))), [0], [2000], [1.0], {1999: 0.0})

    def test_drop_stations_renumbers(self):
        ds = make_dataset(np.random.default_rng(1), n_stations=4)
        sub = ds.drop_stations([1])
        assert sub.n_stations == 3
        assert set(sub.station.tolist()) == {0, 1, 2}
        assert sub.n_obs == ds.n_obs - np.sum(ds.station == 1)


class TestAssemble:
    def setup_method(self):
        sites = SiteSet(np.array([[0.0, 0.0], [1.0, 0.0]]))
        self.ds = Dataset(sites, [0, 1], [2000, 2001], [5.0, 5.0], {2000: 0.5, 2001: 1.0})
        self.spec = ModelSpec("svc", self.ds)

    def _theta(self, **fields):
        values = {"mu0": [4.0, 4.0], "log_sigma0": [0.0, 0.0], "beta_mu": [0.0, 0.0],
                  "beta_sigma": [0.0, 0.0], "xi": 0.1}
        values.update(fields)
        for name in self.spec.kernel_fields:
            values[f"alpha_{name}"], values[f"rho_{name}"] = 1.0, 1.0
        return self.spec.encode(values)

    def test_linear_location(self):
        p = assemble_gev_params(self._theta(beta_mu=[2.0, 2.0]), self.spec, 0, 2000)
        assert p.mu == pytest.approx(5.0)

    def test_exp_scale(self):
        p = assemble_gev_params(self._theta(beta_sigma=[1.0, 1.0]), self.spec, 1, 2001)
        assert p.sigma == pytest.approx(math.e)

    def test_stationary_reduction(self):
        theta = self._theta()
        assert self.spec.assemble_gev_params(theta, 0, 2000) == self.spec.assemble_gev_params(theta, 0, 2001)

    def test_missing_year(self):
        with pytest.raises(ValueError):
            self.spec.assemble_gev_params(self._theta(), 0, 1850)

    def test_xi_positive_by_construction(self):
        rng = np.random.default_rng(0)
        for fam in FAMILIES:
            spec = ModelSpec(fam, make_dataset(rng))
            draws = rng.normal(0, 5, size=(200, spec.dim))
            assert np.all(spec.decode(draws)["xi"] > 0)

    def test_decode_encode_round_trip(self):
        rng = np.random.default_rng(3)
        for fam in FAMILIES:
            spec = ModelSpec(fam, make_dataset(rng))
            theta = spec.prior_draw(rng)
            back = spec.encode({k: v for k, v in spec.decode(theta).items()})
            np.testing.assert_allclose(back, theta, atol=1e-12)


class TestLikelihood:
    def test_empty_dataset(self):
        ds = Dataset(SiteSet(np.zeros((1, 2))), [], [], [], {})
        for fam in FAMILIES:
            spec = ModelSpec(fam, ds)
            assert log_likelihood(spec.prior_mean_theta(), spec) == 0.0

    def test_single_observation(self):
        ds = Dataset(SiteSet(np.zeros((1, 2))), [0], [2000], [4.2], {2000: 0.3})
        spec = ModelSpec("svc", ds)
        theta = spec.prior_mean_theta()
        theta[spec.slices["mu0"]] = 3.5
        p = spec.assemble_gev_params(theta, 0, 2000)
        assert spec.log_likelihood(theta) == pytest.approx(gev.gev_logpdf(4.2, p), rel=1e-14)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_brute_force_sum(self, family):
        rng = np.random.default_rng(4)
        ds = make_dataset(rng, 3, range(2000, 2004))
        spec = ModelSpec(family, ds)
        theta = interior_theta(spec, rng)
        d = spec.decode(theta)
        total = 0.0
        for s, y, v in zip(ds.station, ds.year, ds.value):
            x = ds.covariate[y] if family is not Family.POOLED_STATIONARY else 0.0
            mu = d["mu0"][s] + d["beta_mu"][s] * x
            sigma = math.exp(d["log_sigma0"][s] + d["beta_sigma"][s] * x)
            total += stats.genextreme.logpdf(v, -d["xi"][s], loc=mu, scale=sigma)
        assert spec.log_likelihood(theta) == pytest.approx(total, rel=1e-10)

    def test_outside_support(self):
        ds = Dataset(SiteSet(np.zeros((1, 2))), [0], [2000], [0.5], {2000: 0.0})
        spec = ModelSpec("nonpooled_nonstationary", ds)
        theta = spec.encode({"mu0": [10.0], "log_sigma0": [0.0], "beta_mu": [0.0], "beta_sigma": [0.0], "xi": [0.5]})
        assert spec.log_likelihood(theta) == -np.inf
        val, grad = log_posterior_and_grad(theta, spec)
        assert val == -np.inf and np.all(np.isnan(grad))

    def test_ragged_deletion(self):
        rng = np.random.default_rng(5)
        ds = make_dataset(rng, 3, range(2000, 2010), drop=0.2)
        spec = ModelSpec("svc", ds)
        theta = interior_theta(spec, rng)
        k = 4
        keep = np.ones(ds.n_obs, bool)
        keep[k] = False
        smaller = spec.with_dataset(ds.select(keep))
        p = spec.assemble_gev_params(theta, ds.station[k], ds.year[k])
        diff = spec.log_likelihood(theta) - smaller.log_likelihood(theta)
        assert diff == pytest.approx(gev.gev_logpdf(ds.value[k], p), rel=1e-10)

    def test_dimension_mismatch(self):
        spec = ModelSpec("svc", make_dataset(np.random.default_rng(0)))
        with pytest.raises(ValueError):
            spec.log_likelihood(np.zeros(spec.dim + 1))

    def test_model_nesting(self):
        rng = np.random.default_rng(6)
        ds = make_dataset(rng, 4, range(2000, 2008))
        svc, pooled = ModelSpec("svc", ds), ModelSpec("pooled_stationary", ds)
        theta_p = interior_theta(pooled, rng)
        d = pooled.decode(theta_p)
        values = {k: d[k] for k in ("mu0", "log_sigma0", "beta_mu", "beta_sigma")}
        values["xi"] = d["xi"][0]
        for name in svc.kernel_fields:
            values[f"alpha_{name}"], values[f"rho_{name}"] = 1.0, 2.0
        theta_s = svc.encode(values)
        assert svc.log_likelihood(theta_s) == pooled.log_likelihood(theta_p)


class TestPriors:
    def test_gamma_textbook(self):
        expected = math.log(5.0**4 * math.exp(-5.0) / math.gamma(5))
        assert float(gamma_logpdf(5.0, 5.0, 1.0)) == pytest.approx(expected, rel=1e-13)

    def test_inverse_gamma_mode(self):
        mode = 5.0 / 6.0
        at_mode = float(inv_gamma_logpdf(mode, 5.0, 5.0))
        for delta in (-0.2, -0.05, -1e-3, 1e-3, 0.05, 0.3):
            assert at_mode >= float(inv_gamma_logpdf(mode + delta, 5.0, 5.0))

    def test_inverse_gamma_matches_scipy(self):
        x = np.linspace(0.1, 4, 9)
        np.testing.assert_allclose(inv_gamma_logpdf(x, 5.0, 5.0), stats.invgamma.logpdf(x, 5.0, scale=5.0), rtol=1e-12)

    def test_half_normal(self):
        assert float(half_normal_logpdf(-0.1, 0.5)) == -np.inf
        assert float(half_normal_logpdf(0.3, 0.5)) == pytest.approx(stats.halfnorm.logpdf(0.3, scale=0.5))

    def test_nonpooled_prior_formula(self):
        ds = make_dataset(np.random.default_rng(7), 2)
        spec = ModelSpec("nonpooled_nonstationary", ds)
        theta = np.random.default_rng(8).normal(size=spec.dim)
        d = spec.decode(theta)
        ref = (stats.norm.logpdf(d["mu0"], 5, 5).sum() + stats.norm.logpdf(d["log_sigma0"], 0, 1).sum()
               + stats.norm.logpdf(d["beta_mu"], 0, 1).sum() + stats.norm.logpdf(d["beta_sigma"], 0, 1).sum()
               + (stats.halfnorm.logpdf(d["xi"], scale=0.5) + np.log(d["xi"])).sum())
        assert log_prior(theta, spec) == pytest.approx(ref, rel=1e-12)

    def test_svc_prior_formula(self):
        rng = np.random.default_rng(9)
        ds = make_dataset(rng, 3)
        spec = ModelSpec("svc", ds)
        theta = spec.prior_draw(rng)
        d = spec.decode(theta)
        coords = ds.sites.coords
        D = np.sqrt(((coords[:, None] - coords[None]) ** 2).sum(-1))
        ref = stats.halfnorm.logpdf(d["xi"][0], scale=0.5) + np.log(d["xi"][0])
        for name in spec.kernel_fields:
            a, r = d[f"alpha_{name}"], d[f"rho_{name}"]
            K = a**2 * np.exp(-D / r) + 1e-8 * a**2 * np.eye(3)
            ref += stats.multivariate_normal.logpdf(d[name], np.zeros(3), K)
            ref += stats.invgamma.logpdf(a, 5, scale=5) + np.log(a)
            ref += stats.gamma.logpdf(r, 5, scale=1) + np.log(r)
        assert log_prior(theta, spec) == pytest.approx(ref, rel=1e-9)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_prior_finite_sweep(self, family):
        rng = np.random.default_rng(10)
        spec = ModelSpec(family, make_dataset(rng, 3))
        draws = rng.normal(0, 1.5, size=(10_000, spec.dim))
        vals = [spec.log_prior(t) for t in draws]
        assert np.all(np.isfinite(vals))


class TestPosterior:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_additivity(self, family):
        rng = np.random.default_rng(11)
        spec = ModelSpec(family, make_dataset(rng))
        theta = interior_theta(spec, rng)
        val, _ = spec.logp_and_grad(theta)
        assert val - spec.log_prior(theta) == pytest.approx(spec.log_likelihood(theta), abs=1e-9)

    @pytest.mark.parametrize("family", FAMILIES)
    def test_gradient_finite_differences(self, family):
        rng = np.random.default_rng(12)
        spec = ModelSpec(family, make_dataset(rng, 3, range(2000, 2012)))
        h = 1e-5
        for _ in range(50):
            theta = interior_theta(spec, rng)
            _, g = spec.logp_and_grad(theta)
            fd = np.empty(spec.dim)
            for i in range(spec.dim):
                e = np.zeros(spec.dim)
                e[i] = h
                fd[i] = (spec.logp_and_grad(theta + e)[0] - spec.logp_and_grad(theta - e)[0]) / (2 * h)
            np.testing.assert_allclose(g, fd, rtol=1e-4, atol=1e-6 * (1 + np.abs(fd).max()))


class TestStarts:
    @pytest.mark.parametrize("family", FAMILIES)
    def test_initial_points_feasible(self, family):
        rng = np.random.default_rng(13)
        ds = make_dataset(rng, 4, range(2000, 2030))
        ds = Dataset(ds.sites, ds.station, ds.year, ds.value + 8.0, ds.covariate)
        spec = ModelSpec(family, ds)
        pts = spec.initial_points(8, rng)
        assert len(pts) == 8
        assert all(np.isfinite(spec.logp_and_grad(p)[0]) for p in pts)


def test_gammaln_consistency():
    # the Gamma(5, 1) normaliser used above
    assert gammaln(5.0) == pytest.approx(math.log(24.0))
