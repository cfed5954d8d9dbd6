import numpy as np
import pandas as pd
import pytest

from spatialgev import gev
from spatialgev.fit import fit
from spatialgev.gp import KernelConfig, distance_matrix, kriging_weights
from spatialgev.inference import SamplerConfig
from spatialgev.models import ModelSpec
from spatialgev.predict import (
    crossing_year,
    fields_at,
    grid_points,
    percentage_difference,
    predict_return_levels,
    return_level_draws,
    return_level_timeseries,
)
from spatialgev.synthetic import lattice, simulate_bundle

KERNELS = {f"{p}_{f}": v for f in ("mu0", "log_sigma0", "beta_mu", "beta_sigma")
           for p, v in (("alpha", 1.0), ("rho", 3.0))}


@pytest.fixture(scope="module")
def bundle():
    return simulate_bundle(seed=3)


def truth_draws(spec, truth, n=40, scale=0.02, seed=0):
    """Posterior stand-in: the truth plus small jitter, encoded for ``spec``."""
    rng = np.random.default_rng(seed)
    base = spec.encode({**truth, **KERNELS})
    return base + scale * rng.standard_normal((n, spec.dim))


def station_locations(spec):
    c = spec.dataset.sites.coords
    return pd.DataFrame({"location": spec.dataset.station_ids(), "lon": c[:, 0], "lat": c[:, 1]})


class TestStationTargets:
    def test_matches_in_sample_parameters(self, bundle):
        spec = ModelSpec("svc", bundle.dataset)
        draws = truth_draws(spec, bundle.truth)
        locs = station_locations(spec).iloc[[0, 7, 19]]
        table = predict_return_levels(spec, draws, locs, [2000], [100], bundle.dataset.covariate)
        for _, row in table.iterrows():
            s = spec.dataset.station_ids().index(row["location"])
            levels = [gev.return_level(100, spec.assemble_gev_params(d, s, 2000)) for d in draws]
            assert row["mean"] == pytest.approx(np.mean(levels), rel=1e-12)
            assert row["lower_2.5"] <= row["mean"] <= row["upper_97.5"]

    def test_longer_period_larger_per_draw(self, bundle):
        spec = ModelSpec("svc", bundle.dataset)
        f = fields_at(spec, truth_draws(spec, bundle.truth), grid_points(spec.dataset.sites.coords, 0.5)[["lon", "lat"]])
        assert np.all(return_level_draws(f, 0.1, 100) > return_level_draws(f, 0.1, 10))

    def test_pct_change_column(self, bundle):
        spec = ModelSpec("svc", bundle.dataset)
        draws = truth_draws(spec, bundle.truth)
        locs = station_locations(spec).iloc[:2]
        table = predict_return_levels(spec, draws, locs, [1970, 2020], [10], bundle.dataset.covariate)
        f = fields_at(spec, draws, locs[["lon", "lat"]])
        cov = bundle.dataset.covariate
        a, b = return_level_draws(f, cov[1970], 10), return_level_draws(f, cov[2020], 10)
        np.testing.assert_allclose(table[table["year"] == 1970]["pct_change"], ((b - a) / a * 100).mean(0))

    def test_year_without_covariate(self, bundle):
        spec = ModelSpec("svc", bundle.dataset)
        with pytest.raises(ValueError):
            predict_return_levels(spec, truth_draws(spec, bundle.truth, n=2), station_locations(spec),
                                  [1800], [10], bundle.dataset.covariate)


class TestUngauged:
    def test_nonpooled_refuses(self, bundle):
        spec = ModelSpec("nonpooled_nonstationary", bundle.dataset)
        draws = truth_draws(spec, bundle.truth, n=2)
        with pytest.raises(ValueError):
            fields_at(spec, draws, [[0.0, 0.0]])
        # gauged targets are fine
        assert fields_at(spec, draws, spec.dataset.sites.coords[:2])["mu0"].shape == (2, 2)

    def test_conditional_draws_match_kriging(self, bundle):
        spec = ModelSpec("svc", bundle.dataset)
        theta = spec.encode({**bundle.truth, **KERNELS})
        draws = np.tile(theta, (4000, 1))
        target = np.array([[-94.3, 29.7]])
        out = fields_at(spec, draws, target, np.random.default_rng(0))["beta_mu"][:, 0]
        W, var = kriging_weights(spec.dataset.sites.coords, target, KernelConfig(1.0, 3.0, spec.priors.jitter))
        mean = float((W @ bundle.truth["beta_mu"])[0])
        assert abs(out.mean() - mean) < 4 * np.sqrt(var[0] / len(out))
        assert out.var() == pytest.approx(var[0], rel=0.1)

    def test_pooled_has_no_trend_fields(self, bundle):
        spec = ModelSpec("pooled_stationary", bundle.dataset)
        theta = spec.encode({**bundle.truth, "alpha_mu": 1.0, "rho_mu": 3.0,
                             "alpha_log_sigma": 0.3, "rho_log_sigma": 3.0})
        f = fields_at(spec, theta[None, :], [[-94.1, 29.9]])
        assert f["beta_mu"][0, 0] == 0.0 and f["beta_sigma"][0, 0] == 0.0

    def test_grid_smoothness(self, bundle):
        spec = ModelSpec("svc", bundle.dataset)
        draws = truth_draws(spec, bundle.truth, n=200)
        res = 0.25
        grid = grid_points(spec.dataset.sites.coords, res)
        table = predict_return_levels(spec, draws, grid, [2022], [100], bundle.dataset.covariate,
                                      rng=np.random.default_rng(1))
        level = table.set_index(["lon", "lat"])["mean"]
        diffs = []
        for (lon, lat), v in level.items():
            for nb in ((round(lon + res, 10), lat), (lon, round(lat + res, 10))):
                if nb in level.index:
                    diffs.append(abs(level[nb] - v))
        stations = predict_return_levels(spec, draws, station_locations(spec), [2022], [100],
                                         bundle.dataset.covariate)["mean"].to_numpy()
        d = distance_matrix(spec.dataset.sites.coords, spec.dataset.sites.coords)
        i, j = np.nonzero(np.isclose(d, d[d > 0].min()))
        bound = np.quantile(np.abs(stations[i] - stations[j]), 0.99)
        assert len(diffs) > 0 and max(diffs) < bound


class TestGrid:
    def test_covers_bounding_box(self):
        g = grid_points(np.array([[0.0, 0.0], [1.0, 0.5]]), 0.25)
        assert len(g) == 4 * 2
        assert g["lon"].min() == pytest.approx(0.125) and g["lat"].max() == pytest.approx(0.375)
        assert g["location"].is_unique


class TestTimeseries:
    def test_stationary_is_flat(self, bundle):
        spec = ModelSpec("pooled_stationary", bundle.dataset)
        theta = spec.encode({**bundle.truth, "alpha_mu": 1.0, "rho_mu": 3.0,
                             "alpha_log_sigma": 0.3, "rho_log_sigma": 3.0})
        draws = theta + 0.01 * np.random.default_rng(0).standard_normal((30, spec.dim))
        ts = return_level_timeseries(spec, draws, station_locations(spec).iloc[:3], range(2022, 2101),
                                     {y: 0.01 * (y - 2022) for y in range(2022, 2101)})
        for _, grp in ts.groupby("location"):
            assert grp["mean"].nunique() == 1 and grp["upper_97.5"].nunique() == 1

    def test_positive_betas_nondecreasing(self, bundle):
        spec = ModelSpec("svc", bundle.dataset)
        truth = {**bundle.truth, "beta_mu": np.abs(bundle.truth["beta_mu"]) + 0.1,
                 "beta_sigma": np.abs(bundle.truth["beta_sigma"])}
        draws = truth_draws(spec, truth, scale=0.0, n=3)
        cov = {y: 0.004 * (y - 2022) for y in range(2022, 2101)}
        ts = return_level_timeseries(spec, draws, station_locations(spec).iloc[:4], range(2022, 2101), cov,
                                     reference=10.0)
        for _, grp in ts.groupby("location"):
            assert np.all(np.diff(grp.sort_values("year")["mean"].to_numpy()) >= 0)
        assert (ts["reference"] == 10.0).all()

    def test_gap_is_error(self, bundle):
        spec = ModelSpec("svc", bundle.dataset)
        with pytest.raises(ValueError, match="2050"):
            return_level_timeseries(spec, truth_draws(spec, bundle.truth, n=2), station_locations(spec).iloc[:1],
                                    [2049, 2050], {2049: 0.3})

    def test_crossing_year(self):
        s = pd.DataFrame({"year": [2020, 2021, 2022, 2023], "mean": [9.0, 9.5, 10.5, 11.0]})
        assert crossing_year(s, 10.0) == 2022
        assert crossing_year(s, 20.0) is None


class TestPercentageDifference:
    def frame(self, values, stations=("A", "B", "C")):
        return pd.DataFrame({"station": list(stations), "return_period": [100.0] * len(stations),
                             "value": values})

    def test_examples(self):
        out = percentage_difference(self.frame([11.0, 5.0, 1.0]), self.frame([10.0, 5.0, 0.0]))
        assert out["pct_diff"].iloc[0] == pytest.approx(10.0)
        assert out["pct_diff"].iloc[1] == 0.0
        assert np.isnan(out["pct_diff"].iloc[2]) and out["undefined"].iloc[2]
        assert len(out) == 3

    def test_unmatched_keys_listed(self):
        out = percentage_difference(self.frame([1.0, 2.0], ("A", "B")), self.frame([1.0, 2.0], ("B", "C")))
        assert dict(zip(out["station"], out["unmatched"])) == {"A": "reference", "B": "", "C": "ours"}


@pytest.mark.slow
class TestFittedTrend:
    def test_level_rises_1940_to_2022(self):
        b = simulate_bundle(seed=4, sites=lattice(3, 3, spacing=0.7))
        assert np.all(b.truth["beta_mu"] > 0)
        res = fit(ModelSpec("svc", b.dataset), SamplerConfig(chains=2, iterations=400, seed=4), map_starts=4)
        grid = grid_points(b.dataset.sites.coords, 0.25)
        cov = dict(b.dataset.covariate)
        table = predict_return_levels(res.spec, res.samples.thin(200), grid, [1940, 2022], [100], cov,
                                      rng=np.random.default_rng(0))
        wide = table.pivot(index="location", columns="year", values="mean")
        assert np.mean(wide[2022] > wide[1940]) >= 0.95
