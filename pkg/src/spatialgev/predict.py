"""Posterior return levels at stations, ungauged points and grids."""

from __future__ import annotations

import numpy as np
import pandas as pd

from . import gev
from .gp import KernelConfig, kriging_weights
from .models import Family, ModelSpec

FIELDS = ("mu0", "log_sigma0", "beta_mu", "beta_sigma")
_POOLED_KERNELS = {"mu0": "mu", "log_sigma0": "log_sigma"}


def fields_at(spec: ModelSpec, draws: np.ndarray, coords=None, rng=None) -> dict:
    """Per-draw latent fields at target coordinates.

    Targets that coincide with a fitted station take that station's value.
    Other targets get a draw from the per-draw GP conditional (marginally per
    target). Returns arrays shaped ``(draws, targets)`` keyed by field name
    plus ``xi``.
    """
    dec = spec.decode(draws)
    if coords is None:
        return {k: dec[k] for k in (*FIELDS, "xi")}
    coords = np.atleast_2d(np.asarray(coords, float))
    station_coords = spec.dataset.sites.coords
    d = np.sqrt(((coords[:, None, :] - station_coords[None, :, :]) ** 2).sum(-1))
    match = np.where(d.min(axis=1) == 0, d.argmin(axis=1), -1)
    fresh = np.flatnonzero(match < 0)
    if len(fresh) and spec.family is Family.NONPOOLED_NONSTATIONARY:
        raise ValueError("the nonpooled family cannot predict at ungauged locations")

    n_draws = len(draws)
    out = {k: np.empty((n_draws, len(coords))) for k in (*FIELDS, "xi")}
    known = np.flatnonzero(match >= 0)
    for k in (*FIELDS, "xi"):
        out[k][:, known] = dec[k][:, match[known]]
    if not len(fresh):
        return out

    rng = rng if rng is not None else np.random.default_rng(0)
    out["xi"][:, fresh] = dec["xi"][:, :1]
    for name in FIELDS:
        if spec.family is Family.POOLED_STATIONARY and name not in _POOLED_KERNELS:
            out[name][:, fresh] = 0.0
            continue
        kname = _POOLED_KERNELS.get(name, name) if spec.family is Family.POOLED_STATIONARY else name
        alphas, rhos = dec[f"alpha_{kname}"], dec[f"rho_{kname}"]
        for i in range(n_draws):
            cfg = KernelConfig(float(alphas[i]), float(rhos[i]), spec.priors.jitter)
            W, var = kriging_weights(station_coords, coords[fresh], cfg)
            mean = W @ dec[name][i]
            out[name][i, fresh] = mean + np.sqrt(var) * rng.standard_normal(len(fresh))
    return out


def gev_params_at(fields: dict, x):
    """Broadcast fields against covariate value(s) ``x``; returns (mu, sigma, xi)."""
    mu = fields["mu0"] + fields["beta_mu"] * x
    sigma = np.exp(fields["log_sigma0"] + fields["beta_sigma"] * x)
    return mu, sigma, fields["xi"]


def return_level_draws(fields: dict, x: float, period: float) -> np.ndarray:
    mu, sigma, xi = gev_params_at(fields, x)
    return gev.quantile_array(1.0 - 1.0 / period, mu, sigma, xi)


def summarize_levels(levels: np.ndarray) -> dict:
    """Posterior mean and 95% equal-tailed interval over the draw axis."""
    return {
        "mean": levels.mean(axis=0),
        "lower": np.quantile(levels, 0.025, axis=0),
        "upper": np.quantile(levels, 0.975, axis=0),
    }


def predict_return_levels(spec: ModelSpec, draws, locations: pd.DataFrame, years, periods,
                          covariate: dict, rng=None) -> pd.DataFrame:
    """Return-level table for the requested locations, years and periods.

    ``locations`` needs columns ``location, lon, lat``. With exactly two
    years, a ``pct_change`` column gives the change from the first to the
    second in percent (per-draw, then averaged).
    """
    years = [int(y) for y in years]
    missing = [y for y in years if y not in covariate]
    if missing and spec.family is not Family.POOLED_STATIONARY:
        raise ValueError(f"no covariate value for years {missing}")
    coords = locations[["lon", "lat"]].to_numpy(float)
    fields = fields_at(spec, np.asarray(draws), coords, rng)
    rows = []
    for T in periods:
        gev.ReturnPeriod(float(T))
        per_year = {}
        for y in years:
            x = covariate.get(y, 0.0) if spec.family is not Family.POOLED_STATIONARY else 0.0
            per_year[y] = return_level_draws(fields, x, float(T))
        pct = None
        if len(years) == 2:
            a, b = per_year[years[0]], per_year[years[1]]
            pct = ((b - a) / a * 100.0).mean(axis=0)
        for y in years:
            s = summarize_levels(per_year[y])
            for j, loc in enumerate(locations["location"]):
                row = {
                    "location": loc, "lon": coords[j, 0], "lat": coords[j, 1],
                    "year": y, "return_period": float(T),
                    "mean": s["mean"][j], "lower_2.5": s["lower"][j], "upper_97.5": s["upper"][j],
                }
                if pct is not None:
                    row["pct_change"] = pct[j]
                rows.append(row)
    return pd.DataFrame(rows)


def grid_points(coords, resolution: float = 0.25) -> pd.DataFrame:
    """Cell centres of a regular grid over the bounding box of ``coords``."""
    coords = np.asarray(coords, float)
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    nx = max(int(np.ceil((hi[0] - lo[0]) / resolution)), 1)
    ny = max(int(np.ceil((hi[1] - lo[1]) / resolution)), 1)
    xs = lo[0] + resolution * (np.arange(nx) + 0.5)
    ys = lo[1] + resolution * (np.arange(ny) + 0.5)
    gx, gy = np.meshgrid(xs, ys)
    return pd.DataFrame({
        "location": [f"cell_{i:04d}" for i in range(gx.size)],
        "lon": gx.ravel(), "lat": gy.ravel(),
    })


def return_level_timeseries(spec: ModelSpec, draws, locations: pd.DataFrame, years, covariate: dict,
                            period: float = 100.0, reference=None, rng=None) -> pd.DataFrame:
    """Annual ``period``-year return level with 95% bands per location."""
    missing = [y for y in years if int(y) not in covariate]
    if missing:
        raise ValueError(f"scenario does not cover years {missing}")
    coords = locations[["lon", "lat"]].to_numpy(float)
    fields = fields_at(spec, np.asarray(draws), coords, rng)
    rows = []
    for y in years:
        x = covariate[int(y)] if spec.family is not Family.POOLED_STATIONARY else 0.0
        s = summarize_levels(return_level_draws(fields, x, period))
        for j, loc in enumerate(locations["location"]):
            row = {"location": loc, "year": int(y), "return_period": period,
                   "mean": s["mean"][j], "lower_2.5": s["lower"][j], "upper_97.5": s["upper"][j]}
            if reference is not None:
                row["reference"] = float(reference)
            rows.append(row)
    return pd.DataFrame(rows)


def crossing_year(series: pd.DataFrame, reference: float):
    """First year the posterior-mean level exceeds ``reference`` (None if never)."""
    above = series[series["mean"] > reference]
    return int(above["year"].min()) if len(above) else None


def percentage_difference(ours: pd.DataFrame, reference: pd.DataFrame,
                          keys=("station", "return_period"), value="value") -> pd.DataFrame:
    """``(ours - reference) / reference * 100`` per key; positive means ours is higher.

    Unmatched keys are reported in an ``unmatched`` column rather than dropped;
    a zero reference gives NaN with ``undefined`` set.
    """
    keys = list(keys)
    merged = ours.merge(reference, on=keys, how="outer", suffixes=("_ours", "_ref"), indicator=True)
    a, b = merged[f"{value}_ours"], merged[f"{value}_ref"]
    with np.errstate(divide="ignore", invalid="ignore"):
        pct = (a - b) / b * 100.0
    undefined = (b == 0) | merged["_merge"].ne("both")
    merged["pct_diff"] = pct.where(~undefined, np.nan)
    merged["undefined"] = undefined
    merged["unmatched"] = merged["_merge"].map({"both": "", "left_only": "reference", "right_only": "ours"})
    return merged.drop(columns="_merge").sort_values(keys).reset_index(drop=True)
