"""``spatialgev`` command-line interface.

Exit codes: 0 ok, 2 input error, 3 convergence failure (any R-hat above
1.05), 4 numerical failure.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click
import numpy as np
import pandas as pd

from . import data, io
from .fit import fit as run_fit
from .gp import GPNumericalError
from .inference import OptimizationError, summarize
from .io import RunConfig
from .models import ModelSpec
from .scoring import binomial_band
from .predict import crossing_year, grid_points, percentage_difference, predict_return_levels, return_level_timeseries
from .validation import PlanError, PlanKind, all_plans, make_cv_plan, pit_for_fit, run_cv, score_table

logger = logging.getLogger("spatialgev")

EXIT_OK, EXIT_INPUT, EXIT_CONVERGENCE, EXIT_NUMERICAL = 0, 2, 3, 4
RHAT_LIMIT = 1.05


class ConvergenceFailure(RuntimeError):
    pass


def _guard(fn):
    """Map failures onto documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConvergenceFailure as err:
            click.echo(f"convergence failure: {err}", err=True)
            sys.exit(EXIT_CONVERGENCE)
        except (GPNumericalError, OptimizationError, FloatingPointError) as err:
            click.echo(f"numerical failure: {err}", err=True)
            sys.exit(EXIT_NUMERICAL)
        except (FileNotFoundError, io.ConfigError, data.DataError, PlanError, ValueError, KeyError) as err:
            click.echo(f"input error: {err}", err=True)
            sys.exit(EXIT_INPUT)

    return wrapper


def _config(ctx, **overrides) -> RunConfig:
    base = dict(ctx.obj["overrides"])
    base.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.load(ctx.obj["config"], base)


def _require(path, what):
    if not path:
        raise io.ConfigError(f"no {what} file configured")
    if not Path(path).exists():
        raise FileNotFoundError(f"{what} file not found: {path}")
    return path


def _load_dataset(cfg: RunConfig):
    ams = data.read_ams_csv(_require(cfg.ams, "AMS"))
    co2 = data.CovariateSeries.from_frame(io.read_csv(_require(cfg.co2, "covariate")))
    cov = data.covariate_transform(co2, cfg.reference_year)
    return data.dataset_from_ams(ams, cov), cov


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="key = value config file")
@click.option("--model", default=None, help="model family override")
@click.option("--seed", type=int, default=None, help="random seed override")
@click.option("--out", default=None, help="output directory override")
@click.option("--set", "extra", multiple=True, metavar="KEY=VALUE", help="any other config override")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def main(ctx, config_path, model, seed, out, extra, verbose):
    """Hierarchical spatial GEV models for extreme precipitation."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"model": model, "seed": seed, "out": out}
    for item in extra:
        if "=" not in item:
            raise click.BadParameter(f"expected KEY=VALUE, got {item!r}", param_hint="--set")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    ctx.obj = {"config": config_path, "overrides": {k: v for k, v in overrides.items() if v is not None}}


# ---------------------------------------------------------------------------


def _read_daily(path) -> data.DailyParseResult:
    p = Path(path)
    if p.is_dir():
        frames = [data.parse_ghcn_dly(f) for f in sorted(p.glob("*.dly"))]
        if not frames:
            raise FileNotFoundError(f"no .dly files in {p}")
        return data.DailyParseResult(pd.concat(frames, ignore_index=True))
    if p.suffix == ".dly":
        return data.DailyParseResult(data.parse_ghcn_dly(p))
    return data.read_daily_csv(p)


def _read_meta(path) -> pd.DataFrame:
    if Path(path).suffix == ".txt":
        return data.parse_ghcn_stations(path)
    return data.read_station_meta(path)


@main.command()
@click.pass_context
@_guard
def ingest(ctx):
    """Daily records + CO2 sources -> AMS, CO2 and trend-screen CSVs."""
    cfg = _config(ctx)
    out = _outdir(cfg)
    inputs = [cfg.daily, cfg.station_meta, cfg.co2_observatory, cfg.co2_ice_core, cfg.co2_projection]
    meta_lines = io.metadata_lines(cfg, inputs)

    parsed = _read_daily(_require(cfg.daily, "daily records"))
    for w in parsed.warnings:
        click.echo(f"warning: {w}", err=True)
    res = data.extract_ams(parsed.records, cfg.coverage, cfg.min_years)
    if not res.roster:
        raise data.DataError("no station passes the coverage and record-length thresholds")
    meta = _read_meta(_require(cfg.station_meta, "station metadata"))
    ams = data.attach_coordinates(res.ams, meta)

    co2 = data.build_co2_series(
        _require(cfg.co2_observatory, "observatory CO2"), _require(cfg.co2_ice_core, "ice-core CO2"),
        cfg.co2_projection or None,
        start=min(int(ams["year"].min()), cfg.reference_year),
    )
    cov = data.covariate_transform(co2, cfg.reference_year)

    io.write_csv(out / "ams.csv", ams, meta_lines)
    io.write_csv(out / "co2.csv", co2.to_frame(), meta_lines)
    io.write_csv(out / "coverage.csv", res.coverage, meta_lines)
    io.write_csv(out / "kendall_tau.csv", data.kendall_tau_screen(ams, cov), meta_lines)
    click.echo(f"{len(res.roster)} stations, {len(ams)} annual maxima -> {out}")


@main.command()
@click.option("--truth-seed", type=int, default=None, help="seed for the synthetic truth (default: --seed)")
@click.option("--stationary", is_flag=True, help="zero trends in the truth")
@click.pass_context
@_guard
def simulate(ctx, truth_seed, stationary):
    """Write a synthetic 20-station AMS bundle with known truth."""
    from .synthetic import TruthConfig, simulate_bundle

    cfg = _config(ctx)
    out = _outdir(cfg)
    b = simulate_bundle(cfg.seed if truth_seed is None else truth_seed,
                        truth=TruthConfig(stationary=stationary), reference_year=cfg.reference_year)
    meta_lines = io.metadata_lines(cfg)
    io.write_csv(out / "ams.csv", data.dataset_to_ams(b.dataset), meta_lines)
    io.write_csv(out / "co2.csv", b.co2.to_frame(), meta_lines)
    truth = pd.DataFrame({k: b.truth[k] for k in ("mu0", "log_sigma0", "beta_mu", "beta_sigma")})
    truth.insert(0, "station", b.dataset.station_ids())
    truth["xi"] = b.truth["xi"]
    io.write_csv(out / "truth.csv", truth, meta_lines)
    click.echo(f"synthetic bundle -> {out}")


def _summary_frame(spec: ModelSpec, draws) -> pd.DataFrame:
    dec = spec.decode(draws)
    rows = []
    for name, vals in dec.items():
        vals = np.asarray(vals)
        cols = vals.reshape(len(vals), -1)
        ids = spec.dataset.station_ids() if cols.shape[1] == spec.dataset.n_stations and cols.shape[1] > 1 else None
        for j in range(cols.shape[1]):
            v = cols[:, j]
            rows.append({
                "parameter": name, "station": ids[j] if ids else "",
                "mean": v.mean(), "sd": v.std(ddof=1),
                "q2.5": np.quantile(v, 0.025), "q50": np.quantile(v, 0.5), "q97.5": np.quantile(v, 0.975),
            })
    return pd.DataFrame(rows)


@main.command()
@click.pass_context
@_guard
def fit(ctx):
    """MAP + NUTS fit; writes draws, diagnostics and a reusable bundle."""
    cfg = _config(ctx)
    ds, cov = _load_dataset(cfg)
    spec = ModelSpec(cfg.family, ds)
    out = _outdir(cfg)
    meta_lines = io.metadata_lines(cfg, [cfg.ams, cfg.co2])

    res = run_fit(spec, cfg.sampler_config(), cfg.map_starts)
    s = res.samples
    for c in range(s.n_chains):
        io.write_csv(out / f"draws_chain{c}.csv", io.draws_frame(s, c, spec.param_names), meta_lines)
    io.write_csv(out / "diagnostics.csv", pd.DataFrame(res.diagnostics.rows()), meta_lines)
    divergences = pd.DataFrame({
        "chain": np.arange(s.n_chains),
        "divergent": s.divergent.sum(axis=1),
        "step_size": s.step_size,
        "mean_tree_depth": s.tree_depth.mean(axis=1),
        "max_tree_depth_hits": (s.tree_depth >= cfg.max_tree_depth).sum(axis=1),
    })
    io.write_csv(out / "divergences.csv", divergences, meta_lines)
    io.write_csv(out / "summary.csv", _summary_frame(spec, res.draws), meta_lines)
    io.save_bundle(out / "fit.npz", spec, s, cov, meta_lines)

    worst = res.diagnostics.max_rhat
    click.echo(f"{spec.family.label}: max R-hat {worst:.4f}, {s.n_divergent} divergences -> {out}")
    if not worst <= RHAT_LIMIT:
        raise ConvergenceFailure(f"max R-hat {worst:.4f} exceeds {RHAT_LIMIT}; see {out / 'diagnostics.csv'}")


@main.command()
@click.option("--fold", default=None, help="single fold (odd/even or 1-5); default all folds")
@click.pass_context
@_guard
def validate(ctx, fold):
    """Cross-validated scores for each configured family."""
    cfg = _config(ctx)
    ds, _ = _load_dataset(cfg)
    out = _outdir(cfg)
    meta_lines = io.metadata_lines(cfg, [cfg.ams, cfg.co2])
    kind = PlanKind(cfg.cv_plan)
    folds = [fold] if fold else cfg.fold_list()
    plans = [make_cv_plan(kind, ds, f) for f in folds] if folds else all_plans(kind, ds)

    results, per_obs = {}, []
    for fam in cfg.model_list():
        spec = ModelSpec(fam, ds)
        results[fam] = run_cv(spec, plans, cfg.sampler_config(), cfg.map_starts, cfg.max_draws, cfg.mc_draws, cfg.seed)
        for r in results[fam]:
            per_obs.append(r.scores.assign(model=fam.label))
    io.write_csv(out / "scores.csv", score_table(results), meta_lines, index=True)
    io.write_csv(out / "cv_observations.csv", pd.concat(per_obs, ignore_index=True), meta_lines)
    click.echo(score_table(results).to_string())


def _locations(cfg: RunConfig, spec: ModelSpec, grid_res) -> pd.DataFrame:
    if grid_res is not None or cfg.locations == "grid":
        return grid_points(spec.dataset.sites.coords, grid_res or cfg.grid_res)
    if cfg.locations in ("", "stations"):
        c = spec.dataset.sites.coords
        return pd.DataFrame({"location": spec.dataset.station_ids(), "lon": c[:, 0], "lat": c[:, 1]})
    locs = io.read_csv(_require(cfg.locations, "locations"), dtype={"location": str})
    missing = {"location", "lon", "lat"} - set(locs.columns)
    if missing:
        raise data.DataError(f"{cfg.locations}: missing columns {sorted(missing)}")
    return locs


def _bundle(cfg: RunConfig):
    path = Path(cfg.bundle or Path(cfg.out) / "fit.npz")
    if path.is_dir():
        path = path / "fit.npz"
    return io.load_bundle(path), path


def _geojson(df: pd.DataFrame) -> str:
    feats = []
    for rec in df.to_dict("records"):
        props = {k: (v.item() if hasattr(v, "item") else v) for k, v in rec.items() if k not in ("lon", "lat")}
        feats.append({"type": "Feature",
                      "geometry": {"type": "Point", "coordinates": [float(rec["lon"]), float(rec["lat"])]},
                      "properties": props})
    return json.dumps({"type": "FeatureCollection", "features": feats}, indent=1) + "\n"


@main.command()
@click.option("--grid-res", type=float, default=None, help="predict on a regular grid of this spacing (degrees)")
@click.pass_context
@_guard
def predict(ctx, grid_res):
    """Return levels at stations, a grid, or listed locations."""
    cfg = _config(ctx)
    bundle, path = _bundle(cfg)
    out = _outdir(cfg)
    meta_lines = io.metadata_lines(cfg, [path, cfg.locations if cfg.locations not in ("", "stations", "grid") else None])
    locs = _locations(cfg, bundle.spec, grid_res)
    draws = bundle.spec_draws(cfg.max_draws)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 31337]))
    table = predict_return_levels(bundle.spec, draws, locs, cfg.year_list(), cfg.period_list(), bundle.covariate, rng)
    io.write_csv(out / "return_levels.csv", table, meta_lines)
    io.atomic_write_text(out / "return_levels.geojson", _geojson(table))
    click.echo(f"{len(table)} return-level rows -> {out / 'return_levels.csv'}")


@main.command()
@click.pass_context
@_guard
def timeseries(ctx):
    """Annual 100-year return level under a CO2 scenario up to the horizon."""
    cfg = _config(ctx)
    bundle, path = _bundle(cfg)
    out = _outdir(cfg)
    scen_path = _require(cfg.scenario, "scenario")
    meta_lines = io.metadata_lines(cfg, [path, scen_path, cfg.locations or None])
    scen = data.CovariateSeries.from_frame(io.read_csv(scen_path))
    cov = data.covariate_transform(scen, cfg.reference_year)
    start = int(bundle.spec.dataset.year.max())
    years = list(range(start, cfg.horizon + 1))
    locs = _locations(cfg, bundle.spec, None)
    reference = float(cfg.reference_level) if cfg.reference_level else None
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 27183]))
    series = return_level_timeseries(bundle.spec, bundle.spec_draws(cfg.max_draws), locs, years, cov,
                                     100.0, reference, rng)
    io.write_csv(out / "timeseries.csv", series, meta_lines)
    if reference is not None:
        cross = [{"location": loc, "reference": reference, "crossing_year": crossing_year(grp, reference)}
                 for loc, grp in series.groupby("location", sort=False)]
        io.write_csv(out / "crossing.csv", pd.DataFrame(cross), meta_lines)
    click.echo(f"{len(series)} rows -> {out / 'timeseries.csv'}")


@main.command()
@click.argument("ours", type=click.Path())
@click.argument("reference", type=click.Path())
@click.option("--value", default="value", help="value column present in both files")
@click.pass_context
@_guard
def compare(ctx, ours, reference, value):
    """Percentage difference of our estimates against a reference table."""
    cfg = _config(ctx)
    out = _outdir(cfg)
    a = io.read_csv(_require(ours, "our estimates"), dtype={"station": str})
    b = io.read_csv(_require(reference, "reference estimates"), dtype={"station": str})
    for name, df in (("ours", a), ("reference", b)):
        missing = {"station", "return_period", value} - set(df.columns)
        if missing:
            raise data.DataError(f"{name} file missing columns {sorted(missing)}")
    keep = ["station", "return_period", value]
    table = percentage_difference(a[keep], b[keep], value=value)
    io.write_csv(out / "comparison.csv", table, io.metadata_lines(cfg, [ours, reference]))
    unmatched = table[table["unmatched"] != ""]
    for rec in unmatched.to_dict("records"):
        click.echo(f"unmatched key: station={rec['station']} return_period={rec['return_period']} "
                   f"(missing from {rec['unmatched']})", err=True)
    click.echo(f"{len(table)} rows -> {out / 'comparison.csv'}")


@main.command()
@click.pass_context
@_guard
def diagnose(ctx):
    """R-hat/ESS table and in-sample PIT histogram for a fitted bundle."""
    cfg = _config(ctx)
    bundle, path = _bundle(cfg)
    out = _outdir(cfg)
    meta_lines = io.metadata_lines(cfg, [path])
    diag = summarize(bundle.draws, bundle.spec.param_names)
    io.write_csv(out / "diagnostics.csv", pd.DataFrame(diag.rows()), meta_lines)
    pit = pit_for_fit(bundle.spec, bundle.spec_draws(cfg.max_draws))
    lo, hi = binomial_band(pit.n, len(pit.counts))
    hist = pd.DataFrame({"bin": np.arange(len(pit.counts)), "count": pit.counts, "band_lower": lo, "band_upper": hi})
    io.write_csv(out / "pit.csv", hist, meta_lines)
    click.echo(f"max R-hat {diag.max_rhat:.4f}; PIT within band: {pit.within_binomial_bound()}")
    if not diag.max_rhat <= RHAT_LIMIT:
        raise ConvergenceFailure(f"max R-hat {diag.max_rhat:.4f} exceeds {RHAT_LIMIT}")


if __name__ == "__main__":
    main()
