"""Temporal (odd/even year) and spatial (grid-block) cross-validation."""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import logsumexp

from . import gev, scoring
from .fit import fit
from .inference import SamplerConfig
from .models import Dataset, Family, ModelSpec
from .predict import fields_at, gev_params_at

logger = logging.getLogger(__name__)

GRID_CELLS = 5
METRICS = ("LogS", "QS(0.9)", "QS(0.98)", "QS(0.99)", "CRPS")


class PlanError(ValueError):
    pass


class PlanKind(str, enum.Enum):
    ODD_EVEN_YEARS = "odd_even_years"
    SPATIAL_GRID = "spatial_grid"


@dataclass(frozen=True)
class CvPlan:
    """One train/test split.

    For odd/even plans ``fold`` names the training parity (``"odd"`` trains
    on odd years and scores even years). For spatial plans ``fold`` is 1..5
    and the held-out cells are ``(i, (i + fold) % 5)``.
    """

    kind: PlanKind
    fold: object
    train_obs: np.ndarray
    test_obs: np.ndarray
    heldout_stations: tuple = ()


def grid_cells(coords, n: int = GRID_CELLS) -> np.ndarray:
    """``(col, row)`` cell index of each site in an ``n x n`` grid over the bounding box."""
    coords = np.asarray(coords, float)
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    width = np.where(hi > lo, (hi - lo) / n, 1.0)
    idx = np.floor((coords - lo) / width).astype(int)
    return np.clip(idx, 0, n - 1)


def spatial_fold_stations(coords, fold: int, n: int = GRID_CELLS) -> np.ndarray:
    cells = grid_cells(coords, n)
    return np.flatnonzero(cells[:, 1] == (cells[:, 0] + fold) % n)


def make_cv_plan(kind, dataset: Dataset, fold) -> CvPlan:
    kind = PlanKind(kind)
    if dataset.n_obs == 0:
        raise PlanError("dataset is empty")
    if kind is PlanKind.ODD_EVEN_YEARS:
        if fold not in ("odd", "even"):
            raise PlanError("odd/even fold must be 'odd' or 'even'")
        odd = dataset.year % 2 == 1
        train = odd if fold == "odd" else ~odd
        plan = CvPlan(kind, fold, train, ~train)
    else:
        fold = int(fold)
        if not 1 <= fold <= GRID_CELLS:
            raise PlanError(f"spatial fold must be in 1..{GRID_CELLS}")
        held = spatial_fold_stations(dataset.sites.coords, fold)
        test = np.isin(dataset.station, held)
        plan = CvPlan(kind, fold, ~test, test, tuple(int(s) for s in held))
    if not plan.train_obs.any():
        raise PlanError(f"fold {fold!r} leaves no training observations")
    return plan


def all_plans(kind, dataset: Dataset) -> list:
    kind = PlanKind(kind)
    folds = ("odd", "even") if kind is PlanKind.ODD_EVEN_YEARS else range(1, GRID_CELLS + 1)
    plans = []
    for f in folds:
        try:
            plan = make_cv_plan(kind, dataset, f)
        except PlanError:
            if kind is PlanKind.ODD_EVEN_YEARS:
                raise
            continue
        if plan.test_obs.any():  # spatial folds over empty cells have nothing to score
            plans.append(plan)
    return plans


def training_dataset(dataset: Dataset, plan: CvPlan) -> Dataset:
    if plan.kind is PlanKind.SPATIAL_GRID:
        return dataset.drop_stations(plan.heldout_stations)
    return dataset.select(plan.train_obs)


# ---------------------------------------------------------------------------
# Vectorized scoring over (observation, draw) matrices
# ---------------------------------------------------------------------------


def score_observations(y, mu, sigma, xi, rng, mc_draws: int = 4000) -> pd.DataFrame:
    """Scores for each observation; parameter arrays are ``(n_obs, n_draws)``."""
    y = np.asarray(y, float)
    n_obs, n_draws = mu.shape
    lp = gev.logpdf_array(y[:, None], mu, sigma, xi)
    with np.errstate(divide="ignore"):
        logs = -(logsumexp(lp, axis=1) - np.log(n_draws))
    out = {"LogS": logs}
    for p in scoring.QS_PROBS:
        q = gev.quantile_array(p, mu, sigma, xi)
        out[f"QS({p})"] = scoring.pinball(y[:, None] - q, p).mean(axis=1)
    m = max(mc_draws // 2, 1)
    crps = np.empty(n_obs)
    for i in range(n_obs):
        ens = scoring.PredictiveEnsemble(mu[i], sigma[i], xi[i])
        crps[i] = scoring.crps(y[i], ens, 2 * m, rng).value
    out["CRPS"] = crps
    return pd.DataFrame(out)


def heldout_params(train_spec: ModelSpec, draws, dataset: Dataset, mask, rng):
    """Per-draw GEV parameters at held-out observations, ``(n_obs, n_draws)``."""
    stations = dataset.station[mask]
    x = dataset.x[mask]
    coords = dataset.sites.coords[stations]
    uniq, inverse = np.unique(coords, axis=0, return_inverse=True)
    fields = fields_at(train_spec, draws, uniq, rng)
    fields = {k: v[:, inverse.ravel()] for k, v in fields.items()}
    if train_spec.family is Family.POOLED_STATIONARY:
        x = np.zeros_like(x)
    mu, sigma, xi = gev_params_at(fields, x[None, :])
    return mu.T, sigma.T, xi.T


@dataclass
class CvResult:
    family: Family
    plan: CvPlan
    scores: pd.DataFrame  # one row per held-out observation
    fit: object


def run_cv(spec: ModelSpec, plans, config: SamplerConfig, map_starts: int = 8,
           max_draws: int = 1000, mc_draws: int = 4000, seed: int = 0) -> list:
    """Fit on each plan's training split and score its held-out observations."""
    results = []
    for k, plan in enumerate(plans):
        train = training_dataset(spec.dataset, plan)
        train_spec = spec.with_dataset(train)
        logger.info("cv %s fold %s: %d training observations", spec.family.value, plan.fold, train.n_obs)
        res = fit(train_spec, config, map_starts)
        draws = res.samples.thin(max_draws)
        rng = np.random.default_rng(np.random.SeedSequence([seed, k, 104729]))
        mu, sigma, xi = heldout_params(train_spec, draws, spec.dataset, plan.test_obs, rng)
        scores = score_observations(spec.dataset.value[plan.test_obs], mu, sigma, xi, rng, mc_draws)
        scores.insert(0, "station", spec.dataset.station[plan.test_obs])
        scores.insert(1, "year", spec.dataset.year[plan.test_obs])
        scores.insert(0, "fold", str(plan.fold))
        results.append(CvResult(spec.family, plan, scores, res))
    return results


def score_table(results_by_family: dict) -> pd.DataFrame:
    """Metric rows by family columns; each entry averages all held-out observations."""
    table = {}
    for family, results in results_by_family.items():
        fam = Family.parse(family)
        allscores = pd.concat([r.scores for r in results], ignore_index=True)
        table[fam.label] = [float(allscores[m].mean()) for m in METRICS]
    return pd.DataFrame(table, index=list(METRICS)).rename_axis("metric")


def pit_for_fit(spec: ModelSpec, draws) -> scoring.PitHistogram:
    """In-sample PIT histogram: mean posterior CDF of each observation."""
    mu, sigma, xi = spec.obs_params(np.asarray(draws))
    pit = gev.cdf_array(spec.dataset.value[None, :], mu, sigma, xi).mean(axis=0)
    return scoring.pit_histogram_from_values(pit)
