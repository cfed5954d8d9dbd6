"""Annual-maximum and CO2 covariate preparation.

Input formats (CSV, header required):

* daily records: ``station,date,depth,qflag`` with depth in inches;
* station metadata: ``station,lon,lat``;
* observatory CO2: monthly ``year,month,<ppm column>``;
* ice-core CO2: ``year,<ppm column>``;
* projection scenario: ``year,ppm``.

Outputs: AMS CSV ``station,lon,lat,year,inches`` and CO2 CSV
``year,ppm,provenance``.
"""

from __future__ import annotations

import calendar
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy import stats

from .gp import SiteSet
from .models import Dataset

logger = logging.getLogger(__name__)

UNCONSTRAINED_FACTOR = 1.11
MIN_COVERAGE = 0.99
MIN_YEARS = 30
BLEND_START, BLEND_END = 1958, 1978
REFERENCE_YEAR = 1990
_PPM_COLUMNS = ("ppm", "average", "co2", "monthly_average", "value")


class DataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Daily records -> annual maxima
# ---------------------------------------------------------------------------


@dataclass
class DailyParseResult:
    records: pd.DataFrame
    warnings: list = field(default_factory=list)


def read_daily_csv(path) -> DailyParseResult:
    """Parse a daily-record CSV, warning (never silently dropping) on bad rows."""
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, comment="#")
    missing_cols = {"station", "date", "depth"} - set(raw.columns)
    if missing_cols:
        raise DataError(f"{path}: missing columns {sorted(missing_cols)}")
    if "qflag" not in raw.columns:
        raw["qflag"] = ""
    return parse_daily_frame(raw, source=str(path))


def parse_daily_frame(raw: pd.DataFrame, source: str = "<frame>") -> DailyParseResult:
    warnings = []
    dates = pd.to_datetime(raw["date"], errors="coerce", format="%Y-%m-%d")
    depth_txt = raw["depth"].astype(str).str.strip()
    depth = pd.to_numeric(depth_txt.where(depth_txt != "", np.nan), errors="coerce")
    bad_depth = depth.isna() & (depth_txt != "") & (depth_txt.str.lower() != "nan")
    bad = dates.isna() | bad_depth | (depth < 0) | (raw["station"].astype(str).str.strip() == "")
    for idx in np.flatnonzero(bad.to_numpy()):
        msg = f"{source}: row {idx + 2}: unparseable record {raw.iloc[idx].to_dict()}"
        warnings.append(msg)
        logger.warning(msg)
    ok = ~bad
    qflag = raw["qflag"].astype(str).str.strip()
    depth = depth.where(qflag == "", np.nan)  # any quality flag -> missing
    df = pd.DataFrame({
        "station": raw["station"].astype(str).str.strip()[ok],
        "date": dates[ok],
        "depth": depth[ok],
    })
    return DailyParseResult(df.reset_index(drop=True), warnings)


@dataclass
class AmsResult:
    ams: pd.DataFrame  # station, year, inches
    roster: list
    coverage: pd.DataFrame  # station, year, coverage, max_raw


def extract_ams(records: pd.DataFrame, coverage: float = MIN_COVERAGE, min_years: int = MIN_YEARS,
                factor: float = UNCONSTRAINED_FACTOR) -> AmsResult:
    """Annual maxima from daily records.

    A station-year qualifies when its share of non-missing days (leap years
    over 366) reaches ``coverage``; stations need ``min_years`` qualifying
    years. Retained maxima are multiplied by ``factor``.
    """
    df = records[["station", "date", "depth"]].copy()
    df["date"] = pd.to_datetime(df["date"]).dt.normalize()
    # duplicate days resolve to their largest reported depth (order independent)
    df = df.groupby(["station", "date"], as_index=False, sort=True)["depth"].max()
    df["year"] = df["date"].dt.year
    grouped = df.groupby(["station", "year"], sort=True)
    cov = grouped["depth"].agg(n_valid="count", max_raw="max").reset_index()
    days = np.where([calendar.isleap(int(y)) for y in cov["year"]], 366, 365)
    cov["coverage"] = cov["n_valid"] / days
    good = cov[(cov["coverage"] >= coverage) & cov["max_raw"].notna()].copy()
    counts = good.groupby("station")["year"].count()
    roster = sorted(counts[counts >= min_years].index.tolist())
    good = good[good["station"].isin(roster)]
    ams = pd.DataFrame({
        "station": good["station"].to_numpy(),
        "year": good["year"].astype(int).to_numpy(),
        "inches": good["max_raw"].to_numpy(dtype=float) * factor,
    })
    ams = ams[ams["inches"] > 0].sort_values(["station", "year"]).reset_index(drop=True)
    return AmsResult(ams=ams, roster=roster, coverage=cov[["station", "year", "coverage", "max_raw"]])


def read_station_meta(path) -> pd.DataFrame:
    meta = pd.read_csv(path, dtype={"station": str}, comment="#")
    missing = {"station", "lon", "lat"} - set(meta.columns)
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    return meta[["station", "lon", "lat"]]


def attach_coordinates(ams: pd.DataFrame, meta: pd.DataFrame) -> pd.DataFrame:
    out = ams.merge(meta, on="station", how="left")
    lost = sorted(out.loc[out["lon"].isna(), "station"].unique())
    if lost:
        raise DataError(f"no coordinates for stations {lost}")
    return out[["station", "lon", "lat", "year", "inches"]]


def read_ams_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path, dtype={"station": str}, comment="#")
    missing = {"station", "lon", "lat", "year", "inches"} - set(df.columns)
    if missing:
        raise DataError(f"{path}: missing columns {sorted(missing)}")
    return df


def dataset_from_ams(ams: pd.DataFrame, covariate: dict) -> Dataset:
    """Join AMS rows with ``x(t)``; every year must have a covariate value."""
    missing = sorted(set(ams["year"].astype(int)) - set(covariate))
    if missing:
        raise DataError(f"AMS years without covariate values: {missing}")
    stations = ams.groupby("station", sort=True)[["lon", "lat"]].first()
    ids = stations.index.tolist()
    index = {s: i for i, s in enumerate(ids)}
    sites = SiteSet(stations[["lon", "lat"]].to_numpy(float), tuple(ids))
    return Dataset(
        sites=sites,
        station=ams["station"].map(index).to_numpy(int),
        year=ams["year"].to_numpy(int),
        value=ams["inches"].to_numpy(float),
        covariate=covariate,
    )


def dataset_to_ams(ds: Dataset) -> pd.DataFrame:
    ids = np.asarray(ds.station_ids(), dtype=object)
    c = ds.sites.coords
    return pd.DataFrame({
        "station": ids[ds.station],
        "lon": c[ds.station, 0],
        "lat": c[ds.station, 1],
        "year": ds.year,
        "inches": ds.value,
    })


# ---------------------------------------------------------------------------
# GHCN-Daily fixed-width conversion
# ---------------------------------------------------------------------------

_MM_PER_INCH = 25.4


def parse_ghcn_dly(path) -> pd.DataFrame:
    """Convert a GHCN-Daily ``.dly`` file's PRCP rows to daily records.

    Values are tenths of a millimetre; ``-9999`` marks a missing day.
    """
    rows = []
    with open(path) as fh:
        for line in fh:
            if line[17:21] != "PRCP":
                continue
            sid = line[0:11].strip()
            year, month = int(line[11:15]), int(line[15:17])
            ndays = calendar.monthrange(year, month)[1]
            for d in range(ndays):
                off = 21 + 8 * d
                val = int(line[off:off + 5])
                qflag = line[off + 6:off + 7].strip()
                depth = np.nan if val == -9999 else val / 10.0 / _MM_PER_INCH
                rows.append((sid, f"{year:04d}-{month:02d}-{d + 1:02d}", depth, qflag))
    return pd.DataFrame(rows, columns=["station", "date", "depth", "qflag"])


def parse_ghcn_stations(path) -> pd.DataFrame:
    """Read ``ghcnd-stations.txt`` into ``station,lon,lat``."""
    rows = []
    with open(path) as fh:
        for line in fh:
            if len(line) < 30:
                continue
            rows.append((line[0:11].strip(), float(line[21:30]), float(line[12:20])))
    return pd.DataFrame(rows, columns=["station", "lon", "lat"])


# ---------------------------------------------------------------------------
# CO2 covariate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovariateSeries:
    years: np.ndarray
    ppm: np.ndarray
    provenance: tuple

    def __post_init__(self):
        years = np.asarray(self.years, dtype=int)
        ppm = np.asarray(self.ppm, dtype=float)
        if np.any(np.diff(years) <= 0):
            raise DataError("covariate years must be strictly increasing")
        if np.any(~(ppm > 0)):
            raise DataError("CO2 concentrations must be positive")
        object.__setattr__(self, "years", years)
        object.__setattr__(self, "ppm", ppm)
        object.__setattr__(self, "provenance", tuple(self.provenance))

    def as_dict(self) -> dict:
        return dict(zip(self.years.tolist(), self.ppm.tolist()))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"year": self.years, "ppm": self.ppm, "provenance": list(self.provenance)})

    @classmethod
    def from_frame(cls, df: pd.DataFrame) -> "CovariateSeries":
        df = df.sort_values("year")
        prov = df["provenance"] if "provenance" in df else ["unknown"] * len(df)
        return cls(df["year"].to_numpy(int), df["ppm"].to_numpy(float), tuple(prov))


def _ppm_column(df, path):
    for c in _PPM_COLUMNS:
        if c in df.columns:
            return c
    raise DataError(f"{path}: no CO2 column (expected one of {_PPM_COLUMNS})")


def _read_table(path):
    df = pd.read_csv(path, comment="#", skipinitialspace=True)
    df.columns = [str(c).strip().lower() for c in df.columns]
    if "year" not in df.columns:
        raise DataError(f"{path}: missing 'year' column")
    return df


def observatory_annual_means(path) -> dict:
    """Annual means of monthly observatory values; only complete years count."""
    df = _read_table(path)
    if "month" not in df.columns:
        raise DataError(f"{path}: missing 'month' column")
    col = _ppm_column(df, path)
    df = df[df[col] > 0]  # negative sentinels mark missing months
    out = {}
    for year, grp in df.groupby("year"):
        months = grp.drop_duplicates("month")
        if len(months) == 12:
            out[int(year)] = float(months[col].sum() / 12.0)
    return out


def ice_core_annual(path) -> dict:
    df = _read_table(path)
    col = _ppm_column(df, path)
    df = df[df[col] > 0]
    return {int(y): float(v) for y, v in df.groupby(df["year"].round().astype(int))[col].mean().items()}


def read_projection(path) -> dict:
    df = _read_table(path)
    col = _ppm_column(df, path)
    return {int(y): float(v) for y, v in zip(df["year"], df[col])}


def blend_co2(observatory: dict, ice_core: dict, projection: dict | None = None,
              start: int | None = None, end: int | None = None) -> CovariateSeries:
    """Merge the historical sources and append projection years.

    Before 1958: ice core. 1958-1978: mean of both where both exist. After
    1978: observatory. Projection years after the last historical year are
    appended. Any gap in the covered span is an error.
    """
    if not observatory or not ice_core:
        raise DataError("both historical CO2 sources are required")
    hist = {}
    for year in sorted(set(observatory) | set(ice_core)):
        obs, ice = observatory.get(year), ice_core.get(year)
        if year < BLEND_START:
            if ice is not None:
                hist[year] = (ice, "ice-core")
        elif year <= BLEND_END:
            if obs is not None and ice is not None:
                hist[year] = (0.5 * (obs + ice), "blended")
            elif ice is not None:
                hist[year] = (ice, "ice-core")
            elif obs is not None:
                hist[year] = (obs, "observatory")
        elif obs is not None:
            hist[year] = (obs, "observatory")
    last_hist = max(hist)
    if projection:
        for year, ppm in sorted(projection.items()):
            if year > last_hist:
                hist[year] = (ppm, "projection")
    start = min(hist) if start is None else start
    end = max(hist) if end is None else end
    missing = [y for y in range(start, end + 1) if y not in hist]
    if missing:
        raise DataError(f"CO2 series has gaps in {start}-{end}: missing years {_compress(missing)}")
    years = list(range(start, end + 1))
    return CovariateSeries(years, [hist[y][0] for y in years], tuple(hist[y][1] for y in years))


def build_co2_series(observatory_path, ice_core_path, projection_path=None,
                     start: int | None = None, end: int | None = None) -> CovariateSeries:
    projection = read_projection(projection_path) if projection_path else None
    return blend_co2(observatory_annual_means(observatory_path), ice_core_annual(ice_core_path),
                     projection, start, end)


def _compress(years):
    spans, first, prev = [], years[0], years[0]
    for y in years[1:] + [None]:
        if y is not None and y == prev + 1:
            prev = y
            continue
        spans.append(str(first) if first == prev else f"{first}-{prev}")
        if y is not None:
            first = prev = y
    return ", ".join(spans)


def covariate_transform(series, reference_year: int = REFERENCE_YEAR) -> dict:
    """``x(t) = ln ppm(t) - ln ppm(reference)``."""
    ppm = series.as_dict() if isinstance(series, CovariateSeries) else dict(series)
    if reference_year not in ppm:
        raise DataError(f"reference year {reference_year} missing from CO2 series")
    ref = np.log(ppm[reference_year])
    return {int(y): float(np.log(v) - ref) for y, v in sorted(ppm.items())}


# ---------------------------------------------------------------------------
# Trend screen
# ---------------------------------------------------------------------------

MIN_PAIRS = 10


def kendall_tau_b(a, b) -> float:
    """Kendall tau-b with tie correction; NaN when either series is constant."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if len(a) < 2 or np.ptp(a) == 0 or np.ptp(b) == 0:
        return float("nan")
    return float(stats.kendalltau(a, b, variant="b").statistic)


def kendall_tau_screen(ams: pd.DataFrame, covariate: dict) -> pd.DataFrame:
    """Per-station tau-b between annual maxima and ``x(t)``."""
    rows = []
    for sid, grp in ams.groupby("station", sort=True):
        grp = grp[grp["year"].isin(list(covariate))]
        n = len(grp)
        if n < MIN_PAIRS:
            rows.append({"station": sid, "n": n, "tau_b": np.nan, "undefined": True})
            continue
        x = [covariate[int(y)] for y in grp["year"]]
        tau = kendall_tau_b(x, grp["inches"])
        rows.append({"station": sid, "n": n, "tau_b": tau, "undefined": bool(np.isnan(tau))})
    return pd.DataFrame(rows, columns=["station", "n", "tau_b", "undefined"])
