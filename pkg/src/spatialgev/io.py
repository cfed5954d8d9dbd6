"""Run configuration, output metadata headers and fit bundles."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .gp import SiteSet
from .inference import PosteriorSamples
from .models import Dataset, Family, ModelSpec

FLOAT_FORMAT = "%.10g"


class ConfigError(ValueError):
    pass


def _split_list(value, cast=str):
    if isinstance(value, (list, tuple)):
        return [cast(v) for v in value]
    return [cast(v.strip()) for v in str(value).split(",") if v.strip()]


PATH_KEYS = frozenset({
    "out", "ams", "co2", "bundle", "scenario",
    "daily", "station_meta", "co2_observatory", "co2_ice_core", "co2_projection",
})


@dataclass
class RunConfig:
    """Settings shared by every subcommand.

    The config file is ``key = value`` lines; ``#`` starts a comment. Keys
    match the attribute names below. List values are comma separated.
    """

    model: str = "svc"
    ams: str = ""
    co2: str = ""
    reference_year: int = 1990
    chains: int = 4
    iterations: int = 10000
    warmup_fraction: float = 0.5
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    map_starts: int = 8
    n_jobs: int = 1
    cv_plan: str = "odd_even_years"
    folds: str = ""
    validate_models: str = "pooled_stationary,nonpooled_nonstationary,svc"
    max_draws: int = 1000
    mc_draws: int = 4000
    grid_res: float = 0.25
    out: str = "out"
    bundle: str = ""
    locations: str = ""
    years: str = "1940,2022"
    return_periods: str = "10,100"
    scenario: str = ""
    horizon: int = 2100
    reference_level: str = ""
    # ingest
    daily: str = ""
    station_meta: str = ""
    co2_observatory: str = ""
    co2_ice_core: str = ""
    co2_projection: str = ""
    min_years: int = 30
    coverage: float = 0.99

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        values = {}
        if path:
            p = Path(path)
            if not p.exists():
                raise ConfigError(f"config file not found: {path}")
            for lineno, line in enumerate(p.read_text().splitlines(), 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key = value")
                k, v = line.split("=", 1)
                values[k.strip()] = v.strip()
        for k, v in (overrides or {}).items():
            if v is not None:
                values[k] = v
        return cls.from_mapping(values)

    @classmethod
    def from_mapping(cls, values: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs, extra = {}, {}
        for k, v in values.items():
            if k not in known:
                extra[k] = v
                continue
            typ = known[k].type
            try:
                if typ in ("int", int):
                    kwargs[k] = int(v)
                elif typ in ("float", float):
                    kwargs[k] = float(v)
                else:
                    kwargs[k] = str(v)
            except ValueError as err:
                raise ConfigError(f"bad value for {k}: {v!r}") from err
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**kwargs)

    @property
    def family(self) -> Family:
        return Family.parse(self.model)

    def year_list(self):
        return _split_list(self.years, int)

    def period_list(self):
        return _split_list(self.return_periods, float)

    def model_list(self):
        return [Family.parse(m) for m in _split_list(self.validate_models)]

    def fold_list(self):
        return _split_list(self.folds)

    def digest(self) -> str:
        # where files live does not change results; input contents are hashed separately
        values = {k: v for k, v in asdict(self).items() if k not in PATH_KEYS}
        if values["locations"] not in ("", "stations", "grid"):
            values["locations"] = "file"
        payload = json.dumps(values, sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def sampler_config(self):
        from .inference import SamplerConfig

        return SamplerConfig(
            chains=self.chains, iterations=self.iterations, warmup_fraction=self.warmup_fraction,
            target_accept=self.target_accept, max_tree_depth=self.max_tree_depth, seed=self.seed,
            n_jobs=self.n_jobs,
        )


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def metadata_lines(config: RunConfig, inputs=()) -> list:
    lines = [
        f"config_hash: {config.digest()}",
        f"seed: {config.seed}",
        f"code_version: {__version__}",
    ]
    for p in inputs:
        if p and Path(p).is_file():
            lines.append(f"input: {Path(p).name} sha256={file_digest(p)}")
    return lines


def atomic_write_text(path, text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, df: pd.DataFrame, metadata=(), index=False):
    """CSV with ``# key: value`` metadata header lines, written atomically."""
    header = "".join(f"# {line}\n" for line in metadata)
    body = df.to_csv(index=index, float_format=FLOAT_FORMAT, lineterminator="\n")
    atomic_write_text(path, header + body)


def read_csv(path, **kwargs) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", **kwargs)


# ---------------------------------------------------------------------------
# Fit bundles
# ---------------------------------------------------------------------------


def save_bundle(path, spec: ModelSpec, samples: PosteriorSamples, covariate: dict, metadata=()):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ds = spec.dataset
    cov_years = np.array(sorted(covariate), dtype=int)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".npz")
    os.close(fd)
    with open(tmp, "wb") as fh:
        np.savez_compressed(
            fh,
            family=np.array(spec.family.value),
            draws=samples.draws,
            logp=samples.logp,
            divergent=samples.divergent,
            coords=ds.sites.coords,
            ids=np.array(ds.station_ids(), dtype=str),
            station=ds.station, year=ds.year, value=ds.value,
            cov_years=cov_years,
            cov_values=np.array([covariate[y] for y in cov_years]),
            fit_cov_years=np.array(sorted(ds.covariate), dtype=int),
            metadata=np.array(list(metadata), dtype=str),
        )
    os.replace(tmp, path)


@dataclass
class Bundle:
    spec: ModelSpec
    draws: np.ndarray  # (chains, draws, dim)
    covariate: dict
    metadata: list

    @property
    def flat(self) -> np.ndarray:
        return self.draws.reshape(-1, self.draws.shape[-1])

    def spec_draws(self, max_draws: int) -> np.ndarray:
        """Evenly thinned flat draws, at most ``max_draws`` of them."""
        flat = self.flat
        if len(flat) <= max_draws:
            return flat
        return flat[np.linspace(0, len(flat) - 1, max_draws).round().astype(int)]


def load_bundle(path) -> Bundle:
    path = Path(path)
    if path.is_dir():
        path = path / "fit.npz"
    if not path.exists():
        raise FileNotFoundError(f"fit bundle not found: {path}")
    z = np.load(path, allow_pickle=False)
    cov_all = dict(zip(z["cov_years"].tolist(), z["cov_values"].tolist()))
    fit_years = set(z["fit_cov_years"].tolist())
    sites = SiteSet(z["coords"], tuple(z["ids"].tolist()))
    ds = Dataset(sites, z["station"], z["year"], z["value"],
                 {y: v for y, v in cov_all.items() if y in fit_years})
    spec = ModelSpec(str(z["family"]), ds)
    return Bundle(spec=spec, draws=z["draws"], covariate=cov_all, metadata=z["metadata"].tolist())


def draws_frame(samples: PosteriorSamples, chain: int, names) -> pd.DataFrame:
    df = pd.DataFrame(samples.draws[chain], columns=list(names))
    df.insert(0, "lp", samples.logp[chain])
    df.insert(0, "chain", chain)
    df.insert(0, "draw", np.arange(samples.n_draws))
    return df
