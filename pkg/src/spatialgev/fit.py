"""MAP-initialized posterior sampling for a model spec."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .inference import Diagnostics, MapResult, PosteriorSamples, SamplerConfig, map_estimate, sample, summarize
from .models import ModelSpec

logger = logging.getLogger(__name__)


@dataclass
class FitResult:
    spec: ModelSpec
    map: MapResult
    samples: PosteriorSamples
    diagnostics: Diagnostics

    @property
    def draws(self) -> np.ndarray:
        return self.samples.flat()

    def posterior_mean(self) -> dict:
        return {k: v.mean(axis=0) for k, v in self.spec.decode(self.draws).items()}


def fit(spec: ModelSpec, config: SamplerConfig, map_starts: int = 8) -> FitResult:
    """MAP over ``map_starts`` starts, then ``config.chains`` chains from the MAP."""
    rng = np.random.default_rng(np.random.SeedSequence([int(config.seed), 7919]))
    best = map_estimate(spec, starts=map_starts, rng=rng)
    samples = sample(spec, config, best.theta, param_names=spec.param_names)
    diag = summarize(samples)
    logger.info("%s: max R-hat %.4f, %d divergences", spec.family.value, diag.max_rhat, diag.n_divergent)
    return FitResult(spec=spec, map=best, samples=samples, diagnostics=diag)
