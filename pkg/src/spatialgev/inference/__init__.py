from .diagnostics import Diagnostics, ess, rhat, rhat_detail, summarize
from .hmc import PosteriorSamples, SamplerConfig, sample
from .optimize import MapResult, OptimizationError, map_estimate

__all__ = [
    "Diagnostics",
    "MapResult",
    "OptimizationError",
    "PosteriorSamples",
    "SamplerConfig",
    "ess",
    "map_estimate",
    "rhat",
    "rhat_detail",
    "sample",
    "summarize",
]
