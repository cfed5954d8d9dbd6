"""Multi-start MAP estimation."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize

logger = logging.getLogger(__name__)

GTOL = 1e-6
MAX_ITER = 500
DEFAULT_STARTS = 8


class OptimizationError(RuntimeError):
    pass


@dataclass
class MapResult:
    theta: np.ndarray
    logp: float
    start_logps: list
    n_converged: int
    history: list


def _maximize(target, x0):
    """L-BFGS from one start; returns (theta, logp, trace of accepted logps)."""
    trace = []

    def f(x):
        lp, g = target.logp_and_grad(x)
        if not np.isfinite(lp):
            # steer the line search back without poisoning the curvature pairs
            return 1e300, np.zeros_like(x)
        return -lp, -g

    def cb(xk):
        trace.append(float(target.logp_and_grad(xk)[0]))

    res = optimize.minimize(
        f, x0, jac=True, method="L-BFGS-B", callback=cb,
        options={"maxiter": MAX_ITER, "gtol": GTOL, "ftol": 0.0, "maxcor": 20},
    )
    lp, g = target.logp_and_grad(res.x)
    converged = np.isfinite(lp) and float(np.max(np.abs(g))) < GTOL
    return res.x, float(lp), trace, converged


def map_estimate(target, starts: int = DEFAULT_STARTS, rng=None, initial_points=None) -> MapResult:
    """Best of several quasi-Newton runs.

    Starting points come from ``initial_points`` or the target's
    ``initial_points(count, rng)`` (prior mean plus prior draws for model specs).
    The returned point is never worse than any finite start.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if initial_points is None:
        initial_points = target.initial_points(starts, rng)
    best_theta, best_lp = None, -np.inf
    start_lps, history = [], []
    n_conv = 0
    for x0 in initial_points:
        x0 = np.asarray(x0, float)
        lp0 = float(target.logp_and_grad(x0)[0])
        start_lps.append(lp0)
        if not np.isfinite(lp0):
            continue
        theta, lp, trace, conv = _maximize(target, x0)
        history.append(trace)
        n_conv += int(conv)
        if lp < lp0:
            theta, lp = x0, lp0
        if lp > best_lp:
            best_theta, best_lp = theta, lp
    if best_theta is None:
        raise OptimizationError("every MAP start has a non-finite log-posterior")
    logger.info("MAP log-posterior %.4f (%d/%d starts converged)", best_lp, n_conv, len(start_lps))
    return MapResult(np.asarray(best_theta), best_lp, start_lps, n_conv, history)
