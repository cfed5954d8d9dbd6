"""Dynamic-trajectory HMC with multinomial sampling.

The transition follows the doubling-tree construction with the generalized
no-U-turn criterion (including the extra checks across merged subtrees).
Warmup tunes the step size by dual averaging and a diagonal inverse metric
from windowed variance estimates.

Targets are objects exposing ``dim`` and ``logp_and_grad(theta)``.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

MAX_DELTA_H = 1000.0
BIT_GENERATOR = "Philox"


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 4
    iterations: int = 10000
    warmup_fraction: float = 0.5
    target_accept: float = 0.8
    max_tree_depth: int = 10
    seed: int = 0
    init_buffer: int = 75
    term_buffer: int = 50
    base_window: int = 25
    n_jobs: int = 1
    init_jitter: float = 0.0

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("need at least one chain")
        if not 0 < self.warmup_fraction < 1:
            raise ValueError("warmup fraction must lie in (0, 1)")
        if self.iterations < 2:
            raise ValueError("need at least two iterations per chain")
        if not 0 < self.target_accept < 1:
            raise ValueError("target acceptance must lie in (0, 1)")

    @property
    def n_warmup(self) -> int:
        return int(round(self.iterations * self.warmup_fraction))

    @property
    def n_draws(self) -> int:
        return self.iterations - self.n_warmup


@dataclass
class PosteriorSamples:
    """Post-warmup draws only.

    ``draws`` has shape ``(chains, draws, dim)`` on the unconstrained scale.
    """

    draws: np.ndarray
    logp: np.ndarray
    divergent: np.ndarray
    tree_depth: np.ndarray
    n_leapfrog: np.ndarray
    accept_stat: np.ndarray
    step_size: np.ndarray
    inv_metric: np.ndarray
    param_names: list = field(default_factory=list)
    seed: int = 0

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    @property
    def dim(self) -> int:
        return self.draws.shape[2]

    @property
    def n_divergent(self) -> int:
        return int(self.divergent.sum())

    def flat(self) -> np.ndarray:
        """Draws stacked chain after chain, shape ``(chains * draws, dim)``."""
        return self.draws.reshape(-1, self.dim)

    def decoded(self, spec) -> dict:
        return spec.decode(self.flat())

    def thin(self, max_draws: int) -> np.ndarray:
        """Evenly spaced subset of the flattened draws."""
        flat = self.flat()
        if len(flat) <= max_draws:
            return flat
        idx = np.linspace(0, len(flat) - 1, max_draws).round().astype(int)
        return flat[idx]


class _Point:
    __slots__ = ("q", "p", "logp", "grad")

    def __init__(self, q, p, logp, grad):
        self.q, self.p, self.logp, self.grad = q, p, logp, grad

    def copy(self):
        return _Point(self.q, self.p, self.logp, self.grad)


def chain_rng(seed: int, chain: int) -> np.random.Generator:
    """Counter-based stream for one chain."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(chain)])))


class _Kernel:
    """One chain's transition kernel and its mutable tuning state."""

    def __init__(self, target, rng, inv_metric, step_size, max_depth):
        self.target = target
        self.rng = rng
        self.inv_metric = inv_metric
        self.eps = step_size
        self.max_depth = max_depth
        self.n_leapfrog = 0
        self.divergent = False
        self.sum_metro = 0.0

    def kinetic(self, p):
        return 0.5 * float(np.dot(p * self.inv_metric, p))

    def hamiltonian(self, z):
        return -z.logp + self.kinetic(z.p)

    def leapfrog(self, z, eps):
        p = z.p + 0.5 * eps * z.grad
        q = z.q + eps * self.inv_metric * p
        logp, grad = self.target.logp_and_grad(q)
        if not np.isfinite(logp):
            return _Point(q, p, -np.inf, np.zeros_like(q))
        p = p + 0.5 * eps * grad
        return _Point(q, p, logp, grad)

    def sample_momentum(self):
        return self.rng.standard_normal(len(self.inv_metric)) / np.sqrt(self.inv_metric)

    # -- tree building --------------------------------------------------------

    def build_tree(self, depth, z, sign, H0):
        """Extend from ``z`` by ``2**depth`` leapfrog steps.

        Returns ``(valid, z_end, proposal, log_sum_w, rho, p_beg, p_end,
        ps_beg, ps_end)`` where ``ps`` are sharp momenta (``M^-1 p``).
        """
        if depth == 0:
            z_new = self.leapfrog(z, sign * self.eps)
            self.n_leapfrog += 1
            h = self.hamiltonian(z_new) if np.isfinite(z_new.logp) else np.inf
            if math.isnan(h):
                h = np.inf
            if h - H0 > MAX_DELTA_H:
                self.divergent = True
            log_w = H0 - h
            self.sum_metro += 1.0 if log_w > 0 else math.exp(log_w)
            ps = self.inv_metric * z_new.p
            return (not self.divergent, z_new, z_new, log_w, z_new.p.copy(),
                    z_new.p, z_new.p, ps, ps)

        ok, z, prop_init, lw_init, rho_init, p_beg, p_init_end, ps_beg, ps_init_end = \
            self.build_tree(depth - 1, z, sign, H0)
        if not ok:
            return (False, z, None, -np.inf, None, None, None, None, None)
        ok, z, prop_final, lw_final, rho_final, p_final_beg, p_end, ps_final_beg, ps_end = \
            self.build_tree(depth - 1, z, sign, H0)
        if not ok:
            return (False, z, None, -np.inf, None, None, None, None, None)

        lw = np.logaddexp(lw_init, lw_final)
        proposal = prop_init
        if lw_final > lw or self.rng.uniform() < math.exp(lw_final - lw):
            proposal = prop_final

        rho = rho_init + rho_final
        persist = _criterion(ps_beg, ps_end, rho)
        persist &= _criterion(ps_beg, ps_final_beg, rho_init + p_final_beg)
        persist &= _criterion(ps_init_end, ps_end, rho_final + p_init_end)
        return (persist, z, proposal, lw, rho, p_beg, p_end, ps_beg, ps_end)

    def transition(self, q, logp, grad):
        p0 = self.sample_momentum()
        z0 = _Point(q, p0, logp, grad)
        H0 = self.hamiltonian(z0)
        z_fwd = z0
        z_bck = z0
        sample = z0
        ps0 = self.inv_metric * p0

        p_fwd_fwd = p_fwd_bck = p_bck_fwd = p_bck_bck = p0
        ps_fwd_fwd = ps_fwd_bck = ps_bck_fwd = ps_bck_bck = ps0
        rho = p0.copy()
        log_sum_w = 0.0
        self.n_leapfrog = 0
        self.sum_metro = 0.0
        self.divergent = False
        depth = 0

        while depth < self.max_depth:
            if self.rng.uniform() > 0.5:
                rho_bck = rho
                p_bck_fwd, ps_bck_fwd = p_fwd_fwd, ps_fwd_fwd
                ok, z_fwd, prop, lw_sub, rho_fwd, p_fwd_bck, p_fwd_fwd, ps_fwd_bck, ps_fwd_fwd = \
                    self.build_tree(depth, z_fwd, 1.0, H0)
            else:
                rho_fwd = rho
                p_fwd_bck, ps_fwd_bck = p_bck_bck, ps_bck_bck
                ok, z_bck, prop, lw_sub, rho_bck, p_bck_fwd, p_bck_bck, ps_bck_fwd, ps_bck_bck = \
                    self.build_tree(depth, z_bck, -1.0, H0)
            if not ok:
                break
            depth += 1
            if lw_sub > log_sum_w or self.rng.uniform() < math.exp(lw_sub - log_sum_w):
                sample = prop
            log_sum_w = np.logaddexp(log_sum_w, lw_sub)

            rho = rho_bck + rho_fwd
            persist = _criterion(ps_bck_bck, ps_fwd_fwd, rho)
            persist &= _criterion(ps_bck_bck, ps_fwd_bck, rho_bck + p_fwd_bck)
            persist &= _criterion(ps_bck_fwd, ps_fwd_fwd, rho_fwd + p_bck_fwd)
            if not persist:
                break

        accept = self.sum_metro / max(self.n_leapfrog, 1)
        return sample, accept, depth

    # -- step size heuristics -------------------------------------------------

    def find_reasonable_step_size(self, q, logp, grad):
        """Double or halve the step until one-step acceptance crosses 0.8."""
        z = _Point(q, self.sample_momentum(), logp, grad)
        H0 = self.hamiltonian(z)
        z1 = self.leapfrog(z, self.eps)
        h = self.hamiltonian(z1) if np.isfinite(z1.logp) else np.inf
        delta = H0 - h
        direction = 1 if delta > math.log(0.8) else -1
        for _ in range(100):
            z = _Point(q, self.sample_momentum(), logp, grad)
            H0 = self.hamiltonian(z)
            z1 = self.leapfrog(z, self.eps)
            h = self.hamiltonian(z1) if np.isfinite(z1.logp) else np.inf
            delta = H0 - h
            if direction == 1 and not delta > math.log(0.8):
                break
            if direction == -1 and not delta < math.log(0.8):
                break
            self.eps = self.eps * 2.0 if direction == 1 else self.eps * 0.5
            if self.eps > 1e7 or self.eps < 1e-12:
                break
        return self.eps


def _criterion(ps_minus, ps_plus, rho):
    return float(np.dot(ps_plus, rho)) > 0 and float(np.dot(ps_minus, rho)) > 0


class _DualAveraging:
    def __init__(self, eps, delta, gamma=0.05, t0=10.0, kappa=0.75):
        self.delta, self.gamma, self.t0, self.kappa = delta, gamma, t0, kappa
        self.restart(eps)

    def restart(self, eps):
        self.mu = math.log(10.0 * eps)
        self.s_bar = 0.0
        self.x_bar = 0.0
        self.counter = 0

    def update(self, accept):
        self.counter += 1
        accept = min(accept, 1.0)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.delta - accept)
        x = self.mu - self.s_bar * math.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = x_eta * x + (1.0 - x_eta) * self.x_bar
        return math.exp(x)

    def final(self):
        return math.exp(self.x_bar)


def adaptation_windows(n_warmup, init_buffer=75, term_buffer=50, base_window=25):
    """End indices (exclusive) of the slow metric-adaptation windows.

    Returns ``(start, ends)``: windows begin at ``start`` and each subsequent
    window doubles in length, the last one stretched to ``n_warmup - term_buffer``.
    """
    if n_warmup < 20:
        return n_warmup, []
    if init_buffer + base_window + term_buffer > n_warmup:
        init_buffer = int(0.15 * n_warmup)
        term_buffer = int(0.1 * n_warmup)
        base_window = n_warmup - init_buffer - term_buffer
    end_slow = n_warmup - term_buffer
    ends = []
    start = init_buffer
    size = base_window
    pos = start
    while pos < end_slow:
        nxt = pos + size
        if nxt + 2 * size > end_slow:
            nxt = end_slow
        ends.append(nxt)
        pos = nxt
        size *= 2
    return init_buffer, ends


def _run_chain(target, config: SamplerConfig, init, chain: int):
    rng = chain_rng(config.seed, chain)
    dim = len(init)
    q = np.array(init, dtype=float)
    if config.init_jitter > 0:
        trial = q + rng.uniform(-config.init_jitter, config.init_jitter, dim)
        if np.isfinite(target.logp_and_grad(trial)[0]):
            q = trial
    logp, grad = target.logp_and_grad(q)
    if not np.isfinite(logp):
        raise ValueError("initial point has non-finite log-posterior")

    kernel = _Kernel(target, rng, np.ones(dim), 1.0, config.max_tree_depth)
    kernel.find_reasonable_step_size(q, logp, grad)
    da = _DualAveraging(kernel.eps, config.target_accept)

    n_warmup, n_draws = config.n_warmup, config.n_draws
    start, ends = adaptation_windows(n_warmup, config.init_buffer, config.term_buffer, config.base_window)
    window_draws = []
    next_end = 0

    draws = np.empty((n_draws, dim))
    out_logp = np.empty(n_draws)
    divergent = np.zeros(n_draws, dtype=bool)
    depth = np.zeros(n_draws, dtype=int)
    n_leap = np.zeros(n_draws, dtype=int)
    accept_stat = np.empty(n_draws)

    for it in range(n_warmup):
        z, accept, _ = kernel.transition(q, logp, grad)
        q, logp, grad = z.q, z.logp, z.grad
        kernel.eps = da.update(accept)
        if next_end < len(ends) and it >= start:
            window_draws.append(q)
            if it + 1 == ends[next_end]:
                w = np.array(window_draws)
                n = len(w)
                var = w.var(axis=0, ddof=1) if n > 1 else np.ones(dim)
                kernel.inv_metric = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                window_draws = []
                next_end += 1
                kernel.find_reasonable_step_size(q, logp, grad)
                da.restart(kernel.eps)
    if n_warmup > 0:
        kernel.eps = da.final()

    for i in range(n_draws):
        z, accept, d = kernel.transition(q, logp, grad)
        q, logp, grad = z.q, z.logp, z.grad
        draws[i] = q
        out_logp[i] = logp
        divergent[i] = kernel.divergent
        depth[i] = d
        n_leap[i] = kernel.n_leapfrog
        accept_stat[i] = accept
    return draws, out_logp, divergent, depth, n_leap, accept_stat, kernel.eps, kernel.inv_metric


def sample(target, config: SamplerConfig, init, param_names=None) -> PosteriorSamples:
    """Run ``config.chains`` independent chains from ``init``.

    ``init`` is either one starting vector shared by all chains or an array of
    shape ``(chains, dim)``. Results are reproducible given ``config.seed``.
    """
    init = np.asarray(init, dtype=float)
    if init.ndim == 1:
        inits = np.tile(init, (config.chains, 1))
    else:
        inits = init
    if inits.shape[0] != config.chains:
        raise ValueError("need one initial point per chain")
    for row in inits:
        if not np.all(np.isfinite(row)) or not np.isfinite(target.logp_and_grad(row)[0]):
            raise ValueError("initial point has non-finite log-posterior")

    if config.n_jobs > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.n_jobs, config.chains)) as pool:
            futures = [pool.submit(_run_chain, target, config, inits[c], c) for c in range(config.chains)]
            results = [f.result() for f in futures]
    else:
        results = [_run_chain(target, config, inits[c], c) for c in range(config.chains)]

    draws, logp, div, depth, nl, acc, eps, inv = (np.array(x) for x in zip(*results))
    names = list(param_names) if param_names is not None else list(getattr(target, "param_names", []))
    out = PosteriorSamples(
        draws=draws, logp=logp, divergent=div, tree_depth=depth, n_leapfrog=nl,
        accept_stat=acc, step_size=eps, inv_metric=inv, param_names=names, seed=config.seed,
    )
    logger.info("sampled %d chains x %d draws, %d divergences, step sizes %s",
                out.n_chains, out.n_draws, out.n_divergent, np.round(eps, 4))
    return out
