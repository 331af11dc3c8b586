"""Adaptive componentwise random-walk Metropolis--Hastings for positive parameters.

All parameters are positive and are sampled on the log scale, with the
Jacobian of the log transform included in the acceptance ratio. Each
iteration updates the parameters one at a time in a fixed order. During
burn-in the per-parameter proposal scales are tuned toward a target
acceptance rate with a Robbins--Monro step on the log scale, evaluated once
per adaptation window; after burn-in they are frozen.

Every parameter of every chain draws its proposal and acceptance variates
from its own stream, spawned from the configured seed, so chains are
reproducible and a parameter's stream does not depend on what the other
parameters did.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.special import gammaln

from .exceptions import DiagnosticError, DomainError, SamplingError

HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
RHAT_WARN = 1.1


# priors

def folded_normal_logpdf(x: float, scale: float = 1.0) -> float:
    """Half-normal (folded normal with location 0) log density."""
    if x <= 0:
        return -math.inf
    return math.log(2.0) - HALF_LOG_2PI - math.log(scale) - 0.5 * (x / scale) ** 2


def lognormal_logpdf(x: float, mu: float = 0.0, sigma: float = 1.0) -> float:
    if x <= 0:
        return -math.inf
    lx = math.log(x)
    return -lx - math.log(sigma) - HALF_LOG_2PI - 0.5 * ((lx - mu) / sigma) ** 2


def gamma_logpdf(x: float, shape: float, rate: float) -> float:
    """Gamma log density in the shape/rate parameterization."""
    if x <= 0:
        return -math.inf
    return shape * math.log(rate) - float(gammaln(shape)) + (shape - 1.0) * math.log(x) - rate * x


def log_prior(precisions: Sequence[float] = (), length_scales: Sequence[float] = (),
              gammas: Sequence[tuple] = ()) -> float:
    """Sum of the hyperprior log densities.

    Parameters
    ----------
    precisions : GP precisions, each with a folded-normal(0, 1) prior.
    length_scales : GP length scales, each with a log-normal(0, 1) prior.
    gammas : ``(value, shape, rate)`` triples for Gamma-distributed precisions.
    """
    values = list(precisions) + list(length_scales) + [g[0] for g in gammas]
    if any(not v > 0 for v in values):
        raise DomainError("all parameters must be positive")
    lp = sum(folded_normal_logpdf(v) for v in precisions)
    lp += sum(lognormal_logpdf(v) for v in length_scales)
    lp += sum(gamma_logpdf(v, a, b) for v, a, b in gammas)
    return lp


# configuration and results

@dataclass(frozen=True)
class MCMCConfig:
    n_chains: int = 3
    n_iter: int = 4000
    burn_in: int = 2000
    seed: int = 0
    target_accept: float = 0.30
    adapt_window: int = 50
    adapt: bool = True
    init_scale: float = 0.5

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError("need 0 <= burn_in < n_iter")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.adapt_window < 1:
            raise ValueError("adapt_window must be >= 1")
        if self.init_scale < 0:
            raise ValueError("init_scale must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "chains": self.n_chains, "iters": self.n_iter, "burn_in": self.burn_in,
            "seed": self.seed, "target_accept": self.target_accept,
            "adapt_window": self.adapt_window,
        }


@dataclass
class PosteriorSamples:
    """Retained draws of a multi-chain run.

    ``draws`` has shape ``(n_chains, n_kept, n_params)`` and holds
    log-parameters; :attr:`natural` gives them on the original scale.
    """

    names: tuple
    draws: np.ndarray
    acceptance: np.ndarray
    scales: np.ndarray
    rhat: np.ndarray = field(default=None)
    scale_trace: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.names = tuple(self.names)
        if self.rhat is None:
            try:
                self.rhat = split_rhat(self.draws)
            except DiagnosticError:
                self.rhat = np.full(self.draws.shape[2], np.nan)

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0] * self.draws.shape[1]

    @property
    def natural(self) -> np.ndarray:
        return np.exp(self.draws)

    def flat(self) -> np.ndarray:
        """Log-domain draws stacked chain after chain, ``(n_draws, n_params)``."""
        return self.draws.reshape(-1, self.draws.shape[2])

    def posterior_mean(self) -> np.ndarray:
        """Posterior mean of each parameter on the natural scale."""
        return self.natural.reshape(-1, self.draws.shape[2]).mean(axis=0)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def flagged(self, threshold: float = RHAT_WARN) -> list[str]:
        return [n for n, r in zip(self.names, self.rhat) if not r <= threshold]

    def diagnostics(self) -> dict:
        return {
            "parameters": list(self.names),
            "acceptance": self.acceptance.tolist(),
            "rhat": [float(r) for r in self.rhat],
            "rhat_flagged": self.flagged(),
            "n_chains": self.n_chains,
            "n_kept": self.draws.shape[1],
        }

    def to_csv(self, path) -> None:
        nat = self.natural
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["chain", "iteration", *self.names])
            for c in range(nat.shape[0]):
                for i in range(nat.shape[1]):
                    w.writerow([c, i, *(repr(float(v)) for v in nat[c, i])])

    def save(self, directory, stem: str = "posterior") -> None:
        directory = Path(directory)
        self.to_csv(directory / f"{stem}.csv")
        payload = self.diagnostics()
        payload["scales"] = self.scales.tolist()
        (directory / f"{stem}_diagnostics.json").write_text(json.dumps(payload, indent=2) + "\n")

    @classmethod
    def load(cls, directory, stem: str = "posterior") -> "PosteriorSamples":
        directory = Path(directory)
        with open(directory / f"{stem}.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        names = rows[0][2:]
        body = np.array([[float(v) for v in r] for r in rows[1:]])
        n_chains = int(body[:, 0].max()) + 1
        draws = np.log(body[:, 2:]).reshape(n_chains, -1, len(names))
        diag = json.loads((directory / f"{stem}_diagnostics.json").read_text())
        return cls(names, draws, np.array(diag["acceptance"]), np.array(diag["scales"]),
                   rhat=np.array(diag["rhat"]))


# target protocol

class BlockedLogTarget:
    """Log density expressed as a sum of terms.

    Subclasses set ``n_terms`` and implement :meth:`term` and
    :meth:`dependencies`. The sampler only re-evaluates the terms that depend
    on the parameter being updated and forms the acceptance ratio from the
    changed terms alone.
    """

    n_terms: int = 1

    def term(self, t: int, theta: np.ndarray) -> float:
        raise NotImplementedError

    def dependencies(self, i: int) -> tuple:
        return tuple(range(self.n_terms))

    def __call__(self, theta) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        return float(sum(self.term(t, theta) for t in range(self.n_terms)))


def _gain(k: int) -> float:
    return 2.0 / math.sqrt(k)


def _run_chain(log_target, u0, cfg: MCMCConfig, chain: int, seeds, scales0):
    n_par = u0.size
    streams = [np.random.Generator(np.random.PCG64(s)) for s in seeds]
    normals = np.empty((n_par, cfg.n_iter))
    log_unif = np.empty((n_par, cfg.n_iter))
    for i, g in enumerate(streams):
        normals[i] = g.standard_normal(cfg.n_iter)
        with np.errstate(divide="ignore"):
            log_unif[i] = np.log(g.random(cfg.n_iter))

    blocked = isinstance(log_target, BlockedLogTarget)
    u = u0.copy()
    theta = np.exp(u)
    if blocked:
        deps = [tuple(log_target.dependencies(i)) for i in range(n_par)]
        terms = np.array([log_target.term(t, theta) for t in range(log_target.n_terms)])
        current = float(terms.sum())
    else:
        current = float(log_target(theta))
    if not np.isfinite(current):
        raise SamplingError(f"chain {chain}: log target is not finite at the initial point")

    scales = scales0.copy()
    n_kept = cfg.n_iter - cfg.burn_in
    kept = np.empty((n_kept, n_par))
    trace = np.empty((cfg.n_iter, n_par))
    window_acc = np.zeros(n_par)
    post_acc = np.zeros(n_par)

    for it in range(cfg.n_iter):
        for i in range(n_par):
            u_new = u[i] + scales[i] * normals[i, it]
            prop = theta.copy()
            prop[i] = math.exp(u_new)
            if blocked:
                dep = deps[i]
                new_terms = [log_target.term(t, prop) for t in dep]
                delta = 0.0
                for t, v in zip(dep, new_terms):
                    delta += v - terms[t]
            else:
                new_lp = float(log_target(prop))
                delta = new_lp - current
            if math.isnan(delta):
                raise SamplingError(
                    f"chain {chain}, iteration {it}, parameter {i}: log target returned NaN"
                )
            if log_unif[i, it] < delta + (u_new - u[i]):
                u[i] = u_new
                theta = prop
                if blocked:
                    for t, v in zip(dep, new_terms):
                        terms[t] = v
                else:
                    current = new_lp
                window_acc[i] += 1
                if it >= cfg.burn_in:
                    post_acc[i] += 1
        trace[it] = scales
        if it >= cfg.burn_in:
            kept[it - cfg.burn_in] = u
        elif cfg.adapt and (it + 1) % cfg.adapt_window == 0:
            k = (it + 1) // cfg.adapt_window
            rate = window_acc / cfg.adapt_window
            scales = scales * np.exp(_gain(k) * (rate - cfg.target_accept))
            window_acc[:] = 0
    return kept, post_acc / max(n_kept, 1), scales, trace


def run_chains(log_target: Callable | BlockedLogTarget, init, cfg: MCMCConfig,
               names: Sequence[str] | None = None, scales=None) -> PosteriorSamples:
    """Sample a density over positive parameters with independent chains.

    Parameters
    ----------
    log_target : callable or BlockedLogTarget
        Log density (up to a constant) of the natural, positive parameters.
    init : array_like
        Starting point, shape ``(n_params,)`` shared by all chains or
        ``(n_chains, n_params)``.
    cfg : MCMCConfig
    names : parameter names, defaults to ``p0, p1, ...``.
    scales : initial proposal standard deviations on the log scale
        (defaults to ``cfg.init_scale`` for every parameter).
    """
    init = np.asarray(init, dtype=np.float64)
    if init.ndim == 1:
        init = np.tile(init, (cfg.n_chains, 1))
    if init.shape[0] != cfg.n_chains:
        raise ValueError(f"init has {init.shape[0]} rows for {cfg.n_chains} chains")
    if np.any(init <= 0):
        raise DomainError("initial parameters must be positive")
    n_par = init.shape[1]
    names = tuple(names) if names is not None else tuple(f"p{i}" for i in range(n_par))
    scales0 = np.full(n_par, cfg.init_scale) if scales is None else np.asarray(scales, float).copy()
    chain_seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.n_chains)

    draws, acc, final_scales, traces = [], [], [], []
    for c in range(cfg.n_chains):
        kept, rate, sc, trace = _run_chain(
            log_target, np.log(init[c]), cfg, c, chain_seeds[c].spawn(n_par), scales0
        )
        draws.append(kept)
        acc.append(rate)
        final_scales.append(sc)
        traces.append(trace)
    return PosteriorSamples(names, np.stack(draws), np.stack(acc), np.stack(final_scales),
                            scale_trace=np.stack(traces))


# diagnostics

def _as_chain_array(samples) -> np.ndarray:
    arr = samples.draws if isinstance(samples, PosteriorSamples) else np.asarray(samples, float)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def split_rhat(samples) -> np.ndarray:
    """Split potential scale reduction factor per parameter.

    Each chain is cut into a first and second half (the middle draw of an
    odd-length chain is dropped) and the classic between/within-chain
    variance ratio is computed over the half-chains.
    """
    arr = _as_chain_array(samples)
    n_chains, n, _ = arr.shape
    if n_chains < 2 or n < 4:
        raise DiagnosticError("split R-hat needs at least 2 chains with 4 draws each")
    half = n // 2
    splits = np.concatenate([arr[:, :half], arr[:, n - half:]], axis=0)
    means = splits.mean(axis=1)
    w = splits.var(axis=1, ddof=1).mean(axis=0)
    b_over_n = means.var(axis=0, ddof=1)
    var_plus = (half - 1) / half * w + b_over_n
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(var_plus / w)
    rhat = np.where(w > 0, rhat, np.where(b_over_n > 0, np.inf, 1.0))
    return rhat


def effective_sample_size(samples) -> np.ndarray:
    """Multi-chain effective sample size (initial positive sequence estimator)."""
    arr = _as_chain_array(samples)
    n_chains, n, n_par = arr.shape
    out = np.empty(n_par)
    for p in range(n_par):
        x = arr[:, :, p]
        centered = x - x.mean(axis=1, keepdims=True)
        nfft = 1 << (2 * n - 1).bit_length()
        f = np.fft.rfft(centered, n=nfft, axis=1)
        acov = np.fft.irfft(f * np.conj(f), n=nfft, axis=1)[:, :n] / n
        chain_var = acov[:, 0] * n / (n - 1)
        w = chain_var.mean()
        var_plus = w * (n - 1) / n
        if n_chains > 1:
            var_plus += x.mean(axis=1).var(ddof=1)
        if var_plus <= 0:
            out[p] = float(n_chains * n)
            continue
        rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
        rho[0] = 1.0
        total = 0.0
        t = 0
        while t + 1 < n:
            pair = rho[t] + rho[t + 1]
            if pair < 0:
                break
            total += pair
            t += 2
        tau = max(-1.0 + 2.0 * total, 1.0 / math.log10(max(n_chains * n, 10)))
        out[p] = n_chains * n / tau
    return out
