"""Single-fidelity tensor emulator.

An ensemble ``Z`` of shape ``(n_s, n_m, n_y, n_x)`` is compressed with a
Tucker model. Only the design-mode factor ``U_x`` depends on the inputs, so
each of its ``r_x`` columns (the effective weights) gets an independent
Gaussian-process prior over the design. Integrating the latent weights out
of the full Gaussian model leaves a likelihood over ``n_x * r_x`` numbers:

    gamma_obs ~ N(0, lam^-1 (C^T C)^-1 + Sigma_gamma(X, X))

with ``C^T C = (G4 G4^T) kron I`` and ``gamma_obs = (C^T C)^-1 C^T z`` the
generalized least-squares weights. The residual that the reduction discards
enters through the updated Gamma hyperparameters of the noise precision
``lam``. At a converged HOOI solution ``gamma_obs`` coincides with ``U_x``
and ``G4 G4^T`` is diagonal, which makes the likelihood separate into one
``n_x``-dimensional Gaussian per effective weight.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg

from . import gp
from .exceptions import (
    ContractError,
    DimensionError,
    FactorizationError,
    FitError,
    NotFittedError,
    SamplingError,
)
from .io import read_design_csv, write_design_csv
from .mcmc import (
    BlockedLogTarget,
    MCMCConfig,
    PosteriorSamples,
    folded_normal_logpdf,
    gamma_logpdf,
    lognormal_logpdf,
    run_chains,
)
from .prediction import PredictionResult
from .tensor import DenseTensor, as_tensor, multi_ttm, read_mft, unfold_array, write_mft
from .transform import TransformSpec, apply_tensor, inverse
from .tucker import TuckerModel, hooi, load_tucker, save_tucker, select_ranks

log = logging.getLogger(__name__)

A_ETA = 1.0
B_ETA = 0.5
ORTHO_TOL = 1e-8
DIAG_TOL = 1e-10


# structure of the reduced model

def _check_model(tucker: TuckerModel) -> None:
    if tucker.order != 4:
        raise DimensionError(f"expected a 4-mode Tucker model, got order {tucker.order}")


def core_unfold4(tucker: TuckerModel) -> np.ndarray:
    """``G_(4)``, shape ``(r_x, r_s * r_m * r_y)``."""
    _check_model(tucker)
    return unfold_array(tucker.core.data, 3)


def effective_weights(tucker: TuckerModel, validate: bool = True) -> np.ndarray:
    """Columns of ``U_x``.

    With ``validate`` the full weights ``U_x G_(4)`` (the linear map of the
    effective weights) are compared with the direct sum over the core and an
    error is raised if they disagree beyond rounding.
    """
    _check_model(tucker)
    ux = tucker.factors[3].copy()
    if validate:
        g = tucker.core.data
        direct = np.einsum("abcj,ij->iabc", g, ux)
        mapped = (ux @ core_unfold4(tucker)).reshape(direct.shape, order="F")
        scale = max(1.0, float(np.max(np.abs(direct))))
        if np.max(np.abs(direct - mapped)) > 1e-10 * scale:
            raise ContractError("full weights disagree with the mapped effective weights")
    return ux


def full_weights(tucker: TuckerModel, gamma: np.ndarray) -> np.ndarray:
    """Full weights ``(G_(4)^T kron I) vec(gamma)`` as an ``(n_x, R)`` matrix."""
    return np.asarray(gamma) @ core_unfold4(tucker)


def _check_orthonormal(factors) -> None:
    for k, f in enumerate(factors):
        err = float(np.max(np.abs(f.T @ f - np.eye(f.shape[1]))))
        if err > ORTHO_TOL:
            raise ContractError(f"factor {k} is not orthonormal (max deviation {err:.2e})")


def core_gram(tucker: TuckerModel) -> np.ndarray:
    g4 = core_unfold4(tucker)
    return g4 @ g4.T


def reduced_gram(tucker: TuckerModel) -> np.ndarray:
    """``C^T C = (G_(4) G_(4)^T) kron I_{n_x}`` without forming ``C``."""
    _check_model(tucker)
    _check_orthonormal(tucker.factors[:3])
    return np.kron(core_gram(tucker), np.eye(tucker.dims[3]))


def _projected(z: np.ndarray, factors) -> np.ndarray:
    """Per-design basis inner products, ``(n_x, r_s * r_m * r_y)``."""
    y = multi_ttm(z, list(factors[:3]), modes=(0, 1, 2), transpose=True)
    return unfold_array(y, 3)


def _check_data(z, tucker: TuckerModel) -> np.ndarray:
    z = as_tensor(z).data
    if z.shape != tucker.dims:
        raise DimensionError(f"data dims {z.shape} do not match model dims {tucker.dims}")
    return z


def project_data(z, tucker: TuckerModel) -> np.ndarray:
    """``C^T vec(z)`` as a vector of length ``n_x * r_x`` (design index fastest)."""
    _check_model(tucker)
    z = _check_data(z, tucker)
    q = _projected(z, tucker.factors) @ core_unfold4(tucker).T
    return q.ravel(order="F")


def _gram_cholesky(gram: np.ndarray) -> np.ndarray:
    try:
        return scipy.linalg.cholesky(gram, lower=True)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("core Gram matrix is singular") from exc


def gls_weights(z, tucker: TuckerModel) -> np.ndarray:
    """``(C^T C)^-1 C^T z`` reshaped to ``(n_x, r_x)``."""
    q = project_data(z, tucker).reshape(tucker.dims[3], -1, order="F")
    chol = _gram_cholesky(core_gram(tucker))
    return scipy.linalg.cho_solve((chol, True), q.T).T


def residual_sq(z, tucker: TuckerModel) -> float:
    """``z^T (I - C (C^T C)^-1 C^T) z``."""
    zz = _check_data(z, tucker)
    q = project_data(zz, tucker).reshape(tucker.dims[3], -1, order="F")
    chol = _gram_cholesky(core_gram(tucker))
    quad = float(np.sum(q * scipy.linalg.cho_solve((chol, True), q.T).T))
    return float(np.sum(zz * zz)) - quad


def reduced_hyperparams(z, tucker: TuckerModel, a: float = A_ETA, b: float = B_ETA) -> tuple:
    """Updated Gamma hyperparameters ``(a', b')`` of the noise precision.

    ``a' = a + n_x (n - r_x) / 2`` and ``b' = b + residual / 2`` where the
    residual is the part of ``z`` outside the span of the basis.
    """
    if not (a > 0 and b > 0):
        raise ValueError("Gamma hyperparameters must be positive")
    _check_model(tucker)
    n_x = tucker.dims[3]
    n = int(np.prod(tucker.dims[:3]))
    a_post = a + n_x * (n - tucker.ranks[3]) / 2.0
    b_post = b + residual_sq(z, tucker) / 2.0
    return a_post, b_post


# reduced likelihood

def gp_param_names(r: int, p: int, prefix: str = "", input_names=None) -> list[str]:
    input_names = input_names or [f"x{d + 1}" for d in range(p)]
    names = []
    for j in range(r):
        names.append(f"{prefix}precision_{j + 1}")
        names += [f"{prefix}length_scale_{j + 1}_{input_names[d]}" for d in range(p)]
    return names


def _gp_prior(tau: float, ls) -> float:
    return folded_normal_logpdf(tau) + sum(lognormal_logpdf(v) for v in ls)


class ReducedWeightTarget(BlockedLogTarget):
    """Posterior of the effective-weight GP hyperparameters and ``lam``.

    Parameters are laid out as ``(precision_j, length_scale_j1..p)`` for each
    effective weight followed by ``lam`` (omitted when ``fixed_lambda`` is
    given). When the core Gram matrix is diagonal the density is split into
    one term per effective weight plus a term for the prior of ``lam``.

    The columns of ``U_x`` have unit norm, so their entries shrink like
    ``n_x**-0.5``. The precision therefore refers to the rescaled weights
    ``sqrt(n_x) * gamma``, whose entries are of order one: the kernel
    variance of ``gamma`` itself is ``1 / (n_x * precision)``.
    """

    def __init__(self, design, observed, gram, a_post, b_post, fixed_lambda=None):
        self.design = gp.as_design(design)
        self.observed = np.asarray(observed, dtype=np.float64)
        self.n_x, self.r = self.observed.shape
        self.p = self.design.shape[1]
        if self.design.shape[0] != self.n_x:
            raise DimensionError("design rows and observed weights disagree")
        self.gram = np.asarray(gram, dtype=np.float64)
        self.a_post, self.b_post = float(a_post), float(b_post)
        self.fixed_lambda = fixed_lambda
        self.dist = gp.DistanceStack(self.design)
        off = self.gram - np.diag(np.diag(self.gram))
        self.diagonal = bool(np.max(np.abs(off), initial=0.0) <= DIAG_TOL * np.max(np.abs(self.gram)))
        if self.diagonal:
            self.gdiag = np.diag(self.gram).copy()
            if np.any(self.gdiag <= 0):
                raise FactorizationError("core Gram matrix is singular")
            self.n_terms = self.r + (0 if fixed_lambda is not None else 1)
        else:
            self.gram_inv = np.linalg.inv(self.gram)
            self.n_terms = 1
        self.n_params = self.r * (1 + self.p) + (0 if fixed_lambda is not None else 1)

    # layout helpers
    def block(self, j: int) -> slice:
        s = j * (1 + self.p)
        return slice(s, s + 1 + self.p)

    def lam(self, theta) -> float:
        return self.fixed_lambda if self.fixed_lambda is not None else float(theta[-1])

    def names(self, input_names=None) -> list[str]:
        names = gp_param_names(self.r, self.p, input_names=input_names)
        return names if self.fixed_lambda is not None else names + ["lambda_eta"]

    def dependencies(self, i: int) -> tuple:
        if not self.diagonal:
            return (0,)
        if i >= self.r * (1 + self.p):
            return tuple(range(self.n_terms))
        return (i // (1 + self.p),)

    def weight_cov(self, j: int, theta) -> np.ndarray:
        blk = theta[self.block(j)]
        return self.dist.cov(blk[0] * self.n_x, blk[1:])

    def joint_cov(self, theta) -> np.ndarray:
        lam = self.lam(theta)
        blocks = [self.weight_cov(j, theta) for j in range(self.r)]
        noise = np.linalg.inv(self.gram) if self.diagonal else self.gram_inv
        return gp.block_diag(blocks) + np.kron(noise, np.eye(self.n_x)) / lam

    def block_loglik(self, j: int, theta) -> float:
        cov = self.weight_cov(j, theta)
        cov[np.diag_indices_from(cov)] += 1.0 / (self.lam(theta) * self.gdiag[j])
        return gp.logpdf_from_cholesky(self.observed[:, j], gp.cholesky(cov))

    def log_likelihood(self, theta) -> float:
        """Gaussian log density of the observed weights (no priors)."""
        theta = np.asarray(theta, dtype=np.float64)
        if self.diagonal:
            return float(sum(self.block_loglik(j, theta) for j in range(self.r)))
        y = self.observed.ravel(order="F")
        return gp.logpdf_from_cholesky(y, gp.cholesky(self.joint_cov(theta)))

    def log_prior(self, theta) -> float:
        lp = sum(_gp_prior(theta[self.block(j)][0], theta[self.block(j)][1:]) for j in range(self.r))
        if self.fixed_lambda is None:
            lp += gamma_logpdf(theta[-1], self.a_post, self.b_post)
        return lp

    def term(self, t: int, theta) -> float:
        try:
            if not self.diagonal:
                return self.log_prior(theta) + self.log_likelihood(theta)
            if t == self.r:
                return gamma_logpdf(theta[-1], self.a_post, self.b_post)
            blk = theta[self.block(t)]
            return _gp_prior(blk[0], blk[1:]) + self.block_loglik(t, theta)
        except FactorizationError:
            return -math.inf

    def initial_point(self) -> np.ndarray:
        theta = np.ones(self.n_params)
        if self.fixed_lambda is None:
            theta[-1] = self.a_post / self.b_post
        return theta

    def initial_scales(self, base: float) -> np.ndarray:
        scales = np.full(self.n_params, base)
        if self.fixed_lambda is None:
            scales[-1] = min(base, 1.0 / math.sqrt(self.a_post))
        return scales


def chain_inits(point: np.ndarray, cfg: MCMCConfig, n_fixed_tail: int = 0, spread: float = 0.1):
    """Jittered starting points, one per chain, drawn from the run seed."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
    jitter = rng.standard_normal((cfg.n_chains, point.size)) * spread
    if n_fixed_tail:
        jitter[:, -n_fixed_tail:] *= 0.0
    return point * np.exp(jitter)


# fitted model

@dataclass(frozen=True)
class SFEmulator:
    """Fitted single-fidelity emulator.

    ``observed`` holds the least-squares effective weights used in the
    likelihood (equal to ``U_x`` at a converged decomposition) and
    ``samples`` the posterior draws of the hyperparameters.
    """

    tucker: TuckerModel
    design: np.ndarray
    observed: np.ndarray
    a_prime: float
    b_prime: float
    data_sq_norm: float
    samples: PosteriorSamples | None = None
    transform: TransformSpec | None = None
    prior: tuple = (A_ETA, B_ETA)
    fixed_lambda: float | None = None
    cfg: MCMCConfig | None = field(default=None, compare=False)

    @property
    def effective_weights(self) -> np.ndarray:
        return self.tucker.factors[3]

    @property
    def core_unfold4(self) -> np.ndarray:
        return core_unfold4(self.tucker)

    @property
    def gram_core(self) -> np.ndarray:
        return core_gram(self.tucker)

    @property
    def ranks(self) -> tuple:
        return self.tucker.ranks

    @property
    def field_dims(self) -> tuple:
        return self.tucker.dims[:3]

    @property
    def n_inputs(self) -> int:
        return self.design.shape[1]

    @cached_property
    def _target(self) -> ReducedWeightTarget:
        return ReducedWeightTarget(self.design, self.observed, self.gram_core,
                                   self.a_prime, self.b_prime, self.fixed_lambda)

    def target(self) -> ReducedWeightTarget:
        return self._target

    def require_fitted(self) -> PosteriorSamples:
        if self.samples is None:
            raise NotFittedError("emulator has no posterior samples; call fit first")
        return self.samples

    def lengthscale_means(self) -> np.ndarray:
        """Posterior mean length scales, ``(r_x, p)``."""
        mean = self.require_fitted().posterior_mean()
        p = self.n_inputs
        return np.array([mean[j * (1 + p) + 1: (j + 1) * (1 + p)] for j in range(self.ranks[3])])


def build_sf(z, design, tucker: TuckerModel, prior=(A_ETA, B_ETA), transform=None,
             fixed_lambda=None) -> SFEmulator:
    """Assemble the reduced-model quantities of an unfitted emulator."""
    _check_model(tucker)
    z = _check_data(z, tucker)
    design = gp.as_design(design)
    if design.shape[0] != tucker.dims[3]:
        raise DimensionError(f"design has {design.shape[0]} rows, ensemble has {tucker.dims[3]} runs")
    _check_orthonormal(tucker.factors)
    a_post, b_post = reduced_hyperparams(z, tucker, *prior)
    return SFEmulator(tucker, design.copy(), gls_weights(z, tucker), a_post, b_post,
                      float(np.sum(z * z)), transform=transform, prior=tuple(prior),
                      fixed_lambda=fixed_lambda)


def sample_posterior(target: BlockedLogTarget, cfg: MCMCConfig, names, n_fixed_tail: int = 0):
    init = chain_inits(target.initial_point(), cfg, n_fixed_tail)
    try:
        samples = run_chains(target, init, cfg, names=names,
                             scales=target.initial_scales(cfg.init_scale))
    except (SamplingError, FactorizationError) as exc:
        raise FitError(f"posterior sampling failed: {exc}") from exc
    flagged = samples.flagged()
    if flagged:
        log.warning("split R-hat above 1.1 for: %s", ", ".join(flagged))
    return samples


def fit_sf(ensemble, design, ranks: Sequence[int] | None = None, cfg: MCMCConfig | None = None, *,
           tucker: TuckerModel | None = None, variance_target: float = 0.99,
           transform: TransformSpec | None = None, prior=(A_ETA, B_ETA),
           fixed_lambda: float | None = None) -> SFEmulator:
    """Fit a single-fidelity emulator.

    Parameters
    ----------
    ensemble : DenseTensor
        Runs stacked along the last mode, ``(n_s, n_m, n_y, n_x)``. When
        ``transform`` is given the values must lie in [0, 1] and are
        forward-transformed before decomposition.
    design : array_like, ``(n_x, p)``
    ranks : Tucker ranks; selected from ``variance_target`` when omitted.
    cfg : MCMCConfig
    tucker : a precomputed decomposition of the (transformed) ensemble.
    fixed_lambda : hold the noise precision at this value instead of sampling it.
    """
    cfg = cfg or MCMCConfig()
    z = as_tensor(ensemble)
    if transform is not None:
        z = apply_tensor(z, transform, "forward")
    if z.order != 4:
        raise DimensionError(f"ensemble must have 4 modes, got {z.order}")
    if tucker is None:
        ranks = list(ranks) if ranks is not None else select_ranks(z, variance_target)
        tucker = hooi(z, ranks)
    model = build_sf(z, design, tucker, prior, transform, fixed_lambda)
    target = model.target()
    samples = sample_posterior(target, cfg, target.names())
    return replace(model, samples=samples, cfg=cfg)


# prediction

def thin_indices(n_total: int, n_draws: int) -> np.ndarray:
    """Evenly spaced indices into the pooled draws."""
    if n_draws >= n_total:
        return np.arange(n_total)
    return np.round(np.linspace(0, n_total - 1, n_draws)).astype(int)


def point_rngs(seed: int, n_points: int) -> list:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_points)]


def unpack_gp(theta_rows: np.ndarray, r: int, p: int, offset: int = 0):
    """Split sample rows into precisions ``(D, r)`` and length scales ``(D, r, p)``."""
    blk = theta_rows[:, offset: offset + r * (1 + p)].reshape(-1, r, 1 + p)
    return blk[:, :, 0], blk[:, :, 1:]


def conditional_weights(model: SFEmulator, x_star, theta) -> tuple:
    """Mean and covariance of ``gamma*`` at each row of ``x_star`` for one draw.

    Returns arrays ``(m, r_x)`` and ``(m, r_x, r_x)``.
    """
    target = model.target()
    x_star = gp.as_design(x_star)
    theta = np.asarray(theta, dtype=np.float64)
    lam = target.lam(theta)
    cross = gp.DistanceStack(model.design, x_star)
    m, r = x_star.shape[0], target.r
    means = np.zeros((m, r))
    covs = np.zeros((m, r, r))
    if target.diagonal:
        for j in range(r):
            blk = theta[target.block(j)]
            s_oo = target.weight_cov(j, theta)
            s_oo[np.diag_indices_from(s_oo)] += 1.0 / (lam * target.gdiag[j])
            k = cross.cov(blk[0] * target.n_x, blk[1:])
            chol = gp.cholesky(s_oo)
            a = scipy.linalg.solve_triangular(chol, k, lower=True, check_finite=False)
            zz = scipy.linalg.solve_triangular(chol, target.observed[:, j], lower=True,
                                               check_finite=False)
            means[:, j] = a.T @ zz
            covs[:, j, j] = np.clip(1.0 / (blk[0] * target.n_x) - np.sum(a * a, axis=0), 0.0, None)
        return means, covs
    s_oo = target.joint_cov(theta)
    y = target.observed.ravel(order="F")
    for i in range(m):
        ks = [cross.cov(theta[target.block(j)][0] * target.n_x, theta[target.block(j)][1:])[:, i:i + 1]
              for j in range(r)]
        s_op = scipy.linalg.block_diag(*ks)
        s_pp = np.diag([1.0 / (theta[target.block(j)][0] * target.n_x) for j in range(r)])
        means[i], covs[i] = gp.condition(s_oo, s_op, s_pp, y)
    return means, covs


def draw_gaussian(mean: np.ndarray, cov: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``mean + L z`` with ``L`` a square root of a PSD ``cov``."""
    d = np.diag(cov)
    if np.count_nonzero(cov - np.diag(d)) == 0:
        return mean + np.sqrt(d) * z
    w, v = np.linalg.eigh(cov)
    return mean + v @ (np.sqrt(np.clip(w, 0.0, None)) * (v.T @ z))


def assemble_fields(weights: np.ndarray, core4: np.ndarray, factors, core_ranks) -> np.ndarray:
    """Fields ``B G_(4)^T gamma`` for a stack of weight vectors ``(D, r_x)``.

    Returns ``(D, n_s, n_m, n_y)``.
    """
    w = np.asarray(weights) @ core4
    rs, rm, ry = core_ranks
    w = w.reshape(-1, ry, rm, rs)
    us, um, uy = factors
    return np.einsum("dcba,ia,jb,kc->dijk", w, us, um, uy, optimize=True)


def sample_field_draws(model: SFEmulator, x_star, n_draws: int = 500, seed: int = 0,
                       spatial_factor=None):
    """Yield ``(index, draws)`` per row of ``x_star`` on the transformed scale."""
    samples = model.require_fitted()
    x_star = gp.as_design(x_star)
    if x_star.shape[1] != model.n_inputs:
        raise DimensionError(f"x_star has {x_star.shape[1]} inputs, model expects {model.n_inputs}")
    theta = samples.natural.reshape(-1, samples.draws.shape[2])
    theta = theta[thin_indices(theta.shape[0], n_draws)]
    full = theta
    n_d, m, r = full.shape[0], x_star.shape[0], model.ranks[3]
    rngs = point_rngs(seed, m)
    zs = [g.standard_normal((n_d, r)) for g in rngs]
    gamma = np.empty((m, n_d, r))
    for d in range(n_d):
        means, covs = conditional_weights(model, x_star, full[d])
        for i in range(m):
            gamma[i, d] = draw_gaussian(means[i], covs[i], zs[i][d])
    factors = list(model.tucker.factors[:3])
    if spatial_factor is not None:
        spatial_factor = np.asarray(spatial_factor, dtype=np.float64)
        if spatial_factor.shape[1] != model.ranks[0]:
            raise DimensionError("spatial factor rank differs from the model")
        factors[0] = spatial_factor
    lam = full[:, -1] if model.fixed_lambda is None else np.full(n_d, model.fixed_lambda)
    for i in range(m):
        fields = assemble_fields(gamma[i], model.core_unfold4, factors, model.ranks[:3])
        noise = rngs[i].standard_normal(fields.shape)
        fields += noise / np.sqrt(lam)[:, None, None, None]
        yield i, fields


def finalize(draws: np.ndarray, transform: TransformSpec | None, inverse_transform: bool,
             keep_draws: bool) -> PredictionResult:
    if transform is not None and inverse_transform:
        draws = inverse(draws, transform)
    return PredictionResult.from_draws(draws, keep_draws=keep_draws)


def predict_sf_many(model: SFEmulator, x_star, n_draws: int = 500, seed: int = 0,
                    spatial_factor=None, inverse_transform: bool = True,
                    keep_draws: bool = False):
    """Predictions at each row of ``x_star`` (a generator, to bound memory)."""
    for _, draws in sample_field_draws(model, x_star, n_draws, seed, spatial_factor):
        yield finalize(draws, model.transform, inverse_transform, keep_draws)


def predict_sf(model: SFEmulator, x_star, n_draws: int = 500, seed: int = 0,
               spatial_factor=None, inverse_transform: bool = True,
               keep_draws: bool = True) -> PredictionResult:
    """Posterior predictive field at a single input ``x_star``.

    Parameters
    ----------
    n_draws : retained posterior draws used, evenly thinned.
    spatial_factor : replaces ``U_s`` (e.g. with a factor interpolated to
        another mesh).
    inverse_transform : map draws back to [0, 1] when the model was fitted
        on transformed data.
    """
    x_star = gp.as_design(x_star)
    if x_star.shape[0] != 1:
        raise DimensionError("predict_sf takes a single input; use predict_sf_many")
    return next(predict_sf_many(model, x_star, n_draws, seed, spatial_factor,
                                inverse_transform, keep_draws))


# persistence

def save_sf(model: SFEmulator, directory) -> None:
    samples = model.require_fitted()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_tucker(model.tucker, directory / "tucker")
    write_design_csv(directory / "design.csv", model.design)
    write_mft(directory / "observed.mft", model.observed)
    samples.save(directory)
    manifest = {
        "kind": "sf",
        "ranks": list(model.ranks),
        "prior": {"a_eta": model.prior[0], "b_eta": model.prior[1]},
        "a_prime": model.a_prime,
        "b_prime": model.b_prime,
        "data_sq_norm": model.data_sq_norm,
        "transform": model.transform.to_dict() if model.transform else None,
        "fixed_lambda": model.fixed_lambda,
        "mcmc": model.cfg.to_dict() if model.cfg else None,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def transform_from_dict(d) -> TransformSpec | None:
    return None if d is None else TransformSpec(d["eps"], d["lo"], d["hi"])


def load_sf(directory) -> SFEmulator:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    samples = PosteriorSamples.load(directory)
    return SFEmulator(
        tucker=load_tucker(directory / "tucker"),
        design=read_design_csv(directory / "design.csv"),
        observed=read_mft(directory / "observed.mft").data.copy(),
        a_prime=manifest["a_prime"],
        b_prime=manifest["b_prime"],
        data_sq_norm=manifest["data_sq_norm"],
        samples=samples,
        transform=transform_from_dict(manifest["transform"]),
        prior=(manifest["prior"]["a_eta"], manifest["prior"]["b_eta"]),
        fixed_lambda=manifest["fixed_lambda"],
    )
