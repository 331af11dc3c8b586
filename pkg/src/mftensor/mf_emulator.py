"""Two-level multi-fidelity tensor emulator with an additive discrepancy.

The low-fidelity (LF) spatial factor is interpolated to the high-fidelity
(HF) mesh by k-nearest-neighbour averaging, the HF runs are explained by the
interpolated LF representation plus a discrepancy field, and the
discrepancy ensemble gets its own Tucker decomposition. The observed
effective weights of both fidelities and of the discrepancy are modelled
jointly:

    theta_obs ~ N(0, Sigma_theta + blockdiag(lam_eta^-1 (C^T C)^-1,
                                              lam_delta^-1 (K^T K)^-1))

where ``K = [B~ T~, D T']`` stacks the interpolated-LF and discrepancy
bases of the HF data and ``K^T K = A kron I`` for a small matrix ``A``
built from per-mode Gram matrices. One GP per LF effective weight is shared
by the LF and HF designs; each discrepancy weight has its own GP.
"""

from __future__ import annotations

import json
import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree

from . import gp
from .exceptions import DimensionError, FactorizationError, NotFittedError
from .io import read_design_csv, read_mesh_csv, write_design_csv, write_mesh_csv
from .mcmc import BlockedLogTarget, MCMCConfig, PosteriorSamples, gamma_logpdf
from .prediction import PredictionResult
from .sf_emulator import (
    A_ETA,
    B_ETA,
    SFEmulator,
    _gp_prior,
    _projected,
    assemble_fields,
    conditional_weights,
    core_unfold4,
    draw_gaussian,
    fit_sf,
    finalize,
    gp_param_names,
    load_sf,
    point_rngs,
    sample_posterior,
    save_sf,
    thin_indices,
    transform_from_dict,
)
from .tensor import DenseTensor, as_tensor, read_mft, write_mft
from .transform import TransformSpec, apply_tensor
from .tucker import TuckerModel, hooi, load_tucker, save_tucker, select_ranks

log = logging.getLogger(__name__)

A_DELTA = 1.0
B_DELTA = 0.5
ZERO_DISCREPANCY = 1e-10
_CHUNK = 4096


# meshes and interpolation

def check_mesh(points) -> np.ndarray:
    """Validate mesh coordinates: finite, 2-D or 3-D, no duplicates."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise DimensionError("a mesh needs at least one point")
    if not np.all(np.isfinite(pts)):
        raise ValueError("mesh coordinates must be finite")
    if cKDTree(pts).query_pairs(1e-12):
        raise ValueError("mesh contains duplicate points")
    return pts


def nearest_indices(lf_mesh, hf_mesh, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest LF points for each HF point.

    Distances are compared exactly; ties go to the lower LF index.
    """
    lf = check_mesh(lf_mesh)
    hf = check_mesh(hf_mesh)
    if lf.shape[1] != hf.shape[1]:
        raise DimensionError("meshes have different coordinate dimensions")
    if not 1 <= k <= lf.shape[0]:
        raise ValueError(f"k must lie in [1, {lf.shape[0]}], got {k}")
    out = np.empty((hf.shape[0], k), dtype=np.int64)
    for start in range(0, hf.shape[0], _CHUNK):
        block = hf[start:start + _CHUNK]
        d2 = np.sum((block[:, None, :] - lf[None, :, :]) ** 2, axis=2)
        out[start:start + _CHUNK] = np.argsort(d2, axis=1, kind="stable")[:, :k]
    return out


def interpolate_bases(lf_spatial_factor, lf_mesh, hf_mesh, k: int = 3) -> np.ndarray:
    """Average the rows of the LF spatial factor at each HF point's ``k`` nearest LF points."""
    u = np.asarray(lf_spatial_factor, dtype=np.float64)
    if u.ndim != 2 or u.shape[0] != np.asarray(lf_mesh).shape[0]:
        raise DimensionError("spatial factor rows must match the LF mesh")
    idx = nearest_indices(lf_mesh, hf_mesh, k)
    return u[idx].mean(axis=1)


# HF effective weights and the discrepancy

def hf_effective_weights(lf_model: SFEmulator, x_hf) -> np.ndarray:
    """LF effective weights at the HF design.

    Rows of HF inputs that appear in the LF design are copied from ``U_x``;
    other rows get the GP conditional mean at posterior-mean hyperparameters.
    """
    x_hf = gp.as_design(x_hf)
    ux = lf_model.effective_weights
    out = np.empty((x_hf.shape[0], ux.shape[1]))
    missing = []
    for i, x in enumerate(x_hf):
        hit = np.flatnonzero(np.all(lf_model.design == x, axis=1))
        if hit.size:
            out[i] = ux[hit[0]]
        else:
            missing.append(i)
    if missing:
        theta = lf_model.require_fitted().posterior_mean()
        means, _ = conditional_weights(lf_model, x_hf[missing], theta)
        out[missing] = means
    return out


def interpolated_fields(lf_tucker: TuckerModel, spatial, weights) -> np.ndarray:
    """Interpolated LF fields for each row of ``weights``, stacked along a last mode."""
    factors = [np.asarray(spatial), lf_tucker.factors[1], lf_tucker.factors[2]]
    fields = assemble_fields(weights, core_unfold4(lf_tucker), factors, lf_tucker.ranks[:3])
    return np.moveaxis(fields, 0, -1)


def discrepancy_ensemble(z_hf, lf_tucker: TuckerModel, spatial, hf_weights) -> DenseTensor:
    """HF runs minus the interpolated LF representation at the HF design."""
    z = as_tensor(z_hf).data
    spatial = np.asarray(spatial)
    hf_weights = np.atleast_2d(hf_weights)
    expected = (spatial.shape[0],) + lf_tucker.dims[1:3] + (hf_weights.shape[0],)
    if z.shape != expected:
        raise DimensionError(f"HF data dims {z.shape} do not match {expected}")
    return DenseTensor(z - interpolated_fields(lf_tucker, spatial, hf_weights))


# structured Gram matrix

@dataclass(frozen=True)
class MFParts:
    """Bases of the HF representation.

    ``lf_tucker`` supplies ``G_(4)`` and the temporal factors, ``spatial``
    the interpolated spatial factor, ``disc`` the discrepancy decomposition
    (``None`` when the discrepancy vanishes).
    """

    lf_tucker: TuckerModel
    spatial: np.ndarray
    disc: TuckerModel | None
    n_hf: int

    @property
    def r(self) -> int:
        return self.lf_tucker.ranks[3]

    @property
    def r_disc(self) -> int:
        return 0 if self.disc is None else self.disc.ranks[3]

    def small_gram(self) -> np.ndarray:
        """``A`` with ``K^T K = A kron I_{n_hf}``."""
        lf = self.lf_tucker
        g = core_unfold4(lf)
        rs, rm, ry = lf.ranks[:3]
        m = np.kron(np.eye(ry), np.kron(np.eye(rm), self.spatial.T @ self.spatial))
        top = g @ m @ g.T
        if self.disc is None:
            return top
        d = self.disc
        gd = core_unfold4(d)
        cross = np.kron(lf.factors[2].T @ d.factors[2],
                        np.kron(lf.factors[1].T @ d.factors[1], self.spatial.T @ d.factors[0]))
        off = g @ cross @ gd.T
        return np.block([[top, off], [off.T, gd @ gd.T]])

    def projections(self, z_hf) -> np.ndarray:
        """``K^T z`` as an ``(n_hf, r + r')`` matrix."""
        z = as_tensor(z_hf).data
        lf = self.lf_tucker
        q = _projected(z, [self.spatial, lf.factors[1], lf.factors[2]]) @ core_unfold4(lf).T
        if self.disc is None:
            return q
        qd = _projected(z, self.disc.factors) @ core_unfold4(self.disc).T
        return np.hstack([q, qd])


def mf_reduced_gram(parts: MFParts) -> np.ndarray:
    """``K^T K`` assembled from per-mode Gram matrices."""
    return np.kron(parts.small_gram(), np.eye(parts.n_hf))


def hf_gls(parts: MFParts, z_hf) -> tuple:
    """Least-squares HF weights ``(K^T K)^-1 K^T z`` and the residual ``z^T (I - P_K) z``."""
    z = as_tensor(z_hf).data
    q = parts.projections(z)
    a = parts.small_gram()
    try:
        chol = scipy.linalg.cholesky(a, lower=True)
    except np.linalg.LinAlgError as exc:
        raise FactorizationError("HF basis Gram matrix is singular") from exc
    sol = scipy.linalg.cho_solve((chol, True), q.T).T
    resid = float(np.sum(z * z)) - float(np.sum(q * sol))
    return sol, resid


# joint reduced likelihood

class MFLogTarget(BlockedLogTarget):
    """Posterior over LF-weight GPs, discrepancy GPs, ``lam_eta`` and ``lam_delta``.

    Layout: LF GP blocks ``(precision, length scales)`` for each of the
    ``r`` LF weights, then ``r'`` discrepancy GP blocks, then ``lam_eta``
    and ``lam_delta``.

    When the LF core Gram matrix is diagonal the density factorizes as the
    LF weights' marginal (one term per LF weight) times the conditional
    density of the HF weights given the LF weights. The per-weight LF
    quantities needed by the conditional are cached by parameter value.

    As in the single-fidelity model, precisions refer to effective weights
    rescaled to unit root-mean-square: ``n_lf`` for the LF weights (shared
    by both designs) and ``n_hf`` for the discrepancy weights.
    """

    def __init__(self, x_lf, x_hf, obs_lf, obs_hf, lf_gram, small_gram, r_disc,
                 a_eta, b_eta, a_delta, b_delta):
        self.x_lf = gp.as_design(x_lf)
        self.x_hf = gp.as_design(x_hf)
        self.p = self.x_lf.shape[1]
        self.n_lf, self.n_hf = self.x_lf.shape[0], self.x_hf.shape[0]
        self.obs_lf = np.asarray(obs_lf, dtype=np.float64)
        self.obs_hf = np.asarray(obs_hf, dtype=np.float64)
        self.r = self.obs_lf.shape[1]
        self.r_disc = r_disc
        if self.obs_hf.shape != (self.n_hf, self.r + r_disc):
            raise DimensionError("HF observed weights have the wrong shape")
        self.lf_gram = np.asarray(lf_gram, dtype=np.float64)
        self.small_gram = np.asarray(small_gram, dtype=np.float64)
        self.small_gram_inv = np.linalg.inv(self.small_gram)
        self.a_eta, self.b_eta, self.a_delta, self.b_delta = a_eta, b_eta, a_delta, b_delta
        # Inputs shared by both designs carry one latent weight, so jitter is
        # added once per distinct point. Otherwise a vanishing precision would
        # turn the jitter into a nugget between the LF and HF copies.
        union = np.vstack([self.x_lf, self.x_hf])
        distinct, self.union_index = np.unique(union, axis=0, return_inverse=True)
        self.union_index = self.union_index.ravel()
        self.d_union = gp.DistanceStack(distinct)
        self.d_hf = gp.DistanceStack(self.x_hf)
        off = self.lf_gram - np.diag(np.diag(self.lf_gram))
        self.diagonal = bool(np.max(np.abs(off), initial=0.0)
                             <= 1e-10 * np.max(np.abs(self.lf_gram)))
        self.gdiag = np.diag(self.lf_gram).copy()
        self.lf_gram_inv = np.linalg.inv(self.lf_gram)
        self.k = 1 + self.p
        self.n_params = (self.r + r_disc) * self.k + 2
        self.n_terms = self.r + 2 if self.diagonal else 1
        self._cache = [OrderedDict() for _ in range(self.r)]

    # layout
    def lf_block(self, j: int, theta) -> np.ndarray:
        return theta[j * self.k:(j + 1) * self.k]

    def disc_block(self, j: int, theta) -> np.ndarray:
        s = (self.r + j) * self.k
        return theta[s:s + self.k]

    def names(self, input_names=None) -> list[str]:
        return (gp_param_names(self.r, self.p, "lf_", input_names)
                + gp_param_names(self.r_disc, self.p, "disc_", input_names)
                + ["lambda_eta", "lambda_delta"])

    def dependencies(self, i: int) -> tuple:
        if not self.diagonal:
            return (0,)
        hf_term, lam_term = self.r, self.r + 1
        if i < self.r * self.k:
            return (i // self.k, hf_term)
        if i < (self.r + self.r_disc) * self.k:
            return (hf_term,)
        if i == self.n_params - 2:
            return tuple(range(self.r)) + (hf_term, lam_term)
        return (hf_term,)

    # dense assembly
    def union_cov(self, j: int, theta) -> np.ndarray:
        blk = self.lf_block(j, theta)
        k = self.d_union.cov(blk[0] * self.n_lf, blk[1:])
        idx = self.union_index
        return k[np.ix_(idx, idx)]

    def disc_cov(self, j: int, theta) -> np.ndarray:
        blk = self.disc_block(j, theta)
        return self.d_hf.cov(blk[0] * self.n_hf, blk[1:])

    def prior_cov(self, theta) -> np.ndarray:
        """``Sigma_theta`` in the order ``[gamma_LF, gamma_HF, zeta]``, each weight-major."""
        nl, nh, r = self.n_lf, self.n_hf, self.r
        dim = r * nl + (r + self.r_disc) * nh
        out = np.zeros((dim, dim))
        for j in range(r):
            k = self.union_cov(j, theta)
            lf = slice(j * nl, (j + 1) * nl)
            hf = slice(r * nl + j * nh, r * nl + (j + 1) * nh)
            out[lf, lf] = k[:nl, :nl]
            out[lf, hf] = k[:nl, nl:]
            out[hf, lf] = k[nl:, :nl]
            out[hf, hf] = k[nl:, nl:]
        base = r * nl + r * nh
        for j in range(self.r_disc):
            s = slice(base + j * nh, base + (j + 1) * nh)
            out[s, s] = self.disc_cov(j, theta)
        return out

    def noise_cov(self, theta) -> np.ndarray:
        lam_eta, lam_delta = theta[-2], theta[-1]
        lf = np.kron(self.lf_gram_inv, np.eye(self.n_lf)) / lam_eta
        hf = np.kron(self.small_gram_inv, np.eye(self.n_hf)) / lam_delta
        return scipy.linalg.block_diag(lf, hf)

    def joint_cov(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        return self.prior_cov(theta) + self.noise_cov(theta)

    def observed(self) -> np.ndarray:
        return np.concatenate([self.obs_lf.ravel(order="F"), self.obs_hf.ravel(order="F")])

    def dense_log_likelihood(self, theta) -> float:
        return gp.logpdf_from_cholesky(self.observed(), gp.cholesky(self.joint_cov(theta)))

    # factorized evaluation
    def _lf_pieces(self, j: int, theta):
        blk = self.lf_block(j, theta)
        key = tuple(blk) + (theta[-2],)
        cache = self._cache[j]
        hit = cache.get(key)
        if hit is not None:
            cache.move_to_end(key)
            return hit
        nl = self.n_lf
        k = self.union_cov(j, theta)
        s_ll = k[:nl, :nl].copy()
        s_ll[np.diag_indices_from(s_ll)] += 1.0 / (theta[-2] * self.gdiag[j])
        chol = gp.cholesky(s_ll)
        y = self.obs_lf[:, j]
        loglik = gp.logpdf_from_cholesky(y, chol)
        a = scipy.linalg.solve_triangular(chol, k[:nl, nl:], lower=True, check_finite=False)
        zz = scipy.linalg.solve_triangular(chol, y, lower=True, check_finite=False)
        cond_mean = a.T @ zz
        cond_cov = k[nl:, nl:] - a.T @ a
        out = (loglik, cond_mean, cond_cov)
        cache[key] = out
        if len(cache) > 8:
            cache.popitem(last=False)
        return out

    def hf_conditional(self, theta) -> float:
        nh, r = self.n_hf, self.r
        dim = (r + self.r_disc) * nh
        cov = np.kron(self.small_gram_inv, np.eye(nh)) / theta[-1]
        mean = np.zeros(dim)
        for j in range(r):
            _, m, c = self._lf_pieces(j, theta)
            s = slice(j * nh, (j + 1) * nh)
            mean[s] = m
            cov[s, s] += c
        for j in range(self.r_disc):
            s = slice((r + j) * nh, (r + j + 1) * nh)
            cov[s, s] += self.disc_cov(j, theta)
        y = self.obs_hf.ravel(order="F") - mean
        return gp.logpdf_from_cholesky(y, gp.cholesky(cov))

    def log_likelihood(self, theta) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        if not self.diagonal:
            return self.dense_log_likelihood(theta)
        lf = sum(self._lf_pieces(j, theta)[0] for j in range(self.r))
        return float(lf + self.hf_conditional(theta))

    def log_prior(self, theta) -> float:
        lp = 0.0
        for j in range(self.r):
            blk = self.lf_block(j, theta)
            lp += _gp_prior(blk[0], blk[1:])
        for j in range(self.r_disc):
            blk = self.disc_block(j, theta)
            lp += _gp_prior(blk[0], blk[1:])
        lp += gamma_logpdf(theta[-2], self.a_eta, self.b_eta)
        lp += gamma_logpdf(theta[-1], self.a_delta, self.b_delta)
        return lp

    def term(self, t: int, theta) -> float:
        try:
            if not self.diagonal:
                return self.log_prior(theta) + self.dense_log_likelihood(theta)
            if t < self.r:
                blk = self.lf_block(t, theta)
                return _gp_prior(blk[0], blk[1:]) + self._lf_pieces(t, theta)[0]
            if t == self.r:
                lp = gamma_logpdf(theta[-1], self.a_delta, self.b_delta)
                for j in range(self.r_disc):
                    blk = self.disc_block(j, theta)
                    lp += _gp_prior(blk[0], blk[1:])
                return lp + self.hf_conditional(theta)
            return gamma_logpdf(theta[-2], self.a_eta, self.b_eta)
        except FactorizationError:
            return -math.inf

    def initial_point(self) -> np.ndarray:
        theta = np.ones(self.n_params)
        theta[-2] = self.a_eta / self.b_eta
        theta[-1] = self.a_delta / self.b_delta
        return theta

    def initial_scales(self, base: float) -> np.ndarray:
        scales = np.full(self.n_params, base)
        scales[-2] = min(base, 1.0 / math.sqrt(self.a_eta))
        scales[-1] = min(base, 1.0 / math.sqrt(self.a_delta))
        return scales


# fitted model

@dataclass(frozen=True)
class MFEmulator:
    """Fitted multi-fidelity emulator.

    ``lf`` is the standalone LF emulator, ``hf_weights`` the LF effective
    weights at the HF design and ``disc_weights`` the discrepancy effective
    weights (``U'_x``). ``obs_hf`` holds the least-squares HF weights used in
    the likelihood.
    """

    lf: SFEmulator
    spatial: np.ndarray
    hf_weights: np.ndarray
    disc: TuckerModel | None
    x_hf: np.ndarray
    obs_hf: np.ndarray
    a_delta: float
    b_delta: float
    lf_mesh: np.ndarray
    hf_mesh: np.ndarray
    k_interp: int = 3
    samples: PosteriorSamples | None = None
    prior_delta: tuple = (A_DELTA, B_DELTA)
    cfg: MCMCConfig | None = field(default=None, compare=False)

    @property
    def x_lf(self) -> np.ndarray:
        return self.lf.design

    @property
    def disc_weights(self) -> np.ndarray | None:
        return None if self.disc is None else self.disc.factors[3]

    @property
    def transform(self) -> TransformSpec | None:
        return self.lf.transform

    @property
    def parts(self) -> MFParts:
        return MFParts(self.lf.tucker, self.spatial, self.disc, self.x_hf.shape[0])

    @property
    def gram_K(self) -> np.ndarray:
        return mf_reduced_gram(self.parts)

    @property
    def field_dims(self) -> tuple:
        return (self.spatial.shape[0],) + self.lf.tucker.dims[1:3]

    @cached_property
    def _target(self) -> MFLogTarget:
        parts = self.parts
        return MFLogTarget(self.x_lf, self.x_hf, self.lf.observed, self.obs_hf,
                           self.lf.gram_core, parts.small_gram(), parts.r_disc,
                           self.lf.a_prime, self.lf.b_prime, self.a_delta, self.b_delta)

    def target(self) -> MFLogTarget:
        return self._target

    def require_fitted(self) -> PosteriorSamples:
        if self.samples is None:
            raise NotFittedError("multi-fidelity emulator has no posterior samples")
        return self.samples

    def lengthscale_means(self) -> tuple:
        """Posterior mean length scales of the LF and discrepancy weights."""
        mean = self.require_fitted().posterior_mean()
        k = 1 + self.lf.n_inputs
        r, rd = self.lf.ranks[3], self.parts.r_disc
        lf = np.array([mean[j * k + 1:(j + 1) * k] for j in range(r)])
        disc = np.array([mean[(r + j) * k + 1:(r + j + 1) * k] for j in range(rd)])
        return lf, disc.reshape(rd, k - 1)


def build_mf(lf_model: SFEmulator, z_hf, x_hf, lf_mesh, hf_mesh, ranks_disc=None,
             k_interp: int = 3, disc_variance_target: float = 0.8,
             prior_delta=(A_DELTA, B_DELTA)) -> MFEmulator:
    """Assemble the HF representation around a fitted LF emulator (no sampling)."""
    z = as_tensor(z_hf)
    if lf_model.transform is not None:
        z = apply_tensor(z, lf_model.transform, "forward")
    x_hf = gp.as_design(x_hf)
    lf_mesh, hf_mesh = check_mesh(lf_mesh), check_mesh(hf_mesh)
    if z.order != 4 or z.dims[3] != x_hf.shape[0] or z.dims[0] != hf_mesh.shape[0]:
        raise DimensionError(f"HF data dims {z.dims} disagree with design/mesh")
    if z.dims[1:3] != lf_model.tucker.dims[1:3]:
        raise DimensionError("temporal modes differ between fidelities")
    spatial = interpolate_bases(lf_model.tucker.factors[0], lf_mesh, hf_mesh, k_interp)
    hf_w = hf_effective_weights(lf_model, x_hf)
    delta = discrepancy_ensemble(z, lf_model.tucker, spatial, hf_w)
    disc = None
    if delta.norm() > ZERO_DISCREPANCY * max(z.norm(), np.finfo(float).tiny):
        rd = list(ranks_disc) if ranks_disc is not None else select_ranks(delta, disc_variance_target)
        disc = hooi(delta, rd)
    else:
        log.info("discrepancy ensemble is zero; fitting without discrepancy bases")
    parts = MFParts(lf_model.tucker, spatial, disc, x_hf.shape[0])
    obs_hf, resid = hf_gls(parts, z)
    n_hf = int(np.prod(z.dims[:3]))
    a_delta = prior_delta[0] + x_hf.shape[0] * (n_hf - parts.r - parts.r_disc) / 2.0
    b_delta = prior_delta[1] + resid / 2.0
    return MFEmulator(lf_model, spatial, hf_w, disc, x_hf.copy(), obs_hf, a_delta, b_delta,
                      lf_mesh, hf_mesh, k_interp, prior_delta=tuple(prior_delta))


def fit_mf(z_lf, z_hf, x_lf, x_hf, lf_mesh, hf_mesh, ranks: Sequence[int] | None = None,
           ranks_disc: Sequence[int] | None = None, k_interp: int = 3,
           cfg: MCMCConfig | None = None, *, lf_model: SFEmulator | None = None,
           variance_target: float = 0.99, disc_variance_target: float = 0.8,
           transform: TransformSpec | None = None) -> MFEmulator:
    """Fit the multi-fidelity emulator.

    The standalone LF emulator is fitted first unless ``lf_model`` is
    supplied; its GP hyperparameters are then sampled again jointly with the
    discrepancy GPs and both noise precisions.
    """
    cfg = cfg or MCMCConfig()
    if lf_model is None:
        lf_model = fit_sf(z_lf, x_lf, ranks, cfg, variance_target=variance_target,
                          transform=transform)
    model = build_mf(lf_model, z_hf, x_hf, lf_mesh, hf_mesh, ranks_disc, k_interp,
                     disc_variance_target)
    target = model.target()
    samples = sample_posterior(target, cfg, target.names())
    return replace(model, samples=samples, cfg=cfg)


# prediction

def conditional_mf(model: MFEmulator, x_star, theta, chol=None) -> tuple:
    """Mean ``(m, r + r')`` and covariance ``(m, r + r', r + r')`` of ``(gamma*, zeta*)``."""
    t = model.target()
    theta = np.asarray(theta, dtype=np.float64)
    x_star = gp.as_design(x_star)
    if chol is None:
        chol = gp.cholesky(t.joint_cov(theta))
    y = t.observed()
    alpha = scipy.linalg.solve_triangular(chol, y, lower=True, check_finite=False)
    nl, nh, r, rd = t.n_lf, t.n_hf, t.r, t.r_disc
    m = x_star.shape[0]
    q = r + rd
    cross_u = gp.DistanceStack(np.vstack([t.x_lf, t.x_hf]), x_star)
    cross_h = gp.DistanceStack(t.x_hf, x_star)
    s_op = np.zeros((y.size, m * q))
    prior_var = np.empty(q)
    for j in range(r):
        blk = t.lf_block(j, theta)
        k = cross_u.cov(blk[0] * nl, blk[1:])
        cols = np.arange(m) * q + j
        s_op[j * nl:(j + 1) * nl, cols] = k[:nl]
        s_op[r * nl + j * nh:r * nl + (j + 1) * nh, cols] = k[nl:]
        prior_var[j] = 1.0 / (blk[0] * nl)
    base = r * nl + r * nh
    for j in range(rd):
        blk = t.disc_block(j, theta)
        cols = np.arange(m) * q + r + j
        s_op[base + j * nh:base + (j + 1) * nh, cols] = cross_h.cov(blk[0] * nh, blk[1:])
        prior_var[r + j] = 1.0 / (blk[0] * nh)
    a = scipy.linalg.solve_triangular(chol, s_op, lower=True, check_finite=False)
    means = (a.T @ alpha).reshape(m, q)
    covs = np.empty((m, q, q))
    for i in range(m):
        ai = a[:, i * q:(i + 1) * q]
        covs[i] = gp.psd_clean(np.diag(prior_var) - ai.T @ ai)
    return means, covs


def sample_mf_field_draws(model: MFEmulator, x_star, n_draws: int = 500, seed: int = 0):
    """Yield ``(index, draws)`` of HF fields per row of ``x_star`` (transformed scale)."""
    samples = model.require_fitted()
    x_star = gp.as_design(x_star)
    if x_star.shape[1] != model.lf.n_inputs:
        raise DimensionError("x_star has the wrong number of inputs")
    theta = samples.natural.reshape(-1, samples.draws.shape[2])
    theta = theta[thin_indices(theta.shape[0], n_draws)]
    t = model.target()
    n_d, m, q = theta.shape[0], x_star.shape[0], t.r + t.r_disc
    rngs = point_rngs(seed, m)
    zs = [g.standard_normal((n_d, q)) for g in rngs]
    weights = np.empty((m, n_d, q))
    for d in range(n_d):
        means, covs = conditional_mf(model, x_star, theta[d])
        for i in range(m):
            weights[i, d] = draw_gaussian(means[i], covs[i], zs[i][d])
    lf = model.lf.tucker
    lf_factors = [model.spatial, lf.factors[1], lf.factors[2]]
    for i in range(m):
        fields = assemble_fields(weights[i, :, :t.r], core_unfold4(lf), lf_factors, lf.ranks[:3])
        if model.disc is not None:
            fields += assemble_fields(weights[i, :, t.r:], core_unfold4(model.disc),
                                      model.disc.factors[:3], model.disc.ranks[:3])
        fields += rngs[i].standard_normal(fields.shape) / np.sqrt(theta[:, -1])[:, None, None, None]
        yield i, fields


def predict_mf_many(model: MFEmulator, x_star, n_draws: int = 500, seed: int = 0,
                    inverse_transform: bool = True, keep_draws: bool = False):
    for _, draws in sample_mf_field_draws(model, x_star, n_draws, seed):
        yield finalize(draws, model.transform, inverse_transform, keep_draws)


def predict_mf(model: MFEmulator, x_star, n_draws: int = 500, seed: int = 0,
               inverse_transform: bool = True, keep_draws: bool = True) -> PredictionResult:
    """Posterior predictive HF field at a single input."""
    x_star = gp.as_design(x_star)
    if x_star.shape[0] != 1:
        raise DimensionError("predict_mf takes a single input; use predict_mf_many")
    return next(predict_mf_many(model, x_star, n_draws, seed, inverse_transform, keep_draws))


# persistence

def save_mf(model: MFEmulator, directory) -> None:
    samples = model.require_fitted()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_sf(model.lf, directory / "lf")
    write_mft(directory / "spatial_interp.mft", model.spatial)
    write_mft(directory / "hf_weights.mft", model.hf_weights)
    write_mft(directory / "obs_hf.mft", model.obs_hf)
    if model.disc is not None:
        save_tucker(model.disc, directory / "discrepancy")
    write_design_csv(directory / "design_lf.csv", model.x_lf)
    write_design_csv(directory / "design_hf.csv", model.x_hf)
    write_mesh_csv(directory / "mesh_lf.csv", model.lf_mesh)
    write_mesh_csv(directory / "mesh_hf.csv", model.hf_mesh)
    samples.save(directory)
    manifest = {
        "kind": "mf",
        "k_interp": model.k_interp,
        "discrepancy_ranks": list(model.disc.ranks) if model.disc is not None else None,
        "prior": {"a_delta": model.prior_delta[0], "b_delta": model.prior_delta[1]},
        "a_delta_prime": model.a_delta,
        "b_delta_prime": model.b_delta,
        "mcmc": model.cfg.to_dict() if model.cfg else None,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_mf(directory) -> MFEmulator:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    disc = load_tucker(directory / "discrepancy") if manifest["discrepancy_ranks"] else None
    return MFEmulator(
        lf=load_sf(directory / "lf"),
        spatial=read_mft(directory / "spatial_interp.mft").data.copy(),
        hf_weights=read_mft(directory / "hf_weights.mft").data.copy(),
        disc=disc,
        x_hf=read_design_csv(directory / "design_hf.csv"),
        obs_hf=read_mft(directory / "obs_hf.mft").data.copy(),
        a_delta=manifest["a_delta_prime"],
        b_delta=manifest["b_delta_prime"],
        lf_mesh=read_mesh_csv(directory / "mesh_lf.csv"),
        hf_mesh=read_mesh_csv(directory / "mesh_hf.csv"),
        k_interp=manifest["k_interp"],
        samples=PosteriorSamples.load(directory),
        prior_delta=(manifest["prior"]["a_delta"], manifest["prior"]["b_delta"]),
    )
