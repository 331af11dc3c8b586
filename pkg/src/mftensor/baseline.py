"""Independent per-coordinate Gaussian-process comparator.

Every spatiotemporal coordinate of the HF grid gets its own GP over the
design inputs, with the exponential kernel of :mod:`mftensor.gp` plus a
nugget. Responses are centred and scaled per coordinate; hyperparameters
(precision, length scales, nugget) maximize the marginal likelihood.

All coordinates are optimized together with a vectorized BFGS on
unconstrained parameters ``u`` mapped into ``[1e-3, 1e3]`` on the log scale,
from the same five seeded starting points. A coordinate stops updating once
its own gradient is small, so its result never depends on the data of
other coordinates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import gp
from .exceptions import DimensionError, NotFittedError
from .prediction import PredictionResult
from .tensor import as_tensor

log = logging.getLogger(__name__)

LOG_LO = math.log(1e-3)
LOG_HI = math.log(1e3)
N_STARTS = 5
MAX_ITER = 100
GRAD_TOL = 1e-6
CHUNK = 8192


@dataclass(frozen=True)
class NaiveGPModel:
    """Per-coordinate GP fits.

    Arrays are flattened over the field coordinates (layout order):
    ``precision`` ``(C,)``, ``length_scales`` ``(C, p)``, ``nugget`` ``(C,)``
    (variances on the standardized scale), ``center``/``scale`` the response
    standardization, ``degenerate`` marks constant coordinates and
    ``failed`` coordinates whose optimization did not produce a finite fit.
    """

    design: np.ndarray
    responses: np.ndarray
    field_dims: tuple
    precision: np.ndarray
    length_scales: np.ndarray
    nugget: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    degenerate: np.ndarray
    failed: np.ndarray

    @property
    def n_coords(self) -> int:
        return self.responses.shape[0]


def _to_log(u: np.ndarray) -> np.ndarray:
    return LOG_LO + (LOG_HI - LOG_LO) * expit(u)


def _dlog_du(u: np.ndarray) -> np.ndarray:
    s = expit(u)
    return (LOG_HI - LOG_LO) * s * (1.0 - s)


def _nll_and_grad(u: np.ndarray, y: np.ndarray, diffs: np.ndarray):
    """Negative log marginal likelihood and gradient in ``u`` for a batch.

    ``u``: ``(B, p + 2)`` ordered as (log precision, log length scales,
    log nugget); ``y``: ``(B, n)``; ``diffs``: ``(p, n, n)``.
    """
    lg = _to_log(u)
    tau = np.exp(lg[:, 0])
    ls = np.exp(lg[:, 1:-1])
    nug = np.exp(lg[:, -1])
    n = y.shape[1]
    scaled = np.einsum("bd,dij->bij", 1.0 / ls, diffs)
    r = np.exp(-scaled)
    k = r / tau[:, None, None]
    eye = np.eye(n)
    k = k + (nug + gp.JITTER / tau)[:, None, None] * eye
    chol = np.linalg.cholesky(k)
    linv = np.linalg.inv(chol)
    kinv = np.swapaxes(linv, 1, 2) @ linv
    alpha = np.einsum("bij,bj->bi", kinv, y)
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)
    nll = 0.5 * (np.sum(y * alpha, axis=1) + logdet + n * gp.LOG_2PI)
    w = np.einsum("bi,bj->bij", alpha, alpha) - kinv
    grad = np.empty_like(u)
    dk_dtau = -(r + gp.JITTER * eye) / tau[:, None, None]
    grad[:, 0] = -0.5 * np.einsum("bij,bij->b", w, dk_dtau)
    for d in range(ls.shape[1]):
        dk = r * (diffs[d][None] / ls[:, d, None, None]) / tau[:, None, None]
        grad[:, 1 + d] = -0.5 * np.einsum("bij,bij->b", w, dk)
    grad[:, -1] = -0.5 * nug * np.trace(w, axis1=1, axis2=2)
    return nll, grad * _dlog_du(u)


def _cho_solve(chol: np.ndarray, b: np.ndarray) -> np.ndarray:
    vec = b.ndim == chol.ndim - 1
    rhs = b[..., None] if vec else b
    z = np.linalg.solve(chol, rhs)
    x = np.linalg.solve(np.swapaxes(chol, 1, 2), z)
    return x[..., 0] if vec else x


def _safe_eval(u, y, diffs):
    with np.errstate(all="ignore"):
        try:
            f, g = _nll_and_grad(u, y, diffs)
        except np.linalg.LinAlgError:
            f = np.full(u.shape[0], np.inf)
            g = np.zeros_like(u)
            for i in range(u.shape[0]):
                try:
                    fi, gi = _nll_and_grad(u[i:i + 1], y[i:i + 1], diffs)
                    f[i], g[i] = fi[0], gi[0]
                except np.linalg.LinAlgError:
                    pass
    bad = ~np.isfinite(f) | ~np.all(np.isfinite(g), axis=1)
    f[bad] = np.inf
    g[bad] = 0.0
    return f, g


def _bfgs(u0: np.ndarray, y: np.ndarray, diffs: np.ndarray):
    """Vectorized BFGS with Armijo backtracking; each row runs independently."""
    b, q = u0.shape
    u = u0.copy()
    f, g = _safe_eval(u, y, diffs)
    h = np.broadcast_to(np.eye(q), (b, q, q)).copy()
    active = np.isfinite(f) & (np.max(np.abs(g), axis=1) > GRAD_TOL)
    for _ in range(MAX_ITER):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        d = -np.einsum("bij,bj->bi", h[idx], g[idx])
        slope = np.sum(d * g[idx], axis=1)
        uphill = slope >= 0
        d[uphill] = -g[idx][uphill]
        slope[uphill] = -np.sum(g[idx][uphill] ** 2, axis=1)
        step = np.ones(idx.size)
        f_new = np.full(idx.size, np.inf)
        g_new = np.zeros((idx.size, q))
        pending = np.ones(idx.size, dtype=bool)
        for _ls in range(30):
            pi = np.flatnonzero(pending)
            if pi.size == 0:
                break
            trial = u[idx[pi]] + step[pi, None] * d[pi]
            ft, gt = _safe_eval(trial, y[idx[pi]], diffs)
            ok = ft <= f[idx[pi]] + 1e-4 * step[pi] * slope[pi]
            f_new[pi[ok]] = ft[ok]
            g_new[pi[ok]] = gt[ok]
            pending[pi[ok]] = False
            step[pi[~ok]] *= 0.5
        moved = ~pending
        stuck = idx[pending]
        active[stuck] = False
        mi = idx[moved]
        s = step[moved, None] * d[moved]
        yk = g_new[moved] - g[mi]
        u[mi] += s
        f[mi] = f_new[moved]
        g[mi] = g_new[moved]
        sy = np.sum(s * yk, axis=1)
        upd = sy > 1e-12
        if np.any(upd):
            hh = h[mi[upd]]
            ss, yy, rho = s[upd], yk[upd], 1.0 / sy[upd]
            eye = np.eye(q)
            left = eye - rho[:, None, None] * np.einsum("bi,bj->bij", ss, yy)
            hh = left @ hh @ np.swapaxes(left, 1, 2) + rho[:, None, None] * np.einsum("bi,bj->bij", ss, ss)
            h[mi[upd]] = hh
        active[mi] = np.max(np.abs(g[mi]), axis=1) > GRAD_TOL
    return u, f


def _starts(q: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    starts = rng.normal(0.0, 1.0, (N_STARTS, q))
    starts[0] = 0.0
    return starts


def fit_naive(z_hf, x_hf, seed: int = 0) -> NaiveGPModel:
    """Fit one GP per field coordinate by multi-start marginal-likelihood maximization.

    Parameters
    ----------
    z_hf : DenseTensor, ``(n_s, n_m, n_y, n_x)``
    x_hf : design ``(n_x, p)`` with ``n_x >= 2``
    seed : seeds the shared starting points of the optimizer.
    """
    z = as_tensor(z_hf)
    x = gp.as_design(x_hf)
    n_x = z.dims[-1]
    if x.shape[0] != n_x:
        raise DimensionError(f"design has {x.shape[0]} rows, data has {n_x} runs")
    if n_x < 2:
        raise ValueError("the naive GP needs at least two runs")
    field_dims = z.dims[:-1]
    resp = z.data.reshape(-1, n_x, order="F")
    c = resp.shape[0]
    p = x.shape[1]
    center = resp.mean(axis=1)
    spread = resp.std(axis=1)
    degenerate = spread <= 1e-12 * np.maximum(np.abs(center), 1.0)
    scale = np.where(degenerate, 1.0, spread)
    ys = (resp - center[:, None]) / scale[:, None]
    diffs = gp.DistanceStack(x).diffs
    starts = _starts(p + 2, seed)
    best_u = np.zeros((c, p + 2))
    best_f = np.full(c, np.inf)
    todo = np.flatnonzero(~degenerate)
    for lo in range(0, todo.size, CHUNK):
        ids = todo[lo:lo + CHUNK]
        for s in starts:
            u, f = _bfgs(np.tile(s, (ids.size, 1)), ys[ids], diffs)
            better = f < best_f[ids]
            best_f[ids[better]] = f[better]
            best_u[ids[better]] = u[better]
    failed = ~degenerate & ~np.isfinite(best_f)
    if np.any(failed):
        log.warning("naive GP optimization failed at %d coordinates; using prior-scale "
                    "predictions there", int(failed.sum()))
    lg = _to_log(best_u)
    return NaiveGPModel(
        design=x.copy(), responses=resp.copy(), field_dims=field_dims,
        precision=np.exp(lg[:, 0]), length_scales=np.exp(lg[:, 1:-1]), nugget=np.exp(lg[:, -1]),
        center=center, scale=scale, degenerate=degenerate, failed=failed,
    )


def predict_naive_moments(model: NaiveGPModel, x_star) -> tuple:
    """Predictive mean and SD per coordinate (flat), on the response scale."""
    if model is None or model.precision is None:
        raise NotFittedError("naive GP model is not fitted")
    x_star = gp.as_design(x_star)
    if x_star.shape != (1, model.design.shape[1]):
        raise DimensionError("predict_naive takes one input with the training dimension")
    c = model.n_coords
    mean = model.center.copy()
    sd = np.zeros(c)
    fit = np.flatnonzero(~model.degenerate & ~model.failed)
    fallback = model.failed
    sd[fallback] = model.scale[fallback]
    diffs = gp.DistanceStack(model.design).diffs
    cross = gp.DistanceStack(model.design, x_star).diffs[:, :, 0]
    n = model.design.shape[0]
    eye = np.eye(n)
    ys = (model.responses - model.center[:, None]) / model.scale[:, None]
    for lo in range(0, fit.size, CHUNK):
        ids = fit[lo:lo + CHUNK]
        tau, ls, nug = model.precision[ids], model.length_scales[ids], model.nugget[ids]
        k = np.exp(-np.einsum("bd,dij->bij", 1.0 / ls, diffs)) / tau[:, None, None]
        k = k + (nug + gp.JITTER / tau)[:, None, None] * eye
        ks = np.exp(-(1.0 / ls) @ cross) / tau[:, None]
        chol = np.linalg.cholesky(k)
        alpha = _cho_solve(chol, ys[ids])
        v = np.linalg.solve(chol, ks[..., None])[..., 0]
        mu = np.sum(ks * alpha, axis=1)
        var = 1.0 / tau + nug - np.sum(v * v, axis=1)
        mean[ids] = model.center[ids] + model.scale[ids] * mu
        sd[ids] = model.scale[ids] * np.sqrt(np.clip(var, 0.0, None))
    return mean, sd


def predict_naive(model: NaiveGPModel, x_star) -> PredictionResult:
    """Gaussian predictive summaries assembled on the HF field grid."""
    mean, sd = predict_naive_moments(model, x_star)
    shape = model.field_dims
    return PredictionResult.gaussian(mean.reshape(shape, order="F"), sd.reshape(shape, order="F"))
