"""Anisotropic exponential-kernel Gaussian-process building blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from .exceptions import DimensionError, FactorizationError

JITTER = 1e-8
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class GPHyperparams:
    """Marginal precision and one length scale per input dimension.

    The kernel variance is ``1 / precision``.
    """

    precision: float
    length_scales: tuple

    def __post_init__(self):
        ls = tuple(float(v) for v in np.atleast_1d(self.length_scales))
        object.__setattr__(self, "length_scales", ls)
        object.__setattr__(self, "precision", float(self.precision))
        if not self.precision > 0 or not all(v > 0 for v in ls):
            raise ValueError("precision and length scales must be positive")

    @property
    def variance(self) -> float:
        return 1.0 / self.precision


def as_design(x) -> np.ndarray:
    """Coerce inputs to an ``(n, p)`` float array."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise DimensionError(f"design must be 2-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("design contains non-finite entries")
    return x


def kernel(x, xp, h: GPHyperparams) -> float:
    """``exp(-sum_d |x_d - x'_d| / l_d) / precision``."""
    x = np.asarray(x, dtype=np.float64).ravel()
    xp = np.asarray(xp, dtype=np.float64).ravel()
    ls = np.asarray(h.length_scales)
    if x.size != xp.size or x.size != ls.size:
        raise DimensionError(f"input lengths {x.size}, {xp.size} and {ls.size} length scales differ")
    return float(np.exp(-np.sum(np.abs(x - xp) / ls)) / h.precision)


def correlation(a: np.ndarray, b: np.ndarray, length_scales) -> np.ndarray:
    ls = np.asarray(length_scales, dtype=np.float64)
    return np.exp(-cdist(a / ls, b / ls, metric="cityblock"))


def cov_matrix(a, b=None, h: GPHyperparams | None = None, jitter: bool | None = None) -> np.ndarray:
    """Covariance between two designs.

    With ``b`` omitted (or the same object as ``a``) the matrix is square,
    symmetric and receives a diagonal jitter of ``1e-8 / precision``.
    """
    if h is None:
        raise TypeError("cov_matrix needs hyperparameters")
    a = as_design(a)
    same = b is None or b is a
    b = a if same else as_design(b)
    if a.shape[1] != b.shape[1] or a.shape[1] != len(h.length_scales):
        raise DimensionError("designs and length scales disagree on input dimension")
    k = correlation(a, b, h.length_scales) / h.precision
    if jitter if jitter is not None else same:
        k[np.diag_indices_from(k)] += JITTER / h.precision
    return k


def block_diag(blocks) -> np.ndarray:
    """Block-diagonal assembly of square matrices."""
    blocks = [np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in blocks]
    for b in blocks:
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise DimensionError(f"block of shape {b.shape} is not square")
    return scipy.linalg.block_diag(*blocks)


def cholesky(cov: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor with one x10 jitter escalation on failure."""
    cov = np.asarray(cov, dtype=np.float64)
    try:
        return scipy.linalg.cholesky(cov, lower=True, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        pass
    if not np.all(np.isfinite(cov)):
        raise FactorizationError("covariance contains non-finite entries")
    bump = 10.0 * JITTER * max(float(np.mean(np.abs(np.diag(cov)))), np.finfo(float).tiny)
    try:
        return scipy.linalg.cholesky(
            cov + bump * np.eye(cov.shape[0]), lower=True, check_finite=False
        )
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise FactorizationError("covariance is not positive definite after jitter") from exc


def logpdf_from_cholesky(y: np.ndarray, chol: np.ndarray) -> float:
    z = scipy.linalg.solve_triangular(chol, y, lower=True, check_finite=False)
    logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return -0.5 * (float(z @ z) + logdet + y.size * LOG_2PI)


def mvn_logpdf(y, mean, cov) -> float:
    """Gaussian log density via a Cholesky factorization."""
    y = np.asarray(y, dtype=np.float64).ravel()
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64).ravel(), y.shape)
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    if cov.shape != (y.size, y.size):
        raise DimensionError(f"covariance {cov.shape} does not match vector of length {y.size}")
    return logpdf_from_cholesky(y - mean, cholesky(cov))


def psd_clean(cov: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Symmetrize; clamp tiny negative eigenvalues, reject clearly negative ones."""
    cov = 0.5 * (cov + cov.T)
    if cov.size == 0:
        return cov
    w, v = np.linalg.eigh(cov)
    scale = max(1.0, float(np.max(np.abs(np.diag(cov)))))
    if w[0] < -tol * scale:
        raise FactorizationError(f"conditional covariance has eigenvalue {w[0]:.3e}")
    if w[0] < 0:
        cov = (v * np.clip(w, 0.0, None)) @ v.T
        cov = 0.5 * (cov + cov.T)
    return cov


def condition(s_oo, s_op, s_pp, observed):
    """Zero-mean Gaussian conditioning of the ``p`` block on the ``o`` block.

    Returns ``(mean, cov)`` with ``mean = S_po S_oo^-1 y`` and
    ``cov = S_pp - S_po S_oo^-1 S_op``.
    """
    s_oo = np.atleast_2d(np.asarray(s_oo, dtype=np.float64))
    s_op = np.asarray(s_op, dtype=np.float64).reshape(s_oo.shape[0], -1)
    s_pp = np.atleast_2d(np.asarray(s_pp, dtype=np.float64))
    y = np.asarray(observed, dtype=np.float64).ravel()
    chol = cholesky(s_oo)
    a = scipy.linalg.solve_triangular(chol, s_op, lower=True, check_finite=False)
    z = scipy.linalg.solve_triangular(chol, y, lower=True, check_finite=False)
    mean = a.T @ z
    cov = psd_clean(s_pp - a.T @ a)
    return mean, cov


def mvn_condition(joint_cov, observed):
    """Condition a zero-mean joint Gaussian on its leading ``len(observed)`` entries."""
    joint_cov = np.asarray(joint_cov, dtype=np.float64)
    n_o = np.asarray(observed).size
    if joint_cov.ndim != 2 or joint_cov.shape[0] != joint_cov.shape[1] or n_o > joint_cov.shape[0]:
        raise DimensionError("joint covariance must be square and larger than the observed block")
    return condition(
        joint_cov[:n_o, :n_o], joint_cov[:n_o, n_o:], joint_cov[n_o:, n_o:], observed
    )


class DistanceStack:
    """Per-dimension absolute differences between two designs.

    Kernel matrices over fixed designs are evaluated many times during
    sampling; caching the ``(p, n_a, n_b)`` differences reduces each
    evaluation to a weighted sum and an exponential.
    """

    def __init__(self, a, b=None):
        a = as_design(a)
        self.same = b is None
        b = a if self.same else as_design(b)
        if a.shape[1] != b.shape[1]:
            raise DimensionError("designs disagree on input dimension")
        self.diffs = np.ascontiguousarray(np.abs(a.T[:, :, None] - b.T[:, None, :]))

    @property
    def shape(self) -> tuple:
        return self.diffs.shape[1:]

    def cov(self, precision: float, length_scales) -> np.ndarray:
        inv = 1.0 / np.asarray(length_scales, dtype=np.float64)
        k = np.exp(-np.tensordot(inv, self.diffs, axes=1)) / precision
        if self.same:
            k[np.diag_indices_from(k)] += JITTER / precision
        return k
