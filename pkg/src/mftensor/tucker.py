"""Truncated Tucker decomposition by higher-order orthogonal iteration (HOOI)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import DegenerateInputError, DimensionError, FormatError, NumericError
from .tensor import (
    DenseTensor,
    as_tensor,
    multi_ttm,
    read_mft,
    unfold_array,
    write_mft,
)

ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class TuckerModel:
    """Core tensor plus one factor matrix per mode.

    ``factors[k]`` has shape ``(dims[k], ranks[k])``. ``n_iter`` and
    ``errors`` record the HOOI run that produced the model (relative
    Frobenius error after each sweep, ``errors[0]`` being the HOSVD start).
    """

    core: DenseTensor
    factors: tuple
    n_iter: int = 0
    errors: tuple = field(default=(), compare=False)

    def __post_init__(self):
        core = as_tensor(self.core)
        factors = tuple(np.array(f, dtype=np.float64) for f in self.factors)
        if len(factors) != core.order:
            raise DimensionError(f"{len(factors)} factors for an order-{core.order} core")
        for k, f in enumerate(factors):
            if f.ndim != 2 or f.shape[1] != core.dims[k]:
                raise DimensionError(f"factor {k} has shape {f.shape}, core rank is {core.dims[k]}")
            if f.shape[1] > f.shape[0]:
                raise DimensionError(f"rank {f.shape[1]} exceeds dim {f.shape[0]} in mode {k}")
            f.flags.writeable = False
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "factors", factors)

    @property
    def ranks(self) -> tuple[int, ...]:
        return self.core.dims

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.shape[0] for f in self.factors)

    @property
    def order(self) -> int:
        return self.core.order

    def orthonormality_error(self) -> float:
        """Largest ``max|U^T U - I|`` over all factors."""
        return max(
            float(np.max(np.abs(f.T @ f - np.eye(f.shape[1])))) for f in self.factors
        )


def _gram_spectrum(arr: np.ndarray, k: int) -> np.ndarray:
    m = unfold_array(arr, k)
    w = np.linalg.eigvalsh(m @ m.T)[::-1]
    return np.clip(w, 0.0, None)


def select_ranks(t, variance_target) -> list[int]:
    """Smallest per-mode ranks capturing ``variance_target`` of the variance.

    For each mode the eigenvalues of the Gram matrix of the mode-k unfolding
    are accumulated in decreasing order; the rank is the smallest count whose
    partial sum reaches ``target * total`` (ties go to the smaller rank).

    Parameters
    ----------
    t : DenseTensor
    variance_target : float or sequence of float
        Fraction(s) in (0, 1], one per mode or a single shared value.
    """
    t = as_tensor(t)
    arr = t.data
    if not np.any(arr):
        raise DegenerateInputError("cannot select ranks for a zero tensor")
    targets = np.broadcast_to(np.asarray(variance_target, dtype=float), (t.order,))
    if np.any(targets <= 0) or np.any(targets > 1):
        raise ValueError(f"variance targets must lie in (0, 1], got {variance_target}")
    ranks = []
    for k in range(t.order):
        ev = _gram_spectrum(arr, k)
        cap = min(t.dims[k], arr.size // t.dims[k])
        tiny = ev[0] * max(ev.size, 1) * np.finfo(float).eps
        ev = np.where(ev > tiny, ev, 0.0)
        if targets[k] >= 1.0:
            r = int(np.count_nonzero(ev))
        else:
            csum = np.cumsum(ev)
            r = int(np.argmax(csum >= targets[k] * csum[-1])) + 1
        ranks.append(max(1, min(r, cap)))
    return ranks


def _leading_left(m: np.ndarray, r: int) -> np.ndarray:
    """Leading ``r`` left singular vectors with a deterministic sign convention."""
    if m.shape[0] < m.shape[1]:
        # short-and-fat unfolding: the Gram route is much cheaper
        w, v = np.linalg.eigh(m @ m.T)
        u = v[:, ::-1][:, :r]
    else:
        u = np.linalg.svd(m, full_matrices=False)[0][:, :r]
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def hosvd(t, ranks: Sequence[int]) -> TuckerModel:
    """Truncated higher-order SVD: per-mode leading singular vectors."""
    t = as_tensor(t)
    ranks = _check_ranks(t, ranks)
    factors = [_leading_left(unfold_array(t.data, k), r) for k, r in enumerate(ranks)]
    core = multi_ttm(t.data, factors, transpose=True)
    return TuckerModel(DenseTensor(core), tuple(factors))


def _check_ranks(t: DenseTensor, ranks) -> list[int]:
    ranks = [int(r) for r in ranks]
    if len(ranks) != t.order:
        raise DimensionError(f"{len(ranks)} ranks for an order-{t.order} tensor")
    for k, (r, d) in enumerate(zip(ranks, t.dims)):
        if not 1 <= r <= d:
            raise DimensionError(f"rank {r} invalid for mode {k} of size {d}")
    return ranks


def hooi(t, ranks: Sequence[int], max_iter: int = 50, tol: float = 1e-8) -> TuckerModel:
    """Truncated Tucker decomposition by higher-order orthogonal iteration.

    Starts from the truncated HOSVD and sweeps over the modes, replacing each
    factor by the leading left singular vectors of the data projected onto
    all other factors. Stops when the relative change in reconstruction error
    drops below ``tol`` or after ``max_iter`` sweeps. A sweep that would
    increase the error (rounding only) is discarded.
    """
    t = as_tensor(t)
    if not np.all(np.isfinite(t.data)):
        raise NumericError("tensor contains non-finite values")
    ranks = _check_ranks(t, ranks)
    if max_iter < 1 or tol <= 0:
        raise ValueError("max_iter must be >= 1 and tol > 0")
    arr = t.data
    d = t.order
    sq_norm = float(np.sum(arr * arr))
    if sq_norm == 0.0:
        raise DegenerateInputError("cannot decompose a zero tensor")

    def rel_error(core_sq):
        return float(np.sqrt(max(sq_norm - core_sq, 0.0) / sq_norm))

    factors = list(hosvd(t, ranks).factors)
    core = multi_ttm(arr, factors, transpose=True)
    err = rel_error(float(np.sum(core * core)))
    errors = [err]
    n_iter = 0
    for _ in range(max_iter):
        new = list(factors)
        for k in range(d):
            others = [j for j in range(d) if j != k]
            y = multi_ttm(arr, [new[j] for j in others], others, transpose=True)
            new[k] = _leading_left(unfold_array(y, k), ranks[k])
        new_core = multi_ttm(arr, new, transpose=True)
        new_err = rel_error(float(np.sum(new_core * new_core)))
        if new_err > err:
            break
        n_iter += 1
        factors, core = new, new_core
        change = abs(err - new_err) / max(err, np.finfo(float).tiny)
        err = new_err
        errors.append(err)
        if err == 0.0 or change < tol:
            break
    return TuckerModel(DenseTensor(core), tuple(factors), n_iter=n_iter, errors=tuple(errors))


def reconstruct(m: TuckerModel) -> DenseTensor:
    """``core x_1 U_1 x_2 ... x_d U_d``."""
    return DenseTensor(multi_ttm(m.core.data, m.factors))


def explained_variance(t, m: TuckerModel) -> float:
    """``1 - ||t - reconstruct(m)||^2 / ||t||^2``."""
    t = as_tensor(t)
    sq = float(np.sum(t.data ** 2))
    if sq == 0.0:
        raise DegenerateInputError("explained variance undefined for a zero tensor")
    resid = t.data - reconstruct(m).data
    return 1.0 - float(np.sum(resid ** 2)) / sq


def basis_contribution(m: TuckerModel, mode: int, j: int) -> float:
    """Share of the squared core norm carried by column ``j`` of factor ``mode``."""
    if not 0 <= mode < m.order:
        raise IndexError(f"mode {mode} out of range")
    if not 0 <= j < m.ranks[mode]:
        raise IndexError(f"column {j} out of range for rank {m.ranks[mode]}")
    sq = m.core.data ** 2
    total = float(sq.sum())
    if total == 0.0:
        raise DegenerateInputError("core tensor is zero")
    return float(np.take(sq, j, axis=mode).sum()) / total


def basis_contributions(m: TuckerModel, mode: int) -> np.ndarray:
    """All column contributions of one mode."""
    return np.array([basis_contribution(m, mode, j) for j in range(m.ranks[mode])])


def save_tucker(m: TuckerModel, directory, explained: float | None = None) -> None:
    """Write ``core.mft``, ``factor_{k}.mft`` and ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_mft(directory / "core.mft", m.core)
    for k, f in enumerate(m.factors):
        write_mft(directory / f"factor_{k}.mft", f)
    manifest = {
        "ranks": list(m.ranks),
        "dims": list(m.dims),
        "explained_variance": explained,
        "hooi_iterations": m.n_iter,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_tucker(directory) -> TuckerModel:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except FileNotFoundError as exc:
        raise FormatError(f"{directory}: missing manifest.json") from exc
    core = read_mft(directory / "core.mft")
    factors = [read_mft(directory / f"factor_{k}.mft").data for k in range(core.order)]
    if list(core.dims) != manifest["ranks"]:
        raise FormatError(f"{directory}: core dims {core.dims} disagree with manifest")
    return TuckerModel(core, tuple(factors), n_iter=int(manifest.get("hooi_iterations", 0)))
