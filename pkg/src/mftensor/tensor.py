"""Dense tensors with a fixed mode-1-fastest (Fortran) memory layout.

Mode indices are zero-based throughout the package: mode ``0`` is the first
(fastest varying) mode. Unfoldings follow the Kolda--Bader convention: the
mode-``k`` fibres become columns and the remaining modes are ordered with the
lower-numbered mode varying fastest.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import DimensionError, FormatError

MAGIC = b"MFT1"


class DenseTensor:
    """Immutable order-d real tensor.

    Parameters
    ----------
    data : array_like
        Values with ``ndim >= 1``. A private, read-only, Fortran-ordered copy
        is stored.
    """

    __slots__ = ("_data",)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, order="F", copy=True)
        if arr.ndim == 0:
            raise DimensionError("a tensor needs at least one mode")
        if any(d < 1 for d in arr.shape):
            raise DimensionError(f"every dim must be >= 1, got {arr.shape}")
        arr.flags.writeable = False
        self._data = arr

    @classmethod
    def from_values(cls, values, dims: Sequence[int]) -> "DenseTensor":
        """Build a tensor from flat values in layout order."""
        values = np.asarray(values, dtype=np.float64).ravel()
        dims = tuple(int(d) for d in dims)
        if len(dims) == 0 or any(d < 1 for d in dims):
            raise DimensionError(f"invalid dims {dims}")
        if int(np.prod(dims)) != values.size:
            raise DimensionError(
                f"product of dims {dims} != number of values {values.size}"
            )
        return cls(values.reshape(dims, order="F"))

    @property
    def data(self) -> np.ndarray:
        """Read-only ndarray view with shape ``dims``."""
        return self._data

    @property
    def dims(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def order(self) -> int:
        return self._data.ndim

    @property
    def values(self) -> np.ndarray:
        """Flat values in layout order (a copy)."""
        return self._data.ravel(order="F").copy()

    def norm(self) -> float:
        """Frobenius norm."""
        return float(np.linalg.norm(self._data.ravel(order="K")))

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self._data
        return self._data.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, DenseTensor):
            return NotImplemented
        return self.dims == other.dims and bool(np.array_equal(self._data, other._data))

    __hash__ = None

    def __add__(self, other):
        return DenseTensor(self._data + _raw(other))

    def __sub__(self, other):
        return DenseTensor(self._data - _raw(other))

    def __mul__(self, scalar):
        return DenseTensor(self._data * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return DenseTensor(-self._data)

    def __repr__(self):
        return f"DenseTensor(dims={self.dims})"


def _raw(t) -> np.ndarray:
    if isinstance(t, DenseTensor):
        return t.data
    return np.asarray(t, dtype=np.float64)


def as_tensor(t) -> DenseTensor:
    return t if isinstance(t, DenseTensor) else DenseTensor(t)


def _check_mode(k: int, order: int) -> int:
    if not isinstance(k, (int, np.integer)) or not 0 <= k < order:
        raise DimensionError(f"mode index {k} out of range for order-{order} tensor")
    return int(k)


# ndarray-level kernels used by the numerical modules

def unfold_array(arr: np.ndarray, k: int) -> np.ndarray:
    return np.moveaxis(arr, k, 0).reshape(arr.shape[k], -1, order="F")


def fold_array(m: np.ndarray, k: int, dims: Sequence[int]) -> np.ndarray:
    dims = tuple(dims)
    rest = dims[:k] + dims[k + 1:]
    return np.moveaxis(m.reshape((dims[k],) + rest, order="F"), 0, k)


def ttm(arr: np.ndarray, m: np.ndarray, k: int, transpose: bool = False) -> np.ndarray:
    """Mode-k product ``arr x_k m`` (or ``m.T`` when ``transpose``)."""
    if transpose:
        out = np.tensordot(m, arr, axes=(0, k))
    else:
        out = np.tensordot(m, arr, axes=(1, k))
    return np.moveaxis(out, 0, k)


def multi_ttm(arr: np.ndarray, mats, modes=None, transpose: bool = False) -> np.ndarray:
    """Successive mode products, applied in the order that shrinks data fastest."""
    if modes is None:
        modes = range(len(mats))
    pairs = list(zip(modes, mats))

    def shrink(pair):
        k, m = pair
        rows = m.shape[1] if transpose else m.shape[0]
        return rows / arr.shape[k]

    for k, m in sorted(pairs, key=shrink):
        arr = ttm(arr, m, k, transpose=transpose)
    return arr


# public API

def unfold(t, k: int) -> np.ndarray:
    """Mode-k unfolding, a ``dims[k] x prod(other dims)`` matrix."""
    t = as_tensor(t)
    k = _check_mode(k, t.order)
    return unfold_array(t.data, k)


def fold(m, k: int, dims: Sequence[int]) -> DenseTensor:
    """Inverse of :func:`unfold`."""
    m = np.asarray(m, dtype=np.float64)
    dims = tuple(int(d) for d in dims)
    k = _check_mode(k, len(dims))
    expected = (dims[k], int(np.prod(dims)) // dims[k])
    if m.ndim != 2 or m.shape != expected:
        raise DimensionError(f"matrix shape {m.shape} does not match {expected} for dims {dims}")
    return DenseTensor(fold_array(m, k, dims))


def mode_product(t, m, k: int) -> DenseTensor:
    """Mode-k tensor--matrix product ``t x_k m``."""
    t = as_tensor(t)
    m = np.asarray(m, dtype=np.float64)
    k = _check_mode(k, t.order)
    if m.ndim != 2 or m.shape[1] != t.dims[k]:
        raise DimensionError(
            f"matrix with {m.shape[-1]} columns cannot multiply mode {k} of size {t.dims[k]}"
        )
    return DenseTensor(ttm(t.data, m, k))


def vectorize(t) -> np.ndarray:
    """Values in layout order."""
    return as_tensor(t).values


def outer3(u, v, w) -> DenseTensor:
    """Outer product of three vectors, element ``[i,j,k] = u[i] v[j] w[k]``."""
    u, v, w = (np.asarray(a, dtype=np.float64).ravel() for a in (u, v, w))
    if min(u.size, v.size, w.size) == 0:
        raise DimensionError("outer3 needs nonempty vectors")
    return DenseTensor(np.einsum("i,j,k->ijk", u, v, w))


# MFT1 binary format

def write_mft(path, t) -> None:
    """Write a tensor (or 2-D matrix) as an MFT1 file."""
    arr = _raw(t)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    header = MAGIC + struct.pack("<Q", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    payload = np.asarray(arr, dtype="<f8").ravel(order="F").tobytes()
    Path(path).write_bytes(header + payload)


def read_mft(path) -> DenseTensor:
    """Read an MFT1 file, rejecting bad magic and truncated or oversized payloads."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}")
    if len(raw) < 12:
        raise FormatError(f"{path}: truncated header")
    (order,) = struct.unpack("<Q", raw[4:12])
    if order < 1 or len(raw) < 12 + 8 * order:
        raise FormatError(f"{path}: truncated header (order {order})")
    dims = struct.unpack(f"<{order}Q", raw[12:12 + 8 * order])
    if any(d < 1 for d in dims):
        raise FormatError(f"{path}: invalid dims {dims}")
    n = int(np.prod(dims))
    body = raw[12 + 8 * order:]
    if len(body) != 8 * n:
        raise FormatError(f"{path}: payload has {len(body)} bytes, expected {8 * n}")
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return DenseTensor.from_values(values, dims)
