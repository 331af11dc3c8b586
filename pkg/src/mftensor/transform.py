"""Compressed-logit transform for fields bounded in [0, 1].

The forward map is ``logit[(exp(x/eps) - 1) / (exp(1/eps) - 1)]`` applied to
clipped values. Written as is, ``exp(1/eps)`` overflows for ``eps = 1e-3``;
both directions are therefore evaluated in an equivalent log-domain form:

    forward(x) = (x - 1)/eps + log(-expm1(-x/eps)) - log(-expm1((x - 1)/eps))
    inverse(y) = eps * logaddexp(0, 1/eps + log(-expm1(-1/eps)) - logaddexp(0, -y))
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import DomainError, NumericError
from .tensor import DenseTensor, as_tensor


@dataclass(frozen=True)
class TransformSpec:
    epsilon: float = 1e-3
    lo: float = 0.01
    hi: float = 0.99

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 < self.lo < self.hi < 1:
            raise ValueError(f"need 0 < lo < hi < 1, got lo={self.lo}, hi={self.hi}")

    def to_dict(self) -> dict:
        return {"eps": self.epsilon, "lo": self.lo, "hi": self.hi}


def _finite(x):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("transform input contains non-finite values")
    return x


def _out(v):
    return float(v) if np.ndim(v) == 0 else v


def clip(x, spec: TransformSpec = TransformSpec()):
    """``min(max(x, lo), hi)``."""
    x = _finite(x)
    return _out(np.clip(x, spec.lo, spec.hi))


def forward(x, spec: TransformSpec = TransformSpec()):
    """Map values in [0, 1] to the real line (strictly increasing on [lo, hi])."""
    x = np.clip(_finite(x), spec.lo, spec.hi)
    eps = spec.epsilon
    y = (x - 1.0) / eps + np.log(-np.expm1(-x / eps)) - np.log(-np.expm1((x - 1.0) / eps))
    return _out(y)


def inverse(y, spec: TransformSpec = TransformSpec()):
    """Inverse of :func:`forward`, clamped to ``[lo, hi]``."""
    y = _finite(y)
    eps = spec.epsilon
    log_scale = 1.0 / eps + np.log(-np.expm1(-1.0 / eps))
    x = eps * np.logaddexp(0.0, log_scale - np.logaddexp(0.0, -y))
    return _out(np.clip(x, spec.lo, spec.hi))


def apply_tensor(t, spec: TransformSpec = TransformSpec(), direction: str = "forward") -> DenseTensor:
    """Elementwise transform of a tensor; ``direction`` is ``forward`` or ``inverse``."""
    t = as_tensor(t)
    if direction in ("forward", "fwd"):
        data = _finite(t.data)
        if np.any(data < -1e-9) or np.any(data > 1 + 1e-9):
            raise DomainError("forward transform needs values in [0, 1]")
        return DenseTensor(forward(data, spec))
    if direction in ("inverse", "inv"):
        return DenseTensor(inverse(t.data, spec))
    raise ValueError(f"unknown direction {direction!r}")
