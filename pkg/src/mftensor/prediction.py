"""Posterior predictive summaries on a spatiotemporal grid."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import DimensionError
from .tensor import DenseTensor, write_mft

Z95 = 1.959963984540054


@dataclass(frozen=True)
class PredictionResult:
    """Pointwise predictive summaries at one input.

    ``draws`` has shape ``(n_draws, *field_dims)`` and is ``None`` for
    emulators with analytic Gaussian predictive distributions, in which case
    ``lower``/``upper`` are the central 95% normal interval.
    """

    mean: DenseTensor
    sd: DenseTensor
    lower: DenseTensor
    upper: DenseTensor
    draws: np.ndarray | None = None

    @classmethod
    def from_draws(cls, draws: np.ndarray, keep_draws: bool = True) -> "PredictionResult":
        draws = np.asarray(draws, dtype=np.float64)
        if draws.ndim < 2 or draws.shape[0] < 2:
            raise DimensionError("need at least two draws along the leading axis")
        lo, hi = np.quantile(draws, [0.025, 0.975], axis=0)
        return cls(
            mean=DenseTensor(draws.mean(axis=0)),
            sd=DenseTensor(draws.std(axis=0, ddof=1)),
            lower=DenseTensor(lo),
            upper=DenseTensor(hi),
            draws=draws if keep_draws else None,
        )

    @classmethod
    def gaussian(cls, mean, sd) -> "PredictionResult":
        mean = np.asarray(mean, dtype=np.float64)
        sd = np.asarray(sd, dtype=np.float64)
        if mean.shape != sd.shape:
            raise DimensionError(f"mean {mean.shape} and sd {sd.shape} differ in shape")
        return cls(DenseTensor(mean), DenseTensor(sd),
                   DenseTensor(mean - Z95 * sd), DenseTensor(mean + Z95 * sd))

    @property
    def dims(self) -> tuple:
        return self.mean.dims

    @property
    def n_draws(self) -> int:
        return 0 if self.draws is None else self.draws.shape[0]

    def save(self, directory, stem: str = "pred") -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in ("mean", "sd", "lower", "upper"):
            write_mft(directory / f"{stem}_{name}.mft", getattr(self, name))
