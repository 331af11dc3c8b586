"""Synthetic two-fidelity simulator for controlled emulator studies.

The low-fidelity field on a ``g x g`` grid over the unit square is

    f(s, m, y; x) = S(s; x1) * (1.2 + sin(2 pi m / n_m + pi x2 / 2))
                    * (1 + 0.3 (1 + x1) y / n_y)
                    + 0.5 x2 cos(pi s1) cos(pi s2 / 2)

with the two-term Shubert-style product

    S(s; x1) = prod_{c in (s1, s2)} sum_{k=1,2} k cos((k + 1) pi u c + k) / 3,
    u = 0.8 + 0.4 x1.

The high-fidelity field evaluates the same form on a finer grid and adds

    scale * exp(-|s - c(x1)|^2 / 0.08) * (1 + 0.5 cos(2 pi m / n_m)) * (0.5 + x2),
    c(x1) = (0.25 + 0.5 x1, 0.5),

a smooth bump whose position moves with ``x1`` and whose size grows with
``x2``. It does not depend on the year. The third input is inert in both
fidelities. Spatial index ``s = i1 + g * i2`` with cell-centre
coordinates ``((i1 + 0.5) / g, (i2 + 0.5) / g)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .exceptions import DomainError
from .tensor import DenseTensor

DEFAULT_DISCREPANCY_SCALE = 0.185


@dataclass(frozen=True)
class SynthConfig:
    grid_lf: int = 25
    grid_hf: int = 50
    n_months: int = 12
    n_years: int = 5
    n_lf: int = 100
    n_hf: int = 10
    p: int = 3
    seed: int = 0
    discrepancy_scale: float = DEFAULT_DISCREPANCY_SCALE
    n_candidates: int = 100

    def __post_init__(self):
        if self.n_hf > self.n_lf:
            raise ValueError(f"n_hf ({self.n_hf}) cannot exceed n_lf ({self.n_lf})")
        if self.grid_lf < 2 or self.grid_hf < 2:
            raise ValueError("grids need at least 2 points per side")
        if self.p < 2:
            raise ValueError("the simulators use at least two inputs")
        if min(self.n_months, self.n_years, self.n_hf, self.n_candidates) < 1:
            raise ValueError("sizes must be positive")
        if self.discrepancy_scale < 0:
            raise ValueError("discrepancy_scale must be nonnegative")

    def to_dict(self) -> dict:
        return asdict(self)


# designs

def lhs(n: int, p: int, rng: np.random.Generator) -> np.ndarray:
    """One random Latin hypercube: each column has one point per ``[i/n, (i+1)/n)``."""
    cols = [(rng.permutation(n) + rng.random(n)) / n for _ in range(p)]
    return np.column_stack(cols)


def min_distance(design: np.ndarray) -> float:
    return float(pdist(design).min()) if design.shape[0] > 1 else np.inf


def lhs_maximin(n: int, p: int, seed: int = 0, n_candidates: int = 100) -> np.ndarray:
    """Best of ``n_candidates`` random Latin hypercubes by minimum pairwise distance.

    The first candidate is the plain Latin hypercube for the same seed.
    """
    if n < 1 or p < 1 or n_candidates < 1:
        raise ValueError("n, p and n_candidates must be positive")
    rng = np.random.default_rng(seed)
    best, best_d = None, -1.0
    for _ in range(n_candidates):
        cand = lhs(n, p, rng)
        d = min_distance(cand)
        if d > best_d:
            best, best_d = cand, d
    return best


def grid_mesh(g: int) -> np.ndarray:
    """Cell-centre coordinates of a ``g x g`` grid, first coordinate fastest."""
    c = (np.arange(g) + 0.5) / g
    s1, s2 = np.meshgrid(c, c, indexing="xy")
    return np.column_stack([s1.ravel(), s2.ravel()])


# simulators

def _check_input(x, p: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if x.size != p:
        raise DomainError(f"expected {p} inputs, got {x.size}")
    if not np.all(np.isfinite(x)) or np.any(x < 0) or np.any(x > 1):
        raise DomainError(f"inputs must lie in the unit cube, got {x}")
    return x


def _shubert(c: np.ndarray, u: float) -> np.ndarray:
    return sum(k * np.cos((k + 1) * np.pi * u * c + k) for k in (1, 2)) / 3.0


def _physics(x: np.ndarray, g: int, n_m: int, n_y: int) -> np.ndarray:
    mesh = grid_mesh(g)
    s1, s2 = mesh[:, 0], mesh[:, 1]
    u = 0.8 + 0.4 * x[0]
    spatial = _shubert(s1, u) * _shubert(s2, u)
    m = np.arange(n_m)
    season = 1.2 + np.sin(2 * np.pi * m / n_m + 0.5 * np.pi * x[1])
    y = np.arange(n_y)
    trend = 1.0 + 0.3 * (1.0 + x[0]) * y / n_y
    field = spatial[:, None, None] * season[None, :, None] * trend[None, None, :]
    field += (0.5 * x[1] * np.cos(np.pi * s1) * np.cos(0.5 * np.pi * s2))[:, None, None]
    return field


def discrepancy_field(x, g: int, n_m: int, n_y: int) -> np.ndarray:
    """Unscaled additive discrepancy on a ``g x g`` grid."""
    mesh = grid_mesh(g)
    c1 = 0.25 + 0.5 * x[0]
    bump = np.exp(-((mesh[:, 0] - c1) ** 2 + (mesh[:, 1] - 0.5) ** 2) / 0.08)
    month = 1.0 + 0.5 * np.cos(2 * np.pi * np.arange(n_m) / n_m)
    field = bump[:, None] * month[None, :] * (0.5 + x[1])
    return np.repeat(field[:, :, None], n_y, axis=2)


def simulate_lf(x, cfg: SynthConfig = SynthConfig()) -> DenseTensor:
    """LF field ``(grid_lf**2, n_months, n_years)``."""
    x = _check_input(x, cfg.p)
    return DenseTensor(_physics(x, cfg.grid_lf, cfg.n_months, cfg.n_years))


def simulate_hf(x, cfg: SynthConfig = SynthConfig()) -> DenseTensor:
    """HF field ``(grid_hf**2, n_months, n_years)``: fine-grid physics plus the discrepancy."""
    x = _check_input(x, cfg.p)
    field = _physics(x, cfg.grid_hf, cfg.n_months, cfg.n_years)
    if cfg.discrepancy_scale:
        field = field + cfg.discrepancy_scale * discrepancy_field(
            x, cfg.grid_hf, cfg.n_months, cfg.n_years)
    return DenseTensor(field)


def simulate_ensemble(design, cfg: SynthConfig = SynthConfig(), fidelity: str = "lf") -> DenseTensor:
    """Runs at each design row stacked along a fourth mode."""
    sim = {"lf": simulate_lf, "hf": simulate_hf}[fidelity]
    design = np.atleast_2d(design)
    return DenseTensor(np.stack([sim(x, cfg).data for x in design], axis=-1))


@dataclass(frozen=True)
class SynthData:
    cfg: SynthConfig
    x_lf: np.ndarray
    x_hf: np.ndarray
    z_lf: DenseTensor
    z_hf: DenseTensor
    lf_mesh: np.ndarray
    hf_mesh: np.ndarray


def generate(cfg: SynthConfig = SynthConfig()) -> SynthData:
    """Designs, ensembles and meshes. The HF design is the first ``n_hf`` LF rows."""
    x_lf = lhs_maximin(cfg.n_lf, cfg.p, cfg.seed, cfg.n_candidates)
    x_hf = x_lf[: cfg.n_hf].copy()
    return SynthData(cfg, x_lf, x_hf, simulate_ensemble(x_lf, cfg, "lf"),
                     simulate_ensemble(x_hf, cfg, "hf"), grid_mesh(cfg.grid_lf),
                     grid_mesh(cfg.grid_hf))


def test_inputs(n: int, cfg: SynthConfig = SynthConfig(), seed: int | None = None) -> np.ndarray:
    """Held-out inputs for a study, drawn as a separate maximin design."""
    seed = cfg.seed + 1 if seed is None else seed
    return lhs_maximin(n, cfg.p, seed, cfg.n_candidates)


test_inputs.__test__ = False
