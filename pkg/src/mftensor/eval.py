"""Scoring, held-out studies and leave-one-out cross-validation.

Four emulators are compared on the HF grid:

``lf``
    single-fidelity emulator of the LF ensemble, its spatial basis
    interpolated to the HF mesh;
``hf``
    single-fidelity emulator of the HF ensemble;
``mf``
    the multi-fidelity emulator;
``naive``
    independent per-coordinate GPs on the HF ensemble.

Scores are computed on the original data scale. Normalized SDs divide by
the range of an emulator's predictive means over the evaluated inputs.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .baseline import fit_naive, predict_naive
from .exceptions import DegenerateInputError, DiagnosticError, DimensionError, MFTensorError
from .io import write_table_csv
from .mcmc import MCMCConfig
from .mf_emulator import fit_mf, interpolate_bases, predict_mf_many
from .prediction import PredictionResult
from .sf_emulator import fit_sf, predict_sf_many
from .tensor import DenseTensor, as_tensor
from .transform import TransformSpec

log = logging.getLogger(__name__)

EMULATORS = ("lf", "hf", "mf", "naive")
MIN_DRAWS = 100
METRICS = ("mse", "sd", "coverage")


# pointwise metrics

def _pair(a, b) -> tuple:
    a, b = np.asarray(as_tensor(a).data), np.asarray(as_tensor(b).data)
    if a.shape != b.shape:
        raise DimensionError(f"dims differ: {a.shape} vs {b.shape}")
    return a, b


def mse(pred_mean, truth) -> float:
    """Mean squared difference over all entries."""
    a, b = _pair(pred_mean, truth)
    return float(np.mean((a - b) ** 2))


def sd_normalized(pred_sd, output_range: float) -> float:
    """Mean pointwise SD divided by ``output_range``."""
    if not output_range > 0:
        raise DegenerateInputError(f"output range must be positive, got {output_range}")
    return float(np.mean(as_tensor(pred_sd).data) / output_range)


def interval_coverage(lower, upper, truth) -> float:
    """Fraction of entries with ``lower <= truth <= upper``."""
    lo, t = _pair(lower, truth)
    hi, _ = _pair(upper, truth)
    return float(np.mean((t >= lo) & (t <= hi)))


def coverage95(draws, truth) -> float:
    """Coverage of the empirical central 95% interval of ``draws`` (draws on axis 0)."""
    draws = np.asarray(draws, dtype=np.float64)
    if draws.shape[0] < MIN_DRAWS:
        raise DiagnosticError(f"coverage needs at least {MIN_DRAWS} draws, got {draws.shape[0]}")
    lo, hi = np.quantile(draws, [0.025, 0.975], axis=0)
    return interval_coverage(lo, hi, truth)


# reports

@dataclass(frozen=True)
class MetricsReport:
    """Scores of one emulator.

    ``per_point`` is ``(n_points, 3)`` and the ``by_*`` tables are
    ``(n_levels, 3)``, columns ordered as ``METRICS`` (MSE, normalized SD,
    coverage). ``incomplete`` lists the labels of evaluations that failed.
    """

    emulator: str
    labels: tuple
    per_point: np.ndarray
    by_month: np.ndarray
    by_year: np.ndarray
    by_location: np.ndarray
    output_range: float
    seed: int = 0
    config_hash: str = ""
    incomplete: tuple = ()

    @property
    def overall(self) -> dict:
        if not len(self.labels):
            return {k: float("nan") for k in METRICS}
        return dict(zip(METRICS, self.per_point.mean(axis=0).tolist()))

    @property
    def complete(self) -> bool:
        return not self.incomplete


class MetricsAccumulator:
    """Streams predictions into per-point and per-mode sums.

    Fields are ``(n_s, n_m, n_y)``. The normalized SD needs the range of the
    predictive means over every added point, so it is resolved in ``finish``.
    """

    def __init__(self, emulator: str, field_dims: Sequence[int]):
        self.emulator = emulator
        self.dims = tuple(int(d) for d in field_dims)
        if len(self.dims) != 3:
            raise DimensionError("fields must have three modes (space, month, year)")
        self.labels: list = []
        self.points: list = []
        self.sums = [np.zeros((d, 3)) for d in self.dims]
        self.lo, self.hi = np.inf, -np.inf
        self.failed: list = []

    def add(self, label, pred: PredictionResult, truth) -> None:
        truth = np.asarray(as_tensor(truth).data, dtype=np.float64)
        mean = pred.mean.data
        if mean.shape != self.dims or truth.shape != self.dims:
            raise DimensionError(f"expected fields {self.dims}, got {mean.shape} and {truth.shape}")
        parts = np.stack([(mean - truth) ** 2, pred.sd.data,
                          ((truth >= pred.lower.data) & (truth <= pred.upper.data)).astype(float)])
        self.points.append(parts.mean(axis=(1, 2, 3)))
        for k in range(3):
            other = tuple(1 + a for a in range(3) if a != k)
            self.sums[k] += parts.sum(axis=other).T
        self.lo = min(self.lo, float(mean.min()))
        self.hi = max(self.hi, float(mean.max()))
        self.labels.append(label)

    def fail(self, label) -> None:
        self.failed.append(label)

    def finish(self, seed: int = 0, config_hash: str = "") -> MetricsReport:
        n = len(self.labels)
        rng = self.hi - self.lo if n else float("nan")
        per_point = np.array(self.points).reshape(n, 3)
        tables = []
        for k, d in enumerate(self.dims):
            count = n * np.prod(self.dims) / d
            tables.append(self.sums[k] / count if n else np.full((d, 3), np.nan))
        if n:
            if not rng > 0:
                raise DegenerateInputError(f"{self.emulator}: predictive means have zero range")
            per_point = per_point.copy()
            per_point[:, 1] /= rng
            for t in tables:
                t[:, 1] /= rng
        return MetricsReport(self.emulator, tuple(self.labels), per_point, tables[1], tables[2],
                             tables[0], rng, seed, config_hash, tuple(self.failed))


# fitting and prediction

@dataclass(frozen=True)
class StudyConfig:
    """Settings shared by held-out studies and cross-validation.

    Ranks left as ``None`` are selected from the variance targets.
    """

    emulators: tuple = EMULATORS
    ranks_lf: tuple | None = None
    ranks_hf: tuple | None = None
    ranks_disc: tuple | None = None
    variance_target: float = 0.99
    disc_variance_target: float = 0.8
    k_interp: int = 3
    n_draws: int = 500
    seed: int = 0
    mcmc: MCMCConfig = field(default_factory=MCMCConfig)
    transform: TransformSpec | None = None
    keep_lf_heldout: bool = False

    def __post_init__(self):
        unknown = set(self.emulators) - set(EMULATORS)
        if unknown or not self.emulators:
            raise ValueError(f"emulators must be a nonempty subset of {EMULATORS}, got {self.emulators}")
        if self.n_draws < MIN_DRAWS:
            raise ValueError(f"n_draws must be at least {MIN_DRAWS}")
        if self.k_interp < 1:
            raise ValueError("k_interp must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["emulators"] = list(self.emulators)
        d["mcmc"] = self.mcmc.to_dict()
        d["transform"] = None if self.transform is None else self.transform.to_dict()
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class FittedSet:
    """Emulators fitted on one training set; absent ones are ``None``."""

    lf: object = None
    hf: object = None
    mf: object = None
    naive: object = None
    lf_spatial: np.ndarray | None = None
    errors: dict = field(default_factory=dict)


def fit_emulators(z_lf, z_hf, x_lf, x_hf, lf_mesh, hf_mesh, scfg: StudyConfig,
                  mcmc: MCMCConfig | None = None) -> FittedSet:
    """Fit the requested emulators. A failure is stored in ``errors`` and logged."""
    mcmc = mcmc or scfg.mcmc
    out = FittedSet()
    want = set(scfg.emulators)

    def attempt(name, fn):
        try:
            return fn()
        except MFTensorError as exc:
            log.warning("fitting %s failed: %s", name, exc)
            out.errors[name] = str(exc)
            return None

    lf = None
    if want & {"lf", "mf"}:
        lf = attempt("lf", lambda: fit_sf(z_lf, x_lf, scfg.ranks_lf, mcmc,
                                          variance_target=scfg.variance_target,
                                          transform=scfg.transform))
        if lf is None and "mf" in want:
            out.errors["mf"] = "LF emulator failed"
    if "lf" in want and lf is not None:
        out.lf = lf
        out.lf_spatial = interpolate_bases(lf.tucker.factors[0], lf_mesh, hf_mesh, scfg.k_interp)
    if "mf" in want and lf is not None:
        out.mf = attempt("mf", lambda: fit_mf(z_lf, z_hf, x_lf, x_hf, lf_mesh, hf_mesh,
                                              ranks_disc=scfg.ranks_disc, k_interp=scfg.k_interp,
                                              cfg=mcmc, lf_model=lf,
                                              disc_variance_target=scfg.disc_variance_target))
    if "hf" in want:
        out.hf = attempt("hf", lambda: fit_sf(z_hf, x_hf, scfg.ranks_hf, mcmc,
                                              variance_target=scfg.variance_target,
                                              transform=scfg.transform))
    if "naive" in want:
        out.naive = attempt("naive", lambda: fit_naive(z_hf, x_hf, seed=mcmc.seed))
    return out


def predict_emulator(fitted: FittedSet, name: str, x_star, n_draws: int = 500,
                     seed: int = 0) -> Iterable[PredictionResult]:
    """Predictions on the HF grid at each row of ``x_star``."""
    x_star = np.atleast_2d(np.asarray(x_star, dtype=np.float64))
    model = getattr(fitted, name)
    if model is None:
        raise MFTensorError(f"emulator {name!r} is not available")
    if name == "lf":
        return predict_sf_many(model, x_star, n_draws, seed, spatial_factor=fitted.lf_spatial)
    if name == "hf":
        return predict_sf_many(model, x_star, n_draws, seed)
    if name == "mf":
        return predict_mf_many(model, x_star, n_draws, seed)
    return (predict_naive(model, x[None, :]) for x in x_star)


def _field(z: DenseTensor, i: int) -> np.ndarray:
    return z.data[..., i]


def run_study(z_lf, z_hf, x_lf, x_hf, lf_mesh, hf_mesh, x_test, truth,
              scfg: StudyConfig = StudyConfig()) -> tuple:
    """Fit once and score every emulator at held-out inputs.

    ``truth`` holds the HF fields at ``x_test`` stacked along a fourth mode.
    Returns ``(reports, fitted)`` with reports keyed by emulator name.
    """
    truth = as_tensor(truth)
    x_test = np.atleast_2d(np.asarray(x_test, dtype=np.float64))
    if truth.order != 4 or truth.dims[3] != x_test.shape[0]:
        raise DimensionError("truth must stack one HF field per test input")
    fitted = fit_emulators(z_lf, z_hf, x_lf, x_hf, lf_mesh, hf_mesh, scfg)
    h = scfg.hash()
    reports = {}
    for name in scfg.emulators:
        acc = MetricsAccumulator(name, truth.dims[:3])
        if getattr(fitted, name) is None:
            for i in range(x_test.shape[0]):
                acc.fail(i)
        else:
            for i, pred in enumerate(predict_emulator(fitted, name, x_test, scfg.n_draws, scfg.seed)):
                acc.add(i, pred, _field(truth, i))
        reports[name] = acc.finish(scfg.seed, h)
    return reports, fitted


def fold_seed(base: int, fold: int) -> int:
    """Seed for fold ``fold``, independent of the order folds are run in."""
    return int(np.random.SeedSequence([base, fold]).generate_state(1)[0])


def loocv(z_lf, z_hf, x_lf, x_hf, lf_mesh, hf_mesh, scfg: StudyConfig = StudyConfig(),
          folds: Sequence[int] | None = None) -> dict:
    """Leave-one-out cross-validation over the HF design.

    For each HF point the remaining HF runs train the emulators and the
    held-out HF field is the target. Unless ``scfg.keep_lf_heldout`` is set,
    LF runs at the held-out input are removed as well. Returns reports keyed
    by emulator; labels are HF design indices.
    """
    z_lf, z_hf = as_tensor(z_lf), as_tensor(z_hf)
    x_lf = np.atleast_2d(np.asarray(x_lf, dtype=np.float64))
    x_hf = np.atleast_2d(np.asarray(x_hf, dtype=np.float64))
    n = x_hf.shape[0]
    if n < 3:
        raise ValueError("cross-validation needs at least three HF runs")
    folds = range(n) if folds is None else folds
    accs = {name: MetricsAccumulator(name, z_hf.dims[:3]) for name in scfg.emulators}
    for i in folds:
        keep_hf = np.arange(n) != i
        keep_lf = np.ones(x_lf.shape[0], dtype=bool)
        if not scfg.keep_lf_heldout:
            keep_lf = ~np.all(x_lf == x_hf[i], axis=1)
        seed = fold_seed(scfg.mcmc.seed, i)
        mcmc = replace(scfg.mcmc, seed=seed)
        fitted = fit_emulators(DenseTensor(z_lf.data[..., keep_lf]), DenseTensor(z_hf.data[..., keep_hf]),
                               x_lf[keep_lf], x_hf[keep_hf], lf_mesh, hf_mesh, scfg, mcmc)
        truth = _field(z_hf, i)
        for name in scfg.emulators:
            if getattr(fitted, name) is None:
                log.warning("fold %d: %s skipped (%s)", i, name, fitted.errors.get(name, "not fitted"))
                accs[name].fail(i)
                continue
            try:
                pred = next(iter(predict_emulator(fitted, name, x_hf[i], scfg.n_draws, seed)))
            except MFTensorError as exc:
                log.warning("fold %d: %s prediction failed: %s", i, name, exc)
                accs[name].fail(i)
                continue
            accs[name].add(i, pred, truth)
    h = scfg.hash()
    return {name: acc.finish(scfg.seed, h) for name, acc in accs.items()}


# CSV output

def lengthscale_rows(mf_model, input_names=None) -> list:
    """Rows ``(emulator, component, index, input, mean)`` for the MF emulator (1-based indices)."""
    lf, disc = mf_model.lengthscale_means()
    p = lf.shape[1] if lf.size else disc.shape[1]
    names = list(input_names) if input_names is not None else [f"x{d + 1}" for d in range(p)]
    rows = []
    for comp, table in (("LF", lf), ("discrepancy", disc)):
        for j, row in enumerate(table):
            rows.extend(("mf", comp, j + 1, names[d], float(v)) for d, v in enumerate(row))
    return rows


def write_reports(directory, reports: dict, mf_model=None, input_names=None) -> None:
    """Write the overall, per-month, per-year, per-location and length-scale tables."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    overall = []
    for name, rep in reports.items():
        o = rep.overall
        overall.append((name, o["mse"], o["sd"], o["coverage"], len(rep.labels), len(rep.incomplete)))
    write_table_csv(directory / "metrics_overall.csv",
                    ["emulator", "mse", "sd", "coverage", "n_points", "n_failed"], overall)
    for attr, key in (("by_month", "month"), ("by_year", "year"), ("by_location", "location")):
        rows = [(name, k + 1, *vals) for name, rep in reports.items()
                for k, vals in enumerate(getattr(rep, attr).tolist())]
        write_table_csv(directory / f"metrics_{attr}.csv", ["emulator", key, *METRICS], rows)
    if mf_model is not None:
        write_table_csv(directory / "lengthscales.csv",
                        ["emulator", "component", "index", "input", "mean"],
                        lengthscale_rows(mf_model, input_names))
    meta = {name: {"seed": rep.seed, "config_hash": rep.config_hash,
                   "labels": [int(v) for v in rep.labels],
                   "incomplete": [int(v) for v in rep.incomplete],
                   "output_range": rep.output_range}
            for name, rep in reports.items()}
    (directory / "report.json").write_text(json.dumps(meta, indent=2))
