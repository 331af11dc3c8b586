"""Command-line pipeline: simulate, transform, decompose, fit, predict, loocv, report.

Every subcommand reads one JSON run configuration (``--config``). Relative
paths inside it resolve against the configuration file's directory.
Unknown keys are rejected.

Exit codes: 0 success, 2 configuration error, 3 data or format error,
4 numerical or fitting failure, 5 R-hat above 1.1 under ``--strict-rhat``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .exceptions import (ConfigError, DimensionError, DomainError, FormatError, MFTensorError,
                         NotFittedError)
from .io import read_design_csv, read_mesh_csv, write_design_csv, write_mesh_csv
from .mcmc import MCMCConfig
from .tensor import DenseTensor, read_mft, write_mft
from .transform import TransformSpec, apply_tensor
from .tucker import explained_variance, hooi, save_tucker, select_ranks

log = logging.getLogger("mftensor")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_RHAT = 2, 3, 4, 5


class RhatFailure(MFTensorError):
    """Raised under ``--strict-rhat`` when a parameter's split R-hat exceeds 1.1."""


# configuration

def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _ranks_ok(v) -> bool:
    return v is None or (isinstance(v, list) and len(v) == 4 and all(_is_int(r) and r >= 1 for r in v))


def _unit(v) -> bool:
    return _is_num(v) and 0 < v <= 1


SCHEMA = {
    "synth": {
        "grid_lf": _is_int, "grid_hf": _is_int, "n_months": _is_int, "n_years": _is_int,
        "n_lf": _is_int, "n_hf": _is_int, "p": _is_int, "seed": _is_int,
        "discrepancy_scale": _is_num, "n_candidates": _is_int, "n_test": _is_int,
    },
    "data": {k: lambda v: isinstance(v, str) for k in
             ("lf", "hf", "x_lf", "x_hf", "lf_mesh", "hf_mesh", "x_test", "truth")},
    "transform": {"eps": _is_num, "lo": _is_num, "hi": _is_num},
    "ranks": {"lf": _ranks_ok, "hf": _ranks_ok, "variance_target": _unit},
    "discrepancy": {"ranks": _ranks_ok, "variance_target": _unit},
    "interpolation": {"k": lambda v: _is_int(v) and v >= 1},
    "mcmc": {"n_chains": _is_int, "n_iter": _is_int, "burn_in": _is_int, "seed": _is_int,
             "target_accept": _is_num, "adapt_window": _is_int, "adapt": lambda v: isinstance(v, bool),
             "init_scale": _is_num},
    "prediction": {"n_draws": lambda v: _is_int(v) and v >= 2, "seed": _is_int,
                   "inputs": lambda v: isinstance(v, str)},
    "loocv": {"keep_lf_heldout": lambda v: isinstance(v, bool),
              "emulators": lambda v: isinstance(v, list) and all(isinstance(e, str) for e in v)},
    "output": lambda v: isinstance(v, str),
}

DATA_FILES = {
    "lf": "lf.mft", "hf": "hf.mft", "x_lf": "x_lf.csv", "x_hf": "x_hf.csv",
    "lf_mesh": "lf_mesh.csv", "hf_mesh": "hf_mesh.csv", "x_test": "x_test.csv", "truth": "truth.mft",
}


class RunConfig:
    """Validated configuration with paths resolved against ``base``."""

    def __init__(self, raw: dict, base: Path):
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        for key, value in raw.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown section '{key}'")
            spec = SCHEMA[key]
            if callable(spec):
                if not spec(value):
                    raise ConfigError(f"field '{key}': invalid value {value!r}")
                continue
            if key == "transform" and value is None:
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"section '{key}' must be an object")
            for field_, v in value.items():
                if field_ not in spec:
                    raise ConfigError(f"unknown key '{key}.{field_}'")
                if not spec[field_](v):
                    raise ConfigError(f"field '{key}.{field_}': invalid value {v!r}")
        self.raw = raw
        self.base = base
        self.out = self._path(raw.get("output", "out"))

    def _path(self, p: str) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base / p

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name) or {})

    def data_path(self, key: str, must_exist: bool = True) -> Path:
        data = self.section("data")
        path = self._path(data[key]) if key in data else self.out / "data" / DATA_FILES[key]
        if must_exist and not path.exists():
            raise ConfigError(f"field 'data.{key}': file {path} does not exist")
        return path

    def synth(self):
        from .synth import SynthConfig
        s = self.section("synth")
        s.pop("n_test", None)
        try:
            return SynthConfig(**s)
        except ValueError as exc:
            raise ConfigError(f"section 'synth': {exc}") from exc

    def n_test(self) -> int:
        return int(self.section("synth").get("n_test", 0))

    def transform(self) -> TransformSpec | None:
        t = self.raw.get("transform")
        if t is None:
            return None
        try:
            return TransformSpec(t.get("eps", 1e-3), t.get("lo", 0.01), t.get("hi", 0.99))
        except ValueError as exc:
            raise ConfigError(f"section 'transform': {exc}") from exc

    def mcmc(self) -> MCMCConfig:
        try:
            return MCMCConfig(**self.section("mcmc"))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"section 'mcmc': {exc}") from exc

    def ranks(self, which: str):
        r = self.section("ranks").get(which)
        return None if r is None else tuple(r)

    @property
    def variance_target(self) -> float:
        return float(self.section("ranks").get("variance_target", 0.99))

    @property
    def disc_ranks(self):
        r = self.section("discrepancy").get("ranks")
        return None if r is None else tuple(r)

    @property
    def disc_variance_target(self) -> float:
        return float(self.section("discrepancy").get("variance_target", 0.8))

    @property
    def k_interp(self) -> int:
        return int(self.section("interpolation").get("k", 3))

    @property
    def n_draws(self) -> int:
        return int(self.section("prediction").get("n_draws", 500))

    @property
    def pred_seed(self) -> int:
        return int(self.section("prediction").get("seed", 0))

    def study(self, emulators=None, keep_lf_heldout=None):
        from .eval import EMULATORS, StudyConfig
        lo = self.section("loocv")
        emulators = emulators or lo.get("emulators") or list(EMULATORS)
        keep = lo.get("keep_lf_heldout", False) if keep_lf_heldout is None else keep_lf_heldout
        try:
            return StudyConfig(
                emulators=tuple(emulators), ranks_lf=self.ranks("lf"), ranks_hf=self.ranks("hf"),
                ranks_disc=self.disc_ranks, variance_target=self.variance_target,
                disc_variance_target=self.disc_variance_target, k_interp=self.k_interp,
                n_draws=self.n_draws, seed=self.pred_seed, mcmc=self.mcmc(),
                transform=self.transform(), keep_lf_heldout=keep)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return RunConfig(raw, path.resolve().parent)


# data access

def _ensemble(cfg: RunConfig, fid: str) -> DenseTensor:
    return read_mft(cfg.data_path(fid))


def _design(cfg: RunConfig, key: str) -> np.ndarray:
    return read_design_csv(cfg.data_path(key))


def _mesh(cfg: RunConfig, key: str) -> np.ndarray:
    return read_mesh_csv(cfg.data_path(key))


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _check_rhat(samples, strict: bool) -> None:
    flagged = samples.flagged()
    if flagged and strict:
        raise RhatFailure(f"split R-hat above 1.1 for: {', '.join(flagged)}")


# subcommands

def cmd_simulate(cfg: RunConfig, args) -> None:
    from .synth import generate, simulate_ensemble, test_inputs
    sc = cfg.synth()
    d = generate(sc)
    out = cfg.out / "data"
    out.mkdir(parents=True, exist_ok=True)
    write_mft(out / DATA_FILES["lf"], d.z_lf)
    write_mft(out / DATA_FILES["hf"], d.z_hf)
    write_design_csv(out / DATA_FILES["x_lf"], d.x_lf)
    write_design_csv(out / DATA_FILES["x_hf"], d.x_hf)
    write_mesh_csv(out / DATA_FILES["lf_mesh"], d.lf_mesh)
    write_mesh_csv(out / DATA_FILES["hf_mesh"], d.hf_mesh)
    n_test = cfg.n_test()
    if n_test:
        x_test = test_inputs(n_test, sc)
        write_design_csv(out / DATA_FILES["x_test"], x_test)
        write_mft(out / DATA_FILES["truth"], simulate_ensemble(x_test, sc, "hf"))
    _write_json(out / "provenance.json", {"synth": sc.to_dict(), "n_test": n_test})
    print(f"wrote LF {d.z_lf.dims} and HF {d.z_hf.dims} ensembles to {out}")


def cmd_transform(cfg: RunConfig, args) -> None:
    spec = cfg.transform() or TransformSpec()
    src = Path(args.input)
    if not src.exists():
        raise ConfigError(f"input {src} does not exist")
    t = apply_tensor(read_mft(src), spec, "inverse" if args.inverse else "forward")
    write_mft(args.output, t)
    print(f"wrote {args.output}")


def cmd_decompose(cfg: RunConfig, args) -> None:
    z = _ensemble(cfg, args.fidelity)
    spec = cfg.transform()
    if spec is not None:
        z = apply_tensor(z, spec, "forward")
    ranks = cfg.ranks(args.fidelity) or select_ranks(z, cfg.variance_target)
    model = hooi(z, ranks)
    ev = explained_variance(z, model)
    save_tucker(model, cfg.out / f"tucker_{args.fidelity}", explained=ev)
    print(f"ranks {list(model.ranks)}, explained variance {ev:.6f}")


def _sf_dir(cfg: RunConfig, fid: str) -> Path:
    return cfg.out / f"model_sf_{fid}"


def cmd_fit(cfg: RunConfig, args) -> None:
    from .mf_emulator import fit_mf, save_mf
    from .sf_emulator import fit_sf, save_sf
    mcmc = cfg.mcmc()
    if args.mode == "sf":
        fid = args.fidelity
        model = fit_sf(_ensemble(cfg, fid), _design(cfg, f"x_{fid}"), cfg.ranks(fid), mcmc,
                       variance_target=cfg.variance_target, transform=cfg.transform())
        dest = _sf_dir(cfg, fid)
        save_sf(model, dest)
    else:
        lf = fit_sf(_ensemble(cfg, "lf"), _design(cfg, "x_lf"), cfg.ranks("lf"), mcmc,
                    variance_target=cfg.variance_target, transform=cfg.transform())
        model = fit_mf(None, _ensemble(cfg, "hf"), lf.design, _design(cfg, "x_hf"),
                       _mesh(cfg, "lf_mesh"), _mesh(cfg, "hf_mesh"), ranks_disc=cfg.disc_ranks,
                       k_interp=cfg.k_interp, cfg=mcmc, lf_model=lf,
                       disc_variance_target=cfg.disc_variance_target)
        dest = cfg.out / "model_mf"
        save_mf(model, dest)
    print(f"wrote {dest}")
    _check_rhat(model.samples, args.strict_rhat)


def cmd_predict(cfg: RunConfig, args) -> None:
    from .mf_emulator import load_mf, predict_mf_many
    from .sf_emulator import load_sf, predict_sf_many
    inputs = Path(args.inputs) if args.inputs else None
    if inputs is None:
        p = cfg.section("prediction").get("inputs")
        inputs = cfg._path(p) if p else cfg.data_path("x_test")
    if not inputs.exists():
        raise ConfigError(f"prediction inputs {inputs} do not exist")
    x = read_design_csv(inputs)
    if args.mode == "sf":
        src = _sf_dir(cfg, args.fidelity)
        name = f"sf_{args.fidelity}"
    else:
        src = cfg.out / "model_mf"
        name = "mf"
    if not (src / "manifest.json").exists():
        raise NotFittedError(f"no fitted model at {src}; run 'fit' first")
    if args.mode == "sf":
        gen = predict_sf_many(load_sf(src), x, cfg.n_draws, cfg.pred_seed)
    else:
        gen = predict_mf_many(load_mf(src), x, cfg.n_draws, cfg.pred_seed)
    dest = cfg.out / f"predictions_{name}"
    for i, pred in enumerate(gen):
        pred.save(dest, stem=f"point_{i + 1:03d}")
    print(f"wrote {x.shape[0]} predictions to {dest}")


def _emulator_list(text):
    return None if text is None else [e.strip() for e in text.split(",") if e.strip()]


def cmd_loocv(cfg: RunConfig, args) -> None:
    from .eval import loocv, write_reports
    scfg = cfg.study(_emulator_list(args.emulators), True if args.keep_lf_heldout else None)
    reports = loocv(_ensemble(cfg, "lf"), _ensemble(cfg, "hf"), _design(cfg, "x_lf"),
                    _design(cfg, "x_hf"), _mesh(cfg, "lf_mesh"), _mesh(cfg, "hf_mesh"), scfg)
    dest = cfg.out / "loocv"
    write_reports(dest, reports)
    _print_overall(reports)
    print(f"wrote {dest}")


def cmd_report(cfg: RunConfig, args) -> None:
    from .eval import run_study, write_reports
    scfg = cfg.study(_emulator_list(args.emulators))
    reports, fitted = run_study(
        _ensemble(cfg, "lf"), _ensemble(cfg, "hf"), _design(cfg, "x_lf"), _design(cfg, "x_hf"),
        _mesh(cfg, "lf_mesh"), _mesh(cfg, "hf_mesh"), _design(cfg, "x_test"),
        read_mft(cfg.data_path("truth")), scfg)
    dest = cfg.out / "report"
    write_reports(dest, reports, fitted.mf)
    _print_overall(reports)
    print(f"wrote {dest}")
    for name in ("lf", "hf", "mf"):
        model = getattr(fitted, name)
        if model is not None:
            _check_rhat(model.samples, args.strict_rhat)


def _print_overall(reports) -> None:
    for name, rep in reports.items():
        o = rep.overall
        print(f"{name:6s} mse={o['mse']:.6g} sd={o['sd']:.6g} coverage={o['coverage']:.4f}")


# entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mftensor", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="cap on BLAS/OpenMP threads (default: $MFT_THREADS)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.set_defaults(func=func)
        return p

    add("simulate", cmd_simulate, "generate the synthetic ensembles")
    p = add("transform", cmd_transform, "apply the bounded-data transform to a tensor")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--inverse", action="store_true")
    p = add("decompose", cmd_decompose, "Tucker-decompose an ensemble")
    p.add_argument("--fidelity", choices=("lf", "hf"), default="lf")
    p = add("fit", cmd_fit, "fit a single- or multi-fidelity emulator")
    p.add_argument("--mode", choices=("sf", "mf"), required=True)
    p.add_argument("--fidelity", choices=("lf", "hf"), default="lf")
    p.add_argument("--strict-rhat", action="store_true")
    p = add("predict", cmd_predict, "predict fields at new inputs")
    p.add_argument("--mode", choices=("sf", "mf"), required=True)
    p.add_argument("--fidelity", choices=("lf", "hf"), default="lf")
    p.add_argument("--inputs", help="design CSV of inputs (default: config)")
    p = add("loocv", cmd_loocv, "leave-one-out cross-validation over the HF design")
    p.add_argument("--emulators", help="comma-separated subset of lf,hf,mf,naive")
    p.add_argument("--keep-lf-heldout", action="store_true")
    p = add("report", cmd_report, "score emulators at held-out test inputs")
    p.add_argument("--emulators", help="comma-separated subset of lf,hf,mf,naive")
    p.add_argument("--strict-rhat", action="store_true")
    return parser


def _threads(arg) -> int | None:
    if arg is not None:
        return arg
    env = os.environ.get("MFT_THREADS")
    if env is None:
        return None
    try:
        return int(env)
    except ValueError as exc:
        raise ConfigError(f"MFT_THREADS must be an integer, got {env!r}") from exc


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _threads(args.threads)
        if threads is not None and threads < 1:
            raise ConfigError("thread count must be positive")
        cfg = load_config(args.config)
        with threadpool_limits(limits=threads):
            args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, DimensionError, DomainError, NotFittedError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RhatFailure as exc:
        print(f"diagnostic failure: {exc}", file=sys.stderr)
        return EXIT_RHAT
    except MFTensorError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())
