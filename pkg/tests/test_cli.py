import json

import numpy as np
import pytest

from mftensor.cli import main
from mftensor.io import read_design_csv, write_design_csv
from mftensor.tensor import DenseTensor, read_mft, write_mft

SYNTH = {"grid_lf": 4, "grid_hf": 6, "n_months": 3, "n_years": 2, "n_lf": 8, "n_hf": 3,
         "seed": 1, "n_test": 2, "n_candidates": 10}
BASE = {
    "synth": SYNTH,
    "ranks": {"lf": [3, 2, 1, 3], "hf": [2, 2, 1, 2]},
    "discrepancy": {"ranks": [2, 1, 1, 1]},
    "interpolation": {"k": 2},
    "mcmc": {"n_chains": 2, "n_iter": 200, "burn_in": 100, "seed": 0},
    "prediction": {"n_draws": 100},
    "output": "out",
}


def _config(tmp_path, name="cfg.json", **override):
    raw = json.loads(json.dumps(BASE))
    raw.update(override)
    path = tmp_path / name
    path.write_text(json.dumps(raw))
    return str(path)


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _config(root)
    assert main(["simulate", "--config", cfg]) == 0
    return root, cfg


def test_simulate_writes_configured_dims(simulated):
    root, _ = simulated
    data = root / "out" / "data"
    assert read_mft(data / "lf.mft").dims == (16, 3, 2, 8)
    assert read_mft(data / "hf.mft").dims == (36, 3, 2, 3)
    assert read_mft(data / "truth.mft").dims == (36, 3, 2, 2)
    assert read_design_csv(data / "x_lf.csv").shape == (8, 3)
    assert read_design_csv(data / "x_test.csv").shape == (2, 3)


def test_simulate_is_byte_identical(simulated, tmp_path):
    root, _ = simulated
    cfg = _config(tmp_path)
    assert main(["simulate", "--config", cfg]) == 0
    for f in sorted((root / "out" / "data").iterdir()):
        assert f.read_bytes() == (tmp_path / "out" / "data" / f.name).read_bytes(), f.name


def test_unknown_key_is_config_error(tmp_path):
    cfg = _config(tmp_path, mcmc={"n_chains": 2, "iterations": 10})
    assert main(["simulate", "--config", cfg]) == 2
    cfg = _config(tmp_path, name="b.json", extra={})
    assert main(["simulate", "--config", cfg]) == 2


def test_invalid_values_are_config_errors(tmp_path):
    cfg = _config(tmp_path, synth=dict(SYNTH, n_lf=2, n_hf=3))
    assert main(["simulate", "--config", cfg]) == 2
    cfg = _config(tmp_path, name="b.json", ranks={"lf": [1, 2, 3]})
    assert main(["simulate", "--config", cfg]) == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert main(["simulate", "--config", str(tmp_path / "bad.json")]) == 2
    assert main(["--threads", "0", "simulate", "--config", cfg]) == 2


def test_bad_magic_is_data_error(tmp_path):
    (tmp_path / "junk.mft").write_bytes(b"XXXX" + bytes(60))
    cfg = _config(tmp_path, data={"lf": "junk.mft"})
    assert main(["decompose", "--config", cfg]) == 3


def test_missing_input_is_config_error(tmp_path):
    cfg = _config(tmp_path)
    assert main(["decompose", "--config", cfg]) == 2


def test_predict_before_fit_is_data_error(simulated, tmp_path):
    root, _ = simulated
    data = root / "out" / "data"
    cfg = _config(tmp_path, data={"x_test": str(data / "x_test.csv")})
    assert main(["predict", "--mode", "sf", "--config", cfg]) == 3


def test_decompose_rank_one(tmp_path):
    rng = np.random.default_rng(0)
    vecs = [rng.normal(size=n) for n in (9, 3, 2, 5)]
    write_mft(tmp_path / "r1.mft", DenseTensor(np.einsum("i,j,k,l->ijkl", *vecs)))
    cfg = _config(tmp_path, data={"lf": "r1.mft"}, ranks={"variance_target": 0.99})
    assert main(["decompose", "--config", cfg]) == 0
    manifest = json.loads((tmp_path / "out" / "tucker_lf" / "manifest.json").read_text())
    assert manifest["ranks"] == [1, 1, 1, 1]
    assert manifest["explained_variance"] == pytest.approx(1.0, abs=1e-12)


def test_transform_round_trip(simulated, tmp_path):
    root, _ = simulated
    src = root / "out" / "data" / "lf.mft"
    z = read_mft(src).data
    lo, hi = z.min(), z.max()
    unit = DenseTensor(0.02 + 0.96 * (z - lo) / (hi - lo))
    write_mft(tmp_path / "u.mft", unit)
    cfg = _config(tmp_path)
    fwd, back = str(tmp_path / "f.mft"), str(tmp_path / "b.mft")
    assert main(["transform", "--config", cfg, "--input", str(tmp_path / "u.mft"), "--output", fwd]) == 0
    assert main(["transform", "--config", cfg, "--input", fwd, "--output", back, "--inverse"]) == 0
    np.testing.assert_allclose(read_mft(back).data, unit.data, atol=1e-12)


def test_fit_and_predict_at_training_input(simulated, tmp_path):
    root, _ = simulated
    data = root / "out" / "data"
    x_train = read_design_csv(data / "x_lf.csv")
    write_design_csv(tmp_path / "at.csv", x_train[2:3])
    # responses scaled up so the noise prior is negligible next to the data
    z = read_mft(data / "lf.mft").data * 100.0
    write_mft(tmp_path / "lf.mft", DenseTensor(z))
    cfg = _config(tmp_path, data={"lf": "lf.mft", "x_lf": str(data / "x_lf.csv")},
                  ranks={"lf": [16, 3, 2, 8]},
                  mcmc={"n_chains": 2, "n_iter": 600, "burn_in": 300, "seed": 2},
                  prediction={"n_draws": 200, "inputs": "at.csv"})
    assert main(["fit", "--mode", "sf", "--config", cfg]) == 0
    assert main(["predict", "--mode", "sf", "--config", cfg]) == 0
    mean = read_mft(tmp_path / "out" / "predictions_sf_lf" / "point_001_mean.mft").data
    truth = z[..., 2]
    assert np.linalg.norm(mean - truth) / np.linalg.norm(truth) < 0.01


def test_strict_rhat_exit_code(simulated, tmp_path):
    root, _ = simulated
    data = root / "out" / "data"
    stuck = {"n_chains": 2, "n_iter": 12, "burn_in": 2, "seed": 0, "adapt": False, "init_scale": 0.0}
    cfg = _config(tmp_path, data={"lf": str(data / "lf.mft"), "x_lf": str(data / "x_lf.csv")},
                  mcmc=stuck)
    assert main(["fit", "--mode", "sf", "--config", cfg]) == 0
    assert main(["fit", "--mode", "sf", "--strict-rhat", "--config", cfg]) == 5


def test_mf_pipeline_and_loocv_reproducible(simulated, tmp_path):
    root, _ = simulated
    data = root / "out" / "data"
    paths = {k: str(data / f) for k, f in (("lf", "lf.mft"), ("hf", "hf.mft"), ("x_lf", "x_lf.csv"),
                                            ("x_hf", "x_hf.csv"), ("lf_mesh", "lf_mesh.csv"),
                                            ("hf_mesh", "hf_mesh.csv"), ("x_test", "x_test.csv"))}
    cfg = _config(tmp_path, data=paths)
    assert main(["fit", "--mode", "mf", "--config", cfg]) == 0
    assert main(["predict", "--mode", "mf", "--config", cfg]) == 0
    pred = tmp_path / "out" / "predictions_mf"
    assert read_mft(pred / "point_002_upper.mft").dims == (36, 3, 2)
    first = []
    for run in range(2):
        assert main(["loocv", "--emulators", "lf,mf", "--config", cfg]) == 0
        first.append({f.name: f.read_bytes() for f in (tmp_path / "out" / "loocv").glob("*.csv")})
    assert first[0] and first[0] == first[1]
