import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from skild import tensorio
from skild.cli import main
from skild.config import PRESETS, load_config, load_preset, load_schedule, resolve_schedule, save_schedule
from skild.errors import ValidationError
from skild.ising import BETA_C, exact_enumeration
from skild.schedule import ScheduleSpec
from skild.spectral import frequency_grid, idct2
from skild.spectrum import PowerLawParams, eval_power_law

from conftest import CIFAR_PARAMS

EXPECTED_PRESETS = {
    "cifar-linear-best": ("linear", 137.7294, 1.57, 5.0, 3.0),
    "cifar-loglinear-best": ("log_linear", -3.75, -2.0, None, 31.2),
    "imnet256-4x": ("linear", 1132.9352, 550.8723, 9.0, 0.0),
    "imnet128-4x": ("linear", 564.2461, 275.4361, 9.0, 0.0),
    "imnet128-8x": ("linear", 564.2461, 102.6489, 5.0, 0.0),
    "ising-128": ("linear", 564.2461, 275.4361, 9.0, 0.0),
}


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("name", PRESETS)
def test_presets(name):
    spec = load_preset(name)
    assert (spec.family, spec.lambda_i, spec.lambda_f, spec.theta, spec.k_c) == EXPECTED_PRESETS[name]
    assert spec.N == 1000


def test_schedule_round_trip_bit_identical(tmp_path):
    spec = load_preset("cifar-linear-best")
    save_schedule(spec, tmp_path / "a.json")
    again = load_schedule(tmp_path / "a.json")
    assert again == spec
    save_schedule(again, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_config_errors_are_path_qualified(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"family": "linear", "lambda_i": 1, "lambda_f": 2, "theta": 1, "N": -5}))
    with pytest.raises(ValidationError, match=r"bad\.json: N"):
        load_config(bad)
    (tmp_path / "junk.json").write_text("{nope")
    with pytest.raises(ValidationError, match="invalid JSON"):
        load_config(tmp_path / "junk.json")
    (tmp_path / "p.json").write_text(json.dumps({"C": -1, "k0_sq": 1, "a": 1}))
    with pytest.raises(ValidationError, match=r"p\.json: C"):
        load_config(tmp_path / "p.json")
    nested = tmp_path / "n.json"
    nested.write_text(json.dumps({"schedule": load_preset("imnet128-4x").to_json(), "power_law": {"C": 1, "k0_sq": 1, "a": 1}}))
    cfg = load_config(nested)
    assert isinstance(cfg["schedule"], ScheduleSpec) and isinstance(cfg["power_law"], PowerLawParams)
    with pytest.raises(ValidationError):
        resolve_schedule("no-such-preset")


def test_version_and_usage(capsys):
    assert main(["--version"]) == 0
    assert "config schema 1" in capsys.readouterr().out
    assert main(["schedule", "inspect"]) == 1
    err = capsys.readouterr().err
    assert "--spec" in err and "usage" in err
    assert main(["frobnicate"]) == 1
    assert main(["sample", "--bogus"]) == 1


def test_entry_point_subprocess():
    out = subprocess.run([sys.executable, "-m", "skild.cli", "sr-start", "--spec", "imnet128-4x", "--target-res", "32", "--tau", "0.1"], capture_output=True, text=True)
    assert out.returncode == 0
    assert json.loads(out.stdout)["n0"] == 1000


def test_schedule_inspect_cifar(tmp_path):
    csv_path = tmp_path / "s.csv"
    assert main(["schedule", "inspect", "--spec", "cifar-linear-best", "--grid", "32x32", "--csv", str(csv_path)]) == 0
    rows = read_csv(csv_path)
    assert len(rows) == 1000
    last = rows[-1]
    assert last["n"] == "1000" and float(last["R_eff"]) < 1
    assert {"n", "t", "lambda", "R_eff", "snr_p0", "snr_p50", "snr_p100"} <= set(last)
    assert main(["schedule", "inspect", "--spec", "cifar-linear-best", "--grid", "32by32", "--csv", str(csv_path)]) == 1


def test_sr_start(capsys):
    assert main(["sr-start", "--spec", "imnet128-8x", "--target-res", "16", "--tau", "0.1"]) == 0
    assert json.loads(capsys.readouterr().out)["n0"] == 1000
    assert main(["sr-start", "--spec", "imnet128-4x", "--target-res", "10", "--tau", "0.1"]) == 1
    assert "range" in capsys.readouterr().err


def test_spectrum_estimate_and_fit(tmp_path):
    g = frequency_grid(16, 16)
    s0 = eval_power_law(CIFAR_PARAMS, g).values
    rng = np.random.default_rng(0)
    names = []
    for i in range(400):
        name = f"x{i}.skft"
        tensorio.save(tmp_path / name, idct2(np.sqrt(s0) * rng.standard_normal(g.shape)))
        names.append(name)
    (tmp_path / "data.json").write_text(json.dumps({"files": names, "shape": [16, 16]}))
    spec_path = tmp_path / "spectrum.skft"
    assert main(["spectrum", "estimate", "--input", str(tmp_path / "data.json"), "--output", str(spec_path)]) == 0
    assert tensorio.load(spec_path).shape == (16, 16)
    assert json.loads((tmp_path / "spectrum.skft.manifest.json").read_text())["sample_count"] == 400
    params = tmp_path / "params.json"
    assert main(["spectrum", "fit", "--spectrum", str(spec_path), "--out", str(params)]) == 0
    p = json.loads(params.read_text())
    assert {"C", "k0_sq", "a", "stderr", "modes_fitted"} <= set(p)
    assert abs(p["a"] - 1.0513) < 0.05
    (tmp_path / "missing.json").write_text(json.dumps({"files": ["nope.skft"]}))
    assert main(["spectrum", "estimate", "--input", str(tmp_path / "missing.json"), "--output", str(spec_path)]) == 1
    tensorio.save(tmp_path / "flat.skft", np.ones((8, 8)))
    assert main(["spectrum", "fit", "--spectrum", str(tmp_path / "flat.skft"), "--out", str(params)]) == 1


@pytest.mark.parametrize("sampler", ["ancestral", "em", "ode", "pc"])
def test_sample_cheat_and_gaussian(tmp_path, sampler):
    rng = np.random.default_rng(1)
    x0 = rng.uniform(-1, 1, (8, 8))
    tensorio.save(tmp_path / "x0.skft", x0)
    spec = tmp_path / "spec.json"
    save_schedule(ScheduleSpec("log_linear", -3.5, -1.5, k_c=3.0, N=200), spec)
    (tmp_path / "p.json").write_text(json.dumps(CIFAR_PARAMS.to_json()))
    out = tmp_path / "out"
    argv = ["sample", "--spec", str(spec), "--s0", str(tmp_path / "p.json"), "--denoiser", f"cheat:{tmp_path / 'x0.skft'}",
            "--start-n", "150", "--count", "2", "--seed", "7", "--out", str(out), "--sampler", sampler, "--steps", "100"]
    assert main(argv) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["artifacts"] == ["sample_00000.skft", "sample_00001.skft"]
    assert man["seed"] == 7 and man["schedule"]["family"] == "log_linear"
    assert sorted(p.name for p in out.iterdir()) == ["manifest.json", "sample_00000.skft", "sample_00001.skft"]
    got = tensorio.load(out / "sample_00000.skft")
    if sampler == "ancestral":
        np.testing.assert_allclose(got, x0, atol=1e-8)
    first = (out / "sample_00001.skft").read_bytes()
    assert main(argv) == 0
    assert (out / "sample_00001.skft").read_bytes() == first
    g_out = tmp_path / "g"
    assert main(["sample", "--spec", str(spec), "--s0", str(tmp_path / "p.json"), "--denoiser", "gaussian", "--grid", "8x8",
                 "--count", "1", "--seed", "3", "--out", str(g_out), "--sampler", sampler, "--steps", "50"]) == 0
    assert np.all(np.isfinite(tensorio.load(g_out / "sample_00000.skft")))


def test_sample_errors(tmp_path):
    spec = "cifar-linear-best"
    (tmp_path / "p.json").write_text(json.dumps(CIFAR_PARAMS.to_json()))
    base = ["sample", "--spec", spec, "--s0", str(tmp_path / "p.json"), "--seed", "1", "--out", str(tmp_path / "o")]
    assert main(base + ["--denoiser", "neural"]) == 1
    assert main(base + ["--denoiser", "gaussian"]) == 1  # no grid for a params file
    assert main(base + ["--denoiser", "gaussian", "--grid", "8x8", "--start-n", "0"]) == 1
    assert main(base[:-2]) == 1  # missing --out


def test_numerical_failure_exit_code(tmp_path, monkeypatch, capsys):
    import skild.spectrum
    from skild.errors import NumericalError

    def boom(*args, **kwargs):
        raise NumericalError("did not converge")

    monkeypatch.setattr(skild.spectrum, "fit_power_law", boom)
    tensorio.save(tmp_path / "s.skft", eval_power_law(CIFAR_PARAMS, frequency_grid(8, 8)).values)
    assert main(["spectrum", "fit", "--spectrum", str(tmp_path / "s.skft"), "--out", str(tmp_path / "p.json")]) == 2
    assert "did not converge" in capsys.readouterr().err


def test_ising_gen_enum_kappa4(tmp_path):
    out = tmp_path / "ising"
    assert main(["ising", "gen", "--L", "8", "--chains", "2", "--burn-in", "20", "--samples", "30", "--holdout", "4",
                 "--seed", "5", "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert len(man["files"]) == 30 and len(man["holdout_files"]) == 4
    assert len(man["artifacts"]) == 34
    assert man["generator"]["beta"] == BETA_C
    files = sorted(p.name for p in out.glob("*.skft"))
    assert files == sorted(man["artifacts"])
    s = tensorio.load(out / man["files"][0])
    assert s.shape == (8, 8) and set(np.unique(s)) <= {-1.0, 1.0}

    report = tmp_path / "k.csv"
    assert main(["kappa4", "--inputs", str(out), "--sides", "1,2,4", "--bootstrap", "100", "--seed", "2", "--csv", str(report)]) == 0
    rows = read_csv(report)
    assert [r["side"] for r in rows] == ["1", "2", "4"]
    assert all(float(r["ci_low"]) <= float(r["kappa4"]) <= float(r["ci_high"]) for r in rows)
    assert main(["kappa4", "--inputs", str(out), "--sides", "8", "--seed", "2", "--csv", str(report)]) == 1

    exact = tmp_path / "exact.json"
    assert main(["ising", "enum", "--L", "4", "--beta", "crit", "--sides", "1,2", "--out", str(exact)]) == 0
    data = json.loads(exact.read_text())
    ref = exact_enumeration(4, BETA_C, (1, 2))
    assert data["corners"]["1"]["kappa4"] == pytest.approx(ref["corners"][1]["kappa4"])
    assert main(["ising", "enum", "--L", "5", "--out", str(exact)]) == 1
    assert main(["ising", "enum", "--beta", "warm", "--out", str(exact)]) == 1


def test_validate_bicubic(tmp_path):
    g = frequency_grid(32, 32)
    s0 = eval_power_law(CIFAR_PARAMS, g).values
    x = idct2(np.sqrt(s0) * np.random.default_rng(3).standard_normal(g.shape))
    tensorio.save(tmp_path / "x.skft", x / np.abs(x).max())
    out = tmp_path / "b.csv"
    assert main(["validate-bicubic", "--x0", str(tmp_path / "x.skft"), "--spec", "cifar-linear-best", "--factor", "4", "--csv", str(out)]) == 0
    rows = read_csv(out)
    assert [float(r["threshold"]) for r in rows] == [1, 0.5, 0.1, 0.05, 0.01, 0.005]
    assert all(np.isfinite(float(r["psnr"])) for r in rows)
    ns = [int(r["n"]) for r in rows]
    assert ns == sorted(ns)
    assert main(["validate-bicubic", "--x0", str(tmp_path / "x.skft"), "--spec", "cifar-linear-best", "--factor", "5", "--csv", str(out)]) == 1
