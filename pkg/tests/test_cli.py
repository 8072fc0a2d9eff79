import json

import pytest

from condcov import __version__
from condcov.cli import main


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--scenario", "A", "--days", "40", "--seed", "3", "--output-dir", str(out)]) == 0
    return out / "dataset.csv"


def manifest(d):
    return json.loads((d / "manifest.json").read_text())


def band_args(dataset, out, *extra):
    return [
        "band", "--input", str(dataset), "--time-format", "epoch", "--outputs", "y1,y2",
        "--bandwidth", "1.5", "--replicates", "20", "--grid", "25", "--output-dir", str(out), *extra,
    ]


def test_version(capsys):
    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_coverage_smoke(tmp_path):
    argv = ["coverage", "--scenario", "A", "--datasets", "1", "--replicates", "2", "--days", "30", "--grid", "10", "--seed", "7"]
    assert main(argv + ["--output-dir", str(tmp_path)]) == 0
    names = {p.name for p in tmp_path.iterdir()}
    assert names == {"coverage.csv", "coverage_summary.json", "manifest.json"}
    m = manifest(tmp_path)
    assert m["status"] == "ok" and m["config"]["seed"] == 7 and m["software_version"] == __version__


def test_simulated_dataset_layout(dataset):
    header = dataset.read_text().splitlines()[0]
    assert header == "time,temperature,y1,y2"
    assert len(dataset.read_text().splitlines()) == 1 + 40 * 24


def test_bad_bandwidth_names_flag(tmp_path, dataset, capsys):
    rc = main(["estimate", "--input", str(dataset), "--outputs", "y1,y2", "--bandwidth", "-1", "--output-dir", str(tmp_path)])
    assert rc == 1
    assert "--bandwidth" in capsys.readouterr().err
    assert {p.name for p in tmp_path.iterdir()} == {"manifest.json", "error.log"}
    assert manifest(tmp_path)["status"] == "failed"


def test_parse_error_exits_1(capsys):
    assert main(["estimate", "--kernel", "box"]) == 1
    assert "--kernel" in capsys.readouterr().err
    assert main([]) == 1


def test_missing_input_flag(tmp_path):
    assert main(["band", "--outputs", "y1", "--bandwidth", "1", "--output-dir", str(tmp_path)]) == 1
    assert "--input" in (tmp_path / "error.log").read_text()


def test_missing_column_is_validation_error(tmp_path, dataset):
    assert main(["estimate", "--input", str(dataset), "--time-format", "epoch", "--outputs", "y1,f9", "--bandwidth", "1", "--output-dir", str(tmp_path)]) == 1
    assert "f9" in (tmp_path / "error.log").read_text()


def test_estimation_failure_exits_2_without_partial_outputs(tmp_path, dataset):
    # compact kernel, tiny bandwidth, grid stretched past the data: empty support
    rc = main(
        ["estimate", "--input", str(dataset), "--time-format", "epoch", "--outputs", "y1,y2", "--kernel", "epanechnikov", "--mean-method", "nadaraya-watson",
         "--bandwidth", "0.01", "--grid-min", "-50", "--grid-max", "-40", "--output-dir", str(tmp_path)]
    )
    assert rc == 2
    assert {p.name for p in tmp_path.iterdir()} == {"manifest.json", "error.log"}
    assert "DegenerateWeights" in (tmp_path / "error.log").read_text()


def test_estimate_outputs(tmp_path, dataset):
    rc = main(["estimate", "--input", str(dataset), "--time-format", "epoch", "--outputs", "y1,y2", "--bandwidth", "1.5",
               "--correlation", "--plot", "--output-dir", str(tmp_path)])
    assert rc == 0
    names = {p.name for p in tmp_path.iterdir()}
    assert {"covariance.csv", "covariance.json", "correlation.csv", "correlation.json", "correlation.svg"} <= names
    assert len((tmp_path / "covariance.csv").read_text().splitlines()) == 1 + 100 * 3


def test_band_outputs_and_replay(tmp_path, dataset):
    a = tmp_path / "a"
    assert main(band_args(dataset, a, "--correlation", "--plot", "--workers", "1")) == 0
    m = manifest(a)
    assert m["run"]["blocks"] == 40 and m["config"]["mode"] == "disjoint" and m["config"]["span"] == "day"
    b = tmp_path / "b"
    assert main(["replay", str(a / "manifest.json"), "--output-dir", str(b), "--workers", "3"]) == 0
    for name in m["outputs"]:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_env_output_dir(tmp_path, dataset, monkeypatch):
    monkeypatch.setenv("CONDCOV_OUTPUT_DIR", str(tmp_path / "env"))
    argv = band_args(dataset, "x")[:-2]
    assert main(argv) == 0
    assert (tmp_path / "env" / "covariance_band.csv").exists()


def test_config_file_and_flag_precedence(tmp_path, dataset):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        f"# recipe\ninput={dataset}\ntime-format=epoch\noutputs=y1,y2\nbandwidth=2.0\nreplicates=10\nalpha=0.1\n"
    )
    out = tmp_path / "o"
    assert main(["band", "--config", str(cfg), "--alpha", "0.01", "--output-dir", str(out)]) == 0
    c = manifest(out)["config"]
    assert c["bandwidth"] == 2.0 and c["replicates"] == 10 and c["alpha"] == 0.01


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("bandwith=2\n")
    assert main(["estimate", "--config", str(cfg)]) == 1


def test_cv_bandwidth_recorded(tmp_path, dataset):
    rc = main(["estimate", "--input", str(dataset), "--time-format", "epoch", "--outputs", "y1,y2",
               "--cv-candidates", "1.0,3.0", "--output-dir", str(tmp_path)])
    assert rc == 0
    run = manifest(tmp_path)["run"]
    assert run["bandwidth"] in (1.0, 3.0) and set(run["cv_scores"]) == {"1.0", "3.0"}


def test_failed_rerun_clears_nothing_but_reports(tmp_path, dataset):
    out = tmp_path / "o"
    assert main(band_args(dataset, out)) == 0
    assert not (out / "error.log").exists()
