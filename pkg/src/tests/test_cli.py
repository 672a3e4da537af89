# tests/test_cli.py

import os
import shutil

import numpy as np
import pandas as pd
import pytest

from run_pdmd import EXIT_IO, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, exit_code, main, parse_config
from util.config import parse_config_text, parse_int_list
from util.errors import (
    CorruptionError,
    InvalidInputError,
    RankDeficiencyError,
    ResourceError,
    SnapshotIOError,
    TimerResolutionWarning,
)
from util.snapshot_io import read_manifest, read_series


@pytest.fixture(scope="module")
def diffusion_set(tmp_path_factory):
    """A generated diffusion set, b in {0, 0.5, 1, 1.5, 2}, on an 8 x 4 grid."""
    data = str(tmp_path_factory.mktemp("diffusion"))
    code = main([
        "generate", "--problem", "diffusion", "--param", "b=0:2:5",
        "--dims", "8,4", "--dt", "0.05", "--t-end", "0.25",
        "--out", data, "--threads", "1",
    ])
    assert code == EXIT_OK
    return data


@pytest.fixture(scope="module")
def radiative_set(tmp_path_factory):
    """A generated radiative set, Z in {1, 3, 5}, on a 4^3 grid; Z = 3 is held out."""
    data = str(tmp_path_factory.mktemp("radiative"))
    code = main([
        "generate", "--problem", "radiative", "--param", "Z=1:5:3",
        "--dims", "4,4,4", "--dt", "0.001", "--t-end", "0.003",
        "--out", data, "--threads", "1",
    ])
    assert code == EXIT_OK
    return data


def test_exit_codes():
    """
    Tests that each error family maps to its documented exit code.
    """
    assert exit_code(InvalidInputError("x")) == EXIT_USAGE
    assert exit_code(RankDeficiencyError("x", index=2)) == EXIT_NUMERICAL
    assert exit_code(ResourceError("x", cap=1)) == EXIT_NUMERICAL
    assert exit_code(SnapshotIOError("x", "p")) == EXIT_IO
    assert exit_code(CorruptionError("x")) == EXIT_IO


def test_parse_int_list():
    """
    Tests comma, range and mixed integer list syntax.
    """
    assert parse_int_list("2,4, 6") == [2, 4, 6]
    assert parse_int_list("2:10:2") == [2, 4, 6, 8, 10]
    assert parse_int_list("1:3 8") == [1, 2, 3, 8]


def test_config_file_is_overridden_by_flags(tmp_path):
    """
    Tests that command-line flags win over the values of a config file.
    """
    path = tmp_path / "run.cfg"
    path.write_text("# evaluation defaults\nmethods = repi\nrank = 2\nfield = T\nno-solve = yes\n")
    cfg = parse_config(["train", "--config", str(path), "--method", "rkoi", "--out", str(tmp_path)])
    assert cfg.methods == ["rkoi"]
    assert cfg.ranks == [2]
    assert cfg.state_field == "T"
    assert cfg.no_solve is True
    assert cfg.out == str(tmp_path)


def test_config_rejects_unknown_keys():
    """
    Tests that unknown keys and unparsable values in a config file are rejected.
    """
    with pytest.raises(InvalidInputError):
        parse_config_text("colour = blue\n")
    with pytest.raises(InvalidInputError):
        parse_config_text("rank = two\n")


def test_unknown_config_key_exits_with_usage_code(tmp_path):
    """
    Tests the exit code of a run whose config file holds an unknown key.
    """
    path = tmp_path / "bad.cfg"
    path.write_text("colour = blue\n")
    assert main(["train", "--config", str(path)]) == EXIT_USAGE


def test_bad_flag_exits_with_usage_code():
    with pytest.raises(SystemExit) as info:
        main(["train", "--rank", "two"])
    assert info.value.code == 2


def test_generate_writes_manifest_and_series(diffusion_set):
    """
    Tests that generate writes the manifest and one series file per parameter.
    """
    assert os.path.exists(os.path.join(diffusion_set, "manifest.txt"))
    series = read_series(os.path.join(diffusion_set, "series", "diffusion_0001.pdmd"))
    assert series.params.tolist() == [0.5]
    assert series.field_names == ["T"]


def test_train_is_reproducible(diffusion_set, tmp_path):
    """
    Tests that training twice on the same data writes byte-identical model files.
    """
    paths = [str(tmp_path / name) for name in ("a.npz", "b.npz")]
    for path in paths:
        assert main(["train", "--manifest", diffusion_set, "--method", "rkoi", "--rank", "2", "--model", path]) == EXIT_OK
    with open(paths[0], "rb") as f, open(paths[1], "rb") as g:
        assert f.read() == g.read()


def test_train_reports_unsupported_rank(diffusion_set, tmp_path, capsys):
    """
    Tests that a rank beyond the data's numerical rank fails with the numerical exit code.
    """
    code = main(["train", "--manifest", diffusion_set, "--method", "repi", "--rank", "5", "--out", str(tmp_path)])
    assert code == EXIT_NUMERICAL
    assert "Error" in capsys.readouterr().err


def test_predict(diffusion_set, tmp_path):
    """
    Tests prediction from a saved model, including bad theta and a missing model file.
    """
    model = str(tmp_path / "model.npz")
    assert main(["train", "--manifest", diffusion_set, "--method", "stacked", "--rank", "3", "--model", model]) == EXIT_OK
    assert main(["predict", "--model", model, "--theta", "0.75", "--out", str(tmp_path)]) == EXIT_OK
    prediction = read_series(str(tmp_path / "prediction_stacked_b0.75.pdmd"))
    assert prediction.params.tolist() == [0.75]
    assert prediction.num_snapshots == 5

    assert main(["predict", "--model", model, "--theta", "0.5,1.0", "--out", str(tmp_path)]) == EXIT_USAGE
    assert main(["predict", "--model", str(tmp_path / "absent.npz"), "--theta", "1.0"]) == EXIT_IO


def test_evaluate_writes_tables(diffusion_set, tmp_path):
    """
    Tests the summary, rank table and per-sample CSVs written by evaluate.
    """
    out = str(tmp_path)
    code = main([
        "evaluate", "--manifest", diffusion_set, "--methods", "rkoi,repi", "--ranks", "1:2",
        "--out", out, "--threads", "1",
    ])
    assert code == EXIT_OK
    summary = pd.read_csv(os.path.join(out, "evaluate", "summary.csv"))
    assert list(summary.columns) == ["method", "rank", "field", "samples", "E_bar_mean"]
    assert len(summary) == 4
    assert (summary["E_bar_mean"] >= 0).all()

    table = pd.read_csv(os.path.join(out, "evaluate", "rank_table.csv"), index_col="method")
    assert sorted(table.index) == ["repi", "rkoi"]
    assert os.path.exists(os.path.join(out, "evaluate", "errors_rkoi_r2.csv"))
    assert os.path.exists(os.path.join(out, "evaluate", "ensemble_repi_r1.csv"))


def test_evaluate_solves_or_reports_missing_references(diffusion_set, tmp_path):
    """
    Tests that a missing reference is solved on demand, or reported under --no-solve.
    """
    data = str(tmp_path / "data")
    shutil.copytree(diffusion_set, data)
    os.remove(os.path.join(data, "series", "diffusion_0001.pdmd"))
    args = ["evaluate", "--manifest", data, "--methods", "rkoi", "--ranks", "2", "--out", str(tmp_path), "--threads", "1"]

    assert main(args + ["--no-solve"]) == EXIT_IO
    assert main(args) == EXIT_OK
    assert os.path.exists(os.path.join(data, "series", "diffusion_0001.pdmd"))


def test_bench_writes_timings(diffusion_set, tmp_path):
    """
    Tests the bench CSV over a rank sweep.
    """
    out = str(tmp_path)
    with pytest.warns(TimerResolutionWarning):
        code = main([
            "bench", "--manifest", diffusion_set, "--methods", "rkoi", "--ranks", "1,2",
            "--repeats", "1", "--out", out,
        ])
    assert code == EXIT_OK
    frame = pd.read_csv(os.path.join(out, "bench.csv"))
    assert list(frame.columns) == ["method", "rank", "N_S", "seconds", "svd_calls"]
    assert frame["rank"].tolist() == [1, 2]
    assert frame["svd_calls"].tolist() == [2, 2]
    assert (frame["N_S"] == 3).all()


# --- Generation splits ---

def test_generate_odd_even_split_and_start_time(diffusion_set):
    """The diffusion run drops its zero initial state, so the set starts one step in."""
    manifest = read_manifest(diffusion_set)
    assert [e.params[0] for e in manifest.entries_for("train")] == [0.0, 1.0, 2.0]
    assert [e.params[0] for e in manifest.entries_for("test")] == [0.5, 1.5]
    assert manifest.t0 == pytest.approx(0.05)
    with open(os.path.join(diffusion_set, "manifest.txt")) as f:
        assert "t0 0.05\n" in f.read()


def test_generate_random_split(tmp_path):
    """
    Tests that random20 holds out exactly 20 of 25 points and solves all of them.
    """
    data = str(tmp_path / "random")
    code = main([
        "generate", "--problem", "diffusion", "--param", "b=0:2:25", "--split", "random20",
        "--dims", "8,4", "--dt", "0.05", "--t-end", "0.15", "--out", data, "--threads", "1",
    ])
    assert code == EXIT_OK
    manifest = read_manifest(data)
    assert len(manifest.entries_for("test")) == 20
    assert len(manifest.entries_for("train")) == 5
    assert manifest.missing("train") == [] and manifest.missing("test") == []


# --- Prediction window ---

def test_predict_window_starts_at_the_first_snapshot(diffusion_set, tmp_path):
    """
    Tests that --t-end counts states from the first training snapshot and that an earlier end is a usage error.
    """
    model = str(tmp_path / "model.npz")
    assert main(["train", "--manifest", diffusion_set, "--method", "rkoi", "--rank", "2", "--model", model]) == EXIT_OK
    assert main(["predict", "--model", model, "--theta", "0.5", "--t-end", "0.4", "--out", str(tmp_path)]) == EXIT_OK
    assert read_series(str(tmp_path / "prediction_rkoi_b0.5.pdmd")).num_snapshots == 8
    assert main(["predict", "--model", model, "--theta", "0.5", "--t-end", "0.0", "--out", str(tmp_path)]) == EXIT_USAGE


# --- Evaluation tables ---

def test_evaluate_summary_matches_per_parameter_rows(diffusion_set, tmp_path):
    """
    Tests that the summary mean and the ensemble curve agree with the per-sample rows.
    """
    out = str(tmp_path)
    assert main(["evaluate", "--manifest", diffusion_set, "--methods", "rkoi", "--ranks", "2", "--out", out, "--threads", "1"]) == EXIT_OK
    summary = pd.read_csv(os.path.join(out, "evaluate", "summary.csv"))
    rows = pd.read_csv(os.path.join(out, "evaluate", "errors_rkoi_r2.csv"))
    per_param = rows.groupby("b")["E"].mean()
    assert summary.loc[0, "samples"] == len(per_param)
    assert summary.loc[0, "E_bar_mean"] == pytest.approx(per_param.mean(), rel=1e-12)

    ensemble = pd.read_csv(os.path.join(out, "evaluate", "ensemble_rkoi_r2.csv"))
    expected = rows.groupby("time")["E"].mean().to_numpy()
    assert ensemble["E_mean"].to_numpy() == pytest.approx(expected, rel=1e-12)


def test_evaluate_results_do_not_depend_on_worker_count(diffusion_set, tmp_path):
    """
    Tests that evaluating on a worker pool gives the same tables as the serial run.
    """
    tables = []
    for threads in ("1", "2"):
        out = str(tmp_path / f"threads{threads}")
        args = ["evaluate", "--manifest", diffusion_set, "--methods", "rkoi,stacked", "--ranks", "2", "--out", out]
        assert main(args + ["--threads", threads]) == EXIT_OK
        tables.append(pd.read_csv(os.path.join(out, "evaluate", "summary.csv")))
        tables.append(pd.read_csv(os.path.join(out, "evaluate", "errors_stacked_r2.csv")))
    pd.testing.assert_frame_equal(tables[0], tables[2])
    pd.testing.assert_frame_equal(tables[1], tables[3])


@pytest.mark.parametrize("field", ["T", "E"])
def test_evaluate_single_field(radiative_set, tmp_path, field):
    """
    Tests that --field trains and evaluates on one field of the coupled state.
    """
    out = str(tmp_path)
    code = main([
        "evaluate", "--manifest", radiative_set, "--methods", "rkoi", "--ranks", "2",
        "--field", field, "--out", out, "--threads", "1",
    ])
    assert code == EXIT_OK
    summary = pd.read_csv(os.path.join(out, "evaluate", "summary.csv"))
    assert summary["field"].tolist() == [field]
    assert summary.loc[0, "samples"] == 1
    assert np.isfinite(summary.loc[0, "E_bar_mean"])


def test_evaluate_coupled_state_reports_each_field(radiative_set, tmp_path):
    """
    Tests that the coupled state is reported as a whole and per field.
    """
    out = str(tmp_path)
    assert main(["evaluate", "--manifest", radiative_set, "--methods", "rkoi", "--ranks", "2", "--out", out, "--threads", "1"]) == EXIT_OK
    summary = pd.read_csv(os.path.join(out, "evaluate", "summary.csv"))
    assert summary["field"].tolist() == ["both", "T", "E"]
    assert os.path.exists(os.path.join(out, "evaluate", "errors_rkoi_r2_E.csv"))


# --- Benchmarks ---

def test_bench_sweeps_training_set_size(diffusion_set, tmp_path):
    """
    Tests the N_S sweep of bench and its SVD counts per method.
    """
    out = str(tmp_path)
    with pytest.warns(TimerResolutionWarning):
        code = main([
            "bench", "--manifest", diffusion_set, "--methods", "rkoi,stacked", "--ranks", "1",
            "--ns", "2,3", "--repeats", "1", "--out", out,
        ])
    assert code == EXIT_OK
    frame = pd.read_csv(os.path.join(out, "bench.csv"))
    assert frame["method"].tolist() == ["rkoi", "rkoi", "stacked", "stacked"]
    assert frame["N_S"].tolist() == [3, 2, 3, 2]
    assert frame["svd_calls"].tolist() == [2, 2, 1, 1]
