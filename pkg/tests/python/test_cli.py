# Copyright © 2026 kobt contributors
# SPDX-License-Identifier: Apache 2.0

from conftest import KOBT_INSTALLED
from kobt.cli import EXIT_INVALID, EXIT_OK, EXIT_RUNTIME, run_command
from kobt.core_data import DataMatrix, Dataset, write_csv
import json
import numpy as np
import os
import pandas as pd
import pytest
import subprocess

BOOST = {"eta": 0.3, "min_child_weight": 1.0, "max_trees": 20, "early_stopping_rounds": 3}


def run(command, path="."):
    print(command)
    return subprocess.check_output(command, cwd=path, shell=True)


@pytest.fixture
def data_csv(tmp_path):
    gen = np.random.default_rng(0)
    x = gen.standard_normal((60, 6))
    y = 2.0 * x[:, 0] - x[:, 1] + 0.3 * gen.standard_normal(60)
    path = str(tmp_path / "data.csv")
    write_csv(Dataset(DataMatrix(x, [f"g{j}" for j in range(6)]), y), path)
    return path


def write_config(tmp_path, payload, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def select_config(tmp_path, data_csv, **filter_fields):
    fields = {"q": 2, "num_trees": 10, "boost": BOOST, **filter_fields}
    return write_config(tmp_path, {"input": {"path": data_csv, "response_column": "y"}, "filter": fields})


def result_files(directory):
    return {
        name: open(os.path.join(directory, name), "rb").read()
        for name in sorted(os.listdir(directory))
        if name != "manifest.json"
    }


def test_select_is_reproducible(tmp_path, data_csv):
    config = select_config(tmp_path, data_csv)
    first, second = str(tmp_path / "a"), str(tmp_path / "b")
    assert run_command(["select", "--config", config, "--seed", "42", "--out", first]) == EXIT_OK
    assert run_command(["select", "--config", config, "--seed", "42", "--out", second]) == EXIT_OK
    assert result_files(first) == result_files(second)
    assert set(result_files(first)) == {"features.tsv", "selected.tsv", "selection.json"}

    manifest = json.loads(open(os.path.join(first, "manifest.json"), encoding="utf-8").read())
    assert manifest["master_seed"] == 42
    assert manifest["command"] == "select"
    assert manifest["wall_time_seconds"] >= 0
    assert "numpy" in manifest["versions"]
    selection = json.loads(open(os.path.join(first, "selection.json"), encoding="utf-8").read())
    assert selection["provenance"]["config_hash"] == json.loads(
        open(os.path.join(second, "selection.json"), encoding="utf-8").read()
    )["provenance"]["config_hash"]


def test_select_overrides(tmp_path, data_csv):
    config = select_config(tmp_path, data_csv, knockoff={"kind": "pc_permute", "num_pcs": 2})
    out = str(tmp_path / "out")
    argv = ["select", "-c", config, "-o", out, "--q", "1", "--delta", "0.3", "--statistic", "gain",
            "--knockoff-kind", "shrunk_gaussian"]
    assert run_command(argv) == EXIT_OK
    record = json.loads(open(os.path.join(out, "selection.json"), encoding="utf-8").read())
    assert record["delta"] == 0.3
    assert record["replicates_used"] == 1
    assert record["config"]["filter"]["statistic"] == "gain"
    assert record["config"]["filter"]["knockoff"] == {"kind": "shrunk_gaussian", "num_pcs": None, "sparse_threshold": None}


def test_invalid_delta_names_field(tmp_path, data_csv, caplog):
    config = select_config(tmp_path, data_csv, delta=1.5)
    assert run_command(["select", "--config", config, "--out", str(tmp_path / "out")]) == EXIT_INVALID
    assert "delta" in caplog.text
    assert not os.path.exists(tmp_path / "out")


@pytest.mark.parametrize(
    "argv",
    [
        ["select", "--config", "cfg.json", "--out", "out", "--bogus"],
        ["select", "--out", "out"],
        ["report", "--out", "out"],
        ["select", "--config", "cfg.json", "--out", "out", "--seed", "-4"],
    ],
)
def test_bad_arguments(argv):
    assert run_command(argv) == EXIT_INVALID


def test_missing_files_are_invalid(tmp_path, caplog):
    out = str(tmp_path / "out")
    assert run_command(["select", "--config", str(tmp_path / "none.json"), "--out", out]) == EXIT_INVALID
    config = write_config(tmp_path, {"input": {"path": str(tmp_path / "none.csv")}})
    assert run_command(["select", "--config", config, "--out", out]) == EXIT_INVALID
    assert "input.path" in caplog.text


def test_unknown_config_field_is_invalid(tmp_path, data_csv):
    config = select_config(tmp_path, data_csv, replicates=3)
    assert run_command(["select", "--config", config, "--out", str(tmp_path / "out")]) == EXIT_INVALID


def test_bad_csv_is_runtime_error(tmp_path, caplog):
    csv = tmp_path / "bad.csv"
    csv.write_text("a,b,y\n1,abc,3\n2,3,4\n", encoding="utf-8")
    config = write_config(tmp_path, {"input": {"path": str(csv)}})
    assert run_command(["select", "--config", config, "--out", str(tmp_path / "out")]) == EXIT_RUNTIME
    assert "column 'b'" in caplog.text


def test_undecodable_csv_is_runtime_error(tmp_path, caplog):
    csv = tmp_path / "latin.csv"
    csv.write_bytes(b"a,b,y\n1,2,3\n4,\xff5,6\n")
    config = write_config(tmp_path, {"input": {"path": str(csv)}})
    assert run_command(["select", "--config", config, "--out", str(tmp_path / "out")]) == EXIT_RUNTIME
    assert "UTF-8" in caplog.text


def test_knockoff_command(tmp_path, data_csv):
    config = write_config(tmp_path, {"input": {"path": data_csv, "response_column": "y"},
                                     "knockoff": {"kind": "pc_permute", "num_pcs": 2}})
    out = str(tmp_path / "out")
    assert run_command(["knockoff", "--config", config, "--out", out, "--seed", "5"]) == EXIT_OK
    frame = pd.read_csv(os.path.join(out, "knockoffs.csv"))
    assert frame.shape == (60, 6)
    assert list(frame.columns) == [f"g{j}_knockoff" for j in range(6)]
    sidecar = json.loads(open(os.path.join(out, "knockoffs.json"), encoding="utf-8").read())
    assert sidecar["label"] == "pc_permute(K=2)"
    assert sidecar["stream"]["master_seed"] == 5


def test_tune_command(tmp_path, data_csv):
    config = write_config(tmp_path, {"input": {"path": data_csv, "response_column": "y"}, "boost": BOOST,
                                     "n_init": 2, "n_iter": 1, "cv_folds": 2})
    out = str(tmp_path / "out")
    assert run_command(["tune", "--config", config, "--out", out]) == EXIT_OK
    tuned = json.loads(open(os.path.join(out, "tuned.json"), encoding="utf-8").read())
    assert set(tuned) == {"gamma", "lambda", "alpha", "cvte", "best_num_trees"}
    history = json.loads(open(os.path.join(out, "history.json"), encoding="utf-8").read())
    assert len(history) == 3


def test_simulate_command(tmp_path):
    spec = write_config(tmp_path, {"protocol": "cv_error", "design": {"n": 40, "p": 10, "pi": 0.2},
                                   "boost": BOOST, "cv_folds": 2, "reps": 20}, name="table2.json")
    out = str(tmp_path / "out")
    assert run_command(["simulate", "--spec", spec, "--reps", "3", "--out", out]) == EXIT_OK
    table = pd.read_csv(os.path.join(out, "table.tsv"), sep="\t")
    assert list(table.columns) == ["cell", "metric", "mean", "se", "reps"]
    assert list(table["reps"]) == [3]
    assert table["se"][0] >= 0


@pytest.mark.skipif(not KOBT_INSTALLED, reason="worker processes need the installed package")
def test_thread_count_does_not_change_results(tmp_path, data_csv):
    config = select_config(tmp_path, data_csv, q=3)
    single, multi = str(tmp_path / "one"), str(tmp_path / "two")
    assert run_command(["select", "--config", config, "--out", single, "--threads", "1"]) == EXIT_OK
    assert run_command(["select", "--config", config, "--out", multi, "--threads", "2"]) == EXIT_OK
    assert result_files(single) == result_files(multi)


@pytest.mark.skipif(not KOBT_INSTALLED, reason="needs the kobt console script")
def test_console_script(tmp_path, data_csv):
    config = select_config(tmp_path, data_csv)
    out = tmp_path / "out"
    run(f"kobt select --config {config} --out {out} --seed 1")
    assert (out / "manifest.json").exists()
