import json

import numpy as np
import pytest

from reidrisk import WorldParams, load_dataset, load_model, load_runs_csv
from reidrisk.cli import main


@pytest.fixture(scope="module")
def world_json(tmp_path_factory):
    path = tmp_path_factory.mktemp("world") / "world.json"
    params = WorldParams(
        dim=6, n_speakers=40, recordings_per_speaker=3, phi_b=6.0, phi_w=1.0, seed=51
    )
    path.write_text(params.to_json(), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory, world_json):
    out = tmp_path_factory.mktemp("data")
    assert main(["gen", "--world", str(world_json), "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def model_dir(tmp_path_factory, dataset_dir):
    out = tmp_path_factory.mktemp("model")
    code = main(
        [
            "train",
            "--manifest", str(dataset_dir / "manifest.csv"),
            "--embeddings", str(dataset_dir / "embeddings.vemb"),
            "--max-iters", "5",
            "--out", str(out),
        ]
    )
    assert code == 0
    return out


@pytest.fixture(scope="module")
def threshold_dir(tmp_path_factory, dataset_dir, model_dir):
    out = tmp_path_factory.mktemp("thr")
    code = main(
        [
            "threshold",
            "--manifest", str(dataset_dir / "manifest.csv"),
            "--embeddings", str(dataset_dir / "embeddings.vemb"),
            "--model", str(model_dir / "model.bin"),
            "--config", "strict",
            "--subset-size", "15",
            "--runs", "5",
            "--seed", "3",
            "--out", str(out),
        ]
    )
    assert code == 0
    return out


def _attack_args(dataset_dir, model_dir, threshold_dir, out, seed="7"):
    return [
        "attack",
        "--manifest", str(dataset_dir / "manifest.csv"),
        "--embeddings", str(dataset_dir / "embeddings.vemb"),
        "--model", str(model_dir / "model.bin"),
        "--threshold-file", str(threshold_dir / "threshold.json"),
        "--n-known", "20",
        "--n-unknown", "10",
        "--n-overlap", "3",
        "--variant", "rank1",
        "--seed", seed,
        "--out", str(out),
    ]


class TestGen:
    def test_outputs_load_cleanly(self, dataset_dir):
        ds = load_dataset(dataset_dir / "manifest.csv", dataset_dir / "embeddings.vemb")
        assert ds.n_speakers == 40
        assert ds.n_recordings == 120
        assert ds.dim == 6

    def test_config_echo_written(self, dataset_dir):
        config = json.loads((dataset_dir / "config.json").read_text())
        assert config["command"] == "gen"
        assert config["world"]["n_speakers"] == 40

    def test_seed_override_changes_data(self, tmp_path, world_json, dataset_dir):
        out = tmp_path / "reseeded"
        assert main(["gen", "--world", str(world_json), "--seed", "99", "--out", str(out)]) == 0
        a = (dataset_dir / "embeddings.vemb").read_bytes()
        b = (out / "embeddings.vemb").read_bytes()
        assert a != b


class TestTrain:
    def test_model_loads(self, model_dir):
        model, params = load_model(model_dir / "model.bin")
        assert model.dim == 6
        assert params.length_normalize is True


class TestThreshold:
    def test_threshold_json_contents(self, threshold_dir):
        payload = json.loads((threshold_dir / "threshold.json").read_text())
        assert payload["dcf"] == {"c_fa": 10.0, "c_fr": 0.1, "prior_target": 0.001}
        assert payload["n_runs_used"] == 5
        assert np.isfinite(payload["threshold"])

    def test_explicit_costs_override_preset(self, tmp_path, dataset_dir, model_dir):
        out = tmp_path / "thr2"
        code = main(
            [
                "threshold",
                "--manifest", str(dataset_dir / "manifest.csv"),
                "--embeddings", str(dataset_dir / "embeddings.vemb"),
                "--model", str(model_dir / "model.bin"),
                "--config", "strict",
                "--c-fa", "5.0",
                "--subset-size", "15",
                "--runs", "3",
                "--out", str(out),
            ]
        )
        assert code == 0
        payload = json.loads((out / "threshold.json").read_text())
        assert payload["dcf"] == {"c_fa": 5.0, "c_fr": 0.1, "prior_target": 0.001}


class TestAttack:
    def test_runs_and_reports_counts(self, tmp_path, dataset_dir, model_dir, threshold_dir):
        out = tmp_path / "attack"
        assert main(_attack_args(dataset_dir, model_dir, threshold_dir, out)) == 0
        payload = json.loads((out / "attack.json").read_text())
        assert payload["n_comparisons"] == 200
        assert payload["ta"] + payload["fa"] == len(payload["matches"])
        assert payload["variant"] == "rank1"

    def test_byte_identical_given_seed(self, tmp_path, dataset_dir, model_dir, threshold_dir):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert main(_attack_args(dataset_dir, model_dir, threshold_dir, out_a)) == 0
        assert main(_attack_args(dataset_dir, model_dir, threshold_dir, out_b)) == 0
        assert (out_a / "attack.json").read_bytes() == (out_b / "attack.json").read_bytes()

    def test_fixed_unknown_pool_mode(self, tmp_path, dataset_dir, model_dir, threshold_dir):
        pool_file = tmp_path / "pool.txt"
        pool = [f"s{i:04d}" for i in range(8)]
        pool_file.write_text("\n".join(pool) + "\n", encoding="utf-8")
        out = tmp_path / "fixed"
        args = [
            "attack",
            "--manifest", str(dataset_dir / "manifest.csv"),
            "--embeddings", str(dataset_dir / "embeddings.vemb"),
            "--model", str(model_dir / "model.bin"),
            "--threshold-file", str(threshold_dir / "threshold.json"),
            "--n-known", "15",
            "--n-overlap", "2",
            "--fixed-unknown-pool", str(pool_file),
            "--seed", "4",
            "--out", str(out),
        ]
        assert main(args) == 0
        payload = json.loads((out / "attack.json").read_text())
        assert payload["n_unknown"] == 10  # 8 pinned unknown-only + 2 overlap


class TestSweep:
    def test_sweep_writes_reports(self, tmp_path, dataset_dir):
        out = tmp_path / "sweep"
        code = main(
            [
                "sweep",
                "--manifest", str(dataset_dir / "manifest.csv"),
                "--embeddings", str(dataset_dir / "embeddings.vemb"),
                "--axis", "known",
                "--points", "12,16",
                "--splits", "2",
                "--n-known", "12",
                "--n-unknown", "8",
                "--n-overlap", "2",
                "--subset-size", "6",
                "--runs", "3",
                "--max-iters", "3",
                "--seed", "5",
                "--out", str(out),
            ]
        )
        assert code == 0
        rows = load_runs_csv(out / "runs.csv")
        assert len(rows) == 4
        assert sorted({r.n_known for r in rows}) == [12, 16]
        summary = json.loads((out / "summary.json").read_text())
        assert summary["config"]["command"] == "sweep"
        assert (out / "summary.csv").exists()

    def test_report_reproduces_summary(self, tmp_path, dataset_dir):
        sweep_out = tmp_path / "sweep"
        main(
            [
                "sweep",
                "--manifest", str(dataset_dir / "manifest.csv"),
                "--embeddings", str(dataset_dir / "embeddings.vemb"),
                "--axis", "known",
                "--points", "12",
                "--splits", "2",
                "--n-known", "12",
                "--n-unknown", "8",
                "--n-overlap", "2",
                "--subset-size", "6",
                "--runs", "3",
                "--max-iters", "3",
                "--seed", "5",
                "--out", str(sweep_out),
            ]
        )
        report_out = tmp_path / "report"
        assert main(["report", "--runs", str(sweep_out / "runs.csv"), "--out", str(report_out)]) == 0
        sweep_summary = json.loads((sweep_out / "summary.json").read_text())["summary"]
        report_summary = json.loads((report_out / "summary.json").read_text())["summary"]
        assert report_summary == sweep_summary


class TestExitCodes:
    def test_unknown_flag_exits_1(self, capsys):
        assert main(["train", "--bogus"]) == 1
        assert "error" in capsys.readouterr().err

    def test_missing_file_exits_1(self, tmp_path, capsys):
        code = main(
            [
                "train",
                "--manifest", str(tmp_path / "nope.csv"),
                "--embeddings", str(tmp_path / "nope.vemb"),
                "--out", str(tmp_path),
            ]
        )
        assert code == 1

    def test_infeasible_geometry_exits_1(self, tmp_path, dataset_dir, model_dir, threshold_dir):
        args = _attack_args(dataset_dir, model_dir, threshold_dir, tmp_path / "x")
        args[args.index("--n-known") + 1] = "5000"
        assert main(args) == 1

    def test_bad_points_exits_1(self, tmp_path, dataset_dir, capsys):
        code = main(
            [
                "sweep",
                "--manifest", str(dataset_dir / "manifest.csv"),
                "--embeddings", str(dataset_dir / "embeddings.vemb"),
                "--axis", "known",
                "--points", "12;16",
                "--splits", "1",
                "--n-known", "12",
                "--n-unknown", "8",
                "--out", str(tmp_path / "x"),
            ]
        )
        assert code == 1
        assert "--points" in capsys.readouterr().err
