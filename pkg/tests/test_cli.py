import json
import os

import numpy as np
import pytest

from fcodt.cli import load_run_config, main


def run(*argv):
    return main(list(argv))


@pytest.fixture
def sim_csv(tmp_path):
    path = tmp_path / "sim.csv"
    assert run("simulate", "--which", "sim1", "--n", "300", "--sigma", "0.1",
               "--seed", "5", "--out", str(path)) == 0
    return path


class TestSimulate:
    def test_byte_identical_across_runs(self, tmp_path):
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        for out in (a, b):
            assert run("simulate", "--which", "sim2", "--n", "50", "--sigma",
                       "0.01", "--seed", "3", "--out", str(out)) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_zero_sigma_y_equals_f(self, tmp_path):
        out = tmp_path / "clean.csv"
        run("simulate", "--which", "sim1", "--n", "40", "--sigma", "0",
            "--seed", "1", "--out", str(out))
        lines = out.read_text().splitlines()
        header = lines[0].split(",")
        yi, fi = header.index("y"), header.index("f")
        for line in lines[1:]:
            cells = line.split(",")
            assert cells[yi] == cells[fi]

    def test_covers_depth_sweep_protocol(self, tmp_path):
        out = tmp_path / "big.csv"
        run("simulate", "--which", "sim1", "--n", "2500", "--sigma", "0.01",
            "--seed", "0", "--out", str(out))
        assert len(out.read_text().splitlines()) == 2501


class TestTrainPredict:
    def test_train_roundtrip_predictions(self, tmp_path, sim_csv, capsys):
        model_path = tmp_path / "model.txt"
        assert run("train", "--data", str(sim_csv), "--target", "y", "--drop", "f",
                   "--lambda", "0.01", "--max-depth", "3",
                   "--out", str(model_path)) == 0
        reported = None
        for line in capsys.readouterr().out.splitlines():
            if line.startswith("training mse:"):
                reported = float(line.split(":")[1])
        pred_path = tmp_path / "pred.csv"
        assert run("predict", "--model", str(model_path), "--data", str(sim_csv),
                   "--target", "y", "--drop", "f", "--out", str(pred_path)) == 0
        lines = pred_path.read_text().splitlines()
        assert lines[0] == "prediction"
        assert len(lines) == 301

        # reported training mse must match rescoring the prediction file
        from fcodt.datasets import parse_csv
        from fcodt.evaluation import mse
        ds = parse_csv(sim_csv.read_text(), "y", drop_columns=("f",))
        preds = np.array([float(v) for v in lines[1:]])
        assert mse(preds, ds.targets) == pytest.approx(reported, rel=1e-5)

    def test_train_cv_prints_table(self, tmp_path, sim_csv, capsys):
        model_path = tmp_path / "model.txt"
        assert run("train", "--data", str(sim_csv), "--target", "y", "--drop", "f",
                   "--lambda", "cv", "--grid", "0.1,10", "--folds", "2",
                   "--max-depth", "2", "--out", str(model_path)) == 0
        out = capsys.readouterr().out
        assert "lambda,fold,val_mse" in out
        assert "chosen lambda:" in out
        assert "training mse:" in out

    def test_missing_file_no_partial_output(self, tmp_path):
        model_path = tmp_path / "model.txt"
        assert run("train", "--data", str(tmp_path / "nope.csv"),
                   "--lambda", "0.1", "--out", str(model_path)) == 1
        assert not model_path.exists()

    def test_predict_dimension_mismatch(self, tmp_path, sim_csv):
        model_path = tmp_path / "model.txt"
        run("train", "--data", str(sim_csv), "--target", "y", "--drop", "f",
            "--lambda", "0.1", "--out", str(model_path))
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        pred_path = tmp_path / "pred.csv"
        assert run("predict", "--model", str(model_path), "--data", str(bad),
                   "--out", str(pred_path)) == 1

    def test_predict_empty_input(self, tmp_path, sim_csv):
        model_path = tmp_path / "model.txt"
        run("train", "--data", str(sim_csv), "--target", "y", "--drop", "f",
            "--lambda", "0.1", "--out", str(model_path))
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        pred_path = tmp_path / "pred.csv"
        assert run("predict", "--model", str(model_path), "--data", str(empty),
                   "--out", str(pred_path)) == 0
        assert pred_path.read_text() == "prediction\n"

    def test_predict_explain_path_columns(self, tmp_path, sim_csv):
        model_path = tmp_path / "model.txt"
        run("train", "--data", str(sim_csv), "--target", "y", "--drop", "f",
            "--lambda", "0.1", "--max-depth", "2", "--out", str(model_path))
        pred_path = tmp_path / "pred.csv"
        assert run("predict", "--model", str(model_path), "--data", str(sim_csv),
                   "--target", "y", "--drop", "f", "--explain",
                   "--out", str(pred_path)) == 0
        lines = pred_path.read_text().splitlines()
        assert lines[0] == "prediction,path_nodes,path_scores"
        first = lines[1].split(",")
        assert first[1].startswith("0")  # every path starts at the root


class TestInspect:
    def test_prints_tree_and_stumps(self, tmp_path, sim_csv, capsys):
        model_path = tmp_path / "model.txt"
        run("train", "--data", str(sim_csv), "--target", "y", "--drop", "f",
            "--lambda", "1e-8", "--max-depth", "2", "--out", str(model_path))
        assert run("inspect", "--model", str(model_path), "--stumps",
                   "--data", str(sim_csv), "--target", "y", "--drop", "f") == 0
        out = capsys.readouterr().out
        assert "split" in out and "leaf" in out
        assert "orthogonal-expansion deviation" in out

    def test_gain_column_matches_model(self, tmp_path, sim_csv, capsys):
        from fcodt.tree import ObliqueNode, model_from_text
        model_path = tmp_path / "model.txt"
        run("train", "--data", str(sim_csv), "--target", "y", "--drop", "f",
            "--lambda", "0.1", "--max-depth", "2", "--out", str(model_path))
        assert run("inspect", "--model", str(model_path)) == 0
        out = capsys.readouterr().out
        model = model_from_text(model_path.read_text())
        for node in model.nodes:
            if isinstance(node, ObliqueNode):
                assert f"gain={node.gain:.6g}" in out


def write_config(path, **kw):
    base = {"methods": ["fc_odt"], "datasets": ["sim1"], "depths": [2],
            "repeats": 1, "lambda_grid": [0.1], "folds": 2, "seed_base": 3,
            "test_samples": 50}
    base.update(kw)
    path.write_text(json.dumps(base))
    return path


class TestSweepCommand:
    def test_outputs_and_resume(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "cfg.json")
        out_dir = tmp_path / "out"
        assert run("sweep", "--config", str(cfg), "--kind", "depth",
                   "--out", str(out_dir)) == 0
        results = (out_dir / "results.csv").read_bytes()
        assert (out_dir / "timings.csv").exists()
        stamp = json.loads((out_dir / "stamp.json").read_text())
        assert stamp["kind"] == "depth" and stamp["cells"] == 1

        capsys.readouterr()
        # second run finds the journal and recomputes nothing
        assert run("sweep", "--config", str(cfg), "--kind", "depth",
                   "--out", str(out_dir)) == 0
        assert "1 already done, 0 to run" in capsys.readouterr().out
        assert (out_dir / "results.csv").read_bytes() == results

    def test_samples_kind(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json", sample_sizes=[50], max_depth=2)
        out_dir = tmp_path / "out"
        assert run("sweep", "--config", str(cfg), "--kind", "samples",
                   "--out", str(out_dir)) == 0
        lines = (out_dir / "results.csv").read_text().splitlines()
        assert lines[0] == "method,dataset,seed,param_name,param_value,metric,value"
        assert len(lines) == 2  # one method x one dataset x one size x one repeat
        assert "n_samples" in lines[1]

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"methods": ["fc_odt"], "bogus": 1}))
        with pytest.raises(ValueError, match="unknown config keys"):
            load_run_config(str(cfg))
        out_dir = tmp_path / "out"
        assert run("sweep", "--config", str(cfg), "--kind", "depth",
                   "--out", str(out_dir)) == 1


class TestBenchCommand:
    def test_sim_benchmark_outputs(self, tmp_path):
        cfg = write_config(tmp_path / "cfg.json",
                           methods=["fc_odt", "cart"], datasets=["sim1"],
                           repeats=2, max_depth=2)
        out_dir = tmp_path / "bench"
        assert run("bench", "--config", str(cfg), "--out", str(out_dir)) == 0
        agg = (out_dir / "aggregate.csv").read_text().splitlines()
        assert agg[0] == "dataset,cart,fc_odt"
        assert agg[-1].startswith("average_rank,")
        assert (out_dir / "significance.csv").exists()
        report = json.loads((out_dir / "report.json").read_text())
        assert report["datasets_run"] == ["sim1"]

    def test_missing_dataset_reported(self, tmp_path):
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps(
            {"housing": {"path": "housing.libsvm", "format": "libsvm"}}))
        cfg = write_config(tmp_path / "cfg.json", datasets=["sim1", "housing"],
                           repeats=1, max_depth=2)
        out_dir = tmp_path / "bench"
        assert run("bench", "--config", str(cfg), "--manifest", str(manifest),
                   "--out", str(out_dir)) == 0
        report = json.loads((out_dir / "report.json").read_text())
        assert report["skipped"][0]["dataset"] == "housing"

    def test_env_var_supplies_manifest(self, tmp_path, monkeypatch):
        data_file = tmp_path / "tiny.libsvm"
        rng = np.random.default_rng(0)
        lines = []
        for i in range(60):
            x = rng.normal(size=2)
            lines.append(f"{x[0] + x[1]:.6f} 1:{x[0]:.6f} 2:{x[1]:.6f}")
        data_file.write_text("\n".join(lines) + "\n")
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps(
            {"tiny": {"path": "tiny.libsvm", "format": "libsvm", "n_features": 2}}))
        monkeypatch.setenv("FCODT_MANIFEST", str(manifest))
        cfg = write_config(tmp_path / "cfg.json", datasets=["tiny"],
                           repeats=2, max_depth=2)
        out_dir = tmp_path / "bench"
        assert run("bench", "--config", str(cfg), "--out", str(out_dir)) == 0
        report = json.loads((out_dir / "report.json").read_text())
        assert report["datasets_run"] == ["tiny"]

    def test_reference_scores_in_ranks(self, tmp_path):
        ref = tmp_path / "ref.csv"
        ref.write_text("dataset,method,mean,std\nsim1,tao,0.2,0.01\n")
        cfg = write_config(tmp_path / "cfg.json", methods=["fc_odt"],
                          datasets=["sim1"], repeats=2, max_depth=2)
        out_dir = tmp_path / "bench"
        assert run("bench", "--config", str(cfg), "--reference", str(ref),
                   "--out", str(out_dir)) == 0
        agg = (out_dir / "aggregate.csv").read_text()
        assert "tao" in agg.splitlines()[0]
