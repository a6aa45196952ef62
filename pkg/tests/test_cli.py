import csv
import io
import json

import numpy as np
import pytest

from dpsketch.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def write_csv(path, data, header=None):
    data = np.atleast_2d(data)
    if header is None:
        header = [f"x{j + 1}" for j in range(data.shape[1])]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(data.tolist())


def parse_csv(text):
    return list(csv.reader(io.StringIO(text)))


@pytest.fixture
def dataset(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.uniform(size=(400, 3))
    path = tmp_path / "data.csv"
    write_csv(path, data)
    return path, data


@pytest.fixture
def hist_sketch(tmp_path, dataset, capsys):
    path, data = dataset
    out = tmp_path / "sketch.json"
    code = main(["sketch", str(path), "--out", str(out), "--map", "hist",
                 "--bins", "20", "--epsilon", "inf"])
    capsys.readouterr()
    assert code == 0
    return out, data


class TestSketchCommand:
    def test_writes_file_and_reports_scales(self, tmp_path, dataset, capsys):
        path, _ = dataset
        out = tmp_path / "s.json"
        code, stdout, stderr = run_cli(
            capsys, "sketch", str(path), "--out", str(out), "--map", "hist",
            "--bins", "10", "--epsilon", "1.0", "--noise-seed", "7")
        assert code == 0
        assert out.exists()
        rows = parse_csv(stdout)
        assert rows[0] == ["sensitivity_l1", "noise_scale_sum",
                           "noise_scale_count", "noisy_count"]
        assert float(rows[1][0]) == 3.0  # d = 3
        assert float(rows[1][1]) == pytest.approx(3.0 / 0.98)
        assert float(rows[1][2]) == pytest.approx(1.0 / 0.02)
        assert "wrote" in stderr

    def test_epsilon_inf_reports_zero_noise(self, tmp_path, dataset, capsys):
        path, data = dataset
        out = tmp_path / "s.json"
        code, stdout, _ = run_cli(
            capsys, "sketch", str(path), "--out", str(out), "--epsilon", "inf")
        assert code == 0
        rows = parse_csv(stdout)
        assert float(rows[1][1]) == 0.0
        assert float(rows[1][3]) == data.shape[0]

    def test_out_of_domain_value_exits_2_without_file(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        write_csv(path, [[0.5, 1.5], [0.1, 0.2]])
        out = tmp_path / "s.json"
        code, _, stderr = run_cli(
            capsys, "sketch", str(path), "--out", str(out), "--map", "hist")
        assert code == 2
        assert not out.exists()
        assert "error" in stderr

    def test_missing_input_exits_1(self, tmp_path, capsys):
        code, _, stderr = run_cli(
            capsys, "sketch", str(tmp_path / "nope.csv"),
            "--out", str(tmp_path / "s.json"))
        assert code == 1

    def test_non_numeric_value_exits_2(self, tmp_path, capsys):
        path = tmp_path / "bad.csv"
        path.write_text("x1,x2\n0.5,oops\n")
        code, _, stderr = run_cli(
            capsys, "sketch", str(path), "--out", str(tmp_path / "s.json"))
        assert code == 2
        assert "non-numeric" in stderr

    def test_config_file_with_flag_override(self, tmp_path, dataset, capsys):
        path, _ = dataset
        cfg = tmp_path / "sketch.cfg"
        cfg.write_text("map=rff\nm=40\nsigma=2.0\nepsilon=inf\n")
        out = tmp_path / "s.json"
        # --m on the command line overrides the config value
        code, _, _ = run_cli(
            capsys, "sketch", str(path), "--out", str(out),
            "--config", str(cfg), "--m", "60")
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["spec"]["variant"] == "RFF"
        assert doc["spec"]["m"] == 60

    def test_unknown_config_key_exits_2(self, tmp_path, dataset, capsys):
        path, _ = dataset
        cfg = tmp_path / "sketch.cfg"
        cfg.write_text("bogus=1\n")
        code, _, stderr = run_cli(
            capsys, "sketch", str(path), "--out", str(tmp_path / "s.json"),
            "--config", str(cfg))
        assert code == 2
        assert "bogus" in stderr

    def test_schema_file(self, tmp_path, capsys):
        path = tmp_path / "wide.csv"
        write_csv(path, [[5.0, 0.5], [9.0, 0.2]])
        schema = tmp_path / "schema.json"
        schema.write_text(json.dumps({"columns": [
            {"name": "x1", "lower": 0.0, "upper": 10.0},
            {"name": "x2", "lower": 0.0, "upper": 1.0},
        ]}))
        out = tmp_path / "s.json"
        code, _, _ = run_cli(
            capsys, "sketch", str(path), "--out", str(out),
            "--schema", str(schema), "--map", "hist", "--bins", "5")
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["spec"]["domain"]["upper"] == [10.0, 1.0]

    def test_normalize_warns_and_records_constants(self, tmp_path, capsys):
        path = tmp_path / "wide.csv"
        write_csv(path, [[5.0, 0.5], [9.0, 0.2], [7.0, 0.9]])
        out = tmp_path / "s.json"
        code, _, stderr = run_cli(
            capsys, "sketch", str(path), "--out", str(out), "--normalize",
            "--map", "hist", "--bins", "4")
        assert code == 0
        assert "leak" in stderr
        doc = json.loads(out.read_text())
        assert doc["normalization"]["min"] == [5.0, 0.2]
        assert doc["normalization"]["max"] == [9.0, 0.9]

    def test_byte_identical_reruns(self, tmp_path, dataset, capsys):
        path, _ = dataset
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            code, _, _ = run_cli(
                capsys, "sketch", str(path), "--out", str(out), "--map", "rff",
                "--m", "20", "--epsilon", "1.0", "--map-seed", "3",
                "--noise-seed", "4")
            assert code == 0
        assert a.read_bytes() == b.read_bytes()


class TestEstimateCommand:
    def test_moment_with_truth(self, tmp_path, dataset, hist_sketch, capsys):
        out, data = hist_sketch
        path, _ = dataset
        code, stdout, _ = run_cli(
            capsys, "estimate", str(out), "moment 1 1",
            "--truth", str(path), "--n-synth", "20000")
        assert code == 0
        rows = parse_csv(stdout)
        assert rows[0][:3] == ["target", "estimate", "true_value"]
        est, truth = float(rows[1][1]), float(rows[1][2])
        assert truth == pytest.approx(data[:, 0].mean())
        assert est == pytest.approx(truth, abs=0.01)
        assert rows[1][3] == "mre"

    def test_count_target(self, tmp_path, hist_sketch, capsys):
        out, data = hist_sketch
        code, stdout, _ = run_cli(
            capsys, "estimate", str(out), "count x1<=0.5 and x2>=0.25",
            "--n-synth", "20000")
        assert code == 0
        rows = parse_csv(stdout)
        truth = ((data[:, 0] <= 0.5) & (data[:, 1] >= 0.25)).mean()
        assert float(rows[1][1]) == pytest.approx(truth, abs=0.05)

    def test_malformed_target_exits_2(self, hist_sketch, capsys):
        out, _ = hist_sketch
        code, _, stderr = run_cli(capsys, "estimate", str(out), "momento 1 1")
        assert code == 2
        assert "parse" in stderr

    def test_missing_sketch_exits_1(self, tmp_path, capsys):
        code, _, _ = run_cli(capsys, "estimate",
                             str(tmp_path / "nope.json"), "moment 1 1")
        assert code == 1

    def test_corrupt_sketch_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        code, _, _ = run_cli(capsys, "estimate", str(bad), "moment 1 1")
        assert code == 2


class TestCdfCommand:
    def test_cdf_rows_and_emd(self, tmp_path, dataset, hist_sketch, capsys):
        out, data = hist_sketch
        path, _ = dataset
        code, stdout, stderr = run_cli(
            capsys, "cdf", str(out), "--attr", "2", "--truth", str(path),
            "--n-synth", "20000")
        assert code == 0
        rows = parse_csv(stdout)
        assert rows[0] == ["target", "threshold", "estimate", "true_value"]
        assert len(rows) == 11
        values = [float(r[2]) for r in rows[1:]]
        assert values[-1] == pytest.approx(1.0, abs=1e-6)
        assert "emd=" in stderr


class TestCovCommand:
    def test_symmetric_output(self, tmp_path, dataset, capsys):
        path, data = dataset
        out = tmp_path / "s.json"
        run_cli(capsys, "sketch", str(path), "--out", str(out), "--map",
                "rff", "--m", "60", "--epsilon", "inf")
        code, stdout, stderr = run_cli(
            capsys, "cov", str(out), "--truth", str(path),
            "--n-synth", "20000")
        assert code == 0
        M = np.array([[float(v) for v in row] for row in parse_csv(stdout)])
        assert M.shape == (3, 3)
        np.testing.assert_array_equal(M, M.T)
        assert "frobenius=" in stderr


class TestQueryBatch:
    def test_batch_answers(self, tmp_path, dataset, hist_sketch, capsys):
        out, data = hist_sketch
        path, _ = dataset
        queries = tmp_path / "q.txt"
        queries.write_text(
            "x1<=0.5 and x2>=0.2 and x3<=0.9\n"
            "x1>=0.25 and x2<=0.75 and x3>=0.5\n")
        code, stdout, _ = run_cli(
            capsys, "query-batch", str(out), str(queries),
            "--truth", str(path), "--n-synth", "20000")
        assert code == 0
        rows = parse_csv(stdout)
        assert rows[0] == ["query", "fraction", "count", "true_fraction"]
        assert len(rows) == 3
        for row in rows[1:]:
            assert float(row[1]) == pytest.approx(float(row[3]), abs=0.05)
            assert float(row[2]) == pytest.approx(float(row[1]) * 400, abs=1e-6)

    def test_bad_query_exits_2(self, tmp_path, hist_sketch, capsys):
        out, _ = hist_sketch
        queries = tmp_path / "q.txt"
        queries.write_text("x1<0.5 and x2>=0.2 and x3<=0.9\n")
        code, _, _ = run_cli(capsys, "query-batch", str(out), str(queries))
        assert code == 2

    def test_wrong_predicate_count_exits_2(self, tmp_path, hist_sketch, capsys):
        out, _ = hist_sketch
        queries = tmp_path / "q.txt"
        queries.write_text("x1<=0.5\n")
        code, _, _ = run_cli(capsys, "query-batch", str(out), str(queries))
        assert code == 2


class TestFitLogreg:
    def test_trains_and_writes_model(self, tmp_path, capsys):
        from dpsketch.harness import gen_separable_classification

        data = gen_separable_classification(2000, 3, seed=1)
        train = tmp_path / "train.csv"
        test = tmp_path / "test.csv"
        write_csv(train, data[:1500])
        write_csv(test, data[1500:])
        schema = tmp_path / "schema.json"
        schema.write_text(json.dumps({"columns": [
            {"name": "x1"}, {"name": "x2"},
            {"name": "y", "kind": "binary"},
        ]}))
        out = tmp_path / "s.json"
        run_cli(capsys, "sketch", str(train), "--out", str(out), "--map",
                "rff", "--m", "60", "--epsilon", "inf",
                "--schema", str(schema))
        model_out = tmp_path / "model.json"
        code, stdout, _ = run_cli(
            capsys, "fit-logreg", str(out), str(test),
            "--model-out", str(model_out), "--n-synth", "10000",
            "--step", "2.0", "--iters", "300")
        assert code == 0
        rows = parse_csv(stdout)
        assert rows[0] == ["auc"]
        assert float(rows[1][0]) > 0.8
        doc = json.loads(model_out.read_text())
        assert len(doc["theta"]) == 2
        assert "lambda" in doc["config"]

    def test_hist_map_warns(self, tmp_path, dataset, hist_sketch, capsys):
        out, _ = hist_sketch
        rng = np.random.default_rng(2)
        labeled = np.column_stack([rng.uniform(size=(100, 2)),
                                   rng.integers(0, 2, size=100)])
        test = tmp_path / "labeled.csv"
        write_csv(test, labeled)
        code, _, stderr = run_cli(
            capsys, "fit-logreg", str(out), str(test), "--n-synth", "2000",
            "--iters", "10")
        assert code == 0
        assert "cross-attribute" in stderr

    def test_single_class_test_file_exits_2(self, tmp_path, dataset,
                                            hist_sketch, capsys):
        out, _ = hist_sketch
        path, _ = dataset
        # the raw uniform dataset has no binary labels at all
        code, _, stderr = run_cli(
            capsys, "fit-logreg", str(out), str(path), "--n-synth", "2000",
            "--iters", "10")
        assert code == 2
        assert "classes" in stderr


class TestInspect:
    def test_fields(self, hist_sketch, capsys):
        out, data = hist_sketch
        code, stdout, _ = run_cli(capsys, "inspect", str(out))
        assert code == 0
        fields = dict(parse_csv(stdout)[1:])
        assert fields["variant"] == "HIST"
        assert fields["d"] == "3"
        assert fields["m"] == "60"
        assert fields["epsilon_num"] == "inf"
        assert float(fields["noisy_count"]) == data.shape[0]


class TestEval:
    def test_quick_plan_run(self, tmp_path, capsys):
        plan = tmp_path / "plan.cfg"
        plan.write_text(
            "dataset=random10\nn=300\nd=3\nsketches=hist\n"
            "epsilons=inf,1\nrepetitions=2\ntasks=mean\nn_synth=2000\n")
        outdir = tmp_path / "results"
        code, _, stderr = run_cli(
            capsys, "eval", "--plan", str(plan), "--out", str(outdir),
            "--quick")
        assert code == 0
        assert (outdir / "results.csv").exists()
        assert (outdir / "aggregate.csv").exists()

    def test_unknown_plan_key_exits_2(self, tmp_path, capsys):
        plan = tmp_path / "plan.cfg"
        plan.write_text("wat=1\n")
        code, _, _ = run_cli(
            capsys, "eval", "--plan", str(plan), "--out", str(tmp_path / "r"))
        assert code == 2


class TestSeedEnvVar:
    def test_env_seed_changes_noise(self, tmp_path, dataset, capsys,
                                    monkeypatch):
        path, _ = dataset
        outs = []
        for seed in ("1", "2"):
            monkeypatch.setenv("DPSKETCH_SEED", seed)
            out = tmp_path / f"s{seed}.json"
            run_cli(capsys, "sketch", str(path), "--out", str(out),
                    "--map", "hist", "--bins", "5", "--epsilon", "1.0")
            outs.append(json.loads(out.read_text()))
        assert outs[0]["noisy_sum"] != outs[1]["noisy_sum"]

    def test_env_seed_reproduces(self, tmp_path, dataset, capsys, monkeypatch):
        path, _ = dataset
        monkeypatch.setenv("DPSKETCH_SEED", "9")
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            run_cli(capsys, "sketch", str(path), "--out", str(out),
                    "--map", "hist", "--bins", "5", "--epsilon", "1.0")
        assert a.read_bytes() == b.read_bytes()
