import json

import pandas as pd
import pytest

from catenc import main

BENCH_ARGS = [
    "bench", "--n", "400", "--latent", "2", "--groups", "10", "--p", "4",
    "--seeds", "2", "--folds", "3", "--inner-folds", "2", "--learner-k", "7",
    "--methods", "onehot,means",
]


@pytest.fixture
def simulated_csv(tmp_path):
    path = tmp_path / "d.csv"
    argv = ["simulate", "--setup", "latent_linear", "--n", "1000", "--latent", "4", "--groups", "40",
            "--p", "10", "--seed", "7", "--out", str(path)]
    assert main(argv) == 0
    return path


class TestSimulate:
    def test_writes_dataset(self, simulated_csv):
        frame = pd.read_csv(simulated_csv)
        assert frame.shape == (1000, 12)
        assert list(frame.columns) == [f"x{j}" for j in range(1, 11)] + ["g", "y"]
        assert frame["g"].nunique() == 40

    def test_latent_column_and_params(self, tmp_path):
        out, params = tmp_path / "d.csv", tmp_path / "params.json"
        argv = ["simulate", "--n", "300", "--seed", "1", "--out", str(out), "--with-latent",
                "--params-out", str(params)]
        assert main(argv) == 0
        frame = pd.read_csv(out)
        assert set(frame["latent"].unique()) <= {0, 1}
        assert "beta_l" in json.loads(params.read_text())

    def test_invalid_configuration(self, tmp_path, capsys):
        argv = ["simulate", "--latent", "3", "--groups", "20", "--out", str(tmp_path / "d.csv")]
        assert main(argv) == 1
        assert "catenc: error:" in capsys.readouterr().err


class TestEncode:
    def test_means(self, simulated_csv, tmp_path):
        out = tmp_path / "e.csv"
        assert main(["encode", "--method", "means", "--input", str(simulated_csv), "--out", str(out)]) == 0
        frame = pd.read_csv(out)
        assert frame.shape == (1000, 21)
        assert "g" not in frame.columns
        assert frame.columns[-1] == "y"

    def test_saved_model_reproduces_encoding(self, simulated_csv, tmp_path):
        first, second, model = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "m.json"
        argv = ["encode", "--method", "lowrank", "--k", "3", "--input", str(simulated_csv),
                "--out", str(first), "--model-out", str(model)]
        assert main(argv) == 0
        assert main(["encode", "--model-in", str(model), "--input", str(simulated_csv), "--out", str(second)]) == 0
        assert first.read_bytes() == second.read_bytes()

    def test_needs_method_or_model(self, simulated_csv, tmp_path):
        assert main(["encode", "--input", str(simulated_csv), "--out", str(tmp_path / "e.csv")]) == 1

    def test_bad_flag(self, simulated_csv, tmp_path):
        argv = ["encode", "--method", "means", "--input", str(simulated_csv), "--out", str(tmp_path / "e.csv"),
                "--folds", "zero"]
        assert main(argv) == 1

    def test_unknown_method(self, simulated_csv, tmp_path):
        argv = ["encode", "--method", "target", "--input", str(simulated_csv), "--out", str(tmp_path / "e.csv")]
        assert main(argv) == 1

    def test_missing_input(self, tmp_path, capsys):
        argv = ["encode", "--method", "means", "--input", str(tmp_path / "none.csv"), "--out", str(tmp_path / "e.csv")]
        assert main(argv) == 2
        assert "catenc: error:" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "content",
        [b"x1,g,y\n1,a,0\n2,b,1,5\n", b"x1,g,y\n1,a,0\n2,\xff,1\n"],
        ids=["ragged-row", "invalid-utf8"],
    )
    def test_malformed_input(self, tmp_path, capsys, content):
        path = tmp_path / "bad.csv"
        path.write_bytes(content)
        argv = ["encode", "--method", "means", "--input", str(path), "--out", str(tmp_path / "e.csv")]
        assert main(argv) == 2
        assert "catenc: error:" in capsys.readouterr().err


class TestOracleCheck:
    def test_all_identities_pass(self, capsys):
        assert main(["oracle-check", "--k", "2", "--groups", "5", "--support", "4", "--mnl-n", "0"]) == 0
        out = capsys.readouterr().out
        assert "mu_via_lowrank vs direct" in out
        assert "FAIL" not in out
        assert out.count("PASS") == 7


class TestBench:
    def test_report_is_byte_identical(self, tmp_path):
        paths = [tmp_path / "r1.csv", tmp_path / "r2.csv"]
        for path in paths:
            assert main(BENCH_ARGS + ["--out", str(path)]) == 0
        assert paths[0].read_bytes() == paths[1].read_bytes()
        frame = pd.read_csv(paths[0])
        assert list(frame["name"]) == ["onehot", "means"]
        assert frame.loc[0, "improvement"] == 0.0

    def test_json_format_from_environment(self, monkeypatch, capsys):
        monkeypatch.setenv("CATENC_FORMAT", "json")
        assert main(BENCH_ARGS) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload[0]["baseline"] == "onehot"
        assert [m["name"] for m in payload[0]["methods"]] == ["onehot", "means"]

    def test_flag_overrides_config_file(self, tmp_path, capsys):
        config = tmp_path / "bench.json"
        config.write_text(json.dumps({"seeds": 5, "methods": ["onehot", "means"]}))
        assert main(BENCH_ARGS + ["--config", str(config), "--seeds", "1", "--format", "json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload[0]["config"]["seeds"] == 1
        assert len(payload[0]["methods"][0]["fold_mse"]) == 1

    def test_unknown_config_key(self, tmp_path):
        config = tmp_path / "bench.json"
        config.write_text(json.dumps({"sedes": 5}))
        assert main(["bench", "--config", str(config)]) == 1

    def test_missing_input(self, tmp_path):
        assert main(["bench", "--input", str(tmp_path / "none.csv")]) == 2

    def test_malformed_input(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_bytes(b"x1,g,y\n1,a,0\n2,b,1,5\n")
        assert main(["bench", "--input", str(path)]) == 2
