import csv
import json

import numpy as np
import pytest

from gbinfluence import cli, dataio


def _read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    full = dataio.make_classification(90, 3, seed=4, levels=5)
    dataio.write_csv(full.take(np.arange(60)), d / "train.csv")
    dataio.write_csv(full.take(np.arange(60, 90)), d / "test.csv", weight_column=None)
    model = d / "model.json"
    assert cli.main(["train", "--data", str(d / "train.csv"), "--weight-col", "weight", "--trees", "4",
                     "--depth", "2", "--out", str(model)]) == 0
    return d, model


def _influence(files, out, *extra):
    d, model = files
    return cli.main(["influence", "--model", str(model), "--test-data", str(d / "test.csv"), "--out", str(out),
                     *extra])


class TestTrain:
    def test_byte_identical_retrain(self, files, tmp_path):
        d, model = files
        again = tmp_path / "again.json"
        cli.main(["train", "--data", str(d / "train.csv"), "--weight-col", "weight", "--trees", "4", "--depth", "2",
                  "--out", str(again)])
        assert again.read_bytes() == model.read_bytes()

    def test_env_seed(self, files, tmp_path, monkeypatch):
        d, _ = files
        monkeypatch.setenv(cli.SEED_ENV, "17")
        out = tmp_path / "m.json"
        assert cli.main(["train", "--data", str(d / "train.csv"), "--trees", "1", "--depth", "1",
                         "--out", str(out)]) == 0
        assert json.loads(out.read_text())["params"]["seed"] == 17

    def test_bad_env_seed(self, files, tmp_path, monkeypatch, capsys):
        d, _ = files
        monkeypatch.setenv(cli.SEED_ENV, "x")
        assert cli.main(["train", "--data", str(d / "train.csv"), "--out", str(tmp_path / "m.json")]) == 1
        assert "GBINFLUENCE_SEED" in capsys.readouterr().err


class TestInfluence:
    def test_matches_oracles(self, files, tmp_path):
        d, model = files
        out = tmp_path / "inf.csv"
        assert _influence(files, out, "--method", "fastleafrefit", "--strategy", "all", "--train-ids", "3,7") == 0
        rows = _read(out)
        assert [r["train_id"] for r in rows] == ["3", "7"]
        assert rows[0]["strategy"] == "all"
        ora = tmp_path / "ora.csv"
        assert cli.main(["oracle", "--model", str(model), "--data", str(d / "train.csv"), "--weight-col", "weight",
                         "--test-data", str(d / "test.csv"), "--mode", "fixed", "--train-id", "3",
                         "--out", str(ora)]) == 0
        np.testing.assert_allclose(float(rows[0]["influence_value"]), float(_read(ora)[0]["influence_value"]),
                                   rtol=1e-9, atol=1e-15)

        assert _influence(files, out, "--method", "leafinfluence", "--train-ids", "3") == 0
        assert cli.main(["oracle", "fd", "--model", str(model), "--data", str(d / "train.csv"), "--weight-col",
                         "weight", "--test-data", str(d / "test.csv"), "--train-id", "3", "--out", str(ora)]) == 0
        np.testing.assert_allclose(float(_read(out)[0]["influence_value"]),
                                   float(_read(ora)[0]["influence_value"]), rtol=1e-4, atol=1e-9)

    def test_topk0_equals_single(self, files, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        _influence(files, a, "--method", "fastleafinfluence", "--strategy", "topk:0")
        _influence(files, b, "--method", "fastleafinfluence", "--strategy", "single")
        va = [r["influence_value"] for r in _read(a)]
        assert len(va) == 60 and va == [r["influence_value"] for r in _read(b)]

    def test_jobs_match_sequential(self, files, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        _influence(files, a, "--method", "fastleafrefit", "--strategy", "topk:2")
        _influence(files, b, "--method", "fastleafrefit", "--strategy", "topk:2", "--jobs", "3")
        key = lambda rows: [(r["train_id"], r["influence_value"]) for r in rows]  # noqa: E731
        assert key(_read(a)) == key(_read(b))

    @pytest.mark.parametrize("extra, message", [
        (["--method", "leafinfluence", "--train-ids", "999"], "unknown train id"),
        (["--method", "leafinfluence", "--strategy", "all"], "only to fast"),
        (["--method", "fastleafrefit", "--strategy", "top:3"], "strategy"),
        (["--method", "leafrefit", "--jobs", "0"], "--jobs"),
    ])
    def test_errors_leave_no_output(self, files, tmp_path, capsys, extra, message):
        out = tmp_path / "never.csv"
        assert _influence(files, out, *extra) == 1
        assert message in capsys.readouterr().err
        assert not out.exists()

    def test_missing_and_mismatched_files(self, files, tmp_path, capsys):
        d, model = files
        out = tmp_path / "o.csv"
        assert cli.main(["influence", "--model", str(tmp_path / "nope.json"), "--method", "leafrefit",
                         "--test-data", str(d / "test.csv"), "--out", str(out)]) == 1
        assert "not found" in capsys.readouterr().err
        narrow = tmp_path / "narrow.csv"
        narrow.write_text("f0,label\n1,0\n2,1\n")
        assert cli.main(["influence", "--model", str(model), "--method", "leafrefit", "--test-data", str(narrow),
                         "--out", str(out)]) == 1
        assert "feature columns" in capsys.readouterr().err
        assert not out.exists()

    def test_model_without_trace(self, files, tmp_path, capsys):
        d, _ = files
        bare = tmp_path / "bare.json"
        cli.main(["train", "--data", str(d / "train.csv"), "--trees", "2", "--depth", "1", "--no-trace",
                  "--out", str(bare)])
        assert _influence((d, bare), tmp_path / "o.csv", "--method", "leafinfluence") == 1
        assert "training trace" in capsys.readouterr().err

    def test_usage_error_exit_code(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["influence", "--method", "nope"])
        assert exc.value.code == 2


class TestOracle:
    def test_stdout_and_wrong_data(self, files, tmp_path, capsys):
        d, model = files
        assert cli.main(["oracle", "--model", str(model), "--data", str(d / "train.csv"), "--weight-col", "weight",
                         "--mode", "full", "--train-id", "0"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "train_id,mode,influence_value,seconds" and out[1].startswith("0,full,")
        assert cli.main(["oracle", "--model", str(model), "--data", str(d / "test.csv"), "--train-id", "0"]) == 1
        assert "training set" in capsys.readouterr().err


class TestExperiment:
    def test_writes_report_files(self, tmp_path):
        cfg = dict(data=dict(generator="classification", n=60, n_test=20, d=3, levels=4), seed=2,
                   params=dict(n_trees=3, depth=2), methods=["leafinfluence", "fastleafrefit:single"], n_test=5)
        path = tmp_path / "proxy.json"
        path.write_text(json.dumps(cfg))
        assert cli.main(["experiment", "proxy", "--config", str(path), "--out-dir", str(tmp_path / "o")]) == 0
        names = sorted(p.name for p in (tmp_path / "o").iterdir())
        assert names == ["proxy.csv", "proxy.json", "proxy.png", "proxy_plot.csv"]

    @pytest.mark.parametrize("cfg, message", [
        (dict(methods=["leafrefit"]), "data"),
        (dict(data=dict(generator="nope", n=5)), "unknown generator"),
        (dict(data=dict(generator="classification", n=30, n_test=5), methods=["leafrefit"], bogus=1), "bogus"),
        (dict(data=dict(generator="classification", n=30), methods=["leafrefit"]), "test data"),
    ])
    def test_bad_configs(self, tmp_path, capsys, cfg, message):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(cfg))
        assert cli.main(["experiment", "proxy", "--config", str(path), "--out-dir", str(tmp_path / "o")]) == 1
        assert message in capsys.readouterr().err
        assert not (tmp_path / "o").exists()
