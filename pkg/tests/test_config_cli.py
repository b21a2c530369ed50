import json

import pytest

from relatt.cli import main
from relatt.config import SEARCH_GRID, RunConfig, config_hash, expand_matrix, parse_config
from relatt.errors import ConfigError

FAST = ["--set", "max_epochs=20", "--set", "dim=8", "--set", "eval_interval=10", "--set", "neg_ratio=2"]


class TestConfig:
    def test_defaults(self):
        cfg = parse_config(env={})
        assert (cfg.lr, cfg.layers, cfg.dim, cfg.bases, cfg.neg_ratio, cfg.seed) == (0.01, 2, 100, 2, 10, 42)
        assert cfg.attention and cfg.inverse and cfg.self_loop
        assert cfg.attn_nonlinearity == "none" and cfg.th == 1.0

    def test_precedence(self, write):
        path = write("run.conf", "# comment\nlr = 0.001\nseed = 7\ndim = 16  # inline\n")
        cfg = parse_config(path, env={})
        assert (cfg.lr, cfg.seed, cfg.dim) == (0.001, 7, 16)
        assert parse_config(path, env={"RELATT_SEED": "9"}).seed == 9
        assert parse_config(path, {"seed": 11}, env={"RELATT_SEED": "9"}).seed == 11
        assert parse_config(path, {"lr": "0.5"}, env={}).lr == 0.5

    def test_type_error_names_key(self, write):
        with pytest.raises(ConfigError) as exc:
            parse_config(write("bad.conf", "lr = fast\n"), env={})
        assert exc.value.key == "lr" and "lr" in str(exc.value)

    def test_unknown_key(self, write):
        with pytest.raises(ConfigError) as exc:
            parse_config(write("bad.conf", "learning_rate = 0.1\n"), env={})
        assert exc.value.key == "learning_rate"
        with pytest.raises(ConfigError):
            parse_config(overrides={"nope": 1}, env={})

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "none.conf", env={})

    def test_bool_values(self):
        assert parse_config(overrides={"attention": "off"}, env={}).attention is False
        with pytest.raises(ConfigError):
            parse_config(overrides={"attention": "maybe"}, env={})

    def test_hash_tracks_config(self):
        a, b = RunConfig(), RunConfig()
        assert config_hash(a) == config_hash(b)
        assert config_hash(RunConfig(lr=0.02)) != config_hash(a)

    def test_expand_matrix(self):
        runs = expand_matrix(RunConfig(), {"lr": [0.1, 0.01], "bases": [2, 3, 5]})
        assert len(runs) == 6 and len({config_hash(r) for r in runs}) == 6
        assert len(expand_matrix(RunConfig(), SEARCH_GRID)) == 2 * 2 * 4 * 4 * 3 * 6

    def test_full_scale_config_file(self):
        from pathlib import Path
        path = Path(__file__).resolve().parents[1] / "configs" / "fb15k237.conf"
        cfg = parse_config(path, env={})
        assert cfg.min_epochs == 6000 and cfg.max_epochs >= 6000


@pytest.fixture(scope="module")
def toy_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("toy")
    assert main(["make-fixture", "toy", "--out", str(out), "--seed", "1"]) == 0
    return out


class TestCli:
    def test_train_and_evaluate(self, toy_dir, tmp_path):
        run = tmp_path / "run"
        assert main(["train", "--data", str(toy_dir), "--out", str(run), "--seed", "3", *FAST]) == 0
        for name in ("checkpoint.npz", "history.csv", "report.json", "manifest.json"):
            assert (run / name).is_file()
        manifest = json.loads((run / "manifest.json").read_text())
        assert manifest["seed"] == 3 and manifest["config"]["dim"] == 8
        report = json.loads((run / "report.json").read_text())
        assert 0 < report["metrics"]["mrr"] <= 1
        out = tmp_path / "eval.json"
        assert main(["evaluate", "--checkpoint", str(run / "checkpoint.npz"), "--data", str(toy_dir),
                     "--out", str(out), "--ranks"]) == 0
        ev = json.loads(out.read_text())
        assert ev["metrics"]["mrr"] == report["metrics"]["mrr"]
        assert ev["filtered"] and len(ev["metrics"]["ranks"]) == ev["metrics"]["count"] // 2

    def test_identical_seed_identical_report(self, toy_dir, tmp_path):
        for name in ("a", "b"):
            assert main(["train", "--data", str(toy_dir), "--out", str(tmp_path / name), *FAST]) == 0
        assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()

    def test_missing_checkpoint(self, toy_dir, tmp_path, capsys):
        code = main(["evaluate", "--checkpoint", str(tmp_path / "none.npz"), "--data", str(toy_dir)])
        err = capsys.readouterr().err.strip().splitlines()
        assert code == 1 and len(err) == 1
        assert err[0].startswith("relatt: error: FileNotFoundError:") and "none.npz" in err[0]

    def test_bad_config_value(self, toy_dir, tmp_path, capsys):
        code = main(["train", "--data", str(toy_dir), "--out", str(tmp_path), "--set", "lr=fast"])
        err = capsys.readouterr().err
        assert code == 1 and "ConfigError" in err and "lr" in err

    def test_match_and_infer(self, tmp_path):
        fx = tmp_path / "fx"
        assert main(["make-fixture", "matching", "--out", str(fx), "--seed", "2"]) == 0
        run = tmp_path / "run"
        assert main(["train", "--data", str(fx / "reference"), "--out", str(run), *FAST]) == 0
        out = tmp_path / "match.json"
        assert main(["match", "--checkpoint", str(run / "checkpoint.npz"), "--reference", str(fx / "reference"),
                     "--queries", str(fx / "queries"), "--th", "0.2", "--out", str(out)]) == 0
        rep = json.loads(out.read_text())
        assert rep["th"] == 0.2 and rep["feature_only"] is False
        assert set(rep["report"]["hits"]) == {"1", "5", "10", "30"}
        q = rep["report"]["queries"][0]
        assert {"query", "ground_truth", "degree", "candidates"} <= set(q) and len(q["candidates"]) == 30
        emb = tmp_path / "emb.txt"
        assert main(["infer", "--checkpoint", str(run / "checkpoint.npz"),
                     "--graph", str(fx / "queries" / "q000"), "--out", str(emb)]) == 0
        assert emb.read_text().splitlines()[0].split()[1] == "8"

    def test_infer_rejects_trainable_model(self, toy_dir, tmp_path, capsys):
        run = tmp_path / "run"
        assert main(["train", "--data", str(toy_dir), "--out", str(run), *FAST]) == 0
        graph = tmp_path / "g"
        graph.mkdir()
        (graph / "triples.tsv").write_text("e0\tr0\te1\n")
        (graph / "features.txt").write_text("2 8\n" + "".join(f"e{i} " + " ".join(["0.1"] * 8) + "\n"
                                                             for i in range(2)))
        code = main(["infer", "--checkpoint", str(run / "checkpoint.npz"), "--graph", str(graph),
                     "--out", str(tmp_path / "o.txt")])
        assert code == 1 and "ModeError" in capsys.readouterr().err
