"""End-to-end command-line pipeline on a miniature dataset."""

import json
import os
from pathlib import Path

import numpy as np
import pytest

from par.cli import main
from par.config import load_config, parse_config_text
from par.errors import ConfigError

TINY_CONFIG = """\
# miniature run for pipeline tests
n = 2
m = 4
t = 4
themes = 4
items_per_theme = 12
true_dim = 8
pos_per_list = 2
user_themes = 3
train_pages = 48
test_pages = 12
d_x = 8
d_h = 8
d_a = 4
d_o = 8
d_r = 8
heads = 2
experts = 2
expert_hidden = 16,8
tower_hidden = 8
dense_hidden = 8
batch_size = 32
epochs = 2
learning_rate = 0.001
ablate_seeds = 1
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "tiny.cfg"
    config.write_text(TINY_CONFIG)
    data = root / "data" / "pages"
    data.parent.mkdir()
    assert main(["gen-data", "--config", str(config), "--out", str(data)]) == 0
    return root, config, data


class TestConfigFile:
    def test_parses_types(self):
        config = parse_config_text(TINY_CONFIG)
        assert config.n == 2
        assert config.expert_hidden == (16, 8)
        assert config.learning_rate == 0.001

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="not_a_key"):
            parse_config_text("not_a_key = 3\n")

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError, match="epochs"):
            parse_config_text("epochs = soon\n")

    def test_malformed_line_rejected(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config_text("just some words\n")

    def test_comments_and_blanks_ignored(self):
        config = parse_config_text("# comment\n\nseed = 9\n")
        assert config.seed == 9


class TestGenData:
    def test_writes_three_files(self, workspace):
        root, config, data = workspace
        assert data.with_name("pages.train.jsonl").exists()
        assert data.with_name("pages.test.jsonl").exists()
        assert data.with_name("pages.catalog.json").exists()

    def test_page_counts(self, workspace):
        root, config, data = workspace
        train_lines = data.with_name("pages.train.jsonl").read_text().strip().split("\n")
        test_lines = data.with_name("pages.test.jsonl").read_text().strip().split("\n")
        assert len(train_lines) == 48
        assert len(test_lines) == 12

    def test_deterministic_bytes(self, workspace, tmp_path):
        root, config, data = workspace
        again = tmp_path / "pages"
        assert main(["gen-data", "--config", str(config), "--out", str(again)]) == 0
        for suffix in (".train.jsonl", ".test.jsonl", ".catalog.json"):
            a = data.with_name("pages" + suffix).read_bytes()
            b = again.with_name("pages" + suffix).read_bytes()
            assert a == b, suffix

    def test_record_fields(self, workspace):
        root, config, data = workspace
        line = data.with_name("pages.train.jsonl").read_text().split("\n")[0]
        record = json.loads(line)
        assert set(record) == {"user", "history", "lists"}
        for lst in record["lists"]:
            assert set(lst) == {"theme", "items", "rel", "init_order", "clicks", "probs"}


@pytest.fixture(scope="module")
def checkpoint(workspace):
    root, config, data = workspace
    out = root / "model.ckpt"
    assert main(["train", "--config", str(config), "--data", str(data),
                 "--out", str(out)]) == 0
    return out


class TestTrainEvalRerank:

    def test_train_writes_checkpoint(self, checkpoint):
        assert checkpoint.exists()

    def test_eval_writes_tables(self, workspace, checkpoint, monkeypatch):
        root, config, data = workspace
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
        out = root / "report"
        assert main(["eval", "--checkpoint", str(checkpoint), "--data", str(data),
                     "--out", str(out)]) == 0
        csv = (root / "report.csv").read_text()
        lines = csv.strip().split("\n")
        assert lines[0] == "system,utility,sctr,sctr_h1,sctr_h2,ndcg,map,seed,timestamp"
        systems = [line.split(",")[0] for line in lines[1:]]
        assert systems == ["INIT", "PAR"]
        payload = json.loads((root / "report.json").read_text())
        assert [row["system"] for row in payload] == ["INIT", "PAR"]

    def test_rerank_emits_permutations(self, workspace, checkpoint):
        root, config, data = workspace
        out = root / "perms.jsonl"
        assert main(["rerank", "--checkpoint", str(checkpoint), "--data", str(data),
                     "--out", str(out)]) == 0
        lines = out.read_text().strip().split("\n")
        assert len(lines) == 12
        for line in lines:
            record = json.loads(line)
            assert set(record) == {"user", "permutations"}
            for perm in record["permutations"]:
                assert sorted(perm) == list(range(4))

    def test_train_deterministic(self, workspace, checkpoint):
        root, config, data = workspace
        out = root / "model2.ckpt"
        assert main(["train", "--config", str(config), "--data", str(data),
                     "--out", str(out)]) == 0
        assert out.read_bytes() == checkpoint.read_bytes()

    def test_eval_deterministic_tables(self, workspace, checkpoint, monkeypatch):
        root, config, data = workspace
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
        for name in ("rep_a", "rep_b"):
            assert main(["eval", "--checkpoint", str(checkpoint), "--data", str(data),
                         "--out", str(root / name)]) == 0
        assert (root / "rep_a.csv").read_bytes() == (root / "rep_b.csv").read_bytes()
        assert (root / "rep_a.json").read_bytes() == (root / "rep_b.json").read_bytes()


class TestGradcheckCommand:
    def test_passes_with_default_tiny_config(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out
        assert "emb.item" in out


class TestAblateCommand:
    def test_two_variants_three_data_rows_per_seed(self, workspace, monkeypatch, capsys):
        root, config, data = workspace
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
        out = root / "ablation"
        assert main(["ablate", "--config", str(config), "--data", str(data),
                     "--variants", "PAR-DN,PAR-MMoE", "--out", str(out)]) == 0
        csv_lines = (root / "ablation.csv").read_text().strip().split("\n")
        rows = [line.split(",") for line in csv_lines[1:]]
        data_rows = [r for r in rows if r[-2] not in ("mean", "std")]
        assert len(data_rows) == 3  # PAR + 2 variants, 1 seed each
        assert {r[0] for r in data_rows} == {"PAR", "PAR-DN", "PAR-MMoE"}
        agg_rows = [r for r in rows if r[-2] in ("mean", "std")]
        assert len(agg_rows) == 6

    def test_identical_seed_identical_tables(self, workspace, monkeypatch):
        root, config, data = workspace
        monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
        for name in ("abl_a", "abl_b"):
            assert main(["ablate", "--config", str(config), "--data", str(data),
                         "--variants", "PAR-DN", "--out", str(root / name)]) == 0
        assert (root / "abl_a.csv").read_bytes() == (root / "abl_b.csv").read_bytes()

    def test_unknown_variant_rejected(self, workspace, capsys):
        root, config, data = workspace
        code = main(["ablate", "--config", str(config), "--data", str(data),
                     "--variants", "PAR-XXL", "--out", str(root / "bad")])
        assert code == 1
        err = capsys.readouterr().err
        assert err.startswith("error: ConfigError:")
        assert "\n" not in err.strip("\n") or err.count("\n") == 1


class TestErrorSurface:
    def test_missing_data_single_line_error(self, tmp_path, capsys):
        code = main(["train", "--data", str(tmp_path / "nope"), "--out",
                     str(tmp_path / "x.ckpt")])
        assert code == 1
        err = capsys.readouterr().err.strip()
        assert err.startswith("error: ConfigError:")
        assert "\n" not in err
