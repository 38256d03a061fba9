import shutil
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from topicrec.cli import main
from topicrec.config import file_sha256
from topicrec.metrics import ScoredImpression
from topicrec.model import RecommenderModel

CONFIG_TEMPLATE = """
[data]
news = "data/news.tsv"
bodies = "data/bodies.tsv"
train_behaviors = "data/train_behaviors.tsv"
valid_behaviors = "data/val_behaviors.tsv"
test_behaviors = "data/test_behaviors.tsv"
output_dir = "out"

[model]
n_topics = 3
embedding_dim = 10
projection_dim = 8
pool_dim = 8
user_dim = 8
n_title = 4
n_body = 10
history_limit = 8

[train]
epochs = 2
batch_size = 16

[coherence]
descriptors = 4
min_df = 2
max_df_frac = 0.9

[synthetic]
n_news = 40
n_users = 8
keywords_per_topic = 6
title_tokens = 3
body_tokens = 8
rare_vocab = 20
rare_per_article = 1
history_per_user = 6
train_per_user = 4
valid_per_user = 1
test_per_user = 1

[run]
seed = 11
"""


def run_cli(args, **kwargs):
    return CliRunner().invoke(main, args, catch_exceptions=False, **kwargs)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth-data + train once; commands under test read the artifacts."""
    root = tmp_path_factory.mktemp("cliws")
    config = root / "run.toml"
    config.write_text(CONFIG_TEMPLATE.replace(
        "train_per_user = 4",
        "train_impressions_per_user = 4").replace(
        "valid_per_user = 1",
        "val_impressions_per_user = 1").replace(
        "test_per_user = 1",
        "test_impressions_per_user = 1"), encoding="utf-8")
    synth = run_cli(["synth-data", "--config", str(config),
                     "--out-dir", str(root / "data")])
    assert synth.exit_code == 0, synth.output
    trained = run_cli(["train", "--config", str(config)])
    assert trained.exit_code == 0, trained.output
    return root, config


def test_synth_data_writes_all_splits(workspace):
    root, _ = workspace
    for name in ("news.tsv", "bodies.tsv", "train_behaviors.tsv",
                 "val_behaviors.tsv", "test_behaviors.tsv"):
        assert (root / "data" / name).exists()


def test_train_writes_checkpoint_report_and_manifest(workspace):
    root, _ = workspace
    assert (root / "out/checkpoints/model.ckpt").exists()
    report = (root / "out/reports/train_report.txt").read_text()
    assert "best_epoch\t" in report
    manifest = (root / "out/reports/run_manifest.json").read_text()
    assert '"config_hash"' in manifest
    assert '"news"' in manifest


def test_train_never_mutates_inputs(workspace):
    root, config = workspace
    before = {p.name: file_sha256(p) for p in (root / "data").iterdir()}
    result = run_cli(["train", "--config", str(config)])
    assert result.exit_code == 0
    after = {p.name: file_sha256(p) for p in (root / "data").iterdir()}
    assert before == after


def test_train_is_bit_deterministic(workspace):
    root, config = workspace
    out = root / "out"
    first_ckpt = (out / "checkpoints/model.ckpt").read_bytes()
    first_report = (out / "reports/train_report.txt").read_bytes()
    first_manifest = (out / "reports/run_manifest.json").read_bytes()
    shutil.rmtree(out)
    result = run_cli(["train", "--config", str(config)])
    assert result.exit_code == 0
    assert (out / "checkpoints/model.ckpt").read_bytes() == first_ckpt
    assert (out / "reports/train_report.txt").read_bytes() == first_report
    assert (out / "reports/run_manifest.json").read_bytes() == first_manifest


def test_evaluate_prints_four_percent_metrics(workspace):
    root, config = workspace
    result = run_cli(["evaluate", "--config", str(config)])
    assert result.exit_code == 0, result.output
    header, row = result.stdout.strip().split("\n")
    assert header == "AUC\tMRR\tNDCG@5\tNDCG@10"
    values = [float(v) for v in row.split("\t")]
    assert len(values) == 4
    assert all(0.0 <= v <= 100.0 for v in values)
    assert all(f"{v:.2f}" == row.split("\t")[i]
               for i, v in enumerate(values))
    assert (root / "out/reports/eval_test.tsv").exists()


def test_evaluate_is_repeatable(workspace):
    _, config = workspace
    a = run_cli(["evaluate", "--config", str(config), "--split", "valid"])
    b = run_cli(["evaluate", "--config", str(config), "--split", "valid"])
    assert a.exit_code == b.exit_code == 0
    assert a.stdout == b.stdout


def test_evaluate_with_oracle_scorer_scores_100(workspace, monkeypatch):
    _, config = workspace

    def oracle(self, table, logs, chunk_size=256):
        return [ScoredImpression(
            scores=np.array([float(lab) for _, lab in log.candidates]),
            labels=np.array([lab for _, lab in log.candidates]))
            for log in logs]

    monkeypatch.setattr(RecommenderModel, "score_impressions", oracle)
    result = run_cli(["evaluate", "--config", str(config)])
    assert result.exit_code == 0
    row = result.stdout.strip().split("\n")[1]
    assert row == "100.00\t100.00\t100.00\t100.00"


def test_evaluate_vocabulary_mismatch_exits_5(workspace, tmp_path):
    root, config = workspace
    alien = tmp_path / "news.tsv"
    lines = (root / "data/news.tsv").read_text().strip().split("\n")
    lines.append("NX999\tcat\tsub\tbrand new unseen words everywhere\t\t")
    alien.write_text("\n".join(lines) + "\n", encoding="utf-8")
    result = run_cli(["evaluate", "--config", str(config),
                      "--set", f"data.news={alien}",
                      "--set", "data.bodies="])
    assert result.exit_code == 5
    assert "CompatibilityError" in result.output


def test_missing_behaviors_file_exits_3(workspace):
    _, config = workspace
    result = run_cli(["train", "--config", str(config),
                      "--set", "data.train_behaviors=nowhere.tsv"])
    assert result.exit_code == 3


def test_unknown_config_key_exits_2(workspace):
    _, config = workspace
    result = run_cli(["train", "--config", str(config),
                      "--set", "model.bogus=1"])
    assert result.exit_code == 2
    assert "ConfigError" in result.output


def test_topics_writes_descriptor_table(workspace):
    root, config = workspace
    result = run_cli(["topics", "--config", str(config)])
    assert result.exit_code == 0, result.output
    table = (root / "out/topics/descriptors.tsv").read_text()
    lines = table.strip().split("\n")
    assert lines[0] == "topic_id\trank\ttoken\tweight"
    assert len(lines) == 1 + 3 * 4  # K topics x M descriptors
    topic_ids = {line.split("\t")[0] for line in lines[1:]}
    assert topic_ids == {"0", "1", "2"}


def test_coherence_emits_both_labeled_summaries(workspace):
    root, config = workspace
    result = run_cli(["coherence", "--config", str(config)])
    assert result.exit_code == 0, result.output
    lines = result.stdout.strip().split("\n")
    assert lines[0].startswith("Without-PP\t")
    assert lines[1].startswith("PP-4\t")
    for line in lines[:2]:
        assert "npmi_mean=" in line and "w2v_top_mean=" in line
    assert (root / "out/topics/coherence_without_pp.tsv").exists()
    assert (root / "out/topics/coherence_pp_4.tsv").exists()


def test_explain_writes_default_and_requested_formats(workspace):
    root, config = workspace
    result = run_cli(["explain", "--config", str(config)])
    assert result.exit_code == 0, result.output
    path = Path(result.stdout.strip().split("\n")[-1])
    assert path.suffix == ".txt" and path.exists()
    assert "ranked candidates:" in path.read_text()
    html = run_cli(["explain", "--config", str(config), "--format", "html"])
    assert html.exit_code == 0
    assert Path(html.stdout.strip().split("\n")[-1]).suffix == ".html"


def test_explain_unknown_impression_exits_3(workspace):
    _, config = workspace
    result = run_cli(["explain", "--config", str(config),
                      "--impression", "no-such-id"])
    assert result.exit_code == 3


def test_explain_rejects_recurrent_checkpoints(workspace, tmp_path):
    _, config = workspace
    out = tmp_path / "gru_out"
    result = run_cli(["train", "--config", str(config),
                      "--set", "model.variant=GRU",
                      "--set", "train.epochs=0",
                      "--set", f"data.output_dir={out}"])
    assert result.exit_code == 0, result.output
    explain = run_cli(["explain", "--config", str(config),
                       "--set", "model.variant=GRU",
                       "--set", f"data.output_dir={out}"])
    assert explain.exit_code == 5
    assert "VariantUnsupportedError" in explain.output


def test_full_pipeline_smoke_exits_zero(tmp_path):
    config = tmp_path / "run.toml"
    config.write_text(CONFIG_TEMPLATE.replace(
        "train_per_user = 4",
        "train_impressions_per_user = 2").replace(
        "valid_per_user = 1",
        "val_impressions_per_user = 1").replace(
        "test_per_user = 1",
        "test_impressions_per_user = 1").replace(
        "epochs = 2", "epochs = 1").replace(
        "n_news = 40", "n_news = 25"), encoding="utf-8")
    for args in (["synth-data", "--config", str(config),
                  "--out-dir", str(tmp_path / "data")],
                 ["train", "--config", str(config)],
                 ["evaluate", "--config", str(config)]):
        result = run_cli(args)
        assert result.exit_code == 0, (args, result.output)
