"""End-to-end command line tests: synth -> train -> eval/predict/bench/
analyze on a tiny dataset, plus the settings-file precedence rules."""

import json
import re

import pytest

from newsrec import cli
from newsrec import data as nd
from newsrec import model as nm


TINY_MODEL_FLAGS = [
    "--embed-dim", "3", "--title-len", "4", "--max-history", "4",
    "--n-levels", "2", "--dilations", "1,2", "--n-filters", "4",
    "--n-select", "2", "--threshold", "0.1", "--sel-dim", "3",
    "--conv-channels", "2", "--dropout", "0", "--n-negatives", "2",
    "--lr", "1e-3", "--n-epochs", "1", "--batch-train", "4",
    "--batch-predict", "6", "--seed", "7",
]

SYNTH_FLAGS = [
    "--n-topics", "12", "--tokens-per-topic", "8",
    "--n-users", "5", "--topics-per-user", "2",
    "--history-len", "4", "--distractor-ratio", "0.5",
    "--title-tokens", "3", "--min-shared", "2",
    "--n-train", "8", "--n-eval", "5",
    "--train-negatives", "2", "--eval-negatives", "3",
    "--distractor-topics", "2", "--negative-topics", "2",
    "--news-per-topic", "4",
]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--out", str(out), "--seed", "3",
                     *SYNTH_FLAGS]) == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "model.ckpt"
    rc = cli.main([
        "train",
        "--news", str(dataset / "train" / "news.tsv"),
        "--behaviors", str(dataset / "train" / "behaviors.tsv"),
        "--out", str(out), *TINY_MODEL_FLAGS,
    ])
    assert rc == 0
    return out


def eval_args(checkpoint, dataset):
    return ["--checkpoint", str(checkpoint),
            "--news", str(dataset / "eval" / "news.tsv"),
            "--behaviors", str(dataset / "eval" / "behaviors.tsv")]


def test_synth_writes_both_splits(dataset):
    for split in ("train", "eval"):
        for name in ("news.tsv", "behaviors.tsv", "planted.tsv"):
            assert (dataset / split / name).exists()
    planted = nd.load_planted_tsv(dataset / "eval" / "planted.tsv")
    assert len(planted) == 5
    assert all(p >= 0 for pos in planted.values() for p in pos)


def test_train_writes_checkpoint_vocab_and_config(checkpoint):
    config, params = nm.load_checkpoint(checkpoint)
    assert config.n_filters == 4
    vocab = nd.Vocabulary.load(str(checkpoint) + ".vocab")
    assert len(vocab) == config.vocab_size
    saved = cli.read_config_file(str(checkpoint) + ".config")
    rebuilt = nm.ModelConfig(
        **{k: cli.coerce(k, v) for k, v in saved.items()})
    assert rebuilt == config


def test_eval_prints_metrics_json(checkpoint, dataset, tmp_path, capsys):
    out = tmp_path / "metrics.json"
    rc = cli.main(["eval", *eval_args(checkpoint, dataset),
                   "--out", str(out)])
    assert rc == 0
    got = json.loads(capsys.readouterr().out)
    assert set(got) == {"auc", "mrr", "ndcg5", "ndcg10",
                        "n_impressions", "n_skipped"}
    assert got["n_impressions"] == 5
    assert json.loads(out.read_text()) == got


def test_predict_writes_rank_lines(checkpoint, dataset, tmp_path):
    out = tmp_path / "predictions.txt"
    rc = cli.main(["predict", *eval_args(checkpoint, dataset),
                   "--out", str(out)])
    assert rc == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 5
    for line in lines:
        m = re.fullmatch(r"(\S+) \[(\d+(?:,\d+)*)\]", line)
        assert m, line
        ranks = sorted(int(r) for r in m.group(2).split(","))
        assert ranks == list(range(1, len(ranks) + 1))


def test_bench_reports_throughput(checkpoint, dataset, capsys):
    rc = cli.main(["bench", *eval_args(checkpoint, dataset),
                   "--warmup", "0.01", "--duration", "0.03"])
    assert rc == 0
    got = json.loads(capsys.readouterr().out)
    assert got["candidates_per_s"] > 0
    assert got["interaction_madds"] > 0
    assert got["mode"] == "selective"


def test_bench_recent_mode_and_budget_swap(checkpoint, dataset, capsys):
    rc = cli.main(["bench", *eval_args(checkpoint, dataset),
                   "--mode", "recent", "--n-select", "3",
                   "--warmup", "0.01", "--duration", "0.03"])
    assert rc == 0
    got = json.loads(capsys.readouterr().out)
    assert got["mode"] == "recent"
    assert got["n_select"] == 3


def test_analyze_profile_precision_and_sweep(checkpoint, dataset,
                                             tmp_path, capsys):
    csv_path = tmp_path / "prof.csv"
    png_path = tmp_path / "prof.png"
    rc = cli.main(["analyze", *eval_args(checkpoint, dataset),
                   "--out-csv", str(csv_path), "--out-plot", str(png_path),
                   "--planted", str(dataset / "eval" / "planted.tsv"),
                   "--thresholds", "0.0,1.0"])
    assert rc == 0
    got = json.loads(capsys.readouterr().out)
    assert 0.0 <= got["selector_precision"] <= 1.0
    assert [s["threshold"] for s in got["threshold_sweep"]] == [0.0, 1.0]
    assert csv_path.read_text().count("\n") == 1 + 4   # header + positions
    assert png_path.stat().st_size > 0


def test_config_file_overrides_flags(dataset, tmp_path):
    cfg_file = tmp_path / "settings.cfg"
    cfg_file.write_text("n_filters = 3   # file beats the flag\n")
    out = tmp_path / "m.ckpt"
    rc = cli.main([
        "train",
        "--news", str(dataset / "train" / "news.tsv"),
        "--behaviors", str(dataset / "train" / "behaviors.tsv"),
        "--out", str(out), *TINY_MODEL_FLAGS,
        "--n-filters", "5", "--config", str(cfg_file),
    ])
    assert rc == 0
    config, _ = nm.load_checkpoint(out)
    assert config.n_filters == 3


def test_unknown_config_key_is_an_error(dataset, tmp_path, capsys):
    cfg_file = tmp_path / "settings.cfg"
    cfg_file.write_text("wat = 3\n")
    rc = cli.main([
        "train",
        "--news", str(dataset / "train" / "news.tsv"),
        "--behaviors", str(dataset / "train" / "behaviors.tsv"),
        "--out", str(tmp_path / "m.ckpt"), *TINY_MODEL_FLAGS,
        "--config", str(cfg_file),
    ])
    assert rc == 2
    assert "wat" in capsys.readouterr().err


def test_bad_mode_override_is_an_error(checkpoint, dataset, capsys):
    rc = cli.main(["eval", *eval_args(checkpoint, dataset),
                   "--mode", "newest"])
    assert rc == 2
    assert "mode" in capsys.readouterr().err


def test_config_file_roundtrip(tmp_path):
    cfg = nm.ModelConfig(vocab_size=30, embed_dim=5, dilations=(1, 2, 4),
                         threshold=0.35, lr=2e-3, conv_channels=(3,),
                         dropout=0.0)
    path = tmp_path / "resolved.cfg"
    cli.write_config_file(path, cfg)
    saved = cli.read_config_file(path)
    rebuilt = nm.ModelConfig(
        **{k: cli.coerce(k, v) for k, v in saved.items()})
    assert rebuilt == cfg
