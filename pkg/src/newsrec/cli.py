"""Command line front end.

Subcommands: train, eval, predict, bench, analyze, synth. Model and
generator flags mirror the config dataclass fields with underscores
turned into hyphens. A file passed as --config holds one `key = value`
per line (# starts a comment, blank lines are fine, tuple fields are
comma-separated integers); its entries override any flags, so a saved
config file wins over whatever is on the command line.

Artifacts: train writes the checkpoint plus <out>.vocab (one token per
line, id order) and <out>.config (the resolved settings, readable back
through --config). eval prints a metrics JSON object. predict writes
one "impression_id [rank,rank,...]" line per impression. bench and
analyze print JSON reports.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench as nb
from . import data as nd
from . import metrics as mt
from . import model as nm
from .data import ConfigError, DataError, Vocabulary

log = logging.getLogger(__name__)

_TUPLE_FIELDS = {"dilations", "conv_channels"}
_FLOAT_FIELDS = {"threshold", "dropout", "lr", "beta1", "beta2",
                 "adam_eps", "distractor_ratio"}
_STR_FIELDS = {"mode"}
_BOOL_FIELDS = {"planted_at_front"}


def coerce(name, text):
    """Parse one settings value by field name."""
    text = str(text).strip()
    if name in _TUPLE_FIELDS:
        return tuple(int(x) for x in text.replace(",", " ").split())
    if name in _FLOAT_FIELDS:
        return float(text)
    if name in _STR_FIELDS:
        return text
    if name in _BOOL_FIELDS:
        low = text.lower()
        if low in ("1", "true", "yes"):
            return True
        if low in ("0", "false", "no"):
            return False
        raise ConfigError(f"{name} wants true or false, got {text!r}")
    return int(text)


def read_config_file(path):
    overrides = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        overrides[key.strip()] = value.strip()
    return overrides


def write_config_file(path, config):
    lines = []
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


def add_field_flags(parser, cls, skip=()):
    for f in dataclasses.fields(cls):
        if f.name in skip:
            continue
        parser.add_argument("--" + f.name.replace("_", "-"),
                            dest=f.name, default=None, metavar="V")


def settings_from(args, cls, skip=()):
    """Defaults, then flags, then the --config file; the file wins."""
    fields = {f.name: f for f in dataclasses.fields(cls)
              if f.name not in skip}
    out = {}
    for name, f in fields.items():
        if f.default is not dataclasses.MISSING:
            out[name] = f.default
    for name in fields:
        given = getattr(args, name, None)
        if given is not None:
            out[name] = coerce(name, given)
    cfg_file = getattr(args, "config", None)
    if cfg_file:
        for key, value in read_config_file(cfg_file).items():
            if key not in fields:
                raise ConfigError(f"unknown config key {key!r}")
            out[key] = coerce(key, value)
    return out


# ----------------------------------------------------------- subcommands


def cmd_train(args):
    settings = settings_from(args, nm.ModelConfig, skip=("vocab_size",))
    news, impressions, vocab = nd.load_split(
        args.news, args.behaviors,
        settings["title_len"], settings["max_history"])
    settings["vocab_size"] = len(vocab)
    config = nm.ModelConfig(**settings)
    samples = nd.build_samples(impressions, config.n_negatives, config.seed)
    params, report = nm.train(news, samples, config,
                              log_every=args.log_every)
    nm.save_checkpoint(args.out, config, params)
    vocab.save(str(args.out) + ".vocab")
    write_config_file(str(args.out) + ".config", config)
    print(json.dumps({
        "checkpoint": str(args.out),
        "n_samples": report.n_samples,
        "epoch_losses": [round(x, 6) for x in report.epoch_losses],
    }))


def _load_model(args):
    """Checkpoint, runtime overrides, vocabulary, data, news cache."""
    config, params = nm.load_checkpoint(args.checkpoint)
    overrides = {}
    for name in ("mode", "threshold", "batch_predict", "seed"):
        given = getattr(args, name, None)
        if given is not None:
            overrides[name] = coerce(name, given)
    if overrides:
        config = dataclasses.replace(config, **overrides)
    if getattr(args, "n_select", None) is not None:
        # phi's length depends on the budget, so this swaps in a fresh
        # untrained phi head; meant for throughput comparisons
        params, config = nb.with_selection_size(
            params, config, coerce("n_select", args.n_select))
    vocab = Vocabulary.load(args.vocab or str(args.checkpoint) + ".vocab")
    news, impressions, _ = nd.load_split(
        args.news, args.behaviors, config.title_len, config.max_history,
        vocab=vocab)
    cache = nm.build_news_cache(news, params, config)
    return config, params, news, impressions, cache


def cmd_eval(args):
    config, params, _, impressions, cache = _load_model(args)
    report = nb.evaluate_model(cache, impressions, params, config)
    text = json.dumps(report.as_dict())
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def cmd_predict(args):
    config, params, _, impressions, cache = _load_model(args)
    with open(args.out, "w", encoding="utf-8") as f:
        for imp in impressions:
            scores = nm.score_impression(
                cache, imp.history, [nid for nid, _ in imp.candidates],
                params, config)
            ranks = mt.ranks_from_scores(scores)
            f.write(f"{imp.impression_id} "
                    f"[{','.join(str(int(r)) for r in ranks)}]\n")
    print(json.dumps({"predictions": str(args.out),
                      "n_impressions": len(impressions)}))


def cmd_bench(args):
    config, params, _, impressions, cache = _load_model(args)
    rep = nb.run_benchmark(cache, impressions, params, config,
                           warmup=args.warmup, duration=args.duration,
                           threads=args.threads)
    out = rep.as_dict()
    out["interaction_madds"] = nb.interaction_madds(config)
    print(json.dumps(out))


def cmd_analyze(args):
    config, params, _, impressions, cache = _load_model(args)
    prof = nb.informativeness_profile(cache, impressions, params, config)
    nb.save_profile_csv(prof, args.out_csv)
    nb.plot_profile(prof, args.out_plot)
    result = {"profile_csv": str(args.out_csv),
              "profile_plot": str(args.out_plot)}
    if args.planted:
        planted = nd.load_planted_tsv(args.planted)
        result["selector_precision"] = nb.selector_precision(
            cache, impressions, planted, params, config)
    if args.thresholds:
        sweep = []
        for g in (float(x) for x in
                  args.thresholds.replace(",", " ").split()):
            swept = dataclasses.replace(config, threshold=g)
            rep = nb.evaluate_model(cache, impressions, params, swept)
            sweep.append({"threshold": g, **rep.as_dict()})
        result["threshold_sweep"] = sweep
    print(json.dumps(result))


def cmd_synth(args):
    settings = settings_from(args, nd.SyntheticConfig)
    cfg = nd.SyntheticConfig(**settings)
    data = nd.generate_synthetic(cfg, np.random.default_rng(args.seed))
    train_dir, eval_dir = nd.emit_dataset(data, args.out)
    print(json.dumps({
        "train_dir": str(train_dir), "eval_dir": str(eval_dir),
        "n_news": len(data.news), "n_train": len(data.train),
        "n_eval": len(data.eval),
    }))


# ---------------------------------------------------------------- parser


def _data_flags(p, with_checkpoint=True):
    if with_checkpoint:
        p.add_argument("--checkpoint", required=True,
                       help="model file written by train")
        p.add_argument("--vocab", default=None,
                       help="token list from train time "
                            "(default: <checkpoint>.vocab)")
    p.add_argument("--news", required=True, help="news.tsv path")
    p.add_argument("--behaviors", required=True, help="behaviors.tsv path")


def _override_flags(p):
    p.add_argument("--mode", default=None, metavar="V",
                   help="selective or recent")
    p.add_argument("--threshold", default=None, metavar="V")
    p.add_argument("--batch-predict", dest="batch_predict", default=None,
                   metavar="V")
    p.add_argument("--seed", default=None, metavar="V")
    p.add_argument("--n-select", dest="n_select", default=None, metavar="V",
                   help="selection budget; swaps in a fresh untrained "
                        "phi head sized for it")


def build_parser():
    p = argparse.ArgumentParser(
        prog="newsrec",
        description="News recommendation with learned history selection "
                    "and word-level matching: train, evaluate, predict, "
                    "benchmark, analyze, and generate synthetic data.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train and write a checkpoint")
    _data_flags(t, with_checkpoint=False)
    t.add_argument("--out", required=True, help="checkpoint path to write")
    t.add_argument("--config", default=None,
                   help="key = value settings file; overrides flags")
    t.add_argument("--log-every", dest="log_every", type=int, default=0,
                   help="log running loss every N batches")
    add_field_flags(t, nm.ModelConfig, skip=("vocab_size",))
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="rank labeled impressions, print "
                                    "metrics JSON")
    _data_flags(e)
    _override_flags(e)
    e.add_argument("--out", default=None, help="also write the JSON here")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="write submission-style ranks")
    _data_flags(r)
    _override_flags(r)
    r.add_argument("--out", required=True, help="predictions file to write")
    r.set_defaults(func=cmd_predict)

    b = sub.add_parser("bench", help="measure scoring throughput")
    _data_flags(b)
    _override_flags(b)
    b.add_argument("--warmup", type=float, default=5.0,
                   help="seconds discarded before timing")
    b.add_argument("--duration", type=float, default=30.0,
                   help="seconds of timed iterations")
    b.add_argument("--threads", type=int, default=1,
                   help="scoring threads; >1 is reported as its own "
                        "configuration")
    b.set_defaults(func=cmd_bench)

    a = sub.add_parser("analyze", help="informativeness profile, "
                                       "optional precision and "
                                       "threshold sweep")
    _data_flags(a)
    _override_flags(a)
    a.add_argument("--out-csv", dest="out_csv", default="profile.csv")
    a.add_argument("--out-plot", dest="out_plot", default="profile.png")
    a.add_argument("--planted", default=None,
                   help="planted.tsv sidecar; adds selector precision")
    a.add_argument("--thresholds", default=None, metavar="G1,G2,...",
                   help="also evaluate at these gate thresholds")
    a.set_defaults(func=cmd_analyze)

    s = sub.add_parser("synth", help="generate a planted-interest dataset")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", default=None,
                   help="key = value settings file; overrides flags")
    add_field_flags(s, nd.SyntheticConfig)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, DataError, nm.CheckpointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
