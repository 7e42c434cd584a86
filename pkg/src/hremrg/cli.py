"""Command-line entry point.

    hremrg [--config FILE] [--seed N] [--out DIR] <command> [options]

Every command writes its outputs under ``--out`` (default ``.``) atomically,
and identical inputs give byte-identical files.  Exit status is 0 on
success, 1 on a usage error and 2 on a data error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from importlib.resources import files
from pathlib import Path

from . import tensor as T
from .corpus import load_examples, make_toy_corpus, read_config, read_manifest
from .decoding import beam_search, greedy_decode
from .errors import HremrgError, ScorerFailure
from .metrics import METRIC_NAMES, MetricWeights, corpus_scores, score_report
from .model import ModelConfig, ReportModel
from .search import LookupScorer, PipelineScorer, evaluation_budget, greedy_weight_search, grid_search_oracle
from .trainer import TrainConfig, content, train
from .vocab import Vocab, build_vocab

log = logging.getLogger("hremrg")

# key -> (type, default); all keys may appear in the --config file
SETTINGS = {
    "d_model": (int, 1024),
    "depth": (int, 4),
    "d_bilinear": (int, None),
    "max_len": (int, 114),
    "beam": (int, 2),
    "min_count": (int, 5),
    "epochs": (int, 60),
    "base_lr": (float, None),
    "warmup": (int, 10_000),
    "batch_size": (int, None),
    "cosine_period": (int, 15),
    "min_lr": (float, 4e-8),
    "schedule": (str, None),
    "weights": (MetricWeights.parse, MetricWeights.ones()),
    "penalty": (lambda s: s.lower() in ("1", "true", "yes", "on"), True),
}
TRAIN_KEYS = ("epochs", "base_lr", "warmup", "batch_size", "cosine_period", "min_lr", "schedule", "weights",
              "beam", "penalty")
LOOKUP_TABLE = "three_metric_grid.csv"
GLOBAL_DEFAULTS = {"config": None, "seed": 0, "out": "."}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _settings(args):
    out = {k: default for k, (_, default) in SETTINGS.items()}
    if args.config:
        for key, value in read_config(args.config).items():
            if key not in SETTINGS:
                raise UsageError(f"unknown config key {key!r}")
            try:
                out[key] = SETTINGS[key][0](value)
            except (ValueError, HremrgError) as exc:
                raise UsageError(f"config key {key}: {exc}") from None
    for key in ("epochs", "weights", "beam", "min_count"):
        if getattr(args, key, None) is not None:
            out[key] = args.__dict__[key]
    return out


def _atomic_write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def _train_config(phase, s, seed):
    return TrainConfig(phase=phase, seed=seed, **{k: s[k] for k in TRAIN_KEYS})


def _load_model(path, s):
    return ReportModel.from_arrays(T.load_checkpoint(path), s["max_len"], s["beam"])


# ------------------------------------------------------------------ commands

def cmd_make_toy(args, s):
    make_toy_corpus(args.out, args.examples, args.vocab_size, args.regions, args.dim, args.seed, args.report_len)
    print(Path(args.out) / "manifest.jsonl")


def cmd_build_vocab(args, s):
    reports = [r.report for r in read_manifest(args.manifest) if r.split == "train"]
    vocab = build_vocab(reports, s["min_count"])
    path = Path(args.out) / "vocab.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    vocab.save(path)
    print(f"{path}: {len(vocab)} entries")


def _data(args, s, split):
    vocab = Vocab.load(args.vocab)
    return vocab, load_examples(args.manifest, vocab, s["max_len"], split)


def cmd_pretrain(args, s):
    vocab, train_ex = _data(args, s, "train")
    _, val_ex = _data(args, s, "val")
    if not train_ex:
        raise HremrgError("manifest has no training records")
    config = ModelConfig(len(vocab), train_ex[0].bundle.width, s["d_model"], s["depth"], s["max_len"], s["beam"],
                         s["d_bilinear"])
    model = ReportModel.initialize(config, args.seed)
    result = train(model, train_ex, val_ex, _train_config("xent", s, args.seed), args.out, "xent")
    print(f"best score_sum {result.best_score}")


def cmd_scst(args, s):
    _, train_ex = _data(args, s, "train")
    _, val_ex = _data(args, s, "val")
    model = _load_model(args.init, s)
    result = train(model, train_ex, val_ex, _train_config("scst", s, args.seed), args.out, "scst")
    print(f"best score_sum {result.best_score}")


def _active_slots(names):
    slots = []
    for name in names.split(","):
        if name.strip() not in METRIC_NAMES:
            raise UsageError(f"unknown metric {name!r}; choose from {', '.join(METRIC_NAMES)}")
        slots.append(METRIC_NAMES.index(name.strip()))
    return sorted(slots)


def cmd_search_weights(args, s):
    if args.table is not None:
        table = files("hremrg").joinpath("data", LOOKUP_TABLE) if args.table == "builtin" else args.table
        scorer = LookupScorer.from_file(table)
        if args.metrics:
            scorer.active = tuple(_active_slots(args.metrics))
        mode = "lookup"
    else:
        if not (args.manifest and args.vocab and args.init):
            raise UsageError("pipeline mode needs --manifest, --vocab and --init (or pass --table)")
        _, train_ex = _data(args, s, "train")
        _, val_ex = _data(args, s, "val")
        arrays = T.load_checkpoint(args.init)
        scorer = PipelineScorer(lambda: ReportModel.from_arrays(arrays, s["max_len"], s["beam"]), train_ex, val_ex,
                                _train_config("scst", s, args.seed),
                                _active_slots(args.metrics) if args.metrics else range(len(METRIC_NAMES)))
        mode = "pipeline"
    m = scorer.m
    try:
        weights, trace = greedy_weight_search(scorer, m, args.n)
    except ScorerFailure as exc:
        _atomic_write(Path(args.out) / "search_partial.json",
                      json.dumps(exc.trace.to_dict(scorer.label), indent=1, sort_keys=True) + "\n")
        raise
    report = {"mode": mode, "m": m, "n": args.n, "budget": evaluation_budget(m, args.n),
              "weights": scorer.label(weights), "greedy": trace.to_dict(scorer.label)}
    if args.grid:
        g_weights, g_trace = grid_search_oracle(scorer, m, args.n)
        report["grid"] = {**g_trace.to_dict(scorer.label), "weights": scorer.label(g_weights)}
    _atomic_write(Path(args.out) / "search.json", json.dumps(report, indent=1, sort_keys=True) + "\n")
    print(report["weights"])


def cmd_generate(args, s):
    vocab, examples = _data(args, s, args.split)
    model = _load_model(args.ckpt, s)
    rows = []
    for ex in examples:
        if s["beam"] == 1:
            tokens = greedy_decode(model, ex.bundle, penalty=s["penalty"])
        else:
            tokens = beam_search(model, ex.bundle, s["beam"], penalty=s["penalty"])
        rows.append({"id": ex.id, "tokens": tokens, "text": vocab.detokenize(tokens)})
    path = Path(args.out) / "generated.jsonl"
    _atomic_write(path, "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in rows))
    print(f"{path}: {len(rows)} reports")


def cmd_score(args, s):
    _, examples = _data(args, s, args.split)
    refs = {ex.id: ex.refs for ex in examples}
    ids, candidates = [], []
    for lineno, line in enumerate(Path(args.generated).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        row = json.loads(line)
        if row.get("id") not in refs:
            raise HremrgError(f"{args.generated}:{lineno}: id {row.get('id')!r} not in the {args.split} split")
        ids.append(row["id"])
        candidates.append(content(row["tokens"]))
    per, agg = corpus_scores(candidates, [refs[i] for i in ids])
    path = Path(args.out) / "scores.json"
    _atomic_write(path, score_report(ids, per, agg))
    print(json.dumps(agg.as_dict(), sort_keys=True))


# ------------------------------------------------------------------ parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="flat key=value settings file")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")

    p = _Parser(prog="hremrg", description="Medical report generation with hybrid-reward fine-tuning.",
                parents=[common])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def data_args(sp, need=("manifest", "vocab")):
        for name in need:
            sp.add_argument(f"--{name}", required=True)

    sp = sub.add_parser("make-toy", parents=[common], help="write a synthetic corpus")
    sp.add_argument("--examples", type=int, default=10)
    sp.add_argument("--vocab-size", type=int, default=20)
    sp.add_argument("--regions", type=int, default=4)
    sp.add_argument("--dim", type=int, default=16)
    sp.add_argument("--report-len", type=int, default=3)
    sp.set_defaults(func=cmd_make_toy)

    sp = sub.add_parser("build-vocab", parents=[common], help="vocabulary from the training split")
    data_args(sp, ("manifest",))
    sp.add_argument("--min-count", dest="min_count", type=int)
    sp.set_defaults(func=cmd_build_vocab)

    sp = sub.add_parser("pretrain", parents=[common], help="cross-entropy training")
    data_args(sp)
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("scst", parents=[common], help="self-critical fine-tuning")
    data_args(sp)
    sp.add_argument("--init", required=True, help="pretrained checkpoint")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--weights", type=MetricWeights.parse, help="reward weights, e.g. 1:1:1:1:1:1:1")
    sp.set_defaults(func=cmd_scst)

    sp = sub.add_parser("search-weights", parents=[common], help="greedy reward-weight search")
    sp.add_argument("--table", help="lookup CSV/JSON of 'w1:...:w7,score' rows, or 'builtin'")
    sp.add_argument("--metrics", help="comma-separated metric names to search")
    sp.add_argument("--n", type=int, default=3, help="largest weight tried")
    sp.add_argument("--grid", action="store_true", help="also run the exhaustive oracle")
    sp.add_argument("--manifest")
    sp.add_argument("--vocab")
    sp.add_argument("--init")
    sp.add_argument("--epochs", type=int)
    sp.set_defaults(func=cmd_search_weights)

    sp = sub.add_parser("generate", parents=[common], help="decode reports")
    data_args(sp)
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--split", default="test", choices=("train", "val", "test"))
    sp.add_argument("--beam", type=int)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("score", parents=[common], help="score generated reports")
    data_args(sp)
    sp.add_argument("--generated", required=True)
    sp.add_argument("--split", default="test", choices=("train", "val", "test"))
    sp.set_defaults(func=cmd_score)
    return p


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        for key, value in GLOBAL_DEFAULTS.items():
            if not hasattr(args, key):
                setattr(args, key, value)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        settings = _settings(args)
        args.func(args, settings)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (HremrgError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
