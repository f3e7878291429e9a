"""Command line front end.

Subcommands cover the whole workflow:

  mnmt train          fit a model on parallel text (optionally grounded
                      in an image-feature file) and write a checkpoint
  mnmt translate      decode a text file with a trained checkpoint
  mnmt score          BLEU4 / chrF3 / TER between hypothesis and
                      reference files, one JSON object per metric
  mnmt significance   paired approximate-randomization p-value between
                      two hypothesis files
  mnmt backtranslate  translate a monolingual file to synthesize
                      parallel data, preserving line count
  mnmt dump-attention dump per-step alignment weights (and the visual
                      gate trajectory) as JSON Lines
  mnmt synth-features write a deterministic synthetic feature file

All text I/O is UTF-8, one sentence per line. ``--config`` files are
flat ``key = value`` lines (ints, floats, true/false, none, strings;
``#`` comments); keys mirror the model and training dataclasses.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .data import build_corpus, load_lines, save_lines
from .metrics import approx_randomization, bleu4, chrf, ter
from .model import ModelConfig
from .tensor import using_dtype
from .training import TrainConfig, init_params, load_checkpoint, train
from .translate import back_translate_file, dump_attention, translate_lines
from .vision import load_features, load_index, save_features, synth_features

log = logging.getLogger("mnmt")

MODEL_KEYS = ("emb_dim", "enc_dim", "dec_dim", "att_dim", "proj_dim")
TRAIN_KEYS = ("max_epochs", "batch_size", "dropout_p", "patience", "seed",
              "precision", "clip_norm", "eval_every", "max_decode_len")
CORPUS_KEYS = ("num_merges", "src_vocab_size", "tgt_vocab_size", "shared_vocab")


def _parse_value(raw: str):
    low = raw.lower()
    if low in ("true", "yes"):
        return True
    if low in ("false", "no"):
        return False
    if low in ("none", "null"):
        return None
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def parse_config_file(path) -> dict:
    """Flat key=value config format; later keys win."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected key = value, got {line.rstrip()!r}")
            key, _, raw = stripped.partition("=")
            out[key.strip()] = _parse_value(raw.strip())
    return out


def _split_config(cfg: dict):
    model = {k: cfg[k] for k in MODEL_KEYS if k in cfg}
    trainc = {k: cfg[k] for k in TRAIN_KEYS if k in cfg}
    corpus = {k: cfg[k] for k in CORPUS_KEYS if k in cfg}
    known = set(MODEL_KEYS) | set(TRAIN_KEYS) | set(CORPUS_KEYS)
    unknown = set(cfg) - known
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    return model, trainc, corpus


def _load_feature_args(args, n_lines):
    """(features dict, ids list) from --features/--index, or (None, None)."""
    if not getattr(args, "features", None):
        return None, None
    features = load_features(args.features)
    if not getattr(args, "index", None):
        raise ValueError("--features needs --index to map lines to image ids")
    ids = load_index(args.index)
    if len(ids) != n_lines:
        raise ValueError(f"index has {len(ids)} ids for {n_lines} lines")
    return features, ids


# ---------------------------------------------------------------------------
# subcommands

def cmd_train(args):
    cfg = parse_config_file(args.config) if args.config else {}
    model_kw, train_kw, corpus_kw = _split_config(cfg)
    src_lines = load_lines(args.source)
    tgt_lines = load_lines(args.target)

    features = ids = None
    if args.multimodal or args.features:
        features, ids = _load_feature_args(args, len(src_lines))
        if features is None:
            raise ValueError("--multimodal needs --features and --index")
    corpus = build_corpus(src_lines, tgt_lines, ids, **corpus_kw)
    log.info("corpus: %d sentence pairs kept, %d discarded, %d merges",
             len(corpus.triples), len(corpus.discarded), corpus.bpe.effective_merges())

    multimodal = features is not None
    if multimodal:
        first = next(iter(features.values()))
        model_kw.update(feature_rows=first.shape[0], feature_dim=first.shape[1])
    config = ModelConfig(
        src_vocab_size=len(corpus.src_vocab),
        tgt_vocab_size=len(corpus.tgt_vocab),
        multimodal=multimodal, **model_kw)
    tc = TrainConfig(**train_kw)

    if args.val_source:
        val = build_corpus(
            load_lines(args.val_source), load_lines(args.val_target),
            load_index(args.val_index) if args.val_index else None,
            bpe=corpus.bpe, src_vocab=corpus.src_vocab, tgt_vocab=corpus.tgt_vocab)
        val_triples, val_refs = val.triples, val.tgt_word_lines
    else:
        val_triples, val_refs = corpus.triples, corpus.tgt_word_lines

    with using_dtype(tc.precision):
        from .model import NmtModel
        model = NmtModel(config, init_params(config, tc.seed))
        result = train(
            model, corpus.triples, tc,
            val_triples=val_triples, val_refs=val_refs, features=features,
            log_path=args.log, checkpoint_path=args.output,
            src_vocab=corpus.src_vocab, tgt_vocab=corpus.tgt_vocab, bpe=corpus.bpe)
    last = result.history[-1]
    print(json.dumps({
        "epochs": result.epochs_done, "stopped_early": result.stopped_early,
        "final_train_loss": last.train_loss, "best_val_bleu": result.early.best_bleu,
        "best_epoch": result.early.best_epoch, "checkpoint": args.output,
    }))
    return 0


def _load_model(path):
    ckpt = load_checkpoint(path)
    if ckpt.src_vocab is None or ckpt.tgt_vocab is None:
        raise ValueError(f"checkpoint {path} lacks vocabularies; cannot translate with it")
    return ckpt


def _run_translate(args, back=False):
    ckpt = _load_model(args.model)
    lines = load_lines(args.input)
    features, ids = _load_feature_args(args, len(lines))
    with using_dtype(ckpt.meta.get("precision", "float32")):
        if back:
            n = back_translate_file(
                ckpt.model, args.input, args.output, ckpt.src_vocab, ckpt.tgt_vocab,
                ckpt.bpe, features=features, feature_ids=ids,
                beam_size=args.beam, max_len=args.max_len)
            print(json.dumps({"lines": n, "output": args.output}))
            return 0
        out = translate_lines(
            ckpt.model, lines, ckpt.src_vocab, ckpt.tgt_vocab, ckpt.bpe,
            features=features, feature_ids=ids, beam_size=args.beam, max_len=args.max_len)
    if args.output:
        save_lines(args.output, out)
    else:
        for line in out:
            print(line)
    return 0


def cmd_translate(args):
    return _run_translate(args)


def cmd_backtranslate(args):
    return _run_translate(args, back=True)


def _token_lines(path):
    return [line.split() for line in load_lines(path)]


def cmd_score(args):
    hyps = _token_lines(args.hyp)
    refs = _token_lines(args.ref)
    wanted = ("bleu", "chrf", "ter") if args.metric == "all" else (args.metric,)
    for m in wanted:
        if m == "bleu":
            print(json.dumps({"metric": "bleu", "score": bleu4(hyps, refs)}))
        elif m == "chrf":
            f, p, r = chrf(hyps, refs)
            print(json.dumps({"metric": "chrf", "score": f, "precision": p, "recall": r}))
        else:
            print(json.dumps({"metric": "ter", "score": ter(hyps, refs)}))
    return 0


def cmd_significance(args):
    hyp_a = _token_lines(args.hyp_a)
    hyp_b = _token_lines(args.hyp_b)
    refs = _token_lines(args.ref)
    score = {"bleu": bleu4, "ter": ter, "chrf": lambda h, r: chrf(h, r)[0]}[args.metric]
    p = approx_randomization(args.metric, hyp_a, hyp_b, refs,
                             trials=args.trials, seed=args.seed,
                             exhaustive=args.exhaustive)
    print(json.dumps({
        "metric": args.metric,
        "score_a": score(hyp_a, refs),
        "score_b": score(hyp_b, refs),
        "trials": args.trials if not args.exhaustive else 2 ** len(refs),
        "p_value": p,
    }))
    return 0


def cmd_dump_attention(args):
    ckpt = _load_model(args.model)
    lines = load_lines(args.input)
    features, ids = _load_feature_args(args, len(lines))
    with using_dtype(ckpt.meta.get("precision", "float32")):
        summary = dump_attention(
            ckpt.model, lines, ckpt.src_vocab, ckpt.tgt_vocab, ckpt.bpe,
            args.output, features=features, feature_ids=ids, max_len=args.max_len)
    print(json.dumps(summary))
    return 0


def cmd_synth_features(args):
    feats = synth_features(args.count, args.rows, args.dim, seed=args.seed, scale=args.scale)
    save_features(args.output, feats)
    if args.index:
        save_lines(args.index, list(feats))
    print(json.dumps({"records": len(feats), "rows": args.rows, "dim": args.dim,
                      "output": args.output}))
    return 0


# ---------------------------------------------------------------------------
# argument wiring

def _add_feature_flags(p):
    p.add_argument("--features", help="SPFT feature file")
    p.add_argument("--index", help="image-id index file, one id per input line")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mnmt", description="attention NMT, optionally image-grounded")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit a model and write a checkpoint")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--output", required=True, help="checkpoint path (.npz)")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--multimodal", action="store_true")
    _add_feature_flags(p)
    p.add_argument("--val-source")
    p.add_argument("--val-target")
    p.add_argument("--val-index")
    p.add_argument("--log", help="JSONL epoch log path")
    p.set_defaults(fn=cmd_train)

    for name, fn in (("translate", cmd_translate), ("backtranslate", cmd_backtranslate)):
        p = sub.add_parser(name)
        p.add_argument("--model", required=True)
        p.add_argument("--input", required=True)
        p.add_argument("--output", required=(name == "backtranslate"))
        p.add_argument("--beam", type=int, default=12)
        p.add_argument("--max-len", type=int, default=80)
        _add_feature_flags(p)
        p.set_defaults(fn=fn)

    p = sub.add_parser("score", help="score hypotheses against references")
    p.add_argument("--metric", choices=("bleu", "chrf", "ter", "all"), default="all")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("significance", help="paired randomization test")
    p.add_argument("--metric", choices=("bleu", "chrf", "ter"), required=True)
    p.add_argument("--hyp-a", required=True)
    p.add_argument("--hyp-b", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--trials", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--exhaustive", action="store_true",
                   help="enumerate all swap patterns (tiny corpora)")
    p.set_defaults(fn=cmd_significance)

    p = sub.add_parser("dump-attention", help="write alignment weights as JSONL")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--max-len", type=int, default=80)
    _add_feature_flags(p)
    p.set_defaults(fn=cmd_dump_attention)

    p = sub.add_parser("synth-features", help="write deterministic synthetic features")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--rows", type=int, default=196)
    p.add_argument("--dim", type=int, default=1024)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--output", required=True)
    p.add_argument("--index", help="also write an id-per-line index file")
    p.set_defaults(fn=cmd_synth_features)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
