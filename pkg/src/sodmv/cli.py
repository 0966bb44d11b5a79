"""Command-line entry point: ``sodmv {train,parse,eval,generate}``."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .archive import ArchiveError, load_model, save_model
from .data import (
    ConlluError,
    build_parallel_views,
    load_grammar,
    random_grammar,
    read_conllu,
    save_grammar,
    generate_synthetic,
    to_sentences,
    write_conllu,
)
from .evaluate import PunctPolicy, evaluate_uas
from .grammar import GrammarError, Order
from .neural import DimConfig
from .training import (
    MODEL_NAMES,
    Init,
    JointModel,
    Method,
    TrainConfig,
    TrainingError,
    parse,
    train,
)

METHODS = [m.value for m in Method]
INITS = [i.value for i in Init]
ORDERS = {"first": Order.FIRST, "sibling": Order.SECOND_SIBLING, "grand": Order.SECOND_GRAND}


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sodmv", description="Unsupervised dependency grammar induction.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on a CoNLL-U corpus")
    t.add_argument("--train", required=True, help="training CoNLL-U file")
    t.add_argument("--dev", help="development CoNLL-U file (early stopping)")
    t.add_argument("--method", choices=METHODS, default="dmo")
    t.add_argument("--model", choices=MODEL_NAMES, default="sibling")
    t.add_argument("--lexicalized", action="store_true")
    t.add_argument("--init", choices=INITS, default="km")
    t.add_argument("--warmup-trees", help="CoNLL-U trees for --init warmup (default: gold trees of --train)")
    t.add_argument("--batch-size", type=int, default=100)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--patience", type=int, default=5)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--restarts", type=int, default=1)
    t.add_argument("--max-train-len", type=int, default=10)
    t.add_argument("--no-skip-connections", action="store_true")
    t.add_argument("--deep-mlp", action="store_true")
    t.add_argument("--out", required=True, help="model archive to write")
    t.add_argument("--log", help="epoch log path (default: <out>.log.tsv)")
    t.add_argument("--report-dir", help="directory for training-curve figures")
    t.add_argument("--m-steps", type=int, default=1, help="M-step updates per E-step")
    t.add_argument("--km-epochs", type=int, default=100)
    t.add_argument("--warmup-epochs", type=int, default=10)
    t.add_argument("--min-freq", type=int, default=2, help="lexical frequency cutoff")
    t.add_argument("--pos-column", choices=["upos", "xpos"], default="upos")
    t.add_argument("--hidden", type=int, help="hidden width (default 100, lexicalized 200)")
    t.add_argument("--q-child", type=int)
    t.add_argument("--q-decision", type=int)
    t.add_argument("--dropout", type=float)

    r = sub.add_parser("parse", help="parse a CoNLL-U file with a trained model")
    r.add_argument("--model-file", required=True)
    r.add_argument("--input", required=True)
    r.add_argument("--output", required=True)
    r.add_argument("--pos-column", choices=["upos", "xpos"], default="upos")

    e = sub.add_parser("eval", help="unlabeled attachment score of predicted against gold trees")
    e.add_argument("--pred", required=True)
    e.add_argument("--gold", required=True)
    e.add_argument("--punct", choices=[p.value for p in PunctPolicy], default="exclude")
    e.add_argument("--plot", help="write a per-length UAS bar chart to this image file")

    g = sub.add_parser("generate", help="sample a synthetic treebank from a grammar")
    g.add_argument("--grammar", required=True, help="grammar JSON file, or random:K for a random K-tag grammar")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--max-len", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--order", choices=list(ORDERS), default="first", help="order of a random grammar")
    g.add_argument("--temperature", type=float, default=0.3, help="sharpening of a random grammar")
    g.add_argument("--save-grammar", help="also write the grammar used as JSON")
    return p


def _dims(args, lexical: bool) -> DimConfig:
    base = DimConfig.lexicalized() if lexical else DimConfig.unlexicalized()
    over = {"use_skip_connections": not args.no_skip_connections, "deep_output_mlp": args.deep_mlp}
    for flag, name in (("hidden", "d_hidden"), ("q_child", "q_child"), ("q_decision", "q_decision"), ("dropout", "dropout")):
        if getattr(args, flag) is not None:
            over[name] = getattr(args, flag)
    return dataclasses.replace(base, **over)


def _cmd_train(args, out) -> int:
    raw = read_conllu(args.train, pos_column=args.pos_column)
    pos_corpus, _ = build_parallel_views(raw, args.min_freq)
    pos_vocab, lex_vocab = pos_corpus.vocab, pos_corpus.lex_vocab
    dev = []
    if args.dev:
        dev = to_sentences(read_conllu(args.dev, pos_column=args.pos_column).sentences, pos_vocab, lex_vocab)
    warm = None
    if args.warmup_trees:
        ws = to_sentences(read_conllu(args.warmup_trees, pos_column=args.pos_column).sentences, pos_vocab, lex_vocab)
        warm = [(s, s.gold_heads) for s in ws if s.gold_is_model_tree]
    joint = args.model == "joint"
    cfg = TrainConfig(
        method=Method(args.method),
        model=args.model,
        lexicalized=args.lexicalized,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        max_epochs=args.epochs,
        patience=args.patience,
        m_steps_per_e_step=args.m_steps,
        seed=args.seed,
        init=Init(args.init),
        km_epochs=args.km_epochs,
        warmup_epochs=args.warmup_epochs,
        max_train_length=args.max_train_len,
        restarts=args.restarts,
        dims=_dims(args, args.lexicalized and not joint),
        lex_dims=_dims(args, True) if joint else None,
        use_skip_connections=not args.no_skip_connections,
        deep_output_mlp=args.deep_mlp,
    )
    cfg.validate()
    sentences = pos_corpus.sentences
    scored = dev if dev and all(s.gold_heads is not None for s in dev) else sentences
    results, uas = [], []
    for k in range(cfg.restarts):
        res = train(sentences, dev, cfg, pos_vocab, lex_vocab, warmup_trees=warm, seed=cfg.seed + k)
        results.append(res)
        u = evaluate_uas(parse(scored, res.model), scored).uas
        uas.append(u)
        print(f"restart {k} seed {res.seed} best_epoch {res.best_epoch} uas {u:.4f}", file=out)
    if cfg.restarts > 1:
        print(f"mean uas {np.mean(uas):.4f}", file=out)

    # keep the restart whose best checkpoint has the highest dev likelihood (first run without dev data)
    def best_ll(res):
        lls = [r.dev_ll for r in res.log if r.epoch == res.best_epoch]
        return lls[0] if lls and np.isfinite(lls[0]) else -np.inf

    chosen = max(range(len(results)), key=lambda i: (best_ll(results[i]), -i))
    record = {"method": cfg.method.value, "model": cfg.model, "seed": results[chosen].seed}
    save_model(results[chosen].model, args.out, record)
    log_path = Path(args.log or f"{args.out}.log.tsv")
    with open(log_path, "w", encoding="utf-8", newline="\n") as f:
        for k, res in enumerate(results):
            if cfg.restarts > 1:
                f.write(f"# restart {k} seed {res.seed}\n")
            f.write(res.log_tsv())
    if args.report_dir:
        from .plotting import plot_training_curves

        Path(args.report_dir).mkdir(parents=True, exist_ok=True)
        for k, res in enumerate(results):
            plot_training_curves(res.log, Path(args.report_dir) / f"training_seed{res.seed}.png", f"seed {res.seed}")
    print(f"model {args.out}", file=out)
    return 0


def _model_vocabs(model):
    if isinstance(model, JointModel):
        return model.structural.vocab, model.lexical.vocab
    return model.vocab, (model.vocab if model.lexical else None)


def _cmd_parse(args, out) -> int:
    model, _ = load_model(args.model_file)
    raw = read_conllu(args.input, pos_column=args.pos_column)
    pos_vocab, lex_vocab = _model_vocabs(model)
    sentences = to_sentences(raw.sentences, pos_vocab, lex_vocab)
    trees = parse(sentences, model) if sentences else []
    write_conllu(args.output, raw.sentences, [t.heads for t in trees])
    print(f"parsed {len(trees)} sentences", file=out)
    return 0


def _cmd_eval(args, out) -> int:
    pred = read_conllu(args.pred).sentences
    gold = read_conllu(args.gold).sentences
    report = evaluate_uas(pred, gold, args.punct)
    for line in report.lines():
        print(line, file=out)
    if args.plot:
        from .plotting import plot_uas_buckets

        plot_uas_buckets(report, args.plot)
    return 0


def _cmd_generate(args, out) -> int:
    if args.grammar.startswith("random:"):
        try:
            k = int(args.grammar.split(":", 1)[1])
        except ValueError:
            raise GrammarError(f"bad grammar spec {args.grammar!r}; expected random:K") from None
        tables, vocab = random_grammar(k, args.seed, ORDERS[args.order], args.temperature)
    else:
        tables, vocab = load_grammar(args.grammar)
    corpus = generate_synthetic(tables, vocab, args.n, args.max_len, args.seed)
    write_conllu(args.out, corpus.sentences)
    if args.save_grammar:
        save_grammar(args.save_grammar, tables, vocab)
    print(f"wrote {len(corpus)} sentences to {args.out}", file=out)
    return 0


COMMANDS = {"train": _cmd_train, "parse": _cmd_parse, "eval": _cmd_eval, "generate": _cmd_generate}


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)  # exits 2 on usage errors
    try:
        return COMMANDS[args.command](args, sys.stdout)
    except ArchiveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (GrammarError, ConlluError, TrainingError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
