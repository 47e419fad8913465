"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 numeric
failure. Every command writes into ``--out`` plus a ``manifest.json``
recording the resolved config, seed and input digests.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import logging
import sys
import warnings
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__, _kernels
from .config import KNOWN_KEYS, ConfigError, RunConfig, _parse_value, load_config
from .corpus import (
    Label,
    Scope,
    Topic,
    compute_stats,
    load_corpus,
    question_word_density,
    repetition_fraction,
    save_corpus,
    time_quintile_distribution,
    top_k_words,
    utterance_index,
)
from .errors import DataError, NumericError
from .instances import build_corpus_instances, instance_manifest_record, make_folds, make_instance_folds, sub_seed
from .metrics import compute_metrics, token_confusion
from .report import bar_chart_svg, write_csv

log = logging.getLogger("anchorop")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# flag spelling -> config key
_FLAGS = {
    "corpus": ("--corpus",),
    "dictionary": ("--dictionary",),
    "names": ("--names",),
    "protected": ("--protected",),
    "checkpoint": ("--checkpoint",),
    "vectors": ("--vectors",),
    "predictions": ("--predictions",),
    "k": ("--k", "-k"),
    "min_repeats": ("--min-repeats",),
    "watchlist": ("--watchlist",),
    "context_size": ("--context-size",),
    "folds": ("--folds",),
    "fold_unit": ("--fold-unit",),
    "epochs": ("--epochs",),
    "learning_rate": ("--learning-rate", "--lr"),
    "batch_size": ("--batch-size",),
    "d_h": ("--d-h",),
    "heads": ("--heads",),
    "d_u": ("--d-u",),
    "d_c": ("--d-c",),
    "buckets": ("--buckets",),
    "chunk_len": ("--chunk-len",),
    "clip_norm": ("--clip-norm",),
    "encoder": ("--encoder",),
}

_TRAIN_KEYS = (
    "context_size", "folds", "fold_unit", "epochs", "learning_rate", "batch_size", "d_h", "heads",
    "d_u", "d_c", "buckets", "chunk_len", "clip_norm", "encoder", "vectors",
)

COMMANDS = {
    "ingest": ("validate a raw corpus and attach consolidated dual annotations", ("corpus",)),
    "normalize": ("spelling-correct and anonymize a corpus", ("corpus", "dictionary", "names", "protected")),
    "stats": ("dataset statistics table", ("corpus",)),
    "analyze": ("top words, time quintiles, question density, repetition", ("corpus", "k", "min_repeats")),
    "make-instances": ("instance manifest and fold plan", ("corpus", "context_size", "folds", "fold_unit")),
    "train": ("k-fold cross-validated training", ("corpus",) + _TRAIN_KEYS),
    "evaluate": ("metrics of a checkpoint on a labeled corpus", ("corpus", "checkpoint", "vectors", "context_size")),
    "predict": ("label anchor utterances with a checkpoint", ("corpus", "checkpoint", "vectors", "context_size")),
    "confusion-words": ("per-word confusion counts from predictions", ("corpus", "predictions", "watchlist")),
    "synth": ("write a synthetic corpus with a planted opinion cue", ()),
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="anchorop", description="Anchor opinion detection in code-mixed debates.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    for name, (helptext, keys) in COMMANDS.items():
        p = sub.add_parser(name, help=helptext, description=helptext)
        p.add_argument("--config", help="key=value config file; flags override it")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", help="global seed (default 42)")
        p.add_argument("--threads", help="BLAS threads (default 1 for bit-reproducibility)")
        p.add_argument("-v", "--verbose", action="count", default=0)
        for key in keys:
            p.add_argument(*_FLAGS[key], dest=key, metavar=key.upper())
        if name == "ingest":
            p.add_argument("--annotations", nargs=2, metavar=("A_CSV", "B_CSV"))
        if name in ("analyze",):
            p.add_argument("--svg", action="store_true", default=None)
        if name == "train":
            p.add_argument("--float32", action="store_true", default=None)
        if name == "synth":
            p.add_argument("--dialogs", type=int, default=30)
            p.add_argument("--utterances", type=int, default=20)
    return parser


def _resolve(args) -> RunConfig:
    overrides = {}
    for key in KNOWN_KEYS:
        val = getattr(args, key, None)
        if val is None:
            continue
        if key == "annotations":
            overrides[key] = tuple(val)
        elif isinstance(val, bool):
            overrides[key] = val
        else:
            overrides[key] = _parse_value(key, val)
    for key in ("out", "seed", "threads"):
        val = getattr(args, key)
        if val is not None:
            overrides[key] = _parse_value(key, val)
    if args.verbose:
        overrides["verbosity"] = args.verbose
    return load_config(args.config, overrides)


def _need(cfg: RunConfig, key: str) -> Path:
    val = getattr(cfg, key)
    if not val:
        raise UsageError(f"--{key.replace('_', '-')} is required")
    path = Path(val)
    if not path.exists():
        raise DataError(f"{key} path {path} does not exist")
    return path


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, cfg: RunConfig, inputs: list[Path], outputs: list[str]):
    manifest = {
        "command": command,
        "version": __version__,
        "kernel_backend": _kernels.BACKEND,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "inputs": {str(p): _digest(p) for p in inputs},
        "outputs": sorted(outputs),
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds"),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# commands; each returns (input paths, output file names)
# ---------------------------------------------------------------------------

def cmd_ingest(cfg, out, args):
    from .normalize import apply_labels, cohen_kappa, consolidate_annotations, pair_annotations, read_annotation_file

    src = _need(cfg, "corpus")
    corpus = load_corpus(src)
    inputs, outputs = [src], ["corpus.jsonl"]
    if cfg.annotations:
        if len(cfg.annotations) != 2:
            raise UsageError("annotations needs exactly two files")
        a_path, b_path = (Path(p) for p in cfg.annotations)
        for p in (a_path, b_path):
            if not p.exists():
                raise DataError(f"annotation file {p} does not exist")
        pairs = pair_annotations(read_annotation_file(a_path), read_annotation_file(b_path))
        kappa = cohen_kappa(pairs)
        corpus = apply_labels(corpus, consolidate_annotations(pairs))
        agree = sum(p.annotator_a is p.annotator_b for p in pairs)
        write_csv(out / "agreement.csv", [
            ["pairs", "agreements", "observed_agreement", "cohen_kappa"],
            [len(pairs), agree, f"{agree / len(pairs):.6f}", f"{float(kappa):.6f}"],
        ])
        print(f"cohen kappa {float(kappa):.4f} over {len(pairs)} utterances")
        inputs += [a_path, b_path]
        outputs.append("agreement.csv")
    save_corpus(corpus, out / "corpus.jsonl")
    return inputs, outputs


def cmd_normalize(cfg, out, args):
    from .normalize import load_wordlist, normalize_corpus

    src, dic = _need(cfg, "corpus"), _need(cfg, "dictionary")
    inputs = [src, dic]
    names = protected = frozenset()
    if cfg.names:
        inputs.append(_need(cfg, "names"))
        names = frozenset(load_wordlist(cfg.names))
    if cfg.protected:
        inputs.append(_need(cfg, "protected"))
        protected = frozenset(load_wordlist(cfg.protected))
    corpus, corrections = normalize_corpus(load_corpus(src), load_wordlist(dic), names, protected)
    save_corpus(corpus, out / "corpus.jsonl")
    write_csv(out / "corrections.csv", [["original", "corrected", "code", "edit_distance"]] + [list(c) for c in corrections])
    print(f"{len(corrections)} distinct tokens corrected")
    return inputs, ["corpus.jsonl", "corrections.csv"]


def cmd_stats(cfg, out, args):
    src = _need(cfg, "corpus")
    stats = compute_stats(load_corpus(src))
    write_csv(out / "stats.csv", [["field", "value"]] + [list(r) for r in stats.rows()])
    for name, value in stats.rows():
        print(f"{name:<28}{value}")
    return [src], ["stats.csv"]


def cmd_analyze(cfg, out, args):
    src = _need(cfg, "corpus")
    corpus = load_corpus(src)
    outputs = ["top_words.csv", "quintiles.csv", "question_density.csv", "repetition.csv"]
    rows = [["scope", "topic", "rank", "token", "count", "ratio"]]
    views = [(Scope.OPINIONATED_ANCHOR, None), (Scope.ALL_ANCHOR, None)]
    views += [(Scope.OPINIONATED_ANCHOR, t) for t in Topic]
    charts = []
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        for scope, topic in views:
            top = top_k_words(corpus, cfg.k, scope, topic)
            tname = topic.value if topic else "all"
            for rank, w in enumerate(top, 1):
                rows.append([scope.value, tname, rank, w.token, w.count, f"{float(w.ratio):.4f}"])
            if scope is Scope.OPINIONATED_ANCHOR:
                charts.append((f"top_words_{tname}.svg", [w.token for w in top], [w.count for w in top],
                               f"top {cfg.k} words in opinionated anchor utterances ({tname})"))
        quint = time_quintile_distribution(corpus)
        qd = question_word_density(corpus)
        rep = repetition_fraction(corpus, cfg.min_repeats)
    for w in caught:
        log.warning("%s", w.message)
    write_csv(out / "top_words.csv", rows)
    spans = ["0-20%", "20-40%", "40-60%", "60-80%", "80-100%"]
    write_csv(out / "quintiles.csv", [["bucket", "span", "opinionated"]] + [[i, s, n] for i, (s, n) in enumerate(zip(spans, quint))])
    write_csv(out / "question_density.csv", [["class", "question_words_per_utterance"],
                                              ["opinionated", f"{float(qd.opinionated):.4f}"],
                                              ["non_opinionated", f"{float(qd.non_opinionated):.4f}"]])
    write_csv(out / "repetition.csv", [["min_repeats", "fraction"], [cfg.min_repeats, f"{float(rep):.4f}"]])
    if cfg.svg:
        charts.append(("quintiles.svg", spans, quint, "opinionated anchor utterances by debate position"))
        for fname, labels, values, title in charts:
            (out / fname).write_text(bar_chart_svg(labels, values, title), encoding="utf-8")
            outputs.append(fname)
    print(f"quintiles {quint}; question density op={float(qd.opinionated):.2f} non={float(qd.non_opinionated):.2f}; "
          f"repetition(>={cfg.min_repeats}) {float(rep):.3f}")
    return [src], outputs


def _fold_plan(cfg, corpus, instances):
    tc = cfg.train
    if tc.fold_unit == "dialog":
        return make_folds(corpus, tc.folds, sub_seed(tc.seed, "folds"))
    return make_instance_folds(instances, tc.folds, sub_seed(tc.seed, "folds"))


def cmd_make_instances(cfg, out, args):
    src = _need(cfg, "corpus")
    corpus = load_corpus(src)
    instances = build_corpus_instances(corpus, cfg.train.context_size)
    plan = _fold_plan(cfg, corpus, instances)
    with open(out / "instances.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(json.dumps(instance_manifest_record(inst, plan.fold_of(inst)), sort_keys=True) + "\n")
    (out / "folds.json").write_text(plan.to_json() + "\n", encoding="utf-8")
    print(f"{len(instances)} instances; fold sizes {plan.sizes()} ({plan.unit}s)")
    return [src], ["instances.jsonl", "folds.json"]


def _load_vectors(cfg, inputs):
    from .encoder import load_precomputed

    if not cfg.vectors:
        return None
    path = _need(cfg, "vectors")
    inputs.append(path)
    return load_precomputed(path)


def _prediction_rows(instances, preds, probs, fold=None):
    rows = []
    for inst, pred, p in zip(instances, preds, probs[:, 0]):
        row = [inst.target.dialog_id, inst.target.position, inst.label.value or "", pred.value, f"{p:.6f}"]
        if fold is not None:
            row.insert(2, fold)
        rows.append(row)
    return rows


def cmd_train(cfg, out, args):
    from .model import save_checkpoint
    from .training import train

    src = _need(cfg, "corpus")
    inputs = [src]
    vectors = _load_vectors(cfg, inputs)
    tc = cfg.train
    if tc.encoder == "precomputed" and vectors is None:
        raise UsageError("--encoder precomputed needs --vectors")
    result = train(load_corpus(src), tc, vectors)
    outputs = ["report.csv", "report.txt", "fold_reports.csv", "predictions.csv", "history.csv", "folds.json"]
    preds = [["dialog_id", "position", "fold", "gold", "pred", "p_opinion"]]
    fold_rows = [["fold", "split", "class", "f1", "recall", "precision", "support", "train_instances", "oversampled"]]
    history = [["fold", "epoch", "loss"]]
    for k, fr in enumerate(result.folds):
        name = f"fold{k}.odnm"
        save_checkpoint(out / name, fr.params, {"fold": k, "context_size": tc.context_size, "seed": tc.seed})
        outputs.append(name)
        preds += _prediction_rows(fr.test_instances, fr.predictions, fr.probabilities, k)
        for split, rep in (("test", fr.test_report), ("train", fr.train_report)):
            for row in rep.csv_rows()[1:]:
                fold_rows.append([k, split] + row + [fr.train_size, fr.oversampled_size])
        history += [[k, e + 1, f"{loss:.8f}"] for e, loss in enumerate(fr.history)]
    write_csv(out / "report.csv", result.average.csv_rows())
    write_csv(out / "fold_reports.csv", fold_rows)
    write_csv(out / "predictions.csv", preds)
    write_csv(out / "history.csv", history)
    (out / "folds.json").write_text(result.plan.to_json() + "\n", encoding="utf-8")
    text = result.average.table("held-out") + "\n" + result.average_train.table("train").splitlines()[-1] + "\n"
    (out / "report.txt").write_text(text, encoding="utf-8")
    print(text, end="")
    return inputs, outputs


def _checkpoint_setup(cfg, args, inputs):
    from .model import load_checkpoint, make_provider

    ck = _need(cfg, "checkpoint")
    inputs.append(ck)
    params, extra = load_checkpoint(ck)
    vectors = _load_vectors(cfg, inputs)
    provider = make_provider(params.config, vectors)
    # an explicit flag wins over the context size stored with the checkpoint
    context = cfg.train.context_size if args.context_size is not None else extra.get("context_size", cfg.train.context_size)
    return params, provider, context


def cmd_evaluate(cfg, out, args):
    from .training import evaluate

    src = _need(cfg, "corpus")
    inputs = [src]
    params, provider, context = _checkpoint_setup(cfg, args, inputs)
    instances = build_corpus_instances(load_corpus(src), context)
    if not instances:
        raise DataError("corpus has no labeled anchor utterances")
    report, preds, probs = evaluate(instances, params, provider)
    write_csv(out / "report.csv", report.csv_rows())
    write_csv(out / "predictions.csv", [["dialog_id", "position", "gold", "pred", "p_opinion"]] + _prediction_rows(instances, preds, probs))
    (out / "report.txt").write_text(report.table("checkpoint") + "\n", encoding="utf-8")
    print(report.table("checkpoint"))
    return inputs, ["report.csv", "predictions.csv", "report.txt"]


def cmd_predict(cfg, out, args):
    from .model import predict

    src = _need(cfg, "corpus")
    inputs = [src]
    params, provider, context = _checkpoint_setup(cfg, args, inputs)
    instances = build_corpus_instances(load_corpus(src), context, require_labels=False)
    rows = [["dialog_id", "position", "gold", "pred", "p_opinion", "context_positions", "attention"]]
    for inst in instances:
        pr = predict(inst, params, provider)
        rows.append([
            inst.target.dialog_id, inst.target.position, inst.label.value or "", pr.label.value, f"{pr.p_opinion:.6f}",
            ";".join(str(u.position) for u in inst.utterances),
            ";".join(f"{a:.6f}" for a in pr.attention.alpha),
        ])
    write_csv(out / "predictions.csv", rows)
    print(f"{len(instances)} anchor utterances scored")
    return inputs, ["predictions.csv"]


def cmd_confusion_words(cfg, out, args):
    import csv

    src, pred_path = _need(cfg, "corpus"), _need(cfg, "predictions")
    index = utterance_index(load_corpus(src))
    tokens, gold, pred = [], [], []
    with open(pred_path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.DictReader(fh), 2):
            try:
                key = (row["dialog_id"], int(row["position"]))
                g, p = Label.parse(row["gold"]), Label.parse(row["pred"])
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"{pred_path}:{lineno}: bad prediction row ({exc})") from None
            if key not in index:
                raise DataError(f"{pred_path}:{lineno}: utterance {key} not in corpus")
            if g is Label.UNLABELED:
                continue
            tokens.append(index[key].tokens)
            gold.append(g)
            pred.append(p)
    table = token_confusion(tokens, gold, pred, cfg.watchlist)
    write_csv(out / "confusion_words.csv", [["word", "tp", "fn", "tn", "fp"]] + [[w, c.tp, c.fn, c.tn, c.fp] for w, c in table.items()])
    report = compute_metrics(gold, pred) if gold else None
    for w, c in table.items():
        print(f"{w:<16} TP {c.tp:>4}  FN {c.fn:>4}  TN {c.tn:>4}  FP {c.fp:>4}")
    if report:
        print(f"overall weighted F1 {report.weighted.f1:.4f}")
    return [src, pred_path], ["confusion_words.csv"]


def cmd_synth(cfg, out, args):
    from .synthetic import generate_corpus

    corpus = generate_corpus(args.dialogs, args.utterances, seed=sub_seed(cfg.seed, "synth"))
    save_corpus(corpus, out / "corpus.jsonl")
    print(f"{len(corpus)} dialogs written to {out / 'corpus.jsonl'}")
    return [], ["corpus.jsonl"]


_HANDLERS = {
    "ingest": cmd_ingest,
    "normalize": cmd_normalize,
    "stats": cmd_stats,
    "analyze": cmd_analyze,
    "make-instances": cmd_make_instances,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "predict": cmd_predict,
    "confusion-words": cmd_confusion_words,
    "synth": cmd_synth,
}


def run(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        if not argv:
            raise UsageError(parser.format_help())
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        cfg = _resolve(args)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(cfg.verbosity, 2),
            format="%(levelname)s %(name)s: %(message)s",
            stream=sys.stderr,
        )
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        with threadpool_limits(limits=cfg.threads):
            inputs, outputs = _HANDLERS[args.command](cfg, out, args)
        _write_manifest(out, args.command, cfg, inputs, outputs)
        return 0
    except SystemExit as exc:  # --help / --version
        return exc.code if isinstance(exc.code, int) else 0
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    except (DataError, ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"anchorop: error: {exc}", file=sys.stderr)
        return 2
    except (NumericError, FloatingPointError) as exc:
        print(f"anchorop: numeric failure: {exc}", file=sys.stderr)
        return 3


def main():
    sys.exit(run())
