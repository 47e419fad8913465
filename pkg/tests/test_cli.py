import csv
import json

import pytest

from anchorop.cli import run
from anchorop.corpus import load_corpus, save_corpus

from conftest import NON, OP, UNL, make_dialog

_SMALL = ["--epochs", "2", "--d-u", "8", "--d-h", "4", "--heads", "2", "--d-c", "8", "--buckets", "64", "--folds", "2"]


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.reader(fh))


@pytest.fixture
def synth(tmp_path):
    assert run(["synth", "--out", str(tmp_path / "s"), "--dialogs", "6", "--utterances", "10", "--seed", "3"]) == 0
    return tmp_path / "s" / "corpus.jsonl"


def test_no_args_and_bad_usage(capsys):
    assert run([]) == 1
    assert run(["frobnicate"]) == 1
    assert run(["stats", "--bogus"]) == 1


def test_bad_config_value(tmp_path, synth):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("context_size=abc\n")
    assert run(["stats", "--config", str(cfg), "--corpus", str(synth), "--out", str(tmp_path / "o")]) == 2
    assert run(["stats", "--corpus", str(tmp_path / "missing.jsonl"), "--out", str(tmp_path / "o")]) == 2


def test_stats_csv_and_manifest(tmp_path, tiny_corpus):
    save_corpus(tiny_corpus, tmp_path / "c.jsonl")
    out = tmp_path / "o"
    assert run(["stats", "--corpus", str(tmp_path / "c.jsonl"), "--out", str(out)]) == 0
    stats = dict(_rows(out / "stats.csv")[1:])
    assert stats["num_dialogs"] == "2" and stats["num_utterances"] == "5"
    man = json.loads((out / "manifest.json").read_text())
    assert man["seed"] == 42
    assert any(len(v) == 64 for v in man["inputs"].values())


def test_ingest_with_annotations(tmp_path):
    corpus = [make_dialog("d1", [("A", 2, UNL), ("S1", 2, UNL), ("A", 2, UNL)])]
    save_corpus(corpus, tmp_path / "raw.jsonl")
    (tmp_path / "a.csv").write_text("dialog_id,position,label\nd1,0,op\nd1,2,op\n")
    (tmp_path / "b.csv").write_text("dialog_id,position,label\nd1,0,nonop\nd1,2,op\n")
    out = tmp_path / "o"
    assert run(["ingest", "--corpus", str(tmp_path / "raw.jsonl"), "--annotations", str(tmp_path / "a.csv"),
                str(tmp_path / "b.csv"), "--out", str(out)]) == 0
    labelled = load_corpus(out / "corpus.jsonl")
    assert [u.label for u in labelled[0].utterances] == [NON, UNL, OP]


def test_normalize(tmp_path):
    save_corpus([make_dialog("d", [("A", ["ramesh", "laiv", "hai"], NON)])], tmp_path / "c.jsonl")
    (tmp_path / "dict.txt").write_text("live\nlove\nhai\n")
    (tmp_path / "names.txt").write_text("ramesh\n")
    out = tmp_path / "o"
    assert run(["normalize", "--corpus", str(tmp_path / "c.jsonl"), "--dictionary", str(tmp_path / "dict.txt"),
                "--names", str(tmp_path / "names.txt"), "--out", str(out)]) == 0
    assert load_corpus(out / "corpus.jsonl")[0].utterances[0].tokens == ("<name>", "live", "hai")
    assert _rows(out / "corrections.csv")[1] == ["laiv", "live", "L100", "2"]


def test_analyze_and_instances(tmp_path, synth):
    out = tmp_path / "o"
    assert run(["analyze", "--corpus", str(synth), "--out", str(out), "-k", "3", "--svg"]) == 0
    assert len(_rows(out / "top_words.csv")) > 1
    assert list(out.glob("*.svg"))
    assert run(["make-instances", "--corpus", str(synth), "--out", str(tmp_path / "i"), "--context-size", "2"]) == 0
    first = json.loads((tmp_path / "i" / "instances.jsonl").read_text().splitlines()[0])
    assert len(first["context_positions"]) <= 2


def test_train_evaluate_predict(tmp_path, synth):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run(["train", "--corpus", str(synth), "--out", str(a)] + _SMALL) == 0
    assert run(["train", "--corpus", str(synth), "--out", str(b)] + _SMALL) == 0
    for name in ("fold0.odnm", "fold1.odnm", "report.csv", "fold_reports.csv", "predictions.csv", "folds.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    ev = tmp_path / "e"
    assert run(["evaluate", "--corpus", str(synth), "--checkpoint", str(a / "fold0.odnm"), "--out", str(ev)]) == 0
    assert _rows(ev / "report.csv")[0][0] == "class"
    pr = tmp_path / "p"
    assert run(["predict", "--corpus", str(synth), "--checkpoint", str(a / "fold0.odnm"), "--out", str(pr)]) == 0
    assert len(_rows(pr / "predictions.csv")) > 1
    cw = tmp_path / "cw"
    assert run(["confusion-words", "--corpus", str(synth), "--predictions", str(ev / "predictions.csv"),
                "--out", str(cw)]) == 0
    assert _rows(cw / "confusion_words.csv")[0] == ["word", "tp", "fn", "tn", "fp"]


def test_corrupt_checkpoint_exit_code(tmp_path, synth):
    (tmp_path / "bad.odnm").write_bytes(b"garbage")
    assert run(["predict", "--corpus", str(synth), "--checkpoint", str(tmp_path / "bad.odnm"),
                "--out", str(tmp_path / "o")]) == 2
