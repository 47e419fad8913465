import re
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anchorop.corpus import load_corpus, save_corpus
from anchorop.errors import DataError
from anchorop.normalize import (
    AnnotationPair,
    PhoneticIndex,
    anonymize,
    apply_labels,
    cohen_kappa,
    consolidate_annotations,
    correct_spelling,
    edit_distance,
    normalize_corpus,
    pair_annotations,
    read_annotation_file,
    soundex_code,
)

from conftest import NON, OP, UNL, make_dialog

# targets plus same-bucket words that are farther away, and near-misses in other buckets
DICTIONARY = {
    "live", "life", "love", "leave", "lief", "levee", "lives", "liver",
    "office", "offices", "officer", "obsess",
    "download", "downloaded", "downloads", "downloading", "downtown",
    "news", "debate", "party", "public", "report", "question", "point", "issue", "the", "and",
}


@pytest.fixture(scope="module")
def index():
    return PhoneticIndex.build(DICTIONARY)


@pytest.mark.parametrize(
    "word, code",
    [
        ("laiv", "L100"), ("live", "L100"),
        ("ophis", "O120"), ("office", "O120"),
        ("daunalod", "D543"), ("download", "D543"),
        ("a", "A000"),
        # reference values of American Soundex
        ("robert", "R163"), ("rupert", "R163"), ("rubin", "R150"),
        ("ashcraft", "A261"), ("tymczak", "T522"), ("pfister", "P236"), ("honeyman", "H555"),
    ],
)
def test_soundex_examples(word, code):
    assert soundex_code(word) == code


@pytest.mark.parametrize("bad", ["", "ab1", "<name>", "naïve", "two words"])
def test_soundex_rejects_non_alpha(bad):
    with pytest.raises(ValueError):
        soundex_code(bad)


@settings(max_examples=300)
@given(st.text(alphabet="abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ", min_size=1, max_size=20))
def test_soundex_shape(word):
    code = soundex_code(word)
    assert re.fullmatch(r"[A-Z][0-9]{3}", code)
    assert code == soundex_code(word.upper())


@settings(max_examples=200)
@given(st.text(alphabet="abcxyz", max_size=9), st.text(alphabet="abcxyz", max_size=9))
def test_edit_distance_matches_reference(a, b):
    # textbook full-matrix DP as an independent reference
    d = [[i + j if i * j == 0 else 0 for j in range(len(b) + 1)] for i in range(len(a) + 1)]
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i][j] = min(d[i - 1][j] + 1, d[i][j - 1] + 1, d[i - 1][j - 1] + (a[i - 1] != b[j - 1]))
    assert edit_distance(a, b) == d[len(a)][len(b)]


def test_index_partitions_dictionary(index):
    seen = [w for ws in index.code_to_words.values() for w in ws]
    assert sorted(seen) == sorted(DICTIONARY)
    assert all(re.fullmatch(r"[A-Z][0-9]{3}", c) for c in index.code_to_words)


@pytest.mark.parametrize("wrong, right", [("laiv", "live"), ("ophis", "office"), ("daunalod", "download")])
def test_known_misspellings(index, wrong, right):
    assert correct_spelling(wrong, index, DICTIONARY) == right


def test_fixed_points(index):
    for tok in ("office", "<name>", "ji", "to", "kya", "bilkul", "2024", "abc1"):
        assert correct_spelling(tok, index, DICTIONARY) == tok


def test_tie_breaks_lexicographically():
    dic = {"bat", "bet"}
    idx = PhoneticIndex.build(dic)
    assert correct_spelling("bit", idx, dic) == "bat"


def test_protected_lexicon_blocks_correction(index):
    assert correct_spelling("laiv", index, DICTIONARY, protected=frozenset({"laiv"})) == "laiv"


@settings(max_examples=300)
@given(st.text(alphabet="abcdefghijklmnopqrstuvwxyz<>", min_size=1, max_size=10))
def test_idempotent(token):
    idx = PhoneticIndex.build(DICTIONARY)
    once = correct_spelling(token, idx, DICTIONARY)
    assert correct_spelling(once, idx, DICTIONARY) == once


def test_normalize_corpus_log_and_anonymize():
    corpus = [make_dialog("d", [("A", ["ramesh", "ji", "laiv", "laiv", "dekhiye"], NON), ("S1", ["ophis"], UNL)])]
    out, log = normalize_corpus(corpus, DICTIONARY, names={"ramesh"})
    assert out[0].utterances[0].tokens == ("<name>", "ji", "live", "live", "dekhiye")
    assert out[0].utterances[1].tokens == ("office",)
    assert [(c.original, c.corrected, c.code, c.distance) for c in log] == [
        ("laiv", "live", "L100", 2),
        ("ophis", "office", "O120", 4),
    ]
    assert anonymize(["a", "b"], {"b"}) == ["a", "<name>"]


# --- annotation -------------------------------------------------------------

def _pairs(spec):
    return [AnnotationPair(("d", i), a, b) for i, (a, b) in enumerate(spec)]


def test_consolidation_rule():
    got = consolidate_annotations(_pairs([(OP, OP), (OP, NON), (NON, OP), (NON, NON)]))
    assert list(got.values()) == [OP, NON, NON, NON]


def test_consolidation_duplicate_key():
    p = AnnotationPair(("d", 0), OP, OP)
    with pytest.raises(DataError, match="duplicate"):
        consolidate_annotations([p, p])


def test_kappa_hand_case():
    pairs = _pairs([(OP, OP)] * 4 + [(NON, NON)] * 4 + [(OP, NON), (NON, OP)])
    assert cohen_kappa(pairs) == Fraction(3, 5)


def test_kappa_identical_and_degenerate():
    assert cohen_kappa(_pairs([(OP, OP), (NON, NON), (OP, OP)])) == 1
    assert cohen_kappa(_pairs([(OP, OP)] * 3)) == 1
    with pytest.raises(DataError):
        cohen_kappa([])


@settings(max_examples=200)
@given(st.lists(st.tuples(st.sampled_from([OP, NON]), st.sampled_from([OP, NON])), min_size=1, max_size=40))
def test_kappa_properties(spec):
    pairs = _pairs(spec)
    swapped = _pairs([(b, a) for a, b in spec])
    try:
        k = cohen_kappa(pairs)
    except DataError:
        return
    assert -1 <= k <= 1
    assert cohen_kappa(swapped) == k
    assert cohen_kappa(_pairs([(a, a) for a, _ in spec])) == 1
    consolidated = consolidate_annotations(pairs)
    assert all((lab is OP) == (a is OP and b is OP) for (a, b), lab in zip(spec, consolidated.values()))


def test_kappa_matches_sklearn_style_formula(rng):
    a = rng.integers(0, 2, 200)
    b = np.where(rng.random(200) < 0.8, a, 1 - a)
    labs = [OP, NON]
    k = float(cohen_kappa(_pairs([(labs[x], labs[y]) for x, y in zip(a, b)])))
    cm = np.zeros((2, 2))
    np.add.at(cm, (a, b), 1)
    cm /= cm.sum()
    po = np.trace(cm)
    pe = cm.sum(1) @ cm.sum(0)
    assert k == pytest.approx((po - pe) / (1 - pe), abs=1e-12)


def test_annotation_files_roundtrip(tmp_path):
    corpus = [make_dialog("d1", [("A", 2, UNL), ("S1", 2, UNL), ("A", 2, UNL)])]
    (tmp_path / "a.csv").write_text("dialog_id,position,label\nd1,0,op\nd1,2,op\n")
    (tmp_path / "b.csv").write_text("dialog_id,position,label\nd1,2,op\nd1,0,nonop\n")
    pairs = pair_annotations(read_annotation_file(tmp_path / "a.csv"), read_annotation_file(tmp_path / "b.csv"))
    labelled = apply_labels(corpus, consolidate_annotations(pairs))
    assert [u.label for u in labelled[0].utterances] == [NON, UNL, OP]
    save_corpus(labelled, tmp_path / "c.jsonl")
    assert load_corpus(tmp_path / "c.jsonl") == labelled


def test_annotation_errors(tmp_path):
    corpus = [make_dialog("d1", [("A", 2, UNL), ("S1", 2, UNL)])]
    with pytest.raises(DataError, match="speaker"):
        apply_labels(corpus, {("d1", 1): OP})
    with pytest.raises(DataError, match="unknown"):
        apply_labels(corpus, {("d9", 0): OP})
    (tmp_path / "a.csv").write_text("dialog_id,position,label\nd1,0,op\nd1,0,op\n")
    with pytest.raises(DataError, match="duplicate"):
        read_annotation_file(tmp_path / "a.csv")
    with pytest.raises(DataError, match="different"):
        pair_annotations({("d1", 0): OP}, {("d1", 1): OP})
