"""Spelling repair, anonymization and annotation consolidation."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from . import _kernels
from .corpus import Dialog, Label
from .errors import DataError
from .text import is_placeholder

_SOUNDEX_DIGITS = {}
for _letters, _digit in (("bfpv", "1"), ("cgjkqsxz", "2"), ("dt", "3"), ("l", "4"), ("mn", "5"), ("r", "6")):
    for _c in _letters:
        _SOUNDEX_DIGITS[_c] = _digit


def soundex_code(word: str) -> str:
    """American Soundex: first letter plus three digits.

    h and w are transparent (equal codes across them merge); vowels and y
    separate runs. The first letter's own code also suppresses an adjacent
    duplicate, so "pfister" -> "P236".
    """
    if not word or not word.isascii() or not word.isalpha():
        raise ValueError(f"soundex needs a nonempty ASCII alphabetic word, got {word!r}")
    w = word.lower()
    digits = []
    last = _SOUNDEX_DIGITS.get(w[0], "")
    for ch in w[1:]:
        if ch in "hw":
            continue
        code = _SOUNDEX_DIGITS.get(ch, "")
        if code and code != last:
            digits.append(code)
            if len(digits) == 3:
                break
        last = code
    return (w[0].upper() + "".join(digits) + "000")[:4]


def _codes(word: str) -> np.ndarray:
    return np.frombuffer(word.encode("utf-8"), dtype=np.uint8).astype(np.int64)


def edit_distance(a: str, b: str) -> int:
    return _kernels.levenshtein(_codes(a), _codes(b))


@dataclass(frozen=True)
class PhoneticIndex:
    code_to_words: Mapping[str, tuple[str, ...]]

    @classmethod
    def build(cls, dictionary: Iterable[str]) -> PhoneticIndex:
        buckets = defaultdict(set)
        for word in dictionary:
            if word and word.isascii() and word.isalpha():
                buckets[soundex_code(word)].add(word.lower())
        return cls({code: tuple(sorted(ws)) for code, ws in sorted(buckets.items())})

    def candidates(self, word: str) -> tuple[str, ...]:
        return self.code_to_words.get(soundex_code(word), ())


def load_wordlist(path) -> set[str]:
    with open(path, encoding="utf-8") as fh:
        return {line.strip().lower() for line in fh if line.strip()}


class Correction(NamedTuple):
    original: str
    corrected: str
    code: str
    distance: int


def _correct(token, index, dictionary, protected, min_length):
    if (
        token in dictionary
        or token in protected
        or is_placeholder(token)
        or len(token) < min_length
        or not (token.isascii() and token.isalpha())
    ):
        return None
    cands = index.candidates(token)
    if not cands:
        return None
    # candidates are sorted, so min() keeps the lexicographically smallest on ties
    best = min(cands, key=lambda w: edit_distance(token, w))
    return Correction(token, best, soundex_code(token), edit_distance(token, best))


def correct_spelling(
    token: str,
    index: PhoneticIndex,
    dictionary: set[str],
    protected: frozenset[str] = frozenset(),
    min_length: int = 3,
) -> str:
    """Replace a misspelt English token by its nearest phonetic neighbour.

    Dictionary words, placeholders, ``protected`` (known Hindi) tokens and
    tokens shorter than ``min_length`` are returned unchanged.
    """
    fix = _correct(token, index, dictionary, protected, min_length)
    return token if fix is None else fix.corrected


def anonymize(tokens: Iterable[str], names: set[str], placeholder: str = "<name>") -> list[str]:
    return [placeholder if t in names else t for t in tokens]


def normalize_corpus(
    corpus: list[Dialog],
    dictionary: set[str],
    names: set[str] = frozenset(),
    protected: frozenset[str] = frozenset(),
    min_length: int = 3,
) -> tuple[list[Dialog], list[Correction]]:
    """Anonymize then spell-correct every utterance.

    Returns the new corpus and a log with one entry per distinct corrected
    token, in order of first occurrence.
    """
    index = PhoneticIndex.build(dictionary)
    cache: dict[str, Correction | None] = {}
    log: list[Correction] = []
    out = []
    for d in corpus:
        utts = []
        for u in d.utterances:
            toks = []
            for t in anonymize(u.tokens, names):
                if t not in cache:
                    cache[t] = _correct(t, index, dictionary, protected, min_length)
                    if cache[t] is not None:
                        log.append(cache[t])
                fix = cache[t]
                toks.append(t if fix is None else fix.corrected)
            utts.append(replace(u, tokens=tuple(toks)))
        out.append(replace(d, utterances=tuple(utts)))
    return out, log


# ---------------------------------------------------------------------------
# annotation
# ---------------------------------------------------------------------------

class AnnotationPair(NamedTuple):
    key: tuple[str, int]
    annotator_a: Label
    annotator_b: Label


def _check_pairs(pairs):
    seen = set()
    for p in pairs:
        if p.key in seen:
            raise DataError(f"duplicate annotation for {p.key}")
        seen.add(p.key)
        for lab in (p.annotator_a, p.annotator_b):
            if lab not in (Label.OPINIONATED, Label.NON_OPINIONATED):
                raise DataError(f"annotation for {p.key} must be op/nonop, got {lab}")


def consolidate_annotations(pairs: list[AnnotationPair]) -> dict[tuple[str, int], Label]:
    """Opinionated only where both annotators agree on it."""
    _check_pairs(pairs)
    return {
        p.key: Label.OPINIONATED
        if p.annotator_a is Label.OPINIONATED and p.annotator_b is Label.OPINIONATED
        else Label.NON_OPINIONATED
        for p in pairs
    }


def cohen_kappa(pairs: list[AnnotationPair]) -> Fraction:
    if not pairs:
        raise DataError("cohen_kappa needs at least one pair")
    n = len(pairs)
    classes = (Label.OPINIONATED, Label.NON_OPINIONATED)
    p_o = Fraction(sum(p.annotator_a is p.annotator_b for p in pairs), n)
    p_e = sum(
        Fraction(sum(p.annotator_a is c for p in pairs), n) * Fraction(sum(p.annotator_b is c for p in pairs), n)
        for c in classes
    )
    if p_e == 1:
        if p_o == 1:
            return Fraction(1)
        raise DataError("degenerate marginals")
    return (p_o - p_e) / (1 - p_e)


def read_annotation_file(path) -> dict[tuple[str, int], Label]:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"dialog_id", "position", "label"} <= set(reader.fieldnames):
            raise DataError(f"{path}: expected columns dialog_id, position, label")
        for lineno, row in enumerate(reader, 2):
            try:
                key = (row["dialog_id"], int(row["position"]))
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad position {row['position']!r}") from None
            if key in out:
                raise DataError(f"{path}:{lineno}: duplicate annotation for {key}")
            lab = Label.parse(row["label"])
            if lab is Label.UNLABELED:
                raise DataError(f"{path}:{lineno}: missing label")
            out[key] = lab
    return out


def pair_annotations(a: Mapping, b: Mapping) -> list[AnnotationPair]:
    if set(a) != set(b):
        only = sorted(set(a) ^ set(b))[:5]
        raise DataError(f"annotator files cover different utterances, e.g. {only}")
    return [AnnotationPair(k, a[k], b[k]) for k in sorted(a)]


def apply_labels(corpus: list[Dialog], labels: Mapping[tuple[str, int], Label]) -> list[Dialog]:
    """Attach consolidated labels; every key must name an anchor utterance."""
    index = {u.key: u for d in corpus for u in d.utterances}
    for key in labels:
        u = index.get(key)
        if u is None:
            raise DataError(f"annotation for unknown utterance {key}")
        if not u.is_anchor:
            raise DataError(f"annotation for speaker utterance {key}")
    out = []
    for d in corpus:
        utts = tuple(replace(u, label=labels[u.key]) if u.key in labels else u for u in d.utterances)
        out.append(replace(d, utterances=utts))
    return out

