"""Dialog/utterance data model, corpus persistence and dataset analyses."""

from __future__ import annotations

import enum
import json
import warnings
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, NamedTuple, Sequence

from .errors import DataError
from .text import tokenize

QUESTION_WORDS = frozenset({"kyu", "kya", "kab", "kaha", "kaun", "kitne", "kaise"})


class CorpusError(DataError):
    pass


class EmptyClassWarning(UserWarning):
    """An analysis was asked about a class that has no utterances."""


class Label(enum.Enum):
    OPINIONATED = "op"
    NON_OPINIONATED = "nonop"
    UNLABELED = None

    @classmethod
    def parse(cls, value):
        if value is None or value == "":
            return cls.UNLABELED
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise CorpusError(f"unknown label {value!r}") from None


class Topic(enum.Enum):
    POLITICS = "politics"
    RELIGION = "religion"

    @classmethod
    def parse(cls, value):
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise CorpusError(f"unknown topic {value!r}") from None


@dataclass(frozen=True, order=True)
class SpeakerId:
    """Speaker role. Index 0 is the anchor; invited speakers are 1, 2, ..."""

    index: int = 0

    @property
    def is_anchor(self) -> bool:
        return self.index == 0

    @property
    def code(self) -> str:
        return "A" if self.index == 0 else f"S{self.index}"

    @classmethod
    def parse(cls, code: str) -> SpeakerId:
        code = str(code).strip().upper()
        if code == "A":
            return ANCHOR
        if code.startswith("S") and code[1:].isdigit() and int(code[1:]) >= 1:
            return cls(int(code[1:]))
        raise CorpusError(f"bad speaker id {code!r}; expected 'A' or 'S<k>'")

    def __str__(self):
        return self.code


ANCHOR = SpeakerId(0)


@dataclass(frozen=True)
class Utterance:
    dialog_id: str
    position: int
    speaker: SpeakerId
    tokens: tuple[str, ...]
    label: Label = Label.UNLABELED

    @property
    def key(self) -> tuple[str, int]:
        return (self.dialog_id, self.position)

    @property
    def is_anchor(self) -> bool:
        return self.speaker.is_anchor


@dataclass(frozen=True)
class Dialog:
    dialog_id: str
    topic: Topic
    channel: str
    utterances: tuple[Utterance, ...]

    def __len__(self):
        return len(self.utterances)

    def anchor_utterances(self):
        return [u for u in self.utterances if u.is_anchor]


def validate_dialog(dialog: Dialog) -> None:
    """Raise CorpusError if ``dialog`` breaks a data-model invariant."""
    did = dialog.dialog_id
    if not dialog.utterances:
        raise CorpusError(f"dialog {did!r}: no utterances")
    speakers = set()
    for i, u in enumerate(dialog.utterances):
        where = f"dialog {did!r} position {u.position}"
        if u.dialog_id != did:
            raise CorpusError(f"{where}: utterance carries dialog_id {u.dialog_id!r}")
        if u.position != i:
            raise CorpusError(f"dialog {did!r}: positions not contiguous from 0 (found {u.position} at index {i})")
        if not u.tokens:
            raise CorpusError(f"{where}: empty utterance")
        if not u.is_anchor and u.label is not Label.UNLABELED:
            raise CorpusError(f"{where}: speaker utterance {u.speaker} carries a label")
        speakers.add(u.speaker.index)
    invited = sorted(s for s in speakers if s > 0)
    if invited != list(range(1, len(invited) + 1)):
        raise CorpusError(f"dialog {did!r}: speaker indices {invited} are not dense from S1")


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def _record(u: Utterance, d: Dialog) -> dict:
    return {
        "dialog_id": d.dialog_id,
        "position": u.position,
        "speaker": u.speaker.code,
        "topic": d.topic.value,
        "channel": d.channel,
        "text": " ".join(u.tokens),
        "label": u.label.value,
    }


def save_corpus(corpus: Iterable[Dialog], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for d in corpus:
            for u in d.utterances:
                fh.write(json.dumps(_record(u, d), ensure_ascii=False) + "\n")


_FIELDS = ("dialog_id", "position", "speaker", "topic", "channel", "text", "label")


def load_corpus(path) -> list[Dialog]:
    """Read a newline-delimited JSON corpus and group it into dialogs.

    Dialogs keep their order of first appearance; utterances are sorted by
    position. Raises CorpusError with the offending line or dialog/position.
    """
    rows: dict[str, list] = {}
    meta: dict[str, tuple] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(rec, dict):
                raise CorpusError(f"line {lineno}: record is not an object")
            missing = [f for f in _FIELDS if f not in rec]
            if missing:
                raise CorpusError(f"line {lineno}: missing fields {missing}")
            try:
                did = str(rec["dialog_id"])
                pos = rec["position"]
                if not isinstance(pos, int) or isinstance(pos, bool) or pos < 0:
                    raise CorpusError(f"bad position {pos!r}")
                speaker = SpeakerId.parse(rec["speaker"])
                topic = Topic.parse(rec["topic"])
                label = Label.parse(rec["label"])
                tokens = tuple(tokenize(str(rec["text"])))
            except CorpusError as exc:
                raise CorpusError(f"line {lineno}: {exc}") from None
            if not speaker.is_anchor and label is not Label.UNLABELED:
                raise CorpusError(
                    f"line {lineno}: dialog {did!r} position {pos}: speaker utterance {speaker} carries a label"
                )
            m = (topic, str(rec["channel"]))
            if meta.setdefault(did, m) != m:
                raise CorpusError(f"line {lineno}: dialog {did!r} changes topic/channel")
            rows.setdefault(did, []).append(Utterance(did, pos, speaker, tokens, label))

    corpus = []
    for did, utts in rows.items():
        utts.sort(key=lambda u: u.position)
        d = Dialog(did, meta[did][0], meta[did][1], tuple(utts))
        validate_dialog(d)
        corpus.append(d)
    return corpus


# ---------------------------------------------------------------------------
# statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorpusStats:
    num_dialogs: int = 0
    num_utterances: int = 0
    num_anchor_utterances: int = 0
    num_opinionated_anchor: int = 0
    num_tokens: int = 0
    vocab_size: int = 0
    avg_utterances_per_dialog: Fraction = Fraction(0)
    max_utterances_in_dialog: int = 0
    avg_words_per_utterance: Fraction = Fraction(0)
    max_words_in_utterance: int = 0

    def rows(self) -> list[tuple[str, str]]:
        """(field, display value) pairs; averages rounded to one decimal."""
        out = []
        for name, value in vars(self).items():
            if isinstance(value, Fraction):
                value = f"{float(value):.1f}"
            out.append((name, str(value)))
        return out


def compute_stats(corpus: Sequence[Dialog]) -> CorpusStats:
    if not corpus:
        return CorpusStats()
    utts = [u for d in corpus for u in d.utterances]
    vocab = {t for u in utts for t in u.tokens}
    n_tokens = sum(len(u.tokens) for u in utts)
    return CorpusStats(
        num_dialogs=len(corpus),
        num_utterances=len(utts),
        num_anchor_utterances=sum(u.is_anchor for u in utts),
        num_opinionated_anchor=sum(u.label is Label.OPINIONATED for u in utts),
        num_tokens=n_tokens,
        vocab_size=len(vocab),
        avg_utterances_per_dialog=Fraction(len(utts), len(corpus)),
        max_utterances_in_dialog=max(len(d) for d in corpus),
        avg_words_per_utterance=Fraction(n_tokens, len(utts)),
        max_words_in_utterance=max(len(u.tokens) for u in utts),
    )


class Scope(enum.Enum):
    OPINIONATED_ANCHOR = "opinionated"
    ALL_ANCHOR = "anchor"


class WordCount(NamedTuple):
    token: str
    count: int
    ratio: Fraction


def _filter_topic(corpus, topic):
    if topic is None:
        return corpus
    return [d for d in corpus if d.topic is topic]


def top_k_words(corpus, k: int, scope: Scope = Scope.OPINIONATED_ANCHOR, topic: Topic | None = None) -> list[WordCount]:
    """Most frequent tokens within ``scope``.

    ``ratio`` is the token's count in opinionated anchor utterances over its
    count in all anchor utterances. Ties are broken lexicographically.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    op, anchor = Counter(), Counter()
    for d in _filter_topic(corpus, topic):
        for u in d.utterances:
            if not u.is_anchor:
                continue
            anchor.update(u.tokens)
            if u.label is Label.OPINIONATED:
                op.update(u.tokens)
    counts = op if scope is Scope.OPINIONATED_ANCHOR else anchor
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:k]
    return [WordCount(tok, n, Fraction(op[tok], anchor[tok])) for tok, n in ranked]


def time_quintile_distribution(corpus) -> list[int]:
    """Opinionated anchor utterances per fifth of their dialog (by position)."""
    buckets = [0] * 5
    for d in corpus:
        n = len(d)
        for u in d.utterances:
            if u.label is Label.OPINIONATED:
                buckets[min(4, 5 * u.position // n)] += 1
    return buckets


class QuestionDensity(NamedTuple):
    opinionated: Fraction
    non_opinionated: Fraction


def question_word_density(corpus, question_words=QUESTION_WORDS) -> QuestionDensity:
    sums = {Label.OPINIONATED: 0, Label.NON_OPINIONATED: 0}
    counts = {Label.OPINIONATED: 0, Label.NON_OPINIONATED: 0}
    for d in corpus:
        for u in d.utterances:
            if u.label in sums:
                sums[u.label] += sum(t in question_words for t in u.tokens)
                counts[u.label] += 1
    out = []
    for lab in (Label.OPINIONATED, Label.NON_OPINIONATED):
        if counts[lab] == 0:
            warnings.warn(f"no {lab.name.lower()} utterances; density reported as 0", EmptyClassWarning, stacklevel=2)
            out.append(Fraction(0))
        else:
            out.append(Fraction(sums[lab], counts[lab]))
    return QuestionDensity(*out)


def repetition_fraction(corpus, min_repeats: int = 4) -> Fraction:
    """Share of opinionated anchor utterances repeating some token ``min_repeats``+ times."""
    if min_repeats < 2:
        raise ValueError("min_repeats must be >= 2")
    hits = total = 0
    for d in corpus:
        for u in d.utterances:
            if u.label is Label.OPINIONATED:
                total += 1
                hits += max(Counter(u.tokens).values()) >= min_repeats
    if total == 0:
        warnings.warn("no opinionated utterances; repetition fraction reported as 0", EmptyClassWarning, stacklevel=2)
        return Fraction(0)
    return Fraction(hits, total)


def iter_utterances(corpus) -> Iterable[Utterance]:
    for d in corpus:
        yield from d.utterances


def utterance_index(corpus) -> dict[tuple[str, int], Utterance]:
    return {u.key: u for u in iter_utterances(corpus)}
