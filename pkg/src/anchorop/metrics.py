"""Classification metrics, fold averaging and per-token confusion counts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, NamedTuple, Sequence

from .corpus import QUESTION_WORDS, Label
from .errors import DataError

DEFAULT_WATCHLIST = ("congress", "bjp", "modi", "gandhi", "bilkul", "hindu", "muslim")
QUESTION_GROUP = "question-based"


class ConfusionCounts(NamedTuple):
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other):
        return ConfusionCounts(*(a + b for a, b in zip(self, other)))

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


class ClassMetrics(NamedTuple):
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class EvalReport:
    opinion: ClassMetrics
    non_opinion: ClassMetrics
    weighted: ClassMetrics
    support: dict = field(default_factory=dict)
    confusion: ConfusionCounts = ConfusionCounts()
    zero_division: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "opinion": self.opinion._asdict(),
            "non_opinion": self.non_opinion._asdict(),
            "weighted": self.weighted._asdict(),
            "support": dict(self.support),
            "confusion": self.confusion._asdict(),
            "zero_division": list(self.zero_division),
        }

    def csv_rows(self) -> list[list]:
        rows = [["class", "f1", "recall", "precision", "support"]]
        for name, m in (("opinion", self.opinion), ("non_opinion", self.non_opinion), ("weighted", self.weighted)):
            sup = self.support.get(name, sum(self.support.values()))
            rows.append([name, f"{m.f1:.6f}", f"{m.recall:.6f}", f"{m.precision:.6f}", sup])
        return rows

    def table(self, title: str = "model") -> str:
        """Human-readable row in the layout F1 / Rec / Pre per class group."""
        head = f"{'':<12}| {'Opinion':^23} | {'Non-opinion':^23} | {'Weighted':^23}"
        sub = f"{'':<12}|" + " | ".join([f"{'F1':>7}{'Rec':>8}{'Pre':>8}"] * 3)
        vals = " | ".join(f"{m.f1:7.3f}{m.recall:8.3f}{m.precision:8.3f}" for m in (self.opinion, self.non_opinion, self.weighted))
        return "\n".join([head, sub, f"{title:<12}|{vals}"])


def _prf(tp, fp, fn, name, flags):
    if tp + fp == 0:
        flags.append(f"{name}.precision")
        p = Fraction(0)
    else:
        p = Fraction(tp, tp + fp)
    if tp + fn == 0:
        flags.append(f"{name}.recall")
        r = Fraction(0)
    else:
        r = Fraction(tp, tp + fn)
    if p + r == 0:
        flags.append(f"{name}.f1")
        f = Fraction(0)
    else:
        f = 2 * p * r / (p + r)
    return p, r, f


def confusion(gold: Sequence[Label], pred: Sequence[Label]) -> ConfusionCounts:
    tp = fp = tn = fn = 0
    for g, p in zip(gold, pred):
        if g is Label.OPINIONATED:
            if p is Label.OPINIONATED:
                tp += 1
            else:
                fn += 1
        elif p is Label.OPINIONATED:
            fp += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, tn, fn)


def compute_metrics(gold: Sequence[Label], pred: Sequence[Label]) -> EvalReport:
    """Per-class and support-weighted precision/recall/F1 (Opinionated = positive).

    Zero denominators give 0 and are listed in ``zero_division``.
    """
    if len(gold) != len(pred):
        raise DataError(f"gold has {len(gold)} labels, predictions {len(pred)}")
    if not gold:
        raise DataError("no labels to evaluate")
    for lab in list(gold) + list(pred):
        if lab not in (Label.OPINIONATED, Label.NON_OPINIONATED):
            raise DataError(f"cannot evaluate label {lab}")
    cm = confusion(gold, pred)
    flags: list[str] = []
    op = _prf(cm.tp, cm.fp, cm.fn, "opinion", flags)
    non = _prf(cm.tn, cm.fn, cm.fp, "non_opinion", flags)
    s_op, s_non = cm.tp + cm.fn, cm.tn + cm.fp
    n = s_op + s_non
    weighted = [(s_op * a + s_non * b) / n for a, b in zip(op, non)]
    return EvalReport(
        opinion=ClassMetrics(*map(float, op)),
        non_opinion=ClassMetrics(*map(float, non)),
        weighted=ClassMetrics(*map(float, weighted)),
        support={"opinion": s_op, "non_opinion": s_non},
        confusion=cm,
        zero_division=tuple(flags),
    )


def _mean(values):
    values = list(values)
    return math.fsum(values) / len(values)


def average_reports(reports: Sequence[EvalReport]) -> EvalReport:
    """Field-wise mean of metrics; supports and confusion counts are summed."""
    if not reports:
        raise DataError("no reports to average")

    def avg(attr):
        return ClassMetrics(*(_mean(getattr(getattr(r, attr), f) for r in reports) for f in ClassMetrics._fields))

    support = {k: sum(r.support.get(k, 0) for r in reports) for k in ("opinion", "non_opinion")}
    cm = ConfusionCounts()
    for r in reports:
        cm = cm + r.confusion
    flags = tuple(sorted({f for r in reports for f in r.zero_division}))
    return EvalReport(avg("opinion"), avg("non_opinion"), avg("weighted"), support, cm, flags)


def token_confusion(
    target_tokens: Sequence[Iterable[str]],
    gold: Sequence[Label],
    pred: Sequence[Label],
    watchlist: Sequence[str] = DEFAULT_WATCHLIST,
    groups: Mapping[str, Iterable[str]] | None = None,
) -> dict[str, ConfusionCounts]:
    """Confusion counts restricted to instances whose target contains a word.

    ``target_tokens[i]`` are the tokens of instance i's target utterance.
    A group counts an instance once if any of its words occur.
    """
    if not (len(target_tokens) == len(gold) == len(pred)):
        raise DataError("target tokens, gold and predictions must align")
    if groups is None:
        groups = {QUESTION_GROUP: sorted(QUESTION_WORDS)}
    entries = [(w, {w}) for w in watchlist] + [(name, set(ws)) for name, ws in groups.items()]
    sets = [set(t) for t in target_tokens]
    out = {}
    for name, words in entries:
        idx = [i for i, s in enumerate(sets) if s & words]
        out[name] = confusion([gold[i] for i in idx], [pred[i] for i in idx])
    return out
