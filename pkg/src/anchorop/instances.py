"""Classification instances, cross-validation folds and oversampling."""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .corpus import Dialog, Label, Utterance
from .errors import DataError

DEFAULT_CONTEXT = 5


def sub_seed(seed: int, name: str) -> int:
    """Independent, named child seed so each random stage replays in isolation."""
    ss = np.random.SeedSequence([seed & 0xFFFFFFFF, zlib.crc32(name.encode())])
    return int(ss.generate_state(1)[0])


@dataclass(frozen=True)
class Instance:
    context: tuple[Utterance, ...]
    target: Utterance
    label: Label
    replica: int = 0

    @property
    def key(self) -> tuple[str, int]:
        return self.target.key

    @property
    def utterances(self) -> tuple[Utterance, ...]:
        return self.context + (self.target,)


def build_instances(dialog: Dialog, context_size: int = DEFAULT_CONTEXT, require_labels: bool = True) -> list[Instance]:
    """One instance per anchor utterance, with up to ``context_size``
    immediately preceding utterances of any speaker.

    With ``require_labels=False`` unlabeled anchors are kept (for inference).
    """
    if context_size < 0:
        raise ValueError("context_size must be >= 0")
    utts = dialog.utterances
    out = []
    for t, u in enumerate(utts):
        if not u.is_anchor:
            continue
        if u.label is Label.UNLABELED and require_labels:
            raise DataError(f"dialog {dialog.dialog_id!r}: anchor utterance at position {t} is unlabeled")
        out.append(Instance(utts[max(0, t - context_size):t], u, u.label))
    return out


def build_corpus_instances(corpus, context_size: int = DEFAULT_CONTEXT, require_labels: bool = True) -> list[Instance]:
    return [inst for d in corpus for inst in build_instances(d, context_size, require_labels)]


@dataclass(frozen=True)
class FoldPlan:
    """Fold assignment keyed by dialog id (or by (dialog_id, position) when
    ``unit == "instance"``)."""

    num_folds: int
    assignments: dict = field(repr=False)
    seed: int
    unit: str = "dialog"

    def fold_of(self, inst: Instance) -> int:
        key = inst.target.dialog_id if self.unit == "dialog" else inst.key
        return self.assignments[key]

    def split(self, instances, fold: int) -> tuple[list[Instance], list[Instance]]:
        """(train, held-out) for ``fold``."""
        train, test = [], []
        for inst in instances:
            (test if self.fold_of(inst) == fold else train).append(inst)
        return train, test

    def sizes(self) -> list[int]:
        return [sum(v == f for v in self.assignments.values()) for f in range(self.num_folds)]

    def to_json(self) -> str:
        items = sorted(self.assignments.items(), key=lambda kv: str(kv[0]))
        return json.dumps(
            {
                "num_folds": self.num_folds,
                "seed": self.seed,
                "unit": self.unit,
                "assignments": [[k if isinstance(k, str) else list(k), v] for k, v in items],
            },
            sort_keys=True,
        )


def _deal(keys, num_folds, seed):
    order = np.random.default_rng(seed).permutation(len(keys))
    return {keys[j]: i % num_folds for i, j in enumerate(order)}


def make_folds(corpus: list[Dialog], num_folds: int = 3, seed: int = 0) -> FoldPlan:
    """Shuffle dialogs with a seeded PRNG and deal them round-robin."""
    if num_folds < 2:
        raise ValueError("num_folds must be >= 2")
    ids = sorted(d.dialog_id for d in corpus)
    if len(set(ids)) != len(ids):
        raise DataError("duplicate dialog ids")
    if len(ids) < num_folds:
        raise DataError(f"{len(ids)} dialogs cannot fill {num_folds} folds")
    return FoldPlan(num_folds, _deal(ids, num_folds, seed), seed, "dialog")


def make_instance_folds(instances: list[Instance], num_folds: int = 3, seed: int = 0) -> FoldPlan:
    """Instance-level split; leaks context across folds, kept for comparability."""
    if num_folds < 2:
        raise ValueError("num_folds must be >= 2")
    keys = sorted(inst.key for inst in instances)
    if len(keys) < num_folds:
        raise DataError(f"{len(keys)} instances cannot fill {num_folds} folds")
    return FoldPlan(num_folds, _deal(keys, num_folds, seed), seed, "instance")


def oversample(train: list[Instance], seed: int) -> list[Instance]:
    """Duplicate minority-class instances until both classes are equally common.

    Use on training splits only. Duplicates carry increasing ``replica``
    counters per source instance; the result is shuffled.
    """
    by_class = {Label.OPINIONATED: [], Label.NON_OPINIONATED: []}
    for inst in train:
        if inst.label not in by_class:
            raise DataError(f"cannot oversample instance {inst.key} with label {inst.label.value!r}")
        by_class[inst.label].append(inst)
    if not all(by_class.values()):
        raise DataError("oversampling needs both classes present")
    small, big = sorted(by_class.values(), key=len)
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(small), size=len(big) - len(small))
    copies: dict[int, int] = {}
    extra = []
    for p in picks.tolist():
        copies[p] = copies.get(p, 0) + 1
        extra.append(replace(small[p], replica=small[p].replica + copies[p]))
    out = list(train) + extra
    return [out[i] for i in rng.permutation(len(out))]


def instance_manifest_record(inst: Instance, fold: int | None = None) -> dict:
    rec = {
        "dialog_id": inst.target.dialog_id,
        "target_position": inst.target.position,
        "context_positions": [u.position for u in inst.context],
        "label": inst.label.value,
    }
    if fold is not None:
        rec["fold"] = fold
    return rec
