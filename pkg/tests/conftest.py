import sys

import numpy as np
import pytest

from anchorop.corpus import Dialog, Label, SpeakerId, Topic, Utterance

OP, NON, UNL = Label.OPINIONATED, Label.NON_OPINIONATED, Label.UNLABELED


def make_dialog(did, rows, topic=Topic.POLITICS, channel="abp"):
    """rows: (speaker code, tokens or token count, label) triples."""
    utts = []
    for pos, (spk, toks, lab) in enumerate(rows):
        if isinstance(toks, int):
            toks = [f"w{pos}x{i}" for i in range(toks)]
        utts.append(Utterance(did, pos, SpeakerId.parse(spk), tuple(toks), lab))
    return Dialog(did, topic, channel, tuple(utts))


@pytest.fixture
def tiny_corpus():
    """Two dialogs: [A(4), S1(2), A(3, op)] and [S1(5), A(1)]."""
    return [
        make_dialog("d1", [("A", 4, NON), ("S1", 2, UNL), ("A", 3, OP)]),
        make_dialog("d2", [("S1", 5, UNL), ("A", 1, NON)], topic=Topic.RELIGION),
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def gradient_check(loss_fn, tensors, grads, h=1e-5, max_entries=None, rng=None):
    """Norm-wise relative error between analytic ``grads`` and central
    differences of ``loss_fn()`` for each tensor (perturbed in place)."""
    errors = {}
    for name, arr in tensors.items():
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn()
            flat[i] = old - h
            dn = loss_fn()
            flat[i] = old
            num[j] = (up - dn) / (2 * h)
        ana = grads[name].reshape(-1)[idx]
        scale = max(np.linalg.norm(num), np.linalg.norm(ana), 1e-8)
        errors[name] = float(np.linalg.norm(ana - num) / scale)
    return errors


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
        terminalreporter.write_line(line)
