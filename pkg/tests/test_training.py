import math

import numpy as np
import pytest

from anchorop.corpus import Label, SpeakerId, compute_stats
from anchorop.instances import build_corpus_instances
from anchorop.model import checkpoint_bytes
from anchorop.synthetic import CUES, generate_corpus
from anchorop.training import Adam, TrainConfig, clip_gradients, fit, train


def test_adam_first_step_is_lr_times_sign():
    t = {"w": np.array([1.0, -2.0, 3.0])}
    g = {"w": np.array([0.5, -4.0, 0.0])}
    Adam(lr=0.1).step(t, g)
    # bias-corrected first step is lr * g / (|g| + eps)
    assert t["w"] == pytest.approx([0.9, -1.9, 3.0], abs=1e-7)


def test_adam_matches_reference_loop():
    rng = np.random.default_rng(0)
    w = rng.normal(size=4)
    t = {"w": w.copy()}
    opt = Adam(lr=0.01, beta1=0.8, beta2=0.99, eps=1e-6)
    m = v = np.zeros(4)
    for step in range(1, 6):
        g = rng.normal(size=4)
        opt.step(t, {"w": g.copy()})
        m = 0.8 * m + 0.2 * g
        v = 0.99 * v + 0.01 * g * g
        w = w - 0.01 * (m / (1 - 0.8 ** step)) / (np.sqrt(v / (1 - 0.99 ** step)) + 1e-6)
    assert t["w"] == pytest.approx(w, abs=1e-14)


def test_clip_gradients():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert clip_gradients(g, 1.0) == 5.0
    assert math.hypot(g["a"][0], g["b"][0]) == pytest.approx(1.0, abs=1e-12)
    g = {"a": np.array([0.3])}
    clip_gradients(g, 1.0)
    assert g["a"][0] == 0.3


@pytest.mark.parametrize("bad", [{"learning_rate": 0}, {"beta1": 1.0}, {"fold_unit": "x"}, {"heads": 5}])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_synthetic_corpus_properties():
    corpus = generate_corpus(seed=3)
    s = compute_stats(corpus)
    assert s.num_dialogs == 30 and s.num_utterances == 600
    for d in corpus:
        assert d.utterances[0].speaker == SpeakerId(0)
        for u in d.utterances:
            has_cue = any(t in CUES for t in u.tokens)
            assert has_cue == (u.label is Label.OPINIONATED)
    assert generate_corpus(seed=3) == corpus


_SMALL = dict(d_u=8, d_h=4, heads=2, d_c=8, buckets=64, epochs=2, batch_size=8)


def test_fit_reduces_loss():
    corpus = generate_corpus(num_dialogs=6, utterances_per_dialog=10, seed=1)
    insts = build_corpus_instances(corpus)
    _, history = fit(insts, TrainConfig(**{**_SMALL, "epochs": 8, "learning_rate": 0.01}), seed=0)
    assert history[-1] < history[0]


def test_train_is_deterministic():
    corpus = generate_corpus(num_dialogs=6, utterances_per_dialog=10, seed=1)
    cfg = TrainConfig(**_SMALL, folds=2)
    a, b = train(corpus, cfg), train(corpus, cfg)
    assert a.plan.to_json() == b.plan.to_json()
    assert a.average == b.average
    for fa, fb in zip(a.folds, b.folds):
        assert checkpoint_bytes(fa.params) == checkpoint_bytes(fb.params)
        assert fa.history == fb.history
    c = train(corpus, TrainConfig(**_SMALL, folds=2, seed=7))
    assert checkpoint_bytes(c.folds[0].params) != checkpoint_bytes(a.folds[0].params)


def test_heldout_folds_not_oversampled():
    corpus = generate_corpus(num_dialogs=6, utterances_per_dialog=10, seed=1)
    res = train(corpus, TrainConfig(**_SMALL, folds=3))
    insts = build_corpus_instances(corpus)
    assert sum(len(f.test_instances) for f in res.folds) == len(insts)
    for f in res.folds:
        assert all(i.replica == 0 for i in f.test_instances)
        assert f.oversampled_size >= f.train_size
