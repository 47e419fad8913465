"""Cross-validated training of the classifier from scratch."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .corpus import Dialog, Label
from .errors import DataError
from .instances import (
    FoldPlan,
    Instance,
    build_corpus_instances,
    make_folds,
    make_instance_folds,
    oversample,
    sub_seed,
)
from .metrics import EvalReport, average_reports, compute_metrics
from .model import ModelConfig, ModelParams, decide, init_params, loss_and_gradients, make_provider, predict_proba

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 30
    batch_size: int = 16
    seed: int = 42
    d_h: int = 64
    heads: int = 4
    context_size: int = 5
    chunk_len: int = 512
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 5.0
    d_u: int = 64
    d_c: int = 32
    buckets: int = 4096
    folds: int = 3
    fold_unit: str = "dialog"
    encoder: str = "subword"
    float32: bool = False

    def __post_init__(self):
        for name in ("learning_rate", "epochs", "batch_size", "clip_norm", "eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("moment coefficients must lie in [0, 1)")
        if self.context_size < 0:
            raise ValueError("context_size must be >= 0")
        if self.fold_unit not in ("dialog", "instance"):
            raise ValueError("fold_unit must be 'dialog' or 'instance'")
        self.model_config()  # validates architecture fields

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d_u=self.d_u,
            d_h=self.d_h,
            heads=self.heads,
            d_c=self.d_c,
            buckets=self.buckets,
            encoder=self.encoder,
            chunk_len=self.chunk_len,
            dtype="float32" if self.float32 else "float64",
        )

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, tensors: dict, grads: dict) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            tensors[name] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(g.dtype, copy=False)


def clip_gradients(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place to global L2 norm <= max_norm; return the original norm."""
    norm = math.sqrt(math.fsum(float(np.vdot(g, g)) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
    return norm


def evaluate(instances: Sequence[Instance], params: ModelParams, provider) -> tuple[EvalReport, list[Label], np.ndarray]:
    probs = predict_proba(instances, params, provider)
    pred = [decide(p) for p in probs[:, 0]]
    return compute_metrics([i.label for i in instances], pred), pred, probs


def fit(
    train: Sequence[Instance],
    config: TrainConfig,
    seed: int,
    vectors=None,
    tag: str = "",
) -> tuple[ModelParams, list[float]]:
    """Oversample ``train`` and run minibatch Adam. Returns (params, epoch losses)."""
    mcfg = config.model_config()
    params = init_params(mcfg, np.random.default_rng(sub_seed(seed, f"init{tag}")))
    provider = make_provider(mcfg, vectors)
    data = oversample(list(train), sub_seed(seed, f"oversample{tag}"))
    shuffle = np.random.default_rng(sub_seed(seed, f"shuffle{tag}"))
    opt = Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
    history = []
    for epoch in range(config.epochs):
        order = shuffle.permutation(len(data))
        losses = []
        for s in range(0, len(order), config.batch_size):
            batch = [data[i] for i in order[s:s + config.batch_size]]
            loss, grads = loss_and_gradients(batch, params, provider)
            clip_gradients(grads, config.clip_norm)
            opt.step(params.tensors, grads)
            losses.append(loss * len(batch))
        history.append(math.fsum(losses) / len(data))
        log.info("fold%s epoch %d loss %.5f", tag, epoch + 1, history[-1])
    return params, history


@dataclass
class FoldResult:
    params: ModelParams
    test_report: EvalReport
    train_report: EvalReport
    history: list[float]
    test_instances: list[Instance] = field(repr=False)
    predictions: list[Label] = field(repr=False)
    probabilities: np.ndarray = field(repr=False)
    train_size: int = 0
    oversampled_size: int = 0


@dataclass
class TrainResult:
    plan: FoldPlan
    folds: list[FoldResult]
    average: EvalReport
    average_train: EvalReport


def train(corpus: list[Dialog], config: TrainConfig, vectors=None) -> TrainResult:
    """k-fold cross-validation; oversampling touches training splits only."""
    instances = build_corpus_instances(corpus, config.context_size)
    if not instances:
        raise DataError("corpus yields no labeled anchor instances")
    if config.fold_unit == "dialog":
        plan = make_folds(corpus, config.folds, sub_seed(config.seed, "folds"))
    else:
        plan = make_instance_folds(instances, config.folds, sub_seed(config.seed, "folds"))
    mcfg = config.model_config()
    results = []
    for k in range(plan.num_folds):
        tr, te = plan.split(instances, k)
        if not te:
            raise DataError(f"fold {k} has no evaluation instances")
        params, history = fit(tr, config, config.seed, vectors, tag=f"/{k}")
        provider = make_provider(mcfg, vectors)
        test_report, pred, probs = evaluate(te, params, provider)
        train_report, _, _ = evaluate(tr, params, provider)
        n_op = sum(i.label is Label.OPINIONATED for i in tr)
        results.append(
            FoldResult(params, test_report, train_report, history, te, pred, probs, len(tr), 2 * max(n_op, len(tr) - n_op))
        )
        log.info("fold %d weighted F1 test %.4f train %.4f", k, test_report.weighted.f1, train_report.weighted.f1)
    return TrainResult(
        plan,
        results,
        average_reports([r.test_report for r in results]),
        average_reports([r.train_report for r in results]),
    )
