"""Interactive-attention opinion classifier with hand-written backprop.

Pipeline per instance (context utterances then the target):

    utterance vectors -> biLSTM -> multi-head self-attention (+ residual)
    -> interactive attention with the target state as query -> softmax

Everything below works on batches of equal-length instances, shaped
``(B, T, ...)``; public single-instance helpers wrap those kernels.
Class index 0 is Opinionated, 1 is NonOpinionated.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels as K
from .corpus import Label
from .encoder import DEFAULT_CHUNK_LEN, PrecomputedProvider, SubwordProvider, init_encoder_params
from .errors import DataError, NumericError
from .instances import Instance

CLASSES = (Label.OPINIONATED, Label.NON_OPINIONATED)


@dataclass(frozen=True)
class ModelConfig:
    d_u: int = 64
    d_h: int = 64
    heads: int = 4
    d_c: int = 32
    buckets: int = 4096
    encoder: str = "subword"
    chunk_len: int = DEFAULT_CHUNK_LEN
    dtype: str = "float64"

    def __post_init__(self):
        if (2 * self.d_h) % self.heads:
            raise ValueError(f"heads={self.heads} must divide 2*d_h={2 * self.d_h}")
        if self.encoder not in ("subword", "precomputed"):
            raise ValueError(f"unknown encoder {self.encoder!r}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")
        for name in ("d_u", "d_h", "heads", "d_c", "buckets", "chunk_len"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")


@dataclass
class ModelParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(repr=False)

    def __getitem__(self, name):
        return self.tensors[name]

    def copy(self) -> ModelParams:
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    @property
    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())


def _glorot(rng, shape, dtype):
    lim = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-lim, lim, shape).astype(dtype)


def init_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform matrices, zero biases, forget-gate bias 1."""
    dt = np.dtype(config.dtype)
    t = {}
    if config.encoder == "subword":
        for k, v in init_encoder_params(rng, config.d_c, config.d_u, config.buckets, dt).items():
            t["enc." + k] = v
    dh, D = config.d_h, 2 * config.d_h
    for side in ("fwd", "bwd"):
        t[f"lstm.{side}.W"] = _glorot(rng, (config.d_u, 4 * dh), dt)
        t[f"lstm.{side}.U"] = _glorot(rng, (dh, 4 * dh), dt)
        b = np.zeros(4 * dh, dtype=dt)
        b[dh:2 * dh] = 1.0
        t[f"lstm.{side}.b"] = b
    for m in ("q", "k", "v", "o"):
        t[f"mha.{m}"] = _glorot(rng, (D, D), dt)
    t["clf.weight"] = _glorot(rng, (D, 2), dt)
    t["clf.bias"] = np.zeros(2, dtype=dt)
    return ModelParams(config, t)


def make_provider(config: ModelConfig, vectors: PrecomputedProvider | None = None):
    if config.encoder == "subword":
        return SubwordProvider(config.chunk_len)
    if vectors is None:
        raise DataError("precomputed encoder selected but no vectors supplied")
    if vectors.dim != config.d_u:
        raise DataError(f"precomputed vectors have d_u={vectors.dim}, model expects {config.d_u}")
    return vectors


def _check(name, x):
    if not np.all(np.isfinite(x)):
        raise NumericError(f"non-finite values in {name}")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softmax(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


# ---------------------------------------------------------------------------
# biLSTM
# ---------------------------------------------------------------------------

def _lstm_forward(X, W, U, b):
    B, T, _ = X.shape
    dh = U.shape[0]
    h = np.zeros((B, dh), dtype=X.dtype)
    c = np.zeros((B, dh), dtype=X.dtype)
    XW = X @ W
    H = np.empty((B, T, dh), dtype=X.dtype)
    gates = np.empty((B, T, 4 * dh), dtype=X.dtype)
    Cs = np.empty((B, T, dh), dtype=X.dtype)
    for t in range(T):
        a = XW[:, t] + h @ U + b
        i = _sigmoid(a[:, :dh])
        f = _sigmoid(a[:, dh:2 * dh])
        g = np.tanh(a[:, 2 * dh:3 * dh])
        o = _sigmoid(a[:, 3 * dh:])
        c = f * c + i * g
        h = o * np.tanh(c)
        gates[:, t] = np.concatenate([i, f, g, o], axis=1)
        Cs[:, t] = c
        H[:, t] = h
    return H, (X, H, gates, Cs)


def _lstm_backward(dH, cache, W, U):
    X, H, gates, Cs = cache
    B, T, dh = H.shape
    dA = np.empty_like(gates)
    dh_next = np.zeros((B, dh), dtype=H.dtype)
    dc_next = np.zeros((B, dh), dtype=H.dtype)
    for t in reversed(range(T)):
        i, f, g, o = (gates[:, t, k * dh:(k + 1) * dh] for k in range(4))
        tc = np.tanh(Cs[:, t])
        c_prev = Cs[:, t - 1] if t > 0 else np.zeros_like(tc)
        dh_t = dH[:, t] + dh_next
        do = dh_t * tc
        dc = dh_t * o * (1.0 - tc * tc) + dc_next
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        dc_next = dc * f
        da = np.concatenate([di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=1)
        dA[:, t] = da
        dh_next = da @ U.T
    H_prev = np.concatenate([np.zeros((B, 1, dh), dtype=H.dtype), H[:, :-1]], axis=1)
    dW = np.einsum("bti,btj->ij", X, dA)
    dU = np.einsum("bti,btj->ij", H_prev, dA)
    db = dA.sum(axis=(0, 1))
    dX = dA @ W.T
    return dX, dW, dU, db


def _bilstm_forward(X, p):
    Hf, cf = _lstm_forward(X, p["lstm.fwd.W"], p["lstm.fwd.U"], p["lstm.fwd.b"])
    Hb, cb = _lstm_forward(X[:, ::-1], p["lstm.bwd.W"], p["lstm.bwd.U"], p["lstm.bwd.b"])
    return np.concatenate([Hf, Hb[:, ::-1]], axis=-1), (cf, cb)


def _bilstm_backward(dH, cache, p, grads):
    cf, cb = cache
    dh = dH.shape[-1] // 2
    dXf, dW, dU, db = _lstm_backward(dH[..., :dh], cf, p["lstm.fwd.W"], p["lstm.fwd.U"])
    grads["lstm.fwd.W"] += dW
    grads["lstm.fwd.U"] += dU
    grads["lstm.fwd.b"] += db
    dXb, dW, dU, db = _lstm_backward(np.ascontiguousarray(dH[:, ::-1, dh:]), cb, p["lstm.bwd.W"], p["lstm.bwd.U"])
    grads["lstm.bwd.W"] += dW
    grads["lstm.bwd.U"] += dU
    grads["lstm.bwd.b"] += db
    return dXf + dXb[:, ::-1]


# ---------------------------------------------------------------------------
# multi-head self-attention
# ---------------------------------------------------------------------------

def _split(x, heads):
    B, T, D = x.shape
    return x.reshape(B, T, heads, D // heads).transpose(0, 2, 1, 3)


def _merge(x):
    B, Hh, T, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, Hh * dk)


def _mha_forward(H0, p, heads):
    dk = H0.shape[-1] // heads
    scale = 1.0 / math.sqrt(dk)
    Q = _split(H0 @ p["mha.q"], heads)
    Kh = _split(H0 @ p["mha.k"], heads)
    V = _split(H0 @ p["mha.v"], heads)
    A = _softmax(Q @ Kh.transpose(0, 1, 3, 2) * scale)
    ctx = _merge(A @ V)
    out = H0 + ctx @ p["mha.o"]
    return out, (H0, Q, Kh, V, A, ctx, scale)


def _mha_backward(dout, cache, p, grads, heads):
    H0, Q, Kh, V, A, ctx, scale = cache
    grads["mha.o"] += np.einsum("bti,btj->ij", ctx, dout)
    dctx = _split(dout @ p["mha.o"].T, heads)
    dA = dctx @ V.transpose(0, 1, 3, 2)
    dV = A.transpose(0, 1, 3, 2) @ dctx
    dS = A * (dA - np.sum(dA * A, axis=-1, keepdims=True)) * scale
    dQ = _merge(dS @ Kh)
    dK = _merge(dS.transpose(0, 1, 3, 2) @ Q)
    dV = _merge(dV)
    grads["mha.q"] += np.einsum("bti,btj->ij", H0, dQ)
    grads["mha.k"] += np.einsum("bti,btj->ij", H0, dK)
    grads["mha.v"] += np.einsum("bti,btj->ij", H0, dV)
    return dout + dQ @ p["mha.q"].T + dK @ p["mha.k"].T + dV @ p["mha.v"].T


# ---------------------------------------------------------------------------
# interactive attention + classifier
# ---------------------------------------------------------------------------

def _interactive_forward(H1):
    Hh = np.tanh(H1)
    mu = H1[:, -1]
    scores = np.einsum("btd,bd->bt", Hh, mu)
    alpha = _softmax(scores)
    v = np.einsum("bt,btd->bd", alpha, Hh)
    return v, (Hh, mu, alpha)


def _interactive_backward(dv, cache):
    Hh, mu, alpha = cache
    dalpha = np.einsum("btd,bd->bt", Hh, dv)
    ds = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
    dHh = alpha[:, :, None] * dv[:, None, :] + ds[:, :, None] * mu[:, None, :]
    dmu = np.einsum("bt,btd->bd", ds, Hh)
    dH1 = dHh * (1.0 - Hh * Hh)
    dH1[:, -1] += dmu
    return dH1


def _forward_group(X, p, heads):
    H0, c_lstm = _bilstm_forward(X, p)
    _check("biLSTM states", H0)
    H1, c_mha = _mha_forward(H0, p, heads)
    _check("self-attention output", H1)
    v, c_int = _interactive_forward(H1)
    logits = v @ p["clf.weight"] + p["clf.bias"]
    _check("logits", logits)
    return logits, (c_lstm, c_mha, c_int, v)


def _backward_group(dlogits, cache, p, grads, heads):
    c_lstm, c_mha, c_int, v = cache
    grads["clf.weight"] += v.T @ dlogits
    grads["clf.bias"] += dlogits.sum(axis=0)
    dv = dlogits @ p["clf.weight"].T
    dH1 = _interactive_backward(dv, c_int)
    dH0 = _mha_backward(dH1, c_mha, p, grads, heads)
    return _bilstm_backward(dH0, c_lstm, p, grads)


# ---------------------------------------------------------------------------
# batch driver
# ---------------------------------------------------------------------------

class _Layout(NamedTuple):
    utterances: list
    groups: list  # (instance indices, (B, T) utterance index matrix)


def _layout(instances: Sequence[Instance]) -> _Layout:
    index, utts = {}, []
    by_len: dict[int, list[int]] = {}
    rows = []
    for n, inst in enumerate(instances):
        row = []
        for u in inst.utterances:
            if u.key not in index:
                index[u.key] = len(utts)
                utts.append(u)
            row.append(index[u.key])
        rows.append(row)
        by_len.setdefault(len(row), []).append(n)
    groups = [(np.array(ix), np.array([rows[i] for i in ix], dtype=np.int64)) for _, ix in sorted(by_len.items())]
    return _Layout(utts, groups)


def _targets(instances):
    return np.array([CLASSES.index(inst.label) for inst in instances], dtype=np.int64)


def forward_logits(instances: Sequence[Instance], params: ModelParams, provider, keep_cache=False):
    if not instances:
        raise DataError("empty batch")
    p = params.tensors
    lay = _layout(instances)
    U, enc_cache = provider.forward(p, lay.utterances)
    _check("utterance vectors", U)
    logits = np.empty((len(instances), 2), dtype=U.dtype)
    caches = []
    for ix, mat in lay.groups:
        lg, cache = _forward_group(U[mat], p, params.config.heads)
        logits[ix] = lg
        if keep_cache:
            caches.append(cache)
    return logits, (lay, U, enc_cache, caches)


def _log_softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    return logits - m - np.log(np.exp(logits - m).sum(axis=1, keepdims=True))


def loss_and_gradients(instances: Sequence[Instance], params: ModelParams, provider):
    """Mean cross-entropy over the batch and its gradient for every tensor."""
    p = params.tensors
    logits, (lay, U, enc_cache, caches) = forward_logits(instances, params, provider, keep_cache=True)
    y = _targets(instances)
    logp = _log_softmax(logits)
    n = len(instances)
    loss = float(-logp[np.arange(n), y].mean())
    if not math.isfinite(loss):
        raise NumericError("non-finite values in loss")
    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    grads = {k: np.zeros_like(v) for k, v in p.items()}
    dU = np.zeros_like(U)
    for (ix, mat), cache in zip(lay.groups, caches):
        dX = _backward_group(dlogits[ix], cache, p, grads, params.config.heads)
        K.scatter_add_rows(dU, mat.ravel(), dX.reshape(-1, dX.shape[-1]))
    for k, g in provider.backward(p, enc_cache, dU).items():
        grads[k] += g
    for k, g in grads.items():
        _check(f"gradient of {k}", g)
    return loss, grads


def predict_proba(instances: Sequence[Instance], params: ModelParams, provider, batch_size: int = 64) -> np.ndarray:
    """(N, 2) class probabilities, column 0 = Opinionated."""
    out = []
    for s in range(0, len(instances), batch_size):
        logits, _ = forward_logits(instances[s:s + batch_size], params, provider)
        out.append(np.exp(_log_softmax(logits)))
    return np.concatenate(out) if out else np.empty((0, 2))


def decide(p_opinion: float) -> Label:
    """Exact ties go to NonOpinionated."""
    return Label.OPINIONATED if p_opinion > 0.5 else Label.NON_OPINIONATED


# ---------------------------------------------------------------------------
# single-instance views
# ---------------------------------------------------------------------------

class AttentionResult(NamedTuple):
    h_hat: np.ndarray
    alpha: np.ndarray
    v: np.ndarray
    mu_s: np.ndarray


class Prediction(NamedTuple):
    label: Label
    p_opinion: float
    attention: AttentionResult


def bilstm_forward(vectors: np.ndarray, params: ModelParams) -> np.ndarray:
    """Hidden states (T, 2*d_h), forward half first."""
    X = np.asarray(vectors)
    if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] != params["lstm.fwd.W"].shape[0]:
        raise DataError(f"expected (T, {params['lstm.fwd.W'].shape[0]}) utterance vectors, got {X.shape}")
    H, _ = _bilstm_forward(X[None], params.tensors)
    return H[0]


def self_attention(h: np.ndarray, params: ModelParams, heads: int | None = None):
    """(output states, per-head attention weights (H, T, T))."""
    heads = heads or params.config.heads
    if h.shape[-1] % heads:
        raise DataError(f"{heads} heads do not divide state size {h.shape[-1]}")
    out, cache = _mha_forward(h[None], params.tensors, heads)
    return out[0], cache[4][0]


def interactive_attention(h: np.ndarray) -> AttentionResult:
    v, (Hh, mu, alpha) = _interactive_forward(h[None])
    return AttentionResult(Hh[0], alpha[0], v[0], mu[0])


def classify(v: np.ndarray, params: ModelParams) -> np.ndarray:
    logits = v @ params["clf.weight"] + params["clf.bias"]
    return np.exp(_log_softmax(logits[None]))[0]


def predict(instance: Instance, params: ModelParams, provider) -> Prediction:
    U, _ = provider.forward(params.tensors, list(instance.utterances))
    H0 = bilstm_forward(U, params)
    H1, _ = self_attention(H0, params)
    att = interactive_attention(H1)
    probs = classify(att.v, params)
    return Prediction(decide(probs[0]), float(probs[0]), att)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"ODNM"
_CKPT_VERSION = 1


def checkpoint_bytes(params: ModelParams, extra: dict | None = None) -> bytes:
    block = {"model": asdict(params.config)}
    if extra:
        block["extra"] = extra
    cfg = json.dumps(block, sort_keys=True).encode("utf-8")
    parts = [_CKPT_MAGIC, struct.pack("<HI", _CKPT_VERSION, len(cfg)), cfg, struct.pack("<I", len(params.tensors))]
    for name, arr in params.tensors.items():
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def save_checkpoint(path, params: ModelParams, extra: dict | None = None) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(params, extra))


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    """Returns (params, extra metadata block)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _CKPT_MAGIC:
        raise DataError(f"{path}: not a model checkpoint")
    try:
        version, n = struct.unpack_from("<HI", data, 4)
        if version != _CKPT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        off = 10
        block = json.loads(data[off:off + n].decode("utf-8"))
        off += n
        config = ModelConfig(**block["model"])
        dt = np.dtype(config.dtype)
        (count,) = struct.unpack_from("<I", data, off)
        off += 4
        tensors = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + ln].decode("utf-8")
            off += ln
            (rank,) = struct.unpack_from("<B", data, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}Q", data, off)
            off += 8 * rank
            size = int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(shape)
            off += 8 * size
            tensors[name] = arr.astype(dt)
    except (struct.error, ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{path}: corrupt checkpoint ({exc})") from None
    if off != len(data):
        raise DataError(f"{path}: trailing bytes in checkpoint")
    return ModelParams(config, tensors), block.get("extra", {})
