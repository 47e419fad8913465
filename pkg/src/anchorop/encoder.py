"""Utterance encoders.

The built-in encoder is a small hierarchical subword model: each word is an
attention pool over its character embeddings and hashed character n-gram
embeddings, each utterance an attention pool over position-tagged word
vectors, followed by a linear projection. Utterances longer than
``chunk_len`` tokens are split into consecutive chunks whose encodings are
averaged.

Encoder parameters are plain dicts of arrays with keys ``char_embedding``,
``ngram_embedding``, ``word_pool_query``, ``utterance_pool_query``,
``position_scale`` and ``projection``.
"""

from __future__ import annotations

import functools
import math
import struct
from typing import Mapping, Sequence

import numpy as np

from . import _kernels as K
from .errors import DataError

ALPHABET = "abcdefghijklmnopqrstuvwxyz0123456789<>_"
OOV_CHAR = len(ALPHABET)
NUM_CHARS = len(ALPHABET) + 1
NGRAM_SIZES = (2, 3, 4)
DEFAULT_CHUNK_LEN = 512

_CHAR_INDEX = {c: i for i, c in enumerate(ALPHABET)}

_FNV_OFFSET = 0x811C9DC5
_FNV_PRIME = 0x01000193


def fnv1a_32(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & 0xFFFFFFFF
    return h


@functools.lru_cache(maxsize=1 << 17)
def token_features(token: str, buckets: int) -> tuple[np.ndarray, np.ndarray]:
    """(character ids, hashed n-gram bucket ids) for one token."""
    chars = np.array([_CHAR_INDEX.get(c, OOV_CHAR) for c in token], dtype=np.int64)
    grams = [
        fnv1a_32(token[i:i + n].encode("utf-8")) % buckets
        for n in NGRAM_SIZES
        for i in range(len(token) - n + 1)
    ]
    return chars, np.array(grams, dtype=np.int64)


@functools.lru_cache(maxsize=16)
def _sinusoid_table(n: int, d: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    k = np.arange(d)
    freq = 1.0 / np.power(10000.0, 2 * (k // 2) / d)
    ang = pos * freq
    table = np.where(k % 2 == 0, np.sin(ang), np.cos(ang))
    table.flags.writeable = False
    return table


def sinusoid(positions: np.ndarray, d: int) -> np.ndarray:
    n = 1 << max(9, int(positions.max(initial=0)).bit_length())
    return _sinusoid_table(n, d)[positions]


def init_encoder_params(rng: np.random.Generator, d_c=32, d_u=64, buckets=4096, dtype=np.float64) -> dict:
    if buckets < 1:
        raise ValueError("buckets must be >= 1")
    emb = math.sqrt(3.0 / d_c)
    proj = math.sqrt(6.0 / (d_c + d_u))
    return {
        "char_embedding": rng.uniform(-emb, emb, (NUM_CHARS, d_c)).astype(dtype),
        "ngram_embedding": rng.uniform(-emb, emb, (buckets, d_c)).astype(dtype),
        "word_pool_query": np.zeros(d_c, dtype=dtype),
        "utterance_pool_query": np.zeros(d_c, dtype=dtype),
        "position_scale": np.full(1, 0.1, dtype=dtype),
        "projection": rng.uniform(-proj, proj, (d_c, d_u)).astype(dtype),
    }


# ---------------------------------------------------------------------------
# flattened batch layout
# ---------------------------------------------------------------------------

class FlatBatch:
    """Index arrays describing a batch of token chunks.

    Elements (characters and n-grams) are grouped per word by
    ``word_starts``; words are grouped per chunk by ``chunk_starts``;
    ``chunk_starts_per_utt`` groups chunks per output utterance.
    """

    __slots__ = ("is_char", "ids", "word_starts", "word_pos", "chunk_starts", "utt_starts", "n_utts")

    def __init__(self, chunks: Sequence[Sequence[str]], chunks_per_utt: Sequence[int], buckets: int):
        is_char, ids, word_lens, word_pos, chunk_lens = [], [], [], [], []
        for chunk in chunks:
            if not chunk:
                raise DataError("cannot encode an empty token list")
            for tok in chunk:
                c, g = token_features(tok, buckets)
                is_char.append(np.ones(len(c), dtype=bool))
                is_char.append(np.zeros(len(g), dtype=bool))
                ids.append(c)
                ids.append(g)
                word_lens.append(len(c) + len(g))
            word_pos.append(np.arange(len(chunk)))
            chunk_lens.append(len(chunk))
        self.is_char = np.concatenate(is_char)
        self.ids = np.concatenate(ids)
        self.word_starts = np.concatenate([[0], np.cumsum(word_lens)]).astype(np.int64)
        self.word_pos = np.concatenate(word_pos)
        self.chunk_starts = np.concatenate([[0], np.cumsum(chunk_lens)]).astype(np.int64)
        self.utt_starts = np.concatenate([[0], np.cumsum(chunks_per_utt)]).astype(np.int64)
        self.n_utts = len(chunks_per_utt)


def split_chunks(tokens: Sequence[str], chunk_len: int) -> list[Sequence[str]]:
    if chunk_len <= 0:
        raise ValueError("chunk_len must be positive")
    return [tokens[i:i + chunk_len] for i in range(0, len(tokens), chunk_len)]


def flatten(token_lists: Sequence[Sequence[str]], buckets: int, chunk_len: int | None = DEFAULT_CHUNK_LEN) -> FlatBatch:
    chunks, per = [], []
    for toks in token_lists:
        if not toks:
            raise DataError("cannot encode an empty token list")
        parts = [toks] if chunk_len is None else split_chunks(toks, chunk_len)
        chunks.extend(parts)
        per.append(len(parts))
    return FlatBatch(chunks, per, buckets)


def forward_flat(params: Mapping[str, np.ndarray], fb: FlatBatch):
    """Encode every utterance in ``fb``. Returns (vectors, cache)."""
    C, G = params["char_embedding"], params["ngram_embedding"]
    qw, qu = params["word_pool_query"], params["utterance_pool_query"]
    ps, P = params["position_scale"], params["projection"]

    X = np.empty((len(fb.ids), C.shape[1]), dtype=C.dtype)
    X[fb.is_char] = C[fb.ids[fb.is_char]]
    X[~fb.is_char] = G[fb.ids[~fb.is_char]]

    a = K.segment_softmax(X @ qw, fb.word_starts)
    words = K.segment_weighted_sum(a, X, fb.word_starts)
    pe = sinusoid(fb.word_pos, C.shape[1]).astype(C.dtype, copy=False)
    wp = words + ps[0] * pe
    b = K.segment_softmax(wp @ qu, fb.chunk_starts)
    z = K.segment_weighted_sum(b, wp, fb.chunk_starts)
    y = z @ P
    counts = np.diff(fb.utt_starts)
    if np.all(counts == 1):
        out = y
    else:
        out = np.add.reduceat(y, fb.utt_starts[:-1], axis=0) / counts[:, None]
    cache = (fb, X, a, pe, wp, b, z, counts)
    return out, cache


def backward_flat(params: Mapping[str, np.ndarray], cache, dout: np.ndarray) -> dict:
    fb, X, a, pe, wp, b, z, counts = cache
    C, G = params["char_embedding"], params["ngram_embedding"]
    qw, qu = params["word_pool_query"], params["utterance_pool_query"]
    ps, P = params["position_scale"], params["projection"]

    dy = np.repeat(dout / counts[:, None], counts, axis=0)
    dP = z.T @ dy
    dz = dy @ P.T
    db, dwp = K.segment_weighted_sum_backward(b, wp, dz, fb.chunk_starts)
    ds = K.segment_softmax_backward(b, db, fb.chunk_starts)
    dwp += ds[:, None] * qu
    dqu = wp.T @ ds
    dps = np.array([np.sum(dwp * pe)], dtype=ps.dtype)
    da, dX = K.segment_weighted_sum_backward(a, X, dwp, fb.word_starts)
    de = K.segment_softmax_backward(a, da, fb.word_starts)
    dX += de[:, None] * qw
    dqw = X.T @ de

    dC = np.zeros_like(C)
    dG = np.zeros_like(G)
    K.scatter_add_rows(dC, fb.ids[fb.is_char], dX[fb.is_char])
    K.scatter_add_rows(dG, fb.ids[~fb.is_char], dX[~fb.is_char])
    return {
        "char_embedding": dC,
        "ngram_embedding": dG,
        "word_pool_query": dqw,
        "utterance_pool_query": dqu,
        "position_scale": dps,
        "projection": dP,
    }


def encode_utterance(tokens: Sequence[str], params: Mapping[str, np.ndarray]) -> np.ndarray:
    """Encode ``tokens`` as one unit, whatever its length."""
    fb = flatten([tuple(tokens)], params["ngram_embedding"].shape[0], chunk_len=None)
    out, _ = forward_flat(params, fb)
    return out[0]


def encode_long(tokens: Sequence[str], params: Mapping[str, np.ndarray], chunk_len: int = DEFAULT_CHUNK_LEN) -> np.ndarray:
    """Mean of the encodings of consecutive ``chunk_len``-token chunks."""
    if chunk_len <= 0:
        raise ValueError("chunk_len must be positive")
    if not tokens:
        raise DataError("cannot encode an empty token list")
    tokens = tuple(tokens)
    if len(tokens) <= chunk_len:
        return encode_utterance(tokens, params)
    vecs = [encode_utterance(c, params) for c in split_chunks(tokens, chunk_len)]
    return np.mean(vecs, axis=0)


def pool_weights(tokens: Sequence[str], params: Mapping[str, np.ndarray]):
    """(per-word element weights, word weights) of a single-chunk encoding."""
    fb = flatten([tuple(tokens)], params["ngram_embedding"].shape[0], chunk_len=None)
    _, cache = forward_flat(params, fb)
    a, b = cache[2], cache[5]
    return [a[lo:hi] for lo, hi in zip(fb.word_starts[:-1], fb.word_starts[1:])], b


# ---------------------------------------------------------------------------
# providers
# ---------------------------------------------------------------------------

ENC_PREFIX = "enc."


class SubwordProvider:
    """Trainable built-in encoder; reads ``enc.*`` tensors from model params."""

    trainable = True

    def __init__(self, chunk_len: int = DEFAULT_CHUNK_LEN):
        if chunk_len <= 0:
            raise ValueError("chunk_len must be positive")
        self.chunk_len = chunk_len

    @staticmethod
    def encoder_params(params: Mapping[str, np.ndarray]) -> dict:
        return {k[len(ENC_PREFIX):]: v for k, v in params.items() if k.startswith(ENC_PREFIX)}

    def forward(self, params, utterances):
        enc = self.encoder_params(params)
        fb = flatten([u.tokens for u in utterances], enc["ngram_embedding"].shape[0], self.chunk_len)
        return forward_flat(enc, fb)

    def backward(self, params, cache, dvecs) -> dict:
        grads = backward_flat(self.encoder_params(params), cache, dvecs)
        return {ENC_PREFIX + k: v for k, v in grads.items()}


class PrecomputedProvider:
    """Frozen vectors looked up by (dialog_id, position)."""

    trainable = False

    def __init__(self, vectors: Mapping[tuple[str, int], np.ndarray]):
        dims = {np.asarray(v).shape for v in vectors.values()}
        if len(dims) > 1:
            raise DataError(f"precomputed vectors have mixed shapes {sorted(dims)}")
        self.vectors = {k: np.asarray(v, dtype=np.float64) for k, v in vectors.items()}
        self.dim = next(iter(dims))[0] if dims else 0

    def __getitem__(self, key):
        try:
            return self.vectors[key]
        except KeyError:
            raise DataError(f"no precomputed vector for {key}") from None

    def __contains__(self, key):
        return key in self.vectors

    def __len__(self):
        return len(self.vectors)

    def forward(self, params, utterances):
        vecs = np.stack([self[u.key] for u in utterances])
        dtype = params["clf.weight"].dtype if "clf.weight" in params else vecs.dtype
        return vecs.astype(dtype, copy=False), None

    def backward(self, params, cache, dvecs) -> dict:
        return {}


_VEC_MAGIC = b"ODNV"
_VEC_VERSION = 1


def _vec_id(key):
    return f"{key[0]}#{key[1]}".encode("utf-8")


def save_precomputed(path, vectors: Mapping[tuple[str, int], np.ndarray]) -> None:
    dims = {np.asarray(v).shape for v in vectors.values()}
    if len(dims) > 1:
        raise DataError(f"mixed vector shapes {sorted(dims)}")
    d = next(iter(dims))[0] if dims else 0
    with open(path, "wb") as fh:
        fh.write(_VEC_MAGIC + struct.pack("<HIQ", _VEC_VERSION, d, len(vectors)))
        for key in sorted(vectors, key=lambda k: (k[0], k[1])):
            ident = _vec_id(key)
            fh.write(struct.pack("<I", len(ident)) + ident)
            fh.write(np.asarray(vectors[key], dtype="<f4").tobytes())


def load_precomputed(path) -> PrecomputedProvider:
    """Parse an ODNV vector file strictly.

    The header fixes one dimension for every record, so a record of another
    width misaligns everything after it; that surfaces as a bad id, a short
    read or trailing bytes and is reported as a dimension mismatch.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _VEC_MAGIC:
        raise DataError(f"{path}: not an ODNV vector file")
    if len(data) < 18:
        raise DataError(f"{path}: truncated header")
    version, d, count = struct.unpack_from("<HIQ", data, 4)
    if version != _VEC_VERSION:
        raise DataError(f"{path}: unsupported version {version}")
    off = 18
    vectors = {}
    for i in range(count):
        try:
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            if n > len(data) - off:
                raise ValueError("id length past end of file")
            ident = data[off:off + n].decode("utf-8")
            off += n
            did, sep, pos = ident.rpartition("#")
            if not sep or not pos.isdigit():
                raise ValueError(f"bad id {ident!r}")
            if off + 4 * d > len(data):
                raise ValueError("vector past end of file")
            vec = np.frombuffer(data, dtype="<f4", count=d, offset=off).astype(np.float64)
            off += 4 * d
        except (ValueError, struct.error, UnicodeDecodeError) as exc:
            raise DataError(f"{path}: record {i}: {exc} (dimension mismatch or corrupt record; header d_u={d})") from None
        if not np.all(np.isfinite(vec)):
            raise DataError(f"{path}: record {i} ({ident}) has non-finite values")
        vectors[(did, int(pos))] = vec
    if off != len(data):
        raise DataError(f"{path}: {len(data) - off} trailing bytes (dimension mismatch or corrupt record; header d_u={d})")
    return PrecomputedProvider(vectors)
