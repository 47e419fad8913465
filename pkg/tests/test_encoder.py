import numpy as np
import pytest

from anchorop.corpus import SpeakerId, Utterance
from anchorop.encoder import (
    NUM_CHARS,
    PrecomputedProvider,
    SubwordProvider,
    backward_flat,
    encode_long,
    encode_utterance,
    flatten,
    fnv1a_32,
    forward_flat,
    init_encoder_params,
    load_precomputed,
    pool_weights,
    save_precomputed,
    sinusoid,
    split_chunks,
    token_features,
)
from anchorop.errors import DataError


@pytest.fixture
def params(rng):
    p = init_encoder_params(rng, d_c=8, d_u=6, buckets=97)
    # non-zero queries so attention is not uniform
    p["word_pool_query"] = rng.normal(size=8)
    p["utterance_pool_query"] = rng.normal(size=8)
    return p


def test_fnv_reference_values():
    # published FNV-1a 32-bit test vectors
    assert fnv1a_32(b"") == 0x811C9DC5
    assert fnv1a_32(b"a") == 0xE40C292C
    assert fnv1a_32(b"foobar") == 0xBF9CF968


def test_token_features():
    chars, grams = token_features("abcd", 1000)
    assert chars.tolist() == [0, 1, 2, 3]
    assert len(grams) == 3 + 2 + 1
    assert grams[0] == fnv1a_32(b"ab") % 1000
    assert token_features("é", 10)[0].tolist() == [NUM_CHARS - 1]


def test_sinusoid_rows():
    pe = sinusoid(np.array([0, 3]), 4)
    assert pe[0].tolist() == [0.0, 1.0, 0.0, 1.0]
    assert pe[1] == pytest.approx([np.sin(3), np.cos(3), np.sin(3 / 100), np.cos(3 / 100)], abs=1e-15)


def test_single_character_word(params):
    # one char, no n-grams, one word at position 0
    c = params["char_embedding"][0]
    expected = (c + params["position_scale"][0] * sinusoid(np.array([0]), 8)[0]) @ params["projection"]
    assert encode_utterance(["a"], params) == pytest.approx(expected, abs=1e-14)
    params["position_scale"][:] = 0.0
    assert np.array_equal(encode_utterance(["a"], params), c @ params["projection"])


def test_pool_weights_normalised(params):
    words, utt = pool_weights(["kya", "baat", "hai", "ji"], params)
    assert utt.sum() == pytest.approx(1.0, abs=1e-12)
    for w in words:
        assert w.sum() == pytest.approx(1.0, abs=1e-12)


def test_order_sensitive(params):
    a = encode_utterance(["kya", "baat", "hai"], params)
    b = encode_utterance(["hai", "baat", "kya"], params)
    assert not np.allclose(a, b)


def test_chunk_rule(params, rng):
    vocab = ["bilkul", "sahi", "aap", "<name>", "kya", "hai", "desh", "vote"]
    toks = [vocab[i] for i in rng.integers(0, len(vocab), 1192)]
    assert [len(c) for c in split_chunks(toks, 512)] == [512, 512, 168]
    short = toks[:512]
    assert np.array_equal(encode_long(short, params), encode_utterance(short, params))
    hand = (encode_utterance(toks[:512], params) + encode_utterance(toks[512:1024], params)
            + encode_utterance(toks[1024:], params)) / 3
    assert np.max(np.abs(encode_long(toks, params) - hand)) <= 1e-12
    assert len(split_chunks(toks[:513], 512)) == 2


def test_batch_matches_single(params):
    utts = [["kya", "hua"], ["bilkul"] * 7, ["a", "b", "c", "d", "e"]]
    fb = flatten(utts, 97, chunk_len=3)
    out, _ = forward_flat(params, fb)
    for row, toks in zip(out, utts):
        assert row == pytest.approx(encode_long(toks, params, 3), abs=1e-13)


def test_empty_utterance_rejected(params):
    with pytest.raises(DataError):
        encode_utterance([], params)
    with pytest.raises(DataError):
        encode_long([], params)


def test_encoder_gradient(params, rng):
    utts = [["kya", "hua", "ji"], ["bilkul", "sahi", "kya", "aap", "log"], ["x"]]
    fb = flatten(utts, 97, chunk_len=2)
    R = rng.normal(size=(3, 6))
    out, cache = forward_flat(params, fb)
    grads = backward_flat(params, cache, R)
    h = 1e-6
    for name, arr in params.items():
        flat = arr.reshape(-1)
        idx = range(flat.size) if flat.size < 60 else rng.choice(flat.size, 60, replace=False)
        num = np.zeros(flat.size)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            up = np.sum(forward_flat(params, fb)[0] * R)
            flat[i] = old - h
            dn = np.sum(forward_flat(params, fb)[0] * R)
            flat[i] = old
            num[i] = (up - dn) / (2 * h)
        ana = grads[name].reshape(-1)
        sel = np.array(list(idx))
        err = np.linalg.norm(ana[sel] - num[sel]) / max(np.linalg.norm(num[sel]), 1e-12)
        assert err < 1e-6 or np.linalg.norm(num[sel]) < 1e-9, name


def test_subword_provider_prefix(params):
    full = {"enc." + k: v for k, v in params.items()}
    full["clf.weight"] = np.zeros((6, 2))
    prov = SubwordProvider(512)
    utts = [Utterance("d", 0, SpeakerId(0), ("kya", "hua"), None)]
    vecs, cache = prov.forward(full, utts)
    assert np.array_equal(vecs[0], encode_utterance(["kya", "hua"], params))
    assert set(prov.backward(full, cache, np.ones((1, 6)))) == {"enc." + k for k in params}


def test_shared_ngrams_bring_variants_closer(rng):
    # variant spellings share character n-grams, so they start out nearer
    # than unrelated words do, on average over initialisations
    def cos(a, b):
        return a @ b / np.linalg.norm(a) / np.linalg.norm(b)

    near, far = [], []
    for seed in range(20):
        p = init_encoder_params(np.random.default_rng(seed), 16, 16, 512)
        e = {w: encode_utterance([w], p) for w in ("bilkul", "bilkull", "mandir")}
        near.append(cos(e["bilkul"], e["bilkull"]))
        far.append(cos(e["bilkul"], e["mandir"]))
    assert np.mean(near) > np.mean(far) + 0.3


# --- precomputed vectors ----------------------------------------------------

def test_odnv_roundtrip(tmp_path, rng):
    vecs = {("d1", 0): rng.normal(size=5), ("d#2", 3): rng.normal(size=5)}
    save_precomputed(tmp_path / "v.odnv", vecs)
    prov = load_precomputed(tmp_path / "v.odnv")
    assert len(prov) == 2 and prov.dim == 5
    for k, v in vecs.items():
        assert np.array_equal(prov[k], v.astype(np.float32).astype(np.float64))
    with pytest.raises(DataError, match="no precomputed vector"):
        prov[("zz", 0)]


def test_odnv_mixed_dimensions(tmp_path):
    good = {("d1", 0): np.ones(4), ("d1", 1): np.ones(4)}
    save_precomputed(tmp_path / "v.odnv", good)
    data = bytearray((tmp_path / "v.odnv").read_bytes())
    # append an extra float to the first record, as if it were 5-dimensional
    first_end = 18 + 4 + len(b"d1#0") + 16
    data[first_end:first_end] = np.float32(7).tobytes()
    (tmp_path / "bad.odnv").write_bytes(bytes(data))
    with pytest.raises(DataError, match="dimension"):
        load_precomputed(tmp_path / "bad.odnv")
    with pytest.raises(DataError):
        save_precomputed(tmp_path / "x.odnv", {("a", 0): np.ones(3), ("a", 1): np.ones(4)})
    with pytest.raises(DataError):
        PrecomputedProvider({("a", 0): np.ones(3), ("a", 1): np.ones(4)})


def test_odnv_rejects_garbage(tmp_path):
    (tmp_path / "g.odnv").write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(DataError, match="ODNV"):
        load_precomputed(tmp_path / "g.odnv")
