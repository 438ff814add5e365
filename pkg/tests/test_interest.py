import numpy as np
import pytest

from mmrec.interest import (
    UNK,
    InterestFusionParams,
    ProfileVocab,
    StaticProfile,
    embed_profile,
    encode_batch,
    encode_sequence,
    user_representation,
)
from mmrec.numerics import BlockParams, DimensionError, sinusoidal_positions


def ln(x, g, b, eps=1e-6):
    mu = x.mean()
    return (x - mu) / np.sqrt(((x - mu) ** 2).mean() + eps) * g + b


def interest_params(rng, d=4, sizes=(3, 4, 2)):
    return InterestFusionParams(rng.normal(size=(d, 2 * d)), rng.normal(size=d), rng.normal(size=d),
                                tuple(rng.normal(size=(n, d)) for n in sizes))


def test_vocab_unk_and_roundtrip():
    profiles = [StaticProfile("f", "r1", "b0"), StaticProfile("m", "r2", "b1")]
    vocab = ProfileVocab.from_profiles(profiles)
    assert vocab.gender[0] == UNK and vocab.sizes() == (3, 3, 3)
    assert vocab.encode(StaticProfile("x", "r2", "b9")).tolist() == [0, 2, 0]
    assert ProfileVocab.from_json(vocab.to_json()) == vocab


def test_embed_profile_zero_tables():
    d = 3
    p = InterestFusionParams(np.zeros((d, 2 * d)), np.zeros(d), np.zeros(d), tuple(np.zeros((2, d)) for _ in range(3)))
    assert np.array_equal(embed_profile(np.array([1, 0, 1]), p), np.zeros(d))


def test_embed_profile_hand_sum():
    d = 4
    tables = (np.eye(d)[:2] * 1.0, np.eye(d)[:3] * 10.0, np.eye(d)[:4] * 100.0)
    p = InterestFusionParams(np.zeros((d, 2 * d)), np.zeros(d), np.zeros(d), tables)
    assert embed_profile(np.array([1, 2, 3]), p).tolist() == [0.0, 1.0, 10.0, 100.0]
    same = embed_profile(np.array([[1, 2, 3], [1, 2, 3]]), p)
    assert np.array_equal(same[0], same[1])


def test_empty_sequence_returns_h0():
    rng = np.random.default_rng(0)
    block = BlockParams.init(rng, 4)
    h0 = rng.normal(size=4)
    out = encode_sequence(np.zeros((0, 4)), block, h0)
    assert np.array_equal(out.vector, h0)


def test_single_item_hand_trace():
    rng = np.random.default_rng(1)
    d = 4
    arrays = BlockParams.init(rng, d).arrays()
    for k in ("w1", "b1", "w2", "b2"):
        arrays[k] = np.zeros_like(arrays[k])
    for k in ("ln1_g", "ln2_g", "ln1_b", "ln2_b"):
        arrays[k] = rng.normal(size=d)
    block = BlockParams.from_arrays(arrays, 2)
    f = rng.normal(size=d)
    x = f + sinusoidal_positions(1, d)[0]
    att = block.wo @ (block.wv @ x)  # one key: softmax weight 1
    y1 = ln(x + att, block.ln1_g, block.ln1_b)
    want = ln(y1, block.ln2_g, block.ln2_b)
    got = encode_sequence(f[None], block, np.zeros(d)).vector
    assert np.allclose(got, want, atol=1e-12)


def test_truncation_to_last_50():
    rng = np.random.default_rng(2)
    block = BlockParams.init(rng, 8)
    seq = rng.normal(size=(60, 8))
    base = encode_sequence(seq, block, np.zeros(8)).vector
    seq2 = seq.copy()
    seq2[4] += 10.0
    assert np.array_equal(encode_sequence(seq2, block, np.zeros(8)).vector, base)
    seq3 = seq.copy()
    seq3[-1] += 1.0
    assert not np.array_equal(encode_sequence(seq3, block, np.zeros(8)).vector, base)


def test_order_sensitive_with_encoder_and_invariant_without():
    rng = np.random.default_rng(3)
    block = BlockParams.init(rng, 8)
    seq = rng.normal(size=(5, 8))
    swapped = seq[[1, 0, 2, 3, 4]]
    assert not np.array_equal(encode_sequence(seq, block, np.zeros(8)).vector,
                              encode_sequence(swapped, block, np.zeros(8)).vector)
    plain = encode_sequence(seq, None, np.zeros(8)).vector
    # exact mean, order-free
    assert np.allclose(plain, seq.mean(axis=0), atol=1e-15)
    for _ in range(20):
        perm = rng.permutation(5)
        assert np.allclose(encode_sequence(seq[perm], None, np.zeros(8)).vector, plain, rtol=0, atol=1e-15)


def test_attention_trace_rows_sum_to_one():
    rng = np.random.default_rng(4)
    block = BlockParams.init(rng, 8)
    out = encode_sequence(rng.normal(size=(7, 8)), block, np.zeros(8), trace=True)
    assert out.attention_trace.shape == (2, 7, 7)
    assert np.allclose(out.attention_trace.sum(axis=-1), 1.0, atol=1e-12)


def test_batch_padding_matches_single():
    rng = np.random.default_rng(5)
    block = BlockParams.init(rng, 8)
    h0 = rng.normal(size=8)
    seqs = [rng.normal(size=(n, 8)) for n in (3, 1, 0, 5)]
    L = 5
    F = np.zeros((4, L, 8))
    mask = np.zeros((4, L), dtype=bool)
    for i, s in enumerate(seqs):
        F[i, :len(s)] = s[::-1]  # recency slots
        mask[i, :len(s)] = True
        F[i, len(s):] = rng.normal(size=(L - len(s), 8))  # padding garbage
    h, _ = encode_batch(F, mask, block, h0)
    for i, s in enumerate(seqs):
        assert np.allclose(h[i], encode_sequence(s, block, h0).vector, atol=1e-13)


def test_pooling_switch_last():
    rng = np.random.default_rng(6)
    block = BlockParams.init(rng, 8)
    seq = rng.normal(size=(4, 8))
    mean = encode_sequence(seq, block, np.zeros(8), pooling="mean").vector
    last = encode_sequence(seq, block, np.zeros(8), pooling="last").vector
    assert not np.allclose(mean, last)
    with pytest.raises(ValueError):
        encode_sequence(seq, block, np.zeros(8), pooling="cls")


def test_user_representation_examples():
    d = 3
    h = np.array([0.5, 0.0, 2.0])
    s = np.array([1.0, -1.0, 3.0])
    zero = InterestFusionParams(np.zeros((d, 2 * d)), np.zeros(d), np.zeros(d), ())
    assert np.array_equal(user_representation(h, s, zero), np.zeros(d))
    sel = InterestFusionParams(np.hstack([np.eye(d), np.zeros((d, d))]), np.zeros(d), np.zeros(d), ())
    assert np.array_equal(user_representation(h, s, sel), h)


def test_user_representation_hand_value_d2():
    W = np.array([[1.0, -2.0, 0.5, 0.0], [0.0, 1.0, -1.0, 2.0]])
    p = InterestFusionParams(W, np.array([0.1, -0.2]), np.zeros(2), ())
    h, s = np.array([1.0, 2.0]), np.array([3.0, -1.0])
    # row 0: 1 - 4 + 1.5 + 0 + 0.1 = -1.4 -> 0 ; row 1: 0 + 2 - 3 - 2 - 0.2 = -3.2 -> 0
    assert user_representation(h, s, p).tolist() == [0.0, 0.0]
    s = np.array([3.0, 4.0])
    # row 1: 2 - 3 + 8 - 0.2 = 6.8
    assert user_representation(h, s, p) == pytest.approx([0.0, 6.8], abs=1e-14)


def test_user_representation_nonnegative_order_and_shape():
    rng = np.random.default_rng(7)
    p = interest_params(rng)
    for _ in range(200):
        h, s = rng.normal(size=4), rng.normal(size=4)
        z = user_representation(h, s, p)
        assert np.all(z >= 0)
    h, s = rng.normal(size=4), rng.normal(size=4)
    assert not np.array_equal(user_representation(h, s, p), user_representation(s, h, p))
    with pytest.raises(DimensionError):
        user_representation(np.ones(3), np.ones(4), p)


def test_params_shape_contract():
    with pytest.raises(DimensionError):
        InterestFusionParams(np.zeros((3, 5)), np.zeros(3), np.zeros(3), ())
