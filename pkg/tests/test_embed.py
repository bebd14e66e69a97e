import numpy as np
import pytest

from visguess.embed import (AttentionTrace, EncoderParams, encode_history,
                            encode_image, encode_images, pretrain,
                            ranking_loss, recall_at_k)
from visguess.worldgen import WorldConfig, generate_worlds

from oracles import finite_diff_grads, max_rel_error


def tiny_encoder():
    """k = d = a = 2 with fixed, human-checkable weights."""
    enc = EncoderParams(k=2)
    enc.pset["att.W_h"] = np.eye(2)
    enc.pset["att.W_c"] = np.eye(2)
    enc.pset["att.w_a"] = np.ones(2)
    enc.pset["text.W0"] = np.array([[1.0, 0, 1, 0], [0, 1, 0, 1]])
    enc.pset["text.b0"] = np.zeros(2)
    enc.pset["text.W1"] = np.eye(2)
    enc.pset["text.b1"] = np.zeros(2)
    enc.pset["img.W0"] = np.eye(2)
    enc.pset["img.b0"] = np.zeros(2)
    enc.pset["img.W1"] = np.eye(2)
    enc.pset["img.b1"] = np.zeros(2)
    return enc


def test_identical_history_items_split_attention():
    enc = EncoderParams(k=4, seed=3)
    h = np.array([0.5, -0.1, 0.2, 0.8])
    cap = np.array([1.0, 0, 0, 0])
    _, trace = encode_history(cap, [h, h], enc)
    assert np.allclose(trace.alpha, [0.5, 0.5], atol=1e-12)
    assert np.allclose(trace.attended, h, atol=1e-12)


def test_single_item_attention_is_one():
    enc = EncoderParams(k=3, seed=4)
    _, trace = encode_history(np.array([1.0, 0, 0]),
                              [np.array([0.0, 1, 0])], enc)
    assert np.allclose(trace.alpha, [1.0])


def test_hand_computed_attention_golden():
    # z_j = w_a . tanh(W_h h_j + W_c c); all weights identity-like.
    enc = tiny_encoder()
    cap = np.array([0.5, 0.0])
    h1, h2 = np.array([1.0, 0.0]), np.array([0.0, 1.0])
    T, trace = encode_history(cap, [h1, h2], enc)

    z1 = np.tanh(1.5)                      # sum(tanh([1.5, 0]))
    z2 = np.tanh(0.5) + np.tanh(1.0)       # sum(tanh([0.5, 1.0]))
    e = np.exp([z1, z2] - max(z1, z2))
    alpha = e / e.sum()
    attended = alpha[0] * h1 + alpha[1] * h2
    pre = np.tanh(np.array([attended[0] + 0.5, attended[1] + 0.0]))
    expected_T = pre / np.linalg.norm(pre)

    assert np.allclose(trace.z, [z1, z2], atol=1e-12)
    assert np.allclose(trace.alpha, alpha, atol=1e-12)
    assert np.allclose(trace.attended, attended, atol=1e-12)
    assert np.allclose(T, expected_T, atol=1e-12)


def test_empty_history_uses_caption_only():
    enc = tiny_encoder()
    cap = np.array([0.5, 0.25])
    T, trace = encode_history(cap, [], enc)
    assert trace.alpha.size == 0
    pre = np.tanh(cap)  # attended part is zero
    assert np.allclose(T, pre / np.linalg.norm(pre), atol=1e-12)


def test_attention_permutation_equivariance():
    enc = EncoderParams(k=6, seed=9)
    rng = np.random.default_rng(2)
    cap = rng.standard_normal(6)
    hist = [rng.standard_normal(6) for _ in range(5)]
    T, trace = encode_history(cap, hist, enc)
    perm = [3, 0, 4, 1, 2]
    T2, trace2 = encode_history(cap, [hist[i] for i in perm], enc)
    assert np.allclose(trace2.alpha, trace.alpha[perm], atol=1e-12)
    assert np.allclose(T, T2, atol=1e-12)


def test_encode_image_unit_norm_and_determinism():
    enc = EncoderParams(k=8, seed=1)
    rng = np.random.default_rng(3)
    for _ in range(10):
        v = rng.standard_normal(8)
        out = encode_image(v, enc)
        assert abs(np.linalg.norm(out) - 1.0) < 1e-12
        assert np.array_equal(out, encode_image(v, enc))


def test_encode_image_golden():
    enc = tiny_encoder()
    v = np.array([2.0, -1.0])
    pre = np.tanh(v)
    assert np.allclose(encode_image(v, enc),
                       pre / np.linalg.norm(pre), atol=1e-12)


def test_encode_images_matches_single():
    enc = EncoderParams(k=5, seed=6)
    imgs = np.random.default_rng(4).standard_normal((7, 5))
    batch = encode_images(imgs, enc)
    for i in range(7):
        assert np.allclose(batch[i], encode_image(imgs[i], enc),
                           atol=1e-12)


def _unit_with_cos(c):
    """2-d unit vector with cosine c against [1, 0]."""
    return np.array([c, np.sqrt(1 - c * c)])


def test_ranking_loss_hand_values():
    t = np.array([1.0, 0.0])
    # satisfied margin: cos_pos = 1, cos_neg = -1
    assert ranking_loss(t, t, np.array([[-1.0, 0.0]]), 0.2) == 0.0
    # degenerate tie: every hinge term equals the margin
    assert abs(ranking_loss(t, t, np.stack([t, t]), 0.2) - 0.2) < 1e-12
    # cos_pos 0.5, cos_negs {0.4, 0.6}, margin 0.2 -> mean(0.1, 0.3)
    loss = ranking_loss(t, _unit_with_cos(0.5),
                        np.stack([_unit_with_cos(0.4),
                                  _unit_with_cos(0.6)]), 0.2)
    assert abs(loss - 0.2) < 1e-12


def test_ranking_loss_nonnegative_property():
    rng = np.random.default_rng(5)
    for _ in range(50):
        loss = ranking_loss(rng.standard_normal(4), rng.standard_normal(4),
                            rng.standard_normal((3, 4)), 0.2)
        assert loss >= 0.0


def test_ranking_loss_requires_negatives():
    with pytest.raises(ValueError):
        ranking_loss(np.ones(3), np.ones(3), np.empty((0, 3)))


def test_pretrain_lr_zero_is_identity():
    cfg = WorldConfig(embed_dim=8, pool_size=2, seed=21)
    worlds = generate_worlds(cfg, 3)
    enc = EncoderParams(k=8, seed=0)
    before = {n: enc.pset[n].copy() for n in enc.pset.names()}
    curve = pretrain(worlds, enc, epochs=3, lr=0.0, seed=0)
    for n, v in before.items():
        assert np.array_equal(enc.pset[n], v)
    assert np.allclose(curve, curve[0], atol=1e-12)


def test_pretrain_gradient_matches_finite_differences():
    from visguess.embed import _example_loss_tape
    from visguess.numcore import Tape
    cfg = WorldConfig(embed_dim=4, n_images=3, pool_size=2, seed=8)
    world = generate_worlds(cfg, 1)[0]
    enc = EncoderParams(k=4, seed=5)

    tape = Tape()
    loss = _example_loss_tape(tape, enc, world, t=2, margin=0.2)
    analytic = tape.backward(loss)

    def loss_fn():
        from visguess.embed import encode_history as eh
        t_vec, _ = eh(world.caption, world.a_vecs[:2], enc)
        negs = [i for i in range(3) if i != world.target_idx]
        return ranking_loss(t_vec, encode_image(world.target, enc),
                            encode_images(world.images[negs], enc), 0.2)

    numeric = finite_diff_grads(loss_fn, enc.pset)
    assert max_rel_error(analytic, numeric) < 1e-4


def test_recall_at_k_trivial_cases():
    cfg = WorldConfig(embed_dim=8, pool_size=2, n_images=5, seed=30)
    worlds = generate_worlds(cfg, 40)
    enc = EncoderParams(k=8, seed=11)
    assert recall_at_k(worlds, enc, k=5) == 1.0
    r1 = recall_at_k(worlds, enc, k=1)
    assert 0.0 <= r1 <= 0.6  # untrained: near chance (1/5)
    with pytest.raises(ValueError):
        recall_at_k(worlds, enc, k=0)
