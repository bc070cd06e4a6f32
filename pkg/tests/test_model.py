import math

import numpy as np
import pytest

from conftest import flat_vocab, query_of, random_ie_case
from spanlink.errors import (
    CheckpointMismatch,
    DimensionMismatch,
    OddHeadDim,
    ShapeMismatch,
)
from spanlink.model import (
    EncoderConfig,
    accumulate,
    apply_rope,
    backward,
    circle_loss,
    circle_loss_grad,
    encode,
    init_encoder,
    init_head,
    load_checkpoint,
    rope_tables,
    save_checkpoint,
    score,
)
from spanlink.query import PrefixGroup, build_target


def _setup(rng, d=16, layers=1, heads=2, d_head=8, dtype="float64"):
    vocab = flat_vocab()
    cfg = EncoderConfig(vocab_size=len(vocab), d=d, layers=layers,
                        heads=heads, max_positions=128, dtype=dtype)
    enc = init_encoder(cfg, rng)
    head = init_head(d, d_head, rng, dtype=dtype)
    return vocab, enc, head


def _rand_query(rng, vocab):
    text, groups, gold = random_ie_case(rng)
    return query_of(vocab, text, groups), gold


# ----------------------------------------------------------------- encoder

def test_encode_is_deterministic():
    rng = np.random.default_rng(0)
    vocab, enc, _ = _setup(rng)
    q, _ = _rand_query(rng, vocab)
    h1 = encode(enc, q)
    h2 = encode(enc, q)
    assert np.array_equal(h1, h2)
    assert h1.shape == (len(q), enc.config.d)
    assert np.isfinite(h1).all()


def test_zero_layers_is_embedding_sum():
    rng = np.random.default_rng(1)
    vocab = flat_vocab()
    cfg = EncoderConfig(vocab_size=len(vocab), d=8, layers=0, heads=1,
                        max_positions=128, final_norm=False, dtype="float64")
    enc = init_encoder(cfg, rng)
    q, _ = _rand_query(rng, vocab)
    h = encode(enc, q)
    want = (enc.params["tok_emb"][q.token_ids]
            + enc.params["pos_emb"][q.position_ids]
            + enc.params["type_emb"][q.token_type_ids])
    assert np.array_equal(h, want)


def test_encode_validates_dimensions():
    rng = np.random.default_rng(2)
    vocab, enc, _ = _setup(rng)
    q, _ = _rand_query(rng, vocab)
    small = EncoderConfig(vocab_size=3, d=16, layers=1, heads=2,
                          max_positions=128, dtype="float64")
    with pytest.raises(DimensionMismatch):
        encode(init_encoder(small, rng), q)
    tiny_pos = EncoderConfig(vocab_size=len(vocab), d=16, layers=1, heads=2,
                             max_positions=4, dtype="float64")
    with pytest.raises(DimensionMismatch):
        encode(init_encoder(tiny_pos, rng), q)


def test_isolation_blocks_cross_group_influence():
    # perturbing a type token of group 2 must not change hidden states at
    # group 1 positions (text positions may move; text attends everything)
    rng = np.random.default_rng(3)
    vocab, enc, _ = _setup(rng, dtype="float32")
    from spanlink.data import PathElement
    text = "ant bee cat dog"
    prefix = (PathElement("alpha", 0, 3, "ant"),)
    groups = [PrefixGroup((), ("alpha", "beta")),
              PrefixGroup(prefix, ("gamma",))]
    q = query_of(vocab, text, groups, max_prompt_len=32, max_len=64)
    h_before = encode(enc, q)
    marker = [m for m in q.type_markers if m.group == 1][0]
    q2_ids = q.token_ids.copy()
    q2_ids[marker.pos + 1] = vocab.id("delta")
    import dataclasses
    q2 = dataclasses.replace(q, token_ids=q2_ids)
    h_after = encode(enc, q2)
    g0 = np.where(q.group_of == 0)[0]
    assert np.array_equal(h_before[g0], h_after[g0])
    # [CLS] and text rows attend everything, so they are allowed to change
    from spanlink.query import K_TEXT
    text_rows = np.where(q.kinds == K_TEXT)[0]
    assert not np.array_equal(h_before[text_rows], h_after[text_rows])


# -------------------------------------------------------------------- rope

def test_rope_zero_offset_is_plain_dot():
    rng = np.random.default_rng(4)
    q = rng.standard_normal((5, 8))
    k = rng.standard_normal((5, 8))
    pos = np.full(5, 17.0)
    cos, sin = rope_tables(pos, 8)
    z = apply_rope(q, cos, sin) @ apply_rope(k, cos, sin).T
    assert np.allclose(z, q @ k.T, atol=1e-9)


def test_rope_shift_invariance():
    rng = np.random.default_rng(5)
    q = rng.standard_normal((6, 8))
    k = rng.standard_normal((6, 8))
    pos = np.array([0.0, 3, 7, 11, 20, 200])
    for c in (1.0, -4.0, 1000.0):
        cos0, sin0 = rope_tables(pos, 8)
        cos1, sin1 = rope_tables(pos + c, 8)
        z0 = apply_rope(q, cos0, sin0) @ apply_rope(k, cos0, sin0).T
        z1 = apply_rope(q, cos1, sin1) @ apply_rope(k, cos1, sin1).T
        assert np.abs(z0 - z1).max() <= 1e-9 * max(1.0, np.abs(z0).max())


def test_rope_quarter_turn_matches_rotation_matrix():
    # d'=2: rotating the pair (q, k) to relative angle pi/2 must reproduce
    # q^T R(pi/2) k computed with an explicit 2x2 rotation matrix
    q = np.array([[1.0, 0.0]])
    k = np.array([[0.0, 1.0]])
    delta = math.pi / 2  # theta_0 = 1, so position difference = angle
    cos_q, sin_q = rope_tables([0.0], 2)
    cos_k, sin_k = rope_tables([delta], 2)
    z = (apply_rope(q, cos_q, sin_q) @ apply_rope(k, cos_k, sin_k).T).item()
    rot = np.array([[math.cos(delta), -math.sin(delta)],
                    [math.sin(delta), math.cos(delta)]])
    want = (q @ rot @ k.T).item()
    assert abs(z - want) <= 1e-12
    assert abs(z - (-1.0)) <= 1e-12


def test_rope_odd_dimension_rejected():
    with pytest.raises(OddHeadDim):
        rope_tables([0.0], 7)
    rng = np.random.default_rng(0)
    with pytest.raises(OddHeadDim):
        init_head(8, 7, rng)


# ------------------------------------------------------------------- score

def test_score_masks_are_neg_inf():
    rng = np.random.default_rng(6)
    vocab, enc, head = _setup(rng)
    q, _ = _rand_query(rng, vocab)
    z = score(head, encode(enc, q), q)
    assert np.isneginf(z[~q.scoring_mask]).all()
    assert np.isfinite(z[q.scoring_mask]).all()


def test_score_shape_mismatch():
    rng = np.random.default_rng(7)
    vocab, enc, head = _setup(rng)
    q, _ = _rand_query(rng, vocab)
    with pytest.raises(ShapeMismatch):
        score(head, np.zeros((3, head.d_in)), q)


def test_score_position_shift_leaves_valid_cells():
    # shifting every position id by a constant must not change the matrix
    rng = np.random.default_rng(8)
    vocab, enc, head = _setup(rng)
    q, _ = _rand_query(rng, vocab)
    h = encode(enc, q)
    z0 = score(head, h, q)
    import dataclasses
    q2 = dataclasses.replace(q, position_ids=q.position_ids + 50)
    z1 = score(head, h, q2)
    m = q.scoring_mask
    assert np.abs(z0[m] - z1[m]).max() <= 1e-9 * max(1.0, np.abs(z0[m]).max())


# ------------------------------------------------------------- circle loss

def test_circle_loss_closed_form_two_cells():
    z = np.zeros((2, 2))
    target = np.array([[1, 0], [0, 0]], dtype=np.uint8)
    valid = np.array([[True, True], [False, False]])
    assert abs(circle_loss(z, target, valid) - 2 * math.log(2)) <= 1e-12


def test_circle_loss_saturated_is_tiny():
    z = np.full((3, 3), -1000.0)
    target = np.zeros((3, 3), dtype=np.uint8)
    valid = np.ones((3, 3), dtype=bool)
    assert 0.0 <= circle_loss(z, target, valid) <= 1e-12


def test_circle_loss_empty_valid_is_zero():
    z = np.zeros((2, 2))
    target = np.zeros((2, 2), dtype=np.uint8)
    valid = np.zeros((2, 2), dtype=bool)
    assert circle_loss(z, target, valid) == 0.0


def test_circle_loss_matches_naive_formula():
    rng = np.random.default_rng(9)
    for _ in range(50):
        z = rng.standard_normal((4, 4)) * 3
        target = (rng.random((4, 4)) < 0.3).astype(np.uint8)
        valid = rng.random((4, 4)) < 0.7
        neg = z[valid & (target == 0)]
        pos = z[valid & (target == 1)]
        want = math.log1p(np.exp(neg).sum()) + math.log1p(np.exp(-pos).sum())
        assert abs(circle_loss(z, target, valid) - want) <= 1e-9


def test_circle_loss_monotone_in_cells():
    rng = np.random.default_rng(10)
    z = rng.standard_normal((4, 4))
    target = np.zeros((4, 4), dtype=np.uint8)
    target[0, 1] = 1
    valid = np.ones((4, 4), dtype=bool)
    base = circle_loss(z, target, valid)
    up_pos = z.copy()
    up_pos[0, 1] += 1.0
    assert circle_loss(up_pos, target, valid) <= base
    up_neg = z.copy()
    up_neg[2, 3] += 1.0
    assert circle_loss(up_neg, target, valid) >= base


def test_circle_loss_grad_matches_fd():
    rng = np.random.default_rng(11)
    z = rng.standard_normal((5, 5))
    target = (rng.random((5, 5)) < 0.3).astype(np.uint8)
    valid = rng.random((5, 5)) < 0.8
    loss, dz = circle_loss_grad(z, target, valid)
    assert abs(loss - circle_loss(z, target, valid)) <= 1e-12
    eps = 1e-6
    for i in range(5):
        for j in range(5):
            zp = z.copy(); zp[i, j] += eps
            zm = z.copy(); zm[i, j] -= eps
            fd = (circle_loss(zp, target, valid)
                  - circle_loss(zm, target, valid)) / (2 * eps)
            assert abs(fd - dz[i, j]) <= 1e-6
    assert (dz[~valid] == 0).all()


def test_circle_loss_grad_saturated_is_tiny():
    z = np.where(np.eye(4, dtype=bool), 1000.0, -1000.0)
    target = np.eye(4, dtype=np.uint8)
    valid = np.ones((4, 4), dtype=bool)
    _, dz = circle_loss_grad(z, target, valid)
    assert np.abs(dz).max() <= 1e-8


def test_circle_loss_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        circle_loss(np.zeros((2, 2)), np.zeros((3, 3), dtype=np.uint8),
                    np.ones((2, 2), dtype=bool))


# ---------------------------------------------------------------- backward

def test_backward_gradient_accumulation_is_linear():
    rng = np.random.default_rng(12)
    vocab, enc, head = _setup(rng, d=8, d_head=8)
    q, gold = _rand_query(rng, vocab)
    target = build_target(q, gold)
    loss1, ge1, gh1 = backward(enc, head, q, target)
    total_e, total_h = {}, {}
    accumulate(total_e, ge1)
    accumulate(total_e, ge1)
    accumulate(total_h, gh1)
    accumulate(total_h, gh1)
    for k, v in total_e.items():
        assert np.allclose(v, 2 * ge1[k])
    for k, v in total_h.items():
        assert np.allclose(v, 2 * gh1[k])


# -------------------------------------------------------------- checkpoint

def test_checkpoint_round_trip_bitwise(tmp_path):
    rng = np.random.default_rng(13)
    vocab, enc, head = _setup(rng, dtype="float32")
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, enc, head)
    enc2, head2 = load_checkpoint(path)
    assert enc2.config == enc.config
    assert head2.d_head == head.d_head
    for k in enc.params:
        assert np.array_equal(enc.params[k], enc2.params[k]), k
    for k in head.params:
        assert np.array_equal(head.params[k], head2.params[k]), k


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(path)


def test_checkpoint_rejects_truncation(tmp_path):
    rng = np.random.default_rng(14)
    vocab, enc, head = _setup(rng, dtype="float32")
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, enc, head)
    blob = path.read_bytes()
    path.write_bytes(blob[:len(blob) - 7])
    with pytest.raises(CheckpointMismatch):
        load_checkpoint(path)
