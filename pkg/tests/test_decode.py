import numpy as np
import pytest
from scipy.special import expit, logit

from conftest import flat_vocab, query_of, random_ie_case
from spanlink.decoding import (
    ClsDecision,
    cls_products,
    decode_cls_multi,
    decode_cls_single,
    decode_ie,
    load_grids,
    oracle_decode,
    save_grids,
    threshold,
)
from spanlink.errors import BadGridFile, NoCandidates
from spanlink.query import PrefixGroup
from spanlink.schema import LevelMode


def _rand_scores(rng, query, hit_rate=0.35):
    z = np.where(query.scoring_mask,
                 rng.standard_normal(query.scoring_mask.shape), -np.inf)
    # bias some cells positive so decodes are non-trivial
    z[query.scoring_mask] += (rng.random(int(query.scoring_mask.sum()))
                              < hit_rate) * 2.0
    return z


def _cls_query(vocab, labels=("alpha", "beta", "gamma"),
               mode=LevelMode.CLASSIFY_SINGLE):
    return query_of(vocab, "ant bee", [PrefixGroup((), tuple(labels))],
                    mode=mode)


# --------------------------------------------------------------- threshold

def test_threshold_boundary_and_masking():
    z = np.array([[-1.0, 0.0], [2.0, -np.inf]])
    valid = np.array([[True, True], [True, True]])
    assert threshold(z, 0.0, valid).tolist() == [[0, 1], [1, 0]]
    valid2 = np.array([[True, False], [False, True]])
    assert threshold(z, 0.0, valid2).tolist() == [[0, 0], [0, 0]]
    assert threshold(z, np.inf, valid).sum() == 0


# ----------------------------------------------------------------- linking

def test_decode_matches_oracle_randomized():
    rng = np.random.default_rng(21)
    vocab = flat_vocab()
    for _ in range(60):
        text, groups, _ = random_ie_case(rng)
        q = query_of(vocab, text, groups)
        z = _rand_scores(rng, q)
        delta = float(rng.choice([-1.0, 0.0, 1.0]))
        assert decode_ie(z, q, delta) == oracle_decode(z, q, delta)


def test_decode_requires_all_three_links():
    vocab = flat_vocab()
    q = query_of(vocab, "ant bee", [PrefixGroup((), ("alpha",))])
    m = q.type_markers[0].pos
    t = q.text_start
    z = np.full((len(q), len(q)), -np.inf)
    z[q.scoring_mask] = -5.0
    z[t, t + 1] = 5.0           # head-tail alone: not enough
    assert decode_ie(z, q, 0.0) == []
    z[t, m] = 5.0               # + head-type: still not enough
    assert decode_ie(z, q, 0.0) == []
    z[m, t + 1] = 5.0           # + type-tail: now a span
    spans = decode_ie(z, q, 0.0)
    assert len(spans) == 1
    s = spans[0]
    assert (s.label, s.surface, s.start, s.end) == ("alpha", "ant bee", 0, 7)


def test_decode_monotone_in_delta():
    rng = np.random.default_rng(22)
    vocab = flat_vocab()
    for _ in range(20):
        text, groups, _ = random_ie_case(rng)
        q = query_of(vocab, text, groups)
        z = _rand_scores(rng, q)
        lo = {(s.group, s.label, s.i, s.j) for s in decode_ie(z, q, -0.5)}
        hi = {(s.group, s.label, s.i, s.j) for s in decode_ie(z, q, 0.5)}
        assert hi <= lo


def test_decoded_spans_stay_inside_text():
    rng = np.random.default_rng(23)
    vocab = flat_vocab()
    for _ in range(20):
        text, groups, _ = random_ie_case(rng)
        q = query_of(vocab, text, groups)
        z = _rand_scores(rng, q, hit_rate=0.9)
        for s in decode_ie(z, q, 0.0):
            assert q.text_start <= s.i <= s.j < q.text_start + q.text_len
            assert text[s.start:s.end] == s.surface


def test_decode_ie_on_cls_query_finds_nothing():
    vocab = flat_vocab()
    q = _cls_query(vocab)
    z = np.full((len(q), len(q)), 10.0)
    # scoring mask only contains ([CLST], [T]) cells; no text pairs exist
    assert decode_ie(np.where(q.scoring_mask, z, -np.inf), q, 0.0) == []


# ---------------------------------------------------------- classification

def test_cls_single_prefers_larger_product():
    vocab = flat_vocab()
    q = _cls_query(vocab)
    j = q.clst_pos
    z = np.full((len(q), len(q)), -np.inf)
    a, b, c = (q.marker_at(0, lab).pos for lab in ("alpha", "beta", "gamma"))
    z[j, a], z[a, j] = logit(0.9), logit(0.8)    # product 0.72
    z[j, b], z[b, j] = logit(0.95), logit(0.6)   # product 0.57
    z[j, c], z[c, j] = logit(0.5), logit(0.5)    # product 0.25
    out = decode_cls_single(z, q)
    assert out == (ClsDecision(group=0, labels=("alpha",)),)
    prods = {lab: p for _, lab, p in cls_products(z, q)}
    assert abs(prods["alpha"] - 0.72) < 1e-9
    assert abs(prods["beta"] - 0.57) < 1e-9


def test_cls_single_single_candidate_wins_regardless():
    vocab = flat_vocab()
    q = _cls_query(vocab, labels=("alpha",))
    z = np.full((len(q), len(q)), -50.0)
    out = decode_cls_single(z, q)
    assert out[0].labels == ("alpha",)


def test_cls_single_tie_breaks_to_lowest_index():
    vocab = flat_vocab()
    q = _cls_query(vocab, labels=("beta", "alpha"))
    z = np.zeros((len(q), len(q)))
    out = decode_cls_single(z, q)
    # all products equal -> first candidate in query order wins
    assert out[0].labels == ("beta",)


def test_cls_single_rejects_extract_query():
    vocab = flat_vocab()
    q = query_of(vocab, "ant", [PrefixGroup((), ("alpha",))])
    with pytest.raises(NoCandidates):
        decode_cls_single(np.zeros((len(q), len(q))), q)
    with pytest.raises(NoCandidates):
        cls_products(np.zeros((len(q), len(q))), q)


def test_cls_single_shift_invariance_with_margin():
    # adding a constant to every score preserves the argmax as long as the
    # runner-up is not within the sensitivity band of the shift
    rng = np.random.default_rng(24)
    vocab = flat_vocab()
    q = _cls_query(vocab, labels=("alpha", "beta", "gamma", "delta"))
    for _ in range(200):
        z = np.where(q.scoring_mask, rng.standard_normal((len(q), len(q))) * 2,
                     -np.inf)
        prods = sorted(p for _, _, p in cls_products(z, q))
        gap = prods[-1] - prods[-2]
        c = float(rng.uniform(-1, 1))
        # |d sigmoid| <= 1/4 per direction; a crude product bound is |c|/2
        if abs(c) >= gap:
            continue
        base = decode_cls_single(z, q)
        shifted = decode_cls_single(np.where(q.scoring_mask, z + c, -np.inf), q)
        if gap > 2 * abs(c):
            assert base == shifted


def test_cls_multi_strict_threshold():
    vocab = flat_vocab()
    q = _cls_query(vocab, labels=("alpha", "beta"),
                   mode=LevelMode.CLASSIFY_MULTI)
    j = q.clst_pos
    a = q.marker_at(0, "alpha").pos
    b = q.marker_at(0, "beta").pos
    z = np.full((len(q), len(q)), -np.inf)
    z[j, a], z[a, j] = logit(0.95), logit(0.95)
    z[j, b], z[b, j] = logit(0.95), logit(0.85)
    out = decode_cls_multi(z, q, delta=0.9)
    assert out == (ClsDecision(group=0, labels=("alpha",)),)
    # exactly at the threshold is excluded (strict comparison)
    z[j, a], z[a, j] = logit(0.9), logit(0.9)
    assert decode_cls_multi(z, q, delta=0.9)[0].labels == ()


def test_cls_multi_matches_set_builder_oracle():
    rng = np.random.default_rng(25)
    vocab = flat_vocab()
    labels = ("alpha", "beta", "gamma", "delta")
    q = _cls_query(vocab, labels=labels, mode=LevelMode.CLASSIFY_MULTI)
    j = q.clst_pos
    for _ in range(100):
        z = np.where(q.scoring_mask, rng.standard_normal((len(q), len(q))) * 4,
                     -np.inf)
        want = tuple(
            m.label for m in q.type_markers
            if expit(z[j, m.pos]) > 0.9 and expit(z[m.pos, j]) > 0.9
        )
        assert decode_cls_multi(z, q)[0].labels == want


# ------------------------------------------------------------- grid files

def test_grids_round_trip(tmp_path):
    rng = np.random.default_rng(26)
    mats = [rng.standard_normal((3, 5)).astype(np.float32),
            np.full((2, 2), -np.inf, dtype=np.float32),
            rng.standard_normal((7, 7)).astype(np.float32)]
    path = tmp_path / "scores.grid"
    save_grids(path, mats)
    loaded = load_grids(path)
    assert len(loaded) == 3
    for a, b in zip(mats, loaded):
        assert a.shape == b.shape
        assert np.array_equal(a, b)


def test_grids_reject_truncation(tmp_path):
    path = tmp_path / "scores.grid"
    save_grids(path, [np.zeros((4, 4), dtype=np.float32)])
    blob = path.read_bytes()
    path.write_bytes(blob[:-3])
    with pytest.raises(BadGridFile):
        load_grids(path)
    path.write_bytes(blob[:4])
    with pytest.raises(BadGridFile):
        load_grids(path)
