"""Encoder, rotary scoring head, circle loss, and exact gradients.

The encoder is a small pre-norm transformer over word-level tokens: token +
learned absolute position + token-type embeddings, then ``layers`` blocks of
masked multi-head attention and a GELU feed-forward, each behind a residual.
Attention strictly honors the query's isolation mask (disallowed logits are
set to -inf before softmax).  Rotary embedding appears only in the scoring
head, where it turns a plain bilinear form into a relative-position-aware
one: with ``q_j = W_q h_j + b_q`` and ``k_k = W_k h_k + b_k``,

    Z[j, k] = rope(q_j, P_j) . rope(k_k, P_k) = q_j^T R(P_k - P_j) k_k

using the standard angle table ``theta_t = 10000^(-2t/d')`` over an even head
dimension d'.  Cells outside the scoring mask are forced to -inf rather than
zero so that the decoding threshold (0 for extraction) can never confuse
"masked" with "score exactly at the boundary".

Everything is plain numpy with hand-written reverse-mode backprop; training
runs in float32 and gradient checking switches the whole stack to float64 via
``EncoderConfig.dtype``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import (
    CheckpointMismatch,
    DimensionMismatch,
    OddHeadDim,
    ShapeMismatch,
)
from .query import Query

ROPE_BASE = 10000.0
LN_EPS = 1e-5
_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

_CHECKPOINT_MAGIC = b"SPLKCKPT"


@dataclass
class EncoderConfig:
    vocab_size: int
    d: int
    layers: int
    heads: int
    max_positions: int
    ffn_mult: int = 4
    final_norm: bool = True
    dtype: str = "float32"

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def validate(self) -> None:
        if self.d % self.heads != 0:
            raise DimensionMismatch(f"d={self.d} not divisible by heads={self.heads}")
        if min(self.vocab_size, self.d, self.heads, self.max_positions) < 1:
            raise DimensionMismatch("encoder dimensions must be positive")
        if self.layers < 0:
            raise DimensionMismatch("layers must be >= 0")


@dataclass
class EncoderParams:
    config: EncoderConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class ScoringHead:
    d_in: int
    d_head: int
    params: dict[str, np.ndarray] = field(default_factory=dict)


def init_encoder(config: EncoderConfig, rng: np.random.Generator) -> EncoderParams:
    config.validate()
    dt = config.np_dtype
    d, m = config.d, config.ffn_mult * config.d

    def w(*shape):
        return rng.normal(0.0, 0.02, size=shape).astype(dt)

    p: dict[str, np.ndarray] = {
        "tok_emb": w(config.vocab_size, d),
        "pos_emb": w(config.max_positions, d),
        "type_emb": w(4, d),
    }
    for i in range(config.layers):
        p[f"l{i}.ln1.g"] = np.ones(d, dtype=dt)
        p[f"l{i}.ln1.b"] = np.zeros(d, dtype=dt)
        for name in ("wq", "wk", "wv", "wo"):
            p[f"l{i}.attn.{name}"] = w(d, d)
            p[f"l{i}.attn.{name.replace('w', 'b')}"] = np.zeros(d, dtype=dt)
        p[f"l{i}.ln2.g"] = np.ones(d, dtype=dt)
        p[f"l{i}.ln2.b"] = np.zeros(d, dtype=dt)
        p[f"l{i}.ffn.w1"] = w(d, m)
        p[f"l{i}.ffn.b1"] = np.zeros(m, dtype=dt)
        p[f"l{i}.ffn.w2"] = w(m, d)
        p[f"l{i}.ffn.b2"] = np.zeros(d, dtype=dt)
    if config.final_norm:
        p["lnf.g"] = np.ones(d, dtype=dt)
        p["lnf.b"] = np.zeros(d, dtype=dt)
    return EncoderParams(config=config, params=p)


def init_head(d_in: int, d_head: int, rng: np.random.Generator,
              dtype: str = "float32") -> ScoringHead:
    if d_head % 2 != 0 or d_head < 2:
        raise OddHeadDim(f"scoring head dimension must be even, got {d_head}")
    dt = np.float64 if dtype == "float64" else np.float32
    return ScoringHead(d_in=d_in, d_head=d_head, params={
        "q.w": rng.normal(0.0, 0.02, size=(d_in, d_head)).astype(dt),
        "q.b": np.zeros(d_head, dtype=dt),
        "k.w": rng.normal(0.0, 0.02, size=(d_in, d_head)).astype(dt),
        "k.b": np.zeros(d_head, dtype=dt),
    })


# ----------------------------------------------------------- primitives ---

def _layernorm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _layernorm_bwd(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def _gelu(x):
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return x * phi, (x, phi)


def _gelu_bwd(dy, cache):
    x, phi = cache
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return dy * (phi + x * pdf)


def _softmax_rows(s):
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis=-1, keepdims=True)


# -------------------------------------------------------------- encoder ---

def _check_query(config: EncoderConfig, query: Query) -> None:
    if query.position_ids is None or query.attention_mask is None:
        raise ShapeMismatch("query has no isolation assigned; run assign_isolation")
    n = len(query)
    if query.attention_mask.shape != (n, n):
        raise ShapeMismatch("attention mask shape does not match query length")
    if query.token_ids.max(initial=0) >= config.vocab_size:
        raise DimensionMismatch("token id exceeds vocab size")
    if query.position_ids.max(initial=0) >= config.max_positions:
        raise DimensionMismatch(
            f"position id {int(query.position_ids.max())} exceeds position "
            f"table of size {config.max_positions}"
        )
    if query.token_type_ids.max(initial=0) >= 4:
        raise DimensionMismatch("token type id exceeds table size 4")


def encode(enc: EncoderParams, query: Query, want_cache: bool = False):
    """Hidden states [n, d] for one query, honoring its isolation mask."""
    cfg = enc.config
    _check_query(cfg, query)
    p = enc.params
    n, d, H = len(query), cfg.d, cfg.heads
    dh = d // H
    scale = 1.0 / np.sqrt(dh)

    x = (p["tok_emb"][query.token_ids]
         + p["pos_emb"][query.position_ids]
         + p["type_emb"][query.token_type_ids])
    mask = query.attention_mask
    neg_inf = np.array(-np.inf, dtype=x.dtype)

    layer_caches = []
    for i in range(cfg.layers):
        a, ln1c = _layernorm(x, p[f"l{i}.ln1.g"], p[f"l{i}.ln1.b"])
        q = a @ p[f"l{i}.attn.wq"] + p[f"l{i}.attn.bq"]
        k = a @ p[f"l{i}.attn.wk"] + p[f"l{i}.attn.bk"]
        v = a @ p[f"l{i}.attn.wv"] + p[f"l{i}.attn.bv"]
        q3 = q.reshape(n, H, dh).transpose(1, 0, 2)
        k3 = k.reshape(n, H, dh).transpose(1, 0, 2)
        v3 = v.reshape(n, H, dh).transpose(1, 0, 2)
        s = np.where(mask, (q3 @ k3.transpose(0, 2, 1)) * scale, neg_inf)
        attn = _softmax_rows(s)
        ctx = (attn @ v3).transpose(1, 0, 2).reshape(n, d)
        o = ctx @ p[f"l{i}.attn.wo"] + p[f"l{i}.attn.bo"]
        x1 = x + o
        b2_, ln2c = _layernorm(x1, p[f"l{i}.ln2.g"], p[f"l{i}.ln2.b"])
        h = b2_ @ p[f"l{i}.ffn.w1"] + p[f"l{i}.ffn.b1"]
        gact, gc = _gelu(h)
        f = gact @ p[f"l{i}.ffn.w2"] + p[f"l{i}.ffn.b2"]
        x2 = x1 + f
        if want_cache:
            layer_caches.append({
                "ln1": ln1c, "a": a, "q3": q3, "k3": k3, "v3": v3,
                "attn": attn, "ctx": ctx, "ln2": ln2c, "b2": b2_,
                "gelu": gc, "gact": gact,
            })
        x = x2

    lnfc = None
    pre_final = x
    if cfg.final_norm:
        x, lnfc = _layernorm(x, p["lnf.g"], p["lnf.b"])

    if want_cache:
        return x, {"layers": layer_caches, "lnf": lnfc, "pre_final": pre_final,
                   "scale": scale}
    return x


def _encode_bwd(enc: EncoderParams, query: Query, cache, d_hidden,
                grads: dict[str, np.ndarray]) -> None:
    cfg = enc.config
    p = enc.params
    n, d, H = len(query), cfg.d, cfg.heads
    dh = d // H

    def acc(name, g):
        if name in grads:
            grads[name] += g
        else:
            grads[name] = g

    dx = d_hidden
    if cfg.final_norm:
        dx, dg, db = _layernorm_bwd(dx, cache["lnf"])
        acc("lnf.g", dg)
        acc("lnf.b", db)

    for i in reversed(range(cfg.layers)):
        c = cache["layers"][i]
        # FFN block: x2 = x1 + gelu(ln2(x1) @ w1 + b1) @ w2 + b2
        d_f = dx
        acc(f"l{i}.ffn.w2", c["gact"].T @ d_f)
        acc(f"l{i}.ffn.b2", d_f.sum(axis=0))
        d_gact = d_f @ p[f"l{i}.ffn.w2"].T
        d_h = _gelu_bwd(d_gact, c["gelu"])
        acc(f"l{i}.ffn.w1", c["b2"].T @ d_h)
        acc(f"l{i}.ffn.b1", d_h.sum(axis=0))
        d_b2 = d_h @ p[f"l{i}.ffn.w1"].T
        d_x1, dg, db = _layernorm_bwd(d_b2, c["ln2"])
        acc(f"l{i}.ln2.g", dg)
        acc(f"l{i}.ln2.b", db)
        d_x1 = d_x1 + dx  # residual

        # Attention block: x1 = x + (attn @ v) @ wo + bo
        d_o = d_x1
        acc(f"l{i}.attn.wo", c["ctx"].T @ d_o)
        acc(f"l{i}.attn.bo", d_o.sum(axis=0))
        d_ctx = (d_o @ p[f"l{i}.attn.wo"].T).reshape(n, H, dh).transpose(1, 0, 2)
        d_attn = d_ctx @ c["v3"].transpose(0, 2, 1)
        d_v3 = c["attn"].transpose(0, 2, 1) @ d_ctx
        attn = c["attn"]
        d_s = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
        d_s = d_s * cache["scale"]
        d_q3 = d_s @ c["k3"]
        d_k3 = d_s.transpose(0, 2, 1) @ c["q3"]
        d_q = d_q3.transpose(1, 0, 2).reshape(n, d)
        d_k = d_k3.transpose(1, 0, 2).reshape(n, d)
        d_v = d_v3.transpose(1, 0, 2).reshape(n, d)
        a = c["a"]
        acc(f"l{i}.attn.wq", a.T @ d_q)
        acc(f"l{i}.attn.bq", d_q.sum(axis=0))
        acc(f"l{i}.attn.wk", a.T @ d_k)
        acc(f"l{i}.attn.bk", d_k.sum(axis=0))
        acc(f"l{i}.attn.wv", a.T @ d_v)
        acc(f"l{i}.attn.bv", d_v.sum(axis=0))
        d_a = (d_q @ p[f"l{i}.attn.wq"].T
               + d_k @ p[f"l{i}.attn.wk"].T
               + d_v @ p[f"l{i}.attn.wv"].T)
        d_x, dg, db = _layernorm_bwd(d_a, c["ln1"])
        acc(f"l{i}.ln1.g", dg)
        acc(f"l{i}.ln1.b", db)
        dx = d_x1 + d_x

    d_tok = np.zeros_like(p["tok_emb"])
    d_pos = np.zeros_like(p["pos_emb"])
    d_type = np.zeros_like(p["type_emb"])
    np.add.at(d_tok, query.token_ids, dx)
    np.add.at(d_pos, query.position_ids, dx)
    np.add.at(d_type, query.token_type_ids, dx)
    acc("tok_emb", d_tok)
    acc("pos_emb", d_pos)
    acc("type_emb", d_type)


# --------------------------------------------------------- scoring head ---

def rope_tables(positions, d_head: int, dtype=np.float64):
    """Cos/sin tables for rotary embedding at the given (possibly fractional)
    positions: angle[t] = position * 10000^(-2t/d')."""
    if d_head % 2 != 0:
        raise OddHeadDim(f"rotary dimension must be even, got {d_head}")
    half = d_head // 2
    exponent = -2.0 * np.arange(half, dtype=np.float64) / d_head
    theta = np.power(ROPE_BASE, exponent)
    ang = np.asarray(positions, dtype=np.float64)[:, None] * theta[None, :]
    return np.cos(ang).astype(dtype), np.sin(ang).astype(dtype)


def apply_rope(x, cos, sin):
    """Rotate consecutive coordinate pairs of x by the per-position angles."""
    xe, xo = x[:, 0::2], x[:, 1::2]
    out = np.empty_like(x)
    out[:, 0::2] = xe * cos - xo * sin
    out[:, 1::2] = xe * sin + xo * cos
    return out


def _rope_bwd(dy, cos, sin):
    de, do = dy[:, 0::2], dy[:, 1::2]
    dx = np.empty_like(dy)
    dx[:, 0::2] = de * cos + do * sin
    dx[:, 1::2] = -de * sin + do * cos
    return dx


def score(head: ScoringHead, hidden: np.ndarray, query: Query,
          want_cache: bool = False):
    """Token-pair score matrix [n, n]; cells outside the scoring mask are -inf."""
    if query.scoring_mask is None:
        raise ShapeMismatch("query has no scoring mask; run build_scoring_mask")
    if hidden.shape != (len(query), head.d_in):
        raise ShapeMismatch(
            f"hidden shape {hidden.shape} does not match query length "
            f"{len(query)} and head input dim {head.d_in}"
        )
    q = hidden @ head.params["q.w"] + head.params["q.b"]
    k = hidden @ head.params["k.w"] + head.params["k.b"]
    cos, sin = rope_tables(query.position_ids, head.d_head, dtype=hidden.dtype)
    rq = apply_rope(q, cos, sin)
    rk = apply_rope(k, cos, sin)
    raw = rq @ rk.T
    z = np.where(query.scoring_mask, raw, np.array(-np.inf, dtype=raw.dtype))
    if want_cache:
        return z, {"hidden": hidden, "rq": rq, "rk": rk, "cos": cos, "sin": sin}
    return z


def _score_bwd(head: ScoringHead, query: Query, cache, d_z,
               grads: dict[str, np.ndarray]):
    """Backprop through the head given dL/dZ (zero at masked cells).
    Returns dL/dhidden."""
    d_rq = d_z @ cache["rk"]
    d_rk = d_z.T @ cache["rq"]
    d_q = _rope_bwd(d_rq, cache["cos"], cache["sin"])
    d_k = _rope_bwd(d_rk, cache["cos"], cache["sin"])
    hidden = cache["hidden"]

    def acc(name, g):
        if name in grads:
            grads[name] += g
        else:
            grads[name] = g

    acc("q.w", hidden.T @ d_q)
    acc("q.b", d_q.sum(axis=0))
    acc("k.w", hidden.T @ d_k)
    acc("k.b", d_k.sum(axis=0))
    return d_q @ head.params["q.w"].T + d_k @ head.params["k.w"].T


# ------------------------------------------------------------ circle loss ---

def _log1p_sum_exp(v: np.ndarray) -> float:
    """log(1 + sum(exp(v))), stable for large positive and negative values."""
    if v.size == 0:
        return 0.0
    m = max(float(v.max()), 0.0)
    return m + float(np.log(np.exp(-m) + np.exp(v - m).sum()))


def circle_loss(z: np.ndarray, target: np.ndarray, valid: np.ndarray) -> float:
    """Multi-label loss over valid cells: negatives are pushed below zero,
    positives above, coupled through two log-sum-exp terms:

        L = log(1 + sum_neg e^z) + log(1 + sum_pos e^-z)
    """
    if z.shape != target.shape or z.shape != valid.shape:
        raise ShapeMismatch("scores, target and valid mask must share a shape")
    zz = z[valid]
    tt = target[valid]
    return _log1p_sum_exp(zz[tt == 0]) + _log1p_sum_exp(-zz[tt == 1])


def circle_loss_grad(z: np.ndarray, target: np.ndarray, valid: np.ndarray):
    """Loss plus dL/dZ (zero outside the valid mask)."""
    if z.shape != target.shape or z.shape != valid.shape:
        raise ShapeMismatch("scores, target and valid mask must share a shape")
    d_z = np.zeros_like(z)
    neg_mask = valid & (target == 0)
    pos_mask = valid & (target == 1)
    loss = 0.0

    v = z[neg_mask]
    if v.size:
        m = max(float(v.max()), 0.0)
        e = np.exp(v - m)
        denom = np.exp(-m) + e.sum()
        loss += m + float(np.log(denom))
        d_z[neg_mask] = e / denom

    v = -z[pos_mask]
    if v.size:
        m = max(float(v.max()), 0.0)
        e = np.exp(v - m)
        denom = np.exp(-m) + e.sum()
        loss += m + float(np.log(denom))
        d_z[pos_mask] = -(e / denom)

    return loss, d_z


# ------------------------------------------------------------- backward ---

def backward(enc: EncoderParams, head: ScoringHead, query: Query,
             target: np.ndarray):
    """Forward pass plus exact reverse-mode gradients for one query.

    Returns ``(loss, encoder_grads, head_grads)`` where the grad dicts mirror
    the parameter dicts key for key.
    """
    hidden, cache = encode(enc, query, want_cache=True)
    z, score_cache = score(head, hidden, query, want_cache=True)
    loss, d_z = circle_loss_grad(z, target, query.scoring_mask)
    enc_grads: dict[str, np.ndarray] = {}
    head_grads: dict[str, np.ndarray] = {}
    d_hidden = _score_bwd(head, query, score_cache, d_z, head_grads)
    _encode_bwd(enc, query, cache, d_hidden, enc_grads)
    return loss, enc_grads, head_grads


def accumulate(total: dict[str, np.ndarray], part: dict[str, np.ndarray]) -> None:
    """Sum gradient dicts in place (missing keys are adopted)."""
    for name, g in part.items():
        if name in total:
            total[name] += g
        else:
            total[name] = g.copy()


# ------------------------------------------------------------ checkpoint ---

def save_checkpoint(path, enc: EncoderParams, head: ScoringHead) -> None:
    """Versioned binary checkpoint.

    Layout: 8 magic bytes ``SPLKCKPT``, little-endian u32 header length, a
    UTF-8 JSON header (format version, encoder/head dims, ordered tensor
    manifest), then each tensor as row-major little-endian float32 in
    manifest order.  The manifest is sorted by name, so the byte layout is a
    deterministic function of the parameters.
    """
    names = [f"enc.{k}" for k in sorted(enc.params)] \
        + [f"head.{k}" for k in sorted(head.params)]
    tensors = {f"enc.{k}": v for k, v in enc.params.items()}
    tensors.update({f"head.{k}": v for k, v in head.params.items()})
    header = {
        "format": 1,
        "encoder": {
            "vocab_size": enc.config.vocab_size, "d": enc.config.d,
            "layers": enc.config.layers, "heads": enc.config.heads,
            "max_positions": enc.config.max_positions,
            "ffn_mult": enc.config.ffn_mult,
            "final_norm": enc.config.final_norm,
        },
        "head": {"d_in": head.d_in, "d_head": head.d_head},
        "tensors": [[name, list(tensors[name].shape)] for name in names],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name in names:
            fh.write(np.ascontiguousarray(tensors[name], dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[EncoderParams, ScoringHead]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != _CHECKPOINT_MAGIC:
            raise CheckpointMismatch(f"bad magic bytes {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        try:
            header = json.loads(fh.read(hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointMismatch(f"unreadable header: {exc}") from None
        if header.get("format") != 1:
            raise CheckpointMismatch(f"unsupported format {header.get('format')!r}")
        config = EncoderConfig(**header["encoder"])
        enc = EncoderParams(config=config)
        head = ScoringHead(d_in=header["head"]["d_in"],
                           d_head=header["head"]["d_head"])
        for name, shape in header["tensors"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(4 * count)
            if len(buf) != 4 * count:
                raise CheckpointMismatch(f"tensor {name} truncated")
            arr = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float32)
            if name.startswith("enc."):
                enc.params[name[4:]] = arr
            elif name.startswith("head."):
                head.params[name[5:]] = arr
            else:
                raise CheckpointMismatch(f"unknown tensor namespace in {name!r}")

    # Structural check: the tensors must exactly cover a fresh model of the
    # declared dimensions.
    expected = init_encoder(config, np.random.default_rng(0)).params
    if set(expected) != set(enc.params) or any(
            expected[k].shape != enc.params[k].shape for k in expected):
        raise CheckpointMismatch("encoder tensors do not match declared dims")
    expected_head = init_head(head.d_in, head.d_head, np.random.default_rng(0)).params
    if set(expected_head) != set(head.params) or any(
            expected_head[k].shape != head.params[k].shape for k in expected_head):
        raise CheckpointMismatch("head tensors do not match declared dims")
    return enc, head
