"""Turning score matrices back into spans and labels.

Extraction follows the token-linking rule: a span (i, j) with type u is
emitted iff its head-tail cell, its head-to-[T] cell and its [T]-to-tail cell
all clear the threshold::

    Z[i, j] >= delta  and  Z[i, k_u] >= delta  and  Z[k_u, j] >= delta

with delta = 0 by default.  The comparison is inclusive, which is why masked
cells must be -inf rather than 0.  ``oracle_decode`` re-derives the same set
by brute-force enumeration and exists purely as a correctness oracle.

Classification reads the [CLST] row/column pair instead: single-label picks
``argmax_y sigmoid(Z[j, y]) * sigmoid(Z[y, j])`` (ties break to the lowest
candidate index), multi-label keeps every label whose both directions exceed
the classification threshold strictly (0.9 by default).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import BadGridFile, NoCandidates, ShapeMismatch
from .query import Query
from .schema import LevelMode


@dataclass(frozen=True)
class TypedSpan:
    """One decoded span: owning group, type label, token and char extents."""

    group: int
    label: str
    i: int          # query index of the span's first text token
    j: int          # query index of the last text token (inclusive)
    start: int      # character offsets into the source text
    end: int
    surface: str


@dataclass(frozen=True)
class ClsDecision:
    """Labels chosen for one prefix group on a classification level."""

    group: int
    labels: tuple[str, ...]


def threshold(z: np.ndarray, delta: float, valid: np.ndarray) -> np.ndarray:
    """Binary hit matrix: score >= delta on valid cells, 0 everywhere else."""
    if z.shape != valid.shape:
        raise ShapeMismatch("score matrix and valid mask must share a shape")
    return ((z >= delta) & valid).astype(np.uint8)


def _span_of(query: Query, group: int, label: str, iq: int, jq: int) -> TypedSpan:
    a = iq - query.text_start
    b = jq - query.text_start
    start = query.text.offsets[a][0]
    end = query.text.offsets[b][1]
    return TypedSpan(group=group, label=label, i=iq, j=jq, start=start, end=end,
                     surface=query.source[start:end])


def decode_ie(z: np.ndarray, query: Query, delta: float = 0.0) -> list[TypedSpan]:
    """All spans satisfying the three-cell linking rule, deduplicated and
    sorted by (i, j, group, label)."""
    hit = (z >= delta) & query.scoring_mask
    t0 = query.text_start
    t1 = t0 + query.text_len
    head_tail = hit[t0:t1, t0:t1]
    spans = []
    for m in query.type_markers:
        heads = hit[t0:t1, m.pos]
        tails = hit[m.pos, t0:t1]
        cand = head_tail & heads[:, None] & tails[None, :]
        for a, b in zip(*np.nonzero(cand)):
            spans.append(_span_of(query, m.group, m.label, t0 + int(a), t0 + int(b)))
    spans.sort(key=lambda s: (s.i, s.j, s.group, s.label))
    return spans


def oracle_decode(z: np.ndarray, query: Query, delta: float = 0.0) -> list[TypedSpan]:
    """Literal restatement of the inference rule: enumerate every text pair
    (i, j) and every [T] marker k and test the three cells directly."""
    text_idx = list(query.text_positions())
    spans = []
    for i in text_idx:
        for j in text_idx:
            if i > j:
                continue
            for m in query.type_markers:
                k = m.pos
                if z[i, j] >= delta and z[i, k] >= delta and z[k, j] >= delta:
                    spans.append(_span_of(query, m.group, m.label, i, j))
    spans.sort(key=lambda s: (s.i, s.j, s.group, s.label))
    return spans


def cls_products(z: np.ndarray, query: Query) -> list[tuple[int, str, float]]:
    """Two-direction sigmoid products for every (group, label) candidate.
    This is the quantity single-label ensembles multiply across sub-queries."""
    if query.clst_pos is None:
        raise NoCandidates("query was not built in a classification mode")
    j = query.clst_pos
    return [
        (m.group, m.label, float(expit(z[j, m.pos])) * float(expit(z[m.pos, j])))
        for m in query.type_markers
    ]


def _pair_products(z: np.ndarray, query: Query, group: int):
    markers = [m for m in query.type_markers if m.group == group]
    if not markers:
        raise NoCandidates(f"group {group} has no candidate labels")
    j = query.clst_pos
    probs = np.array([
        float(expit(z[j, m.pos])) * float(expit(z[m.pos, j])) for m in markers
    ])
    return markers, probs


def decode_cls_single(z: np.ndarray, query: Query) -> tuple[ClsDecision, ...]:
    """One label per group: argmax of the two-direction sigmoid product.
    Exact ties resolve to the lowest candidate index."""
    if query.mode is LevelMode.EXTRACT or query.clst_pos is None:
        raise NoCandidates("query was not built in a classification mode")
    decisions = []
    for g in range(len(query.groups)):
        markers, probs = _pair_products(z, query, g)
        best = int(np.argmax(probs))  # argmax returns the first maximum
        decisions.append(ClsDecision(group=g, labels=(markers[best].label,)))
    return tuple(decisions)


def decode_cls_multi(z: np.ndarray, query: Query,
                     delta: float = 0.9) -> tuple[ClsDecision, ...]:
    """Every label whose both direction sigmoids strictly exceed delta.
    The label set may legitimately be empty."""
    if query.mode is LevelMode.EXTRACT or query.clst_pos is None:
        raise NoCandidates("query was not built in a classification mode")
    j = query.clst_pos
    decisions = []
    for g in range(len(query.groups)):
        markers = [m for m in query.type_markers if m.group == g]
        if not markers:
            raise NoCandidates(f"group {g} has no candidate labels")
        labels = tuple(
            m.label for m in markers
            if expit(z[j, m.pos]) > delta and expit(z[m.pos, j]) > delta
        )
        decisions.append(ClsDecision(group=g, labels=labels))
    return tuple(decisions)


# ------------------------------------------------------------ grid files ---

def save_grids(path, matrices) -> None:
    """Write score matrices as consecutive binary grids: little-endian u32
    rows, u32 cols, then row-major float32 cells (-inf is representable)."""
    with open(path, "wb") as fh:
        for m in matrices:
            arr = np.ascontiguousarray(m, dtype="<f4")
            if arr.ndim != 2:
                raise ShapeMismatch("grid file stores 2-D matrices only")
            fh.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
            fh.write(arr.tobytes())


def load_grids(path) -> list[np.ndarray]:
    matrices = []
    with open(path, "rb") as fh:
        while True:
            head = fh.read(8)
            if not head:
                break
            if len(head) != 8:
                raise BadGridFile("truncated grid header")
            rows, cols = struct.unpack("<II", head)
            buf = fh.read(4 * rows * cols)
            if len(buf) != 4 * rows * cols:
                raise BadGridFile(f"truncated grid body ({rows}x{cols})")
            matrices.append(
                np.frombuffer(buf, dtype="<f4").reshape(rows, cols).astype(np.float32)
            )
    return matrices
