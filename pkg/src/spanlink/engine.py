"""Recursive extraction engine and training loop.

Extraction walks the schema level by level.  Level 1 asks one query with an
empty prefix over the root's candidate types; every decoded span (or label)
whose schema node has children becomes a prefix group for the next level,
and so on until the schema bottoms out or a level decodes nothing.  Training
replaces predicted prefixes with gold ones (teacher forcing), including gold
prefixes that have no continuation, whose all-zero target teaches the model
to stop.

Scores come from a pluggable scorer, ``scorer(query) -> Z``: the trained
model, a stream of stored matrices, or an oracle synthesized from gold
annotations.  Keeping that seam explicit is what lets the decoder be tested
for exact closure (plant annotations, score with the oracle, extract, and
require the planted set back).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import Config, eval_task_list
from .data import Example, PathElement, path_key
from .decoding import cls_products, decode_cls_multi, decode_ie
from .errors import OracleExhausted
from .metrics import MetricReport, corpus_f1, metric_for_task
from .model import (
    EncoderConfig,
    EncoderParams,
    ScoringHead,
    accumulate,
    backward,
    encode,
    init_encoder,
    init_head,
    score,
)
from .optim import AdamW, clip_grad_norm, linear_schedule
from .query import PrefixGroup, Query, build_target, split_query
from .schema import LevelMode, Schema, children_of
from .tokenizer import Vocab, tokenize

ORACLE_HI = 10.0  # sigmoid(10) ~ 0.99995, comfortably past the 0.9 threshold
ORACLE_LO = -10.0


@dataclass(frozen=True)
class ExtractionPath:
    """One extracted structure.  ``terminal`` is True when the path reached a
    leaf type; False when its node had children but nothing continued."""

    elements: tuple[PathElement, ...]
    terminal: bool


@dataclass
class LevelPlan:
    level: int
    mode: LevelMode
    groups: tuple[PrefixGroup, ...]
    queries: list[Query]


def _labels_of(path) -> tuple[str, ...]:
    return tuple(el.label for el in path)


def plan_level(schema: Schema, prefix_paths, text, source: str, vocab: Vocab,
               cfg: Config) -> LevelPlan:
    """Build the queries for one level given the prefix paths to extend.

    Prefixes are deduplicated by (type, offsets) identity preserving first
    occurrence; candidate types come from the schema in lexicographic order,
    which fixes the canonical query rendering regardless of schema file
    order.  Queries are split as needed to respect the prompt budget.
    """
    seen = set()
    groups = []
    mode = None
    level = None
    for path in prefix_paths:
        pk = path_key(path)
        if pk in seen:
            continue
        seen.add(pk)
        node = schema.node_at(_labels_of(path))
        candidates = sorted(children_of(schema, _labels_of(path)))
        child_mode = node.children[candidates[0]].mode
        if mode is None:
            mode, level = child_mode, len(path) + 1
        groups.append(PrefixGroup(path=tuple(path), types=tuple(candidates)))
    queries = split_query(groups, text, source, mode, vocab,
                          cfg.max_prompt_len, cfg.max_len)
    return LevelPlan(level=level, mode=mode, groups=tuple(groups), queries=queries)


def merge_results(plan: LevelPlan, outputs, delta_cls: float):
    """Combine per-query decodes into per-prefix continuations.

    Extraction merges by set union.  Single-label classification multiplies
    each label's two-direction sigmoid product across the sub-queries that
    asked about it and takes the argmax per group (ties to the lowest index
    in the group's canonical candidate order).  Multi-label unions every
    label that cleared the threshold in its sub-query.
    """
    continuations: dict[tuple, list[PathElement]] = {
        path_key(g.path): [] for g in plan.groups
    }
    by_path = {path_key(g.path): g for g in plan.groups}

    if plan.mode is LevelMode.EXTRACT:
        seen = set()
        for query, spans in zip(plan.queries, outputs):
            for s in spans:
                pk = path_key(query.groups[s.group].path)
                el = PathElement(label=s.label, start=s.start, end=s.end,
                                 surface=s.surface)
                if (pk, el.key()) not in seen:
                    seen.add((pk, el.key()))
                    continuations[pk].append(el)
        for els in continuations.values():
            els.sort(key=lambda e: (e.start, e.end, e.label))
    elif plan.mode is LevelMode.CLASSIFY_SINGLE:
        products: dict[tuple, dict[str, float]] = {}
        for query, out in zip(plan.queries, outputs):
            for g, label, p in out:
                pk = path_key(query.groups[g].path)
                slot = products.setdefault(pk, {})
                slot[label] = slot.get(label, 1.0) * p
        for pk, slot in products.items():
            order = {label: i for i, label in enumerate(by_path[pk].types)}
            best = min(slot, key=lambda lab: (-slot[lab], order[lab]))
            continuations[pk].append(PathElement(label=best))
    else:
        chosen: dict[tuple, list[str]] = {}
        for query, out in zip(plan.queries, outputs):
            for dec in out:
                pk = path_key(query.groups[dec.group].path)
                bucket = chosen.setdefault(pk, [])
                for label in dec.labels:
                    if label not in bucket:
                        bucket.append(label)
        for pk, labels in chosen.items():
            order = {label: i for i, label in enumerate(by_path[pk].types)}
            for label in sorted(labels, key=order.get):
                continuations[pk].append(PathElement(label=label))
    return continuations


def _decode_level(plan: LevelPlan, scorer, cfg: Config):
    outputs = []
    for query in plan.queries:
        z = scorer(query)
        if plan.mode is LevelMode.EXTRACT:
            outputs.append(decode_ie(z, query, cfg.delta_ie))
        elif plan.mode is LevelMode.CLASSIFY_SINGLE:
            outputs.append(cls_products(z, query))
        else:
            outputs.append(decode_cls_multi(z, query, cfg.delta_cls))
    return merge_results(plan, outputs, cfg.delta_cls)


def extract(schema: Schema, vocab: Vocab, scorer, text: str,
            cfg: Config) -> list[ExtractionPath]:
    """Recursively extract every schema path the scorer supports in ``text``.

    The result contains each maximal decoded path, plus each decoded prefix
    whose node has children but produced no continuation (reported with
    ``terminal=False``).  Output order is deterministic.
    """
    toks = tokenize(vocab, text)
    results: list[ExtractionPath] = []
    pending: list[tuple[PathElement, ...]] = [()]
    while pending:
        plan = plan_level(schema, pending, toks, text, vocab, cfg)
        continuations = _decode_level(plan, scorer, cfg)
        next_pending = []
        for path in pending:
            pk = path_key(path)
            found = continuations.get(pk, [])
            if not found and path:
                results.append(ExtractionPath(elements=tuple(path), terminal=False))
            for el in found:
                extended = tuple(path) + (el,)
                node = schema.node_at(_labels_of(extended))
                if node.is_leaf:
                    results.append(ExtractionPath(elements=extended, terminal=True))
                else:
                    next_pending.append(extended)
        pending = next_pending

    def sort_key(p: ExtractionPath):
        return tuple(
            (el.label, -1 if el.start is None else el.start,
             -1 if el.end is None else el.end)
            for el in p.elements
        )

    results.sort(key=sort_key)
    return results


# --------------------------------------------------------------- scorers ---

class ModelScorer:
    """Score queries with the trained encoder + head."""

    def __init__(self, enc: EncoderParams, head: ScoringHead):
        self.enc = enc
        self.head = head

    def __call__(self, query: Query) -> np.ndarray:
        return score(self.head, encode(self.enc, query), query)


class GoldScorer:
    """Oracle: synthesize scores from gold paths via the target builder.

    Target cells become +10, everything else -10 (masked cells -inf), so
    extraction at threshold 0 and classification at threshold 0.9 both
    reproduce the annotations exactly.
    """

    def __init__(self, gold_paths):
        self.gold_paths = tuple(gold_paths)

    def target_for(self, query: Query) -> np.ndarray:
        gold_by_group = {}
        for g, group in enumerate(query.groups):
            els = gold_continuations(self.gold_paths, group.path)
            els = [el for el in els if el.label in group.types]
            if els:
                gold_by_group[g] = els
        return build_target(query, gold_by_group)

    def __call__(self, query: Query) -> np.ndarray:
        target = self.target_for(query)
        z = np.where(target == 1, ORACLE_HI, ORACLE_LO).astype(np.float32)
        z[~query.scoring_mask] = -np.inf
        return z


class GridScorer:
    """Feed stored score matrices in engine query order."""

    def __init__(self, matrices):
        self.matrices = list(matrices)
        self.cursor = 0

    def __call__(self, query: Query) -> np.ndarray:
        if self.cursor >= len(self.matrices):
            raise OracleExhausted(
                f"needed a {len(query)}x{len(query)} matrix for query "
                f"{self.cursor} but the file holds only {len(self.matrices)}"
            )
        z = self.matrices[self.cursor]
        self.cursor += 1
        if z.shape != (len(query), len(query)):
            raise OracleExhausted(
                f"stored matrix {self.cursor - 1} is {z.shape}, query needs "
                f"({len(query)}, {len(query)})"
            )
        return z


class RecordingScorer:
    """Wrap another scorer, keeping every (query, matrix) pair in order."""

    def __init__(self, inner):
        self.inner = inner
        self.queries: list[Query] = []
        self.matrices: list[np.ndarray] = []

    def __call__(self, query: Query) -> np.ndarray:
        z = self.inner(query)
        self.queries.append(query)
        self.matrices.append(z)
        return z


# -------------------------------------------------------- teacher forcing ---

def gold_continuations(gold_paths, prefix) -> list[PathElement]:
    """Distinct gold elements that extend ``prefix`` by one level, in first
    occurrence order."""
    depth = len(prefix)
    pk = path_key(prefix)
    out, seen = [], set()
    for path in gold_paths:
        if len(path) <= depth or path_key(path[:depth]) != pk:
            continue
        el = path[depth]
        if el.key() not in seen:
            seen.add(el.key())
            out.append(el)
    return out


def gold_prefixes(gold_paths, schema: Schema, level: int):
    """Distinct gold prefixes of length level-1 whose nodes have children,
    in record order.  Level 1 always yields the single empty prefix."""
    if level == 1:
        return [()]
    out, seen = [], set()
    for path in gold_paths:
        if len(path) < level - 1:
            continue
        prefix = tuple(path[:level - 1])
        pk = path_key(prefix)
        if pk in seen:
            continue
        seen.add(pk)
        if not schema.node_at(_labels_of(prefix)).is_leaf:
            out.append(prefix)
    return out


def teacher_forced_queries(example: Example, schema: Schema, vocab: Vocab,
                           cfg: Config):
    """(query, target) pairs for every level of one example, with gold
    prefixes standing in for predictions."""
    toks = tokenize(vocab, example.text)
    pairs = []
    for level in range(1, schema.depth + 1):
        prefixes = gold_prefixes(example.paths, schema, level)
        if not prefixes:
            break
        plan = plan_level(schema, prefixes, toks, example.text, vocab, cfg)
        scorer = GoldScorer(example.paths)
        for query in plan.queries:
            pairs.append((query, scorer.target_for(query)))
    return pairs


# ------------------------------------------------------------ train / eval ---

@dataclass
class TrainResult:
    enc: EncoderParams
    head: ScoringHead
    log: list[dict] = field(default_factory=list)


def _namespaced(enc: EncoderParams, head: ScoringHead, enc_grads, head_grads):
    params = {f"enc.{k}": v for k, v in enc.params.items()}
    params.update({f"head.{k}": v for k, v in head.params.items()})
    grads = {f"enc.{k}": v for k, v in enc_grads.items()}
    grads.update({f"head.{k}": v for k, v in head_grads.items()})
    return params, grads


def build_model(cfg: Config, vocab_size: int, rng: np.random.Generator):
    enc_cfg = EncoderConfig(
        vocab_size=vocab_size, d=cfg.d, layers=cfg.layers, heads=cfg.heads,
        max_positions=cfg.max_prompt_len + cfg.max_len, ffn_mult=cfg.ffn_mult,
    )
    enc = init_encoder(enc_cfg, rng)
    head = init_head(cfg.d, cfg.d_head, rng)
    return enc, head


def train(examples, schema: Schema, vocab: Vocab, cfg: Config,
          log_fn=None) -> TrainResult:
    """Teacher-forced training: per example, sum circle loss over every
    level's queries, then one optimizer step (AdamW, linear warmup, global
    norm clip).  Logs per-epoch mean loss and training-set strict F1 via
    self-extraction.  All randomness flows from cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    enc, head = build_model(cfg, len(vocab), rng)
    opt = AdamW(lr=cfg.lr, weight_decay=cfg.weight_decay)
    total_steps = max(1, cfg.epochs * len(examples))
    tasks = eval_task_list(cfg)
    log: list[dict] = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(examples))
        epoch_loss = 0.0
        for idx in order:
            pairs = teacher_forced_queries(examples[int(idx)], schema, vocab, cfg)
            enc_grads: dict[str, np.ndarray] = {}
            head_grads: dict[str, np.ndarray] = {}
            loss = 0.0
            for query, target in pairs:
                part_loss, ge, gh = backward(enc, head, query, target)
                loss += part_loss
                accumulate(enc_grads, ge)
                accumulate(head_grads, gh)
            step += 1
            params, grads = _namespaced(enc, head, enc_grads, head_grads)
            clip_grad_norm(grads, cfg.grad_clip)
            opt.step(params, grads, linear_schedule(step, total_steps,
                                                    cfg.warmup_ratio))
            epoch_loss += loss
        entry = {"epoch": epoch, "loss": epoch_loss / max(1, len(examples))}
        reports = evaluate(examples, schema, vocab, ModelScorer(enc, head),
                           cfg, tasks)
        for task, report in reports.items():
            entry[task] = report.f1
        log.append(entry)
        if log_fn is not None:
            log_fn(entry)
        if cfg.early_stop_f1 > 0 and tasks and all(
                reports[t].f1 >= cfg.early_stop_f1 for t in tasks):
            break
    return TrainResult(enc=enc, head=head, log=log)


def extract_many(examples_texts, schema: Schema, vocab: Vocab, scorer,
                 cfg: Config) -> list[list[ExtractionPath]]:
    """Extraction over many texts; cfg.jobs > 1 fans out over a thread pool
    (order preserved)."""
    def run(text: str):
        return extract(schema, vocab, scorer, text, cfg)

    texts = list(examples_texts)
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(run, texts))
    return [run(t) for t in texts]


def evaluate(examples, schema: Schema, vocab: Vocab, scorer, cfg: Config,
             tasks) -> dict[str, MetricReport]:
    """Strict-F1 reports for each task over the given examples."""
    predictions = extract_many([ex.text for ex in examples], schema, vocab,
                               scorer, cfg)
    pairs = [
        (ex.paths, [p.elements for p in preds])
        for ex, preds in zip(examples, predictions)
    ]
    return {
        task: corpus_f1(pairs, metric_for_task(task), task=task)
        for task in tasks
    }


# ----------------------------------------------------------- output format ---

def extraction_record(text: str, paths) -> str:
    """One output line (format version 1): the input text and its paths with
    a stable element key order (type, surface, start, end)."""
    rendered = []
    for p in paths:
        elements = []
        for el in p.elements:
            if el.label_only:
                elements.append({"type": el.label, "label_only": True})
            else:
                elements.append({"type": el.label, "surface": el.surface,
                                 "start": el.start, "end": el.end})
        rendered.append(elements)
    return json.dumps({"version": 1, "text": text, "paths": rendered},
                      ensure_ascii=False)
