"""
Four levels deep: comparative-opinion quintuples with an oracle scorer
======================================================================

The engine does not care where scores come from.  Here a scorer is
synthesized from planted annotations, which makes the recursion itself
observable: subject -> object -> aspect -> polarity-labeled opinion,
one schema level per query round.
"""

import json

from spanlink.config import Config
from spanlink.data import PathElement
from spanlink.engine import GoldScorer, RecordingScorer, extract
from spanlink.query import render_query
from spanlink.schema import parse_schema
from spanlink.tokenizer import build_vocab

POLARITY = {"worse ( opionion )": None, "equal ( opinion )": None,
            "better ( opinion )": None, "different ( opinion )": None}
schema = parse_schema(json.dumps({
    "subject": {
        "object": {"aspect": dict(POLARITY), **POLARITY},
        "aspect": dict(POLARITY),
        **POLARITY,
    },
    "object": {"aspect": dict(POLARITY), **POLARITY},
}))
print("schema depth:", schema.depth)

text = "the d50 takes sharper pictures than the d70 overall"


def el(label, surface):
    start = text.index(surface)
    return PathElement(label, start, start + len(surface), surface)


planted = ((el("subject", "d50"), el("object", "d70"),
            el("aspect", "pictures"), el("better ( opinion )", "sharper")),)

vocab = build_vocab([text], ["subject", "object", "aspect"] + list(POLARITY))
cfg = Config(max_prompt_len=128, max_len=192)

# wrap the oracle so we can watch one query per level go by
recorder = RecordingScorer(GoldScorer(planted))
paths = extract(schema, vocab, recorder, text, cfg)

print(f"\n{len(recorder.queries)} queries were asked:")
for q in recorder.queries:
    print(" ", render_query(q))

print("\nextracted paths:")
for p in paths:
    print("  " + " -> ".join(
        f"{e.label}[{e.surface}]" if e.surface else e.label
        for e in p.elements))

assert {p.elements for p in paths} == {planted[0]}
print("\nthe planted quintuple came back exactly")
