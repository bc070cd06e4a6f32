"""
From a schema file to encoder queries
=====================================

A schema is a JSON tree: keys are type labels, values are the child
schemas (null for leaves).  Each tree level becomes one query per batch
of pending prefixes, and this script walks that compilation by hand.
"""

import json

from spanlink.config import Config
from spanlink.data import PathElement
from spanlink.engine import plan_level
from spanlink.query import render_query
from spanlink.schema import parse_schema
from spanlink.tokenizer import build_vocab, tokenize

# a two-level schema: entities at level 1, relations under "person"
schema = parse_schema(json.dumps({
    "person": {"work for ( organization )": None},
    "organization": None,
}))
print("schema depth:", schema.depth)

text = "rivera works for acme ."
vocab = build_vocab([text], ["person", "organization",
                             "work for ( organization )"])
toks = tokenize(vocab, text)
cfg = Config(max_prompt_len=32, max_len=64)

# level 1 always starts from the single empty prefix; candidate types are
# the schema's root children in lexicographic order
plan = plan_level(schema, [()], toks, text, vocab, cfg)
print("\nlevel 1 query:")
print(" ", render_query(plan.queries[0]))

# pretend level 1 found "rivera"; its path becomes a prefix group whose
# candidates are the person node's children
rivera = PathElement("person", 0, 6, "rivera")
plan2 = plan_level(schema, [(rivera,)], toks, text, vocab, cfg)
print("\nlevel 2 query:")
print(" ", render_query(plan2.queries[0]))

# a tight prompt budget forces the same level into several sub-queries,
# one (group, type) pair at a time
tight = Config(max_prompt_len=5, max_len=64)
plan3 = plan_level(schema, [()], toks, text, vocab, tight)
print(f"\nsame level under a 5-token prompt budget "
      f"({len(plan3.queries)} sub-queries):")
for q in plan3.queries:
    print(" ", render_query(q))
