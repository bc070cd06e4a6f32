"""
Token linking: how a score matrix becomes typed spans
=====================================================

Every query is scored as an n x n matrix over its own tokens.  A span
(i..j) of type t is decoded only when three cells clear the threshold:
head->tail (i, j), head->type (i, [T]_t) and type->tail ([T]_t, j).
This script lights cells up one at a time and watches the decoder.
"""

import numpy as np

from spanlink.decoding import decode_ie
from spanlink.query import PrefixGroup, make_query
from spanlink.schema import LevelMode
from spanlink.tokenizer import build_vocab, tokenize

text = "ant bee cat"
vocab = build_vocab([text], ["alpha"])
query = make_query([PrefixGroup((), ("alpha",))], tokenize(vocab, text),
                   text, LevelMode.EXTRACT, vocab, 16, 32)

marker = query.type_markers[0]
i = query.text_start          # token "ant"
j = query.text_start + 1      # token "bee"

z = np.full((len(query), len(query)), -5.0, dtype=np.float32)
z[~query.scoring_mask] = -np.inf

print("cells required for span 'ant bee' as alpha:")
print(f"  head->tail  ({i}, {j})")
print(f"  head->type  ({i}, {marker.pos})")
print(f"  type->tail  ({marker.pos}, {j})")

# one link, then two, decode nothing; all three, decode the span
z[i, j] = 5.0
print("\nafter head->tail only:   ", decode_ie(z, query))
z[i, marker.pos] = 5.0
print("after head->type as well:", decode_ie(z, query))
z[marker.pos, j] = 5.0
spans = decode_ie(z, query)
print("after all three links:   ", [(s.label, s.surface) for s in spans])

# the threshold is part of the contract: raising it above the cell values
# empties the output again
print("\nsame matrix at threshold 6:", decode_ie(z, query, delta=6.0))
