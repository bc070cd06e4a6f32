"""Exception hierarchy for spanlink.

Every error carries a module-qualified ``code`` ("schema.MalformedSchema",
"query.PromptOverflow", ...) so the CLI can report failures uniformly and
callers can match on codes without string-parsing messages.
"""

from __future__ import annotations


class SpanlinkError(Exception):
    """Base class for all errors raised by this package."""

    module = "spanlink"

    @property
    def code(self) -> str:
        return f"{self.module}.{type(self).__name__}"


# ---------------------------------------------------------------- schema ---

class SchemaError(SpanlinkError):
    module = "schema"


class MalformedSchema(SchemaError):
    """Schema text does not follow the documented grammar."""


class UnknownPath(SchemaError):
    """A label path does not exist in the schema tree."""


class SchemaTooDeep(SchemaError):
    """Schema depth exceeds the configured maximum."""


class InvariantViolation(SchemaError):
    """Structural invariant broken (duplicate siblings, mixed level modes)."""


# -------------------------------------------------------------- tokenize ---

class TokenizeError(SpanlinkError):
    module = "tokenize"


class EmptyCorpus(TokenizeError):
    """build_vocab was handed a corpus with no usable tokens."""


class OutOfBounds(TokenizeError):
    """Character span lies outside the source string."""


class MalformedVocab(TokenizeError):
    """Vocabulary file violates the token<TAB>id layout."""


# ----------------------------------------------------------------- query ---

class QueryError(SpanlinkError):
    module = "query"


class EmptyTypeSet(QueryError):
    """A prefix group has no candidate types to ask about."""


class PromptOverflow(QueryError):
    """A single group+type pair cannot fit the prompt budget."""


class TextOverflow(QueryError):
    """Prompt plus text exceeds the total length budget."""


class MisalignedSpan(QueryError):
    """Gold character offsets do not land on token boundaries."""


class UnknownGoldType(QueryError):
    """Gold annotation names a type that is not a candidate at its level."""


# ----------------------------------------------------------------- model ---

class ModelError(SpanlinkError):
    module = "model"


class DimensionMismatch(ModelError):
    """Token/position/type ids exceed the corresponding embedding table."""


class OddHeadDim(ModelError):
    """Rotary scoring head dimension must be even."""


class ShapeMismatch(ModelError):
    """Arrays passed together do not agree in shape."""


class CheckpointMismatch(ModelError):
    """Checkpoint file does not match the expected layout or dimensions."""


# ---------------------------------------------------------------- decode ---

class DecodeError(SpanlinkError):
    module = "decode"


class NoCandidates(DecodeError):
    """Single-label classification needs at least one candidate label."""


class BadGridFile(DecodeError):
    """Score-matrix grid file is truncated or malformed."""


# ---------------------------------------------------------------- engine ---

class EngineError(SpanlinkError):
    module = "engine"


class OracleExhausted(EngineError):
    """Stored score matrices ran out (or mismatched) during extraction."""


# ---------------------------------------------------------- data_metrics ---

class DataError(SpanlinkError):
    module = "data_metrics"


class MalformedRecord(DataError):
    """A dataset line is not a valid record."""


class OffsetOutOfRange(DataError):
    """Annotation offsets fall outside the record text."""


class UnknownTask(DataError):
    """No metric key specification registered under that task name."""


# ------------------------------------------------------------------- cli ---

class CliError(SpanlinkError):
    module = "cli"


class BadConfig(CliError):
    """Config file or override flag does not parse."""
