"""Exception types shared across the pipeline stages."""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for all pipeline errors."""


class MalformedRecord(PipelineError):
    def __init__(self, line_no: int, detail: str = ""):
        self.line_no = line_no
        self.detail = detail
        super().__init__(f"malformed record at line {line_no}: {detail}")


class DuplicateDocId(PipelineError):
    def __init__(self, doc_id: str):
        self.doc_id = doc_id
        super().__init__(f"duplicate doc_id: {doc_id!r}")


class IoFailure(PipelineError):
    def __init__(self, path, cause: Exception | None = None):
        self.path = str(path)
        self.cause = cause
        super().__init__(f"I/O failure on {path}: {cause}")


class MixedDocuments(PipelineError):
    """Spans from more than one document passed to a single-document operation."""


class SidecarUnavailable(PipelineError):
    """The NER/embedding sidecar process or endpoint cannot be reached."""


class ProtocolViolation(PipelineError):
    def __init__(self, detail: str):
        self.detail = detail
        super().__init__(f"sidecar protocol violation: {detail}")


class EmptySurface(PipelineError):
    """Entity surface is empty after canonicalization."""


class OverlappingSpans(PipelineError):
    """Rewrite requires pairwise non-overlapping spans."""


class ScoreParseFailure(PipelineError):
    def __init__(self, response: str):
        self.response = response
        super().__init__("no association score found in backend response")


class DanglingEdge(PipelineError):
    def __init__(self, edge):
        self.edge = edge
        super().__init__(f"edge references unknown node: {edge}")


class EmptyTupleSet(PipelineError):
    """A synthesis plan needs at least one entity tuple."""


class BackendFailure(PipelineError):
    """Generic failure talking to an LLM backend."""


class Transport(BackendFailure):
    def __init__(self, code, detail: str = ""):
        self.code = code
        self.detail = detail
        super().__init__(f"transport error {code}: {detail}")


class Exhausted(BackendFailure):
    def __init__(self, retries: int):
        self.retries = retries
        super().__init__(f"backend retries exhausted after {retries} attempts")


class AuthFailure(BackendFailure):
    """The backend rejected our credentials."""


class DimMismatch(PipelineError):
    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"embedding dim mismatch: expected {expected}, got {got}")


class MissingArticleKey(PipelineError):
    def __init__(self, doc_id: str, key: str):
        self.doc_id = doc_id
        self.key = key
        super().__init__(f"document {doc_id!r} has no article key {key!r}")


class ConfigInvalid(PipelineError):
    def __init__(self, field: str, detail: str = ""):
        self.field = field
        self.detail = detail
        super().__init__(f"invalid config field {field!r}: {detail}")


class StageFailure(PipelineError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
