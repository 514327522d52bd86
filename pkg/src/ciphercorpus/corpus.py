"""Document and corpus handling: JSONL ingest/persist and token budgeting.

Every pipeline stage reads and writes the same line-delimited record format:
one JSON object per line with required keys ``doc_id`` and ``text`` and
optional keys ``lang``, ``source``, ``parent_ids``, ``meta``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DuplicateDocId, IoFailure, MalformedRecord

SOURCE_ORIGINAL = "original"
SOURCE_SYNTHETIC = "synthetic"

# One token per codepoint inside these ranges; whitespace-delimited words
# elsewhere. Consistency matters for budgeting, exactness does not.
_CJK_RANGES = (
    (0x3040, 0x30FF),   # hiragana, katakana
    (0x3400, 0x4DBF),   # CJK extension A
    (0x4E00, 0x9FFF),   # CJK unified ideographs
    (0xF900, 0xFAFF),   # CJK compatibility ideographs
    (0x20000, 0x2A6DF), # CJK extension B
)


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return any(lo <= cp <= hi for lo, hi in _CJK_RANGES)


def approx_tokens(text: str) -> int:
    """Approximate token count: whitespace words plus one per CJK codepoint."""
    count = 0
    in_word = False
    for ch in text:
        if _is_cjk(ch):
            if in_word:
                count += 1
                in_word = False
            count += 1
        elif ch.isspace():
            if in_word:
                count += 1
                in_word = False
        else:
            in_word = True
    if in_word:
        count += 1
    return count


@dataclass(frozen=True)
class Document:
    """A unit of source or synthetic text with identity and provenance."""

    doc_id: str
    text: str
    lang: str = "und"
    source: str = SOURCE_ORIGINAL
    parent_ids: tuple[str, ...] = ()
    meta: dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.source not in (SOURCE_ORIGINAL, SOURCE_SYNTHETIC):
            raise ValueError(f"unknown source {self.source!r}")
        if self.source == SOURCE_SYNTHETIC and not self.parent_ids:
            raise ValueError("synthetic documents need non-empty parent_ids")
        if self.source == SOURCE_ORIGINAL and self.parent_ids:
            raise ValueError("original documents must have empty parent_ids")
        object.__setattr__(self, "parent_ids", tuple(self.parent_ids))

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "text": self.text,
            "lang": self.lang,
            "source": self.source,
            "parent_ids": list(self.parent_ids),
            "meta": dict(self.meta),
        }

    @classmethod
    def from_record(cls, record: dict) -> "Document":
        if not isinstance(record, dict):
            raise ValueError("record is not an object")
        for key in ("doc_id", "text"):
            if key not in record:
                raise ValueError(f"missing required key {key!r}")
            if not isinstance(record[key], str):
                raise ValueError(f"key {key!r} must be a string")
        meta = record.get("meta", {})
        if not isinstance(meta, dict):
            raise ValueError("meta must be an object")
        return cls(
            doc_id=record["doc_id"],
            text=record["text"],
            lang=record.get("lang", "und"),
            source=record.get("source", SOURCE_ORIGINAL),
            parent_ids=tuple(record.get("parent_ids", []) or ()),
            meta={str(k): str(v) for k, v in meta.items()},
        )


@dataclass(frozen=True)
class Corpus:
    """An ordered, immutable collection of documents."""

    documents: tuple[Document, ...]
    token_count: int = 0

    def __post_init__(self):
        object.__setattr__(self, "documents", tuple(self.documents))
        object.__setattr__(
            self, "token_count", sum(approx_tokens(d.text) for d in self.documents)
        )

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def get(self, doc_id: str) -> Document:
        for doc in self.documents:
            if doc.doc_id == doc_id:
                return doc
        raise KeyError(doc_id)


def ingest(path: str | Path, kind: str = "jsonl") -> Corpus:
    """Load a corpus from a JSONL file or a directory of plain-text files.

    Raises MalformedRecord for unparseable lines and DuplicateDocId when two
    records share an id.
    """
    path = Path(path)
    if kind == "jsonl":
        docs = _ingest_jsonl(path)
    elif kind == "plain_dir":
        docs = _ingest_plain_dir(path)
    else:
        raise ValueError(f"unknown ingest kind {kind!r}")
    seen: set[str] = set()
    for doc in docs:
        if doc.doc_id in seen:
            raise DuplicateDocId(doc.doc_id)
        seen.add(doc.doc_id)
    return Corpus(documents=tuple(docs))


def _ingest_jsonl(path: Path) -> list[Document]:
    docs: list[Document] = []
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(path, exc) from exc
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            docs.append(Document.from_record(record))
        except (json.JSONDecodeError, ValueError) as exc:
            raise MalformedRecord(line_no, str(exc)) from exc
    return docs


def _ingest_plain_dir(path: Path) -> list[Document]:
    docs: list[Document] = []
    try:
        files = sorted(p for p in path.iterdir() if p.is_file())
    except OSError as exc:
        raise IoFailure(path, exc) from exc
    for file in files:
        try:
            text = file.read_text(encoding="utf-8")
        except OSError as exc:
            raise IoFailure(file, exc) from exc
        docs.append(Document(doc_id=file.stem, text=text))
    return docs


def persist(corpus: Corpus, path: str | Path) -> None:
    """Write one JSON object per line; ingest(persist(c)) reproduces c."""
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as handle:
            for doc in corpus:
                handle.write(json.dumps(doc.to_record(), ensure_ascii=False))
                handle.write("\n")
    except OSError as exc:
        raise IoFailure(path, exc) from exc


