"""PII span detection: regex recognizers, sidecar NER merging, manual review.

Structured identifiers (phones, ID numbers, bank cards, dates) come from
configurable regex recognizers; contextual entities (people, places) come
from an out-of-process NER sidecar. Overlaps are resolved by detector
priority and all detections can be exported for human review and re-imported
with verdicts.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

from .corpus import Corpus, Document
from .errors import IoFailure, MalformedRecord, MixedDocuments

ENTITY_TYPES = (
    "PERSON",
    "LOCATION",
    "ORG",
    "PHONE",
    "ID_NUMBER",
    "BANK_CARD",
    "DATE",
    "OTHER",
)

DETECTOR_REGEX = "regex"
DETECTOR_NER = "ner_sidecar"
DETECTOR_LLM = "llm"
DETECTOR_MANUAL = "manual"

# Overlap resolution: human verdicts outrank structured regex matches, which
# outrank contextual NER, which outranks LLM proposals.
_DETECTOR_PRIORITY = {
    DETECTOR_MANUAL: 3,
    DETECTOR_REGEX: 2,
    DETECTOR_NER: 1,
    DETECTOR_LLM: 0,
}


@dataclass(frozen=True)
class EntitySpan:
    """One detected entity occurrence, with codepoint offsets."""

    doc_id: str
    start: int
    end: int
    surface: str
    entity_type: str
    detector: str
    confidence: float = 1.0

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise ValueError(f"bad span offsets [{self.start}, {self.end})")
        if self.entity_type not in ENTITY_TYPES:
            raise ValueError(f"unknown entity type {self.entity_type!r}")
        if self.detector not in _DETECTOR_PRIORITY:
            raise ValueError(f"unknown detector {self.detector!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must be in [0, 1]")

    def validate_against(self, text: str) -> bool:
        return self.end <= len(text) and text[self.start : self.end] == self.surface


def luhn_valid(digits: str) -> bool:
    """Luhn checksum over the digit characters of a candidate card number."""
    digits = re.sub(r"\D", "", digits)
    if not digits:
        return False
    total = 0
    for i, ch in enumerate(reversed(digits)):
        d = int(ch)
        if i % 2 == 1:
            d *= 2
            if d > 9:
                d -= 9
        total += d
    return total % 10 == 0


_VALIDATORS = {"luhn": luhn_valid}


@dataclass(frozen=True)
class Recognizer:
    entity_type: str
    pattern: re.Pattern
    validator: str | None = None

    def matches(self, text: str):
        for match in self.pattern.finditer(text):
            if self.validator and not _VALIDATORS[self.validator](match.group(0)):
                continue
            yield match


@dataclass(frozen=True)
class RecognizerSet:
    """Named regex patterns, each mapped to exactly one entity type."""

    recognizers: tuple[Recognizer, ...]

    def __len__(self) -> int:
        return len(self.recognizers)

    @classmethod
    def from_spec(cls, patterns: list[dict]) -> "RecognizerSet":
        recs = []
        for item in patterns:
            if item["entity_type"] not in ENTITY_TYPES:
                raise ValueError(f"unknown entity type {item['entity_type']!r}")
            validator = item.get("validator")
            if validator is not None and validator not in _VALIDATORS:
                raise ValueError(f"unknown validator {validator!r}")
            recs.append(
                Recognizer(
                    entity_type=item["entity_type"],
                    pattern=re.compile(item["pattern"]),
                    validator=validator,
                )
            )
        return cls(recognizers=tuple(recs))

    @classmethod
    def from_file(cls, path: str | Path) -> "RecognizerSet":
        try:
            spec = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoFailure(path, exc) from exc
        return cls.from_spec(spec["patterns"])

    @classmethod
    def default(cls) -> "RecognizerSet":
        text = resources.files("ciphercorpus.data").joinpath("recognizers.json").read_text(
            encoding="utf-8"
        )
        return cls.from_spec(json.loads(text)["patterns"])


def detect_regex(doc: Document, recognizers: RecognizerSet) -> list[EntitySpan]:
    """Run every recognizer over the document; spans sorted by start."""
    if not len(recognizers):
        raise ValueError("recognizer set is empty")
    spans: list[EntitySpan] = []
    for rec in recognizers.recognizers:
        for match in rec.matches(doc.text):
            spans.append(
                EntitySpan(
                    doc_id=doc.doc_id,
                    start=match.start(),
                    end=match.end(),
                    surface=match.group(0),
                    entity_type=rec.entity_type,
                    detector=DETECTOR_REGEX,
                    confidence=1.0,
                )
            )
    spans.sort(key=lambda s: (s.start, s.end, s.entity_type))
    return spans


@dataclass(frozen=True)
class SidecarDetection:
    """NER result after offset validation: valid spans plus drop count."""

    spans: tuple[EntitySpan, ...]
    dropped: int = 0


def detect_sidecar(doc: Document, client) -> SidecarDetection:
    """Fetch NER spans from the sidecar, dropping offset-invalid ones.

    ``client`` is anything with ``ner(text, lang) -> list of span dicts``
    (see sidecar.SidecarClient and backends.MockSidecarClient).
    """
    raw = client.ner(doc.text, doc.lang)
    spans: list[EntitySpan] = []
    dropped = 0
    for item in raw:
        try:
            span = EntitySpan(
                doc_id=doc.doc_id,
                start=int(item["start"]),
                end=int(item["end"]),
                surface=str(item["surface"]),
                entity_type=str(item.get("entity_type", "OTHER")),
                detector=DETECTOR_NER,
                confidence=float(item.get("confidence", 0.5)),
            )
        except (KeyError, TypeError, ValueError):
            dropped += 1
            continue
        if not span.validate_against(doc.text):
            dropped += 1
            continue
        spans.append(span)
    spans.sort(key=lambda s: (s.start, s.end))
    return SidecarDetection(spans=tuple(spans), dropped=dropped)


def merge_spans(spans: list[EntitySpan]) -> list[EntitySpan]:
    """Resolve overlaps: higher-priority detector, then longer span, then
    smaller start. Output is non-overlapping and sorted by start."""
    if not spans:
        return []
    doc_ids = {s.doc_id for s in spans}
    if len(doc_ids) > 1:
        raise MixedDocuments(f"spans from multiple documents: {sorted(doc_ids)}")
    ranked = sorted(
        spans,
        key=lambda s: (
            -_DETECTOR_PRIORITY[s.detector],
            -(s.end - s.start),
            s.start,
            s.entity_type,
        ),
    )
    kept: list[EntitySpan] = []
    for span in ranked:
        if any(span.start < other.end and other.start < span.end for other in kept):
            continue
        kept.append(span)
    kept.sort(key=lambda s: s.start)
    return kept


REVIEW_VERSION = 1

VERDICT_KEEP = "keep"
VERDICT_DROP = "drop"
_VERDICT_RETYPE_RE = re.compile(r"^retype:(\w+)$")


def export_review(corpus: Corpus, spans_by_doc: dict[str, list[EntitySpan]], path: str | Path) -> None:
    """Write a human-editable review file: a header record, then one record
    per span with an empty verdict field."""
    path = Path(path)
    total = sum(len(v) for v in spans_by_doc.values())
    try:
        with path.open("w", encoding="utf-8") as handle:
            header = {"review_version": REVIEW_VERSION, "span_count": total}
            handle.write(json.dumps(header, ensure_ascii=False) + "\n")
            for doc in corpus:
                for span in spans_by_doc.get(doc.doc_id, []):
                    record = {
                        "doc_id": span.doc_id,
                        "start": span.start,
                        "end": span.end,
                        "surface": span.surface,
                        "entity_type": span.entity_type,
                        "detector": span.detector,
                        "confidence": span.confidence,
                        "verdict": "",
                    }
                    handle.write(json.dumps(record, ensure_ascii=False) + "\n")
    except OSError as exc:
        raise IoFailure(path, exc) from exc


def import_review(path: str | Path) -> dict[str, list[EntitySpan]]:
    """Re-ingest a reviewed file, honoring keep / drop / retype:<T> verdicts.

    Unedited (empty) verdicts count as keep. A kept span reproduces the
    exported record; a retyped span carries the new type and is marked as a
    manual detection.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(path, exc) from exc
    if not lines:
        raise MalformedRecord(0, "review file is empty (missing header)")
    header = json.loads(lines[0])
    if header.get("review_version") != REVIEW_VERSION:
        raise MalformedRecord(1, "missing or unsupported review header")
    out: dict[str, list[EntitySpan]] = {}
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            span = EntitySpan(
                doc_id=record["doc_id"],
                start=record["start"],
                end=record["end"],
                surface=record["surface"],
                entity_type=record["entity_type"],
                detector=record.get("detector", DETECTOR_MANUAL),
                confidence=record.get("confidence", 1.0),
            )
            verdict = record.get("verdict", "") or VERDICT_KEEP
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise MalformedRecord(line_no, str(exc)) from exc
        if verdict == VERDICT_DROP:
            continue
        if verdict != VERDICT_KEEP:
            retype = _VERDICT_RETYPE_RE.match(verdict)
            if not retype:
                raise MalformedRecord(line_no, f"unknown verdict {verdict!r}")
            new_type = retype.group(1)
            if new_type not in ENTITY_TYPES:
                raise MalformedRecord(line_no, f"unknown retype target {new_type!r}")
            span = replace(span, entity_type=new_type, detector=DETECTOR_MANUAL)
        out.setdefault(span.doc_id, []).append(span)
    return out
