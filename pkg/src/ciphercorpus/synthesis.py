"""Tuple-conditioned synthetic data generation with compliance filtering.

Each entity tuple drives one or more LLM completions (QA pairs or relation
analyses) over its source context. In encrypt-before-synthesis mode the
context is already ciphertext, so generation never sees plaintext PII; the
filter chain enforces that plus template compliance before records become
synthetic documents.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

from .backends import ChatRequest
from .corpus import Corpus, Document, persist
from .crypto import canonicalize, parse_cipher_tokens
from .errors import BackendFailure, EmptyTupleSet, IoFailure
from .graph import EntityTuple

KIND_QA = "qa_pair"
KIND_RELATION = "relation_analysis"

_TEMPLATE_FILES = {
    KIND_QA: "qa_pair.txt",
    KIND_RELATION: "relation_analysis.txt",
    "association_strength": "association_strength.txt",
    "entity_extraction": "entity_extraction.txt",
    "mcq_answer": "mcq_answer.txt",
}


def load_template(name: str, prompt_dir: str | Path | None = None) -> str:
    """Load a prompt template from a directory override or packaged defaults."""
    filename = _TEMPLATE_FILES.get(name, name)
    if prompt_dir is not None:
        candidate = Path(prompt_dir) / filename
        if candidate.exists():
            return candidate.read_text(encoding="utf-8")
    return resources.files("ciphercorpus.prompts").joinpath(filename).read_text(
        encoding="utf-8"
    )


def render_template(template: str, **values: str) -> str:
    """Fill ``{{name}}`` placeholders; unknown placeholders are left alone."""
    out = template
    for key, value in values.items():
        out = out.replace("{{" + key + "}}", str(value))
    return out


@dataclass(frozen=True)
class SynthRecord:
    record_id: str
    kind: str
    tuple: EntityTuple
    text: str
    source_doc_ids: tuple[str, ...] = ()
    backend_meta: dict = field(default_factory=dict)
    accepted: bool = False
    reject_reason: str | None = "unfiltered"

    def __post_init__(self):
        object.__setattr__(self, "source_doc_ids", tuple(self.source_doc_ids))
        if not self.accepted and self.reject_reason is None:
            raise ValueError("rejected records need a reject_reason")
        if self.accepted and self.reject_reason is not None:
            raise ValueError("accepted records cannot carry a reject_reason")


@dataclass(frozen=True)
class SynthPlan:
    budget_tokens: int
    tuples: tuple[EntityTuple, ...]
    per_tuple_records: int

    def __post_init__(self):
        if self.budget_tokens <= 0:
            raise ValueError("budget_tokens must be > 0")
        if self.per_tuple_records < 1:
            raise ValueError("per_tuple_records must be >= 1")
        object.__setattr__(self, "tuples", tuple(self.tuples))


def plan(budget_tokens: int, tuples: list[EntityTuple], avg_record_tokens: int = 300) -> SynthPlan:
    """Spread the token budget across tuples: ceil(budget / (n * estimate))."""
    if avg_record_tokens <= 0:
        raise ValueError("avg_record_tokens must be > 0")
    if not tuples:
        raise EmptyTupleSet("cannot plan synthesis over zero tuples")
    if budget_tokens <= 0:
        raise ValueError("budget_tokens must be > 0")
    per_tuple = math.ceil(budget_tokens / (len(tuples) * avg_record_tokens))
    return SynthPlan(
        budget_tokens=budget_tokens,
        tuples=tuple(tuples),
        per_tuple_records=per_tuple,
    )


def _record_id(kind: str, members: tuple[str, ...], index: int) -> str:
    digest = hashlib.sha256(
        "\x1f".join([kind, *members, str(index)]).encode("utf-8")
    ).hexdigest()
    return f"synth-{digest[:12]}-{index}"


def synth_for_tuple(
    entity_tuple: EntityTuple,
    context_docs: list[Document],
    kind: str,
    llm,
    template: str | None = None,
    n_records: int = 1,
    title: str = "",
) -> list[SynthRecord]:
    """Generate unfiltered records for one tuple over its context documents."""
    if kind not in (KIND_QA, KIND_RELATION):
        raise ValueError(f"unknown synthesis kind {kind!r}")
    if template is None:
        template = load_template(kind)
    context = "\n\n".join(d.text for d in context_docs)
    source_ids = tuple(d.doc_id for d in context_docs)
    prompt = render_template(
        template,
        entities="; ".join(entity_tuple.members),
        context=context,
        title=title or (source_ids[0] if source_ids else ""),
    )
    records: list[SynthRecord] = []
    for index in range(n_records):
        rid = _record_id(kind, entity_tuple.members, index)
        try:
            text = llm.chat(ChatRequest.user(prompt, tag=f"synth:{rid}"))
        except BackendFailure as exc:
            raise BackendFailure(f"tuple {entity_tuple.members}: {exc}") from exc
        records.append(
            SynthRecord(
                record_id=rid,
                kind=kind,
                tuple=entity_tuple,
                text=text,
                source_doc_ids=source_ids,
                backend_meta={"tag": f"synth:{rid}", "sequence": index},
            )
        )
    return records


@dataclass(frozen=True)
class FilterRules:
    """Compliance rules applied to raw generations before acceptance."""

    min_length: int = 20
    question_delimiter: str = "Q:"
    answer_delimiter: str = "A:"
    plaintext_inventory: tuple[str, ...] = ()
    casefold: bool = False

    @classmethod
    def from_file(cls, path: str | Path) -> "FilterRules":
        path = Path(path)
        try:
            spec = json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoFailure(path, exc) from exc
        inventory: list[str] = []
        inv_path = spec.get("inventory_path")
        if inv_path:
            inv_file = Path(inv_path)
            if not inv_file.is_absolute():
                inv_file = path.parent / inv_file
            for line in inv_file.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    inventory.append(json.loads(line)["surface"])
        return cls(
            min_length=spec.get("min_length", 20),
            question_delimiter=spec.get("question_delimiter", "Q:"),
            answer_delimiter=spec.get("answer_delimiter", "A:"),
            plaintext_inventory=tuple(inventory),
            casefold=spec.get("casefold", False),
        )


REJECT_TOO_SHORT = "too_short"
REJECT_NO_QUESTION = "missing_question_segment"
REJECT_NO_ANSWER = "missing_answer_segment"
REJECT_MISSING_MEMBER = "missing_tuple_member"
REJECT_PLAINTEXT_PII = "plaintext_pii"


def _first_violation(record: SynthRecord, rules: FilterRules) -> str | None:
    text = record.text
    if len(text.strip()) < rules.min_length:
        return REJECT_TOO_SHORT
    if record.kind == KIND_QA:
        if rules.question_delimiter not in text:
            return REJECT_NO_QUESTION
        if rules.answer_delimiter not in text.split(rules.question_delimiter, 1)[-1]:
            return REJECT_NO_ANSWER
    for member in record.tuple.members:
        if member not in text:
            return REJECT_MISSING_MEMBER
    if rules.plaintext_inventory:
        masked = _mask_token_spans(text)
        if rules.casefold:
            masked = masked.casefold()
        for surface in rules.plaintext_inventory:
            canonical = canonicalize(surface, casefold=rules.casefold)
            if canonical and canonical in masked:
                return REJECT_PLAINTEXT_PII
    return None


def _mask_token_spans(text: str) -> str:
    """Blank out cipher-token spans so payload bytes can't fake a PII hit."""
    out = []
    cursor = 0
    for item in parse_cipher_tokens(text):
        out.append(text[cursor : item.start])
        out.append("\x00" * (item.end - item.start))
        cursor = item.end
    out.append(text[cursor:])
    return "".join(out)


def filter_records(
    records: list[SynthRecord], rules: FilterRules
) -> tuple[list[SynthRecord], list[SynthRecord]]:
    """Partition records into (kept, rejected); inputs are never mutated."""
    kept: list[SynthRecord] = []
    rejected: list[SynthRecord] = []
    for record in records:
        reason = _first_violation(record, rules)
        if reason is None:
            kept.append(replace(record, accepted=True, reject_reason=None))
        else:
            rejected.append(replace(record, accepted=False, reject_reason=reason))
    return kept, rejected


def emit_corpus(records: list[SynthRecord], path: str | Path | None = None, lang: str = "und") -> Corpus:
    """Turn accepted records into a synthetic corpus, optionally persisted."""
    docs = []
    for record in records:
        if not record.accepted:
            raise ValueError(f"record {record.record_id} was not accepted")
        docs.append(
            Document(
                doc_id=record.record_id,
                text=record.text,
                lang=lang,
                source="synthetic",
                parent_ids=record.source_doc_ids,
                meta={
                    "kind": record.kind,
                    "tuple_center": record.tuple.center,
                    "article_id": record.source_doc_ids[0] if record.source_doc_ids else "",
                },
            )
        )
    corpus = Corpus(documents=tuple(docs))
    if path is not None:
        persist(corpus, path)
    return corpus
