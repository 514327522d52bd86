"""Privacy audits over synthetic corpora and model responses.

Two measurements: the leakage ratio (unencrypted PII occurrences vs cipher
token occurrences in synthetic text) and the hallucination taxonomy for
cipher tokens cited in responses (correct citation, decodable-but-foreign
FCAOA, or non-decodable FCND with a technical sub-cause).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Corpus
from .crypto import (
    STATUS_FAIL_BASE64,
    STATUS_OK,
    STATUS_OK_REPAIRED,
    KeyMaterial,
    canonicalize,
    decrypt_token,
    parse_cipher_tokens,
)
from .errors import IoFailure, MissingArticleKey
from .pii import EntitySpan, RecognizerSet

CLASS_CORRECT = "correct"
CLASS_FCAOA = "FCAOA"
CLASS_FCND = "FCND"

FCND_BASE64 = "base64_format"
FCND_PKCS7 = "pkcs7_padding"
FCND_NOT_IN_INVENTORY = "not_in_inventory"


@dataclass(frozen=True)
class InventoryEntry:
    surface: str
    entity_type: str
    source_doc_id: str = ""


@dataclass(frozen=True)
class PlaintextInventory:
    """Known plaintext PII surfaces, canonicalized like the encryptor."""

    entries: tuple[InventoryEntry, ...]
    casefold: bool = False

    def __post_init__(self):
        canonical = tuple(
            InventoryEntry(
                surface=canonicalize(e.surface, casefold=self.casefold),
                entity_type=e.entity_type,
                source_doc_id=e.source_doc_id,
            )
            for e in self.entries
            if canonicalize(e.surface, casefold=self.casefold)
        )
        object.__setattr__(self, "entries", canonical)

    def __len__(self) -> int:
        return len(self.entries)

    def per_type_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for entry in self.entries:
            counts[entry.entity_type] = counts.get(entry.entity_type, 0) + 1
        return counts

    def unique_surfaces(self) -> list[tuple[str, str]]:
        seen: dict[str, str] = {}
        for entry in self.entries:
            seen.setdefault(entry.surface, entry.entity_type)
        return sorted(seen.items())

    @classmethod
    def from_spans(cls, spans_by_doc: dict[str, list[EntitySpan]], casefold: bool = False):
        entries = [
            InventoryEntry(span.surface, span.entity_type, span.doc_id)
            for spans in spans_by_doc.values()
            for span in spans
        ]
        return cls(entries=tuple(entries), casefold=casefold)

    def save(self, path: str | Path) -> None:
        path = Path(path)
        try:
            with path.open("w", encoding="utf-8") as handle:
                for entry in self.entries:
                    record = {
                        "surface": entry.surface,
                        "entity_type": entry.entity_type,
                        "source_doc_id": entry.source_doc_id,
                    }
                    handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
        except OSError as exc:
            raise IoFailure(path, exc) from exc

    @classmethod
    def load(cls, path: str | Path, casefold: bool = False) -> "PlaintextInventory":
        path = Path(path)
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise IoFailure(path, exc) from exc
        entries = []
        for line in lines:
            if not line.strip():
                continue
            record = json.loads(line)
            entries.append(
                InventoryEntry(
                    surface=record["surface"],
                    entity_type=record["entity_type"],
                    source_doc_id=record.get("source_doc_id", ""),
                )
            )
        return cls(entries=tuple(entries), casefold=casefold)


@dataclass(frozen=True)
class TypeLeakage:
    unencrypted_count: int
    encrypted_count: int

    @property
    def ratio(self) -> float | None:
        if self.encrypted_count == 0:
            return None
        return self.unencrypted_count / self.encrypted_count


@dataclass(frozen=True)
class LeakageReport:
    per_type: dict[str, TypeLeakage]
    total_unencrypted: int
    total_encrypted: int
    per_doc_samples: tuple[tuple[str, int, int], ...]
    structured_recheck: dict[str, int] = field(default_factory=dict)

    @property
    def total_ratio(self) -> float | None:
        if self.total_encrypted == 0:
            return None
        return self.total_unencrypted / self.total_encrypted

    def to_json(self) -> str:
        payload = {
            "per_type": {
                t: {
                    "unencrypted_count": v.unencrypted_count,
                    "encrypted_count": v.encrypted_count,
                    "ratio": v.ratio,
                }
                for t, v in sorted(self.per_type.items())
            },
            "total_unencrypted": self.total_unencrypted,
            "total_encrypted": self.total_encrypted,
            "total_ratio": self.total_ratio,
            "per_doc_samples": [list(s) for s in self.per_doc_samples],
            "structured_recheck": dict(sorted(self.structured_recheck.items())),
        }
        return json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "LeakageReport":
        payload = json.loads(text)
        return cls(
            per_type={
                t: TypeLeakage(v["unencrypted_count"], v["encrypted_count"])
                for t, v in payload["per_type"].items()
            },
            total_unencrypted=payload["total_unencrypted"],
            total_encrypted=payload["total_encrypted"],
            per_doc_samples=tuple(tuple(s) for s in payload["per_doc_samples"]),
            structured_recheck=dict(payload.get("structured_recheck", {})),
        )


def _mask_tokens(text: str) -> tuple[str, list]:
    """Replace token spans with NULs so surface search skips payload bytes."""
    parsed = parse_cipher_tokens(text)
    pieces = []
    cursor = 0
    for item in parsed:
        pieces.append(text[cursor : item.start])
        pieces.append("\x00" * (item.end - item.start))
        cursor = item.end
    pieces.append(text[cursor:])
    return "".join(pieces), parsed


def leakage_report(
    synthetic: Corpus,
    inventory: PlaintextInventory,
    recheck_recognizers: RecognizerSet | None = None,
) -> LeakageReport:
    """Count cipher tokens vs residual plaintext PII in a synthetic corpus.

    Encrypted counts come from grammar-matched tokens per type; unencrypted
    counts from exact canonical-substring search outside token spans. When a
    recognizer set is supplied, structured patterns are re-run over the
    masked text so "zero structured leaks" is verified rather than assumed.
    """
    if not len(inventory):
        raise ValueError("inventory must be non-empty")
    surfaces = inventory.unique_surfaces()
    per_type_unenc: dict[str, int] = {}
    per_type_enc: dict[str, int] = {}
    per_doc: list[tuple[str, int, int]] = []
    recheck: dict[str, int] = {}

    for doc in synthetic:
        masked, parsed = _mask_tokens(doc.text)
        if inventory.casefold:
            masked = masked.casefold()
        doc_enc = 0
        for item in parsed:
            per_type_enc[item.token.entity_type] = (
                per_type_enc.get(item.token.entity_type, 0) + 1
            )
            doc_enc += 1
        doc_unenc = 0
        for surface, entity_type in surfaces:
            hits = masked.count(surface)
            if hits:
                per_type_unenc[entity_type] = per_type_unenc.get(entity_type, 0) + hits
                doc_unenc += hits
        if recheck_recognizers is not None:
            for rec in recheck_recognizers.recognizers:
                for _ in rec.matches(masked):
                    recheck[rec.entity_type] = recheck.get(rec.entity_type, 0) + 1
        per_doc.append((doc.doc_id, doc_unenc, doc_enc))

    all_types = sorted(set(per_type_unenc) | set(per_type_enc))
    per_type = {
        t: TypeLeakage(per_type_unenc.get(t, 0), per_type_enc.get(t, 0)) for t in all_types
    }
    return LeakageReport(
        per_type=per_type,
        total_unencrypted=sum(per_type_unenc.values()),
        total_encrypted=sum(per_type_enc.values()),
        per_doc_samples=tuple(per_doc),
        structured_recheck=recheck,
    )


@dataclass(frozen=True)
class CipherInventory:
    """Cipher payloads appearing in synthetic data, grouped by article."""

    by_article: dict[str, frozenset[str]]

    def articles(self) -> list[str]:
        return sorted(self.by_article)

    def article_of(self, payload: str, exclude: str | None = None) -> str | None:
        for article in self.articles():
            if article == exclude:
                continue
            if payload in self.by_article[article]:
                return article
        return None


def build_cipher_inventory(synthetic: Corpus, group_by: str = "article_id") -> CipherInventory:
    """Group token payloads by the article key in meta or parent linkage."""
    grouped: dict[str, set[str]] = {}
    for doc in synthetic:
        if group_by in doc.meta and doc.meta[group_by]:
            article = doc.meta[group_by]
        elif group_by == "parent_id" and doc.parent_ids:
            article = doc.parent_ids[0]
        else:
            raise MissingArticleKey(doc.doc_id, group_by)
        bucket = grouped.setdefault(article, set())
        for item in parse_cipher_tokens(doc.text):
            bucket.add(item.token.payload_b64)
    return CipherInventory(by_article={k: frozenset(v) for k, v in grouped.items()})


@dataclass(frozen=True)
class HallucinationReport:
    unique_failures: int
    unique_ciphers: int
    total_failures: int
    total_ciphers: int
    class_counts: dict[str, int]
    fcnd_causes: dict[str, int]

    @property
    def unique_ratio(self) -> float:
        return self.unique_failures / self.unique_ciphers if self.unique_ciphers else 0.0

    @property
    def total_ratio(self) -> float:
        return self.total_failures / self.total_ciphers if self.total_ciphers else 0.0

    def to_json(self) -> str:
        payload = {
            "unique_failures": self.unique_failures,
            "unique_ciphers": self.unique_ciphers,
            "unique_ratio": self.unique_ratio,
            "total_failures": self.total_failures,
            "total_ciphers": self.total_ciphers,
            "total_ratio": self.total_ratio,
            "class_counts": dict(sorted(self.class_counts.items())),
            "fcnd_causes": dict(sorted(self.fcnd_causes.items())),
        }
        return json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "HallucinationReport":
        payload = json.loads(text)
        return cls(
            unique_failures=payload["unique_failures"],
            unique_ciphers=payload["unique_ciphers"],
            total_failures=payload["total_failures"],
            total_ciphers=payload["total_ciphers"],
            class_counts=dict(payload["class_counts"]),
            fcnd_causes=dict(payload["fcnd_causes"]),
        )


def classify_token(payload: str, article_id: str, inventory: CipherInventory, key: KeyMaterial):
    """Classify one cited payload: correct, FCAOA, or FCND(+sub-cause)."""
    if payload in inventory.by_article.get(article_id, frozenset()):
        return CLASS_CORRECT, None
    from .crypto import CipherToken

    outcome = decrypt_token(CipherToken(entity_type="OTHER", payload_b64=payload), key)
    foreign = inventory.article_of(payload, exclude=article_id)
    if foreign is not None and outcome.status in (STATUS_OK, STATUS_OK_REPAIRED):
        return CLASS_FCAOA, None
    if outcome.status in (STATUS_OK, STATUS_OK_REPAIRED):
        return CLASS_FCND, FCND_NOT_IN_INVENTORY
    if outcome.status == STATUS_FAIL_BASE64:
        return CLASS_FCND, FCND_BASE64
    return CLASS_FCND, FCND_PKCS7


def hallucination_report(
    responses: list[tuple[str, str]],
    inventory: CipherInventory,
    key: KeyMaterial,
) -> HallucinationReport:
    """Audit cipher citations in (article_id, response_text) pairs.

    Every parsed token is exactly one of correct / FCAOA / FCND; FCND carries
    a sub-cause (base64 alignment, block padding, or decodable but absent
    from the synthesized inventory).
    """
    for article_id, _ in responses:
        if article_id not in inventory.by_article:
            raise MissingArticleKey(article_id, "responses")
    class_counts = {CLASS_CORRECT: 0, CLASS_FCAOA: 0, CLASS_FCND: 0}
    fcnd_causes = {FCND_BASE64: 0, FCND_PKCS7: 0, FCND_NOT_IN_INVENTORY: 0}
    total = 0
    unique_seen: dict[str, str] = {}

    for article_id, text in responses:
        for item in parse_cipher_tokens(text):
            payload = item.token.payload_b64
            cls_label, cause = classify_token(payload, article_id, inventory, key)
            total += 1
            class_counts[cls_label] += 1
            if cause is not None:
                fcnd_causes[cause] += 1
            if payload not in unique_seen or cls_label != CLASS_CORRECT:
                unique_seen[payload] = cls_label

    unique_ciphers = len(unique_seen)
    unique_failures = sum(1 for label in unique_seen.values() if label != CLASS_CORRECT)
    total_failures = class_counts[CLASS_FCAOA] + class_counts[CLASS_FCND]
    return HallucinationReport(
        unique_failures=unique_failures,
        unique_ciphers=unique_ciphers,
        total_failures=total_failures,
        total_ciphers=total,
        class_counts=class_counts,
        fcnd_causes=fcnd_causes,
    )
