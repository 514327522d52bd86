"""Retrieval-augmented evaluation: chunking, embed/retrieve/rerank, MCQ scoring.

Chunking prefers paragraph boundaries, then sentence boundaries, then word
and CJK-character boundaries, and never cuts through a cipher-token
rendering. Retrieval is exact cosine search over the whole index (corpora
are desk-scale; reproducibility beats speed), followed by a reranker that
narrows the pool to the final top-k context.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .backends import ChatRequest
from .corpus import Corpus, Document, _is_cjk, approx_tokens
from .crypto import parse_cipher_tokens
from .errors import DimMismatch, IoFailure, MalformedRecord
from .synthesis import load_template, render_template


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    text: str
    approx_token_len: int
    start: int = 0
    end: int = 0


_PARAGRAPH_CUT_RE = re.compile(r"\n{2,}")
_SENTENCE_CUT_RE = re.compile(r"[.!?。！？；;](?:[\"')”’\]]*)\s*")
_WHITESPACE_RE = re.compile(r"\s+")


def _protected_spans(text: str) -> list[tuple[int, int]]:
    return [(item.start, item.end) for item in parse_cipher_tokens(text)]


def _allowed(cut: int, protected: list[tuple[int, int]]) -> bool:
    return not any(s < cut < e for s, e in protected)


def _cuts_for_level(text: str, start: int, end: int, level: int,
                    protected: list[tuple[int, int]]) -> list[int]:
    cuts: set[int] = set()
    segment = text[start:end]
    if level == 0:
        for match in _PARAGRAPH_CUT_RE.finditer(segment):
            cuts.add(start + match.end())
    elif level == 1:
        for match in _SENTENCE_CUT_RE.finditer(segment):
            cuts.add(start + match.end())
    else:
        for match in _WHITESPACE_RE.finditer(segment):
            cuts.add(start + match.end())
        for offset, ch in enumerate(segment):
            if _is_cjk(ch):
                cuts.add(start + offset)
                cuts.add(start + offset + 1)
        for s, e in protected:
            if start < s < end:
                cuts.add(s)
            if start < e < end:
                cuts.add(e)
    return sorted(c for c in cuts if start < c < end and _allowed(c, protected))


def _pack_range(text: str, start: int, end: int, size: int,
                protected: list[tuple[int, int]], level: int = 0) -> list[tuple[int, int]]:
    if approx_tokens(text[start:end]) <= size:
        return [(start, end)]
    if level > 2:
        return [(start, end)]
    cuts = _cuts_for_level(text, start, end, level, protected)
    if not cuts:
        return _pack_range(text, start, end, size, protected, level + 1)
    bounds = [start, *cuts, end]
    fitted: list[tuple[int, int]] = []
    for s, e in zip(bounds, bounds[1:]):
        if s < e:
            fitted.extend(_pack_range(text, s, e, size, protected, level + 1))
    merged: list[tuple[int, int]] = []
    cur_s, cur_e = fitted[0]
    for s, e in fitted[1:]:
        if approx_tokens(text[cur_s:e]) <= size:
            cur_e = e
        else:
            merged.append((cur_s, cur_e))
            cur_s, cur_e = s, e
    merged.append((cur_s, cur_e))
    return merged


def chunk_document(doc: Document, size: int) -> list[Chunk]:
    """Split one document; the chunk texts partition the original exactly."""
    if size < 16:
        raise ValueError("chunk size must be >= 16 tokens")
    if not doc.text:
        return []
    protected = _protected_spans(doc.text)
    ranges = _pack_range(doc.text, 0, len(doc.text), size, protected)
    chunks = []
    for i, (s, e) in enumerate(ranges):
        piece = doc.text[s:e]
        chunks.append(
            Chunk(
                chunk_id=f"{doc.doc_id}#{i:04d}",
                doc_id=doc.doc_id,
                text=piece,
                approx_token_len=approx_tokens(piece),
                start=s,
                end=e,
            )
        )
    return chunks


def chunk_corpus(corpus: Corpus, size: int) -> list[Chunk]:
    chunks: list[Chunk] = []
    for doc in corpus:
        chunks.extend(chunk_document(doc, size))
    return chunks


def tokens_intact(doc_text: str, chunks: list[Chunk]) -> bool:
    """True when every cipher-token span falls inside a single chunk."""
    spans = [(c.start, c.end) for c in chunks]
    for item in parse_cipher_tokens(doc_text):
        if not any(s <= item.start and item.end <= e for s, e in spans):
            return False
    return True


class VectorIndex:
    """Exact cosine-similarity search over chunk embeddings."""

    def __init__(self, chunks: list[Chunk], embedder):
        self._chunks = list(chunks)
        self._embedder = embedder
        if chunks:
            vectors = embedder.embed([c.text for c in chunks])
            dims = {v.dim for v in vectors}
            if len(dims) != 1:
                raise DimMismatch(vectors[0].dim, max(dims))
            matrix = np.array([v.values for v in vectors], dtype=np.float64)
            norms = np.linalg.norm(matrix, axis=1, keepdims=True)
            norms[norms == 0] = 1.0
            self._matrix = matrix / norms
            self._dim = next(iter(dims))
        else:
            self._matrix = np.zeros((0, 0))
            self._dim = 0

    def __len__(self) -> int:
        return len(self._chunks)

    def query(self, text: str, k: int) -> list[tuple[Chunk, float]]:
        if not self._chunks:
            return []
        vector = self._embedder.embed([text])[0]
        if vector.dim != self._dim:
            raise DimMismatch(self._dim, vector.dim)
        qv = np.array(vector.values, dtype=np.float64)
        norm = np.linalg.norm(qv)
        if norm > 0:
            qv = qv / norm
        scores = self._matrix @ qv
        order = np.lexsort((np.arange(len(scores)), -scores))
        return [(self._chunks[i], float(scores[i])) for i in order[:k]]


def build_index(chunks: list[Chunk], embedder) -> VectorIndex:
    return VectorIndex(chunks, embedder)


@dataclass(frozen=True)
class RagConfig:
    chunk_size: int = 1024
    top_k: int = 4
    retrieve_k: int = 0  # 0 means the 4 * top_k default

    def __post_init__(self):
        if self.retrieve_k == 0:
            object.__setattr__(self, "retrieve_k", 4 * self.top_k)
        if not 1 <= self.top_k <= self.retrieve_k:
            raise ValueError("need 1 <= top_k <= retrieve_k")


def retrieve(question: str, index: VectorIndex, cfg: RagConfig, reranker) -> list[Chunk]:
    """Cosine-retrieve a pool of retrieve_k chunks, then rerank to top_k."""
    pool = index.query(question, cfg.retrieve_k)
    if not pool:
        return []
    chunks = [c for c, _ in pool]
    ranked = reranker.rerank(question, [c.text for c in chunks], cfg.top_k)
    return [chunks[idx] for idx, _ in ranked]


@dataclass(frozen=True)
class McqItem:
    question: str
    options: tuple[str, str, str, str]
    gold: str
    encrypted: bool = False

    def __post_init__(self):
        if len(self.options) != 4:
            raise ValueError("exactly four options required")
        if self.gold not in "ABCD" or len(self.gold) != 1:
            raise ValueError("gold must be one of A-D")
        object.__setattr__(self, "options", tuple(self.options))


def load_mcq(path: str | Path) -> list[McqItem]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(path, exc) from exc
    items = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            items.append(
                McqItem(
                    question=record["question"],
                    options=tuple(record["options"]),
                    gold=record["gold"],
                    encrypted=record.get("encrypted", False),
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MalformedRecord(line_no, str(exc)) from exc
    return items


@dataclass(frozen=True)
class FormatFailure:
    """The response never produced a parseable A-D answer."""

    raw: str


_LETTER_RE = re.compile(r"(?<![A-Za-z0-9])([A-D])(?![A-Za-z0-9])")


def parse_answer_letter(response: str):
    """First standalone A-D letter (bare, parenthesized, or 'Answer: X')."""
    match = _LETTER_RE.search(response)
    if match:
        return match.group(1)
    return FormatFailure(raw=response)


def answer_mcq(item: McqItem, context_chunks: list[Chunk], llm, template: str | None = None):
    """Ask for a single letter; anything unparseable is a FormatFailure."""
    if template is None:
        template = load_template("mcq_answer")
    context = "\n\n".join(c.text for c in context_chunks)
    prompt = render_template(
        template,
        context=context,
        question=item.question,
        option_a=item.options[0],
        option_b=item.options[1],
        option_c=item.options[2],
        option_d=item.options[3],
    )
    response = llm.chat(ChatRequest.user(prompt, tag="mcq"))
    return parse_answer_letter(response)


@dataclass(frozen=True)
class EvalResult:
    accuracy: float
    n_items: int
    n_correct: int
    n_format_failures: int
    per_item: tuple[dict, ...]

    def to_json(self) -> str:
        payload = {
            "accuracy": self.accuracy,
            "n_items": self.n_items,
            "n_correct": self.n_correct,
            "n_format_failures": self.n_format_failures,
            "per_item": list(self.per_item),
        }
        return json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalResult":
        payload = json.loads(text)
        return cls(
            accuracy=payload["accuracy"],
            n_items=payload["n_items"],
            n_correct=payload["n_correct"],
            n_format_failures=payload["n_format_failures"],
            per_item=tuple(payload["per_item"]),
        )


def run_eval(
    items: list[McqItem],
    corpus: Corpus,
    cfg: RagConfig,
    chat,
    embedder,
    reranker,
    template: str | None = None,
) -> EvalResult:
    """Full retrieve-and-answer pass; format failures score as incorrect."""
    if not items:
        raise ValueError("eval needs at least one item")
    chunks = chunk_corpus(corpus, cfg.chunk_size)
    index = build_index(chunks, embedder)
    per_item: list[dict] = []
    correct = 0
    failures = 0
    for item in items:
        context = retrieve(item.question, index, cfg, reranker) if len(index) else []
        outcome = answer_mcq(item, context, chat, template=template)
        if isinstance(outcome, FormatFailure):
            failures += 1
            per_item.append(
                {"question": item.question, "gold": item.gold, "chosen": None,
                 "correct": False, "failure": True, "raw": outcome.raw[:200]}
            )
            continue
        is_correct = outcome == item.gold
        correct += int(is_correct)
        per_item.append(
            {"question": item.question, "gold": item.gold, "chosen": outcome,
             "correct": is_correct, "failure": False}
        )
    return EvalResult(
        accuracy=correct / len(items),
        n_items=len(items),
        n_correct=correct,
        n_format_failures=failures,
        per_item=tuple(per_item),
    )


def sweep(
    items: list[McqItem],
    corpus: Corpus,
    chat,
    embedder,
    reranker,
    chunk_sizes=(128, 1024),
    top_ks=(2, 4, 8, 16),
    template: str | None = None,
) -> list[dict]:
    """Grid over chunk sizes and rerank top-k; reports failure counts too."""
    rows = []
    for chunk_size in chunk_sizes:
        for top_k in top_ks:
            cfg = RagConfig(chunk_size=chunk_size, top_k=top_k)
            result = run_eval(items, corpus, cfg, chat, embedder, reranker, template=template)
            rows.append(
                {
                    "chunk_size": chunk_size,
                    "top_k": top_k,
                    "accuracy": result.accuracy,
                    "n_format_failures": result.n_format_failures,
                }
            )
    return rows
