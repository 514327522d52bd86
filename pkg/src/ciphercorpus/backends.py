"""LLM backend clients: chat, embedding, and reranking.

The HTTP implementation speaks the OpenAI-compatible JSON wire format (chat
completions and embeddings; reranking uses the query/documents POST shape
most rerank services expose). Endpoint and model names are configuration,
never code. The mock implementations are pure functions of their inputs so
pipeline runs are byte-reproducible offline.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .errors import AuthFailure, DimMismatch, Exhausted, Transport

API_KEY_ENV = "CIPHERCORPUS_API_KEY"
BASE_URL_ENV = "CIPHERCORPUS_BASE_URL"


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[tuple[str, str], ...]
    sampling: dict = field(default_factory=dict)
    tag: str = ""

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        object.__setattr__(self, "messages", tuple(tuple(m) for m in self.messages))

    @classmethod
    def user(cls, content: str, tag: str = "", **sampling) -> "ChatRequest":
        return cls(messages=(("user", content),), sampling=sampling, tag=tag)

    @property
    def joined_content(self) -> str:
        return "\n".join(content for _, content in self.messages)


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.values)


class AuditLog:
    """Append-only JSONL trail of backend calls, with secrets scrubbed."""

    def __init__(self, path: str | Path | None, secrets: list[str] | None = None):
        self._path = Path(path) if path else None
        self._secrets = [s for s in (secrets or []) if s]
        self._lock = threading.Lock()

    def _scrub(self, text: str) -> str:
        for secret in self._secrets:
            text = text.replace(secret, "[REDACTED]")
        return text

    def record(self, kind: str, tag: str, request: dict, response: str) -> None:
        if self._path is None:
            return
        entry = {
            "kind": kind,
            "tag": tag,
            "request": request,
            "response": response,
        }
        line = self._scrub(json.dumps(entry, ensure_ascii=False, sort_keys=True))
        with self._lock:
            with self._path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")


class _RateLimiter:
    """Bounds concurrent in-flight calls and paces request starts."""

    def __init__(self, max_in_flight: int = 4, per_minute: int = 0):
        self._sem = threading.Semaphore(max_in_flight)
        self._interval = 60.0 / per_minute if per_minute > 0 else 0.0
        self._lock = threading.Lock()
        self._next_start = 0.0

    def __enter__(self):
        self._sem.acquire()
        if self._interval:
            with self._lock:
                now = time.monotonic()
                wait = self._next_start - now
                self._next_start = max(now, self._next_start) + self._interval
            if wait > 0:
                time.sleep(wait)
        return self

    def __exit__(self, *exc_info):
        self._sem.release()


_TRANSIENT_STATUS = {429, 500, 502, 503, 504}


class HttpBackend:
    """Shared HTTP plumbing: auth, retry with exponential backoff, audit."""

    def __init__(
        self,
        base_url: str | None = None,
        api_key: str | None = None,
        model: str = "",
        max_attempts: int = 3,
        backoff_base: float = 0.5,
        timeout: float = 60.0,
        max_in_flight: int = 4,
        per_minute: int = 0,
        audit_log: AuditLog | None = None,
        default_sampling: dict | None = None,
        post=None,
    ):
        self.base_url = (base_url or os.environ.get(BASE_URL_ENV, "")).rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.model = model
        self.max_attempts = max_attempts
        self.backoff_base = backoff_base
        self.timeout = timeout
        self.audit = audit_log or AuditLog(None)
        self.default_sampling = dict(default_sampling or {})
        self._limiter = _RateLimiter(max_in_flight, per_minute)
        self._post = post or self._requests_post

    def _requests_post(self, url: str, body: dict) -> tuple[int, dict]:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        resp = requests.post(url, json=body, headers=headers, timeout=self.timeout)
        try:
            payload = resp.json()
        except ValueError:
            payload = {}
        return resp.status_code, payload

    def post_json(self, path: str, body: dict) -> dict:
        """POST with retries on transient transport failures."""
        url = f"{self.base_url}{path}"
        last_detail = ""
        for attempt in range(self.max_attempts):
            if attempt:
                time.sleep(self.backoff_base * (2 ** (attempt - 1)))
            try:
                with self._limiter:
                    status, payload = self._post(url, body)
            except Exception as exc:  # connection-level failure: retryable
                last_detail = str(exc)
                continue
            if status in (401, 403):
                raise AuthFailure(f"backend returned HTTP {status}")
            if status in _TRANSIENT_STATUS:
                last_detail = f"HTTP {status}"
                continue
            if status >= 400:
                raise Transport(status, str(payload)[:200])
            return payload
        raise Exhausted(self.max_attempts) from Transport("transport", last_detail)


class HttpChatBackend(HttpBackend):
    """OpenAI-compatible chat completions endpoint."""

    def chat(self, req: ChatRequest) -> str:
        body = {
            "model": self.model,
            "messages": [{"role": r, "content": c} for r, c in req.messages],
        }
        body.update(self.default_sampling)
        body.update(req.sampling)
        payload = self.post_json("/chat/completions", body)
        try:
            text = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise Transport("schema", f"unexpected completion payload: {exc}") from exc
        self.audit.record(
            "chat", req.tag, {"model": self.model, "messages": list(req.messages)}, text
        )
        return text


class HttpEmbedBackend(HttpBackend):
    """OpenAI-compatible embeddings endpoint."""

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        if not texts:
            raise ValueError("texts must be non-empty")
        payload = self.post_json("/embeddings", {"model": self.model, "input": list(texts)})
        try:
            rows = sorted(payload["data"], key=lambda r: r["index"])
            vectors = [EmbeddingVector(tuple(float(x) for x in r["embedding"])) for r in rows]
        except (KeyError, TypeError) as exc:
            raise Transport("schema", f"unexpected embedding payload: {exc}") from exc
        dims = {v.dim for v in vectors}
        if len(dims) > 1:
            raise DimMismatch(vectors[0].dim, vectors[-1].dim)
        return vectors


class HttpRerankBackend(HttpBackend):
    """Generic rerank endpoint: query + documents in, scored indices out."""

    def rerank(self, query: str, chunks: list[str], top_k: int) -> list[tuple[int, float]]:
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        body = {"model": self.model, "query": query, "documents": list(chunks), "top_n": top_k}
        payload = self.post_json("/rerank", body)
        try:
            results = [(int(r["index"]), float(r["relevance_score"])) for r in payload["results"]]
        except (KeyError, TypeError) as exc:
            raise Transport("schema", f"unexpected rerank payload: {exc}") from exc
        return results[:top_k]


def _stable_hash(*parts: str) -> int:
    digest = hashlib.sha256("\x1f".join(parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


class MockChatBackend:
    """Scripted chat mock: answers from a fixture table or a callable."""

    def __init__(self, table: dict[str, str] | None = None, fn=None, default: str = ""):
        self._table = dict(table or {})
        self._fn = fn
        self._default = default
        self.calls: list[ChatRequest] = []

    def chat(self, req: ChatRequest) -> str:
        self.calls.append(req)
        content = req.joined_content
        if content in self._table:
            return self._table[content]
        if self._fn is not None:
            return self._fn(req)
        return self._default


class SynthMockChat:
    """Deterministic offline generator for full pipeline runs.

    Recognizes the shipped prompt templates by their structural lines and
    produces compliant output: entity lists for extraction prompts, a
    rationale ending in a Score line for association prompts, Q/A pairs and
    relation paragraphs that mention every focus entity, and a single letter
    for multiple-choice prompts.
    """

    def __init__(self, seed: int = 0):
        self.seed = seed
        self.calls: list[ChatRequest] = []

    def chat(self, req: ChatRequest) -> str:
        self.calls.append(req)
        prompt = req.joined_content
        if "Entity 1:" in prompt and "Entity 2:" in prompt:
            return self._association(prompt)
        if "one entity per line" in prompt:
            return self._extraction(prompt)
        if "Reply with a single letter" in prompt:
            return self._mcq(prompt)
        if "Focus entities:" in prompt and "\nQ: <question>" in prompt:
            return self._qa(prompt)
        if "Focus entities:" in prompt:
            return self._relation(prompt)
        return "OK"

    def _entities_line(self, prompt: str) -> list[str]:
        for line in prompt.splitlines():
            if line.startswith("Focus entities:"):
                items = line.split(":", 1)[1].strip()
                return [e.strip() for e in items.split(";") if e.strip()]
        return []

    def _association(self, prompt: str) -> str:
        e1 = e2 = ""
        for line in prompt.splitlines():
            if line.startswith("Entity 1:"):
                e1 = line.split(":", 1)[1].strip()
            elif line.startswith("Entity 2:"):
                e2 = line.split(":", 1)[1].strip()
        h = _stable_hash(str(self.seed), "assoc", e1, e2)
        score = 0.30 + (h % 66) / 100.0
        return (
            f"Direct link: {e1} and {e2} appear in the same proceedings.\n"
            f"Dependency runs both ways through shared filings.\n"
            f"Score: {score:.2f}"
        )

    def _extraction(self, prompt: str) -> str:
        from .crypto import parse_cipher_tokens

        context = prompt.split("Context:", 1)[-1]
        lines: list[str] = []
        seen: set[str] = set()
        for item in parse_cipher_tokens(context):
            rendering = item.token.rendering
            if rendering not in seen:
                seen.add(rendering)
                lines.append(f"{rendering} :: {item.token.entity_type}")
        return "\n".join(lines)

    def _mcq(self, prompt: str) -> str:
        h = _stable_hash(str(self.seed), "mcq", prompt)
        return "ABCD"[h % 4]

    def _qa(self, prompt: str) -> str:
        entities = self._entities_line(prompt)
        listing = ", ".join(entities)
        h = _stable_hash(str(self.seed), "qa", *entities)
        return (
            f"Q: What connects {listing} in this case?\n"
            f"A: The records show how {listing} were involved in the same matter; "
            f"their dealings ran through shared case file ref{h % 10_000:04d}."
        )

    def _relation(self, prompt: str) -> str:
        entities = self._entities_line(prompt)
        listing = "; ".join(entities)
        h = _stable_hash(str(self.seed), "rel", *entities)
        first = entities[0] if entities else "the first entity"
        return (
            f"The focus entities {listing} are tied together: {first} anchors the "
            f"chain while the others depend on it through the same proceedings "
            f"(ref{h % 10_000:04d})."
        )


class OracleMcqChat:
    """Answers multiple-choice prompts with the gold label (test oracle)."""

    def __init__(self, gold_by_question: dict[str, str]):
        self._gold = dict(gold_by_question)
        self.calls: list[ChatRequest] = []

    def chat(self, req: ChatRequest) -> str:
        self.calls.append(req)
        content = req.joined_content
        for question, gold in self._gold.items():
            if question in content:
                return gold
        return "?"


class GibberishChat:
    """Never produces a parseable answer letter."""

    def __init__(self, noise: str = "zzz qq xx yy ww vv uu tt ss rr"):
        self._noise = noise
        self.calls: list[ChatRequest] = []

    def chat(self, req: ChatRequest) -> str:
        self.calls.append(req)
        return self._noise


class HashEmbedder:
    """Seeded character-trigram hash embedding; deterministic and offline.

    Empty text maps to the zero vector. Not a semantic model, but shared
    trigrams produce nonzero cosine overlap, which is enough locality for
    retrieval tests.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        self._dim = dim
        self._seed = str(seed)

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, texts: list[str]) -> list[EmbeddingVector]:
        if not texts:
            raise ValueError("texts must be non-empty")
        return [self._one(t) for t in texts]

    def _one(self, text: str) -> EmbeddingVector:
        acc = [0.0] * self._dim
        padded = f"\x02{text}\x03"
        for i in range(len(padded) - 2):
            gram = padded[i : i + 3]
            h = _stable_hash(self._seed, gram)
            idx = h % self._dim
            sign = 1.0 if (h >> 8) % 2 == 0 else -1.0
            acc[idx] += sign
        norm = sum(x * x for x in acc) ** 0.5
        if norm > 0:
            acc = [x / norm for x in acc]
        return EmbeddingVector(tuple(acc))


_WORD_RE = re.compile(r"\S+")
_EDGE_PUNCT = ".,!?;:\"'`。！？，；："


def _overlap_tokens(text: str) -> set[str]:
    # Sentence punctuation stripped from edges so "Ent_[x]?" matches "Ent_[x]".
    out = set()
    for word in _WORD_RE.findall(text):
        word = word.strip(_EDGE_PUNCT)
        if word:
            out.add(word)
    return out


class OverlapReranker:
    """Scores chunks by shared whitespace tokens with the query."""

    def rerank(self, query: str, chunks: list[str], top_k: int) -> list[tuple[int, float]]:
        if top_k < 1:
            raise ValueError("top_k must be >= 1")
        query_tokens = _overlap_tokens(query)
        scored = []
        for idx, chunk in enumerate(chunks):
            overlap = len(query_tokens & _overlap_tokens(chunk))
            scored.append((idx, float(overlap)))
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored[: min(top_k, len(scored))]


class MockSidecarClient:
    """In-process stand-in for the NER/embedding sidecar."""

    def __init__(self, spans_by_text: dict[str, list[dict]] | None = None, dim: int = 64):
        self._spans = dict(spans_by_text or {})
        self._embedder = HashEmbedder(dim=dim)

    def ner(self, text: str, lang: str = "und") -> list[dict]:
        return [dict(s) for s in self._spans.get(text, [])]

    def embed(self, texts: list[str]) -> list[list[float]]:
        return [list(v.values) for v in self._embedder.embed(texts)]

    def health(self) -> dict:
        return {"ner_model": "mock", "embed_model": "mock", "dim": self._embedder.dim}
