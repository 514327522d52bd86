"""Weighted entity-association graph and k-tuple generation.

Entities become nodes; an LLM scores each scheduled pair in [0, 1] from its
causal, dependency, and indirect-association reading of the context. Edges
below the pruning threshold are dropped (strictly below: a score equal to
the threshold survives) and each remaining node contributes one tuple per k:
itself plus its k-1 strongest neighbors.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path

from .backends import ChatRequest
from .corpus import Corpus
from .crypto import canonicalize
from .errors import DanglingEdge, IoFailure, ScoreParseFailure

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EntityNode:
    entity_id: str
    entity_type: str = "OTHER"
    mention_count: int = 1
    doc_refs: tuple[str, ...] = ()

    def __post_init__(self):
        if self.mention_count < 1:
            raise ValueError("mention_count must be >= 1")
        object.__setattr__(self, "doc_refs", tuple(self.doc_refs))


@dataclass(frozen=True)
class WeightedEdge:
    """Undirected scored edge, stored once with endpoints in sorted order."""

    a: str
    b: str
    score: float
    rationale_text: str = ""

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError("self-edges are not allowed")
        if self.a > self.b:
            a, b = self.b, self.a
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)
        if not 0.0 <= self.score <= 1.0:
            raise ValueError("score must be in [0, 1]")

    def other(self, entity_id: str) -> str:
        return self.b if entity_id == self.a else self.a


@dataclass(frozen=True)
class EntityGraph:
    nodes: tuple[EntityNode, ...]
    edges: tuple[WeightedEdge, ...]
    threshold: float = 0.5

    @property
    def n(self) -> int:
        return len(self.nodes)

    def neighbors(self, entity_id: str) -> list[tuple[str, float]]:
        out = []
        for edge in self.edges:
            if entity_id in (edge.a, edge.b):
                out.append((edge.other(entity_id), edge.score))
        return out


@dataclass(frozen=True)
class EntityTuple:
    """A center entity plus its k-1 strongest neighbors, center first."""

    members: tuple[str, ...]

    def __post_init__(self):
        if len(self.members) < 2:
            raise ValueError("tuples need at least 2 members")
        if len(set(self.members)) != len(self.members):
            raise ValueError("tuple members must be distinct")
        object.__setattr__(self, "members", tuple(self.members))

    @property
    def center(self) -> str:
        return self.members[0]

    @property
    def k(self) -> int:
        return len(self.members)


_ENTITY_LINE_RE = re.compile(
    r"^\s*(?:[-*•]\s+|\d+[.)]\s+)?(?P<surface>.+?)(?:\s*::\s*(?P<type>\w+))?\s*$"
)


def extract_entities(
    corpus: Corpus,
    spans_by_doc: dict[str, list],
    llm=None,
    prompt_template: str | None = None,
    casefold: bool = False,
) -> list[EntityNode]:
    """Union of span-derived and LLM-proposed entities, deduplicated by
    canonical form; nodes carry mention counts and document references."""
    mentions: dict[str, dict] = {}

    def add(surface: str, entity_type: str, doc_id: str):
        canonical = canonicalize(surface, casefold=casefold)
        if not canonical:
            return
        slot = mentions.setdefault(
            canonical, {"type": entity_type, "count": 0, "docs": []}
        )
        slot["count"] += 1
        if doc_id not in slot["docs"]:
            slot["docs"].append(doc_id)

    for doc in corpus:
        for span in spans_by_doc.get(doc.doc_id, []):
            add(span.surface, span.entity_type, doc.doc_id)

    if llm is not None and prompt_template is not None:
        from .synthesis import render_template

        for doc in corpus:
            prompt = render_template(
                prompt_template, context=doc.text, title=doc.doc_id
            )
            response = llm.chat(ChatRequest.user(prompt, tag=f"extract:{doc.doc_id}"))
            proposed_here: set[str] = set()
            for line in response.splitlines():
                line = line.strip()
                if not line:
                    continue
                match = _ENTITY_LINE_RE.match(line)
                if not match:
                    continue
                surface = match.group("surface").strip()
                entity_type = (match.group("type") or "OTHER").upper()
                canonical = canonicalize(surface, casefold=casefold)
                if canonical and canonical not in proposed_here:
                    proposed_here.add(canonical)
                    add(surface, entity_type, doc.doc_id)

    nodes = [
        EntityNode(
            entity_id=canonical,
            entity_type=info["type"],
            mention_count=info["count"],
            doc_refs=tuple(info["docs"]),
        )
        for canonical, info in mentions.items()
    ]
    nodes.sort(key=lambda n: n.entity_id)
    return nodes


_SCORE_LINE_RE = re.compile(r"^[\s#>*`_-]*\**score\**\s*[:：]", re.IGNORECASE)
_NUMBER_RE = re.compile(r"[-+]?\d+(?:\.\d+)?|[-+]?\.\d+")


def parse_score(response: str) -> float:
    """Extract the score from the last ``Score:`` line, clamped to [0, 1]."""
    value: float | None = None
    for line in response.splitlines():
        if _SCORE_LINE_RE.match(line):
            remainder = re.split(r"[:：]", line, maxsplit=1)[-1]
            number = _NUMBER_RE.search(remainder)
            if number:
                value = float(number.group(0))
    if value is None:
        raise ScoreParseFailure(response)
    clamped = min(1.0, max(0.0, value))
    if clamped != value:
        logger.warning("association score %s out of range, clamped to %s", value, clamped)
    return clamped


def score_pair(
    a: EntityNode,
    b: EntityNode,
    context: str,
    llm,
    prompt_template: str,
    title: str = "",
    retries: int = 1,
) -> WeightedEdge:
    """Ask the backend for an association strength; one retry, then failure.

    Scores outside [0, 1] are clamped with a warning rather than invented.
    """
    from .synthesis import render_template

    prompt = render_template(
        prompt_template, e1=a.entity_id, e2=b.entity_id, context=context, title=title
    )
    last_response = ""
    for attempt in range(retries + 1):
        response = llm.chat(
            ChatRequest.user(prompt, tag=f"score:{a.entity_id}|{b.entity_id}|{attempt}")
        )
        last_response = response
        try:
            score = parse_score(response)
        except ScoreParseFailure:
            continue
        return WeightedEdge(
            a=a.entity_id, b=b.entity_id, score=score, rationale_text=response
        )
    raise ScoreParseFailure(last_response)


def build_graph(
    nodes: list[EntityNode], edges: list[WeightedEdge], threshold: float = 0.5
) -> EntityGraph:
    """Prune edges scoring strictly below the threshold."""
    known = {n.entity_id for n in nodes}
    for edge in edges:
        if edge.a not in known or edge.b not in known:
            raise DanglingEdge(edge)
    surviving = tuple(
        sorted(
            (e for e in edges if e.score >= threshold),
            key=lambda e: (e.a, e.b),
        )
    )
    ordered_nodes = tuple(sorted(nodes, key=lambda n: n.entity_id))
    return EntityGraph(nodes=ordered_nodes, edges=surviving, threshold=threshold)


@dataclass(frozen=True)
class TupleResult:
    tuples: tuple[EntityTuple, ...]
    skipped: int = 0


def k_tuples(graph: EntityGraph, k: int) -> TupleResult:
    """One tuple per node with enough neighbors: the node plus its k-1
    top-scoring neighbors (ties by entity id); set-level duplicates dropped,
    first emission wins; output sorted by center id."""
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > graph.n:
        raise ValueError(f"k={k} exceeds node count {graph.n}")
    tuples: list[EntityTuple] = []
    seen_sets: set[frozenset] = set()
    skipped = 0
    for node in sorted(graph.nodes, key=lambda n: n.entity_id):
        neighbors = graph.neighbors(node.entity_id)
        if len(neighbors) < k - 1:
            skipped += 1
            continue
        neighbors.sort(key=lambda pair: (-pair[1], pair[0]))
        members = (node.entity_id,) + tuple(nid for nid, _ in neighbors[: k - 1])
        key = frozenset(members)
        if key in seen_sets:
            continue
        seen_sets.add(key)
        tuples.append(EntityTuple(members=members))
    return TupleResult(tuples=tuple(tuples), skipped=skipped)


def pair_schedule(nodes: list[EntityNode], budget: int) -> list[tuple[str, str]]:
    """All node pairs ordered by descending mention-count product, truncated
    to the budget; deterministic via lexicographic tie-breaks."""
    if budget < 0:
        raise ValueError("budget must be >= 0")
    counts = {n.entity_id: n.mention_count for n in nodes}
    ids = sorted(counts)
    pairs = [
        (ids[i], ids[j])
        for i in range(len(ids))
        for j in range(i + 1, len(ids))
    ]
    pairs.sort(key=lambda p: (-(counts[p[0]] * counts[p[1]]), p[0], p[1]))
    return pairs[:budget]


def save_graph(graph: EntityGraph, path: str | Path) -> None:
    """Persist as JSONL: node records first, then edge records."""
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as handle:
            meta = {"kind": "graph", "threshold": graph.threshold, "n": graph.n}
            handle.write(json.dumps(meta, ensure_ascii=False, sort_keys=True) + "\n")
            for node in graph.nodes:
                record = {
                    "kind": "node",
                    "entity_id": node.entity_id,
                    "entity_type": node.entity_type,
                    "mention_count": node.mention_count,
                    "doc_refs": list(node.doc_refs),
                }
                handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
            for edge in graph.edges:
                record = {
                    "kind": "edge",
                    "a": edge.a,
                    "b": edge.b,
                    "score": edge.score,
                    "rationale_text": edge.rationale_text,
                }
                handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(path, exc) from exc


def load_graph(path: str | Path) -> EntityGraph:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(path, exc) from exc
    threshold = 0.5
    nodes: list[EntityNode] = []
    edges: list[WeightedEdge] = []
    for line in lines:
        if not line.strip():
            continue
        record = json.loads(line)
        kind = record.get("kind")
        if kind == "graph":
            threshold = float(record["threshold"])
        elif kind == "node":
            nodes.append(
                EntityNode(
                    entity_id=record["entity_id"],
                    entity_type=record["entity_type"],
                    mention_count=record["mention_count"],
                    doc_refs=tuple(record["doc_refs"]),
                )
            )
        elif kind == "edge":
            edges.append(
                WeightedEdge(
                    a=record["a"],
                    b=record["b"],
                    score=record["score"],
                    rationale_text=record.get("rationale_text", ""),
                )
            )
    return build_graph(nodes, edges, threshold)


def save_tuples(result: TupleResult, path: str | Path) -> None:
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as handle:
            for item in result.tuples:
                record = {"members": list(item.members), "k": item.k}
                handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(path, exc) from exc


def load_tuples(path: str | Path) -> list[EntityTuple]:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise IoFailure(path, exc) from exc
    return [
        EntityTuple(members=tuple(json.loads(line)["members"]))
        for line in lines
        if line.strip()
    ]
