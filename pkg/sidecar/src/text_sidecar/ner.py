"""Rule-based named entity recognition over English and Chinese text.

The builtin engine is deliberately lightweight: lexicon lookups plus
capitalization and surname patterns. It exists to provide genuine
out-of-process spans with correct codepoint offsets; swap in a model-backed
engine via --ner-model when one is available on the host.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources


@dataclass(frozen=True)
class Span:
    start: int
    end: int
    surface: str
    entity_type: str
    confidence: float

    def to_dict(self) -> dict:
        return {
            "start": self.start,
            "end": self.end,
            "surface": self.surface,
            "entity_type": self.entity_type,
            "confidence": self.confidence,
        }


def _load_lexicons() -> dict:
    text = resources.files("text_sidecar.data").joinpath("lexicons.json").read_text(
        encoding="utf-8"
    )
    return json.loads(text)


_CAP_RUN_RE = re.compile(r"(?:[A-Z][a-zA-Z'\-]*)(?: [A-Z][a-zA-Z'\-]*)*")
_CJK_RE = re.compile(r"[㐀-䶿一-鿿]")


def _is_cjk_char(ch: str) -> bool:
    return bool(_CJK_RE.match(ch))


class BuiltinNer:
    """Deterministic lexicon/pattern NER for en and zh text."""

    name = "builtin-rules-v1"

    def __init__(self):
        lex = _load_lexicons()
        self._given = set(lex["en_given_names"])
        self._gazetteer = set(lex["en_location_gazetteer"])
        self._loc_suffix = set(lex["en_location_suffixes"])
        self._honorifics = set(lex["en_honorifics"])
        self._stopwords = set(lex["en_stopwords"])
        self._surnames = set(lex["zh_surnames"])
        self._zh_locations = sorted(lex["zh_locations"], key=len, reverse=True)
        self._zh_loc_suffix = set(lex["zh_location_suffixes"])
        self._zh_blacklist = set(lex["zh_name_blacklist"])

    def recognize(self, text: str, lang: str = "und") -> list[Span]:
        spans: list[Span] = []
        spans.extend(self._latin_spans(text))
        spans.extend(self._cjk_spans(text))
        spans = [s for s in spans if text[s.start : s.end] == s.surface]
        spans.sort(key=lambda s: (s.start, -(s.end - s.start)))
        kept: list[Span] = []
        for span in spans:
            if kept and span.start < kept[-1].end:
                continue
            kept.append(span)
        return kept

    # Latin-script rules: capitalized runs classified by lexicon membership,
    # honorific context, and geographic suffixes.
    def _latin_spans(self, text: str) -> list[Span]:
        out: list[Span] = []
        for match in _CAP_RUN_RE.finditer(text):
            start, end = match.start(), match.end()
            tokens = match.group(0).split(" ")
            while tokens and tokens[0] in self._stopwords:
                start += len(tokens[0]) + 1
                tokens = tokens[1:]
            while tokens and tokens[-1] in self._stopwords:
                end -= len(tokens[-1]) + 1
                tokens = tokens[:-1]
            if not tokens:
                continue
            surface = text[start:end]
            before = text[:start].rstrip()
            honorific = before.split(" ")[-1].rstrip(".") if before else ""
            if tokens[-1] in self._loc_suffix or any(t in self._gazetteer for t in tokens):
                out.append(Span(start, end, surface, "LOCATION", 0.85))
            elif honorific in self._honorifics:
                out.append(Span(start, end, surface, "PERSON", 0.9))
            elif tokens[0] in self._given:
                out.append(Span(start, end, surface, "PERSON", 0.85))
            elif len(tokens) >= 2:
                out.append(Span(start, end, surface, "PERSON", 0.6))
        return out

    # CJK rules: gazetteer lookup, administrative suffixes, and surname +
    # one-or-two-character given names cut at function-word characters.
    def _cjk_spans(self, text: str) -> list[Span]:
        out: list[Span] = []
        taken = [False] * len(text)

        for location in self._zh_locations:
            for match in re.finditer(re.escape(location), text):
                if any(taken[match.start() : match.end()]):
                    continue
                out.append(
                    Span(match.start(), match.end(), location, "LOCATION", 0.85)
                )
                for i in range(match.start(), match.end()):
                    taken[i] = True

        suffix_re = re.compile(
            r"[一-鿿]{1,3}[" + "".join(self._zh_loc_suffix) + r"]"
        )
        for match in suffix_re.finditer(text):
            span_chars = match.group(0)
            if any(taken[match.start() : match.end()]):
                continue
            if any(ch in self._zh_blacklist for ch in span_chars[:-1]):
                continue
            out.append(
                Span(match.start(), match.end(), span_chars, "LOCATION", 0.6)
            )
            for i in range(match.start(), match.end()):
                taken[i] = True

        i = 0
        while i < len(text):
            ch = text[i]
            if taken[i] or ch not in self._surnames:
                i += 1
                continue
            given = ""
            for j in range(i + 1, min(i + 3, len(text))):
                nxt = text[j]
                if taken[j] or not _is_cjk_char(nxt) or nxt in self._zh_blacklist:
                    break
                if nxt in self._surnames and len(given) == 1:
                    break  # likely the start of the next name
                given += nxt
            if not given:
                i += 1
                continue
            end = i + 1 + len(given)
            out.append(Span(i, end, text[i:end], "PERSON", 0.7))
            for k in range(i, end):
                taken[k] = True
            i = end
        return out


def load_ner_engine(spec: str = "builtin"):
    """Resolve --ner-model: 'builtin' or 'spacy:<model_name>'."""
    if spec == "builtin":
        return BuiltinNer()
    if spec.startswith("spacy:"):
        return SpacyNer(spec.split(":", 1)[1])
    raise ValueError(f"unknown NER engine {spec!r}")


class SpacyNer:
    """spaCy-backed engine; requires spacy and the named model installed."""

    _LABEL_MAP = {
        "PERSON": "PERSON",
        "PER": "PERSON",
        "GPE": "LOCATION",
        "LOC": "LOCATION",
        "FAC": "LOCATION",
        "ORG": "ORG",
        "DATE": "DATE",
    }

    def __init__(self, model_name: str):
        try:
            import spacy
        except ImportError as exc:
            raise RuntimeError(
                "spacy is not installed; use --ner-model builtin"
            ) from exc
        self._nlp = spacy.load(model_name)
        self.name = f"spacy:{model_name}"

    def recognize(self, text: str, lang: str = "und") -> list[Span]:
        doc = self._nlp(text)
        out = []
        for ent in doc.ents:
            entity_type = self._LABEL_MAP.get(ent.label_, "OTHER")
            out.append(
                Span(ent.start_char, ent.end_char, ent.text, entity_type, 0.8)
            )
        return out
