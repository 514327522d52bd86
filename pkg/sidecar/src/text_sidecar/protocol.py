"""Request handling and schema validation shared by both transports.

Every request yields exactly one response. Responses are validated against
the shipped JSON schema before they leave the process; NER spans are
additionally checked for offset integrity (surface == text[start:end)) and
offending spans dropped rather than sent.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema


@lru_cache(maxsize=None)
def _schema(name: str) -> dict:
    text = resources.files("text_sidecar.schemas").joinpath(name).read_text(
        encoding="utf-8"
    )
    return json.loads(text)


def validate_request(payload: dict) -> None:
    jsonschema.validate(payload, _schema("request.schema.json"))


def validate_response(payload: dict) -> None:
    jsonschema.validate(payload, _schema("response.schema.json"))


class RequestHandler:
    def __init__(self, ner_engine, embed_engine):
        self._ner = ner_engine
        self._embed = embed_engine

    def handle(self, payload) -> dict:
        """Map one request object to one response object (never raises)."""
        try:
            if not isinstance(payload, dict):
                return self._error("request must be a JSON object")
            try:
                validate_request(payload)
            except jsonschema.ValidationError as exc:
                return self._error(f"invalid request: {exc.message}")
            op = payload["op"]
            if op == "health":
                response = {
                    "ok": True,
                    "status": {
                        "ner_model": self._ner.name,
                        "embed_model": self._embed.name,
                        "dim": self._embed.dim,
                    },
                }
            elif op == "ner":
                text = payload["text"]
                spans = self._ner.recognize(text, payload.get("lang", "und"))
                valid = [
                    s.to_dict()
                    for s in spans
                    if 0 <= s.start < s.end <= len(text)
                    and text[s.start : s.end] == s.surface
                ]
                response = {"ok": True, "spans": valid}
            else:  # embed
                vectors = self._embed.embed(payload["texts"])
                response = {"ok": True, "vectors": vectors, "dim": self._embed.dim}
            validate_response(response)
            return response
        except Exception as exc:  # total: any failure becomes an error response
            return self._error(f"{type(exc).__name__}: {exc}")

    def handle_line(self, line: str) -> str:
        try:
            payload = json.loads(line)
        except json.JSONDecodeError:
            payload = None
            response = self._error("request line is not valid JSON")
            return json.dumps(response, ensure_ascii=False)
        return json.dumps(self.handle(payload), ensure_ascii=False)

    @staticmethod
    def _error(message: str) -> dict:
        response = {"ok": False, "error": message}
        validate_response(response)
        return response
