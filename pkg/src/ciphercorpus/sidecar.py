"""Client for the out-of-process NER/embedding sidecar.

The sidecar speaks newline-delimited JSON over stdio (one request object per
line, one response per line) or the same bodies over HTTP POST /v1/op. The
core pipeline runs regex-only when no sidecar is configured; tests use the
in-process mock from backends.py.
"""

from __future__ import annotations

import json
import subprocess
from urllib.parse import urljoin

from .errors import ProtocolViolation, SidecarUnavailable


def _check_response(payload) -> dict:
    if not isinstance(payload, dict):
        raise ProtocolViolation("response is not a JSON object")
    if "ok" not in payload:
        raise ProtocolViolation("response missing 'ok' field")
    if not payload["ok"]:
        raise ProtocolViolation(str(payload.get("error", "unspecified sidecar error")))
    return payload


class SidecarClient:
    """Shared request/response handling; subclasses provide transport."""

    def request(self, body: dict) -> dict:
        raise NotImplementedError

    def ner(self, text: str, lang: str = "und") -> list[dict]:
        payload = self.request({"op": "ner", "text": text, "lang": lang})
        spans = payload.get("spans")
        if not isinstance(spans, list):
            raise ProtocolViolation("ner response missing 'spans' list")
        return spans

    def embed(self, texts: list[str]) -> list[list[float]]:
        payload = self.request({"op": "embed", "texts": list(texts)})
        vectors = payload.get("vectors")
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise ProtocolViolation("embed response has wrong vector count")
        return vectors

    def health(self) -> dict:
        payload = self.request({"op": "health"})
        status = payload.get("status")
        if not isinstance(status, dict):
            raise ProtocolViolation("health response missing 'status' object")
        return status


class StdioSidecarClient(SidecarClient):
    """Talks to a sidecar subprocess over stdin/stdout, one JSON per line."""

    def __init__(self, argv: list[str]):
        self._argv = list(argv)
        self._proc: subprocess.Popen | None = None

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self._argv,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                    encoding="utf-8",
                )
            except OSError as exc:
                raise SidecarUnavailable(f"cannot start sidecar: {exc}") from exc
        return self._proc

    def request(self, body: dict) -> dict:
        proc = self._ensure_proc()
        try:
            proc.stdin.write(json.dumps(body, ensure_ascii=False) + "\n")
            proc.stdin.flush()
            line = proc.stdout.readline()
        except (OSError, BrokenPipeError) as exc:
            raise SidecarUnavailable(f"sidecar pipe broken: {exc}") from exc
        if not line:
            raise SidecarUnavailable("sidecar closed its output stream")
        try:
            payload = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolViolation(f"non-JSON response line: {line[:120]!r}") from exc
        return _check_response(payload)

    def close(self) -> None:
        if self._proc is not None and self._proc.poll() is None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
        self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


class HttpSidecarClient(SidecarClient):
    """Same protocol bodies as stdio, POSTed to <base_url>/v1/op."""

    def __init__(self, base_url: str, timeout: float = 30.0, session=None):
        import requests

        self._url = urljoin(base_url.rstrip("/") + "/", "v1/op")
        self._timeout = timeout
        self._session = session or requests.Session()

    def request(self, body: dict) -> dict:
        import requests

        try:
            resp = self._session.post(self._url, json=body, timeout=self._timeout)
        except requests.RequestException as exc:
            raise SidecarUnavailable(f"sidecar HTTP request failed: {exc}") from exc
        try:
            payload = resp.json()
        except ValueError as exc:
            raise ProtocolViolation("non-JSON HTTP response") from exc
        return _check_response(payload)
