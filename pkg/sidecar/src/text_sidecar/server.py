"""Sidecar entry point: newline-delimited JSON over stdio or HTTP POST /v1/op."""

from __future__ import annotations

import argparse
import json
import sys
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from .embed import load_embed_engine
from .ner import load_ner_engine
from .protocol import RequestHandler


def serve_stdio(handler: RequestHandler, stdin=None, stdout=None) -> None:
    """One response line per request line until EOF."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        stdout.write(handler.handle_line(line) + "\n")
        stdout.flush()


def serve_http(handler: RequestHandler, port: int) -> ThreadingHTTPServer:
    class Endpoint(BaseHTTPRequestHandler):
        def do_POST(self):
            if self.path != "/v1/op":
                self.send_error(404)
                return
            length = int(self.headers.get("Content-Length", 0))
            body = self.rfile.read(length).decode("utf-8")
            try:
                payload = json.loads(body)
            except json.JSONDecodeError:
                payload = None
            response = handler.handle(payload) if payload is not None else {
                "ok": False,
                "error": "request body is not valid JSON",
            }
            data = json.dumps(response, ensure_ascii=False).encode("utf-8")
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def log_message(self, fmt, *args):
            print(f"[text-sidecar] {fmt % args}", file=sys.stderr)

    server = ThreadingHTTPServer(("127.0.0.1", port), Endpoint)
    return server


def build_handler(ner_model: str, embed_model: str, embed_dim: int) -> RequestHandler:
    return RequestHandler(
        ner_engine=load_ner_engine(ner_model),
        embed_engine=load_embed_engine(embed_model, dim=embed_dim),
    )


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="text-sidecar",
        description="NER and sentence-embedding sidecar (JSON over stdio or HTTP)",
    )
    parser.add_argument("--transport", choices=["stdio", "http"], default="stdio")
    parser.add_argument("--port", type=int, default=8750)
    parser.add_argument("--ner-model", dest="ner_model", default="builtin")
    parser.add_argument("--embed-model", dest="embed_model", default="builtin")
    parser.add_argument("--embed-dim", dest="embed_dim", type=int, default=256)
    args = parser.parse_args(argv)

    try:
        handler = build_handler(args.ner_model, args.embed_model, args.embed_dim)
    except (RuntimeError, ValueError, OSError) as exc:
        print(f"[text-sidecar] engine load failed: {exc}", file=sys.stderr)
        return 1

    if args.transport == "stdio":
        serve_stdio(handler)
        return 0
    server = serve_http(handler, args.port)
    print(f"[text-sidecar] listening on 127.0.0.1:{args.port}", file=sys.stderr)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
