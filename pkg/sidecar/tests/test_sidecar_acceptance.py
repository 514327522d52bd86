"""Sidecar acceptance: protocol conformance, offset integrity, and
mock interchangeability with the main pipeline."""

import json
import random
import string
import subprocess
import sys

from text_sidecar.protocol import validate_response

from ciphercorpus.backends import MockSidecarClient
from ciphercorpus.corpus import Document
from ciphercorpus.crypto import KeyMaterial, rewrite_encrypt
from ciphercorpus.pii import detect_sidecar, merge_spans
from ciphercorpus.sidecar import StdioSidecarClient


def report(name: str) -> None:
    print(f"ACCEPTANCE 10 {name}: PASS", file=sys.stderr, flush=True)


def random_request(rng):
    roll = rng.random()
    alphabet = string.ascii_letters + string.digits + " .,!?张王李伟芳杭州在"
    text = "".join(rng.choices(alphabet, k=rng.randint(0, 120)))
    if roll < 0.4:
        return {"op": "ner", "text": text, "lang": rng.choice(["en", "zh", "und"])}
    if roll < 0.7:
        return {"op": "embed", "texts": [text[i::3] for i in range(rng.randint(1, 4))]}
    if roll < 0.8:
        return {"op": "health"}
    # deliberately malformed shapes
    return rng.choice(
        [
            {"op": "ner"},
            {"op": "embed", "texts": "not-a-list"},
            {"op": "unknown"},
            {"text": "missing op"},
            {"op": "ner", "text": 42},
        ]
    )


def test_schema_conformance_100_randomized_requests(handler):
    rng = random.Random(1010)
    for _ in range(100):
        response = handler.handle(random_request(rng))
        validate_response(response)  # raises on any violation
    report("response schema holds on 100 randomized requests")


def test_offsets_valid_on_bilingual_fixture(handler, bilingual_fixture):
    assert len(bilingual_fixture) == 50
    total = 0
    for sentence in bilingual_fixture:
        response = handler.handle({"op": "ner", "text": sentence})
        validate_response(response)
        for span in response["spans"]:
            assert sentence[span["start"] : span["end"]] == span["surface"]
            total += 1
    assert total >= 50
    report("NER offsets satisfy surface == text[start:end) on 50 sentences")


def test_sidecar_and_mock_interchangeable():
    """The pipeline behaves identically whether spans come from the live
    sidecar subprocess or from the in-process mock primed with them."""
    docs = [
        Document(doc_id="en", text="Alice Miller met Bob near West Lake.", lang="en"),
        Document(doc_id="zh", text="张伟在杭州与李芳会面。", lang="zh"),
    ]
    client = StdioSidecarClient(
        [sys.executable, "-m", "text_sidecar.server", "--transport", "stdio"]
    )
    try:
        live = {d.doc_id: detect_sidecar(d, client) for d in docs}
    finally:
        client.close()

    mock = MockSidecarClient(
        {
            d.text: [
                {
                    "start": s.start,
                    "end": s.end,
                    "surface": s.surface,
                    "entity_type": s.entity_type,
                    "confidence": s.confidence,
                }
                for s in live[d.doc_id].spans
            ]
            for d in docs
        }
    )
    key = KeyMaterial(bytes(range(16)))
    for doc in docs:
        mocked = detect_sidecar(doc, mock)
        assert mocked.spans == live[doc.doc_id].spans
        assert mocked.dropped == live[doc.doc_id].dropped == 0
        merged_live = merge_spans(list(live[doc.doc_id].spans))
        merged_mock = merge_spans(list(mocked.spans))
        assert merged_live == merged_mock
        enc_live, tokens_live = rewrite_encrypt(doc, merged_live, key)
        enc_mock, tokens_mock = rewrite_encrypt(doc, merged_mock, key)
        assert enc_live == enc_mock
        assert tokens_live == tokens_mock
        assert len(tokens_live) >= 2
    report("sidecar and mock are interchangeable through the pipeline")


def test_pipeline_passes_with_live_sidecar(tmp_path):
    """Full pipeline run with the sidecar wired into detect: same stage
    outputs schema, still zero leakage, exit code 0."""
    import shutil
    from pathlib import Path

    from ciphercorpus.cli import main as cli_main

    demo = Path(__file__).parent.parent.parent / "demo"
    for name in ("corpus.jsonl", "recognizers.json", "key.hex", "mcq.jsonl"):
        shutil.copy(demo / name, tmp_path / name)
    config = (demo / "config.toml").read_text(encoding="utf-8")
    sidecar_argv = json.dumps([sys.executable, "-m", "text_sidecar.server", "--transport", "stdio"])
    config = config.replace(
        'recognizers = "recognizers.json"',
        f'recognizers = "recognizers.json"\nsidecar = {sidecar_argv}',
    )
    (tmp_path / "config.toml").write_text(config, encoding="utf-8")
    assert cli_main(["--config", str(tmp_path / "config.toml"), "pipeline"]) == 0
    leakage = json.loads((tmp_path / "out" / "leakage.json").read_text())
    assert leakage["total_unencrypted"] == 0
    assert leakage["total_encrypted"] > 0
    report("pipeline stages pass with the live sidecar in detect")


def test_http_and_stdio_identical_bodies(handler):
    import threading
    import urllib.request

    from text_sidecar.server import serve_http

    server = serve_http(handler, 0)
    port = server.server_address[1]
    threading.Thread(target=server.serve_forever, daemon=True).start()
    rng = random.Random(77)
    try:
        for _ in range(10):
            body = random_request(rng)
            data = json.dumps(body).encode("utf-8")
            req = urllib.request.Request(
                f"http://127.0.0.1:{port}/v1/op",
                data=data,
                headers={"Content-Type": "application/json"},
            )
            over_http = json.loads(urllib.request.urlopen(req, timeout=5).read())
            in_process = handler.handle(body)
            assert over_http == in_process
    finally:
        server.shutdown()
        server.server_close()
    report("HTTP and stdio transports return identical bodies")
