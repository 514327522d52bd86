import json
import shutil
from pathlib import Path

import pytest

from ciphercorpus.cli import main
from ciphercorpus.corpus import ingest
from ciphercorpus.crypto import KeyMaterial, parse_cipher_tokens

DEMO = Path(__file__).parent.parent / "demo"


@pytest.fixture
def workspace(tmp_path):
    """Copy of the demo inputs with the workdir redirected into tmp."""
    for name in ("corpus.jsonl", "recognizers.json", "key.hex", "mcq.jsonl"):
        shutil.copy(DEMO / name, tmp_path / name)
    config = (DEMO / "config.toml").read_text(encoding="utf-8")
    (tmp_path / "config.toml").write_text(config, encoding="utf-8")
    return tmp_path


def run_cli(workspace, *argv):
    return main(["--config", str(workspace / "config.toml"), *argv])


class TestConfigErrors:
    def test_missing_key_file(self, workspace):
        (workspace / "key.hex").unlink()
        code = run_cli(workspace, "encrypt")
        assert code == 2

    def test_missing_config(self, tmp_path):
        assert main(["--config", str(tmp_path / "nope.toml"), "detect"]) == 2

    def test_corrupt_key_file(self, workspace):
        run_cli(workspace, "detect")
        (workspace / "key.hex").write_text("zz not hex zz\n")
        assert run_cli(workspace, "encrypt") == 2

    def test_bad_threshold(self, workspace):
        config = (workspace / "config.toml").read_text()
        config = config.replace("threshold = 0.5", "threshold = 1.5")
        (workspace / "config.toml").write_text(config)
        assert run_cli(workspace, "graph") == 2

    def test_env_interpolation(self, workspace, monkeypatch):
        monkeypatch.setenv("DEMO_KEY_FILE", "key.hex")
        config = (workspace / "config.toml").read_text()
        config = config.replace('key_file = "key.hex"', 'key_file = "${DEMO_KEY_FILE}"')
        (workspace / "config.toml").write_text(config)
        assert run_cli(workspace, "detect") == 0

    def test_env_missing_is_config_error(self, workspace, monkeypatch):
        monkeypatch.delenv("MISSING_VAR_XYZ", raising=False)
        config = (workspace / "config.toml").read_text()
        config = config.replace('key_file = "key.hex"', 'key_file = "${MISSING_VAR_XYZ}"')
        (workspace / "config.toml").write_text(config)
        assert run_cli(workspace, "detect") == 2


class TestStages:
    def test_detect_writes_review_and_inventory(self, workspace):
        assert run_cli(workspace, "detect") == 0
        out = workspace / "out"
        assert (out / "review.jsonl").exists()
        assert (out / "inventory.jsonl").exists()
        manifest = json.loads((out / "manifest-detect.json").read_text())
        assert manifest["subcommand"] == "detect"
        assert manifest["config_sha256"]
        assert manifest["inputs"] and manifest["outputs"]

    def test_encrypt_replaces_surfaces(self, workspace):
        run_cli(workspace, "detect")
        assert run_cli(workspace, "encrypt") == 0
        encrypted = ingest(workspace / "out" / "corpus_encrypted.jsonl")
        joined = "\n".join(d.text for d in encrypted)
        assert "Alice Zhang" not in joined
        assert "4111111111111111" not in joined
        assert "Person_[" in joined and "Card_[" in joined

    def test_decrypt_restores_corpus(self, workspace):
        run_cli(workspace, "detect")
        run_cli(workspace, "encrypt")
        code = run_cli(
            workspace,
            "decrypt",
            "--in", str(workspace / "out" / "corpus_encrypted.jsonl"),
            "--out", str(workspace / "out" / "restored.jsonl"),
        )
        assert code == 0
        original = ingest(workspace / "corpus.jsonl")
        restored = ingest(workspace / "out" / "restored.jsonl")
        assert [d.text for d in restored] == [d.text for d in original]

    def test_review_verdicts_feed_encrypt(self, workspace):
        run_cli(workspace, "detect")
        review = workspace / "out" / "review.jsonl"
        lines = review.read_text(encoding="utf-8").splitlines()
        edited = [lines[0]]
        for line in lines[1:]:
            record = json.loads(line)
            if record["surface"] == "West Lake":
                record["verdict"] = "drop"
            edited.append(json.dumps(record, ensure_ascii=False))
        review.write_text("\n".join(edited) + "\n", encoding="utf-8")
        assert run_cli(workspace, "review") == 0
        run_cli(workspace, "encrypt")
        encrypted = ingest(workspace / "out" / "corpus_encrypted.jsonl")
        joined = "\n".join(d.text for d in encrypted)
        assert "West Lake" in joined  # dropped span stays plaintext

    def test_pipeline_all_outputs_and_manifest(self, workspace):
        assert run_cli(workspace, "pipeline") == 0
        out = workspace / "out"
        for name in (
            "review.jsonl",
            "inventory.jsonl",
            "corpus_encrypted.jsonl",
            "graph.jsonl",
            "tuples.jsonl",
            "synthetic.jsonl",
            "leakage.json",
            "manifest-pipeline.json",
        ):
            assert (out / name).exists(), name

    def test_pipeline_reproducible(self, workspace):
        assert run_cli(workspace, "pipeline") == 0
        first = {
            p.name: p.read_bytes()
            for p in sorted((workspace / "out").iterdir())
            if p.is_file()
        }
        assert run_cli(workspace, "pipeline") == 0
        second = {
            p.name: p.read_bytes()
            for p in sorted((workspace / "out").iterdir())
            if p.is_file()
        }
        assert first == second

    def test_zero_leakage_in_pipeline(self, workspace):
        run_cli(workspace, "pipeline")
        report = json.loads((workspace / "out" / "leakage.json").read_text())
        assert report["total_unencrypted"] == 0
        assert report["total_encrypted"] > 0

    def test_audit_hallucination(self, workspace):
        run_cli(workspace, "pipeline")
        synthetic = ingest(workspace / "out" / "synthetic.jsonl")
        own_payload = parse_cipher_tokens(synthetic.documents[0].text)[0]
        article = synthetic.documents[0].meta["article_id"]
        responses = workspace / "responses.jsonl"
        token_text = synthetic.documents[0].text[own_payload.start : own_payload.end]
        responses.write_text(
            json.dumps({"article_id": article, "text": f"answer cites {token_text}"})
            + "\n"
            + json.dumps({"article_id": article, "text": "bad cite Person_[QQJDR]"})
            + "\n",
            encoding="utf-8",
        )
        code = run_cli(workspace, "audit-hallucination", "--responses", str(responses))
        assert code == 0
        report = json.loads((workspace / "out" / "hallucination.json").read_text())
        assert report["total_ciphers"] == 2
        assert report["class_counts"]["FCND"] == 1

    def test_rag_eval_single(self, workspace):
        run_cli(workspace, "pipeline")
        assert run_cli(workspace, "rag-eval") == 0
        report = json.loads((workspace / "out" / "rag_eval.json").read_text())
        assert report["n_items"] == 4

    def test_rag_eval_sweep(self, workspace):
        run_cli(workspace, "pipeline")
        assert run_cli(workspace, "rag-eval", "--sweep") == 0
        rows = json.loads((workspace / "out" / "rag_eval.json").read_text())
        assert len(rows) == 8

    def test_flag_overrides_config(self, workspace):
        run_cli(workspace, "detect")
        run_cli(workspace, "encrypt")
        run_cli(workspace, "graph", "--threshold", "0.0")
        graph_lines = (workspace / "out" / "graph.jsonl").read_text().splitlines()
        header = json.loads(graph_lines[0])
        assert header["threshold"] == 0.0

    def test_stage_failure_exit_code(self, workspace):
        # graph before encrypt: missing input -> stage failure
        code = run_cli(workspace, "graph")
        assert code == 3

    def test_key_file_flag_override(self, workspace, tmp_path):
        other_key = tmp_path / "other.hex"
        other_key.write_text("ffeeddccbbaa99887766554433221100\n")
        run_cli(workspace, "detect")
        assert run_cli(workspace, "encrypt", "--key-file", str(other_key)) == 0
        encrypted = ingest(workspace / "out" / "corpus_encrypted.jsonl")
        assert encrypted.documents[0].meta["key_id"] == "other"

    def test_synth_enc_after_mode(self, workspace):
        config = (workspace / "config.toml").read_text()
        config = config.replace('mode = "enc-first"', 'mode = "enc-after"')
        (workspace / "config.toml").write_text(config)
        run_cli(workspace, "detect")
        run_cli(workspace, "graph")
        run_cli(workspace, "tuples")
        assert run_cli(workspace, "synth") == 0
        synthetic = ingest(workspace / "out" / "synthetic.jsonl")
        assert len(synthetic) > 0
        # Plaintext entities flow through generation, then get encrypted
        # per record: recognizable PII must not survive in the output.
        joined = "\n".join(d.text for d in synthetic)
        assert "4111111111111111" not in joined
        assert "Alice Zhang" not in joined
        assert run_cli(workspace, "audit-leakage") == 0

    def test_backend_exhaustion_exit_code(self, workspace, monkeypatch):
        config = (workspace / "config.toml").read_text()
        config = config.replace(
            'kind = "mock"',
            'kind = "http"\nmodel = "m"\nmax_attempts = 2\nbackoff_base = 0.0',
        )
        (workspace / "config.toml").write_text(config)
        run_cli(workspace, "detect")
        run_cli(workspace, "encrypt")
        monkeypatch.setenv("CIPHERCORPUS_BASE_URL", "http://127.0.0.1:9")  # closed port
        monkeypatch.setenv("CIPHERCORPUS_API_KEY", "sk-x")
        assert run_cli(workspace, "graph") == 4
