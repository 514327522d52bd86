"""Single entry point for the pipeline stages.

Every subcommand reads declared inputs, writes declared outputs under the
configured workdir, and records a run manifest (config hash, input/output
hashes, settings) so an identical config with mock backends reproduces
byte-identical artifacts. Exit codes: 0 ok, 2 bad config, 3 stage failure,
4 backend retries exhausted.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from . import audit as audit_mod
from . import corpus as corpus_mod
from . import crypto as crypto_mod
from . import graph as graph_mod
from . import pii as pii_mod
from . import rag as rag_mod
from . import synthesis as synth_mod
from .backends import (
    AuditLog,
    HashEmbedder,
    HttpChatBackend,
    HttpEmbedBackend,
    HttpRerankBackend,
    OverlapReranker,
    SynthMockChat,
)
from .config import PipelineConfig, load_config
from .errors import ConfigInvalid, Exhausted, PipelineError, StageFailure
from .sidecar import StdioSidecarClient

STAGE_ORDER = ("detect", "encrypt", "graph", "tuples", "synth", "audit-leakage")


def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, payload) -> None:
    path.write_text(
        json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
        encoding="utf-8",
    )


def _write_manifest(
    cfg: PipelineConfig,
    subcommand: str,
    inputs: list[Path],
    outputs: list[Path],
    settings: dict,
) -> Path:
    workdir = cfg.workdir_path

    def label(path: Path) -> str:
        try:
            return path.resolve().relative_to(cfg.base_dir).as_posix()
        except ValueError:
            return path.name

    manifest = {
        "subcommand": subcommand,
        "version": __version__,
        "config_sha256": _sha256_file(cfg.source_path) if cfg.source_path else "",
        "inputs": {label(p): _sha256_file(p) for p in sorted(set(inputs)) if p.exists()},
        "outputs": {label(p): _sha256_file(p) for p in sorted(set(outputs)) if p.exists()},
        "settings": settings,
    }
    path = workdir / f"manifest-{subcommand}.json"
    _write_json(path, manifest)
    return path


class Backends:
    """Chat/embed/rerank clients resolved from config."""

    def __init__(self, cfg: PipelineConfig):
        b = cfg.backend
        if b.kind == "mock":
            self.chat = SynthMockChat(seed=b.seed)
            self.embedder = HashEmbedder(dim=b.embed_dim, seed=b.seed)
            self.reranker = OverlapReranker()
        else:
            log = AuditLog(cfg.resolve(b.audit_log) if b.audit_log else None)
            common = dict(
                model=b.model,
                max_attempts=b.max_attempts,
                backoff_base=b.backoff_base,
                max_in_flight=b.max_in_flight,
                per_minute=b.per_minute,
                audit_log=log,
                default_sampling=dict(b.sampling),
            )
            self.chat = HttpChatBackend(**common)
            self.embedder = HttpEmbedBackend(**common)
            self.reranker = HttpRerankBackend(**common)


def _load_key(cfg: PipelineConfig) -> crypto_mod.KeyMaterial:
    try:
        return crypto_mod.KeyMaterial.from_hex_file(
            cfg.resolve(cfg.crypto.key_file),
            mode=cfg.crypto.mode,
            casefold=cfg.crypto.casefold,
        )
    except ValueError as exc:
        raise ConfigInvalid("crypto.key_file", str(exc)) from exc


def _recognizers(cfg: PipelineConfig) -> pii_mod.RecognizerSet:
    if cfg.recognizers:
        return pii_mod.RecognizerSet.from_file(cfg.resolve(cfg.recognizers))
    return pii_mod.RecognizerSet.default()


def _prompt_dir(cfg: PipelineConfig):
    return cfg.resolve(cfg.prompts) if cfg.prompts else None


# --- Stages ---


def stage_detect(cfg: PipelineConfig, args) -> dict:
    corpus = corpus_mod.ingest(cfg.resolve(cfg.corpus))
    recognizers = _recognizers(cfg)
    sidecar = StdioSidecarClient(list(cfg.sidecar)) if cfg.sidecar else None
    spans_by_doc: dict[str, list] = {}
    dropped = 0
    try:
        for doc in corpus:
            spans = pii_mod.detect_regex(doc, recognizers)
            if sidecar is not None:
                detection = pii_mod.detect_sidecar(doc, sidecar)
                spans = list(spans) + list(detection.spans)
                dropped += detection.dropped
            spans_by_doc[doc.doc_id] = pii_mod.merge_spans(spans)
    finally:
        if sidecar is not None:
            sidecar.close()
    workdir = cfg.workdir_path
    review_path = workdir / "review.jsonl"
    pii_mod.export_review(corpus, spans_by_doc, review_path)
    inventory = audit_mod.PlaintextInventory.from_spans(
        spans_by_doc, casefold=cfg.crypto.casefold
    )
    inventory_path = workdir / "inventory.jsonl"
    inventory.save(inventory_path)
    _write_manifest(
        cfg,
        "detect",
        inputs=[cfg.resolve(cfg.corpus)],
        outputs=[review_path, inventory_path],
        settings={"recognizers": cfg.recognizers or "default", "sidecar_dropped": dropped},
    )
    return {"spans": sum(len(v) for v in spans_by_doc.values()), "dropped": dropped}


def stage_review(cfg: PipelineConfig, args) -> dict:
    edited = Path(args.file) if args.file else cfg.workdir_path / "review.jsonl"
    spans_by_doc = pii_mod.import_review(edited)
    corpus = corpus_mod.ingest(cfg.resolve(cfg.corpus))
    review_path = cfg.workdir_path / "review.jsonl"
    pii_mod.export_review(corpus, spans_by_doc, review_path)
    inventory = audit_mod.PlaintextInventory.from_spans(
        spans_by_doc, casefold=cfg.crypto.casefold
    )
    inventory_path = cfg.workdir_path / "inventory.jsonl"
    inventory.save(inventory_path)
    _write_manifest(
        cfg,
        "review",
        inputs=[edited],
        outputs=[review_path, inventory_path],
        settings={"source": str(edited)},
    )
    return {"spans": sum(len(v) for v in spans_by_doc.values())}


def stage_encrypt(cfg: PipelineConfig, args) -> dict:
    corpus = corpus_mod.ingest(cfg.resolve(cfg.corpus))
    spans_by_doc = pii_mod.import_review(cfg.workdir_path / "review.jsonl")
    key = _load_key(cfg)
    types = set(cfg.crypto.encrypt_types)
    docs = []
    token_records = []
    for doc in corpus:
        spans = [s for s in spans_by_doc.get(doc.doc_id, []) if s.entity_type in types]
        new_doc, tokens = crypto_mod.rewrite_encrypt(doc, spans, key)
        docs.append(new_doc)
        for span, token in zip(sorted(spans, key=lambda s: s.start), tokens):
            token_records.append(
                {
                    "doc_id": doc.doc_id,
                    "entity_type": token.entity_type,
                    "payload_b64": token.payload_b64,
                    "rendering": token.rendering,
                }
            )
    encrypted = corpus_mod.Corpus(documents=tuple(docs))
    out_path = cfg.workdir_path / "corpus_encrypted.jsonl"
    corpus_mod.persist(encrypted, out_path)
    tokens_path = cfg.workdir_path / "tokens.jsonl"
    with tokens_path.open("w", encoding="utf-8") as handle:
        for record in token_records:
            handle.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
    _write_manifest(
        cfg,
        "encrypt",
        inputs=[cfg.resolve(cfg.corpus), cfg.workdir_path / "review.jsonl"],
        outputs=[out_path, tokens_path],
        settings={
            "mode": key.mode,
            "key_id": key.key_id,
            "casefold": key.casefold,
            "types": sorted(types),
        },
    )
    return {"documents": len(encrypted), "tokens": len(token_records)}


def _cipher_spans(doc: corpus_mod.Document) -> list[pii_mod.EntitySpan]:
    """Cipher-token occurrences as entity spans over encrypted text."""
    spans = []
    for item in crypto_mod.parse_cipher_tokens(doc.text):
        spans.append(
            pii_mod.EntitySpan(
                doc_id=doc.doc_id,
                start=item.start,
                end=item.end,
                surface=doc.text[item.start : item.end],
                entity_type=item.token.entity_type,
                detector="regex",
            )
        )
    return spans


def stage_graph(cfg: PipelineConfig, args) -> dict:
    # Entities are cipher renderings in encrypt-first mode, plaintext
    # surfaces in synthesize-then-encrypt mode.
    if cfg.synthesis.mode == "enc-first":
        source = corpus_mod.ingest(cfg.workdir_path / "corpus_encrypted.jsonl")
        graph_input = cfg.workdir_path / "corpus_encrypted.jsonl"
        spans_by_doc = {doc.doc_id: _cipher_spans(doc) for doc in source}
    else:
        source = corpus_mod.ingest(cfg.resolve(cfg.corpus))
        graph_input = cfg.resolve(cfg.corpus)
        spans_by_doc = pii_mod.import_review(cfg.workdir_path / "review.jsonl")
    backends = Backends(cfg)
    extraction_template = synth_mod.load_template("entity_extraction", _prompt_dir(cfg))
    nodes = graph_mod.extract_entities(
        source,
        spans_by_doc,
        llm=backends.chat,
        prompt_template=extraction_template,
        casefold=cfg.crypto.casefold,
    )
    pairs = graph_mod.pair_schedule(nodes, cfg.graph.pair_budget)
    nodes_by_id = {n.entity_id: n for n in nodes}
    docs_by_id = {d.doc_id: d for d in source}
    template = synth_mod.load_template("association_strength", _prompt_dir(cfg))
    edges = []
    for a_id, b_id in pairs:
        a, b = nodes_by_id[a_id], nodes_by_id[b_id]
        ref_ids = sorted(set(a.doc_refs) | set(b.doc_refs))
        context = "\n\n".join(docs_by_id[d].text for d in ref_ids if d in docs_by_id)
        edges.append(
            graph_mod.score_pair(
                a, b, context, backends.chat, template,
                title=ref_ids[0] if ref_ids else "",
            )
        )
    built = graph_mod.build_graph(nodes, edges, cfg.graph.threshold)
    graph_path = cfg.workdir_path / "graph.jsonl"
    graph_mod.save_graph(built, graph_path)
    _write_manifest(
        cfg,
        "graph",
        inputs=[graph_input],
        outputs=[graph_path],
        settings={
            "threshold": cfg.graph.threshold,
            "pair_budget": cfg.graph.pair_budget,
            "nodes": built.n,
            "edges": len(built.edges),
        },
    )
    return {"nodes": built.n, "edges": len(built.edges)}


def stage_tuples(cfg: PipelineConfig, args) -> dict:
    built = graph_mod.load_graph(cfg.workdir_path / "graph.jsonl")
    all_tuples: list[graph_mod.EntityTuple] = []
    skipped = 0
    for k in range(2, cfg.graph.k_max + 1):
        if k > built.n:
            break
        result = graph_mod.k_tuples(built, k)
        all_tuples.extend(result.tuples)
        skipped += result.skipped
    if cfg.graph.max_tuples > 0:
        all_tuples = all_tuples[: cfg.graph.max_tuples]
    tuples_path = cfg.workdir_path / "tuples.jsonl"
    graph_mod.save_tuples(graph_mod.TupleResult(tuples=tuple(all_tuples), skipped=skipped), tuples_path)
    _write_manifest(
        cfg,
        "tuples",
        inputs=[cfg.workdir_path / "graph.jsonl"],
        outputs=[tuples_path],
        settings={
            "k_max": cfg.graph.k_max,
            "max_tuples": cfg.graph.max_tuples,
            "emitted": len(all_tuples),
            "skipped": skipped,
        },
    )
    return {"tuples": len(all_tuples), "skipped": skipped}


def _context_docs(entity_tuple, corpus) -> list:
    docs = [d for d in corpus if any(m in d.text for m in entity_tuple.members)]
    return docs or list(corpus)[:1]


def stage_synth(cfg: PipelineConfig, args) -> dict:
    mode = cfg.synthesis.mode
    source_name = "corpus_encrypted.jsonl" if mode == "enc-first" else None
    if source_name:
        context_corpus = corpus_mod.ingest(cfg.workdir_path / source_name)
        context_input = cfg.workdir_path / source_name
    else:
        context_corpus = corpus_mod.ingest(cfg.resolve(cfg.corpus))
        context_input = cfg.resolve(cfg.corpus)
    tuples = graph_mod.load_tuples(cfg.workdir_path / "tuples.jsonl")
    backends = Backends(cfg)
    synth_plan = synth_mod.plan(
        cfg.synthesis.budget_tokens, tuples, cfg.synthesis.avg_record_tokens
    )
    template = synth_mod.load_template(cfg.synthesis.kind, _prompt_dir(cfg))
    records = []
    for entity_tuple in synth_plan.tuples:
        context_docs = _context_docs(entity_tuple, context_corpus)
        records.extend(
            synth_mod.synth_for_tuple(
                entity_tuple,
                context_docs,
                cfg.synthesis.kind,
                backends.chat,
                template=template,
                n_records=synth_plan.per_tuple_records,
            )
        )
    inventory_surfaces: tuple[str, ...] = ()
    if mode == "enc-first":
        inventory = audit_mod.PlaintextInventory.load(
            cfg.workdir_path / "inventory.jsonl", casefold=cfg.crypto.casefold
        )
        inventory_surfaces = tuple(s for s, _ in inventory.unique_surfaces())
    rules = synth_mod.FilterRules(
        min_length=cfg.synthesis.min_length,
        plaintext_inventory=inventory_surfaces,
        casefold=cfg.crypto.casefold,
    )
    kept, rejected = synth_mod.filter_records(records, rules)

    if mode == "enc-after":
        synthetic = synth_mod.emit_corpus(kept)
        key = _load_key(cfg)
        recognizers = _recognizers(cfg)
        types = set(cfg.crypto.encrypt_types)
        docs = []
        for doc in synthetic:
            spans = [
                s for s in pii_mod.detect_regex(doc, recognizers) if s.entity_type in types
            ]
            new_doc, _ = crypto_mod.rewrite_encrypt(doc, pii_mod.merge_spans(spans), key)
            docs.append(new_doc)
        synthetic = corpus_mod.Corpus(documents=tuple(docs))
        synth_path = cfg.workdir_path / "synthetic.jsonl"
        corpus_mod.persist(synthetic, synth_path)
    else:
        synth_path = cfg.workdir_path / "synthetic.jsonl"
        synthetic = synth_mod.emit_corpus(kept, synth_path)

    rejected_path = cfg.workdir_path / "rejected.jsonl"
    with rejected_path.open("w", encoding="utf-8") as handle:
        for record in rejected:
            handle.write(
                json.dumps(
                    {
                        "record_id": record.record_id,
                        "reject_reason": record.reject_reason,
                        "text": record.text,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )
    _write_manifest(
        cfg,
        "synth",
        inputs=[context_input, cfg.workdir_path / "tuples.jsonl"],
        outputs=[synth_path, rejected_path],
        settings={
            "kind": cfg.synthesis.kind,
            "mode": mode,
            "budget_tokens": cfg.synthesis.budget_tokens,
            "per_tuple_records": synth_plan.per_tuple_records,
            "kept": len(kept),
            "rejected": len(rejected),
        },
    )
    return {"kept": len(kept), "rejected": len(rejected), "tokens": synthetic.token_count}


def stage_decrypt(cfg: PipelineConfig, args) -> dict:
    key = _load_key(cfg)
    in_path = Path(args.infile) if args.infile else cfg.workdir_path / "synthetic.jsonl"
    out_path = Path(args.outfile) if args.outfile else cfg.workdir_path / "decrypted.jsonl"
    failures = []
    if in_path.suffix == ".jsonl":
        source = corpus_mod.ingest(in_path)
        docs = []
        for doc in source:
            text, outcomes = crypto_mod.rewrite_decrypt(doc.text, key)
            docs.append(corpus_mod.Document(
                doc_id=doc.doc_id, text=text, lang=doc.lang, source=doc.source,
                parent_ids=doc.parent_ids, meta=doc.meta,
            ))
            failures.extend(
                {"doc_id": doc.doc_id, "status": o.status, "payload": o.payload_b64, "note": o.note}
                for o in outcomes
                if not o.ok
            )
        corpus_mod.persist(corpus_mod.Corpus(documents=tuple(docs)), out_path)
    else:
        text, outcomes = crypto_mod.rewrite_decrypt(in_path.read_text(encoding="utf-8"), key)
        out_path.write_text(text, encoding="utf-8")
        failures.extend(
            {"status": o.status, "payload": o.payload_b64, "note": o.note}
            for o in outcomes
            if not o.ok
        )
    failures_path = cfg.workdir_path / "decrypt_failures.json"
    _write_json(failures_path, failures)
    _write_manifest(
        cfg,
        "decrypt",
        inputs=[in_path],
        outputs=[out_path, failures_path],
        settings={"mode": key.mode, "failures": len(failures)},
    )
    return {"failures": len(failures)}


def stage_audit_leakage(cfg: PipelineConfig, args) -> dict:
    synthetic_path = (
        Path(args.synthetic) if getattr(args, "synthetic", None) else cfg.workdir_path / "synthetic.jsonl"
    )
    inventory_path = (
        Path(args.inventory) if getattr(args, "inventory", None) else cfg.workdir_path / "inventory.jsonl"
    )
    synthetic = corpus_mod.ingest(synthetic_path)
    inventory = audit_mod.PlaintextInventory.load(inventory_path, casefold=cfg.crypto.casefold)
    report = audit_mod.leakage_report(synthetic, inventory, recheck_recognizers=_recognizers(cfg))
    report_path = cfg.workdir_path / "leakage.json"
    report_path.write_text(report.to_json() + "\n", encoding="utf-8")
    _write_manifest(
        cfg,
        "audit-leakage",
        inputs=[synthetic_path, inventory_path],
        outputs=[report_path],
        settings={
            "total_unencrypted": report.total_unencrypted,
            "total_encrypted": report.total_encrypted,
        },
    )
    return {
        "total_unencrypted": report.total_unencrypted,
        "total_encrypted": report.total_encrypted,
    }


def stage_audit_hallucination(cfg: PipelineConfig, args) -> dict:
    synthetic = corpus_mod.ingest(cfg.workdir_path / "synthetic.jsonl")
    inventory = audit_mod.build_cipher_inventory(synthetic, group_by=args.group_key)
    responses = []
    responses_path = Path(args.responses)
    for line in responses_path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            record = json.loads(line)
            responses.append((record["article_id"], record["text"]))
    key = _load_key(cfg)
    report = audit_mod.hallucination_report(responses, inventory, key)
    report_path = cfg.workdir_path / "hallucination.json"
    report_path.write_text(report.to_json() + "\n", encoding="utf-8")
    _write_manifest(
        cfg,
        "audit-hallucination",
        inputs=[responses_path, cfg.workdir_path / "synthetic.jsonl"],
        outputs=[report_path],
        settings={"group_key": args.group_key, "unique_ratio": report.unique_ratio},
    )
    return {"unique_ratio": report.unique_ratio, "total_ratio": report.total_ratio}


def stage_rag_eval(cfg: PipelineConfig, args) -> dict:
    corpus_path = (
        Path(args.corpus)
        if getattr(args, "corpus", None)
        else cfg.workdir_path / "corpus_encrypted.jsonl"
    )
    if not corpus_path.exists():
        corpus_path = cfg.resolve(cfg.corpus)
    eval_corpus = corpus_mod.ingest(corpus_path)
    items = rag_mod.load_mcq(cfg.resolve(cfg.rag.mcq_file))
    backends = Backends(cfg)
    template = synth_mod.load_template("mcq_answer", _prompt_dir(cfg))
    report_path = cfg.workdir_path / "rag_eval.json"
    if args.sweep:
        rows = rag_mod.sweep(
            items, eval_corpus, backends.chat, backends.embedder, backends.reranker,
            template=template,
        )
        _write_json(report_path, rows)
        summary = {"sweep_rows": len(rows)}
    else:
        cfg_rag = rag_mod.RagConfig(
            chunk_size=cfg.rag.chunk_size, top_k=cfg.rag.top_k, retrieve_k=cfg.rag.retrieve_k
        )
        result = rag_mod.run_eval(
            items, eval_corpus, cfg_rag, backends.chat, backends.embedder, backends.reranker,
            template=template,
        )
        report_path.write_text(result.to_json() + "\n", encoding="utf-8")
        summary = {"accuracy": result.accuracy, "failures": result.n_format_failures}
    _write_manifest(
        cfg,
        "rag-eval",
        inputs=[corpus_path, cfg.resolve(cfg.rag.mcq_file)],
        outputs=[report_path],
        settings={
            "chunk_size": cfg.rag.chunk_size,
            "top_k": cfg.rag.top_k,
            "sweep": bool(args.sweep),
        },
    )
    return summary


def stage_pipeline(cfg: PipelineConfig, args) -> dict:
    summary = {}
    stage_fns = {
        "detect": stage_detect,
        "encrypt": stage_encrypt,
        "graph": stage_graph,
        "tuples": stage_tuples,
        "synth": stage_synth,
        "audit-leakage": stage_audit_leakage,
    }
    for name in STAGE_ORDER:
        try:
            summary[name] = stage_fns[name](cfg, args)
        except PipelineError:
            raise
        except Exception as exc:
            raise StageFailure(name, exc) from exc
    manifest = {
        "subcommand": "pipeline",
        "version": __version__,
        "config_sha256": _sha256_file(cfg.source_path) if cfg.source_path else "",
        "stages": list(STAGE_ORDER),
        "summary": summary,
    }
    _write_json(cfg.workdir_path / "manifest-pipeline.json", manifest)
    return summary


# --- Argument parsing ---


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    if getattr(args, "key_file", None):
        cfg.crypto.key_file = args.key_file
    if getattr(args, "mode", None) and args.command in ("encrypt", "decrypt"):
        cfg.crypto.mode = args.mode
    if getattr(args, "canonical_casefold", False):
        cfg.crypto.casefold = True
    if getattr(args, "types", None):
        cfg.crypto.encrypt_types = tuple(t.strip() for t in args.types.split(","))
    if getattr(args, "threshold", None) is not None:
        cfg.graph.threshold = args.threshold
    if getattr(args, "pair_budget", None) is not None:
        cfg.graph.pair_budget = args.pair_budget
    if getattr(args, "k_max", None) is not None:
        cfg.graph.k_max = args.k_max
    if getattr(args, "max_tuples", None) is not None:
        cfg.graph.max_tuples = args.max_tuples
    if getattr(args, "kind", None):
        cfg.synthesis.kind = {"qa": "qa_pair", "relation": "relation_analysis"}.get(
            args.kind, args.kind
        )
    if getattr(args, "budget_tokens", None) is not None:
        cfg.synthesis.budget_tokens = args.budget_tokens
    if getattr(args, "synth_mode", None):
        cfg.synthesis.mode = args.synth_mode
    if getattr(args, "chunk_size", None) is not None:
        cfg.rag.chunk_size = args.chunk_size
    if getattr(args, "top_k", None) is not None:
        cfg.rag.top_k = args.top_k
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ciphercorpus",
        description="PII-encrypting corpus synthesis and audit pipeline",
    )
    parser.add_argument("--config", required=True, help="TOML config file")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("detect", help="detect PII spans and export the review file")

    p_review = sub.add_parser("review", help="re-import an edited review file")
    p_review.add_argument("--file", default=None, help="edited review file")

    p_encrypt = sub.add_parser("encrypt", help="rewrite the corpus with cipher tokens")
    p_encrypt.add_argument("--key-file", dest="key_file", default=None)
    p_encrypt.add_argument("--mode", choices=["ecb", "siv"], default=None)
    p_encrypt.add_argument("--canonical-casefold", dest="canonical_casefold", action="store_true")
    p_encrypt.add_argument("--types", default=None, help="comma-separated entity types")

    p_decrypt = sub.add_parser("decrypt", help="decrypt cipher tokens in a file")
    p_decrypt.add_argument("--in", dest="infile", default=None)
    p_decrypt.add_argument("--out", dest="outfile", default=None)
    p_decrypt.add_argument("--key-file", dest="key_file", default=None)
    p_decrypt.add_argument("--mode", choices=["ecb", "siv"], default=None)
    p_decrypt.add_argument("--canonical-casefold", dest="canonical_casefold", action="store_true")

    p_graph = sub.add_parser("graph", help="build the weighted entity graph")
    p_graph.add_argument("--threshold", type=float, default=None)
    p_graph.add_argument("--pair-budget", dest="pair_budget", type=int, default=None)

    p_tuples = sub.add_parser("tuples", help="emit k-tuples from the graph")
    p_tuples.add_argument("--k-max", dest="k_max", type=int, default=None)
    p_tuples.add_argument("--max-tuples", dest="max_tuples", type=int, default=None)

    p_synth = sub.add_parser("synth", help="generate filtered synthetic data")
    p_synth.add_argument("--kind", choices=["qa", "relation", "qa_pair", "relation_analysis"], default=None)
    p_synth.add_argument("--budget-tokens", dest="budget_tokens", type=int, default=None)
    p_synth.add_argument("--mode", dest="synth_mode", choices=["enc-first", "enc-after"], default=None)

    p_leak = sub.add_parser("audit-leakage", help="measure plaintext leakage")
    p_leak.add_argument("--synthetic", default=None)
    p_leak.add_argument("--inventory", default=None)

    p_hall = sub.add_parser("audit-hallucination", help="classify cipher hallucinations")
    p_hall.add_argument("--responses", required=True)
    p_hall.add_argument("--group-key", dest="group_key", default="article_id")

    p_rag = sub.add_parser("rag-eval", help="retrieval-augmented MCQ evaluation")
    p_rag.add_argument("--chunk-size", dest="chunk_size", type=int, default=None)
    p_rag.add_argument("--top-k", dest="top_k", type=int, default=None)
    p_rag.add_argument("--sweep", action="store_true")
    p_rag.add_argument("--corpus", default=None)

    sub.add_parser("pipeline", help="run detect through audit in order")
    return parser


_HANDLERS = {
    "detect": stage_detect,
    "review": stage_review,
    "encrypt": stage_encrypt,
    "decrypt": stage_decrypt,
    "graph": stage_graph,
    "tuples": stage_tuples,
    "synth": stage_synth,
    "audit-leakage": stage_audit_leakage,
    "audit-hallucination": stage_audit_hallucination,
    "rag-eval": stage_rag_eval,
    "pipeline": stage_pipeline,
}


def _error_report(cfg: PipelineConfig | None, exc: Exception, code: int) -> None:
    report = {"error": type(exc).__name__, "detail": str(exc), "exit_code": code}
    if isinstance(exc, StageFailure):
        report["stage"] = exc.stage
    sys.stderr.write(json.dumps(report, ensure_ascii=False, sort_keys=True) + "\n")
    if cfg is not None:
        try:
            workdir = cfg.workdir_path
            if workdir.exists():
                _write_json(workdir / "error.json", report)
        except OSError:
            pass


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg: PipelineConfig | None = None
    try:
        cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        need_key = args.command in (
            "encrypt", "decrypt", "synth", "audit-hallucination", "pipeline",
        )
        cfg.validate(need_corpus=args.command != "decrypt", need_key=need_key)
        cfg.workdir_path.mkdir(parents=True, exist_ok=True)
        summary = _HANDLERS[args.command](cfg, args)
        sys.stdout.write(
            json.dumps({"command": args.command, "ok": True, "summary": summary},
                       ensure_ascii=False, sort_keys=True) + "\n"
        )
        return 0
    except ConfigInvalid as exc:
        _error_report(cfg, exc, 2)
        return 2
    except Exhausted as exc:
        _error_report(cfg, exc, 4)
        return 4
    except StageFailure as exc:
        _error_report(cfg, exc, 3)
        return 3
    except PipelineError as exc:
        _error_report(cfg, exc, 3)
        return 3
    except Exception as exc:  # unexpected: still exit with a parseable report
        _error_report(cfg, exc, 3)
        return 3


if __name__ == "__main__":
    sys.exit(main())
