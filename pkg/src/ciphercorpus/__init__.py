"""Corpus pipeline: PII detection, deterministic cipher tokens, entity-graph
driven synthesis, and privacy/hallucination audits."""

__version__ = "0.1.0"
