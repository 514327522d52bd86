"""Sentence embeddings for the sidecar.

The builtin engine hashes character 2- and 3-grams into signed buckets and
L2-normalizes, so identical texts always embed identically and related texts
share buckets. A sentence-transformers model can be plugged in via
--embed-model when weights exist on the host.
"""

from __future__ import annotations

import hashlib


class BuiltinEmbedder:
    name = "builtin-ngram-hash-v1"

    def __init__(self, dim: int = 256):
        if dim < 8:
            raise ValueError("dim must be >= 8")
        self.dim = dim

    def embed(self, texts: list[str]) -> list[list[float]]:
        return [self._one(t) for t in texts]

    def _one(self, text: str) -> list[float]:
        acc = [0.0] * self.dim
        padded = f"^{text}$"
        for n in (2, 3):
            for i in range(max(0, len(padded) - n + 1)):
                gram = padded[i : i + n]
                digest = hashlib.md5(f"{n}|{gram}".encode("utf-8")).digest()
                bucket = int.from_bytes(digest[:4], "big") % self.dim
                sign = 1.0 if digest[4] % 2 == 0 else -1.0
                acc[bucket] += sign
        if not text:
            return [0.0] * self.dim
        norm = sum(x * x for x in acc) ** 0.5
        if norm > 0:
            acc = [x / norm for x in acc]
        return acc


class SbertEmbedder:
    """sentence-transformers backed engine; needs local model weights."""

    def __init__(self, model_path: str):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise RuntimeError(
                "sentence-transformers is not installed; use --embed-model builtin"
            ) from exc
        self._model = SentenceTransformer(model_path)
        self.dim = self._model.get_sentence_embedding_dimension()
        self.name = f"sbert:{model_path}"

    def embed(self, texts: list[str]) -> list[list[float]]:
        return [list(map(float, v)) for v in self._model.encode(texts)]


def load_embed_engine(spec: str = "builtin", dim: int = 256):
    """Resolve --embed-model: 'builtin' or 'sbert:<path_or_name>'."""
    if spec == "builtin":
        return BuiltinEmbedder(dim=dim)
    if spec.startswith("sbert:"):
        return SbertEmbedder(spec.split(":", 1)[1])
    raise ValueError(f"unknown embedding engine {spec!r}")
