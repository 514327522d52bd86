import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ciphercorpus.corpus import Corpus, Document
from ciphercorpus.crypto import KeyMaterial


@pytest.fixture
def key() -> KeyMaterial:
    return KeyMaterial(bytes(range(16)), key_id="test")


@pytest.fixture
def key256() -> KeyMaterial:
    return KeyMaterial(bytes(range(32)), key_id="test256")


@pytest.fixture
def two_doc_corpus() -> Corpus:
    return Corpus(
        documents=(
            Document(doc_id="a", text="Alice met Bob in Shanghai on 2024-01-15.", lang="en"),
            Document(doc_id="b", text="Call +1-555-0100 about card 4111111111111111.", lang="en"),
        )
    )
