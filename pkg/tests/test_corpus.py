import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from ciphercorpus.corpus import Corpus, Document, approx_tokens, ingest, persist
from ciphercorpus.errors import DuplicateDocId, IoFailure, MalformedRecord


class TestApproxTokens:
    def test_empty(self):
        assert approx_tokens("") == 0

    def test_whitespace_words(self):
        assert approx_tokens("hello world") == 2

    def test_cjk_per_character(self):
        assert approx_tokens("张三和李四在北京相遇") == 10

    def test_mixed(self):
        # 2 ASCII words + 2 CJK chars
        assert approx_tokens("hello 张三 world") == 4

    def test_cjk_breaks_ascii_word(self):
        assert approx_tokens("ab张cd") == 3

    @given(st.text(max_size=80), st.text(max_size=80))
    def test_concat_monotone(self, s1, s2):
        combined = approx_tokens(s1 + " " + s2)
        assert combined >= max(approx_tokens(s1), approx_tokens(s2))

    @given(st.text(max_size=200))
    def test_deterministic(self, s):
        assert approx_tokens(s) == approx_tokens(s)


class TestDocument:
    def test_synthetic_requires_parents(self):
        with pytest.raises(ValueError):
            Document(doc_id="x", text="t", source="synthetic")

    def test_original_rejects_parents(self):
        with pytest.raises(ValueError):
            Document(doc_id="x", text="t", source="original", parent_ids=("p",))

    def test_token_count_sums(self, two_doc_corpus):
        assert two_doc_corpus.token_count == sum(
            approx_tokens(d.text) for d in two_doc_corpus
        )


class TestIngest:
    def test_empty_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("")
        assert len(ingest(path)) == 0

    def test_two_records_in_order(self, tmp_path):
        path = tmp_path / "two.jsonl"
        records = [
            {"doc_id": "a", "text": "first", "lang": "en"},
            {"doc_id": "b", "text": "second", "lang": "en"},
        ]
        path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
        corpus = ingest(path)
        assert [d.doc_id for d in corpus] == ["a", "b"]

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "dup.jsonl"
        lines = [
            json.dumps({"doc_id": "a", "text": "1"}),
            json.dumps({"doc_id": "b", "text": "2"}),
            json.dumps({"doc_id": "a", "text": "3"}),
        ]
        path.write_text("\n".join(lines))
        with pytest.raises(DuplicateDocId) as err:
            ingest(path)
        assert err.value.doc_id == "a"

    def test_malformed_line_number(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps({"doc_id": "a", "text": "1"}) + "\n{not json\n")
        with pytest.raises(MalformedRecord) as err:
            ingest(path)
        assert err.value.line_no == 2

    def test_missing_required_key(self, tmp_path):
        path = tmp_path / "nokey.jsonl"
        path.write_text(json.dumps({"doc_id": "a"}) + "\n")
        with pytest.raises(MalformedRecord):
            ingest(path)

    def test_plain_dir(self, tmp_path):
        (tmp_path / "x.txt").write_text("one two", encoding="utf-8")
        (tmp_path / "y.txt").write_text("three", encoding="utf-8")
        corpus = ingest(tmp_path, kind="plain_dir")
        assert [d.doc_id for d in corpus] == ["x", "y"]
        assert corpus.get("x").text == "one two"


class TestPersist:
    def test_empty_corpus(self, tmp_path):
        path = tmp_path / "out.jsonl"
        persist(Corpus(documents=()), path)
        assert path.read_text() == ""

    def test_roundtrip(self, tmp_path, two_doc_corpus):
        path = tmp_path / "round.jsonl"
        persist(two_doc_corpus, path)
        again = ingest(path)
        assert again == two_doc_corpus

    def test_roundtrip_full_fields(self, tmp_path):
        corpus = Corpus(
            documents=(
                Document(
                    doc_id="s1",
                    text="张三 synthetic",
                    lang="zh",
                    source="synthetic",
                    parent_ids=("a", "b"),
                    meta={"kind": "qa_pair", "article_id": "a"},
                ),
            )
        )
        path = tmp_path / "full.jsonl"
        persist(corpus, path)
        assert ingest(path) == corpus

    def test_unwritable_path(self, tmp_path, two_doc_corpus):
        with pytest.raises(IoFailure):
            persist(two_doc_corpus, tmp_path / "missing_dir" / "out.jsonl")
