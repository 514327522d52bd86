import json
import random

import pytest

from ciphercorpus.backends import (
    GibberishChat,
    HashEmbedder,
    MockChatBackend,
    OracleMcqChat,
    OverlapReranker,
)
from ciphercorpus.corpus import Corpus, Document, approx_tokens
from ciphercorpus.crypto import encrypt_entity
from ciphercorpus.rag import (
    FormatFailure,
    McqItem,
    RagConfig,
    VectorIndex,
    answer_mcq,
    build_index,
    chunk_corpus,
    chunk_document,
    load_mcq,
    parse_answer_letter,
    retrieve,
    run_eval,
    sweep,
    tokens_intact,
)


def make_items(n=4):
    items = []
    for i in range(n):
        items.append(
            McqItem(
                question=f"What is fact number {i}?",
                options=(f"wrong{i}a", f"right{i}", f"wrong{i}b", f"wrong{i}c"),
                gold="B",
            )
        )
    return items


class TestChunking:
    def test_short_document_single_chunk(self):
        doc = Document(doc_id="d", text="short text here")
        chunks = chunk_document(doc, 64)
        assert len(chunks) == 1
        assert chunks[0].text == doc.text

    def test_empty_document(self):
        assert chunk_document(Document(doc_id="d", text=""), 64) == []

    def test_size_floor(self):
        with pytest.raises(ValueError):
            chunk_document(Document(doc_id="d", text="x"), 8)

    def test_partition_exact(self):
        paragraphs = []
        for i in range(12):
            paragraphs.append(
                f"Paragraph {i} has a number of words that go on. "
                f"Sentence two of paragraph {i}! And a third one?"
            )
        doc = Document(doc_id="d", text="\n\n".join(paragraphs))
        chunks = chunk_document(doc, 32)
        assert "".join(c.text for c in chunks) == doc.text
        assert all(c.approx_token_len <= 32 for c in chunks)
        assert len(chunks) > 1

    def test_paragraph_preferred_over_midsentence(self):
        doc = Document(doc_id="d", text="one two three.\n\nfour five six.")
        chunks = chunk_document(doc, 16)
        assert len(chunks) == 1  # fits whole

    def test_token_never_split(self, key):
        token = encrypt_entity("Somebody Longname", "PERSON", key)
        words = ["w%d" % i for i in range(30)]
        text = " ".join(words[:15]) + " " + token.rendering + " " + " ".join(words[15:])
        doc = Document(doc_id="d", text=text)
        for size in (16, 20, 64):
            chunks = chunk_document(doc, size)
            assert tokens_intact(doc.text, chunks)
            assert "".join(c.text for c in chunks) == doc.text
            whole = [c for c in chunks if token.rendering in c.text]
            assert len(whole) == 1

    def test_token_at_forced_boundary(self, key):
        # Token lands exactly where a naive fixed cut would fall.
        token = encrypt_entity("张三", "PERSON", key)
        text = " ".join(["pad"] * 15) + " " + token.rendering + " tail"
        doc = Document(doc_id="d", text=text)
        chunks = chunk_document(doc, 16)
        assert tokens_intact(doc.text, chunks)

    def test_cjk_long_run_packs(self):
        doc = Document(doc_id="d", text="字" * 100)
        chunks = chunk_document(doc, 16)
        assert "".join(c.text for c in chunks) == doc.text
        assert all(c.approx_token_len <= 16 for c in chunks)
        assert len(chunks) == 7  # 100 chars / 16 per chunk

    def test_chunk_ids_and_offsets(self, two_doc_corpus):
        chunks = chunk_corpus(two_doc_corpus, 16)
        for chunk in chunks:
            doc = two_doc_corpus.get(chunk.doc_id)
            assert doc.text[chunk.start : chunk.end] == chunk.text
        assert len({c.chunk_id for c in chunks}) == len(chunks)


class TestIndex:
    def test_empty_index(self):
        index = build_index([], HashEmbedder(dim=16))
        assert index.query("anything", 4) == []

    def test_exact_text_ranks_first(self):
        docs = Corpus(
            documents=(
                Document(doc_id="a", text="alpha beta gamma delta"),
                Document(doc_id="b", text="completely different words entirely"),
                Document(doc_id="c", text="third unrelated chunk content"),
            )
        )
        chunks = chunk_corpus(docs, 64)
        index = build_index(chunks, HashEmbedder(dim=64))
        top = index.query("alpha beta gamma delta", 1)
        assert top[0][0].doc_id == "a"
        assert top[0][1] == pytest.approx(1.0)

    def test_index_size(self, two_doc_corpus):
        chunks = chunk_corpus(two_doc_corpus, 64)
        index = build_index(chunks, HashEmbedder(dim=16))
        assert len(index) == len(chunks)


class TestRetrieve:
    def _index(self, key):
        token = encrypt_entity("Francis Quill", "PERSON", key)
        docs = Corpus(
            documents=(
                Document(doc_id="a", text="plain words about nothing in particular"),
                Document(doc_id="b", text=f"the case of {token.rendering} continues today"),
                Document(doc_id="c", text="yet another unrelated paragraph of filler"),
            )
        )
        chunks = chunk_corpus(docs, 64)
        return token, build_index(chunks, HashEmbedder(dim=64))

    def test_token_query_finds_chunk(self, key):
        token, index = self._index(key)
        cfg = RagConfig(chunk_size=64, top_k=1, retrieve_k=3)
        out = retrieve(f"question about {token.rendering}?", index, cfg, OverlapReranker())
        assert out[0].doc_id == "b"

    def test_top_k_exceeds_chunks(self, key):
        _, index = self._index(key)
        cfg = RagConfig(chunk_size=64, top_k=10, retrieve_k=10)
        out = retrieve("anything", index, cfg, OverlapReranker())
        assert len(out) == 3

    def test_retrieve_k_one_identity(self, key):
        token, index = self._index(key)
        cfg = RagConfig(chunk_size=64, top_k=1, retrieve_k=1)
        out = retrieve(token.rendering, index, cfg, OverlapReranker())
        assert len(out) == 1


class TestRagConfig:
    def test_default_retrieve_k(self):
        cfg = RagConfig(chunk_size=128, top_k=4)
        assert cfg.retrieve_k == 16

    def test_invalid_bounds(self):
        with pytest.raises(ValueError):
            RagConfig(chunk_size=128, top_k=8, retrieve_k=4)


class TestAnswerParse:
    def test_bare_letter(self):
        assert parse_answer_letter("B") == "B"

    def test_parenthesized(self):
        assert parse_answer_letter("The answer is (C) because of context") == "C"

    def test_answer_colon_form(self):
        assert parse_answer_letter("Answer: D") == "D"

    def test_no_letter_is_failure(self):
        outcome = parse_answer_letter("completely unrelated waffle")
        assert isinstance(outcome, FormatFailure)
        assert "waffle" in outcome.raw

    def test_embedded_letters_not_matched(self):
        outcome = parse_answer_letter("Because Dog and Cat are words")
        assert isinstance(outcome, FormatFailure)


class TestAnswerMcq:
    def test_mock_letter(self):
        item = make_items(1)[0]
        out = answer_mcq(item, [], MockChatBackend(default="B"))
        assert out == "B"

    def test_prompt_contains_options_and_context(self):
        llm = MockChatBackend(default="A")
        item = make_items(1)[0]
        chunks = chunk_document(Document(doc_id="d", text="context body text"), 64)
        answer_mcq(item, chunks, llm)
        prompt = llm.calls[0].joined_content
        assert "context body text" in prompt
        assert item.question in prompt
        assert item.options[1] in prompt


class TestRunEval:
    def _corpus(self):
        docs = tuple(
            Document(doc_id=f"d{i}", text=f"fact number {i} is right{i} indeed")
            for i in range(4)
        )
        return Corpus(documents=docs)

    def test_oracle_accuracy_one(self):
        items = make_items(4)
        oracle = OracleMcqChat({i.question: i.gold for i in items})
        result = run_eval(
            items, self._corpus(), RagConfig(chunk_size=64, top_k=2),
            oracle, HashEmbedder(dim=32), OverlapReranker(),
        )
        assert result.accuracy == 1.0
        assert result.n_format_failures == 0

    def test_gibberish_all_failures(self):
        items = make_items(4)
        result = run_eval(
            items, self._corpus(), RagConfig(chunk_size=64, top_k=2),
            GibberishChat(), HashEmbedder(dim=32), OverlapReranker(),
        )
        assert result.accuracy == 0.0
        assert result.n_format_failures == 4

    def test_three_right_one_failure(self):
        items = make_items(4)
        gold = {i.question: i.gold for i in items}
        responses = dict(gold)
        responses[items[3].question] = "zz zz zz"

        class Mixed:
            def chat(self, req):
                for q, g in responses.items():
                    if q in req.joined_content:
                        return g
                return "zz"

        result = run_eval(
            items, self._corpus(), RagConfig(chunk_size=64, top_k=2),
            Mixed(), HashEmbedder(dim=32), OverlapReranker(),
        )
        assert result.accuracy == 0.75
        assert result.n_format_failures == 1
        assert result.n_correct + result.n_format_failures + sum(
            1 for r in result.per_item if not r["correct"] and not r["failure"]
        ) == result.n_items

    def test_deterministic(self):
        items = make_items(3)
        oracle = OracleMcqChat({i.question: i.gold for i in items})
        args = (
            items, self._corpus(), RagConfig(chunk_size=64, top_k=2),
            oracle, HashEmbedder(dim=32), OverlapReranker(),
        )
        assert run_eval(*args).to_json() == run_eval(*args).to_json()


class TestSweep:
    def test_grid_completes_with_failure_counts(self):
        docs = tuple(
            Document(doc_id=f"d{i}", text=(f"fact number {i} is right{i}. " * 40))
            for i in range(3)
        )
        corpus = Corpus(documents=docs)
        items = make_items(3)
        oracle = OracleMcqChat({i.question: i.gold for i in items})
        rows = sweep(
            items, corpus, oracle, HashEmbedder(dim=32), OverlapReranker(),
            chunk_sizes=(128, 1024), top_ks=(2, 4, 8, 16),
        )
        assert len(rows) == 8
        assert all("n_format_failures" in r for r in rows)
        assert {(r["chunk_size"], r["top_k"]) for r in rows} == {
            (c, k) for c in (128, 1024) for k in (2, 4, 8, 16)
        }


class TestMcqFile:
    def test_load(self, tmp_path):
        path = tmp_path / "mcq.jsonl"
        records = [
            {"question": "q1", "options": ["a", "b", "c", "d"], "gold": "A"},
            {"question": "q2", "options": ["a", "b", "c", "d"], "gold": "D", "encrypted": True},
        ]
        path.write_text("\n".join(json.dumps(r) for r in records), encoding="utf-8")
        items = load_mcq(path)
        assert len(items) == 2
        assert items[1].encrypted is True

    def test_bad_gold_rejected(self, tmp_path):
        path = tmp_path / "mcq.jsonl"
        path.write_text(
            json.dumps({"question": "q", "options": ["a", "b", "c", "d"], "gold": "E"}),
            encoding="utf-8",
        )
        from ciphercorpus.errors import MalformedRecord

        with pytest.raises(MalformedRecord):
            load_mcq(path)


class TestQuestionEncryptionCommutes:
    def test_no_inventory_plaintext_in_prompts(self, key):
        from ciphercorpus.crypto import encrypt_text_with_inventory, rewrite_encrypt
        from ciphercorpus.pii import EntitySpan

        entries = [("Dana Frost", "PERSON"), ("Westbrook", "LOCATION")]
        raw_doc = Document(
            doc_id="d",
            text="Dana Frost lived in Westbrook. Dana Frost filed the claim there.",
        )
        spans = []
        for surface, entity_type in entries:
            start = 0
            while True:
                start = raw_doc.text.find(surface, start)
                if start == -1:
                    break
                spans.append(
                    EntitySpan("d", start, start + len(surface), surface, entity_type, "manual")
                )
                start += len(surface)
        enc_doc, _ = rewrite_encrypt(raw_doc, spans, key)
        corpus = Corpus(documents=(enc_doc,))

        question = "Where did Dana Frost file the claim?"
        enc_question = encrypt_text_with_inventory(question, entries, key)
        item = McqItem(
            question=enc_question,
            options=(
                encrypt_text_with_inventory("Westbrook", entries, key),
                "Elsewhere", "Nowhere", "Unknown",
            ),
            gold="A",
            encrypted=True,
        )
        llm = MockChatBackend(default="A")
        run_eval(
            [item], corpus, RagConfig(chunk_size=64, top_k=2),
            llm, HashEmbedder(dim=64), OverlapReranker(),
        )
        assert llm.calls, "no prompt was assembled"
        for call in llm.calls:
            prompt = call.joined_content
            for surface, _ in entries:
                assert surface not in prompt


class TestChunkIntegrityRandomized:
    def test_random_docs_never_split_tokens(self, key):
        rng = random.Random(4242)
        surfaces = ["Ann Li", "张三", "Bob", "李四大", "Carcentral"]
        tokens = [encrypt_entity(s, "PERSON", key) for s in surfaces]
        for trial in range(20):
            pieces = []
            for _ in range(rng.randint(5, 60)):
                roll = rng.random()
                if roll < 0.3:
                    pieces.append(rng.choice(tokens).rendering)
                elif roll < 0.6:
                    pieces.append("word%d" % rng.randrange(100))
                elif roll < 0.8:
                    pieces.append("汉" * rng.randint(1, 30))
                else:
                    pieces.append(rng.choice([".", "!", "?", "\n\n", ";"]))
            text = " ".join(pieces)
            doc = Document(doc_id=f"r{trial}", text=text)
            for size in (16, 128, 1024):
                chunks = chunk_document(doc, size)
                assert "".join(c.text for c in chunks) == text
                assert tokens_intact(text, chunks)
