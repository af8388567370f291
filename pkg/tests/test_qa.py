from __future__ import annotations

import json
import logging

import pytest

from normgraph.ingest import load_manifest
from normgraph.qa import (
    EvalChunk,
    OfflineTemplateBackend,
    QAPair,
    RemoteLLMBackend,
    SynthesisConfig,
    count_modals,
    eligible_chunks,
    filter_chunks,
    filter_valid_pairs,
    flat_chunk,
    generate_pair,
    load_prompt_template,
    read_jsonl,
    synthesize_dataset,
    witnesses_valid,
    write_jsonl,
)

from conftest import write_corpus

CFG = SynthesisConfig()


def words(n: int, modal: str | None = None) -> str:
    out = [f"word{i}" for i in range(n)]
    if modal:
        out[n // 2] = modal
    return " ".join(out)


def chunk(text: str, doc_id: str = "D") -> EvalChunk:
    return EvalChunk(doc_id, 0, text, len(text.split()), count_modals(text))


@pytest.mark.parametrize("n, sizes", [(100, [100]), (900, [400, 400, 100]), (0, [])])
def test_flat_chunk_sizes(n, sizes):
    chunks = flat_chunk(words(n), "D", CFG)
    assert [c.word_count for c in chunks] == sizes
    assert [c.ordinal for c in chunks] == list(range(len(sizes)))
    assert all(c.doc_id == "D" for c in chunks)


def test_flat_chunk_keeps_original_spans():
    text = "first line here\n\nsecond   line\n" + words(500)
    chunks = flat_chunk(text, "D", CFG)
    assert chunks[0].text.startswith("first line here\n\nsecond   line\n")
    assert " ".join(" ".join(c.text.split()) for c in chunks) == " ".join(text.split())


def test_filters():
    assert filter_chunks([chunk(".. .. ..")], CFG) == []
    kept = chunk(words(50, "shall"))
    assert filter_chunks([kept], CFG) == [kept]
    assert filter_chunks([chunk(words(50))], CFG) == []


def test_modal_counting_is_whole_word_and_case_insensitive():
    assert count_modals("It SHALL be; Maybe not. Shallow. must-have. Could") == 3


def test_offline_quotes_the_modal_sentence():
    text = "Intro text without obligation. The receiver shall reject the frame. Another line may follow."
    pair = generate_pair(chunk(text), OfflineTemplateBackend())
    assert pair.witnesses == ("The receiver shall reject the frame.",)
    assert pair.answer == "The receiver shall reject the frame."
    assert pair.question == "According to D, what is required regarding: receiver shall reject frame?"


def test_offline_without_modal_returns_none():
    assert generate_pair(chunk("Nothing normative here."), OfflineTemplateBackend()) is None


def fake_post(reply):
    calls = []

    def post(endpoint, payload, timeout):
        calls.append(payload)
        if isinstance(reply, Exception):
            raise reply
        return reply

    post.calls = calls
    return post


def test_remote_discards_unquoted_witness():
    text = "The device shall be tested. Results are recorded."
    post = fake_post({"question": "q?", "answer": "a", "witnesses": ["The device must be tested."]})
    backend = RemoteLLMBackend("http://unused", post=post)
    assert backend.generate(chunk(text)) is None
    assert "The device shall be tested." in post.calls[0]["prompt"]


def test_remote_accepts_valid_reply():
    text = "The device shall be tested. Results are recorded."
    post = fake_post({"question": "q?", "answer": "a", "witnesses": ["device shall be  tested"]})
    pair = RemoteLLMBackend("http://unused", post=post).generate(chunk(text))
    assert pair is not None and pair.witnesses == ("device shall be  tested",)


@pytest.mark.parametrize("reply", [OSError("down"), {"question": "q"}, {"question": "q", "answer": "a", "witnesses": "x"}])
def test_remote_errors_return_none(reply, caplog):
    with caplog.at_level(logging.WARNING):
        assert RemoteLLMBackend("http://unused", post=fake_post(reply)).generate(chunk("a shall b")) is None
    assert "D:0" in caplog.text


def test_remote_over_http(json_server, monkeypatch):
    seen = {}

    def reply(body, headers):
        seen["auth"] = headers.get("Authorization")
        return 200, {"question": "What?", "answer": "x", "witnesses": ["The unit shall stop."]}

    url = json_server(reply)
    monkeypatch.setenv("NORMGRAPH_LLM_TOKEN", "secret")
    pair = RemoteLLMBackend(url, timeout=5).generate(chunk("The unit shall stop. Then more."))
    assert pair.witnesses == ("The unit shall stop.",)
    assert seen["auth"] == "Bearer secret"


def test_prompt_template_fields():
    template = load_prompt_template()
    assert "{context}" in template and "{doc_id}" in template


def three_doc_corpus(tmp_path):
    body = ". ".join(words(30, "shall") for _ in range(20)) + "."
    return load_manifest(write_corpus(tmp_path, {d: (d.upper(), body, []) for d in ("a", "b", "c")}))


def test_synthesize_uses_every_eligible_chunk_once(tmp_path):
    manifest = three_doc_corpus(tmp_path)
    pool = eligible_chunks(manifest, CFG)
    pairs = synthesize_dataset(manifest, SynthesisConfig(sample_n=len(pool)))
    assert sorted(p.id for p in pairs) == sorted(c.chunk_id for c in pool)
    assert {p.source_doc for p in pairs} <= {"a", "b", "c"}


def test_synthesize_caps_at_pool_size(tmp_path, caplog):
    manifest = three_doc_corpus(tmp_path)
    with caplog.at_level(logging.WARNING):
        pairs = synthesize_dataset(manifest, SynthesisConfig(sample_n=10_000))
    assert len(pairs) == len(eligible_chunks(manifest, CFG))
    assert "eligible" in caplog.text


def test_synthesize_deterministic(corpus, tmp_path):
    cfg = SynthesisConfig(sample_n=30, seed=7)
    a, b = synthesize_dataset(corpus, cfg), synthesize_dataset(corpus, cfg)
    write_jsonl(a, tmp_path / "a.jsonl")
    write_jsonl(b, tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    assert read_jsonl(tmp_path / "a.jsonl") == a
    other = synthesize_dataset(corpus, SynthesisConfig(sample_n=30, seed=8))
    assert [p.id for p in other] != [p.id for p in a]


def test_retained_witnesses_are_in_source_chunk(corpus):
    for pair in synthesize_dataset(corpus, SynthesisConfig(sample_n=60)):
        assert witnesses_valid(pair.witnesses, pair.source_chunk)


def pair(witness: str, pid: str = "p") -> QAPair:
    return QAPair(pid, "q", "a", "D", witness, (witness,))


def test_filter_valid_pairs():
    texts = ["The device shall  work.\nMore.", "Header\nThe device shall work. More."]
    good, bad = pair("The device shall work."), pair("The device shall work ~ always.", "bad")
    assert filter_valid_pairs([good, bad], texts) == [good]
    assert filter_valid_pairs([], texts) == []


def test_filter_valid_is_monotone():
    pairs = [pair("alpha beta", "1"), pair("beta gamma", "2"), pair("gamma delta", "3")]
    texts = ["alpha beta gamma delta", "alpha beta gamma", "beta gamma delta"]
    previous = None
    for n in range(1, len(texts) + 1):
        kept = {p.id for p in filter_valid_pairs(pairs, texts[:n])}
        assert previous is None or kept <= previous
        previous = kept


def test_qapair_json_round_trip():
    p = QAPair("d:1", "q?", "a", "d", "ctx", ("w1", "w2"))
    assert QAPair.from_dict(json.loads(p.to_json())) == p


def test_config_validation():
    with pytest.raises(ValueError):
        SynthesisConfig(backend="gpt")
    with pytest.raises(ValueError):
        SynthesisConfig(min_words=0)
