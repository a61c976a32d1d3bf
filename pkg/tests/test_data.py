import json
import logging

import numpy as np
import pytest

from eave.data import (
    Attribute,
    DataValidationError,
    Evidence,
    Paragraph,
    ProductRecord,
    Vocab,
    build_example,
    load_corpus,
    reconstruct,
    rule_based_extract,
    split_tokens,
    synthesize_corpus,
    write_corpus,
)
from eave.tagging import B, I, evaluate


def record(text, evidences, key="color", pid="p1"):
    evs = [Evidence(0, text.index(v), text.index(v) + len(v), v) for v in evidences]
    return ProductRecord(pid, [Paragraph("title", text)], [Attribute(key, evs)])


def char_oracle_spans(rec, key, context_len):
    """Re-align every evidence char by char against the token offsets."""
    text, para = rec.context()
    _, offsets = split_tokens(text)
    spans = set()
    for ev in rec.attribute(key).evidences:
        lo = para[ev.paragraph_index] + ev.char_begin
        hi = para[ev.paragraph_index] + ev.char_end
        covered = set()
        for c in range(lo, hi):
            for t, (s, e) in enumerate(offsets):
                if s <= c < e:
                    covered.add(t)
        if covered and max(covered) < context_len:
            spans.add((min(covered), max(covered) + 1))
    return sorted(spans)


class TestTokenizer:
    def test_empty(self):
        assert split_tokens("") == ([], [])

    def test_simple(self):
        toks, offs = split_tokens("Red Shoes.")
        assert toks == ["red", "shoes", "."]
        assert offs == [(0, 3), (4, 9), (9, 10)]

    def test_reconstruct_unicode(self):
        text = "  Größe:\t42½ €  café\n"
        assert reconstruct(text, split_tokens(text)[1]) == text

    def test_reconstruct_rejects_gaps(self):
        with pytest.raises(ValueError):
            reconstruct("ab cd", [(0, 2)])


class TestVocab:
    def test_reserved_and_order(self):
        recs = [record("b a b c", ["a"])]
        v = Vocab.build(recs)
        assert v.token(0) == "<pad>" and v.token(1) == "<unk>"
        assert v.token(2) == "b"
        assert v.id("zzz") == 1

    def test_save_load(self, tmp_path):
        v = Vocab.build([record("x y z y", ["x"])])
        v.save(tmp_path / "v.txt")
        assert Vocab.load(tmp_path / "v.txt").tokens == v.tokens


class TestBuildExample:
    def test_negative_attribute_all_outside(self):
        rec = ProductRecord("p", [Paragraph("t", "blue jeans")], [Attribute("color", [])])
        ex = build_example(rec, "color", Vocab.build([rec]), 8, 2)
        assert not ex.gold_tags.any() and ex.gold_spans == []

    def test_value_at_start(self):
        rec = record("Navy blue jeans", ["Navy blue"])
        ex = build_example(rec, "color", Vocab.build([rec]), 8, 2)
        assert ex.gold_tags[:3].tolist() == [B, I, 0]
        assert ex.span_text(0, 2) == "Navy blue"

    def test_truncation_matches_char_oracle(self):
        rng = np.random.default_rng(0)
        words = ["red", "blue-ish", "x.y", "size", "42", "cm", ",", "green", "über"]
        for trial in range(200):
            toks = [words[i] for i in rng.integers(len(words), size=int(rng.integers(3, 20)))]
            text = " ".join(toks)
            n_ev = int(rng.integers(1, 4))
            evs = []
            for _ in range(n_ev):
                a = int(rng.integers(0, len(text) - 1))
                b = int(rng.integers(a + 1, len(text) + 1))
                if text[a:b].strip():
                    evs.append(Evidence(0, a, b, text[a:b]))
            if not evs:
                continue
            rec = ProductRecord(f"p{trial}", [Paragraph("t", text)], [Attribute("k", evs)])
            context_len = int(rng.integers(1, 25))
            ex = build_example(rec, "k", Vocab.build([rec]), context_len, 1)
            oracle = char_oracle_spans(rec, "k", context_len)
            # overlapping evidences keep the earliest span
            kept, last = [], -1
            for s, e in oracle:
                if s >= last:
                    kept.append((s, e))
                    last = e
            assert ex.gold_spans == kept, (text, evs, context_len)

    def test_straddling_span_dropped_others_kept(self):
        rec = record("red shirt , size large", ["red", "size large"])
        ex = build_example(rec, "color", Vocab.build([rec]), 4, 2)
        assert ex.gold_spans == [(0, 1)] and ex.dropped_spans == 1

    def test_second_paragraph_offsets(self):
        rec = ProductRecord("p", [Paragraph("t", "Shoe"), Paragraph("d", "made of leather")],
                            [Attribute("material", [Evidence(1, 8, 15, "leather")])])
        ex = build_example(rec, "material", Vocab.build([rec]), 10, 2)
        assert ex.gold_spans == [(3, 4)] and ex.span_text(3, 4) == "leather"


class TestRecords:
    def test_bad_span_rejected(self):
        with pytest.raises(DataValidationError, match="slices to"):
            ProductRecord("p", [Paragraph("t", "abc")], [Attribute("k", [Evidence(0, 0, 2, "xy")])])

    def test_duplicate_key(self):
        with pytest.raises(DataValidationError):
            ProductRecord("p", [Paragraph("t", "abc")], [Attribute("k"), Attribute("k")])

    def test_dict_round_trip(self):
        rec = record("Red shoe", ["Red"])
        assert ProductRecord.from_dict(json.loads(json.dumps(rec.to_dict()))) == rec


class TestLoadCorpus:
    def test_empty_file(self, tmp_path):
        (tmp_path / "c.jsonl").write_text("")
        assert load_corpus(tmp_path / "c.jsonl") == []

    def test_one_line(self, tmp_path):
        rec = record("Red shoe", ["Red"])
        write_corpus([rec], tmp_path / "c.jsonl")
        assert load_corpus(tmp_path / "c.jsonl") == [rec]

    def test_skip_mode(self, tmp_path, caplog):
        recs = synthesize_corpus(1, 100, 2, 60)
        write_corpus(recs, tmp_path / "c.jsonl")
        lines = (tmp_path / "c.jsonl").read_text().splitlines()
        bad = json.loads(lines[41])
        bad["attributes"][0]["evidences"][0]["char_end"] += 1
        lines[41] = json.dumps(bad)
        (tmp_path / "c.jsonl").write_text("\n".join(lines) + "\n")
        with pytest.raises(DataValidationError, match=":42:"):
            load_corpus(tmp_path / "c.jsonl")
        with caplog.at_level(logging.WARNING, logger="eave.data"):
            got = load_corpus(tmp_path / "c.jsonl", strict=False)
        assert len(got) == 99
        warnings = [r for r in caplog.records if r.levelno == logging.WARNING]
        assert len(warnings) == 1 and ":42:" in warnings[0].getMessage()


class TestSynthetic:
    def test_evidence_slices_equal_values(self):
        for rec in synthesize_corpus(3, 50, 4, 200):
            for attr in rec.attributes:
                for ev in attr.evidences:
                    assert rec.paragraphs[ev.paragraph_index].text[ev.char_begin:ev.char_end] == ev.value

    def test_deterministic(self, tmp_path):
        write_corpus(synthesize_corpus(5, 30, 3, 100, noise_p=0.3), tmp_path / "a.jsonl")
        write_corpus(synthesize_corpus(5, 30, 3, 100, noise_p=0.3), tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_full_noise(self):
        recs = synthesize_corpus(2, 100, 4, 200, noise_p=1.0)
        values = set(v for r in recs for a in r.attributes for v in [a.evidences[0].value])
        for rec in recs:
            desc = rec.paragraphs[1].text
            assert not desc.endswith(" .")
            assert len(rec.paragraphs) == 3
            assert sum(len(a.evidences) for a in rec.attributes) == 4
        assert values

    def test_rule_based_baseline_is_perfect_on_clean_data(self):
        recs = synthesize_corpus(4, 60, 4, 200)
        vocab = Vocab.build(recs)
        preds, golds = {}, {}
        for rec in recs:
            for attr in rec.attributes:
                ex = build_example(rec, attr.key, vocab, 48, 4)
                golds[ex.key] = ex.gold_spans
                preds[ex.key] = rule_based_extract(rec, attr.key, 48)
        assert evaluate(preds, golds).f1 == 1.0

    def test_every_word_has_one_role(self):
        from eave.data import synthetic_category

        cat = synthetic_category(7, 4, 200)
        seen = {}
        for word in cat.keys + cat.fillers + [w for v in cat.all_values for w in v.split()]:
            seen[word] = seen.get(word, 0) + 1
        assert max(seen.values()) == 1
