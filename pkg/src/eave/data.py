"""Tokenization, corpus records, BIO example construction, synthetic corpora."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .tagging import B, I, spans_to_tags

log = logging.getLogger(__name__)

PAD_ID = 0
UNK_ID = 1
PARAGRAPH_SEPARATOR = " \n "
_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class DataValidationError(ValueError):
    pass


# -- records ---------------------------------------------------------------

@dataclass
class Evidence:
    paragraph_index: int
    char_begin: int
    char_end: int
    value: str


@dataclass
class Attribute:
    key: str
    evidences: list[Evidence] = field(default_factory=list)


@dataclass
class Paragraph:
    source: str
    text: str


@dataclass
class ProductRecord:
    id: str
    paragraphs: list[Paragraph]
    attributes: list[Attribute]

    def __post_init__(self):
        seen = set()
        for attr in self.attributes:
            if attr.key in seen:
                raise DataValidationError(f"product {self.id}: duplicate attribute key {attr.key!r}")
            seen.add(attr.key)
            for ev in attr.evidences:
                if not 0 <= ev.paragraph_index < len(self.paragraphs):
                    raise DataValidationError(
                        f"product {self.id}: evidence paragraph {ev.paragraph_index} out of range"
                    )
                text = self.paragraphs[ev.paragraph_index].text
                if not 0 <= ev.char_begin < ev.char_end <= len(text):
                    raise DataValidationError(
                        f"product {self.id}: span [{ev.char_begin}, {ev.char_end}) out of bounds "
                        f"for paragraph of length {len(text)}"
                    )
                if text[ev.char_begin:ev.char_end] != ev.value:
                    raise DataValidationError(
                        f"product {self.id}: span [{ev.char_begin}, {ev.char_end}) slices to "
                        f"{text[ev.char_begin:ev.char_end]!r}, not {ev.value!r}"
                    )

    @classmethod
    def from_dict(cls, d: dict) -> "ProductRecord":
        return cls(
            id=str(d["id"]),
            paragraphs=[Paragraph(**p) for p in d["paragraphs"]],
            attributes=[
                Attribute(a["key"], [Evidence(**e) for e in a.get("evidences", [])])
                for a in d.get("attributes", [])
            ],
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def attribute_keys(self) -> list[str]:
        return [a.key for a in self.attributes]

    def attribute(self, key: str) -> Attribute | None:
        for a in self.attributes:
            if a.key == key:
                return a
        return None

    def context(self) -> tuple[str, list[int]]:
        """Joined context string and the char offset of each paragraph in it."""
        offsets, pos = [], 0
        for i, p in enumerate(self.paragraphs):
            if i:
                pos += len(PARAGRAPH_SEPARATOR)
            offsets.append(pos)
            pos += len(p.text)
        return PARAGRAPH_SEPARATOR.join(p.text for p in self.paragraphs), offsets


def load_corpus(path, strict: bool = True) -> list[ProductRecord]:
    """Read one JSON record per line.

    With ``strict=False`` malformed lines are logged with their line number
    and skipped.
    """
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(ProductRecord.from_dict(json.loads(line)))
            except (DataValidationError, KeyError, TypeError, json.JSONDecodeError) as exc:
                if strict:
                    raise DataValidationError(f"{path}:{lineno}: {exc}") from exc
                log.warning("%s:%d: skipping record: %s", path, lineno, exc)
    return records


def write_corpus(records: Iterable[ProductRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict(), ensure_ascii=False) + "\n")


# -- tokenizer & vocab -----------------------------------------------------

def split_tokens(text: str) -> tuple[list[str], list[tuple[int, int]]]:
    """Lowercased word and punctuation tokens with their char offsets."""
    toks, offs = [], []
    for m in _TOKEN_RE.finditer(text):
        toks.append(m.group().lower())
        offs.append((m.start(), m.end()))
    return toks, offs


def reconstruct(text: str, offsets: Sequence[tuple[int, int]]) -> str:
    """Rebuild ``text`` from token slices plus the whitespace gaps between them."""
    out, pos = [], 0
    for start, end in offsets:
        gap = text[pos:start]
        if gap.strip():
            raise ValueError(f"non-whitespace gap {gap!r} before offset {start}")
        out.append(gap)
        out.append(text[start:end])
        pos = end
    tail = text[pos:]
    if tail.strip():
        raise ValueError(f"non-whitespace tail {tail!r}")
    out.append(tail)
    return "".join(out)


class Vocab:
    """Token <-> id map; 0 is padding and 1 is unknown."""

    RESERVED = ("<pad>", "<unk>")

    def __init__(self, tokens: Sequence[str]):
        self.tokens = list(tokens)
        self._index = {t: i + 2 for i, t in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise ValueError("vocab tokens must be unique")

    def __len__(self) -> int:
        return len(self.tokens) + 2

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token(self, idx: int) -> str:
        if idx < 2:
            return self.RESERVED[idx]
        return self.tokens[idx - 2]

    @classmethod
    def build(cls, records: Iterable[ProductRecord], min_count: int = 1) -> "Vocab":
        counts: Counter[str] = Counter()
        for r in records:
            for p in r.paragraphs:
                counts.update(split_tokens(p.text)[0])
            for a in r.attributes:
                counts.update(split_tokens(a.key)[0])
        ordered = sorted((t for t, c in counts.items() if c >= min_count),
                         key=lambda t: (-counts[t], t))
        return cls(ordered)

    def save(self, path) -> None:
        Path(path).write_text("".join(t + "\n" for t in self.tokens), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocab":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def tokenize(text: str, vocab: Vocab) -> tuple[list[int], list[tuple[int, int]]]:
    toks, offs = split_tokens(text)
    return [vocab.id(t) for t in toks], offs


# -- examples ----------------------------------------------------------------

@dataclass
class TokenizedExample:
    product_id: str
    attribute: str
    context_ids: np.ndarray
    attribute_ids: np.ndarray
    context_pad_mask: np.ndarray
    attribute_pad_mask: np.ndarray
    gold_tags: np.ndarray
    token_to_char: list[tuple[int, int]]
    context_text: str
    gold_spans: list[tuple[int, int]]
    dropped_spans: int = 0

    @property
    def key(self) -> tuple[str, str]:
        return self.product_id, self.attribute

    def span_text(self, start: int, end: int) -> str:
        return self.context_text[self.token_to_char[start][0]:self.token_to_char[end - 1][1]]


def evidence_token_spans(record: ProductRecord, attribute_key: str, context_len: int,
                         offsets: Sequence[tuple[int, int]] | None = None
                         ) -> tuple[list[tuple[int, int]], int]:
    """Token spans of an attribute's evidences after truncation.

    A token belongs to a span when its char range overlaps the evidence.
    Spans that reach past ``context_len`` are dropped; the drop count is
    returned alongside. Overlapping spans keep the earliest.
    """
    attr = record.attribute(attribute_key)
    if attr is None or not attr.evidences:
        return [], 0
    text, para_offsets = record.context()
    if offsets is None:
        offsets = split_tokens(text)[1]
    starts = np.array([o[0] for o in offsets], dtype=np.int64)
    ends = np.array([o[1] for o in offsets], dtype=np.int64)
    spans, dropped = set(), 0
    for ev in attr.evidences:
        base = para_offsets[ev.paragraph_index]
        cb, ce = base + ev.char_begin, base + ev.char_end
        if text[cb:ce] != ev.value:
            raise DataValidationError(f"product {record.id}: evidence does not slice to {ev.value!r}")
        hit = np.flatnonzero((starts < ce) & (ends > cb))
        if hit.size == 0:
            continue
        s, e = int(hit[0]), int(hit[-1]) + 1
        if e > context_len:
            dropped += 1
            continue
        spans.add((s, e))
    kept, last_end = [], -1
    for s, e in sorted(spans):
        if s >= last_end:
            kept.append((s, e))
            last_end = e
    return kept, dropped


def _pad(ids: Sequence[int], length: int) -> tuple[np.ndarray, np.ndarray]:
    ids = list(ids)[:length]
    out = np.zeros(length, dtype=np.int64)
    out[:len(ids)] = ids
    mask = np.zeros(length, dtype=bool)
    mask[:len(ids)] = True
    return out, mask


def build_example(record: ProductRecord, attribute_key: str, vocab: Vocab, context_len: int,
                  attribute_len: int) -> TokenizedExample:
    text, _ = record.context()
    ids, offsets = tokenize(text, vocab)
    spans, dropped = evidence_token_spans(record, attribute_key, context_len, offsets)
    ctx_ids, ctx_mask = _pad(ids, context_len)
    attr_tokens, _ = tokenize(attribute_key, vocab)
    attr_ids, attr_mask = _pad(attr_tokens, attribute_len)
    if not ctx_mask.any():
        raise DataValidationError(f"product {record.id}: empty context")
    if not attr_mask.any():
        raise DataValidationError(f"product {record.id}: empty attribute key {attribute_key!r}")
    return TokenizedExample(
        product_id=record.id,
        attribute=attribute_key,
        context_ids=ctx_ids,
        attribute_ids=attr_ids,
        context_pad_mask=ctx_mask,
        attribute_pad_mask=attr_mask,
        gold_tags=spans_to_tags(spans, context_len),
        token_to_char=list(offsets[:context_len]),
        context_text=text,
        gold_spans=spans,
        dropped_spans=dropped,
    )


def build_examples(records: Iterable[ProductRecord], vocab: Vocab, context_len: int,
                   attribute_len: int) -> list[TokenizedExample]:
    return [build_example(r, a.key, vocab, context_len, attribute_len)
            for r in records for a in r.attributes]


# -- synthetic corpora -------------------------------------------------------

_ONSETS = "b c d f g h j k l m n p r s t v w z br ch dr fl gr kl pl sh st tr".split()
_VOWELS = "a e i o u ai ea oo".split()


def _word_pool(rng: np.random.Generator, n: int) -> list[str]:
    words: list[str] = []
    seen = set()
    while len(words) < n:
        syll = 1 + int(rng.integers(1, 3))
        w = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                    for _ in range(syll))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


@dataclass
class SyntheticCategory:
    keys: list[str]
    values: dict[str, list[str]]
    fillers: list[str]

    @property
    def all_values(self) -> list[str]:
        return [v for k in self.keys for v in self.values[k]]


def synthetic_category(seed: int, attrs_per_product: int, vocab_size: int) -> SyntheticCategory:
    """Disjoint pools of attribute keys, per-key value words, and filler words."""
    if vocab_size <= attrs_per_product * 4:
        raise ValueError(f"vocab_size must exceed 4 * attrs_per_product ({vocab_size})")
    rng = np.random.default_rng([seed, 1])
    n_keys = 2 * attrs_per_product
    n_value_words = max(2, min(8, (vocab_size - n_keys) // (2 * n_keys)))
    words = _word_pool(rng, vocab_size)
    keys = words[:n_keys]
    pos = n_keys
    values = {}
    for k in keys:
        pool = words[pos:pos + n_value_words]
        pos += n_value_words
        # half single-word values, the rest paired into two-word values; each
        # word has exactly one role so B/I is recoverable from the value itself
        n_single = (len(pool) + 1) // 2
        phrases = list(pool[:n_single])
        rest = pool[n_single:]
        phrases += [f"{rest[j]} {rest[j + 1]}" for j in range(0, len(rest) - 1, 2)]
        values[k] = phrases
    return SyntheticCategory(keys=keys, values=values, fillers=words[pos:])


def synthesize_corpus(seed: int, n_products: int, attrs_per_product: int, vocab_size: int,
                      context_len_tokens: int = 24, noise_p: float = 0.0) -> list[ProductRecord]:
    """Products whose context embeds ``key : value`` fragments among filler words.

    With probability ``noise_p`` up to 5 random category values are appended
    to the description, and independently with the same probability an extra
    paragraph of up to 5 such values is added. Labels stay on the original
    evidences.
    """
    cat = synthetic_category(seed, attrs_per_product, vocab_size)
    rng = np.random.default_rng([seed, 2])
    all_values = cat.all_values
    records = []
    for n in range(n_products):
        keys = [cat.keys[i] for i in sorted(rng.choice(len(cat.keys), attrs_per_product,
                                                       replace=False))]
        rng.shuffle(keys)
        chosen = {k: cat.values[k][rng.integers(len(cat.values[k]))] for k in keys}
        n_fragments_tokens = sum(2 + len(v.split()) for v in chosen.values())
        n_fill = max(attrs_per_product + 1, context_len_tokens - n_fragments_tokens - 2)
        fill = [cat.fillers[i] for i in rng.integers(len(cat.fillers), size=n_fill)]
        # split fillers into gaps around the fragments
        cuts = np.sort(rng.choice(np.arange(1, n_fill), size=len(keys), replace=False))
        gaps = np.split(np.array(fill, dtype=object), cuts)
        title = " ".join(gaps[0]).capitalize()
        spans: dict[str, tuple[int, int]] = {}
        desc = ""
        for key, gap in zip(keys, gaps[1:]):
            desc += ("" if not desc else " ") + f"{key} : "
            begin = len(desc)
            desc += chosen[key]
            spans[key] = (begin, len(desc))
            desc += " ,"
            if len(gap):
                desc += " " + " ".join(gap)
        desc += " ."
        if noise_p > 0 and rng.random() < noise_p:
            extra = [all_values[i] for i in rng.integers(len(all_values),
                                                         size=int(rng.integers(1, 6)))]
            desc += " " + " ".join(extra)
        paragraphs = [Paragraph("title", title), Paragraph("description", desc)]
        if noise_p > 0 and rng.random() < noise_p:
            extra = [all_values[i] for i in rng.integers(len(all_values),
                                                         size=int(rng.integers(1, 6)))]
            paragraphs.append(Paragraph("metadata", " ".join(extra)))
        attributes = [Attribute(k, [Evidence(1, spans[k][0], spans[k][1], chosen[k])])
                      for k in keys]
        records.append(ProductRecord(id=f"p{seed}-{n:06d}", paragraphs=paragraphs,
                                     attributes=attributes))
    return records


def rule_based_extract(record: ProductRecord, attribute_key: str, context_len: int
                       ) -> list[tuple[int, int]]:
    """Baseline: tag the word run between ``key :`` and the next punctuation mark."""
    text, _ = record.context()
    toks, _ = split_tokens(text)
    toks = toks[:context_len]
    key = attribute_key.lower()
    spans = []
    for i in range(len(toks) - 2):
        if toks[i] == key and toks[i + 1] == ":":
            j = i + 2
            while j < len(toks) and re.fullmatch(r"\w+", toks[j]):
                j += 1
            if j > i + 2:
                spans.append((i + 2, j))
    return spans
