"""BIO tagging head, span decoding, and span-level P/R/F1."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .tensor import Tensor, cross_entropy

O, B, I = 0, 1, 2
TAG_NAMES = ("O", "B", "I")


@dataclass(frozen=True, order=True)
class SpanPrediction:
    token_start: int
    token_end_exclusive: int
    text: str = field(default="", compare=False)

    def __post_init__(self):
        if not 0 <= self.token_start < self.token_end_exclusive:
            raise ValueError(f"invalid span [{self.token_start}, {self.token_end_exclusive})")

    @property
    def bounds(self) -> tuple[int, int]:
        return self.token_start, self.token_end_exclusive


def tag_logits(states: Tensor, head, context_len: int) -> Tensor:
    """Project the context-segment states to three tag scores per token."""
    ctx = states[..., :context_len, :]
    return ctx @ head.weight + head.bias


def tagging_loss(logits: Tensor, gold_tags, pad_mask) -> Tensor:
    """Mean cross-entropy over non-pad context tokens.

    ``pad_mask`` is True on real tokens.
    """
    return cross_entropy(logits, gold_tags, pad_mask)


def spans_to_tags(spans: Iterable[tuple[int, int]], length: int) -> np.ndarray:
    tags = np.zeros(length, dtype=np.int64)
    for start, end in spans:
        tags[start] = B
        tags[start + 1:end] = I
    return tags


def decode_spans(tags_or_logits, tokens: Sequence[str] | None = None,
                 mask=None) -> list[SpanPrediction]:
    """Turn a BIO sequence (or logits ``[S, 3]``) into spans.

    An I that does not continue a span opens a new one. Positions where
    ``mask`` is False are treated as O.
    """
    arr = np.asarray(tags_or_logits.data if isinstance(tags_or_logits, Tensor) else tags_or_logits)
    tags = arr.argmax(axis=-1) if arr.ndim == 2 else arr.astype(np.int64)
    if mask is not None:
        tags = np.where(np.asarray(mask, dtype=bool), tags, O)
    spans = []
    start = None
    for i, t in enumerate(tags):
        if t == B or (t == I and start is None):
            if start is not None:
                spans.append((start, i))
            start = i
        elif t == O and start is not None:
            spans.append((start, i))
            start = None
    if start is not None:
        spans.append((start, len(tags)))
    out = []
    for s, e in spans:
        text = " ".join(tokens[s:e]) if tokens is not None else ""
        out.append(SpanPrediction(s, e, text))
    return out


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    true_positive: int
    predicted: int
    gold: int
    per_attribute: dict[str, "EvalReport"] = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "true_positive": self.true_positive,
            "predicted": self.predicted,
            "gold": self.gold,
        }
        if self.per_attribute:
            d["per_attribute"] = {k: v.to_dict() for k, v in sorted(self.per_attribute.items())}
        return d


def _prf(tp: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gold if n_gold else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def _as_bounds(spans) -> set[tuple[int, int]]:
    out = set()
    for s in spans:
        if isinstance(s, SpanPrediction):
            out.add(s.bounds)
        else:
            out.add((int(s[0]), int(s[1])))
    return out


def _keyed(items, what: str) -> dict:
    if isinstance(items, dict):
        return items
    out = {}
    for key, spans in items:
        if key in out:
            raise ValueError(f"duplicate {what} key {key!r}")
        out[key] = spans
    return out


def evaluate(predictions, golds) -> EvalReport:
    """Micro-averaged exact-boundary span P/R/F1.

    Both arguments map ``(product_id, attribute)`` to a span list; an
    iterable of ``(key, spans)`` pairs is also accepted and checked for
    duplicate keys. Missing predictions count as empty.
    """
    preds = _keyed(predictions, "prediction")
    gold = _keyed(golds, "gold")
    counts = defaultdict(lambda: [0, 0, 0])
    for key in set(preds) | set(gold):
        p = _as_bounds(preds.get(key, ()))
        g = _as_bounds(gold.get(key, ()))
        attr = key[1] if isinstance(key, tuple) and len(key) > 1 else ""
        c = counts[attr]
        c[0] += len(p & g)
        c[1] += len(p)
        c[2] += len(g)
    per_attr = {}
    total = [0, 0, 0]
    for attr, (tp, n_pred, n_gold) in counts.items():
        per_attr[attr] = EvalReport(*_prf(tp, n_pred, n_gold), tp, n_pred, n_gold)
        total = [total[0] + tp, total[1] + n_pred, total[2] + n_gold]
    return EvalReport(*_prf(*total), *total, per_attribute=per_attr)
