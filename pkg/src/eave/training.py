"""Training loop with heavy/light learning-rate groups, evaluation, and extraction."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .cache import RepCache, get_or_compute
from .config import EaveConfig, TrainConfig
from .data import ProductRecord, TokenizedExample, Vocab, build_example, build_examples
from .encoder import EaveModel, RepKind, save_checkpoint
from .tagging import EvalReport, SpanPrediction, decode_spans, evaluate, tagging_loss
from .tensor import Tensor

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, manifest: "RunManifest"):
        super().__init__(message)
        self.manifest = manifest


# -- optimizer -------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(groups: dict[str, tuple[list[tuple[str, Tensor]], float]], state: AdamState,
              train_config: TrainConfig) -> AdamState:
    """One bias-corrected Adam update.

    ``groups`` maps a group name to ``(named params, learning rate)``. A group
    with learning rate 0 is left untouched bit for bit.
    """
    adam = train_config.adam
    for _, (named, _) in groups.items():
        for name, p in named:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient in {name}")
    state.step += 1
    t = state.step
    c1 = 1.0 - adam.beta1 ** t
    c2 = 1.0 - adam.beta2 ** t
    for _, (named, lr) in groups.items():
        if lr == 0.0:
            continue
        for name, p in named:
            if p.grad is None:
                continue
            g = p.grad
            m = state.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                v = np.zeros_like(p.data)
            else:
                v = state.v[name]
            m = adam.beta1 * m + (1.0 - adam.beta1) * g
            v = adam.beta2 * v + (1.0 - adam.beta2) * g * g
            state.m[name], state.v[name] = m, v
            update = lr * (m / c1) / (np.sqrt(v / c2) + adam.eps)
            p.data = (p.data - update).astype(p.data.dtype)
    return state


def param_groups(model: EaveModel, train_config: TrainConfig):
    """Heavy encoder at ``beta * lr``; light encoder, fusion, and head at ``lr``."""
    return {
        "heavy": (model.heavy_named_parameters(), train_config.lr_heavy),
        "light": (model.light_named_parameters(), train_config.lr_light),
    }


# -- batching ----------------------------------------------------------------

@dataclass
class Batch:
    ctx_ids: np.ndarray
    attr_ids: np.ndarray
    ctx_mask: np.ndarray
    attr_mask: np.ndarray
    tags: np.ndarray


def collate(examples: Sequence[TokenizedExample]) -> Batch:
    return Batch(
        ctx_ids=np.stack([e.context_ids for e in examples]),
        attr_ids=np.stack([e.attribute_ids for e in examples]),
        ctx_mask=np.stack([e.context_pad_mask for e in examples]),
        attr_mask=np.stack([e.attribute_pad_mask for e in examples]),
        tags=np.stack([e.gold_tags for e in examples]),
    )


def batch_loss(model: EaveModel, batch: Batch) -> Tensor:
    logits = model.logits(batch.ctx_ids, batch.attr_ids, batch.ctx_mask, batch.attr_mask)
    return tagging_loss(logits, batch.tags, batch.ctx_mask)


def split_by_product(records: Sequence[ProductRecord], eval_fraction: float = 0.1
                     ) -> tuple[list[ProductRecord], list[ProductRecord]]:
    """Deterministic split on a hash of the product id."""
    train, held = [], []
    buckets = int(round(eval_fraction * 1000))
    for r in records:
        h = int.from_bytes(hashlib.blake2b(r.id.encode(), digest_size=8).digest(), "little")
        (held if h % 1000 < buckets else train).append(r)
    return train, held


def predict_examples(model: EaveModel, examples: Sequence[TokenizedExample],
                     batch_size: int = 64) -> dict[tuple[str, str], list[SpanPrediction]]:
    model.eval_mode()
    out = {}
    for i in range(0, len(examples), batch_size):
        chunk = examples[i:i + batch_size]
        b = collate(chunk)
        logits = model.logits(b.ctx_ids, b.attr_ids, b.ctx_mask, b.attr_mask).data
        for ex, lg in zip(chunk, logits):
            spans = decode_spans(lg, mask=ex.context_pad_mask)
            out[ex.key] = [SpanPrediction(s.token_start, s.token_end_exclusive,
                                          ex.span_text(s.token_start, s.token_end_exclusive))
                           for s in spans]
    return out


def evaluate_model(model: EaveModel, examples: Sequence[TokenizedExample]) -> EvalReport:
    preds = predict_examples(model, examples)
    golds = {ex.key: ex.gold_spans for ex in examples}
    return evaluate(preds, golds)


# -- training ----------------------------------------------------------------

@dataclass
class RunManifest:
    eave_config: dict
    train_config: dict
    seed: int
    losses: list[float] = field(default_factory=list)
    evals: list[dict] = field(default_factory=list)
    final_eval: dict | None = None
    wall_clock_s: float = 0.0
    checkpoint: str | None = None
    n_train_examples: int = 0
    n_eval_examples: int = 0

    def to_dict(self) -> dict:
        return dict(vars(self))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))


@dataclass
class TrainResult:
    model: EaveModel
    vocab: Vocab
    manifest: RunManifest
    eval_examples: list[TokenizedExample]


def negative_examples(records: Sequence[ProductRecord], vocab: Vocab, config: EaveConfig, k: int,
                      rng: np.random.Generator) -> list[TokenizedExample]:
    """Up to ``k`` keys per product drawn from keys the product does not carry."""
    all_keys = sorted({a.key for r in records for a in r.attributes})
    out = []
    for rec in records:
        absent = [key for key in all_keys if key not in rec.attribute_keys]
        picks = rng.choice(len(absent), size=min(k, len(absent)), replace=False)
        for i in sorted(picks):
            out.append(build_example(rec, absent[i], vocab, config.context_len, config.attribute_len))
    return out


def train(corpus: Sequence[ProductRecord], eave_config: EaveConfig, train_config: TrainConfig,
          out_dir=None, eval_corpus: Sequence[ProductRecord] | None = None,
          vocab: Vocab | None = None) -> TrainResult:
    """Fit a fresh model on ``corpus``.

    Without ``eval_corpus`` a 90/10 split by product id hash provides the
    held-out set.
    """
    if not corpus:
        raise ValueError("training corpus is empty")
    start = time.perf_counter()
    if eval_corpus is None:
        train_records, eval_records = split_by_product(corpus)
    else:
        train_records, eval_records = list(corpus), list(eval_corpus)
    if vocab is None:
        vocab = Vocab.build(train_records)
    config = eave_config.with_vocab_size(len(vocab))
    model = EaveModel(config, seed=train_config.seed)
    rng = np.random.default_rng(train_config.seed)
    train_ex = build_examples(train_records, vocab, config.context_len, config.attribute_len)
    if train_config.negatives_per_product:
        train_ex += negative_examples(train_records, vocab, config, train_config.negatives_per_product,
                                      rng)
    eval_ex = build_examples(eval_records, vocab, config.context_len, config.attribute_len)
    manifest = RunManifest(config.to_dict(), train_config.to_dict(), train_config.seed,
                           n_train_examples=len(train_ex), n_eval_examples=len(eval_ex))

    state = AdamState()
    groups = param_groups(model, train_config)
    order = np.array([], dtype=np.int64)
    cursor = 0
    for step in range(1, train_config.max_steps + 1):
        if cursor + train_config.batch_size > len(order):
            order = rng.permutation(len(train_ex))
            cursor = 0
        idx = order[cursor:cursor + train_config.batch_size]
        cursor += train_config.batch_size
        batch = collate([train_ex[i] for i in idx])
        model.train_mode(train_config.dropout, rng)
        model.zero_grad()
        loss = batch_loss(model, batch)
        value = loss.item()
        manifest.losses.append(value)
        if not np.isfinite(value):
            manifest.wall_clock_s = time.perf_counter() - start
            raise TrainingDiverged(f"loss became {value} at step {step}", manifest)
        loss.backward()
        adam_step(groups, state, train_config)
        if train_config.eval_every and step % train_config.eval_every == 0 and eval_ex:
            report = evaluate_model(model, eval_ex)
            manifest.evals.append({"step": step, **report.to_dict()})
            log.info("step %d loss %.4f eval f1 %.4f", step, value, report.f1)
    model.eval_mode()
    if eval_ex:
        manifest.final_eval = evaluate_model(model, eval_ex).to_dict()
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        ckpt = out / "model.ckpt"
        save_checkpoint(model, ckpt, {"vocab": vocab.tokens})
        manifest.checkpoint = str(ckpt)
    manifest.wall_clock_s = time.perf_counter() - start
    if out_dir is not None:
        manifest.save(Path(out_dir) / "manifest.json")
    return TrainResult(model, vocab, manifest, eval_ex)


# -- extraction ----------------------------------------------------------------

class Extractor:
    """Per-product extraction reusing heavy context reps across attributes.

    Heavy reps come from an in-process memo, then the optional disk cache,
    then a fresh heavy pass (which is written back to the cache).
    """

    def __init__(self, model: EaveModel, vocab: Vocab, cache: RepCache | None = None):
        self.model = model
        self.vocab = vocab
        self.cache = cache
        self._memo: dict = {}
        self._fingerprint = model.fingerprint()
        self.cache_hits = 0

    def refresh_fingerprint(self) -> None:
        self._fingerprint = self.model.fingerprint()
        self._memo.clear()

    def logits(self, example: TokenizedExample) -> np.ndarray:
        fp = self._fingerprint
        reps_c, hit_c = get_or_compute(self.cache, RepKind.CONTEXT, example.context_ids,
                                       self.model, fp, self._memo)
        reps_a, hit_a = get_or_compute(self.cache, RepKind.ATTRIBUTE, example.attribute_ids,
                                       self.model, fp, self._memo)
        self.cache_hits += int(hit_c) + int(hit_a)
        return self.model.logits_from_reps(example.context_ids, example.attribute_ids,
                                           reps_c, reps_a).data

    def extract(self, product: ProductRecord, attribute_keys: Sequence[str] | None = None
                ) -> dict[str, list[SpanPrediction]]:
        cfg = self.model.config
        keys = product.attribute_keys if attribute_keys is None else list(attribute_keys)
        self.model.eval_mode()
        # weights may have changed since the last call; stale reps must miss
        self._fingerprint = self.model.fingerprint()
        out = {}
        for key in keys:
            ex = build_example(product, key, self.vocab, cfg.context_len, cfg.attribute_len)
            spans = decode_spans(self.logits(ex), mask=ex.context_pad_mask)
            out[key] = [SpanPrediction(s.token_start, s.token_end_exclusive,
                                       ex.span_text(s.token_start, s.token_end_exclusive))
                        for s in spans]
        return out


def extract(product: ProductRecord, attribute_keys: Sequence[str], model: EaveModel,
            vocab: Vocab, cache: RepCache | None = None) -> dict[str, list[SpanPrediction]]:
    return Extractor(model, vocab, cache).extract(product, attribute_keys)
