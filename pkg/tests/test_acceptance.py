"""Acceptance suite. Each test prints one PASS/FAIL line and then asserts.

Run alone with ``pytest tests/test_acceptance.py -v``.
"""

import itertools
import time
from dataclasses import replace

import numpy as np
import pytest

from eave.cache import RepCache, deserialize, serialize
from eave.config import FusionLocation, FusionMethod, TrainConfig, tiny_config
from eave.cost import (GIGA, REFERENCE_ANCHORS, amortized_cost, encoder_flops, mave_config,
                       speedup_report, t5_large)
from eave.data import Vocab, build_examples, reconstruct, split_tokens, synthesize_corpus
from eave.encoder import EaveModel, HeavyReps, RepKind, layer_mapping
from eave.tagging import decode_spans, spans_to_tags, tagging_loss
from eave.tensor import finite_diff_check
from eave.training import Extractor, evaluate_model, split_by_product, train


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}  {detail}")
        assert ok, f"criterion {number} failed: {detail}"

    return emit


def random_inputs(config, n, rng):
    v = config.heavy.vocab_size
    ctx = rng.integers(2, v, size=(n, config.context_len))
    attr = rng.integers(2, v, size=(n, config.attribute_len))
    ctx_mask = np.ones_like(ctx, dtype=bool)
    attr_mask = np.ones_like(attr, dtype=bool)
    for i in range(n):
        ctx_mask[i, rng.integers(1, config.context_len + 1):] = False
        attr_mask[i, rng.integers(1, config.attribute_len + 1):] = False
    return ctx * ctx_mask, attr * attr_mask, ctx_mask, attr_mask


def test_01_gradient_suite(report):
    # weights are jittered off the 0.02 init so the checked gradients are not all tiny
    start = time.perf_counter()
    worst, worst_abs, n_coords = 0.0, 0.0, []
    for method, location in itertools.product(FusionMethod, FusionLocation):
        cfg = tiny_config(fusion_method=method, fusion_location=location)
        model = EaveModel(cfg, seed=1).to(np.float64)
        rng = np.random.default_rng(2)
        for _, p in model.named_parameters():
            p.data = p.data + rng.normal(size=p.data.shape) * 0.1
        ctx = rng.integers(2, cfg.heavy.vocab_size, size=(2, 6))
        ctx[1, 4:] = 0
        attr = rng.integers(2, cfg.heavy.vocab_size, size=(2, 2))
        attr[0, 1] = 0
        tags = rng.integers(0, 3, size=(2, 6))

        def loss():
            return tagging_loss(model.logits(ctx, attr, ctx != 0, attr != 0), tags, ctx != 0)

        r = finite_diff_check(loss, model.parameters(), step=1e-3, n_samples=200, seed=3, floor=1e-4)
        worst, worst_abs = max(worst, r.max_rel_error), max(worst_abs, r.max_abs_error)
        n_coords.append(r.n_checked)
    elapsed = time.perf_counter() - start
    ok = worst < 1e-3 and min(n_coords) >= 200 and elapsed < 120
    report(1, "gradient suite 3 methods x 6 locations", ok,
           f"max rel {worst:.2e}, max abs {worst_abs:.2e}, {min(n_coords)}+ coords each, {elapsed:.0f}s")


def test_02_alpha_zero_degeneracy(report):
    rng = np.random.default_rng(0)
    mismatches = 0
    for i in range(50):
        location = list(FusionLocation)[i % len(FusionLocation)]
        cfg = tiny_config(alpha=0.0, fusion_location=location)
        model = EaveModel(cfg, seed=i)
        batch = random_inputs(cfg, 1, rng)
        fused = model.logits(*batch).data
        light_only = model.logits(*batch, use_heavy=False).data
        mismatches += fused.tobytes() != light_only.tobytes()
    report(2, "alpha=0 logits bit-identical to light-only model", mismatches == 0,
           f"{50 - mismatches}/50 identical")


def test_03_alpha_one_endpoint(report):
    base = tiny_config()
    three = dict(heavy=replace(base.heavy, num_layers=3), light=replace(base.light, num_layers=3),
                 alpha=1.0, layer_mapping="first_k")
    cfg = tiny_config(**three)
    batch = random_inputs(cfg, 3, np.random.default_rng(1))
    failures = []
    for location in FusionLocation:
        model = EaveModel(tiny_config(**three, fusion_location=location), seed=4)

        def fused_outputs():
            captured = []
            original = EaveModel._fuse_fn

            def spy(self, *args):
                inner = original(self, *args)

                def hook(y):
                    out = inner(y)
                    captured.append(out.data.copy())
                    return out

                return hook

            model._fuse_fn = spy.__get__(model)
            try:
                model.logits(*batch)
            finally:
                del model._fuse_fn
            return captured

        before = fused_outputs()
        for layer_idx in range(cfg.light.num_layers):
            rng = np.random.default_rng(100 + layer_idx)
            for _, p in model.light.layers[layer_idx].attn.named_parameters():
                p.data = (rng.normal(size=p.data.shape) * 2.0).astype(p.data.dtype)
            after = fused_outputs()
            if not np.array_equal(after[layer_idx], before[layer_idx]):
                failures.append((location.value, layer_idx))
    report(3, "alpha=1 fuse output ignores light self-attention", not failures,
           f"{len(FusionLocation) * cfg.light.num_layers - len(failures)}"
           f"/{len(FusionLocation) * cfg.light.num_layers} (location, layer) pairs exact")


def test_04_cache_transparency(report, tmp_path):
    records = synthesize_corpus(3, 50, 2, 80, context_len_tokens=12)
    vocab = Vocab.build(records)
    cfg = tiny_config(context_len=14, attribute_len=2).with_vocab_size(len(vocab))
    model = EaveModel(cfg, seed=5)
    examples = build_examples(records, vocab, cfg.context_len, cfg.attribute_len)
    assert len(examples) == 100
    cache = RepCache(tmp_path / "cache")
    cold = [Extractor(model, vocab, cache).logits(ex) for ex in examples]
    model.reset_counters()
    warm_extractor = Extractor(model, vocab, cache)
    warm = [warm_extractor.logits(ex) for ex in examples]
    diff = max(float(np.abs(a - b).max()) for a, b in zip(cold, warm))
    forwards = sum(model.heavy_forward_counts.values())
    report(4, "warm cache matches cold extraction", diff <= 1e-6 and forwards == 0,
           f"max |diff| {diff:.1e} over 100 pairs, heavy forwards {forwards}")


TABLE4 = {
    "even_offset:0": [0, 3, 6, 9, 12, 15, 18, 21],
    "even_offset:1": [1, 4, 7, 10, 13, 16, 19, 22],
    "even_offset:2": [2, 5, 8, 11, 14, 17, 20, 23],
    "last_layer_only": [23] * 8,
    "last_k": [16, 17, 18, 19, 20, 21, 22, 23],
    "first_k": [0, 1, 2, 3, 4, 5, 6, 7],
}


def test_05_layer_mapping_table(report):
    matched = [s for s, rows in TABLE4.items() if layer_mapping(24, 8, s) == rows]
    report(5, "layer mapping rows for (24, 8)", len(matched) == 6, f"{len(matched)}/6 rows exact")


def test_06_flops_anchors(report):
    start = time.perf_counter()
    joint = encoder_flops(t5_large(), 544) / GIGA
    per_attr = amortized_cost(mave_config(), 1, include_precompute=False).amortized_per_product / GIGA
    elapsed_ms = (time.perf_counter() - start) * 1e3
    e1 = abs(joint - REFERENCE_ANCHORS["mave_t5_large_joint"]) / REFERENCE_ANCHORS["mave_t5_large_joint"]
    e2 = abs(per_attr - REFERENCE_ANCHORS["mave_eave_per_attribute"]) / REFERENCE_ANCHORS["mave_eave_per_attribute"]
    report(6, "FLOPs anchors", e1 < 0.20 and e2 < 0.25 and elapsed_ms < 1000,
           f"joint {joint:.2f} G ({e1:.1%} off), per-attribute {per_attr:.2f} G ({e2:.1%} off), "
           f"{elapsed_ms:.1f} ms")


def test_07_amortized_anchors(report):
    n15 = amortized_cost(mave_config(), 15).amortized_per_product / GIGA
    n5 = amortized_cost(mave_config(), 5).amortized_per_product / GIGA
    e15 = abs(n15 - REFERENCE_ANCHORS["mave_shoes_eave_n15"]) / REFERENCE_ANCHORS["mave_shoes_eave_n15"]
    e5 = abs(n5 - REFERENCE_ANCHORS["mave_dresses_eave_n5"]) / REFERENCE_ANCHORS["mave_dresses_eave_n5"]
    speedups = [r["speedup"] for r in speedup_report(mave_config(), range(1, 51))]
    increasing = all(b > a for a, b in zip(speedups, speedups[1:]))
    report(7, "amortized anchors and monotone speedup", e15 < 0.25 and e5 < 0.25 and increasing,
           f"N=15 {n15:.2f} G ({e15:.1%} off), N=5 {n5:.2f} G ({e5:.1%} off), "
           f"speedup increasing over N=1..50: {increasing}")


def test_08_trainability(report, clean_run):
    m = clean_run.manifest
    f1 = m.final_eval["f1"]
    ok = f1 >= 0.90 and len(m.losses) <= 2000 and m.wall_clock_s < 600
    report(8, "trainability on clean synthetic data", ok,
           f"held-out F1 {f1:.3f} after {len(m.losses)} steps in {m.wall_clock_s:.0f}s")


def test_09_beta_freeze(report):
    records = synthesize_corpus(4, 40, 2, 60, context_len_tokens=12)
    cfg = tiny_config(context_len=14, attribute_len=2)

    def heavy_bytes(model):
        return [p.data.tobytes() for _, p in model.heavy_named_parameters()]

    frozen = train(records, cfg, TrainConfig(max_steps=100, beta=0.0, lr_light=3e-3, seed=0))
    initial = heavy_bytes(EaveModel(frozen.model.config, seed=0))
    moving = train(records, cfg, TrainConfig(max_steps=100, beta=1.0, lr_light=3e-3, seed=0))
    same_frozen = heavy_bytes(frozen.model) == initial
    changed = sum(a != b for a, b in zip(heavy_bytes(moving.model), initial))
    light_moved = any(p.data.tobytes() != q.data.tobytes() for (_, p), (_, q) in
                      zip(frozen.model.light_named_parameters(),
                          EaveModel(frozen.model.config, seed=0).light_named_parameters()))
    report(9, "beta=0 freezes heavy weights, beta=1 moves them",
           same_frozen and changed > 0 and light_moved,
           f"beta=0 heavy identical: {same_frozen}, beta=1 heavy tensors changed: {changed}")


def test_10_round_trips(report):
    rng = np.random.default_rng(10)
    bio_ok = 0
    for _ in range(1000):
        length = int(rng.integers(1, 30))
        spans, pos = [], 0
        while pos < length:
            pos += int(rng.integers(0, 4))
            if pos >= length:
                break
            end = min(length, pos + int(rng.integers(1, 4)))
            spans.append((pos, end))
            pos = end
        decoded = [(s.token_start, s.token_end_exclusive)
                   for s in decode_spans(spans_to_tags(spans, length))]
        bio_ok += decoded == spans

    cache_ok = 0
    for _ in range(100):
        seq = int(rng.integers(1, 40))
        d = int(rng.integers(1, 64))
        layers = sorted(int(i) for i in rng.choice(24, size=int(rng.integers(1, 5)), replace=False))
        kind = RepKind.CONTEXT if rng.random() < 0.5 else RepKind.ATTRIBUTE
        reps = HeavyReps(kind, int(rng.integers(0, 2 ** 63)),
                         {i: rng.normal(size=(seq, d)).astype(np.float32) for i in layers}, seq)
        raw = serialize(reps, 77)
        back, content = deserialize(raw)
        cache_ok += (content == 77 and back.kind == reps.kind and back.fingerprint == reps.fingerprint
                     and all(back.per_layer[i].tobytes() == reps.per_layer[i].tobytes() for i in layers)
                     and serialize(back, 77) == raw)

    lines = [p.text for rec in synthesize_corpus(9, 600, 4, 200, noise_p=0.5) for p in rec.paragraphs]
    alphabet = list("abcxyz  \t\n.,:;-/") + ["é", "ß", "½", "€", "日本", "🙂", " "]
    lines = lines[:700] + ["".join(rng.choice(alphabet, size=int(rng.integers(0, 60))))
                           for _ in range(1000 - len(lines[:700]))]
    tok_ok = sum(reconstruct(line, split_tokens(line)[1]) == line for line in lines)

    ok = bio_ok == 1000 and cache_ok == 100 and tok_ok == len(lines) == 1000
    report(10, "round trips", ok,
           f"BIO {bio_ok}/1000, cache entries {cache_ok}/100, tokenizer lines {tok_ok}/{len(lines)}")


def test_11_noise_probe(report, clean_run, noisy_run, noisy_corpus):
    cfg = clean_run.model.config
    _, noisy_eval = split_by_product(noisy_corpus)
    clean_on_noisy = evaluate_model(
        clean_run.model, build_examples(noisy_eval, clean_run.vocab, cfg.context_len, cfg.attribute_len)).f1
    clean_clean = clean_run.manifest.final_eval["f1"]
    noisy_noisy = noisy_run.manifest.final_eval["f1"]
    ok = abs(noisy_noisy - clean_clean) <= 0.05 and clean_on_noisy < noisy_noisy
    report(11, "noise robustness probe", ok,
           f"clean/clean {clean_clean:.3f}, noisy/noisy {noisy_noisy:.3f}, "
           f"clean/noisy {clean_on_noisy:.3f}")
