"""Command-line entry point: ``eave <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import cost
from .cache import RepCache, precompute_corpus
from .config import load_configs
from .data import (
    ProductRecord,
    Vocab,
    build_example,
    build_examples,
    evidence_token_spans,
    load_corpus,
    synthesize_corpus,
    write_corpus,
)
from .encoder import load_checkpoint
from .tagging import evaluate
from .training import Extractor, train

log = logging.getLogger("eave")


def _load_model(path):
    model, meta = load_checkpoint(path)
    vocab = Vocab(meta.get("vocab", []))
    return model, vocab


def cmd_train(args) -> int:
    model_cfg, train_cfg = load_configs(args.config)
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    if args.max_steps is not None:
        train_cfg = replace(train_cfg, max_steps=args.max_steps)
    records = load_corpus(args.corpus, strict=not args.skip_bad)
    result = train(records, model_cfg, train_cfg, out_dir=args.out)
    final = result.manifest.final_eval or {}
    print(json.dumps({"checkpoint": result.manifest.checkpoint, "final_eval": final,
                      "wall_clock_s": result.manifest.wall_clock_s}, indent=2))
    return 0


def cmd_extract(args) -> int:
    model, vocab = _load_model(args.checkpoint)
    cache = RepCache(args.cache) if args.cache else None
    extractor = Extractor(model, vocab, cache)
    records = load_corpus(args.corpus, strict=not args.skip_bad)
    dump_dir = Path(args.dump_activations) if args.dump_activations else None
    if dump_dir is not None:
        dump_dir.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        for r in records:
            keys = args.attribute or r.attribute_keys
            result = extractor.extract(r, keys)
            for key, spans in result.items():
                fh.write(json.dumps({
                    "id": r.id,
                    "attribute": key,
                    "spans": [{"start": s.token_start, "end": s.token_end_exclusive,
                               "text": s.text} for s in spans],
                }, ensure_ascii=False) + "\n")
                n += 1
                if dump_dir is not None:
                    _dump_logits(extractor, r, key, dump_dir / f"{r.id}.{key}.txt")
    counts = model.heavy_forward_counts
    print(json.dumps({"predictions": n, "cache_hits": extractor.cache_hits,
                      "heavy_forwards": counts}))
    return 0


def _dump_logits(extractor: Extractor, record: ProductRecord, key: str, path: Path) -> None:
    from .tensor import Tensor

    cfg = extractor.model.config
    ex = build_example(record, key, extractor.vocab, cfg.context_len, cfg.attribute_len)
    with open(path, "w") as fh:
        Tensor(extractor.logits(ex)).dump(fh)


def cmd_precompute(args) -> int:
    model, vocab = _load_model(args.checkpoint)
    cfg = model.config
    records = load_corpus(args.corpus, strict=not args.skip_bad)
    examples = build_examples(records, vocab, cfg.context_len, cfg.attribute_len)
    stats = precompute_corpus(examples, model, RepCache(args.cache))
    print(json.dumps(stats))
    return 0


def _read_jsonl(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def _span_rows(rows: list[dict], what: str, context_len: int | None) -> list:
    out = []
    for row in rows:
        if "paragraphs" in row:
            record = ProductRecord.from_dict(row)
            limit = context_len if context_len is not None else sys.maxsize
            for attr in record.attributes:
                spans, _ = evidence_token_spans(record, attr.key, limit)
                out.append(((record.id, attr.key), spans))
        else:
            spans = [(s["start"], s["end"]) for s in row.get("spans", [])]
            out.append(((row["id"], row["attribute"]), spans))
    return out


def cmd_eval(args) -> int:
    preds = _span_rows(_read_jsonl(args.pred), "prediction", args.context_len)
    golds = _span_rows(_read_jsonl(args.gold), "gold", args.context_len)
    report = evaluate(preds, golds)
    print(json.dumps(report.to_dict()))
    return 0


def cmd_bench_flops(args) -> int:
    model_cfg, _ = load_configs(args.config)
    report = cost.amortized_cost(model_cfg, args.n_attrs, args.include_precompute)
    print(json.dumps(report.to_dict(scale=cost.GIGA), indent=2))
    rows = cost.speedup_report(model_cfg, range(1, max(args.n_attrs, 1) + 1),
                               args.include_precompute)
    print(cost.format_table(rows))
    return 0


def cmd_synth(args) -> int:
    records = synthesize_corpus(args.seed, args.n_products, args.attrs_per_product,
                                args.vocab_size, args.context_tokens, args.noise_p)
    write_corpus(records, args.out)
    print(json.dumps({"products": len(records), "out": args.out}))
    return 0


def cmd_cache_gc(args) -> int:
    removed = RepCache(args.cache).gc(args.max_bytes)
    print(json.dumps({"removed": len(removed)}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="eave", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model on a JSONL corpus")
    t.add_argument("--corpus", required=True)
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--skip-bad", action="store_true", help="skip malformed corpus lines")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("extract", help="extract attribute values with a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--cache")
    e.add_argument("--out", required=True)
    e.add_argument("--attribute", action="append",
                   help="attribute key to extract (repeatable); defaults to each record's keys")
    e.add_argument("--dump-activations", metavar="DIR")
    e.add_argument("--skip-bad", action="store_true")
    e.set_defaults(func=cmd_extract)

    pc = sub.add_parser("precompute", help="fill the heavy representation cache")
    pc.add_argument("--checkpoint", required=True)
    pc.add_argument("--corpus", required=True)
    pc.add_argument("--cache", required=True)
    pc.add_argument("--skip-bad", action="store_true")
    pc.set_defaults(func=cmd_precompute)

    ev = sub.add_parser("eval", help="span-level P/R/F1 of predictions against gold")
    ev.add_argument("--pred", required=True)
    ev.add_argument("--gold", required=True, help="predictions-format JSONL or a corpus JSONL")
    ev.add_argument("--context-len", type=int,
                    help="drop gold spans past this many context tokens (corpus gold only)")
    ev.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench-flops", help="analytical FLOPs report")
    b.add_argument("--config", required=True)
    b.add_argument("--n-attrs", type=int, required=True)
    b.add_argument("--include-precompute", action="store_true")
    b.set_defaults(func=cmd_bench_flops)

    s = sub.add_parser("synth", help="write a synthetic corpus")
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--noise-p", type=float, default=0.0)
    s.add_argument("--n-products", type=int, default=500)
    s.add_argument("--attrs-per-product", type=int, default=4)
    s.add_argument("--vocab-size", type=int, default=200)
    s.add_argument("--context-tokens", type=int, default=24)
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("cache", help="cache maintenance")
    csub = c.add_subparsers(dest="cache_command", required=True)
    gc = csub.add_parser("gc", help="delete oldest entries above a size budget")
    gc.add_argument("--cache", required=True)
    gc.add_argument("--max-bytes", type=int, required=True)
    gc.set_defaults(func=cmd_cache_gc)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
