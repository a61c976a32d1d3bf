"""scikit-learn style wrapper: ``fit`` on product records, ``predict`` spans."""

from __future__ import annotations

from typing import Sequence

from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .cache import RepCache
from .config import EaveConfig, EncoderConfig, TrainConfig
from .data import ProductRecord, Vocab, build_examples
from .tagging import evaluate
from .training import Extractor, evaluate_model, train


def check_records(X) -> list[ProductRecord]:
    """Accept records or their dict form; reject anything else."""
    if isinstance(X, (str, bytes)) or not hasattr(X, "__iter__"):
        raise TypeError(f"expected an iterable of product records, got {type(X).__name__}")
    out = []
    for i, r in enumerate(X):
        if isinstance(r, ProductRecord):
            out.append(r)
        elif isinstance(r, dict):
            out.append(ProductRecord.from_dict(r))
        else:
            raise TypeError(f"item {i} is a {type(r).__name__}, not a ProductRecord")
    return out


def check_is_fitted(est) -> None:
    if getattr(est, "model_", None) is None:
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit() first")


class EaveExtractor(BaseEstimator):
    """Attribute value extractor with a heavy/light encoder pair.

    Hyperparameters mirror :class:`EaveConfig` and :class:`TrainConfig`;
    ``fit`` builds the vocabulary from the training records.
    """

    def __init__(self, heavy_layers=4, heavy_hidden=64, heavy_heads=4, light_layers=2,
                 light_hidden=32, light_heads=8, ffn_mult=2, context_len=32, attribute_len=4,
                 fusion_method="fixed_alpha", fusion_location="after_attn",
                 layer_mapping="even_offset:1", alpha=0.5, mlp_input_mode="pre_fusion",
                 lr=3e-3, beta=1.0, batch_size=16, max_steps=2000, dropout=0.0,
                 negatives_per_product=0, seed=0, cache_dir=None):
        self.heavy_layers = heavy_layers
        self.heavy_hidden = heavy_hidden
        self.heavy_heads = heavy_heads
        self.light_layers = light_layers
        self.light_hidden = light_hidden
        self.light_heads = light_heads
        self.ffn_mult = ffn_mult
        self.context_len = context_len
        self.attribute_len = attribute_len
        self.fusion_method = fusion_method
        self.fusion_location = fusion_location
        self.layer_mapping = layer_mapping
        self.alpha = alpha
        self.mlp_input_mode = mlp_input_mode
        self.lr = lr
        self.beta = beta
        self.batch_size = batch_size
        self.max_steps = max_steps
        self.dropout = dropout
        self.negatives_per_product = negatives_per_product
        self.seed = seed
        self.cache_dir = cache_dir

    def _configs(self, vocab_size: int) -> tuple[EaveConfig, TrainConfig]:
        def enc(layers, hidden, heads, max_len):
            return EncoderConfig(num_layers=layers, hidden=hidden, heads=heads,
                                 head_dim=hidden // heads, ffn_hidden=hidden * self.ffn_mult,
                                 vocab_size=vocab_size, max_len=max_len)

        model = EaveConfig(
            heavy=enc(self.heavy_layers, self.heavy_hidden, self.heavy_heads, self.context_len),
            light=enc(self.light_layers, self.light_hidden, self.light_heads,
                      self.context_len + self.attribute_len),
            context_len=self.context_len,
            attribute_len=self.attribute_len,
            fusion_method=self.fusion_method,
            fusion_location=self.fusion_location,
            layer_mapping=self.layer_mapping,
            alpha=self.alpha,
            beta=self.beta,
            mlp_input_mode=self.mlp_input_mode,
        )
        tc = TrainConfig(lr_light=self.lr, beta=self.beta, batch_size=self.batch_size,
                         max_steps=self.max_steps, dropout=self.dropout,
                         negatives_per_product=self.negatives_per_product, seed=self.seed)
        return model, tc

    def fit(self, X, y=None, eval_X=None):
        records = check_records(X)
        if not records:
            raise ValueError("cannot fit on an empty corpus")
        vocab = Vocab.build(records)
        model_cfg, train_cfg = self._configs(len(vocab))
        held = check_records(eval_X) if eval_X is not None else []
        result = train(records, model_cfg, train_cfg, eval_corpus=held, vocab=vocab)
        self.model_ = result.model
        self.vocab_ = vocab
        self.manifest_ = result.manifest
        self.n_features_in_ = model_cfg.seq_len
        return self

    def _extractor(self) -> Extractor:
        cache = RepCache(self.cache_dir) if self.cache_dir is not None else None
        return Extractor(self.model_, self.vocab_, cache)

    def predict(self, X, attribute_keys: Sequence[str] | None = None) -> list[dict]:
        """One ``{attribute: [SpanPrediction, ...]}`` dict per product."""
        check_is_fitted(self)
        ex = self._extractor()
        return [ex.extract(r, attribute_keys) for r in check_records(X)]

    def score(self, X, y=None) -> float:
        """Span-level micro F1 against the evidences stored in ``X``."""
        check_is_fitted(self)
        cfg = self.model_.config
        examples = build_examples(check_records(X), self.vocab_, cfg.context_len,
                                  cfg.attribute_len)
        return evaluate_model(self.model_, examples).f1
