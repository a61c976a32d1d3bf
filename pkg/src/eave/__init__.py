"""Attribute value extraction with a cached heavy encoder and a small light encoder."""

from .cache import CacheIntegrityError, RepCache, precompute_corpus
from .config import (
    EaveConfig,
    EncoderConfig,
    FusionLocation,
    FusionMethod,
    LayerMapping,
    MappingScheme,
    MlpInputMode,
    TrainConfig,
    load_configs,
)
from .cost import amortized_cost, encoder_flops, speedup_report
from .data import ProductRecord, Vocab, build_examples, load_corpus, synthesize_corpus
from .encoder import (
    EaveModel,
    StaleCacheError,
    heavy_encode,
    layer_mapping,
    light_encode,
    load_checkpoint,
    save_checkpoint,
)
from .estimator import EaveExtractor
from .tagging import EvalReport, SpanPrediction, decode_spans, evaluate
from .training import Extractor, TrainingDiverged, extract, train

__version__ = "0.1.0"

__all__ = [
    "CacheIntegrityError", "EaveConfig", "EaveExtractor", "EaveModel", "EncoderConfig",
    "EvalReport", "Extractor", "FusionLocation", "FusionMethod", "LayerMapping",
    "MappingScheme", "MlpInputMode", "ProductRecord", "RepCache", "SpanPrediction",
    "StaleCacheError", "TrainConfig", "TrainingDiverged", "Vocab", "amortized_cost",
    "build_examples", "decode_spans", "encoder_flops", "evaluate", "extract",
    "heavy_encode", "layer_mapping", "light_encode", "load_checkpoint", "load_configs",
    "load_corpus", "precompute_corpus", "save_checkpoint", "speedup_report",
    "synthesize_corpus", "train",
]
