"""Architecture, fusion, and training configuration."""

from __future__ import annotations

import enum
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    pass


class FusionMethod(str, enum.Enum):
    FIXED_ALPHA = "fixed_alpha"
    LEARNED_ALPHA = "learned_alpha"
    CROSS_ATTENTION = "cross_attention"


class FusionLocation(str, enum.Enum):
    BEFORE_ATTN = "before_attn"
    AFTER_ATTN = "after_attn"
    AFTER_ATTN_SKIP = "after_attn_skip"
    BEFORE_MLP = "before_mlp"
    AFTER_MLP = "after_mlp"
    AFTER_MLP_SKIP = "after_mlp_skip"


class MlpInputMode(str, enum.Enum):
    PRE_FUSION = "pre_fusion"
    POST_FUSION = "post_fusion"


class MappingScheme(str, enum.Enum):
    EVEN_OFFSET = "even_offset"
    LAST_LAYER_ONLY = "last_layer_only"
    LAST_K = "last_k"
    FIRST_K = "first_k"


@dataclass(frozen=True)
class LayerMapping:
    scheme: MappingScheme = MappingScheme.EVEN_OFFSET
    offset: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scheme", MappingScheme(self.scheme))

    @classmethod
    def parse(cls, value) -> "LayerMapping":
        """Accept ``"even_offset:2"``, ``"last_k"``, or a dict."""
        if isinstance(value, LayerMapping):
            return value
        if isinstance(value, dict):
            return cls(MappingScheme(value["scheme"]), int(value.get("offset", 0)))
        scheme, _, offset = str(value).partition(":")
        return cls(MappingScheme(scheme), int(offset or 0))

    def to_dict(self) -> dict:
        return {"scheme": self.scheme.value, "offset": self.offset}


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int
    hidden: int
    heads: int
    head_dim: int
    ffn_hidden: int
    vocab_size: int = 256
    max_len: int = 512

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not isinstance(v, int) or v <= 0:
                raise ConfigError(f"EncoderConfig.{f.name} must be a positive int, got {v!r}")
        if self.heads * self.head_dim != self.hidden:
            raise ConfigError(
                f"heads * head_dim must equal hidden ({self.heads}*{self.head_dim} != {self.hidden})"
            )

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EaveConfig:
    heavy: EncoderConfig
    light: EncoderConfig
    context_len: int
    attribute_len: int
    fusion_method: FusionMethod = FusionMethod.FIXED_ALPHA
    fusion_location: FusionLocation = FusionLocation.AFTER_ATTN
    layer_mapping: LayerMapping = field(default_factory=LayerMapping)
    alpha: float = 0.7
    beta: float = 1.0
    mlp_input_mode: MlpInputMode = MlpInputMode.PRE_FUSION

    def __post_init__(self):
        object.__setattr__(self, "fusion_method", FusionMethod(self.fusion_method))
        object.__setattr__(self, "fusion_location", FusionLocation(self.fusion_location))
        object.__setattr__(self, "mlp_input_mode", MlpInputMode(self.mlp_input_mode))
        object.__setattr__(self, "layer_mapping", LayerMapping.parse(self.layer_mapping))
        if self.context_len <= 0 or self.attribute_len <= 0:
            raise ConfigError("context_len and attribute_len must be positive")
        if self.fusion_method is FusionMethod.FIXED_ALPHA and not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"fixed alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.heavy.max_len < max(self.context_len, self.attribute_len):
            raise ConfigError("heavy.max_len is shorter than the context length")
        if self.light.max_len < self.context_len + self.attribute_len:
            raise ConfigError("light.max_len is shorter than context_len + attribute_len")
        if self.heavy.vocab_size != self.light.vocab_size:
            raise ConfigError("heavy and light encoders must share a vocabulary size")
        # raises on an unresolvable mapping
        from .encoder import layer_mapping

        layer_mapping(self.heavy.num_layers, self.light.num_layers, self.layer_mapping)

    @property
    def seq_len(self) -> int:
        return self.context_len + self.attribute_len

    def with_vocab_size(self, vocab_size: int) -> "EaveConfig":
        return replace(
            self,
            heavy=replace(self.heavy, vocab_size=vocab_size),
            light=replace(self.light, vocab_size=vocab_size),
        )

    def to_dict(self) -> dict:
        return {
            "heavy": self.heavy.to_dict(),
            "light": self.light.to_dict(),
            "context_len": self.context_len,
            "attribute_len": self.attribute_len,
            "fusion_method": self.fusion_method.value,
            "fusion_location": self.fusion_location.value,
            "layer_mapping": self.layer_mapping.to_dict(),
            "alpha": self.alpha,
            "beta": self.beta,
            "mlp_input_mode": self.mlp_input_mode.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EaveConfig":
        d = dict(d)
        d["heavy"] = EncoderConfig.from_dict(d["heavy"])
        d["light"] = EncoderConfig.from_dict(d["light"])
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown EaveConfig fields: {sorted(unknown)}")
        return cls(**d)

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


@dataclass(frozen=True)
class AdamConfig:
    beta1: float = 0.9
    beta2: float = 0.99
    eps: float = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    lr_light: float = 1e-3
    beta: float = 1.0
    batch_size: int = 16
    max_steps: int = 2000
    adam: AdamConfig = field(default_factory=AdamConfig)
    dropout: float = 0.0
    seed: int = 0
    eval_every: int = 0
    # absent-key examples per training product, labelled all-outside
    negatives_per_product: int = 0

    def __post_init__(self):
        if isinstance(self.adam, dict):
            object.__setattr__(self, "adam", AdamConfig(**self.adam))
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.batch_size <= 0 or self.max_steps < 0:
            raise ConfigError("batch_size must be positive and max_steps non-negative")
        if self.negatives_per_product < 0:
            raise ConfigError("negatives_per_product must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def lr_heavy(self) -> float:
        return self.beta * self.lr_light

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig fields: {sorted(unknown)}")
        return cls(**d)


def load_configs(path: str | Path) -> tuple[EaveConfig, TrainConfig]:
    """Read a JSON file with ``model`` (EaveConfig) and optional ``train`` sections.

    A bare EaveConfig object (no sections) is also accepted.
    """
    raw = json.loads(Path(path).read_text())
    if "model" in raw:
        model = EaveConfig.from_dict(raw["model"])
        train = TrainConfig.from_dict(raw.get("train", {}))
    else:
        model = EaveConfig.from_dict(raw)
        train = TrainConfig()
    return model, train


def tiny_config(**overrides) -> EaveConfig:
    """Small config used throughout the tests and the synthetic smoke runs."""
    base = dict(
        heavy=EncoderConfig(num_layers=2, hidden=8, heads=2, head_dim=4, ffn_hidden=16,
                            vocab_size=32, max_len=16),
        light=EncoderConfig(num_layers=2, hidden=8, heads=2, head_dim=4, ffn_hidden=16,
                            vocab_size=32, max_len=16),
        context_len=6,
        attribute_len=2,
        alpha=0.5,
    )
    base.update(overrides)
    return EaveConfig(**base)
