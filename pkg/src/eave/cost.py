"""Analytical FLOPs accounting (2 FLOPs per multiply-add).

Embeddings, normalization, softmax, and the tagging head are not counted.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .config import EaveConfig, EncoderConfig, FusionMethod

GIGA = 1e9

# GFLOPS values reported for the MAVE and AE-110K setups.
REFERENCE_ANCHORS = {
    "mave_t5_large_joint": 402.47,
    "mave_eave_per_attribute": 42.46,
    "mave_shoes_eave_n15": 89.86,
    "mave_mobile_phones_eave_n12": 96.22,
    "mave_televisions_eave_n11": 99.11,
    "mave_dresses_eave_n5": 140.72,
    "ae110k_t5_base_joint": 16.11,
    "ae110k_eave_per_attribute": 5.20,
}


def t5_large(max_len: int = 1024) -> EncoderConfig:
    return EncoderConfig(num_layers=24, hidden=1024, heads=16, head_dim=64, ffn_hidden=4096,
                         vocab_size=32128, max_len=max_len)


def t5_base(max_len: int = 1024) -> EncoderConfig:
    return EncoderConfig(num_layers=12, hidden=768, heads=12, head_dim=64, ffn_hidden=3072,
                         vocab_size=32128, max_len=max_len)


def t5_small_8(max_len: int = 1024) -> EncoderConfig:
    """T5-small width with the 8 layers used for the light encoder."""
    return EncoderConfig(num_layers=8, hidden=512, heads=8, head_dim=64, ffn_hidden=2048,
                         vocab_size=32128, max_len=max_len)


def mave_config(**overrides) -> EaveConfig:
    base = dict(heavy=t5_large(), light=t5_small_8(), context_len=512, attribute_len=32,
                alpha=0.7, beta=1.0)
    base.update(overrides)
    return EaveConfig(**base)


def ae110k_config(context_len: int = 128, attribute_len: int = 16, **overrides) -> EaveConfig:
    # 12 heavy layers do not split evenly over 8 light layers; the mapping
    # does not enter the FLOPs count, so any valid one will do
    base = dict(heavy=t5_base(), light=t5_small_8(), context_len=context_len,
                attribute_len=attribute_len, alpha=0.05, beta=0.0, layer_mapping="last_k")
    base.update(overrides)
    return EaveConfig(**base)


def _attention_flops(seq_q: int, seq_k: int, d: int) -> int:
    # Q,O projections on the query side, K,V on the key side, scores + weighted sum
    return 4 * seq_q * d * d + 4 * seq_k * d * d + 4 * seq_q * seq_k * d


def encoder_flops(config: EncoderConfig, seq_len: int) -> int:
    s, d, dff = seq_len, config.hidden, config.ffn_hidden
    if s > config.max_len:
        raise ValueError(f"seq_len {s} exceeds max_len {config.max_len}")
    per_layer = 8 * s * d * d + 4 * s * s * d + 4 * s * d * dff
    return per_layer * config.num_layers


def fusion_flops(config: EaveConfig, include_adaptor: bool = True) -> int:
    """Sparse-layer interaction cost summed over light layers."""
    s = config.seq_len
    d_h, d_l = config.heavy.hidden, config.light.hidden
    per_layer = 2 * s * d_h * d_l if include_adaptor else 0
    if config.fusion_method is FusionMethod.CROSS_ATTENTION:
        per_layer += _attention_flops(s, s, d_l) + s * d_l
    else:
        per_layer += 3 * s * d_l
    return per_layer * config.light.num_layers


@dataclass
class CostReport:
    c_ctx_heavy: float
    c_attr_heavy: float
    c_joint_heavy: float
    c_light: float
    c_fusion: float
    n_attributes: int
    amortized_per_product: float
    baseline_per_product: float
    speedup: float
    include_precompute: bool = True

    @property
    def eave_total(self) -> float:
        """Whole-product cost of EAVE over all N attributes."""
        return self.amortized_per_product * self.n_attributes

    @property
    def baseline_total(self) -> float:
        return self.baseline_per_product * self.n_attributes

    def to_dict(self, scale: float = 1.0) -> dict:
        d = asdict(self)
        for k in ("c_ctx_heavy", "c_attr_heavy", "c_joint_heavy", "c_light", "c_fusion",
                  "amortized_per_product", "baseline_per_product"):
            d[k] = d[k] / scale
        return d


def amortized_cost(config: EaveConfig, n_attributes: int, include_precompute: bool = True
                   ) -> CostReport:
    """Per product-attribute cost when the context is encoded once for N attributes.

    ``C_ctx / N + C_attr + C_light + C_fusion`` against the joint heavy
    baseline ``C_joint``; ``include_precompute=False`` drops both heavy terms.
    """
    if n_attributes < 1:
        raise ValueError("n_attributes must be >= 1")
    heavy = config.heavy
    c_ctx = float(encoder_flops(heavy, config.context_len))
    c_attr = float(encoder_flops(heavy, config.attribute_len))
    if not include_precompute:
        c_ctx = c_attr = 0.0
    c_joint = float(_joint_flops(heavy, config.seq_len))
    c_light = float(encoder_flops(config.light, config.seq_len))
    c_fuse = float(fusion_flops(config))
    amortized = c_ctx / n_attributes + c_attr + c_light + c_fuse
    return CostReport(
        c_ctx_heavy=c_ctx,
        c_attr_heavy=c_attr,
        c_joint_heavy=c_joint,
        c_light=c_light,
        c_fusion=c_fuse,
        n_attributes=n_attributes,
        amortized_per_product=amortized,
        baseline_per_product=c_joint,
        speedup=c_joint / amortized,
        include_precompute=include_precompute,
    )


def _joint_flops(heavy: EncoderConfig, seq_len: int) -> int:
    # the joint baseline may exceed the heavy max_len configured for EAVE
    if seq_len > heavy.max_len:
        from dataclasses import replace

        heavy = replace(heavy, max_len=seq_len)
    return encoder_flops(heavy, seq_len)


def speedup_report(config: EaveConfig, n_values, include_precompute: bool = True) -> list[dict]:
    rows = []
    for n in n_values:
        r = amortized_cost(config, int(n), include_precompute)
        rows.append({
            "n_attributes": int(n),
            "amortized_gflops": r.amortized_per_product / GIGA,
            "baseline_gflops": r.baseline_per_product / GIGA,
            "speedup": r.speedup,
        })
    return rows


def format_table(rows: list[dict]) -> str:
    lines = [f"{'N':>4}  {'EAVE GFLOPs':>12}  {'baseline GFLOPs':>16}  {'speedup':>8}"]
    for r in rows:
        lines.append(f"{r['n_attributes']:>4}  {r['amortized_gflops']:>12.2f}  "
                     f"{r['baseline_gflops']:>16.2f}  {r['speedup']:>8.2f}")
    return "\n".join(lines)
