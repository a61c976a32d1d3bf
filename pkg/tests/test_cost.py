"""FLOPs accounting. Expected numbers are recomputed by hand from layer shapes."""

import pytest

from eave.config import EncoderConfig
from eave.cost import (
    GIGA,
    REFERENCE_ANCHORS,
    amortized_cost,
    ae110k_config,
    encoder_flops,
    format_table,
    fusion_flops,
    mave_config,
    speedup_report,
    t5_large,
)


def hand_layer(s, d, dff):
    qkvo = 4 * (2 * s * d * d)
    scores_and_mix = 2 * (2 * s * s * d)
    mlp = 2 * (2 * s * d * dff)
    return qkvo + scores_and_mix + mlp


class TestEncoderFlops:
    def test_unit_case(self):
        cfg = EncoderConfig(num_layers=1, hidden=1, heads=1, head_dim=1, ffn_hidden=1)
        assert encoder_flops(cfg, 1) == 16

    def test_matches_hand_count(self):
        cfg = EncoderConfig(num_layers=3, hidden=12, heads=3, head_dim=4, ffn_hidden=40)
        assert encoder_flops(cfg, 7) == 3 * hand_layer(7, 12, 40)

    def test_t5_large_joint_anchor(self):
        got = encoder_flops(t5_large(), 544) / GIGA
        assert got == pytest.approx(357.66, abs=0.01)
        assert abs(got - REFERENCE_ANCHORS["mave_t5_large_joint"]) / 402.47 < 0.20

    def test_superlinear_in_length(self):
        cfg = t5_large()
        assert encoder_flops(cfg, 512) > 2 * encoder_flops(cfg, 256)

    def test_too_long(self):
        with pytest.raises(ValueError, match="max_len"):
            encoder_flops(EncoderConfig(1, 4, 1, 4, 4, max_len=8), 9)


class TestFusionFlops:
    def test_adaptor_term(self):
        cfg = mave_config()
        adaptor = fusion_flops(cfg) - fusion_flops(cfg, include_adaptor=False)
        assert adaptor == 2 * 544 * 1024 * 512 * 8
        assert adaptor / GIGA == pytest.approx(4.56, abs=0.01)

    def test_interpolation_only(self):
        small = EncoderConfig(2, 8, 2, 4, 16)
        cfg = mave_config(heavy=small, light=EncoderConfig(2, 8, 2, 4, 16), context_len=6,
                          attribute_len=2)
        assert fusion_flops(cfg, include_adaptor=False) == 2 * 3 * 8 * 8

    def test_cross_attention_costs_more(self):
        assert fusion_flops(mave_config(fusion_method="cross_attention")) > fusion_flops(mave_config())


class TestAmortized:
    def test_per_attribute_without_precompute(self):
        r = amortized_cost(mave_config(), 1, include_precompute=False)
        got = r.amortized_per_product / GIGA
        assert got == pytest.approx(36.80, abs=0.01)
        assert abs(got - REFERENCE_ANCHORS["mave_eave_per_attribute"]) / 42.46 < 0.25

    @pytest.mark.parametrize("n,expected,anchor", [
        (15, 78.56, "mave_shoes_eave_n15"),
        (5, 123.22, "mave_dresses_eave_n5"),
    ])
    def test_table8_rows(self, n, expected, anchor):
        got = amortized_cost(mave_config(), n).amortized_per_product / GIGA
        assert got == pytest.approx(expected, abs=0.05)
        assert abs(got - REFERENCE_ANCHORS[anchor]) / REFERENCE_ANCHORS[anchor] < 0.25

    def test_formula(self):
        cfg = mave_config()
        r = amortized_cost(cfg, 4)
        c_ctx = 24 * hand_layer(512, 1024, 4096)
        c_attr = 24 * hand_layer(32, 1024, 4096)
        c_l = 8 * hand_layer(544, 512, 2048)
        c_f = 8 * (2 * 544 * 1024 * 512 + 3 * 544 * 512)
        assert r.amortized_per_product == c_ctx / 4 + c_attr + c_l + c_f

    def test_large_n_limit(self):
        r = amortized_cost(mave_config(), 10 ** 9)
        floor = r.c_attr_heavy + r.c_light + r.c_fusion
        assert r.amortized_per_product == pytest.approx(floor, rel=1e-6)

    def test_speedup_increases_with_n(self):
        rows = speedup_report(mave_config(), range(1, 21))
        speedups = [r["speedup"] for r in rows]
        assert all(b > a for a, b in zip(speedups, speedups[1:]))

    def test_n_one_reported_honestly(self):
        r = amortized_cost(mave_config(), 1)
        assert r.speedup == pytest.approx(r.baseline_per_product / r.amortized_per_product)
        assert r.speedup < 1.0

    def test_zero_attributes_rejected(self):
        with pytest.raises(ValueError):
            amortized_cost(mave_config(), 0)

    def test_ae110k_reported(self):
        r = amortized_cost(ae110k_config(), 1, include_precompute=False)
        assert r.amortized_per_product > 0 and r.baseline_per_product > r.amortized_per_product

    def test_table(self):
        text = format_table(speedup_report(mave_config(), [1, 5]))
        assert text.splitlines()[0].split()[0] == "N" and len(text.splitlines()) == 3
