"""Analytic cost model: formula cases, dual-route equality, exact identities."""

from fractions import Fraction

import numpy as np
import pytest

from dacnet import (
    ConvSpec,
    NetworkConfig,
    Tensor,
    analyze_network,
    build_network,
    count_macs,
    layer_macs,
    layer_params,
    load_preset,
)
from dacnet.complexity import TARGET_MAO, TARGET_PS, bn_params, deviation_summary
from dacnet.network import BlockSpec, ablation_variant


class TestFormulaCases:
    def test_depthwise_pointwise_standard_macs(self):
        df = (10, 10)
        dw = layer_macs(ConvSpec(3, 32, 32, mode="depthwise"), df)
        pw = layer_macs(ConvSpec(1, 32, 64, mode="pointwise"), df)
        std = layer_macs(ConvSpec(3, 32, 64, mode="standard"), df)
        assert dw == 28_800
        assert pw == 204_800
        assert dw + pw == 233_600
        assert std == 1_843_200

    def test_separable_to_standard_ratio_identity(self):
        """(K^2*M + N*M) / (K^2*N*M) = 1/N + 1/K^2 in exact rationals."""
        for k, m, n, df in [(3, 32, 64, 10), (3, 8, 16, 7), (5, 12, 20, 9)]:
            dw = layer_macs(ConvSpec(k, m, m, mode="depthwise"), (df, df))
            pw = layer_macs(ConvSpec(1, m, n, mode="pointwise"), (df, df))
            std = layer_macs(ConvSpec(k, m, n, mode="standard"), (df, df))
            assert Fraction(dw + pw, std) == Fraction(1, n) + Fraction(1, k * k)
        assert Fraction(233_600, 1_843_200) == Fraction(1, 64) + Fraction(1, 9)

    def test_single_mac_case(self):
        assert layer_macs(ConvSpec(1, 1, 1, mode="pointwise"), (1, 1)) == 1

    def test_param_cases(self):
        assert layer_params(ConvSpec(3, 32, 32, mode="depthwise")) == 288
        assert layer_params(ConvSpec(3, 32, 64, mode="standard")) == 18_432
        dsc = layer_params(ConvSpec(3, 32, 32, mode="depthwise")) + \
            layer_params(ConvSpec(1, 32, 64, mode="pointwise"))
        assert dsc == 2_336
        assert 18_432 / dsc == pytest.approx(7.89, abs=0.01)
        assert layer_params(ConvSpec(1, 1, 1, mode="pointwise")) == 1

    def test_bias_and_bn_params(self):
        assert layer_params(ConvSpec(3, 4, 4, mode="depthwise", has_bias=True)) == 36 + 4
        assert bn_params(32) == 64

    def test_stride_and_dilation_affect_shape_only(self):
        base = ConvSpec(3, 8, 8, mode="depthwise", padding=2, dilation=2)
        # same output size as dilation 1 with padding 1, so identical MACs
        plain = ConvSpec(3, 8, 8, mode="depthwise", padding=1, dilation=1)
        h, w = 14, 20
        assert base.output_hw(h, w) == plain.output_hw(h, w)
        assert layer_macs(base, base.output_hw(h, w)) == layer_macs(plain, plain.output_hw(h, w))


def random_network_config(rng) -> NetworkConfig:
    widths = [int(rng.choice([4, 6, 8, 12]))]
    rows = []
    n_rows = int(rng.integers(2, 4))
    for i in range(n_rows):
        out = int(rng.choice([4, 6, 8, 12, 16]))
        repeats = 3 if i == n_rows - 1 else int(rng.integers(1, 3))
        rows.append(BlockSpec(
            in_channels=widths[-1], out_channels=out,
            stride=int(rng.integers(1, 3)), repeats=repeats,
            expansion_factor=int(rng.integers(1, 4)),
            dilation=int(rng.integers(1, 4)),
        ))
        widths.append(out)
    return NetworkConfig(
        input_channels=int(rng.integers(1, 4)),
        stem_channels=widths[0],
        stem_stride=int(rng.integers(1, 3)),
        blocks=tuple(rows),
        mse_projection_channels=int(rng.choice([8, 16, 24])),
        num_classes=9,
        residual_enabled=bool(rng.integers(0, 2)),
        literal_fc_head=bool(rng.integers(0, 2)),
        fc_neurons=16,
    )


class TestDualRoutes:
    def test_instrumented_macs_equal_analytic_on_random_configs(self):
        """Runtime MAC counter vs analytic walk, exact, 20 random configs."""
        rng = np.random.default_rng(42)
        for _ in range(20):
            config = random_network_config(rng)
            h = int(rng.integers(10, 21))
            w = int(rng.integers(12, 29))
            shape = (1, config.input_channels, h, w)
            report = analyze_network(config, shape)
            model = build_network(config, seed=0)
            with count_macs() as counter:
                model.forward(Tensor(rng.standard_normal(shape)))
            assert counter.total == report.total_macs

    def test_analytic_params_equal_allocation_on_random_configs(self):
        rng = np.random.default_rng(43)
        for _ in range(10):
            config = random_network_config(rng)
            report = analyze_network(config, (1, config.input_channels, 16, 16))
            assert build_network(config, 0).parameter_count() == report.total_params

    def test_presets_params_equal_allocation(self):
        for preset in ("reference", "toy"):
            config = load_preset(preset).network
            report = analyze_network(config)
            assert build_network(config, 0).parameter_count() == report.total_params


class TestNetworkReport:
    def test_totals_equal_sum_of_rows(self):
        report = analyze_network(load_preset("toy").network)
        assert report.total_params == sum(r.params for r in report.rows)
        assert report.total_macs == sum(r.macs for r in report.rows)
        assert report.params_without_bn == sum(
            r.params for r in report.rows if r.kind != "bn"
        )

    def test_reference_config_within_published_bands(self):
        report = analyze_network(load_preset("reference").network, (1, 3, 28, 499))
        assert abs(report.total_params - TARGET_PS) <= 0.25 * TARGET_PS
        assert abs(report.total_macs - TARGET_MAO) <= 0.50 * TARGET_MAO
        summary = deviation_summary(report)
        assert "reconstruction" in summary

    def test_dilation_toggle_invariance(self):
        config = load_preset("reference").network
        toggled = ablation_variant(config, "no_dco")
        a = analyze_network(config)
        b = analyze_network(toggled)
        assert a.total_params == b.total_params
        # depthwise padding equals dilation, so output shapes and MACs match too
        assert a.total_macs == b.total_macs

    def test_single_block_hand_count_via_analytics(self):
        from dacnet.network import InstanceSpec, instance_conv_specs
        inst = InstanceSpec(4, 4, 1, 1, 1)
        expand, depthwise, project = instance_conv_specs(inst)
        total = (layer_params(expand) + layer_params(depthwise) + layer_params(project)
                 + bn_params(4) * 3)
        assert total == 92

    def test_render_formats(self):
        report = analyze_network(load_preset("toy").network)
        text = report.to_text()
        assert "PS =" in text and "MAO =" in text
        doc = report.to_dict()
        assert doc["total_params"] == report.total_params
        assert len(doc["layers"]) == len(report.rows)
