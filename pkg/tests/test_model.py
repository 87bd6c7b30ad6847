import numpy as np
import pytest

from lednet import model, ops
from lednet.model import (
    APN,
    DILATION_SCHEDULE,
    Downsampler,
    Encoder,
    LEDNet,
    SSnbt,
    build_lednet,
    check_table1,
    compare_modules,
    count_macs,
    count_params,
)
from lednet.tensor import GraphTape, ShapeError, Tensor, tsum, uniform
from lednet.train import calibrate_bn


class TestSSnbt:
    def test_shape_preserved(self):
        unit = SSnbt("u", 128, dilation=2, seed=0)
        x = uniform((1, 128, 8, 16), seed=1)
        assert unit.forward(x).shape == x.shape

    def test_odd_channels_rejected(self):
        with pytest.raises(ShapeError):
            SSnbt("u", 127)

    def test_zero_weights_reduce_to_shuffled_relu(self):
        unit = SSnbt("u", 8, seed=0)
        for conv in unit.transform_convs():
            conv.weight.data[...] = 0.0
        x = uniform((1, 8, 4, 4), seed=2, lo=-1, hi=1)
        out = unit.forward(x).data
        want = ops.channel_shuffle(ops.relu(x), 2).data
        assert np.array_equal(out, want)

    def test_parameter_count_at_128(self):
        unit = SSnbt("u", 128, seed=0)
        assert unit.param_count() == 98816  # 8 half-width 1D convs + 4 BN

    def test_no_pointwise_conv_in_transform_path(self):
        unit = SSnbt("u", 64, dilation=5, seed=0)
        for conv in unit.transform_convs():
            assert conv.p.kernel != (1, 1)

    def test_output_is_shuffled_nonnegative_residual(self):
        # the unit ends in relu -> shuffle, so inverting the shuffle must
        # recover a nonnegative map that differs from relu(x) only by the
        # transform branches
        unit = SSnbt("u", 8, dilation=1, seed=3)
        x = uniform((1, 8, 4, 4), seed=4, lo=-1, hi=1)
        out = unit.forward(x).data
        perm = ops.shuffle_permutation(8, 2)
        unshuffled = np.empty_like(out)
        unshuffled[:, perm] = out
        assert np.all(unshuffled >= 0)


class TestDownsampler:
    def test_3_to_32_shapes(self):
        d = Downsampler("d", 3, 32, seed=0)
        x = uniform((1, 3, 64, 128), seed=1)
        assert d.forward(x).shape == (1, 32, 32, 64)

    def test_conv_branch_width_is_cout_minus_cin(self):
        d = Downsampler("d", 3, 32, seed=0)
        assert d.conv.p.out_channels == 29

    def test_32_to_64_halves_extents(self):
        d = Downsampler("d", 32, 64, seed=0)
        x = uniform((2, 32, 16, 24), seed=2)
        assert d.forward(x).shape == (2, 64, 8, 12)

    def test_cout_not_greater_rejected(self):
        with pytest.raises(ShapeError):
            Downsampler("d", 32, 32)


class TestEncoder:
    def test_output_shape_small(self):
        enc = Encoder("e", seed=0)
        x = uniform((1, 3, 64, 128), seed=1)
        assert enc.forward(x).shape == (1, 128, 8, 16)

    def test_dilation_schedule(self):
        enc = Encoder("e", seed=0)
        assert tuple(u.dilation for u in enc.stage3) == (1, 2, 5, 9, 2, 5, 9, 17)
        assert DILATION_SCHEDULE == (1, 2, 5, 9, 2, 5, 9, 17)

    def test_stage_counts(self):
        enc = Encoder("e", seed=0)
        assert len(enc.stage1) == 3 and len(enc.stage2) == 2 and len(enc.stage3) == 8


class TestAPN:
    def test_output_shape(self):
        apn = APN("a", 128, 20, seed=0)
        x = uniform((1, 128, 64, 128), seed=1)
        assert apn.forward(x).shape == (1, 20, 64, 128)

    def test_pyramid_intermediate_shapes(self):
        apn = APN("a", 128, 20, seed=0)
        assert apn.pyr1.conv.out_hw(64, 128) == (32, 64)
        assert apn.pyr2.conv.out_hw(32, 64) == (16, 32)
        assert apn.pyr3.conv.out_hw(16, 32) == (8, 16)

    def test_zeroed_pyramid_and_global_yield_zero(self):
        apn = APN("a", 128, 5, seed=0)
        for m in (apn.pyr1.conv, apn.pyr2.conv, apn.pyr3.conv):
            m.weight.data[...] = 0.0
        apn.pool.weight.data[...] = 0.0
        apn.pool.bias.data[...] = 0.0
        x = uniform((1, 128, 8, 16), seed=2)
        assert np.all(apn.forward(x).data == 0.0)

    def test_indivisible_extent_rejected(self):
        apn = APN("a", 128, 4, seed=0)
        with pytest.raises(ShapeError):
            apn.forward(uniform((1, 128, 6, 8), seed=0))


class TestLEDNet:
    def test_logits_shape_table1(self):
        net = build_lednet(20, 512, 1024, seed=0)
        trace = net.shape_trace(512, 1024)
        assert trace[-1] == ("Upsampling Unit (x8)", (20, 512, 1024))

    def test_logits_shape_small(self):
        net = build_lednet(4, 64, 128, seed=0)
        x = uniform((1, 3, 64, 128), seed=1)
        assert net.forward(x).shape == (1, 4, 64, 128)

    def test_indivisible_input_rejected(self):
        with pytest.raises(ShapeError):
            build_lednet(4, 100, 100)

    def test_table1_trace_conforms(self):
        net = build_lednet(20, 512, 1024, seed=0)
        assert check_table1(net, 20) == []

    def test_parameter_budget(self):
        net = build_lednet(20, 512, 1024, seed=0)
        total = net.param_count()
        assert 800_000 <= total <= 1_100_000
        # analytic accounting agrees with the live tensors
        assert count_params(net, 512, 1024).total_params == total

    def test_parameter_count_stable_across_builds(self):
        a = build_lednet(20, 512, 1024, seed=0).param_count()
        b = build_lednet(20, 512, 1024, seed=99).param_count()
        assert a == b

    def test_whole_network_gradient_flow(self):
        net = build_lednet(4, 64, 128, seed=0)
        x = uniform((1, 3, 64, 128), seed=5, dtype=np.float64, requires_grad=True)
        labels = np.random.default_rng(6).integers(0, 4, size=(1, 64, 128))
        params = net.named_parameters()
        with GraphTape() as tape:
            logits = net.forward(x, training=True)
            loss = ops.softmax_cross_entropy(logits, labels)
        grads = tape.gradients(loss, params=list(params.values()))
        assert np.all(np.isfinite(logits.data))
        for name, p in params.items():
            assert np.any(grads[p].data != 0.0), f"zero gradient for {name}"


class TestCostAccounting:
    def test_single_pointwise_conv_params(self):
        c = model.Conv2d("c", 64, 20, (1, 1), bias=False, seed=0)
        assert c.param_count() == 1280

    def test_single_1d_conv_params(self):
        c = model.Conv2d("c", 64, 64, (3, 1), padding=(1, 0), bias=False, seed=0)
        assert c.param_count() == 12288

    def test_pointwise_conv_macs(self):
        c = model.Conv2d("c", 16, 24, (1, 1), bias=False, seed=0)
        rows, _ = c.cost_rows(10, 12)
        assert rows[0].macs == 10 * 12 * 16 * 24
        assert rows[0].pointwise_macs == rows[0].macs

    def test_1d_conv_macs_on_64x128(self):
        c = model.Conv2d("c", 64, 64, (3, 1), padding=(1, 0), bias=False, seed=0)
        rows, _ = c.cost_rows(64, 128)
        assert rows[0].macs == 64 * 128 * 64 * 64 * 3 == 100_663_296

    def test_report_totals_are_row_sums(self):
        net = build_lednet(20, 512, 1024, seed=0)
        rep = count_macs(net, 512, 1024)
        assert rep.total_params == sum(r.params for r in rep.rows)
        assert rep.total_macs == sum(r.macs for r in rep.rows)

    def test_ssnbt_rows_have_zero_pointwise_macs(self):
        unit = SSnbt("u", 128, dilation=9, seed=0)
        rows, _ = unit.cost_rows(64, 128)
        assert all(r.pointwise_macs == 0 for r in rows)


class TestCompareModules:
    def test_non_bt_1d_params(self):
        table = compare_modules(64, 64, 128)
        assert table["non-bt-1D"].params == 49152

    def test_ssnbt_conv_params_half_of_non_bt_1d(self):
        table = compare_modules(64, 64, 128)
        assert table["SS-nbt"].params == 24576
        assert table["SS-nbt"].params * 2 == table["non-bt-1D"].params

    def test_ssnbt_has_zero_pointwise_macs(self):
        table = compare_modules(128, 64, 128)
        assert table["SS-nbt"].pointwise_macs == 0
        assert table["bottleneck"].pointwise_macs > 0
        assert table["shuffle-unit"].pointwise_macs > 0

    def test_all_rows_present(self):
        table = compare_modules(32, 8, 8)
        assert set(table) == {"bottleneck", "non-bt-1D", "shuffle-unit", "SS-nbt"}


class TestReceptiveField:
    def test_dilated_encoder_footprint_exceeds_plain(self):
        # wide input so the all-r=1 receptive field does not saturate it
        width = 1024
        x_np = np.random.default_rng(0).uniform(0.2, 1.0, (1, 3, 16, width))

        def footprint_width(dilations):
            enc = Encoder("e", seed=1, dilations=dilations)
            # batch statistics couple every pixel through the BN mean, so
            # measure in eval mode after fixing the running stats
            calibrate_bn(enc, x_np)
            x = Tensor(x_np, dtype=np.float64, requires_grad=True)
            mask = np.zeros((1, 128, 2, width // 8))
            mask[0, :, 1, width // 16] = 1.0
            with GraphTape() as tape:
                out = enc.forward(x, training=False)
                loss = tsum(out * Tensor(mask, dtype=np.float64))
            g = tape.gradients(loss)[x].data
            cols = np.nonzero(np.abs(g).sum(axis=(0, 1, 2)))[0]
            return cols.max() - cols.min() + 1

        # relu masking makes the measured footprint a lower bound on the
        # theoretical receptive field; the margin between the two encoders
        # is large enough that the comparison is stable
        plain = footprint_width((1,) * 8)
        dilated = footprint_width(DILATION_SCHEDULE)
        assert dilated > plain
