"""Block-level tests: parameter arithmetic, residual wiring, receptive
fields, and the parameter-free stage transition."""

import numpy as np
import pytest

from uhnet.blocks import (
    BlockSpec,
    PoolBlock,
    block_param_count,
    build_block,
    build_fblock,
    build_poolblock,
)
from uhnet.errors import ConfigError
from uhnet.tensor import Tensor


def conv_params(kind, c_in, c_mid, c_out):
    spec = BlockSpec(kind, c_in, c_mid, c_out, residual=(c_in == c_out))
    return block_param_count(build_block(spec), include_norm=False)


class TestParameterArithmetic:
    """Conv-weight counts for every block variant at the reference widths."""

    @pytest.mark.parametrize(
        "kind,count",
        [("rb1", 12288), ("lb", 3360), ("pddp", 3648)],
    )
    def test_expanding_32_32_64(self, kind, count):
        assert conv_params(kind, 32, 32, 64) == count

    @pytest.mark.parametrize(
        "kind,count",
        [("rb1", 11264), ("rb2", 20480), ("lb", 2336), ("pddp", 2624), ("lb5x5", 2848)],
    )
    def test_uniform_32_32_32(self, kind, count):
        assert conv_params(kind, 32, 32, 32) == count

    def test_formula_decomposition(self):
        """pddp = two pointwise mixes plus two depthwise 3x3 stacks."""
        c = 32
        assert conv_params("pddp", c, c, c) == c * c + 2 * (c * 9) + c * c

    def test_norm_params_add_two_per_channel(self):
        spec = BlockSpec("pddp", 32, 32, 32, residual=True)
        with_norm = block_param_count(build_block(spec), include_norm=True)
        # pw1/dw1/dw2/pw2 each normalize 32 channels
        assert with_norm == 2624 + 4 * 2 * 32

    def test_depthwise_much_cheaper_than_standard(self):
        assert conv_params("pddp", 32, 32, 32) < conv_params("rb2", 32, 32, 32) / 7


class TestBlockSpec:
    """BlockSpec validation rules."""

    def test_residual_requires_matching_channels(self):
        with pytest.raises(ConfigError):
            BlockSpec("pddp", 32, 32, 64, residual=True)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigError):
            BlockSpec("mystery", 8, 8, 8)

    def test_body_conv_counts(self):
        assert (BlockSpec("rb2", 8, 8, 8).ns, BlockSpec("rb2", 8, 8, 8).nd) == (2, 0)
        assert (BlockSpec("pddp", 8, 8, 8).ns, BlockSpec("pddp", 8, 8, 8).nd) == (0, 2)


class TestBlockForward:
    """Functional behavior of the bottleneck family."""

    def test_output_shape_preserved(self):
        block = build_block(BlockSpec("pddp", 3, 8, 8), rng=np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).random((2, 3, 6, 6)).astype(np.float32))
        assert block.forward(x).shape == (2, 8, 6, 6)

    def test_zeroed_residual_block_passes_relu_of_input(self):
        """With all conv weights and norm scales zeroed, a residual block
        computes relu(0 + x)."""
        block = build_block(BlockSpec("pddp", 4, 4, 4, residual=True),
                            rng=np.random.default_rng(0))
        for _, conv, norm in block.named_layers():
            conv.weight.data[:] = 0.0
            norm.scale.data[:] = 0.0
        x = np.random.default_rng(2).standard_normal((1, 4, 5, 5)).astype(np.float32)
        out = block.forward(Tensor(x), training=True)
        assert np.allclose(out.data, np.maximum(x, 0.0), atol=1e-6)

    def test_nonresidual_block_ignores_input_identity(self):
        block = build_block(BlockSpec("pddp", 4, 4, 4, residual=False),
                            rng=np.random.default_rng(0))
        for _, conv, norm in block.named_layers():
            conv.weight.data[:] = 0.0
            norm.scale.data[:] = 0.0
        x = np.random.default_rng(2).standard_normal((1, 4, 5, 5)).astype(np.float32)
        out = block.forward(Tensor(x), training=True)
        assert np.allclose(out.data, 0.0)

    def test_pddp_receptive_field_is_5x5(self):
        """A centered input spike influences exactly a 5x5 output patch
        through the two stacked 3x3 depthwise convs."""
        rng = np.random.default_rng(3)
        block = build_block(BlockSpec("pddp", 1, 1, 1), norm_enabled=False, rng=rng)
        for _, conv, _ in block.named_layers():
            conv.weight.data[:] = np.abs(conv.weight.data) + 0.1  # keep relus active
        h = w = 11
        base = block.forward(Tensor(np.zeros((1, 1, h, w), np.float32))).data
        spike = np.zeros((1, 1, h, w), np.float32)
        spike[0, 0, 5, 5] = 1.0
        diff = np.abs(block.forward(Tensor(spike)).data - base)[0, 0]
        touched = np.argwhere(diff > 1e-8)
        assert touched.min(axis=0).tolist() == [3, 3]
        assert touched.max(axis=0).tolist() == [7, 7]

    def test_lb_receptive_field_is_3x3(self):
        rng = np.random.default_rng(3)
        block = build_block(BlockSpec("lb", 1, 1, 1), norm_enabled=False, rng=rng)
        for _, conv, _ in block.named_layers():
            conv.weight.data[:] = np.abs(conv.weight.data) + 0.1
        h = w = 9
        base = block.forward(Tensor(np.zeros((1, 1, h, w), np.float32))).data
        spike = np.zeros((1, 1, h, w), np.float32)
        spike[0, 0, 4, 4] = 1.0
        diff = np.abs(block.forward(Tensor(spike)).data - base)[0, 0]
        touched = np.argwhere(diff > 1e-8)
        assert touched.min(axis=0).tolist() == [3, 3]
        assert touched.max(axis=0).tolist() == [5, 5]


class TestPoolBlock:
    """Max+avg fusion with zero parameters."""

    def test_add_mode_equal_channels(self):
        pb = build_poolblock(4, 4)
        assert pb.mode == "add"
        x = np.arange(1, 17, dtype=np.float32).reshape(1, 1, 4, 4)
        x = np.repeat(x, 4, axis=1)
        out = pb.forward(Tensor(x))
        # max [[6,8],[14,16]] plus avg [[3.5,5.5],[11.5,13.5]]
        assert np.allclose(out.data[0, 0], [[9.5, 13.5], [25.5, 29.5]])

    def test_concat_mode_doubles_channels_max_first(self):
        pb = build_poolblock(2, 4)
        assert pb.mode == "concat"
        x = np.arange(1, 17, dtype=np.float32).reshape(1, 1, 4, 4)
        x = np.concatenate([x, x], axis=1)
        out = pb.forward(Tensor(x))
        assert out.shape == (1, 4, 2, 2)
        assert np.allclose(out.data[0, 0], [[6, 8], [14, 16]])
        assert np.allclose(out.data[0, 2], [[3.5, 5.5], [11.5, 13.5]])

    def test_unsupported_ratio_rejected(self):
        with pytest.raises(ConfigError):
            build_poolblock(4, 12)

    def test_no_parameters(self):
        assert block_param_count(build_poolblock(8, 16)) == 0


class TestFBlock:
    """Decoder unit: upsample, channel-match, norm, relu."""

    def test_output_matches_previous_stage_geometry(self):
        fb = build_fblock(8, 4, rng=np.random.default_rng(0))
        x = Tensor(np.random.default_rng(1).random((1, 8, 3, 5)).astype(np.float32))
        assert fb.forward(x).shape == (1, 4, 6, 10)

    def test_param_count_is_pointwise_plus_norm(self):
        fb = build_fblock(8, 4, rng=np.random.default_rng(0))
        assert block_param_count(fb, include_norm=False) == 8 * 4
        assert block_param_count(fb, include_norm=True) == 8 * 4 + 2 * 4

    def test_output_nonnegative(self):
        fb = build_fblock(4, 4, rng=np.random.default_rng(0))
        x = Tensor(np.random.default_rng(2).standard_normal((1, 4, 4, 4)).astype(np.float32))
        assert (fb.forward(x, training=True).data >= 0).all()
