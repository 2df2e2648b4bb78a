import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from octconv.cost import split_channels
from octconv.errors import ConfigError, ShapeError
from octconv.octave import (
    DownsampleStrategy,
    OctTensor,
    PathMask,
    make_oct_kernel,
    oct_conv_backward,
    oct_conv_forward,
    oct_entry,
    oct_exit,
)
from octconv.oracle import random_oct_instance
from octconv.tensor import avg_pool2, conv2d, conv2d_backward, upsample_nearest2

from conftest import rel_err

STRATEGIES = list(DownsampleStrategy)
LINEAR_STRATEGIES = [DownsampleStrategy.AVERAGE_POOL, DownsampleStrategy.STRIDED_CONV]


def zeros_low(x):
    return OctTensor(x.high, np.zeros_like(x.low), x.alpha)


class TestOctTensor:
    def test_split_floor(self):
        assert split_channels(8, 0.25) == (6, 2)
        assert split_channels(10, 0.125) == (9, 1)

    def test_from_tensor(self, gen):
        x = gen.standard_normal((2, 3, 4, 4))
        t = OctTensor.from_tensor(x)
        assert t.alpha == 0.0 and t.low.shape == (2, 0, 2, 2)
        assert t.channels == 3 and t.spatial == (4, 4)

    def test_low_must_be_half(self):
        with pytest.raises(ShapeError):
            OctTensor(np.zeros((1, 2, 8, 8)), np.zeros((1, 2, 8, 8)), 0.5)

    def test_batch_mismatch(self):
        with pytest.raises(ShapeError):
            OctTensor(np.zeros((1, 2, 8, 8)), np.zeros((2, 2, 4, 4)), 0.5)

    def test_split_inconsistent_with_alpha(self):
        with pytest.raises(ShapeError):
            OctTensor(np.zeros((1, 3, 8, 8)), np.zeros((1, 1, 4, 4)), 0.5)

    def test_odd_dims_with_low_group(self):
        with pytest.raises(ShapeError):
            OctTensor(np.zeros((1, 1, 7, 8)), np.zeros((1, 1, 3, 4)), 0.5)


class TestMakeOctKernel:
    def test_block_shapes(self):
        k = make_oct_kernel(16, 32, 3, 0.5, 0.25)
        assert k.w_hh.shape == (24, 8, 3, 3)
        assert k.w_lh.shape == (24, 8, 3, 3)
        assert k.w_hl.shape == (8, 8, 3, 3)
        assert k.w_ll.shape == (8, 8, 3, 3)

    def test_param_count_example(self):
        assert make_oct_kernel(16, 32, 3, 0.5, 0.5).param_count() == 32 * 16 * 9

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 64), st.integers(1, 64), st.sampled_from([1, 3, 5, 7]),
           st.floats(0, 1), st.floats(0, 1))
    def test_param_invariance(self, c_in, c_out, k, a_in, a_out):
        assert make_oct_kernel(c_in, c_out, k, a_in, a_out).param_count() == c_out * c_in * k * k

    def test_deterministic_from_seed(self):
        a = make_oct_kernel(8, 8, 3, 0.5, 0.5, seed=9)
        b = make_oct_kernel(8, 8, 3, 0.5, 0.5, seed=9)
        c = make_oct_kernel(8, 8, 3, 0.5, 0.5, seed=10)
        for name, w in a.weights().items():
            assert w.tobytes() == b.weights()[name].tobytes()
            assert w.tobytes() != c.weights()[name].tobytes()

    def test_fan_in_scale(self):
        w = make_oct_kernel(64, 64, 3, seed=1).w_hh.weight
        assert abs(w.std() - np.sqrt(2 / (64 * 9))) < 0.01

    def test_depthwise_drops_exchange(self):
        k = make_oct_kernel(8, 8, 3, 0.5, 0.5, mode="depthwise")
        assert k.w_lh is None and k.w_hl is None
        assert k.w_hh.groups == 4 and k.w_ll.groups == 4

    def test_grouped_divisibility(self):
        with pytest.raises(ConfigError, match="divisible"):
            make_oct_kernel(6, 6, 3, 0.5, 0.5, mode="grouped", groups=2)

    @pytest.mark.parametrize("kw", [dict(k=2), dict(c_in=0), dict(mode="weird")])
    def test_invalid(self, kw):
        args = dict(c_in=4, c_out=4, k=3)
        args.update(kw)
        with pytest.raises(ConfigError):
            make_oct_kernel(**args)

    def test_depthwise_needs_matching_split(self):
        with pytest.raises(ConfigError):
            make_oct_kernel(8, 8, 3, 0.5, 0.25, mode="depthwise")


class TestForward:
    def test_degenerates_to_vanilla(self, gen):
        x = gen.standard_normal((2, 5, 6, 6))
        k = make_oct_kernel(5, 7, 3, seed=3)
        y = oct_conv_forward(OctTensor.from_tensor(x), k)
        assert y.low.shape[1] == 0
        assert y.high.tobytes() == conv2d(x, k.w_hh, 1, 1).tobytes()

    def test_zero_low_input(self):
        x, k = random_oct_instance(5, 8, 8, 8, 8, 0.5, 0.5)
        y = oct_conv_forward(zeros_low(x), k)
        assert rel_err(y.high, conv2d(x.high, k.w_hh, 1, 1)) < 1e-6
        assert rel_err(y.low, conv2d(avg_pool2(x.high), k.w_hl, 1, 1)) < 1e-6

    def test_four_path_composition(self):
        x, k = random_oct_instance(6, 8, 8, 8, 8, 0.5, 0.5)
        y = oct_conv_forward(x, k)
        hi = conv2d(x.high, k.w_hh, 1, 1) + upsample_nearest2(conv2d(x.low, k.w_lh, 1, 1))
        lo = conv2d(x.low, k.w_ll, 1, 1) + conv2d(avg_pool2(x.high), k.w_hl, 1, 1)
        assert rel_err(y.high, hi) < 1e-12 and rel_err(y.low, lo) < 1e-12

    def test_strided_strategy(self):
        x, k = random_oct_instance(6, 8, 8, 8, 8, 0.5, 0.5)
        y = oct_conv_forward(zeros_low(x), k, DownsampleStrategy.STRIDED_CONV)
        assert rel_err(y.low, conv2d(x.high, k.w_hl, 2, 1)) < 1e-12

    @pytest.mark.parametrize("mask,dropped", [(PathMask(enable_l_to_h=False), "high"),
                                              (PathMask(enable_h_to_l=False), "low")])
    def test_mask_removes_one_path(self, mask, dropped):
        x, k = random_oct_instance(7, 8, 8, 8, 8, 0.5, 0.5)
        y = oct_conv_forward(x, k, mask=mask)
        if dropped == "high":
            assert rel_err(y.high, conv2d(x.high, k.w_hh, 1, 1)) < 1e-12
        else:
            assert rel_err(y.low, conv2d(x.low, k.w_ll, 1, 1)) < 1e-12

    def test_output_alpha(self):
        x, k = random_oct_instance(1, 8, 12, 8, 8, 0.5, 0.25)
        y = oct_conv_forward(x, k)
        assert y.alpha == 0.25 and y.high.shape[1] == 9 and y.low.shape[1] == 3

    @pytest.mark.parametrize("strategy", LINEAR_STRATEGIES)
    def test_linear_in_input(self, strategy):
        x, k = random_oct_instance(8, 8, 8, 8, 8, 0.5, 0.5)
        z, _ = random_oct_instance(9, 8, 8, 8, 8, 0.5, 0.5)
        comb = OctTensor(2 * x.high - z.high, 2 * x.low - z.low, 0.5)
        y, yx, yz = (oct_conv_forward(t, k, strategy) for t in (comb, x, z))
        assert rel_err(y.high, 2 * yx.high - yz.high) < 1e-12
        assert rel_err(y.low, 2 * yx.low - yz.low) < 1e-12

    def test_linear_in_weights(self):
        x, k = random_oct_instance(10, 8, 8, 8, 8, 0.5, 0.5)
        _, k2 = random_oct_instance(11, 8, 8, 8, 8, 0.5, 0.5)
        ksum = k.with_weights({n: w + 3 * k2.weights()[n] for n, w in k.weights().items()})
        y, a, b = (oct_conv_forward(x, kk) for kk in (ksum, k, k2))
        assert rel_err(y.high, a.high + 3 * b.high) < 1e-12
        assert rel_err(y.low, a.low + 3 * b.low) < 1e-12

    def test_depthwise_no_cross_frequency(self, gen):
        x, k = random_oct_instance(12, 8, 8, 8, 8, 0.5, 0.5, mode="depthwise")
        y = oct_conv_forward(x, k)
        y_low_perturbed = oct_conv_forward(OctTensor(x.high, x.low + gen.standard_normal(x.low.shape), 0.5), k)
        y_high_perturbed = oct_conv_forward(OctTensor(x.high + gen.standard_normal(x.high.shape), x.low, 0.5), k)
        assert y.high.tobytes() == y_low_perturbed.high.tobytes()
        assert y.low.tobytes() == y_high_perturbed.low.tobytes()

    def test_channel_split_mismatch(self):
        x, _ = random_oct_instance(1, 8, 8, 8, 8, 0.5, 0.5)
        k = make_oct_kernel(8, 8, 3, 0.25, 0.5)
        with pytest.raises(ShapeError):
            oct_conv_forward(x, k)


class TestBackward:
    def test_zero_grad(self):
        x, k = random_oct_instance(2, 8, 8, 6, 6, 0.5, 0.5)
        y = oct_conv_forward(x, k)
        gx, gk = oct_conv_backward(x, k, OctTensor(np.zeros_like(y.high), np.zeros_like(y.low), y.alpha))
        assert not gx.high.any() and not gx.low.any()
        assert not any(w.any() for w in gk.weights().values())

    def test_alpha_zero_matches_vanilla(self, gen):
        x = gen.standard_normal((1, 4, 6, 6))
        k = make_oct_kernel(4, 5, 3, seed=4)
        g = gen.standard_normal((1, 5, 6, 6))
        gx, gk = oct_conv_backward(OctTensor.from_tensor(x), k, OctTensor.from_tensor(g))
        vx, vw = conv2d_backward(x, k.w_hh, g, 1, 1)
        assert gx.high.tobytes() == vx.tobytes()
        assert gk.w_hh.weight.tobytes() == vw.tobytes()

    @pytest.mark.parametrize("strategy", LINEAR_STRATEGIES)
    def test_adjoint_identity(self, strategy, gen):
        # for a linear map, <J x, g> == <x, J^T g>
        x, k = random_oct_instance(13, 8, 8, 8, 8, 0.5, 0.5)
        y = oct_conv_forward(x, k, strategy)
        g = OctTensor(gen.standard_normal(y.high.shape), gen.standard_normal(y.low.shape), y.alpha)
        gx, _ = oct_conv_backward(x, k, g, strategy)
        lhs = np.sum(y.high * g.high) + np.sum(y.low * g.low)
        rhs = np.sum(x.high * gx.high) + np.sum(x.low * gx.low)
        assert np.isclose(lhs, rhs, rtol=1e-10)

    def test_grad_shape_mismatch(self):
        x, k = random_oct_instance(2, 8, 4, 6, 6, 0.5, 0.5)
        with pytest.raises(ShapeError):
            oct_conv_backward(x, k, x)


class TestBoundaryLayers:
    def test_entry_plain_when_alpha_out_zero(self, gen):
        x = gen.standard_normal((1, 3, 6, 6))
        k = make_oct_kernel(3, 4, 3)
        np.testing.assert_array_equal(oct_entry(x, k).high, conv2d(x, k.w_hh, 1, 1))

    def test_entry_all_low(self, gen):
        x = gen.standard_normal((1, 3, 6, 6))
        k = make_oct_kernel(3, 4, 3, 0.0, 1.0)
        y = oct_entry(x, k)
        assert y.high.shape[1] == 0
        np.testing.assert_allclose(y.low, conv2d(avg_pool2(x), k.w_hl, 1, 1), atol=1e-12)

    def test_entry_matches_general(self, gen):
        x = gen.standard_normal((2, 4, 8, 8))
        k = make_oct_kernel(4, 8, 3, 0.0, 0.25, seed=2)
        a = oct_entry(x, k)
        b = oct_conv_forward(OctTensor.from_tensor(x), k)
        assert a.high.tobytes() == b.high.tobytes() and a.low.tobytes() == b.low.tobytes()

    def test_entry_rejects_octave_kernel(self, gen):
        with pytest.raises(ConfigError):
            oct_entry(gen.standard_normal((1, 4, 4, 4)), make_oct_kernel(4, 4, 3, 0.5, 0.5))

    def test_exit_empty_low_is_plain(self, gen):
        x = gen.standard_normal((1, 3, 6, 6))
        k = make_oct_kernel(3, 4, 3)
        np.testing.assert_array_equal(oct_exit(OctTensor.from_tensor(x), k), conv2d(x, k.w_hh, 1, 1))

    def test_exit_zero_high(self):
        x, k = random_oct_instance(3, 8, 4, 8, 8, 0.5, 0.0)
        x0 = OctTensor(np.zeros_like(x.high), x.low, x.alpha)
        np.testing.assert_allclose(oct_exit(x0, k), upsample_nearest2(conv2d(x.low, k.w_lh, 1, 1)), atol=1e-12)

    def test_exit_matches_general(self):
        x, k = random_oct_instance(4, 8, 4, 8, 8, 0.5, 0.0)
        assert oct_exit(x, k).tobytes() == oct_conv_forward(x, k).high.tobytes()

    def test_exit_rejects_octave_kernel(self):
        x, k = random_oct_instance(4, 8, 8, 8, 8, 0.5, 0.5)
        with pytest.raises(ConfigError):
            oct_exit(x, k)
