"""Octave convolution over a two-resolution feature representation.

A feature tensor is split along channels into a high-frequency group at full
resolution and a low-frequency group at half resolution. The operator runs
four convolutions (H->H, L->H, H->L, L->L); the exchange paths move between
resolutions with 2x pooling and nearest upsampling, so every internal
convolution is stride 1 with same padding.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from . import rng
from .cost import split_channels
from .errors import ConfigError, ShapeError
from .tensor import (
    ConvKernel,
    avg_pool2,
    avg_pool2_backward,
    check_tensor4,
    conv2d,
    conv2d_backward,
    max_pool2,
    max_pool2_backward,
    upsample_nearest2,
    upsample_nearest2_backward,
)

BLOCKS = ("hh", "lh", "hl", "ll")


class DownsampleStrategy(enum.Enum):
    AVERAGE_POOL = "avg"
    MAX_POOL = "max"
    STRIDED_CONV = "stride"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            raise ConfigError(f"unknown downsample strategy {value!r}; expected avg, max or stride") from None


@dataclass(frozen=True)
class PathMask:
    """Switches for the two inter-frequency paths (ablation only)."""

    enable_l_to_h: bool = True
    enable_h_to_l: bool = True


ALL_PATHS = PathMask()


@dataclass(frozen=True)
class OctTensor:
    """Feature maps split into a full-resolution high group and a half-resolution low group.

    Either group may have zero channels (``alpha == 0`` or ``alpha == 1``); the
    empty array still carries the spatial dims of its resolution.
    """

    high: np.ndarray
    low: np.ndarray
    alpha: float

    def __post_init__(self):
        high = check_tensor4(self.high, "high", allow_empty_channels=True)
        low = np.asarray(self.low)
        if low.ndim != 4:
            raise ShapeError(f"low: expected rank-4 tensor, got shape {low.shape}")
        object.__setattr__(self, "high", high)
        object.__setattr__(self, "low", low)
        n, c_h, h, w = high.shape
        if low.shape[0] != n:
            raise ShapeError(f"batch mismatch: high has {n}, low has {low.shape[0]}")
        if low.shape[2:] != (h // 2, w // 2):
            raise ShapeError(f"low spatial dims {low.shape[2:]} are not half of high {(h, w)}")
        if low.shape[1] and (h % 2 or w % 2):
            raise ShapeError(f"octave tensor needs even high-frequency dims, got {h}x{w}")
        c = c_h + low.shape[1]
        if split_channels(c, self.alpha) != (c_h, low.shape[1]):
            raise ShapeError(
                f"channel split ({c_h} high, {low.shape[1]} low) inconsistent with alpha={self.alpha}"
            )

    @classmethod
    def from_tensor(cls, x):
        """Wrap a vanilla tensor as an octave tensor with an empty low group."""
        x = check_tensor4(x)
        n, _, h, w = x.shape
        return cls(x, np.zeros((n, 0, h // 2, w // 2), dtype=x.dtype), 0.0)

    @classmethod
    def zeros(cls, n, c, h, w, alpha, dtype=np.float64):
        c_h, c_l = split_channels(c, alpha)
        return cls(np.zeros((n, c_h, h, w), dtype), np.zeros((n, c_l, h // 2, w // 2), dtype), alpha)

    @property
    def channels(self):
        return self.high.shape[1] + self.low.shape[1]

    @property
    def spatial(self):
        return self.high.shape[2:]

    @property
    def batch(self):
        return self.high.shape[0]

    def numel(self):
        return self.high.size + self.low.size

    def map(self, fn):
        """Apply ``fn`` to both groups, keeping alpha."""
        return OctTensor(fn(self.high), fn(self.low), self.alpha)

    def astype(self, dtype):
        return self.map(lambda t: t.astype(dtype))


@dataclass(frozen=True)
class OctKernel:
    """The four weight blocks of an octave convolution.

    Blocks are indexed by path: ``hh`` (H->H), ``lh`` (L->H), ``hl`` (H->L),
    ``ll`` (L->L). A block with zero channels on either side is kept as an
    empty array and never convolved. In depthwise mode the two exchange blocks
    are ``None``.
    """

    w_hh: ConvKernel | None
    w_lh: ConvKernel | None
    w_hl: ConvKernel | None
    w_ll: ConvKernel | None
    c_in: int
    c_out: int
    k: int
    alpha_in: float
    alpha_out: float
    mode: str = "dense"
    groups: int = 1
    seed: int = 0

    @property
    def in_split(self):
        return split_channels(self.c_in, self.alpha_in)

    @property
    def out_split(self):
        return split_channels(self.c_out, self.alpha_out)

    @property
    def padding(self):
        return (self.k - 1) // 2

    def block(self, name):
        return getattr(self, "w_" + name)

    def blocks(self):
        """``(name, ConvKernel)`` for every present block, empty ones included."""
        return [(b, self.block(b)) for b in BLOCKS if self.block(b) is not None]

    def param_count(self):
        return sum(kern.size for _, kern in self.blocks())

    def with_weights(self, weights):
        """Copy with block weights replaced from a ``{name: ndarray}`` mapping."""
        new = {}
        for name, kern in self.blocks():
            w = np.asarray(weights[name])
            if w.shape != kern.shape:
                raise ShapeError(f"block {name}: shape {w.shape} != {kern.shape}")
            new["w_" + name] = ConvKernel(w, kern.groups)
        return replace(self, **new)

    def weights(self):
        return {name: kern.weight for name, kern in self.blocks()}

    def astype(self, dtype):
        return self.with_weights({n: w.astype(dtype) for n, w in self.weights().items()})


def _block_groups(mode, groups, ci, co):
    if mode == "dense":
        return 1
    if mode == "grouped":
        if ci % groups or co % groups:
            raise ConfigError(f"grouped block {co}x{ci} not divisible by groups={groups}")
        return groups
    raise AssertionError(mode)


def init_block(shape, groups, seed, *labels, dtype=np.float64):
    """Fan-in scaled normal weights, ``std = sqrt(2 / (c_in_per_group * k^2))``."""
    c_out, cin_g, kh, kw = shape
    if c_out == 0 or cin_g == 0:
        return ConvKernel(np.zeros(shape, dtype), 1 if c_out == 0 else groups)
    std = np.sqrt(2.0 / (cin_g * kh * kw))
    w = rng.stream(seed, *labels).standard_normal(shape) * std
    return ConvKernel(w.astype(dtype), groups)


def make_oct_kernel(c_in, c_out, k, alpha_in=0.0, alpha_out=0.0, mode="dense", seed=0, groups=1,
                    layer=0, dtype=np.float64):
    """Build an :class:`OctKernel` with ``c_low = floor(alpha * c)`` on each side.

    ``mode`` is ``"dense"``, ``"grouped"`` (every block uses ``groups`` groups)
    or ``"depthwise"`` (needs ``c_in == c_out`` and ``alpha_in == alpha_out``;
    the exchange paths are dropped). ``layer`` distinguishes kernels that share
    a seed inside one network.
    """
    if c_in < 1 or c_out < 1:
        raise ConfigError(f"channel counts must be positive, got c_in={c_in}, c_out={c_out}")
    if k < 1 or k % 2 == 0:
        raise ConfigError(f"kernel size must be odd and positive, got {k}")
    if mode not in ("dense", "grouped", "depthwise"):
        raise ConfigError(f"unknown mode {mode!r}")
    if mode == "grouped" and groups < 1:
        raise ConfigError(f"groups must be positive, got {groups}")
    ci_h, ci_l = split_channels(c_in, alpha_in)
    co_h, co_l = split_channels(c_out, alpha_out)
    kk = (k, k)

    if mode == "depthwise":
        if c_in != c_out or (ci_h, ci_l) != (co_h, co_l):
            raise ConfigError("depthwise octave conv needs matching input/output channel splits")
        blocks = {
            "w_hh": init_block((co_h, 1, *kk), max(co_h, 1), seed, layer, "hh", dtype=dtype),
            "w_lh": None,
            "w_hl": None,
            "w_ll": init_block((co_l, 1, *kk), max(co_l, 1), seed, layer, "ll", dtype=dtype),
        }
        groups = 1
    else:
        blocks = {}
        for name, ci, co in (("hh", ci_h, co_h), ("lh", ci_l, co_h), ("hl", ci_h, co_l), ("ll", ci_l, co_l)):
            g = _block_groups(mode, groups, ci, co) if ci and co else 1
            blocks["w_" + name] = init_block((co, ci // g if g else ci, *kk), g, seed, layer, name, dtype=dtype)
        if mode == "dense":
            groups = 1
    return OctKernel(**blocks, c_in=c_in, c_out=c_out, k=k, alpha_in=float(alpha_in),
                     alpha_out=float(alpha_out), mode=mode, groups=groups, seed=seed)


def _live(kern):
    return kern is not None and not kern.is_empty()


def _check_pair(x, k):
    if not isinstance(x, OctTensor):
        raise ShapeError("octave convolution expects an OctTensor input")
    ci_h, ci_l = k.in_split
    if (x.high.shape[1], x.low.shape[1]) != (ci_h, ci_l):
        raise ShapeError(
            f"input split ({x.high.shape[1]} high, {x.low.shape[1]} low) does not match kernel "
            f"split ({ci_h}, {ci_l}) for c_in={k.c_in}, alpha_in={k.alpha_in}"
        )
    h, w = x.spatial
    co_l = k.out_split[1]
    if (ci_l or co_l) and (h % 2 or w % 2):
        raise ShapeError(f"octave convolution needs even high-frequency dims, got {h}x{w}")


def _downsample(xh, strategy):
    if strategy is DownsampleStrategy.MAX_POOL:
        return max_pool2(xh)
    return avg_pool2(xh)


def oct_conv_forward(x, k, strategy=DownsampleStrategy.AVERAGE_POOL, mask=ALL_PATHS):
    """Four-path octave convolution.

    ``Y_high = conv(X_high; W_hh) + upsample(conv(X_low; W_lh))`` and
    ``Y_low = conv(X_low; W_ll) + conv(down(X_high); W_hl)``, where ``down`` is
    2x2 average or max pooling, or, under ``STRIDED_CONV``, the H->L
    convolution itself runs with stride 2.
    """
    strategy = DownsampleStrategy.parse(strategy)
    _check_pair(x, k)
    n = x.batch
    h, w = x.spatial
    co_h, co_l = k.out_split
    pad = k.padding
    dtype = np.result_type(x.high, *[b.weight for _, b in k.blocks()])

    yh = None
    if co_h:
        if _live(k.w_hh):
            yh = conv2d(x.high, k.w_hh, 1, pad)
        if _live(k.w_lh) and mask.enable_l_to_h:
            up = upsample_nearest2(conv2d(x.low, k.w_lh, 1, pad))
            yh = up if yh is None else yh + up
    if yh is None:
        yh = np.zeros((n, co_h, h, w), dtype)

    yl = None
    if co_l:
        if _live(k.w_ll):
            yl = conv2d(x.low, k.w_ll, 1, pad)
        if _live(k.w_hl) and mask.enable_h_to_l:
            if strategy is DownsampleStrategy.STRIDED_CONV:
                down = conv2d(x.high, k.w_hl, 2, pad)
            else:
                down = conv2d(_downsample(x.high, strategy), k.w_hl, 1, pad)
            yl = down if yl is None else yl + down
    if yl is None:
        yl = np.zeros((n, co_l, h // 2, w // 2), dtype)
    return OctTensor(yh, yl, k.alpha_out)


def oct_conv_backward(x, k, grad_out, strategy=DownsampleStrategy.AVERAGE_POOL, mask=ALL_PATHS):
    """Adjoint of :func:`oct_conv_forward`.

    Returns ``(grad_x, grad_k)`` where ``grad_k`` is an :class:`OctKernel` of
    the same layout whose blocks hold the weight gradients. Masked or empty
    paths get zero gradients.
    """
    strategy = DownsampleStrategy.parse(strategy)
    _check_pair(x, k)
    expected = oct_output_shapes(x, k)
    if not isinstance(grad_out, OctTensor) or (grad_out.high.shape, grad_out.low.shape) != expected:
        got = (grad_out.high.shape, grad_out.low.shape) if isinstance(grad_out, OctTensor) else type(grad_out)
        raise ShapeError(f"grad_out shapes {got} != forward output shapes {expected}")
    pad = k.padding
    gx_high = None
    gx_low = None
    gw = {name: np.zeros_like(kern.weight) for name, kern in k.blocks()}

    def acc(current, extra):
        return extra if current is None else current + extra

    if _live(k.w_hh):
        g, gw["hh"] = conv2d_backward(x.high, k.w_hh, grad_out.high, 1, pad)
        gx_high = acc(gx_high, g)
    if _live(k.w_lh) and mask.enable_l_to_h:
        g_small = upsample_nearest2_backward(grad_out.high)
        g, gw["lh"] = conv2d_backward(x.low, k.w_lh, g_small, 1, pad)
        gx_low = acc(gx_low, g)
    if _live(k.w_ll):
        g, gw["ll"] = conv2d_backward(x.low, k.w_ll, grad_out.low, 1, pad)
        gx_low = acc(gx_low, g)
    if _live(k.w_hl) and mask.enable_h_to_l:
        if strategy is DownsampleStrategy.STRIDED_CONV:
            g, gw["hl"] = conv2d_backward(x.high, k.w_hl, grad_out.low, 2, pad)
        else:
            pooled = _downsample(x.high, strategy)
            gp, gw["hl"] = conv2d_backward(pooled, k.w_hl, grad_out.low, 1, pad)
            if strategy is DownsampleStrategy.MAX_POOL:
                g = max_pool2_backward(x.high, gp)
            else:
                g = avg_pool2_backward(gp)
        gx_high = acc(gx_high, g)

    if gx_high is None:
        gx_high = np.zeros_like(x.high, dtype=np.result_type(x.high, grad_out.high))
    if gx_low is None:
        gx_low = np.zeros_like(x.low, dtype=np.result_type(x.low, grad_out.high))
    return OctTensor(gx_high, gx_low, x.alpha), k.with_weights(gw)


def oct_output_shapes(x, k):
    n = x.batch
    h, w = x.spatial
    co_h, co_l = k.out_split
    return (n, co_h, h, w), (n, co_l, h // 2, w // 2)


def oct_entry(x, k, strategy=DownsampleStrategy.AVERAGE_POOL, mask=ALL_PATHS):
    """First octave layer: vanilla input, ``alpha_in == 0``; only H->H and H->L run."""
    if k.alpha_in != 0:
        raise ConfigError(f"entry layer needs alpha_in == 0, got {k.alpha_in}")
    return oct_conv_forward(OctTensor.from_tensor(x), k, strategy, mask)


def oct_exit(x, k, strategy=DownsampleStrategy.AVERAGE_POOL, mask=ALL_PATHS):
    """Last octave layer: ``alpha_out == 0``; returns the full-resolution tensor."""
    if k.alpha_out != 0:
        raise ConfigError(f"exit layer needs alpha_out == 0, got {k.alpha_out}")
    return oct_conv_forward(x, k, strategy, mask).high
