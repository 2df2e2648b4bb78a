"""Slow reference implementations used as ground truth.

Nothing here shares code with the fast paths in :mod:`octconv.tensor` and
:mod:`octconv.octave` beyond the data types. Convolutions are evaluated by
explicit index arithmetic with zero padding, always in float64.
"""

from __future__ import annotations

import numpy as np

from . import rng
from .cost import split_channels
from .errors import ShapeError
from .octave import (
    ALL_PATHS,
    DownsampleStrategy,
    OctTensor,
    make_oct_kernel,
    oct_conv_backward,
    oct_conv_forward,
)
from .tensor import ConvKernel


def _as_kernel(w):
    return w if isinstance(w, ConvKernel) else ConvKernel(w)


def vanilla_ref(x, w, padding=0, stride=1):
    """Direct transcription of the cross-correlation sum, one scalar at a time."""
    kern = _as_kernel(w)
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != kern.c_in:
        raise ShapeError(f"input {x.shape} incompatible with kernel c_in={kern.c_in}")
    n, c_in, h, wd = x.shape
    c_out, cin_g, kh, kw = kern.shape
    cout_g = c_out // kern.groups
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("kernel larger than padded input")
    xs = x.tolist()
    ws = np.asarray(kern.weight, dtype=np.float64).tolist()
    out = np.zeros((n, c_out, ho, wo))
    for b in range(n):
        for o in range(c_out):
            base = (o // cout_g) * cin_g
            for p in range(ho):
                for q in range(wo):
                    s = 0.0
                    for i in range(kh):
                        y = p * stride + i - padding
                        if not 0 <= y < h:
                            continue
                        for j in range(kw):
                            xx = q * stride + j - padding
                            if not 0 <= xx < wd:
                                continue
                            for c in range(cin_g):
                                s += ws[o][c][i][j] * xs[b][base + c][y][xx]
                    out[b, o, p, q] = s
    return out


def _weight_taps(kern):
    """Per-tap dense ``(c_out, c_in)`` matrices with grouped structure expanded to zeros."""
    w = np.asarray(kern.weight, dtype=np.float64)
    c_out, cin_g, kh, kw = w.shape
    g = kern.groups
    dense = np.zeros((c_out, cin_g * g, kh, kw))
    cout_g = c_out // g
    for o in range(c_out):
        base = (o // cout_g) * cin_g
        dense[o, base : base + cin_g] = w[o]
    return dense


def _folded_sum(out, taps, sample, radius):
    """Accumulate ``sum_{i,j} W[:, :, i, j] @ sample(p, q, di, dj)`` into ``out[b]`` slices."""
    n, _, ho, wo = out.shape
    for b in range(n):
        for p in range(ho):
            for q in range(wo):
                for i in range(-radius, radius + 1):
                    for j in range(-radius, radius + 1):
                        v = sample(b, p, q, i, j)
                        if v is not None:
                            out[b, :, p, q] += taps[:, :, i + radius, j + radius] @ v


def _live(kern):
    return kern is not None and kern.size > 0


def oct_high_ref(x, k, mask=ALL_PATHS):
    """High-frequency output by direct indexing; the low map is read at ``(p//2 + i, q//2 + j)``."""
    xh = np.asarray(x.high, dtype=np.float64)
    xl = np.asarray(x.low, dtype=np.float64)
    n, _, h, w = xh.shape
    co_h, _ = k.out_split
    r = k.padding
    out = np.zeros((n, co_h, h, w))
    if not co_h:
        return out
    if _live(k.w_hh):
        taps = _weight_taps(k.w_hh)

        def hh(b, p, q, i, j):
            y, z = p + i, q + j
            return xh[b, :, y, z] if 0 <= y < h and 0 <= z < w else None

        _folded_sum(out, taps, hh, r)
    if _live(k.w_lh) and mask.enable_l_to_h:
        taps = _weight_taps(k.w_lh)
        hl_, wl_ = xl.shape[2:]

        def lh(b, p, q, i, j):
            y, z = p // 2 + i, q // 2 + j
            return xl[b, :, y, z] if 0 <= y < hl_ and 0 <= z < wl_ else None

        _folded_sum(out, taps, lh, r)
    return out


def oct_low_ref(x, k, strategy=DownsampleStrategy.AVERAGE_POOL, mask=ALL_PATHS):
    """Low-frequency output by direct indexing.

    The high map is sampled at half-pixel offsets: ``AVERAGE_POOL`` reads the
    fractional location ``(2(p+i) + 0.5, 2(q+j) + 0.5)`` as the mean of its four
    integer neighbours (``MAX_POOL`` takes their max); ``STRIDED_CONV`` rounds
    the location down to ``(2p + i, 2q + j)``.
    """
    strategy = DownsampleStrategy.parse(strategy)
    xh = np.asarray(x.high, dtype=np.float64)
    xl = np.asarray(x.low, dtype=np.float64)
    n, _, h, w = xh.shape
    ho, wo = h // 2, w // 2
    _, co_l = k.out_split
    r = k.padding
    out = np.zeros((n, co_l, ho, wo))
    if not co_l:
        return out
    if _live(k.w_ll):
        taps = _weight_taps(k.w_ll)

        def ll(b, p, q, i, j):
            y, z = p + i, q + j
            return xl[b, :, y, z] if 0 <= y < ho and 0 <= z < wo else None

        _folded_sum(out, taps, ll, r)
    if _live(k.w_hl) and mask.enable_h_to_l:
        taps = _weight_taps(k.w_hl)
        if strategy is DownsampleStrategy.STRIDED_CONV:

            def hl(b, p, q, i, j):
                y, z = 2 * p + i, 2 * q + j
                return xh[b, :, y, z] if 0 <= y < h and 0 <= z < w else None

        else:
            reduce = np.max if strategy is DownsampleStrategy.MAX_POOL else np.mean

            def hl(b, p, q, i, j):
                y, z = 2 * (p + i), 2 * (q + j)
                if not (0 <= y < h and 0 <= z < w):
                    return None
                quad = np.stack([xh[b, :, y, z], xh[b, :, y, z + 1], xh[b, :, y + 1, z], xh[b, :, y + 1, z + 1]])
                return reduce(quad, axis=0)

        _folded_sum(out, taps, hl, r)
    return out


def finite_diff_grad(f, x, step=1e-5):
    """Central differences ``(f(x + step e_i) - f(x - step e_i)) / (2 step)`` for every element."""
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for idx in range(flat.size):
        orig = flat[idx]
        flat[idx] = orig + step
        fp = f(x)
        flat[idx] = orig - step
        fm = f(x)
        flat[idx] = orig
        gflat[idx] = (fp - fm) / (2 * step)
    return grad


# Gradients that are exactly zero analytically come back from central
# differences as O(1e-10) cancellation noise; below this magnitude the
# elementwise ratio is not meaningful.
REL_ERR_FLOOR = 1e-5


def max_relative_error(analytic, numeric, floor=REL_ERR_FLOOR):
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(numeric, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def gradcheck_oct(x, k, strategy=DownsampleStrategy.AVERAGE_POOL, mask=ALL_PATHS, seed=0, step=1e-5):
    """Compare :func:`oct_conv_backward` with finite differences of a random linear probe.

    The scalar objective is ``sum(R_h * Y_h) + sum(R_l * Y_l)`` with fixed random
    ``R``. Returns ``{name: max relative error}`` over ``x_high``, ``x_low`` and
    every weight block.
    """
    x = x.astype(np.float64)
    k = k.astype(np.float64)
    y = oct_conv_forward(x, k, strategy, mask)
    g = rng.stream(seed, "gradcheck-probe")
    probe = OctTensor(g.standard_normal(y.high.shape), g.standard_normal(y.low.shape), y.alpha)

    def objective(xx, kk):
        yy = oct_conv_forward(xx, kk, strategy, mask)
        return float(np.sum(probe.high * yy.high) + np.sum(probe.low * yy.low))

    gx, gk = oct_conv_backward(x, k, probe, strategy, mask)
    errors = {}
    if x.high.size:
        num = finite_diff_grad(lambda t: objective(OctTensor(t, x.low, x.alpha), k), x.high, step)
        errors["x_high"] = max_relative_error(gx.high, num)
    if x.low.size:
        num = finite_diff_grad(lambda t: objective(OctTensor(x.high, t, x.alpha), k), x.low, step)
        errors["x_low"] = max_relative_error(gx.low, num)
    weights = k.weights()
    for name, w in weights.items():
        if not w.size:
            continue

        def f(t, name=name):
            return objective(x, k.with_weights({**weights, name: t}))

        errors["w_" + name] = max_relative_error(gk.weights()[name], finite_diff_grad(f, w, step))
    return errors


def random_oct_instance(seed, c_in, c_out, h, w, alpha_in, alpha_out, n=1, k=3, mode="dense", groups=1):
    """Seeded random ``(OctTensor, OctKernel)`` pair; replayable from ``seed``."""
    g = rng.stream(seed, "instance", c_in, c_out, h, w, alpha_in, alpha_out, n, k, mode, groups)
    ci_h, ci_l = split_channels(c_in, alpha_in)
    x = OctTensor(g.standard_normal((n, ci_h, h, w)), g.standard_normal((n, ci_l, h // 2, w // 2)), alpha_in)
    kern = make_oct_kernel(c_in, c_out, k, alpha_in, alpha_out, mode=mode, seed=seed, groups=groups)
    return x, kern


def rel_deviation(fast, ref):
    """``max |fast - ref| / max |ref|``: deviation relative to the reference's scale."""
    fast = np.asarray(fast, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if ref.size == 0:
        return 0.0
    scale = float(np.max(np.abs(ref)))
    return float(np.max(np.abs(fast - ref))) / (scale if scale > 0 else 1.0)


def sample_instance_params(seed, max_c=16, max_hw=16):
    """Random layer hyper-parameters for equivalence runs, replayable from ``seed``."""
    g = rng.stream(seed, "instance-params")
    mode = ["dense", "dense", "grouped", "depthwise"][g.integers(0, 4)]
    alpha_in = float(g.choice([0.0, 0.125, 0.25, 0.5, 0.75, 1.0, g.uniform()]))
    alpha_out = float(g.choice([0.0, 0.125, 0.25, 0.5, 0.75, 1.0, g.uniform()]))
    c_in = int(g.integers(1, max_c + 1))
    c_out = int(g.integers(1, max_c + 1))
    groups = 1
    if mode == "depthwise":
        c_out, alpha_out = c_in, alpha_in
    elif mode == "grouped":
        groups = 2
        # every non-empty block must split evenly into 2 groups
        c_in = 2 * max(1, c_in // 2)
        c_out = 2 * max(1, c_out // 2)
        for _ in range(50):
            blocks = [v for v in (*split_channels(c_in, alpha_in), *split_channels(c_out, alpha_out)) if v]
            if all(v % 2 == 0 for v in blocks):
                break
            alpha_in = float(g.choice([0.0, 0.25, 0.5, 0.75, 1.0]))
            alpha_out = float(g.choice([0.0, 0.25, 0.5, 0.75, 1.0]))
            c_in = c_out = 4 * int(g.integers(1, max_c // 4 + 1))
    h = 2 * int(g.integers(1, max_hw // 2 + 1))
    w = 2 * int(g.integers(1, max_hw // 2 + 1))
    return dict(c_in=c_in, c_out=c_out, h=h, w=w, alpha_in=alpha_in, alpha_out=alpha_out,
                n=int(g.integers(1, 3)), k=int(g.choice([1, 3, 3, 5])), mode=mode, groups=groups)


def oracle_suite(seed, instances=10, max_c=16, max_hw=16):
    """Fast paths versus references on ``instances`` random cases.

    Returns the worst :func:`rel_deviation` for each comparison: ``conv2d`` vs
    :func:`vanilla_ref`; the octave forward's high output vs
    :func:`oct_high_ref`; its low output vs :func:`oct_low_ref` under average
    pooling; and under strided convolution.
    """
    from .tensor import conv2d

    worst = {"vanilla": 0.0, "high": 0.0, "low_avg": 0.0, "low_stride": 0.0}
    for i in range(instances):
        s = rng.derive(seed, "oracle-suite", i)
        p = sample_instance_params(s, max_c, max_hw)
        x, k = random_oct_instance(s, **p)
        # vanilla: the instance's H->H block on the high input (capped size keeps the scalar loop quick)
        g = rng.stream(s, "vanilla")
        c = min(p["c_in"], 8)
        xv = g.standard_normal((1, c, min(p["h"], 8), min(p["w"], 8)))
        wv = g.standard_normal((int(g.integers(1, 9)), c, p["k"], p["k"]))
        worst["vanilla"] = max(worst["vanilla"], rel_deviation(conv2d(xv, wv, 1, p["k"] // 2),
                                                             vanilla_ref(xv, wv, p["k"] // 2)))
        y = oct_conv_forward(x, k)
        worst["high"] = max(worst["high"], rel_deviation(y.high, oct_high_ref(x, k)))
        worst["low_avg"] = max(worst["low_avg"], rel_deviation(y.low, oct_low_ref(x, k)))
        ys = oct_conv_forward(x, k, DownsampleStrategy.STRIDED_CONV)
        worst["low_stride"] = max(worst["low_stride"],
                                  rel_deviation(ys.low, oct_low_ref(x, k, DownsampleStrategy.STRIDED_CONV)))
    return worst
