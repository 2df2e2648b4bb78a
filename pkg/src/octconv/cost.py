"""Theoretical and counted cost of octave convolution layers.

One FLOP here means one multiply-accumulate (MAC). The closed-form ratios only
compare identical factors, so the unit cancels; ``CostReport.total_flops_mul_add``
gives the 2 x MAC figure for readers who count multiplies and adds separately.
"""

from __future__ import annotations

import contextlib
import contextvars
import csv
import threading
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ConfigError, DomainError

_active_counter = contextvars.ContextVar("octconv_mac_counter", default=None)


class MacCounter:
    """Thread-safe accumulator of multiply-accumulates executed by conv kernels."""

    def __init__(self):
        self._lock = threading.Lock()
        self.total = 0

    def add(self, n):
        with self._lock:
            self.total += n


def record_macs(n):
    counter = _active_counter.get()
    if counter is not None:
        counter.add(int(n))


@contextlib.contextmanager
def count_macs():
    """Count MACs of every :func:`~octconv.tensor.conv2d` call inside the block.

    >>> with count_macs() as c:
    ...     y = conv2d(x, w, padding=1)
    >>> c.total
    """
    counter = MacCounter()
    token = _active_counter.set(counter)
    try:
        yield counter
    finally:
        _active_counter.reset(token)


def _check_ratio(alpha):
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")


def flops_ratio(alpha):
    """Octave/vanilla compute ratio for a layer with alpha_in == alpha_out == alpha."""
    _check_ratio(alpha)
    return 1.0 - 0.75 * alpha * (2.0 - alpha)


def memory_ratio(alpha):
    """Octave/vanilla activation-memory ratio: the low group costs a quarter per channel."""
    _check_ratio(alpha)
    return 1.0 - 0.75 * alpha


def split_channels(c, alpha):
    """Return ``(c_high, c_low)`` with ``c_low = floor(alpha * c)``."""
    _check_ratio(alpha)
    c_low = int(alpha * c + 1e-9)
    return c - c_low, c_low


@dataclass(frozen=True)
class PathCosts:
    hh: int = 0
    lh: int = 0
    hl: int = 0
    ll: int = 0

    @property
    def total(self):
        return self.hh + self.lh + self.hl + self.ll


def layer_path_flops(c_in, c_out, h, w, k, alpha_in, alpha_out, mode="dense", groups=1, mask=None):
    """Per-path MAC counts of one octave layer on an ``h x w`` high-frequency grid.

    Each path costs ``out_spatial * k^2 * c_in_block * c_out_block / groups``;
    H->H runs at full resolution, the other three at ``h/2 x w/2``. Depthwise
    mode drops the two exchange paths. Masked paths cost zero.
    """
    for name, v in (("c_in", c_in), ("c_out", c_out), ("h", h), ("w", w), ("k", k)):
        if v < 1:
            raise ConfigError(f"{name} must be positive, got {v}")
    ci_h, ci_l = split_channels(c_in, alpha_in)
    co_h, co_l = split_channels(c_out, alpha_out)
    if (ci_l or co_l) and (h % 2 or w % 2):
        raise ConfigError(f"octave layer needs even spatial dims, got {h}x{w}")
    full = h * w * k * k
    half = (h // 2) * (w // 2) * k * k
    l2h = mask is None or mask.enable_l_to_h
    h2l = mask is None or mask.enable_h_to_l

    if mode == "depthwise":
        return PathCosts(hh=full * co_h if ci_h else 0, ll=half * co_l if ci_l else 0)
    g = groups if mode == "grouped" else 1
    return PathCosts(
        hh=full * ci_h * co_h // g,
        lh=half * ci_l * co_h // g if l2h else 0,
        hl=half * ci_h * co_l // g if h2l else 0,
        ll=half * ci_l * co_l // g,
    )


def layer_flops_theoretical(c_in, c_out, h, w, k, alpha_in, alpha_out, mode="dense", groups=1, mask=None):
    """Total MACs of one octave layer (sum of :func:`layer_path_flops`)."""
    return layer_path_flops(c_in, c_out, h, w, k, alpha_in, alpha_out, mode, groups, mask).total


def exact_flops_ratio(alpha):
    """:func:`flops_ratio` in rational arithmetic, for integer-exact comparisons."""
    a = Fraction(alpha).limit_denominator(1 << 20)
    return 1 - Fraction(3, 4) * a * (2 - a)


@dataclass
class LayerCost:
    layer_id: int
    kind: str
    c_in: int
    c_out: int
    h: int
    w: int
    k: int
    alpha_in: float
    alpha_out: float
    flops_theory: int
    flops_counted: int
    mem_elems: int
    baseline_flops: int = 0

    @property
    def ratio_vs_baseline(self):
        return self.flops_theory / self.baseline_flops if self.baseline_flops else 1.0


@dataclass
class CostReport:
    """Per-layer and aggregate costs of a network at one alpha, with the alpha=0 baseline."""

    alpha: float
    per_layer: list = field(default_factory=list)
    baseline_flops: int = 0
    baseline_mem: int = 0

    @property
    def total_theory(self):
        return sum(r.flops_theory for r in self.per_layer)

    @property
    def total_counted(self):
        return sum(r.flops_counted for r in self.per_layer)

    @property
    def total_flops_mul_add(self):
        return 2 * self.total_theory

    @property
    def total_mem(self):
        return sum(r.mem_elems for r in self.per_layer)

    @property
    def flops_ratio(self):
        return self.total_theory / self.baseline_flops if self.baseline_flops else 1.0

    @property
    def memory_ratio(self):
        return self.total_mem / self.baseline_mem if self.baseline_mem else 1.0


COST_CSV_SCHEMA = "# schema: octconv.cost_report v1"
COST_CSV_COLUMNS = [
    "layer_id", "type", "c_in", "c_out", "h", "w", "k", "alpha_in", "alpha_out",
    "flops_theory", "flops_counted", "mem_elems", "ratio_vs_baseline",
]


def write_cost_csv(report, fh):
    """Write ``report`` as CSV, one row per layer plus a closing ``total`` row."""
    fh.write(COST_CSV_SCHEMA + "\n")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(COST_CSV_COLUMNS)
    for r in report.per_layer:
        writer.writerow([
            r.layer_id, r.kind, r.c_in, r.c_out, r.h, r.w, r.k, r.alpha_in, r.alpha_out,
            r.flops_theory, r.flops_counted, r.mem_elems, f"{r.ratio_vs_baseline:.6f}",
        ])
    writer.writerow([
        "total", "", "", "", "", "", "", report.alpha, report.alpha,
        report.total_theory, report.total_counted, report.total_mem, f"{report.flops_ratio:.6f}",
    ])


def _layer_theory(layer):
    s = layer.in_shape
    if layer.kind == "conv":
        return layer_flops_theoretical(s.c, layer.c_out, s.h, s.w, layer.k, 0.0, 0.0, layer.mode, layer.groups)
    if layer.kind == "octconv":
        return layer_flops_theoretical(s.c, layer.c_out, s.h, s.w, layer.k, layer.alpha_in, layer.alpha_out,
                                       layer.mode, layer.groups)
    return 0


def network_cost(spec, alpha, count=True):
    """Cost report for ``spec`` at ratio ``alpha`` against the same network at ratio 0.

    A spec made only of plain convolutions is converted with
    :func:`~octconv.netspec.octify` first. With ``count=True`` every layer is
    also executed once on a single random sample with the MAC counter on.
    """
    from . import rng
    from .netspec import Net, octify
    from .octave import OctTensor

    _check_ratio(alpha)
    net_spec = spec.with_alpha(alpha) if spec.is_octave() or spec.octave_input else octify(spec, alpha)
    base = net_spec.with_alpha(0.0)
    report = CostReport(alpha=alpha)
    counted = [0] * len(net_spec.layers)
    if count:
        net = Net.init(net_spec, dtype="float64")
        s = net_spec.input_shape
        g = rng.stream(net_spec.seed, "cost-probe")
        if net_spec.octave_input:
            c_h, c_l = split_channels(s.c, alpha)
            v = OctTensor(g.standard_normal((1, c_h, s.h, s.w)), g.standard_normal((1, c_l, s.h // 2, s.w // 2)), alpha)
        else:
            v = g.standard_normal((1, s.c, s.h, s.w))
        for i in range(len(net_spec.layers)):
            with count_macs() as c:
                v = net.layer_forward(i, v)
            counted[i] = c.total
    for i, (layer, blayer) in enumerate(zip(net_spec.layers, base.layers)):
        s = layer.in_shape
        conv = layer.kind in ("conv", "octconv")
        report.per_layer.append(LayerCost(
            layer_id=i, kind=layer.kind, c_in=s.c, c_out=layer.out_shape.c, h=s.h, w=s.w,
            k=layer.k if conv else 0,
            alpha_in=layer.alpha_in if layer.kind == "octconv" else 0.0,
            alpha_out=layer.alpha_out if layer.kind == "octconv" else 0.0,
            flops_theory=_layer_theory(layer), flops_counted=counted[i],
            mem_elems=layer.out_shape.numel(), baseline_flops=_layer_theory(blayer),
        ))
    report.baseline_flops = sum(_layer_theory(l) for l in base.layers)
    report.baseline_mem = sum(l.out_shape.numel() for l in base.layers)
    return report
