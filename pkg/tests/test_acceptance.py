"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed together at the end
of the run (see ``conftest.pytest_terminal_summary``). Tolerances are the
stated ones and are not relaxed.
"""

import math
import time
from decimal import ROUND_HALF_UP, Decimal

import numpy as np
import pytest

from octconv import rng
from octconv.cost import flops_ratio, layer_flops_theoretical, memory_ratio, network_cost
from octconv.diagnostics import band_fractions, misalignment_probe
from octconv.netspec import Net, load_spec, octify
from octconv.octave import DownsampleStrategy, OctTensor, PathMask, make_oct_kernel, oct_conv_backward, oct_conv_forward
from octconv.oracle import gradcheck_oct, oracle_suite, random_oct_instance
from octconv.tensor import ConvKernel, conv2d, conv2d_backward
from octconv.train import ToyTask, train_toy

from conftest import SPEC_DIR, record_criterion

ALPHAS = [0.0, 0.125, 0.25, 0.5, 0.75, 0.875, 1.0]
TABLE_FLOPS = [100, 82, 67, 44, 30, 26, 25]
TABLE_MEMORY = [100, 91, 81, 63, 44, 35, 25]


def percent(x):
    return int(Decimal(repr(x * 100)).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def report(n, ok, detail):
    record_criterion(n, ok, detail)
    assert ok, detail


def test_c1_cost_formulas_match_table():
    t0 = time.perf_counter()
    misses = []
    exact_ok = flops_ratio(0.5) == 0.4375 and memory_ratio(0.5) == 0.625
    for a, f_pct, m_pct in zip(ALPHAS, TABLE_FLOPS, TABLE_MEMORY):
        f, m = flops_ratio(a), memory_ratio(a)
        if percent(f) != f_pct:
            misses.append(f"flops a={a}: {f * 100:g}% -> {percent(f)} vs printed {f_pct}")
        if percent(m) != m_pct:
            misses.append(f"memory a={a}: {m * 100:g}% -> {percent(m)} vs printed {m_pct}")
    ok = exact_ok and not misses
    detail = f"14 cells, {14 - len(misses)} match" + ("; " + "; ".join(misses) if misses else "")
    report(1, ok, detail + f" ({(time.perf_counter() - t0) * 1e3:.1f} ms)")


def test_c2_counter_equals_formula():
    t0 = time.perf_counter()
    base = load_spec(SPEC_DIR / "six_conv.spec")
    bad = []
    n_layers = 0
    for a in ALPHAS:
        rep = network_cost(base, a, count=True)
        for row in rep.per_layer:
            if row.kind in ("conv", "octconv"):
                n_layers += 1
                if row.flops_counted != row.flops_theory:
                    bad.append(f"a={a} layer {row.layer_id}: {row.flops_counted} != {row.flops_theory}")
    dt = time.perf_counter() - t0
    ok = not bad and dt < 10
    report(2, ok, f"{n_layers} conv layers over {len(ALPHAS)} alphas, {len(bad)} mismatches, {dt:.2f} s"
           + ("; " + "; ".join(bad[:3]) if bad else ""))


def test_c3_alpha_zero_bit_matches_vanilla():
    t0 = time.perf_counter()
    mismatches = 0
    for i in range(100):
        g = rng.stream(3, "degeneracy", i)
        c_in, c_out = int(g.integers(1, 17)), int(g.integers(1, 17))
        h, w = 2 * int(g.integers(1, 9)), 2 * int(g.integers(1, 9))
        k = int(g.choice([1, 3, 5]))
        x = g.standard_normal((int(g.integers(1, 3)), c_in, h, w))
        kern = make_oct_kernel(c_in, c_out, k, 0.0, 0.0, seed=i)
        y = oct_conv_forward(OctTensor.from_tensor(x), kern)
        grad = g.standard_normal(y.high.shape)
        gx, gk = oct_conv_backward(OctTensor.from_tensor(x), kern, OctTensor.from_tensor(grad))
        vanilla = ConvKernel(kern.w_hh.weight.copy())
        vy = conv2d(x, vanilla, 1, k // 2)
        vx, vw = conv2d_backward(x, vanilla, grad, 1, k // 2)
        same = (y.high.tobytes() == vy.tobytes() and gx.high.tobytes() == vx.tobytes()
                and gk.w_hh.weight.tobytes() == vw.tobytes())
        mismatches += not same
    dt = time.perf_counter() - t0
    report(3, mismatches == 0 and dt < 30, f"100 instances, {mismatches} not bit-identical, {dt:.2f} s")


def test_c4_oracle_equivalence():
    t0 = time.perf_counter()
    worst = oracle_suite(4, instances=100)
    dt = time.perf_counter() - t0
    ok = worst["high"] < 1e-5 and worst["low_avg"] < 1e-5 and worst["low_stride"] < 1e-6 and dt < 60
    report(4, ok, f"avg: high {worst['high']:.1e}, low {worst['low_avg']:.1e} (< 1e-5); "
                  f"stride low {worst['low_stride']:.1e} (< 1e-6); {dt:.2f} s")


GRADCHECK_CASES = [
    # (c_in, c_out, h, w, alpha_in, alpha_out, mode, groups, strategy, mask)
    (4, 4, 6, 6, 0.5, 0.5, "dense", 1, "avg", "both"),
    (4, 6, 6, 6, 0.5, 0.5, "dense", 1, "avg", "both"),
    (6, 4, 6, 4, 0.25, 0.5, "dense", 1, "avg", "both"),
    (4, 4, 6, 6, 0.5, 0.5, "dense", 1, "max", "both"),
    (4, 4, 6, 6, 0.5, 0.5, "dense", 1, "stride", "both"),
    (4, 4, 8, 6, 0.75, 0.25, "dense", 1, "stride", "both"),
    (4, 4, 6, 6, 0.5, 0.5, "depthwise", 1, "avg", "both"),
    (6, 6, 4, 4, 0.5, 0.5, "depthwise", 1, "max", "both"),
    (4, 4, 6, 6, 0.5, 0.5, "grouped", 2, "avg", "both"),
    (8, 8, 4, 6, 0.5, 0.5, "grouped", 2, "stride", "no-h2l"),
    (3, 4, 6, 6, 0.0, 0.5, "dense", 1, "avg", "both"),        # entry
    (3, 4, 6, 6, 0.0, 1.0, "dense", 1, "stride", "both"),     # entry, all-low output
    (4, 3, 6, 6, 0.5, 0.0, "dense", 1, "avg", "both"),        # exit
    (4, 2, 4, 4, 1.0, 0.0, "dense", 1, "max", "both"),        # exit from all-low input
    (4, 4, 6, 6, 0.5, 0.5, "dense", 1, "avg", "no-l2h"),
    (4, 4, 6, 6, 0.5, 0.5, "dense", 1, "avg", "no-h2l"),
    (4, 4, 6, 6, 0.5, 0.5, "dense", 1, "max", "no-l2h"),
    (5, 3, 4, 8, 0.4, 0.7, "dense", 1, "avg", "both"),
    (4, 4, 6, 6, 0.0, 0.0, "dense", 1, "avg", "both"),        # vanilla
    (2, 2, 4, 4, 1.0, 1.0, "dense", 1, "avg", "both"),        # all-low
]


def test_c5_gradients_match_finite_differences():
    t0 = time.perf_counter()
    masks = {"both": PathMask(), "no-l2h": PathMask(enable_l_to_h=False), "no-h2l": PathMask(enable_h_to_l=False)}
    worst, where = 0.0, None
    for i, (ci, co, h, w, ai, ao, mode, groups, strategy, mask) in enumerate(GRADCHECK_CASES):
        x, k = random_oct_instance(500 + i, ci, co, h, w, ai, ao, n=2, mode=mode, groups=groups)
        errs = gradcheck_oct(x, k, DownsampleStrategy.parse(strategy), masks[mask], seed=i)
        for name, e in errs.items():
            if e > worst:
                worst, where = e, f"case {i} {name}"
    dt = time.perf_counter() - t0
    report(5, worst < 1e-4 and dt < 300,
           f"{len(GRADCHECK_CASES)} instances, max rel err {worst:.2e} at {where} (< 1e-4), {dt:.1f} s")


def test_c6_parameter_invariance():
    g = rng.stream(6, "param-tuples")
    bad = []
    for _ in range(50):
        c_in, c_out = int(g.integers(1, 129)), int(g.integers(1, 129))
        k = int(g.choice([1, 3, 5, 7]))
        alpha = float(g.uniform())
        n = make_oct_kernel(c_in, c_out, k, alpha, alpha).param_count()
        if n != c_out * c_in * k * k:
            bad.append((c_in, c_out, k, alpha, n))
    report(6, not bad, f"50 tuples, {len(bad)} mismatches")


def test_c7_misalignment():
    s = misalignment_probe("stride")
    a = misalignment_probe("avg")
    ok = s["dy"] >= 0.5 and s["dx"] >= 0.5 and a["shift"] < 0.25
    report(7, ok, f"stride (dy, dx) = ({s['dy']:g}, {s['dx']:g}) px, >= 0.5 down-right; "
                  f"avg shift {a['shift']:g} px (< 0.25)")


@pytest.fixture(scope="module")
def toy_runs():
    base = load_spec(SPEC_DIR / "toy.spec")
    task = ToyTask(seed=0)
    t0 = time.perf_counter()
    runs = {
        "vanilla": train_toy(base, task, epochs=30, seed=0),
        "oct0": train_toy(octify(base, 0.0), task, epochs=30, seed=0),
        "oct25": train_toy(octify(base, 0.25), task, epochs=30, seed=0),
    }
    runs["seconds"] = time.perf_counter() - t0
    return runs


@pytest.mark.slow
def test_c8_learnability_parity(toy_runs):
    v, o25, o0 = toy_runs["vanilla"], toy_runs["oct25"], toy_runs["oct0"]
    gap = abs(o25.final_accuracy - v.final_accuracy) * 100
    bitmatch = v.losses == o0.losses and v.final_loss == o0.final_loss
    ok = gap <= 2.0 and bitmatch and toy_runs["seconds"] < 600
    report(8, ok, f"vanilla {v.final_accuracy:.2%}, a=0.25 {o25.final_accuracy:.2%} (gap {gap:.2f} pt <= 2); "
                  f"a=0 loss curve bit-identical: {bitmatch}; {toy_runs['seconds']:.0f} s for 3 runs")


@pytest.mark.slow
def test_c9_frequency_separation(toy_runs):
    t0 = time.perf_counter()
    net = toy_runs["oct25"].net
    x, _ = ToyTask(seed=0).generate(net.dtype)
    # layer 3: the ReLU right after the entry octave layer (32x32 high, 16x16 low)
    _, feats = net.forward(x, capture=3)
    f = band_fractions(feats)
    dt = time.perf_counter() - t0
    ok = isinstance(feats, OctTensor) and f["low"] < f["high"] and dt < 60
    # the 10% level is informational; the criterion is the ordering
    report(9, ok, f"outside-band energy at layer 3: low {f['low']:.3f} < high {f['high']:.3f}; "
                  f"low under 10%: {f['low'] < 0.10}, high under 10%: {f['high'] < 0.10} ({dt:.1f} s)")
