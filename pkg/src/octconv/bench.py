"""Per-layer wall-clock timing of a network forward pass."""

from __future__ import annotations

import csv
import statistics
import time
from dataclasses import dataclass

import numpy as np
from threadpoolctl import threadpool_limits

from . import rng
from .cost import split_channels
from .netspec import Net, octify
from .octave import OctTensor


@dataclass
class LayerTiming:
    layer_id: int
    kind: str
    median_ms: float
    min_ms: float
    repeats: int


def bench_network(spec, alpha, repeats=5, threads=1, batch=None, dtype=np.float32, warmup=1):
    """Time each layer's forward ``repeats`` times with BLAS limited to ``threads``.

    Plain-conv specs are converted with :func:`octify` first. Timings are local
    wall-clock and carry no acceptance meaning.
    """
    net_spec = spec.with_alpha(alpha) if spec.is_octave() or spec.octave_input else octify(spec, alpha)
    net = Net.init(net_spec, dtype=dtype)
    n = batch or net_spec.batch
    s = net_spec.input_shape
    g = rng.stream(net_spec.seed, "bench-input")
    if net_spec.octave_input:
        c_h, c_l = split_channels(s.c, alpha)
        x = OctTensor(g.standard_normal((n, c_h, s.h, s.w)).astype(dtype),
                      g.standard_normal((n, c_l, s.h // 2, s.w // 2)).astype(dtype), alpha)
    else:
        x = g.standard_normal((n, s.c, s.h, s.w)).astype(dtype)

    samples = [[] for _ in net_spec.layers]
    with threadpool_limits(limits=threads):
        for rep in range(warmup + repeats):
            v = x
            for i in range(len(net_spec.layers)):
                t0 = time.perf_counter()
                v = net.layer_forward(i, v)
                dt = time.perf_counter() - t0
                if rep >= warmup:
                    samples[i].append(dt * 1e3)
    return [LayerTiming(i, l.kind, statistics.median(ts), min(ts), len(ts))
            for i, (l, ts) in enumerate(zip(net_spec.layers, samples))]


BENCH_CSV_SCHEMA = "# schema: octconv.bench v1"


def write_bench_csv(rows, fh):
    fh.write(BENCH_CSV_SCHEMA + "\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["layer_id", "type", "median_ms", "min_ms", "repeats"])
    for r in rows:
        w.writerow([r.layer_id, r.kind, f"{r.median_ms:.4f}", f"{r.min_ms:.4f}", r.repeats])
