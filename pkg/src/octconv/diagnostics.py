"""Alignment and frequency diagnostics for octave feature maps."""

from __future__ import annotations

import csv

import numpy as np

from .octave import DownsampleStrategy, OctKernel, OctTensor, oct_conv_forward
from .tensor import ConvKernel, check_tensor4, upsample_nearest2


def _ones_down_kernel(k=3):
    # c_in = c_out = 1 with alpha_out = 1: the single output channel is low-frequency,
    # so only the H->L path runs.
    ones = ConvKernel(np.ones((1, 1, k, k)))
    empty = lambda co, ci: ConvKernel(np.zeros((co, ci, k, k)))
    return OctKernel(w_hh=empty(0, 1), w_lh=empty(0, 0), w_hl=ones, w_ll=empty(1, 0),
                     c_in=1, c_out=1, k=k, alpha_in=0.0, alpha_out=1.0)


def centroid(img):
    """Intensity-weighted ``(row, col)`` centroid of a 2D non-negative map."""
    img = np.asarray(img, dtype=np.float64)
    total = img.sum()
    if total <= 0:
        raise ValueError("centroid of an all-zero map is undefined")
    ys, xs = np.indices(img.shape)
    return float((ys * img).sum() / total), float((xs * img).sum() / total)


def round_trip(x, strategy):
    """High -> low -> high with an all-ones 3x3 kernel: H->L octave path, then nearest upsampling."""
    strategy = DownsampleStrategy.parse(strategy)
    y = oct_conv_forward(OctTensor(x, np.zeros((x.shape[0], 0, x.shape[2] // 2, x.shape[3] // 2)), 0.0),
                         _ones_down_kernel(), strategy)
    return upsample_nearest2(y.low)


def misalignment_probe(strategy, size=16, center=None):
    """Centroid displacement ``(dy, dx)`` of an impulse sent through :func:`round_trip`.

    An impulse's position within its 2x2 pooling cell adds a +-0.5 px
    quantization error that cancels over the four positions, so the impulse
    is placed at each of the four positions of the cell at ``center`` and the
    displacements are averaged. What remains is the systematic shift the
    strategy introduces. Positive values point down/right.
    """
    if size % 2:
        raise ValueError(f"size must be even, got {size}")
    cy, cx = center if center is not None else (size // 2, size // 2)
    cy -= cy % 2
    cx -= cx % 2
    if not (2 <= cy <= size - 4 and 2 <= cx <= size - 4):
        raise ValueError(f"center {center} too close to the border for size {size}")
    shifts = []
    for py in (0, 1):
        for px in (0, 1):
            x = np.zeros((1, 1, size, size))
            x[0, 0, cy + py, cx + px] = 1.0
            out = round_trip(x, strategy)[0, 0]
            oy, ox = centroid(out)
            shifts.append((oy - (cy + py), ox - (cx + px)))
    dy, dx = np.mean(shifts, axis=0)
    return {"strategy": DownsampleStrategy.parse(strategy).value, "dy": float(dy), "dx": float(dx),
            "shift": float(np.hypot(dy, dx))}


PROBE_CSV_SCHEMA = "# schema: octconv.centroid_probe v1"


def write_probe_csv(rows, fh):
    fh.write(PROBE_CSV_SCHEMA + "\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["strategy", "dy", "dx"])
    for r in rows:
        w.writerow([r["strategy"], repr(r["dy"]), repr(r["dx"])])


def dft_matrix(n):
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


def dft2(x):
    """2D DFT over the last two axes by direct O(n^2) matrix products (any size)."""
    x = np.asarray(x)
    fy = dft_matrix(x.shape[-2])
    fx = dft_matrix(x.shape[-1])
    return fy @ x @ fx.T


def dc_center(spec):
    """Move the zero-frequency bin to the centre (index ``n // 2`` on each axis)."""
    return np.roll(spec, (spec.shape[-2] // 2, spec.shape[-1] // 2), axis=(-2, -1))


def energy_map(features, power=False):
    """Mean DFT magnitude over samples and channels, DC-centred. ``features``: (N, C, H, W).

    With ``power=True`` the squared magnitude is averaged instead.
    """
    x = check_tensor4(features, "features", allow_empty_channels=True)
    if x.shape[1] == 0:
        raise ValueError("energy map of an empty feature group")
    mag = np.abs(dft2(np.asarray(x, dtype=np.float64)))
    if power:
        mag = mag * mag
    return dc_center(mag.mean(axis=(0, 1)))


def outside_band_fraction(emap):
    """Share of the map's total outside the central band ``|ky| < H/4, |kx| < W/4``.

    These are the frequencies strictly below half the Nyquist limit, i.e. the
    ones a half-resolution grid represents without aliasing. On an 8 x 8 map
    the band is the central 3 x 3 bins.
    """
    h, w = emap.shape
    ky = np.abs(np.arange(h) - h // 2)[:, None]
    kx = np.abs(np.arange(w) - w // 2)[None, :]
    inside = (ky < h / 4) & (kx < w / 4)
    total = emap.sum()
    return float(emap[~inside].sum() / total) if total > 0 else 0.0


def freq_analyze(features, group=None, power=False):
    """Energy maps for a feature dump.

    ``features`` is a plain tensor or an :class:`OctTensor`. For an octave
    tensor, ``group`` picks ``"high"`` or ``"low"``; ``None`` returns both as a
    dict. Each group is analysed on its own grid.
    """
    if isinstance(features, OctTensor):
        groups = {"high": features.high, "low": features.low}
        if group is None:
            return {g: energy_map(t, power) for g, t in groups.items() if t.shape[1]}
        if group not in groups:
            raise ValueError(f"group must be 'high' or 'low', got {group!r}")
        return energy_map(groups[group], power)
    if group == "low":
        raise ValueError("a plain tensor has no low-frequency group")
    return energy_map(features, power)


def band_fractions(features):
    """``{group: outside_band_fraction}`` of the power spectrum of each non-empty group."""
    maps = freq_analyze(features, power=True)
    if not isinstance(maps, dict):
        maps = {"high": maps}
    return {g: outside_band_fraction(m) for g, m in maps.items()}


ENERGY_CSV_SCHEMA = "# schema: octconv.energy_map v1"


def write_energy_csv(emap, fh):
    """Rows ``ky, kx, magnitude`` with frequencies relative to the centred DC bin."""
    fh.write(ENERGY_CSV_SCHEMA + "\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["ky", "kx", "magnitude"])
    h, wd = emap.shape
    for y in range(h):
        for x in range(wd):
            w.writerow([y - h // 2, x - wd // 2, repr(float(emap[y, x]))])
