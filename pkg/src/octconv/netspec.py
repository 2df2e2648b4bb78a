"""Network descriptions, vanilla-to-octave conversion, and a small runtime.

Config format: one layer per line, whitespace separated, ``#`` starts a comment::

    input N C H W [octave]      # first declaration; "octave" = input already split at alpha
    alpha A                     # global low-frequency ratio (default 0)
    seed S                      # weight-init seed (default 0)
    downsample avg|max|stride   # H->L down-sampling strategy (default avg)
    conv C_OUT K [groups=G | dw]
    octconv C_OUT K [ain=A] [aout=A] [groups=G | dw]
    avgpool | maxpool | relu | globalpool
    linear N_OUT

``octconv`` ratios left unset follow the network: ``ain`` is the incoming
tensor's ratio (0 for a plain tensor) and ``aout`` is the global alpha. An
octconv whose ``aout`` resolves to 0 emits a plain full-resolution tensor.
Convolutions use stride 1 and same padding; resolution is changed only by the
pooling layers, which act on both frequency groups.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rng
from .cost import split_channels
from .errors import ConfigError, SpecError, WeightFileError
from .io import kernel_header, read_container, write_container
from .octave import (
    DownsampleStrategy,
    OctTensor,
    init_block,
    make_oct_kernel,
    oct_conv_backward,
    oct_conv_forward,
)
from .tensor import (
    avg_pool2,
    avg_pool2_backward,
    conv2d,
    conv2d_backward,
    max_pool2,
    max_pool2_backward,
)

KINDS = ("conv", "octconv", "avgpool", "maxpool", "relu", "globalpool", "linear")
CONV_KINDS = ("conv", "octconv")


@dataclass(frozen=True)
class Shape:
    """Per-sample activation shape; ``alpha is None`` marks a plain tensor."""

    c: int
    h: int
    w: int
    alpha: float | None = None

    @property
    def octave(self):
        return self.alpha is not None

    @property
    def split(self):
        return split_channels(self.c, self.alpha or 0.0)

    def numel(self):
        if not self.octave:
            return self.c * self.h * self.w
        c_h, c_l = self.split
        return c_h * self.h * self.w + c_l * (self.h // 2) * (self.w // 2)

    def __str__(self):
        if not self.octave:
            return f"{self.c}x{self.h}x{self.w}"
        c_h, c_l = self.split
        return f"{c_h}x{self.h}x{self.w}+{c_l}x{self.h // 2}x{self.w // 2}"


@dataclass(frozen=True)
class Layer:
    kind: str
    line: int | None = None
    c_out: int = 0
    k: int = 0
    mode: str = "dense"
    groups: int = 1
    alpha_in: float | None = None
    alpha_out: float | None = None
    in_shape: Shape | None = None
    out_shape: Shape | None = None

    def describe(self):
        """Canonical config line (resolved values when shapes are inferred)."""
        if self.kind in CONV_KINDS:
            parts = [self.kind, str(self.c_out), str(self.k)]
            if self.kind == "octconv":
                if self.alpha_in is not None:
                    parts.append(f"ain={self.alpha_in!r}")
                if self.alpha_out is not None:
                    parts.append(f"aout={self.alpha_out!r}")
            if self.mode == "grouped":
                parts.append(f"groups={self.groups}")
            elif self.mode == "depthwise":
                parts.append("dw")
            return " ".join(parts)
        if self.kind == "linear":
            return f"linear {self.c_out}"
        return self.kind


@dataclass(frozen=True)
class NetSpec:
    """A parsed network. ``source`` keeps the layers as written; ``layers`` are resolved."""

    source: tuple
    layers: tuple
    input_shape: Shape
    batch: int = 1
    alpha: float = 0.0
    seed: int = 0
    strategy: DownsampleStrategy = DownsampleStrategy.AVERAGE_POOL
    octave_input: bool = False

    @property
    def output_shape(self):
        return self.layers[-1].out_shape if self.layers else self.input_shape

    def is_octave(self):
        return any(l.kind == "octconv" for l in self.source)

    def with_alpha(self, alpha):
        """Re-resolve the same network at another global alpha."""
        return build_spec(self.source, self.batch, self.input_shape.c, self.input_shape.h, self.input_shape.w,
                          alpha=alpha, seed=self.seed, strategy=self.strategy, octave_input=self.octave_input)

    def text(self):
        lines = [f"input {self.batch} {self.input_shape.c} {self.input_shape.h} {self.input_shape.w}"
                 + (" octave" if self.octave_input else ""),
                 f"alpha {self.alpha!r}", f"seed {self.seed}", f"downsample {self.strategy.value}"]
        lines += [l.describe() for l in self.source]
        return "\n".join(lines) + "\n"

    def hash(self):
        """Digest of the resolved architecture, used to match weight files to specs."""
        resolved = self.text() + "".join(
            f"{l.describe()} {l.alpha_in!r} {l.alpha_out!r} {l.out_shape}\n" for l in self.layers)
        return hashlib.sha256(resolved.encode()).hexdigest()

    def param_count(self):
        return sum(layer_param_count(l) for l in self.layers)


def layer_param_count(layer):
    s = layer.in_shape
    if layer.kind in CONV_KINDS:
        cin_g = 1 if layer.mode == "depthwise" else s.c // (layer.groups if layer.mode == "grouped" else 1)
        return layer.c_out * cin_g * layer.k * layer.k
    if layer.kind == "linear":
        return layer.c_out * s.numel() + layer.c_out
    return 0


def _parse_ratio(tok, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise SpecError(f"bad ratio {tok!r}", lineno) from None
    if not 0.0 <= v <= 1.0:
        raise SpecError(f"ratio {v} outside [0, 1]", lineno)
    return v


def _parse_int(tok, what, lineno, minimum=1):
    try:
        v = int(tok)
    except ValueError:
        raise SpecError(f"{what} must be an integer, got {tok!r}", lineno) from None
    if v < minimum:
        raise SpecError(f"{what} must be >= {minimum}, got {v}", lineno)
    return v


def _parse_conv(kind, args, lineno):
    if len(args) < 2:
        raise SpecError(f"{kind} needs C_OUT K, got {len(args)} arguments", lineno)
    c_out = _parse_int(args[0], "C_OUT", lineno)
    k = _parse_int(args[1], "K", lineno)
    if k % 2 == 0:
        raise SpecError(f"kernel size must be odd, got {k}", lineno)
    opts = dict(mode="dense", groups=1, alpha_in=None, alpha_out=None)
    for tok in args[2:]:
        key, _, val = tok.partition("=")
        if tok == "dw":
            opts["mode"] = "depthwise"
        elif key == "groups" and val:
            opts["groups"] = _parse_int(val, "groups", lineno)
            opts["mode"] = "grouped" if opts["groups"] > 1 else "dense"
        elif kind == "octconv" and key in ("ain", "aout") and val:
            opts["alpha_in" if key == "ain" else "alpha_out"] = _parse_ratio(val, lineno)
        else:
            raise SpecError(f"unknown {kind} option {tok!r}", lineno)
    return Layer(kind, lineno, c_out, k, **opts)


def parse_spec(text, alpha=None, seed=None):
    """Parse config text into a shape-checked :class:`NetSpec`.

    ``alpha`` and ``seed`` override the ``alpha``/``seed`` lines when given.
    """
    batch = dims = None
    octave_input = False
    spec_alpha, spec_seed = 0.0, 0
    strategy = DownsampleStrategy.AVERAGE_POOL
    layers = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        toks = raw.split("#", 1)[0].split()
        if not toks:
            continue
        head, args = toks[0].lower(), toks[1:]
        if head == "input":
            if dims is not None:
                raise SpecError("duplicate input declaration", lineno)
            if layers:
                raise SpecError("input must be declared before any layer", lineno)
            if len(args) not in (4, 5) or (len(args) == 5 and args[4] != "octave"):
                raise SpecError("input needs N C H W [octave]", lineno)
            batch, *dims = [_parse_int(a, name, lineno) for a, name in zip(args[:4], "NCHW")]
            octave_input = len(args) == 5
        elif head == "alpha":
            if len(args) != 1:
                raise SpecError("alpha takes one value", lineno)
            spec_alpha = _parse_ratio(args[0], lineno)
        elif head == "seed":
            if len(args) != 1:
                raise SpecError("seed takes one value", lineno)
            spec_seed = _parse_int(args[0], "seed", lineno, minimum=0)
        elif head == "downsample":
            if len(args) != 1:
                raise SpecError("downsample takes one value", lineno)
            try:
                strategy = DownsampleStrategy.parse(args[0])
            except ConfigError as exc:
                raise SpecError(str(exc), lineno) from None
        elif head in CONV_KINDS:
            layers.append(_parse_conv(head, args, lineno))
        elif head == "linear":
            if len(args) != 1:
                raise SpecError("linear needs N_OUT", lineno)
            layers.append(Layer("linear", lineno, c_out=_parse_int(args[0], "N_OUT", lineno)))
        elif head in KINDS:
            if args:
                raise SpecError(f"{head} takes no arguments", lineno)
            layers.append(Layer(head, lineno))
        else:
            raise SpecError(f"unknown layer kind {head!r}", lineno)
        if dims is None and head != "input" and head in KINDS:
            raise SpecError("no input declaration before first layer", lineno)
    if dims is None:
        raise SpecError("no input declaration")
    return build_spec(layers, batch, *dims,
                      alpha=spec_alpha if alpha is None else alpha,
                      seed=spec_seed if seed is None else seed,
                      strategy=strategy, octave_input=octave_input)


def load_spec(path, alpha=None, seed=None):
    return parse_spec(Path(path).read_text(encoding="utf-8"), alpha=alpha, seed=seed)


def _where(layer, index):
    return f"layer {index} ({layer.kind})"


def _infer(layer, index, s, alpha):
    """Resolve one layer against input shape ``s``; return the resolved layer."""
    line = layer.line
    name = _where(layer, index)

    def fail(msg):
        raise SpecError(f"{name}: {msg}", line)

    if layer.kind == "conv":
        if s.octave:
            fail("plain conv cannot consume an octave tensor; use octconv")
        _check_grouping(layer, s.c, fail)
        return replace(layer, in_shape=s, out_shape=Shape(layer.c_out, s.h, s.w))
    if layer.kind == "octconv":
        a_in_actual = s.alpha if s.octave else 0.0
        a_in = a_in_actual if layer.alpha_in is None else layer.alpha_in
        if a_in != a_in_actual:
            fail(f"ain={a_in} but incoming tensor has ratio {a_in_actual}")
        a_out = alpha if layer.alpha_out is None else layer.alpha_out
        c_in_l = split_channels(s.c, a_in)[1]
        c_out_l = split_channels(layer.c_out, a_out)[1]
        if (c_in_l or c_out_l) and (s.h % 2 or s.w % 2):
            fail(f"odd spatial dims {s.h}x{s.w} at an octave layer")
        if layer.mode == "depthwise" and (s.c != layer.c_out or a_in != a_out):
            fail("depthwise octconv needs equal channels and ain == aout")
        _check_grouping(layer, s.c, fail)
        if layer.mode == "grouped":
            for ci, co in ((c, o) for c in split_channels(s.c, a_in) for o in split_channels(layer.c_out, a_out)):
                if ci and co and (ci % layer.groups or co % layer.groups):
                    fail(f"frequency block {co}x{ci} not divisible by groups={layer.groups}")
        out = Shape(layer.c_out, s.h, s.w, a_out if a_out > 0 else None)
        return replace(layer, alpha_in=a_in, alpha_out=a_out, in_shape=s, out_shape=out)
    if layer.kind in ("avgpool", "maxpool"):
        if s.h % 2 or s.w % 2:
            fail(f"pooling needs even spatial dims, got {s.h}x{s.w}")
        if s.octave and s.split[1] and (s.h // 2 % 2 or s.w // 2 % 2):
            fail(f"pooling the low group needs high dims divisible by 4, got {s.h}x{s.w}")
        return replace(layer, in_shape=s, out_shape=replace(s, h=s.h // 2, w=s.w // 2))
    if layer.kind == "relu":
        return replace(layer, in_shape=s, out_shape=s)
    if layer.kind == "globalpool":
        return replace(layer, in_shape=s, out_shape=Shape(s.c, 1, 1))
    if layer.kind == "linear":
        if s.octave:
            fail("linear needs a plain tensor; add globalpool or an exit octconv first")
        return replace(layer, in_shape=s, out_shape=Shape(layer.c_out, 1, 1))
    raise AssertionError(layer.kind)


def _check_grouping(layer, c_in, fail):
    if layer.mode == "depthwise" and c_in != layer.c_out:
        fail(f"depthwise conv needs C_OUT == C_IN ({c_in}), got {layer.c_out}")
    if layer.mode == "grouped" and (c_in % layer.groups or layer.c_out % layer.groups):
        fail(f"channels {c_in}->{layer.c_out} not divisible by groups={layer.groups}")


def build_spec(layers, batch, c, h, w, alpha=0.0, seed=0, strategy=DownsampleStrategy.AVERAGE_POOL,
               octave_input=False):
    if not 0.0 <= alpha <= 1.0:
        raise SpecError(f"alpha {alpha} outside [0, 1]")
    source = tuple(replace(l, in_shape=None, out_shape=None) for l in layers)
    s = Shape(c, h, w, alpha if octave_input else None)
    if octave_input and (h % 2 or w % 2):
        raise SpecError(f"octave input needs even spatial dims, got {h}x{w}")
    resolved = []
    for i, layer in enumerate(source):
        r = _infer(layer, i, s, alpha)
        resolved.append(r)
        s = r.out_shape
    return NetSpec(source, tuple(resolved), Shape(c, h, w), batch, float(alpha), seed,
                   DownsampleStrategy.parse(strategy), octave_input)


def octify(spec, alpha):
    """Replace every conv except the first with an octconv at global ratio ``alpha``.

    The first converted layer takes a plain input (``ain=0``) and the last one
    returns a plain output (``aout=0``); layers in between use ``alpha`` on both
    sides. Ratios stay symbolic, so ``octify(spec, a).with_alpha(0)`` is the
    structurally converted network at ratio 0.
    """
    if spec.is_octave():
        raise ConfigError("spec already contains octconv layers")
    if spec.octave_input:
        raise ConfigError("octify needs a plain input")
    conv_idx = [i for i, l in enumerate(spec.source) if l.kind == "conv"]
    convert = conv_idx[1:]
    layers = list(spec.source)
    for n, i in enumerate(convert):
        ain = 0.0 if n == 0 else None
        aout = 0.0 if n == len(convert) - 1 else None
        layers[i] = replace(layers[i], kind="octconv", alpha_in=ain, alpha_out=aout)
    s = spec.input_shape
    return build_spec(layers, spec.batch, s.c, s.h, s.w, alpha=alpha, seed=spec.seed, strategy=spec.strategy)


# runtime ---------------------------------------------------------------------


def _kernel_for(layer, index, seed, dtype):
    s = layer.in_shape
    if layer.kind == "conv":
        g = s.c if layer.mode == "depthwise" else layer.groups
        return init_block((layer.c_out, s.c // g, layer.k, layer.k), g, seed, index, "hh", dtype=dtype)
    return make_oct_kernel(s.c, layer.c_out, layer.k, layer.alpha_in, layer.alpha_out, mode=layer.mode,
                           seed=seed, groups=layer.groups, layer=index, dtype=dtype)


def _linear_params(layer, index, seed, dtype):
    fan_in = layer.in_shape.numel()
    w = rng.stream(seed, index, "linear").standard_normal((layer.c_out, fan_in)) / np.sqrt(fan_in)
    return {"weight": w.astype(dtype), "bias": np.zeros(layer.c_out, dtype)}


def _to_oct(v):
    return v if isinstance(v, OctTensor) else OctTensor.from_tensor(v)


def _oct_like(grad):
    """Wrap a plain output gradient as an octave tensor with an empty low group."""
    n, _, h, w = grad.shape
    return OctTensor(grad, np.zeros((n, 0, h // 2, w // 2), grad.dtype), 0.0)


@dataclass
class Net:
    """A built network: resolved spec plus one parameter object per layer.

    Parameters are ``ConvKernel`` for ``conv``, ``OctKernel`` for ``octconv``,
    ``{"weight", "bias"}`` for ``linear`` and ``None`` otherwise.
    """

    spec: NetSpec
    params: list = field(default_factory=list)

    @classmethod
    def init(cls, spec, seed=None, dtype=np.float32):
        seed = spec.seed if seed is None else seed
        params = []
        for i, layer in enumerate(spec.layers):
            if layer.kind in CONV_KINDS:
                params.append(_kernel_for(layer, i, seed, dtype))
            elif layer.kind == "linear":
                params.append(_linear_params(layer, i, seed, dtype))
            else:
                params.append(None)
        return cls(spec, params)

    @property
    def dtype(self):
        for p in self.params:
            if p is None:
                continue
            if isinstance(p, dict):
                return p["weight"].dtype
            return p.weight.dtype if hasattr(p, "weight") else next(iter(p.weights().values())).dtype
        return np.dtype(np.float64)

    def param_count(self):
        total = 0
        for p in self.params:
            if isinstance(p, dict):
                total += sum(v.size for v in p.values())
            elif p is not None:
                total += p.size if hasattr(p, "weight") else p.param_count()
        return total

    def layer_forward(self, i, v):
        layer, p = self.spec.layers[i], self.params[i]
        kind = layer.kind
        if kind == "conv":
            return conv2d(v, p, 1, (layer.k - 1) // 2)
        if kind == "octconv":
            y = oct_conv_forward(_to_oct(v), p, self.spec.strategy)
            return y if layer.out_shape.octave else y.high
        if kind == "relu":
            f = lambda t: np.maximum(t, 0)
        elif kind == "avgpool":
            f = avg_pool2
        elif kind == "maxpool":
            f = max_pool2
        elif kind == "globalpool":
            if isinstance(v, OctTensor):
                return np.concatenate([v.high.mean(axis=(2, 3), keepdims=True),
                                       v.low.mean(axis=(2, 3), keepdims=True)], axis=1)
            return v.mean(axis=(2, 3), keepdims=True)
        elif kind == "linear":
            flat = _flatten(v)
            return (flat @ p["weight"].T + p["bias"])[:, :, None, None]
        else:
            raise AssertionError(kind)
        return v.map(f) if isinstance(v, OctTensor) else f(v)

    def layer_backward(self, i, v, grad):
        """Return ``(grad_input, grad_params)`` for layer ``i`` given its input ``v``."""
        layer, p = self.spec.layers[i], self.params[i]
        kind = layer.kind
        if kind == "conv":
            gx, gw = conv2d_backward(v, p, grad, 1, (layer.k - 1) // 2)
            return gx, gw
        if kind == "octconv":
            x = _to_oct(v)
            g = grad if isinstance(grad, OctTensor) else _oct_like(grad)
            gx, gk = oct_conv_backward(x, p, g, self.spec.strategy)
            return (gx if isinstance(v, OctTensor) else gx.high), gk
        if kind == "relu":
            if isinstance(v, OctTensor):
                return OctTensor(grad.high * (v.high > 0), grad.low * (v.low > 0), v.alpha), None
            return grad * (v > 0), None
        if kind == "avgpool":
            return _map2(lambda t, g: avg_pool2_backward(g), v, grad), None
        if kind == "maxpool":
            return _map2(max_pool2_backward, v, grad), None
        if kind == "globalpool":
            if isinstance(v, OctTensor):
                c_h = v.high.shape[1]
                gh = np.broadcast_to(grad[:, :c_h] / (v.high.shape[2] * v.high.shape[3]), v.high.shape)
                gl = np.broadcast_to(grad[:, c_h:] / (v.low.shape[2] * v.low.shape[3]), v.low.shape)
                return OctTensor(np.ascontiguousarray(gh), np.ascontiguousarray(gl), v.alpha), None
            return np.ascontiguousarray(np.broadcast_to(grad / (v.shape[2] * v.shape[3]), v.shape)), None
        if kind == "linear":
            g2 = grad.reshape(grad.shape[0], -1)
            flat = _flatten(v)
            gx = (g2 @ p["weight"]).reshape(v.shape)
            return gx, {"weight": g2.T @ flat, "bias": g2.sum(axis=0)}
        raise AssertionError(kind)

    def forward(self, x, keep=False, capture=None):
        """Run the network; ``keep`` returns the per-layer inputs needed by :meth:`backward`,
        ``capture`` (a layer index) additionally returns that layer's output."""
        acts = []
        captured = None
        v = x
        for i in range(len(self.spec.layers)):
            if keep:
                acts.append(v)
            v = self.layer_forward(i, v)
            if capture == i:
                captured = v
        if capture is not None:
            return v, captured
        return (v, acts) if keep else v

    def backward(self, acts, grad):
        grads = [None] * len(self.params)
        for i in reversed(range(len(self.spec.layers))):
            grad, grads[i] = self.layer_backward(i, acts[i], grad)
        return grads

    def sgd_step(self, grads, lr):
        new = []
        for p, g in zip(self.params, grads):
            if p is None:
                new.append(None)
            elif isinstance(p, dict):
                new.append({k: (v - lr * g[k]).astype(v.dtype) for k, v in p.items()})
            elif hasattr(p, "weight"):
                new.append(replace(p, weight=(p.weight - lr * g).astype(p.weight.dtype)))
            else:
                gw = g.weights()
                new.append(p.with_weights({k: (w - lr * gw[k]).astype(w.dtype) for k, w in p.weights().items()}))
        self.params = new


def _flatten(v):
    return v.reshape(v.shape[0], -1)


def _map2(fn, v, grad):
    if isinstance(v, OctTensor):
        return OctTensor(fn(v.high, grad.high), fn(v.low, grad.low), v.alpha)
    return fn(v, grad)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of ``logits`` (n, classes); returns ``(loss, grad_logits)``."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1
    return float(loss), grad / n


# persistence -------------------------------------------------------------------


def _param_tensors(i, p):
    if p is None:
        return []
    if isinstance(p, dict):
        w = p["weight"]
        return [(f"{i}.weight", w[:, :, None, None]), (f"{i}.bias", p["bias"][None, :, None, None])]
    if hasattr(p, "weight"):
        return [(f"{i}.hh", p.weight)]
    return [(f"{i}.{name}", w) for name, w in p.weights().items() if w.size]


def save_weights(net, path):
    """Write all parameters plus a header binding them to ``net.spec``."""
    layers = []
    for i, (layer, p) in enumerate(zip(net.spec.layers, net.params)):
        entry = {"index": i, "kind": layer.kind}
        if layer.kind == "octconv":
            entry.update(kernel_header(p))
        layers.append(entry)
    header = {"kind": "network", "spec_hash": net.spec.hash(), "alpha": net.spec.alpha,
              "seed": net.spec.seed, "dtype": str(net.dtype), "layers": layers}
    tensors = [t for i, p in enumerate(net.params) for t in _param_tensors(i, p)]
    with open(path, "wb") as fh:
        write_container(fh, header, tensors)


def read_weights_header(path):
    with open(path, "rb") as fh:
        header, _ = read_container(fh)
    return header


def load_weights(path, spec):
    """Rebuild a :class:`Net` for ``spec`` from a weight file written by :func:`save_weights`."""
    with open(path, "rb") as fh:
        header, arrays = read_container(fh)
    if header.get("kind") != "network":
        raise WeightFileError(f"not a network weight file (kind={header.get('kind')!r})")
    if header["spec_hash"] != spec.hash():
        raise WeightFileError("weight file was saved for a different network spec (hash mismatch)")
    net = Net.init(spec, seed=header["seed"], dtype=np.dtype(header["dtype"]))
    params = []
    for i, p in enumerate(net.params):
        if p is None:
            params.append(None)
            continue
        try:
            if isinstance(p, dict):
                params.append({"weight": arrays[f"{i}.weight"][:, :, 0, 0],
                               "bias": arrays[f"{i}.bias"][0, :, 0, 0]})
            elif hasattr(p, "weight"):
                params.append(replace(p, weight=arrays[f"{i}.hh"]))
            else:
                params.append(p.with_weights({name: arrays[f"{i}.{name}"] if w.size else w
                                              for name, w in p.weights().items()}))
        except KeyError as exc:
            raise WeightFileError(f"weight file lacks tensor {exc.args[0]}") from None
    net.params = params
    return net
