"""Command-line entry point: ``octconv <command> ...``.

Every command writes CSV (led by a ``# schema:`` line) or ``key=value`` lines
to stdout unless an output path is given. Validation failures exit with
status 2 and one ``error: <kind>: <message>`` line on stderr; the gradcheck
and oracle gates exit with status 1 when their tolerance is exceeded.
"""

from __future__ import annotations

import argparse
import contextlib
import sys
from . import rng
from .bench import bench_network, write_bench_csv
from .cost import network_cost, write_cost_csv
from .diagnostics import band_fractions, freq_analyze, misalignment_probe, write_energy_csv, write_probe_csv
from .errors import ConfigError, DomainError, ShapeError, SpecError, WeightFileError
from .io import load_tensor, save_tensor
from .netspec import load_spec, load_weights, octify, read_weights_header, save_weights
from .octave import OctTensor, PathMask
from .oracle import gradcheck_oct, oracle_suite, random_oct_instance
from .train import ToyTask, TrainingDiverged, train_toy, write_loss_csv

GRADCHECK_TOL = 1e-4
ORACLE_TOL = 1e-5


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(2, f"error: UsageError: {message}\n")


@contextlib.contextmanager
def _output(path):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}") from None
    return h, w


def _ratio(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in [0, 1], got {v}")
    return v


def _maybe_octify(spec, alpha):
    if alpha is None:
        return spec
    if spec.is_octave() or spec.octave_input:
        return spec.with_alpha(alpha)
    return octify(spec, alpha)


def cmd_analyze(args):
    report = network_cost(load_spec(args.spec, seed=rng.resolve_seed(0)), args.alpha, count=not args.no_count)
    with _output(args.out) as fh:
        write_cost_csv(report, fh)


def cmd_bench(args):
    rows = bench_network(load_spec(args.spec), args.alpha, repeats=args.repeats, threads=args.threads,
                         batch=args.batch)
    with _output(args.out) as fh:
        write_bench_csv(rows, fh)


def cmd_gradcheck(args):
    h, w = args.size
    seed = rng.resolve_seed(args.seed)
    alpha_in = 0.0 if args.layer == "entry" else args.alpha
    alpha_out = 0.0 if args.layer == "exit" else args.alpha
    mask = PathMask(args.mask != "no-l2h", args.mask != "no-h2l")
    x, k = random_oct_instance(seed, args.chans, args.chans, h, w, alpha_in, alpha_out, n=1, k=args.k,
                               mode=args.mode, groups=args.groups)
    errors = gradcheck_oct(x, k, args.strategy, mask, seed=seed)
    worst = max(errors.values(), default=0.0)
    for name, err in errors.items():
        print(f"{name}={err:.3e}")
    print(f"max_rel_error={worst:.3e}")
    return 0 if worst < GRADCHECK_TOL else 1


def cmd_misalign(args):
    strategies = ["avg", "max", "stride"] if args.strategy == "all" else [args.strategy]
    rows = [misalignment_probe(s, size=args.size) for s in strategies]
    with _output(args.out) as fh:
        write_probe_csv(rows, fh)


def cmd_train_toy(args):
    seed = rng.resolve_seed(args.seed)
    spec = _maybe_octify(load_spec(args.spec, seed=seed), args.alpha)
    task = ToyTask(seed=args.task_seed, n_samples=args.samples)
    result = train_toy(spec, task, epochs=args.epochs, lr=args.lr, batch_size=args.batch_size, seed=seed)
    with _output(args.loss_csv) as fh:
        write_loss_csv(result, fh)
    if args.weights_out:
        save_weights(result.net, args.weights_out)
    print(f"final_accuracy={result.final_accuracy:.4f}", file=sys.stderr)


def _net_for_weights(spec_path, weights):
    header = read_weights_header(weights)
    spec = load_spec(spec_path, seed=header["seed"])
    candidates = [spec]
    if not (spec.is_octave() or spec.octave_input):
        candidates.append(octify(spec, header["alpha"]))
    for cand in candidates:
        if cand.hash() == header["spec_hash"]:
            return load_weights(weights, cand)
    raise WeightFileError("weight file matches neither the spec nor its octified form")


def cmd_freq(args):
    if args.features:
        high = load_tensor(args.features)
        feats = high
        if args.features_low:
            low = load_tensor(args.features_low)
            c = high.shape[1] + low.shape[1]
            feats = OctTensor(high, low, low.shape[1] / c)
    else:
        if not (args.weights and args.spec and args.dump_layer is not None):
            raise UsageError("freq needs --features, or --weights with --spec and --dump-layer")
        net = _net_for_weights(args.spec, args.weights)
        if not 0 <= args.dump_layer < len(net.spec.layers):
            raise UsageError(f"--dump-layer must be in [0, {len(net.spec.layers) - 1}]")
        x, _ = ToyTask(seed=args.task_seed, n_samples=args.samples).generate(net.dtype)
        _, feats = net.forward(x, capture=args.dump_layer)
        if args.dump:
            if isinstance(feats, OctTensor):
                save_tensor(f"{args.dump}_high.oct4", feats.high)
                if feats.low.shape[1]:
                    save_tensor(f"{args.dump}_low.oct4", feats.low)
            else:
                save_tensor(f"{args.dump}_high.oct4", feats)
    maps = freq_analyze(feats)
    if not isinstance(maps, dict):
        maps = {"high": maps}
    for group, emap in maps.items():
        with _output(f"{args.out}_{group}.csv" if args.out else None) as fh:
            write_energy_csv(emap, fh)
    for group, frac in band_fractions(feats).items():
        print(f"{group}_outside_band_energy={frac:.6f}", file=sys.stderr if not args.out else sys.stdout)


def cmd_oracle(args):
    worst = oracle_suite(rng.resolve_seed(args.seed), instances=args.instances)
    for name, dev in worst.items():
        print(f"{name}_max_rel_dev={dev:.3e}")
    overall = max(worst.values())
    print(f"max_rel_dev={overall:.3e}")
    return 0 if overall < ORACLE_TOL else 1


def build_parser():
    p = _Parser(prog="octconv", description="Octave convolution diagnostics and reports.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="theoretical and counted cost report (CSV)")
    a.add_argument("--spec", required=True)
    a.add_argument("--alpha", type=_ratio, required=True)
    a.add_argument("--out")
    a.add_argument("--no-count", action="store_true", help="skip the instrumented forward pass")
    a.set_defaults(func=cmd_analyze)

    b = sub.add_parser("bench", help="per-layer wall-clock (CSV)")
    b.add_argument("--spec", required=True)
    b.add_argument("--alpha", type=_ratio, required=True)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--batch", type=int)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("gradcheck", help="analytic vs finite-difference gradients")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--alpha", type=_ratio, default=0.5)
    g.add_argument("--size", type=_size, default=(6, 6))
    g.add_argument("--chans", type=int, default=4)
    g.add_argument("--k", type=int, default=3)
    g.add_argument("--mode", choices=["dense", "grouped", "depthwise"], default="dense")
    g.add_argument("--groups", type=int, default=1)
    g.add_argument("--strategy", choices=["avg", "max", "stride"], default="avg")
    g.add_argument("--mask", choices=["both", "no-l2h", "no-h2l"], default="both")
    g.add_argument("--layer", choices=["middle", "entry", "exit"], default="middle")
    g.set_defaults(func=cmd_gradcheck)

    m = sub.add_parser("misalign", help="centroid shift of the H->L->H round trip")
    m.add_argument("--strategy", choices=["avg", "max", "stride", "all"], default="all")
    m.add_argument("--size", type=int, default=16)
    m.add_argument("--out")
    m.set_defaults(func=cmd_misalign)

    t = sub.add_parser("train-toy", help="SGD on the synthetic quadrant task")
    t.add_argument("--spec", required=True)
    t.add_argument("--alpha", type=_ratio, help="octify the spec at this ratio (omit to train it as written)")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--task-seed", type=int, default=0)
    t.add_argument("--samples", type=int, default=256)
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--batch-size", type=int, default=32)
    t.add_argument("--loss-csv")
    t.add_argument("--weights-out")
    t.set_defaults(func=cmd_train_toy)

    f = sub.add_parser("freq", help="DFT energy maps of one layer's activations (CSV per group)")
    f.add_argument("--weights")
    f.add_argument("--spec")
    f.add_argument("--dump-layer", type=int)
    f.add_argument("--features", help="OCT4 tensor dump (high group or plain tensor)")
    f.add_argument("--features-low", help="OCT4 dump of the low group")
    f.add_argument("--task-seed", type=int, default=0)
    f.add_argument("--samples", type=int, default=64)
    f.add_argument("--dump", help="also write the captured activations as PREFIX_{high,low}.oct4")
    f.add_argument("--out", help="write PREFIX_high.csv / PREFIX_low.csv instead of stdout")
    f.set_defaults(func=cmd_freq)

    o = sub.add_parser("oracle", help="fast paths vs direct-index references")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--instances", type=int, default=20)
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args) or 0
    except (ConfigError, DomainError, ShapeError, SpecError, WeightFileError, UsageError,
            TrainingDiverged, FileNotFoundError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
