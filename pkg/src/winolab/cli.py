"""winolab command line.

Exit codes: 0 success, 1 usage error, 2 verification failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import __version__
from .analysis import (DEFAULT_KERNELS, DEFAULT_METHODS, measure_error, oracle_suite,
                       speedup_ratio, sweep, to_csv)
from .engines import ConvSpec, EngineKind, run_engine
from .kerngen import generate_kernel, kernel_to_dict
from .planner import format_tree, plan_for, plan_to_dict, rpn_string
from .tensor import TensorFormatError, read_tensor, write_tensor

EXIT_USAGE, EXIT_VERIFY, EXIT_IO = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _kernel_arg(text: str) -> tuple[int, int]:
    try:
        m, r = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected m,r, got {text!r}")
    if m < 1 or r < 1:
        raise argparse.ArgumentTypeError(f"kernel needs m >= 1 and r >= 1, got {text!r}")
    return m, r


def _int_list(text: str) -> list[int]:
    """'9', '3,5,7' or '3-12'."""
    out = []
    try:
        for part in text.split(","):
            if "-" in part:
                a, b = part.split("-")
                out.extend(range(int(a), int(b) + 1))
            elif part:
                out.append(int(part))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad integer list {text!r}")
    return out


def _methods(text: str) -> list[EngineKind]:
    try:
        return [EngineKind(v) for v in text.split(",") if v]
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _fmt_matrix(a) -> list[str]:
    cells = [[str(v) for v in row] for row in a]
    width = max(len(c) for row in cells for c in row)
    return ["  [" + " ".join(c.rjust(width) for c in row) + "]" for row in cells]


def cmd_gen_kernel(args) -> int:
    if args.m < 1 or args.r < 1:
        raise UsageError(f"gen-kernel: need --m >= 1 and --r >= 1, got m={args.m}, r={args.r}")
    k = generate_kernel(args.m, args.r)
    if args.format == "json":
        d = kernel_to_dict(k)
        for name in ("AT", "G", "BT"):
            d[name + "_float"] = [[float(v) for v in row] for row in getattr(k, name)]
        print(json.dumps(d, indent=2))
        return 0
    print(f"{k.name}  l={k.l}  points: {', '.join(str(p) for p in k.points)}")
    for name in ("AT", "G", "BT"):
        mat = getattr(k, name)
        print(f"{name} (exact):")
        print("\n".join(_fmt_matrix(mat)))
        print(f"{name} (decimal):")
        print("\n".join(_fmt_matrix([[f"{float(v):.10g}" for v in row] for row in mat])))
    return 0


def _plan_spec(args) -> ConvSpec:
    R = args.filter
    if args.filter_w is None:
        return ConvSpec(R=R, S=args.stride, H=R)
    return ConvSpec(R=R, C=args.filter_w, S=args.stride, H=R, W=args.filter_w)


def cmd_plan(args) -> int:
    kernel = generate_kernel(*args.kernel)
    plan = plan_for(_plan_spec(args), kernel, args.exact_phase_kernels)
    plans = plan if isinstance(plan, tuple) else (plan,)
    labels = ["height", "width"] if len(plans) == 2 else [None]
    if args.json:
        d = [plan_to_dict(p) for p in plans]
        print(json.dumps(d[0] if len(d) == 1 else {"height": d[0], "width": d[1]}, indent=2))
        return 0
    for label, p in zip(labels, plans):
        if label:
            print(f"{label}:")
        print(rpn_string(p) if args.rpn else format_tree(p))
    return 0


def cmd_conv(args) -> int:
    x = read_tensor(args.input)
    w = read_tensor(args.filter)
    spec = ConvSpec.infer(x, w, args.stride)
    engine = EngineKind(args.engine)
    kernel = generate_kernel(*args.kernel) if args.kernel else None
    if kernel is None and engine is not EngineKind.native:
        raise UsageError(f"conv: engine {engine.value} needs --kernel")
    options = {}
    if engine is EngineKind.nested and spec.S == 1:
        options = {"depth": args.depth, "mixed": args.mixed}
    y = run_engine(engine, x, w, spec, kernel, **options)
    write_tensor(args.output, y)
    if not args.quiet:
        print(f"{engine.value}: {x.shape} * {w.shape} stride {spec.S} -> {y.shape} written to {args.output}")
    return 0


def cmd_cost(args) -> int:
    if not args.methods:
        raise UsageError("cost: empty method list")
    kernels = args.kernel or list(DEFAULT_KERNELS)
    reports = sweep(args.filter, kernels, args.methods, args.dims, args.stride)
    if args.format == "csv":
        text = to_csv(reports)
        if args.csv:
            with open(args.csv, "w") as f:
                f.write(text)
        else:
            sys.stdout.write(text)
        return 0
    print(f"{'method':<16}{'filter':>7}{'kernel':>9}{'mults/tile':>12}{'outs/tile':>11}{'mults/output':>14}")
    for c in reports:
        print(f"{c.method.value:<16}{c.filter_side:>7}{'F(%d,%d)' % c.kernel:>9}"
              f"{c.mults_per_tile:>12}{c.outputs_per_tile:>11}{float(c.mults_per_output):>14.4f}")
    if EngineKind.ola in args.methods and EngineKind.nested in args.methods:
        for m, r in kernels:
            for R in args.filter:
                ratio = speedup_ratio(R, generate_kernel(m, r), dims=args.dims, stride=args.stride)
                print(f"speedup ola->nested F({m},{r}) R={R}: {float(ratio):.4f} ({ratio})")
    return 0


def cmd_verify(args) -> int:
    rows = oracle_suite(args.trials, args.seed, args.tolerance, args.kernel or DEFAULT_KERNELS,
                        args.filter, args.strides, args.engines)
    for r in rows:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status} {r.engine:<28} F({r.kernel[0]},{r.kernel[1]}) R={r.R:<3} S={r.S} "
              f"trials={r.trials} max_rel_err={r.max_error:.3e}")
    failed = [r for r in rows if not r.passed]
    worst = max((r.max_error for r in rows), default=0.0)
    print(f"{len(rows) - len(failed)}/{len(rows)} passed at tolerance {args.tolerance:g} "
          f"(worst max_rel_err={worst:.3e})")
    return EXIT_VERIFY if failed else 0


def cmd_error(args) -> int:
    kernel = generate_kernel(*args.kernel) if args.kernel else None
    rep = measure_error(args.method, args.filter, kernel, args.precision, args.trials, args.seed)
    if args.format == "json":
        print(json.dumps({"method": rep.method.value, "filter": args.filter,
                          "kernel": list(args.kernel) if args.kernel else None,
                          "precision": rep.precision, "max_relative_error": rep.max_relative_error,
                          "mean_relative_error": rep.mean_relative_error}))
    else:
        print(f"{rep.method.value} R={args.filter} kernel={args.kernel} {rep.precision}-bit: "
              f"max_rel_err={rep.max_relative_error:.3e} mean_rel_err={rep.mean_relative_error:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="winolab", description="Winograd, OLA and nested-Winograd convolution toolkit")
    p.add_argument("--quiet", action="store_true", help="suppress the version banner and chatter")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-kernel", help="print the F(m, r) transform matrices")
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--r", type=int, required=True)
    g.add_argument("--format", choices=["text", "json"], default="text")
    g.set_defaults(func=cmd_gen_kernel)

    pl = sub.add_parser("plan", help="decompose a (filter, stride) convolution")
    pl.add_argument("--filter", type=int, required=True, help="filter height (and width if square)")
    pl.add_argument("--filter-w", type=int, help="filter width for rectangular filters")
    pl.add_argument("--stride", type=int, default=1)
    pl.add_argument("--kernel", type=_kernel_arg, required=True, help="m,r")
    pl.add_argument("--exact-phase-kernels", action="store_true",
                    help="run short leaves on their own F(m, r') instead of zero padding")
    out = pl.add_mutually_exclusive_group()
    out.add_argument("--rpn", action="store_true")
    out.add_argument("--json", action="store_true")
    pl.set_defaults(func=cmd_plan)

    c = sub.add_parser("conv", help="convolve WTEN tensors with one engine")
    c.add_argument("--engine", choices=[e.value for e in EngineKind], default="plan")
    c.add_argument("--input", required=True)
    c.add_argument("--filter", required=True)
    c.add_argument("--output", required=True)
    c.add_argument("--stride", type=int, default=1)
    c.add_argument("--kernel", type=_kernel_arg)
    c.add_argument("--depth", type=int, help="nesting depth for the nested engine (default: auto)")
    c.add_argument("--mixed", action="store_true", help="nested engine: outer level F(m, ceil(R/r))")
    c.set_defaults(func=cmd_conv)

    co = sub.add_parser("cost", help="multiplication-complexity sweep")
    co.add_argument("--filter", type=_int_list, default=list(range(3, 13)))
    co.add_argument("--kernel", type=_kernel_arg, action="append")
    co.add_argument("--methods", type=_methods, default=list(DEFAULT_METHODS))
    co.add_argument("--dims", type=int, choices=[1, 2], default=2)
    co.add_argument("--stride", type=int, default=1)
    co.add_argument("--format", choices=["csv", "text"], default="csv")
    co.add_argument("--csv", help="write the CSV here instead of stdout")
    co.set_defaults(func=cmd_cost)

    v = sub.add_parser("verify", help="check every engine against the direct oracle")
    v.add_argument("--trials", type=int, default=50)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--tolerance", type=float, default=1e-6)
    v.add_argument("--kernel", type=_kernel_arg, action="append")
    v.add_argument("--filter", type=_int_list, default=list(range(3, 13)))
    v.add_argument("--strides", type=_int_list, default=[1, 2, 3])
    v.add_argument("--engines", type=_methods,
                   default=[EngineKind.direct_winograd, EngineKind.ola, EngineKind.nested, EngineKind.plan])
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("error", help="numerical-stability harness")
    e.add_argument("--method", choices=[k.value for k in EngineKind], required=True)
    e.add_argument("--filter", type=int, required=True)
    e.add_argument("--kernel", type=_kernel_arg, help="m,r (direct_winograd uses F(m, filter))")
    e.add_argument("--precision", type=int, choices=[32, 64], default=32)
    e.add_argument("--trials", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--format", choices=["text", "json"], default="text")
    e.set_defaults(func=cmd_error)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.quiet:
            print(f"winolab {__version__}", file=sys.stderr)
        return args.func(args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_USAGE
    except (OSError, TensorFormatError) as e:
        print(f"winolab: I/O error: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"winolab: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
