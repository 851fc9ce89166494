"""Command-line entry point: ``n2cattn {partition,forward,verify,bench}``.

Exit status is 0 on success or PASS and 1 on FAIL or any error.
"""
from __future__ import annotations

import argparse
import sys

from . import _backend
from .bench import format_table, run_bench
from .encode import PipelineConfig
from .errors import N2CError
from .io import load_graph_json, write_report
from .partition import PartitionConfig, multilevel_partition
from .pipeline import RunConfig, default_k, run_forward
from .verify import run_verify


def _emit(report, out):
    text = write_report(report, out)
    if out is None:
        sys.stdout.write(text)


def cmd_partition(args):
    g = load_graph_json(args.input)
    k = args.k if args.k is not None else default_k(g.num_nodes)
    cfg = PartitionConfig(k, balance_eps=args.balance_eps, seed=args.seed,
                          refine_passes=args.refine_passes)
    p = multilevel_partition(g, cfg)
    report = {"input": args.input, "k": k, "seed": args.seed,
              "balance_eps": args.balance_eps, **p.to_dict()}
    _emit(report, args.out)
    return 0


def cmd_forward(args):
    pcfg = PipelineConfig(gcn_layers=args.gcn_layers, hidden_dim=args.hidden,
                          rwse_steps=args.rwse_steps, use_rwse=not args.no_rwse,
                          use_residual_ln=not args.no_ln, seed=args.seed)
    cfg = RunConfig(graph_path=args.input, k_clusters=args.k, kernel=args.kernel,
                    alpha=args.alpha, feature_map=args.feature_map, mask_mode=args.mask,
                    pipeline=pcfg, seed=args.seed, output_path=args.out)
    _emit(run_forward(cfg, backend=args.backend), args.out)
    return 0


def cmd_verify(args):
    report = run_verify(args.seed, args.trials, backend=args.backend)
    _emit(report, args.out)
    for name, s in report["suites"].items():
        print(f"{s['verdict']}  {name:<20} max_err={s['max_error']:.3e} tol={s['tolerance']:.0e}",
              file=sys.stderr)
    return 0 if report["verdict"] == "PASS" else 1


def cmd_bench(args):
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]
    backends = _backend.available() if args.backends == "all" else (
        [b.strip() for b in args.backends.split(",")] if args.backends else None)
    report = run_bench(sizes, args.ratio, args.repeats, backends=backends, seed=args.seed)
    print(format_table(report), file=sys.stderr)
    _emit(report, args.out)
    if args.check and report["verdict"] != "PASS":
        return 1
    return 0


def _ratio(text):
    if "/" in text:
        a, b = text.split("/")
        return float(a) / float(b)
    return float(text)


def build_parser():
    ap = argparse.ArgumentParser(prog="n2cattn", description=__doc__.splitlines()[0])
    ap.add_argument("--backend", choices=["cython", "python"], default=None,
                    help="kernel backend (default: compiled if available)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("partition", help="multilevel k-way partition of a graph JSON")
    p.add_argument("--input", required=True)
    p.add_argument("--k", type=int, default=None, help="cluster count (default ceil(n/16))")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--balance-eps", type=float, default=0.1)
    p.add_argument("--refine-passes", type=int, default=4)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_partition)

    f = sub.add_parser("forward", help="run the forward pipeline on a graph JSON")
    f.add_argument("--input", required=True)
    f.add_argument("--kernel", choices=["tensor", "convex"], default="tensor")
    f.add_argument("--alpha", type=float, default=0.5)
    f.add_argument("--feature-map", choices=["elu1", "relu"], default="elu1")
    f.add_argument("--mask", choices=["binary", "weighted"], default="binary")
    f.add_argument("--k", type=int, default=None)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--gcn-layers", type=int, default=2)
    f.add_argument("--hidden", type=int, default=16)
    f.add_argument("--rwse-steps", type=int, default=8)
    f.add_argument("--no-rwse", action="store_true")
    f.add_argument("--no-ln", action="store_true")
    f.add_argument("--out", default=None)
    f.set_defaults(func=cmd_forward)

    v = sub.add_parser("verify", help="randomized identity checks")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--trials", type=int, default=50)
    v.add_argument("--out", default=None)
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="naive vs message-passing scaling benchmark")
    b.add_argument("--sizes", default="512,1024,2048,4096,8192")
    b.add_argument("--ratio", type=_ratio, default=1 / 8)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--backends", default=None, help="comma list, or 'all'")
    b.add_argument("--check", action="store_true", help="exit 1 unless slopes meet thresholds")
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (N2CError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
