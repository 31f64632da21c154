"""Command-line interface: ``bpls {simulate,run,bench,compare-approx,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

from . import bench as B
from .data import SimSpec, SplitSpec, simulate, split
from .errors import BPLSError, ConfigError
from .model import BasisSpec
from .selftrain import CRITERIA, SelfTrainConfig, run_self_training

log = logging.getLogger("bpls")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _basis(text: str) -> BasisSpec:
    try:
        return BasisSpec.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _share(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"share must lie in (0, 1), got {text}")
    return v


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative integer, got {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bpls", description="Bayesian pseudo-label selection for self-training.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    def common(p, seed=True, out_help="output file (default: standard output)"):
        if seed:
            p.add_argument("--seed", type=_seed, default=None, help="master random seed (default 0)")
        p.add_argument("--out", type=Path, default=None, help=out_help)

    def sim_flags(p):
        p.add_argument("--n", type=_positive_int, default=None, help="simulated rows")
        p.add_argument("--q", type=_positive_int, default=None, help="simulated features")
        p.add_argument("--mu", type=float, default=None, help="feature mean (default 0)")
        p.add_argument("--sigma", type=float, default=None, help="feature standard deviation (default 1)")

    def split_flags(p):
        p.add_argument("--unlabeled-share", type=_share, default=None,
                       help="share of training rows that lose their label (default 0.8)")
        p.add_argument("--test-share", type=_share, default=None, help="share of rows held out (default 0.5)")

    def method_flags(p):
        p.add_argument("--max-iters", type=_nonneg_int, default=None,
                       help="iteration budget per run (default: until the pool is empty)")
        p.add_argument("--basis", type=_basis, default=None, help="identity, poly:D or spline:D:K")
        p.add_argument("--alpha", type=float, default=None, help="optimism weight of ppp-fantasy")
        p.add_argument("--lambda", dest="lam", type=float, default=None,
                       help="model-size penalty of bpls-bivariate")

    p = sub.add_parser("simulate", help="write a simulated dataset as CSV")
    sim_flags(p)
    common(p)
    p.add_argument("--target", default="y", help="name of the label column (default y)")

    p = sub.add_parser("run", help="one self-training run; writes the trace as JSON")
    p.add_argument("data", nargs="?", type=Path, default=None,
                   help="CSV file (default: simulate with --n/--q)")
    p.add_argument("--config", type=Path, default=None, help="experiment JSON supplying data and split")
    p.add_argument("--criterion", choices=CRITERIA, default="ppp-u", help="selection criterion")
    p.add_argument("--target", default=None, help="label column of the CSV")
    p.add_argument("--positive", default=None, help="token of the positive class (default 1)")
    sim_flags(p)
    split_flags(p)
    method_flags(p)
    common(p)

    p = sub.add_parser("bench", help="repeated experiment; writes report, curves CSV and audit trail")
    p.add_argument("--config", type=Path, required=True, help="experiment JSON")
    p.add_argument("--reps", type=_positive_int, default=None, help="repetitions (overrides config)")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help="worker processes for repetitions (default: available cores)")
    p.add_argument("--record-timing", action="store_true",
                   help="store wall-clock times in the report (makes it run-dependent)")
    sim_flags(p)
    split_flags(p)
    method_flags(p)
    common(p, out_help="report JSON path; the CSV and audit trail are written next to it")

    p = sub.add_parser("compare-approx", help="argmax agreement of ppp-fine and ppp-u over a grid of n")
    p.add_argument("--config", type=Path, default=None, help="comparison JSON")
    p.add_argument("--reps", type=_positive_int, default=None, help="number of seeds")
    p.add_argument("--n", type=_positive_int, action="append", default=None,
                   help="sample size; repeat for a grid (default 120 and 400)")
    p.add_argument("--q", type=_positive_int, default=None, help="simulated features (default 4)")
    p.add_argument("--mu", type=float, default=None, help="feature mean (default 0)")
    p.add_argument("--sigma", type=float, default=None, help="feature standard deviation (default 1)")
    split_flags(p)
    p.add_argument("--max-iters", type=_nonneg_int, default=None,
                   help="iteration budget per run (default: until the pool is empty)")
    common(p)

    p = sub.add_parser("report", help="re-aggregate an audit trail or convert a report")
    p.add_argument("source", type=Path, help="audit .jsonl or report .json")
    common(p, seed=False, out_help="output path; .csv writes curves, anything else JSON")
    return parser


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text, encoding="utf-8")


def _progress(label):
    def report(i, total):
        print(f"[{label}] {i}/{total}", file=sys.stderr, flush=True)
    return report


def _method_overrides(m: SelfTrainConfig, args) -> SelfTrainConfig:
    changes = {}
    if args.max_iters is not None:
        changes["max_iterations"] = args.max_iters
    if args.basis is not None:
        changes["basis"] = args.basis
    if args.alpha is not None:
        changes["alpha"] = args.alpha
    if args.lam is not None:
        changes["lam"] = args.lam
    return replace(m, **changes) if changes else m


def _sim_overrides(sim: SimSpec | None, args) -> SimSpec | None:
    changes = {k: getattr(args, k) for k in ("n", "q", "mu", "sigma") if getattr(args, k) is not None}
    if not changes:
        return sim
    if sim is None:
        raise ConfigError("--n/--q/--mu/--sigma need a simulated data source")
    if "q" in changes and sim.coefficients is not None and len(sim.coefficients) != changes["q"]:
        raise ConfigError("--q conflicts with the configured coefficients")
    return replace(sim, **changes)


def _split_overrides(spec: SplitSpec, args) -> SplitSpec:
    changes = {}
    if args.unlabeled_share is not None:
        changes["unlabeled_share"] = args.unlabeled_share
    if args.test_share is not None:
        changes["test_share"] = args.test_share
    return replace(spec, **changes) if changes else spec


def cmd_simulate(args) -> int:
    if args.n is None or args.q is None:
        raise UsageError("simulate: error: --n and --q are required")
    spec = SimSpec(args.n, args.q, args.mu if args.mu is not None else 0.0,
                   args.sigma if args.sigma is not None else 1.0, seed=args.seed or 0)
    ds = simulate(spec)
    if args.out is None:
        ds.to_csv(sys.stdout, args.target)
    else:
        ds.write_csv(args.out, args.target)
    print(f"simulated {ds.n} rows x {ds.p} features", file=sys.stderr)
    return 0


def cmd_run(args) -> int:
    seed = args.seed or 0
    if args.config is not None:
        cfg = B.ExperimentConfig.load(args.config)
        source, split_spec = cfg.source, cfg.split
    else:
        split_spec = SplitSpec()
        if args.data is not None:
            if not args.target:
                raise UsageError("run: error: --target is required with a CSV file")
            source = B.DataSource(csv=str(args.data), target=args.target, positive=args.positive or "1")
        else:
            if args.n is None or args.q is None:
                raise UsageError("run: error: give a CSV file, --config, or --n and --q")
            source = B.DataSource(sim=SimSpec(args.n, args.q))
    if source.sim is not None:
        source = replace(source, sim=_sim_overrides(source.sim, args))
    split_spec = _split_overrides(split_spec, args)
    seeds = B.rep_seeds(seed, 1)[0]
    ds = source.dataset(seeds["data"])
    parts = split(ds, replace(split_spec, seed=seeds["split"]))
    method = _method_overrides(SelfTrainConfig(args.criterion, seed=seeds["method"]), args)
    trace = run_self_training(method, parts.labeled, parts.pool, parts.test, progress=_progress(args.criterion))
    _emit(json.dumps(trace.to_dict(), indent=2) + "\n", args.out)
    acc = trace.accuracies
    print(f"initial {acc[0]:.4f}  best {acc.max():.4f}  final {acc[-1]:.4f}", file=sys.stderr)
    return 0


def cmd_bench(args) -> int:
    cfg = B.ExperimentConfig.load(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.reps is not None:
        changes["repetitions"] = args.reps
    if args.out is not None:
        changes["out"] = str(args.out)
    source = cfg.source
    if source.sim is not None:
        source = replace(source, sim=_sim_overrides(source.sim, args))
    elif any(getattr(args, k) is not None for k in ("n", "q", "mu", "sigma")):
        raise ConfigError("--n/--q/--mu/--sigma need a simulated data source")
    cfg = replace(cfg, source=source, split=_split_overrides(cfg.split, args),
                  methods=tuple(_method_overrides(m, args) for m in cfg.methods), **changes)
    threads = args.threads or os.cpu_count() or 1
    report = B.run_experiment(cfg, threads=threads, progress=_progress("rep"))
    if not args.record_timing:
        report.runtime_s = None
        report.methods = [replace(m, runtime_s=None) for m in report.methods]
    out = Path(cfg.out) if cfg.out else None
    if out is None:
        _emit(json.dumps(report.to_dict(), indent=2) + "\n", None)
    else:
        B.write_report(report, out, "json")
        B.write_report(report, out.with_suffix(".csv"), "csv")
        B.write_audit(report, out.with_suffix(".audit.jsonl"))
        print(f"wrote {out}", file=sys.stderr)
    for m in report.methods:
        print(f"{m.tag:20s} oracle {m.oracle:.4f}  final {m.final:.4f}  failures {m.failures}", file=sys.stderr)
    return 0


def cmd_compare(args) -> int:
    if args.config is not None:
        cfg = B.ApproxConfig.from_dict(json.loads(args.config.read_text(encoding="utf-8")))
    else:
        cfg = B.ApproxConfig(B.DataSource(sim=SimSpec(1, args.q or 4)))
    sim = cfg.source.sim
    sim = replace(sim, **{k: getattr(args, k) for k in ("q", "mu", "sigma") if getattr(args, k) is not None})
    changes = {"source": B.DataSource(sim=sim), "split": _split_overrides(cfg.split, args)}
    if args.n:
        changes["n_grid"] = tuple(args.n)
    if args.reps is not None or args.seed is not None:
        base = args.seed or 0
        count = args.reps or len(cfg.seeds)
        changes["seeds"] = tuple(range(base, base + count))
    if args.max_iters is not None:
        changes["max_iterations"] = args.max_iters
    cfg = replace(cfg, **changes)
    stats = B.compare_approximations(cfg, progress=lambda s: print(s, file=sys.stderr, flush=True))
    doc = {"config": cfg.to_dict(), "results": [asdict(s) for s in stats]}
    _emit(json.dumps(doc, indent=2) + "\n", args.out)
    return 0


def cmd_report(args) -> int:
    src = args.source
    if src.suffix == ".jsonl":
        report = B.report_from_audit(src)
    else:
        report = B.read_report(src)
    if args.out is not None and args.out.suffix == ".csv":
        B.write_report(report, args.out, "csv")
    elif args.out is not None:
        B.write_report(report, args.out, "json")
    else:
        _emit(json.dumps(report.to_dict(), indent=2) + "\n", None)
    return 0


COMMANDS = {"simulate": cmd_simulate, "run": cmd_run, "bench": cmd_bench,
            "compare-approx": cmd_compare, "report": cmd_report}


def main(argv=None) -> int:
    """Entry point; returns 0 on success, 1 on usage errors, 2 on runtime failures."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s",
                            stream=sys.stderr)
        return COMMANDS[args.command](args)
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        print(str(exc).rstrip(), file=sys.stderr)
        return 1
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"bpls: error: {exc}", file=sys.stderr)
        return 1 if isinstance(exc, ConfigError) else 2
    except (BPLSError, OSError, ValueError) as exc:
        print(f"bpls: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
