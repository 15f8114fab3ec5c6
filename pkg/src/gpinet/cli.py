"""``gpinet`` command line: data generation, training, sweeps and verification.

Exit codes: 0 success, 1 a verification found a violation, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

import numpy as np

from gpinet.errors import ContractError, GpiError, OracleError, ShapeError
from gpinet.io import atomic_write_text

log = logging.getLogger("gpinet")

EXIT_OK, EXIT_VIOLATION, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _int_list(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _str_list(text):
    return [x.strip() for x in text.split(",") if x.strip()]


# argument groups shared between commands

def _add_task(p):
    p.add_argument("--n", type=int, default=10, help="nodes per instance")
    p.add_argument("--K", type=int, default=4, help="number of groups")
    p.add_argument("--p-edge", type=float, default=0.5, help="edge probability")


def _add_training(p):
    p.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    p.add_argument("--batch-size", type=int, default=32, help="minibatch size")
    p.add_argument("--epochs", type=int, default=150, help="maximum epochs")
    p.add_argument("--width", type=int, default=64, help="GPI widths L=W and rho hidden width")
    p.add_argument("--eval-size", type=int, default=2000, help="generated eval instances")
    p.add_argument("--no-early-stop", action="store_true", default=False,
                   help="train all epochs even after 100%% train accuracy")
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64",
                   help="floating point precision")
    p.add_argument("--rho-sees-s-i", action=argparse.BooleanOptionalAction, default=True,
                   help="feed each node's neighbour aggregate to rho as well as G")


def _train_config(args, **extra):
    from gpinet.synthbench.training import TrainConfig

    return TrainConfig(lr=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                       width=args.width, eval_size=args.eval_size, n=args.n, K=args.K,
                       p_edge=args.p_edge, early_stop=not args.no_early_stop,
                       dtype=args.dtype, rho_sees_s_i=args.rho_sees_s_i, **extra)


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="gpinet", description=__doc__.splitlines()[0],
                                     formatter_class=fmt)
    parser.add_argument("--log-level", default="WARNING",
                        choices=("DEBUG", "INFO", "WARNING", "ERROR"), help="logging verbosity")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=fmt)
        p.add_argument("--config", default=None,
                       help="JSON file of flag values; explicit flags take precedence")
        return p

    p = command("generate", "write a same-set neighbour counting dataset as JSONL")
    _add_task(p)
    p.add_argument("--count", type=int, default=1000, help="number of instances")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--out", required=True, help="output JSONL path")

    p = command("train", "train one model and report accuracy")
    _add_task(p)
    _add_training(p)
    p.add_argument("--model", choices=("gpi", "fc", "seq"), default="gpi", help="model kind")
    p.add_argument("--size", type=int, default=1000, help="generated training instances")
    p.add_argument("--train-data", default=None, help="JSONL training set (overrides --size)")
    p.add_argument("--eval-data", default=None, help="JSONL eval set (overrides --eval-size)")
    p.add_argument("--seed", type=int, default=0, help="trial seed")
    p.add_argument("--checkpoint", default=None, help="write the trained model here (.npz)")
    p.add_argument("--out", default=None, help="write the result and loss trace as JSON")

    p = command("eval", "evaluate a checkpoint on a dataset")
    _add_task(p)
    p.add_argument("--checkpoint", required=True, help="model checkpoint (.npz)")
    p.add_argument("--data", default=None, help="JSONL eval set; generated when absent")
    p.add_argument("--count", type=int, default=2000, help="generated instances")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--permute-seed", type=int, default=None,
                   help="also evaluate on randomly relabelled copies of every instance")
    p.add_argument("--out", default=None, help="write the metrics as JSON")

    p = command("sweep", "sample-complexity sweep over model kinds, sizes and seeds")
    _add_task(p)
    _add_training(p)
    p.add_argument("--models", type=_str_list, default=["gpi", "fc"],
                   help="comma-separated kinds from gpi,fc,seq")
    p.add_argument("--sizes", type=_int_list, default=[200, 500, 1000, 2000, 5000, 10000],
                   help="comma-separated training-set sizes")
    p.add_argument("--seeds", type=_int_list, default=[1, 2, 3], help="comma-separated seeds")
    p.add_argument("--jobs", type=int, default=1, help="concurrent trials")
    p.add_argument("--timing", choices=("none", "wall"), default="none",
                   help="'none' writes 0 seconds so outputs are byte-reproducible")
    p.add_argument("--out", required=True, help="results CSV path")

    p = command("verify-invariance", "check F(sigma z) == sigma F(z) on random models")
    p.add_argument("--trials", type=int, default=1000, help="random (model, graph, sigma) triples")
    p.add_argument("--n", type=int, default=12, help="maximum nodes per graph")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--mode", choices=("complete", "automorphism", "recurrent"),
                   default="complete",
                   help="complete graphs, general digraphs over their automorphisms, or "
                        "recurrent composition")
    p.add_argument("--aggregation", choices=("mixed", "sum", "attention"), default="mixed",
                   help="aggregation of the random models")
    p.add_argument("--steps", type=int, default=3, help="recurrent steps (recurrent mode)")
    p.add_argument("--tol", type=float, default=1e-9, help="maximum allowed deviation")

    p = command("verify-construction", "check the constructive phi/alpha/rho against an oracle")
    p.add_argument("--oracle", default="rowsum", help="oracle name (see --list-oracles)")
    p.add_argument("--list-oracles", action="store_true", default=False,
                   help="print the registered oracles and exit")
    p.add_argument("--exhaustive-n", type=int, default=3,
                   help="check every binary matrix on this many nodes (0 to skip)")
    p.add_argument("--random", type=int, default=0, help="random real-valued matrices to check")
    p.add_argument("--sizes", type=_int_list, default=[4, 5, 6],
                   help="node counts for random matrices")
    p.add_argument("--tol", type=float, default=1e-12, help="tolerance for random matrices")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--rows", type=int, default=20, help="table rows to print per section")

    p = command("gradcheck", "finite-difference check of full-model parameter gradients")
    p.add_argument("--graphs", type=int, default=20, help="random graphs per aggregation mode")
    p.add_argument("--n", type=int, default=4, help="nodes per graph")
    p.add_argument("--aggregation", type=_str_list, default=["sum", "attention"],
                   help="comma-separated aggregation modes")
    p.add_argument("--h", type=float, default=1e-5, help="finite-difference step")
    p.add_argument("--oracle-precision", choices=("extended", "float64"), default="extended",
                   help="precision of the finite-difference evaluations")
    p.add_argument("--tol", type=float, default=1e-4, help="maximum relative error")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    return parser


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def parse_args(argv):
    """Parse ``argv``; values from ``--config`` sit between defaults and explicit flags."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = _subparser(parser, args.command)
        try:
            with open(args.config) as fh:
                values = json.load(fh)
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}")
        if not isinstance(values, dict):
            raise UsageError("config file must hold a JSON object")
        known = {a.dest: a for a in sub._actions}
        cleaned = {}
        for key, value in values.items():
            dest = key.lstrip("-").replace("-", "_")
            if dest not in known or dest in ("help", "config"):
                raise UsageError(f"unknown config key {key!r} for {args.command}")
            action = known[dest]
            if action.type is not None and isinstance(value, str):
                try:
                    value = action.type(value)
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise UsageError(f"config key {key!r}: {exc}")
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"config key {key!r}: {value!r} not in {list(action.choices)}")
            cleaned[dest] = value
        sub.set_defaults(**cleaned)
        args = parser.parse_args(argv)
    return args


def _print_config(args):
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "log_level"}
    print("config " + json.dumps(cfg, sort_keys=True), flush=True)


# commands

def cmd_generate(args):
    from gpinet.graphs import SyntheticSpec, dump_dataset, generate_instances

    spec = SyntheticSpec(n=args.n, K=args.K, p_edge=args.p_edge, count=args.count, seed=args.seed)
    instances = generate_instances(spec)
    dump_dataset(args.out, instances, args.seed)
    print(f"wrote {len(instances)} instances to {args.out}")
    return EXIT_OK


def _load_or_generate(path, n, K, p_edge, count, seed):
    from gpinet.graphs import SyntheticSpec, generate_instances, load_dataset

    if path:
        return load_dataset(path)
    return generate_instances(SyntheticSpec(n=n, K=K, p_edge=p_edge, count=count, seed=seed))


def cmd_train(args):
    from gpinet.gpi import save_checkpoint
    from gpinet.synthbench.baselines import build_matched_models
    from gpinet.synthbench.sweep import eval_seed, train_seed
    from gpinet.synthbench.training import Arrays, train

    cfg = _train_config(args, seed=args.seed, model=args.model, sizes=(args.size,))
    dtype = np.dtype(cfg.dtype).type
    train_set = _load_or_generate(args.train_data, cfg.n, cfg.K, cfg.p_edge, args.size,
                                  train_seed(args.seed))
    eval_set = _load_or_generate(args.eval_data, cfg.n, cfg.K, cfg.p_edge, cfg.eval_size,
                                 eval_seed(args.seed))
    n, K = train_set[0].n, train_set[0].d
    if (n, K) != (cfg.n, cfg.K):
        cfg = replace(cfg, n=n, K=K)
    kinds = ("gpi",) if args.model == "gpi" else ("gpi", args.model)
    models, _ = build_matched_models(kinds, n, K, 1, cfg.width, cfg.rho_sees_s_i,
                                     seed=args.seed, dtype=dtype)
    model = models[args.model]
    result = train(model, Arrays.from_graphs(train_set, dtype), cfg,
                   Arrays.from_graphs(eval_set, dtype))
    print(f"model={args.model} size={result.size} params={result.params} "
          f"epochs={result.epochs_run} train_acc={result.train_acc:.6f} "
          f"eval_acc={result.eval_acc:.6f}")
    if args.checkpoint:
        save_checkpoint(args.checkpoint, model, extra={"train_config": cfg.to_dict()})
    if args.out:
        payload = {"config": cfg.to_dict(), "model": args.model, "size": result.size,
                   "params": result.params, "epochs_run": result.epochs_run,
                   "train_acc": result.train_acc, "eval_acc": result.eval_acc,
                   "trace": result.trace}
        atomic_write_text(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_eval(args):
    from gpinet.gpi import load_checkpoint
    from gpinet.graphs import Permutation, apply_permutation, permute_labels
    from gpinet.synthbench.training import Arrays, accuracy

    model = load_checkpoint(args.checkpoint)
    data = _load_or_generate(args.data, args.n, args.K, args.p_edge, args.count, args.seed)
    dtype = model.parameters()[0].dtype.type
    metrics = {"instances": len(data), "accuracy": accuracy(model, Arrays.from_graphs(data, dtype))}
    line = f"accuracy={metrics['accuracy']:.6f}"
    if args.permute_seed is not None:
        rng = np.random.default_rng(args.permute_seed)
        moved = []
        for g in data:
            sigma = Permutation.random(g.n, rng)
            moved.append(apply_permutation(g, sigma).with_labels(permute_labels(g.labels, sigma)))
        metrics["permuted_accuracy"] = accuracy(model, Arrays.from_graphs(moved, dtype))
        line += f" permuted_accuracy={metrics['permuted_accuracy']:.6f}"
    print(line)
    if args.out:
        atomic_write_text(args.out, json.dumps(metrics, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_sweep(args):
    from gpinet.synthbench.sweep import summarize, sweep, threshold_size, write_outputs

    if args.jobs < 1:
        raise UsageError("--jobs must be at least 1")
    cfg = _train_config(args, sizes=tuple(args.sizes))
    results = sweep(cfg, args.models, args.sizes, args.seeds, jobs=args.jobs)
    write_outputs(args.out, results, cfg, args.models, args.sizes, args.seeds,
                  timing=args.timing == "wall")
    summary = summarize(results)
    for kind, curve in summary.items():
        points = " ".join(f"{s}:{a:.4f}" for s, a in curve.items())
        print(f"{kind} mean_eval_acc {points} reaches_0.9_at={threshold_size(curve)}")
    failed = sum(r.status != "ok" for r in results)
    print(f"wrote {len(results)} rows to {args.out} ({failed} failed)")
    return EXIT_OK


def cmd_verify_invariance(args):
    from gpinet import verify

    aggregation = None if args.aggregation == "mixed" else args.aggregation
    if args.mode == "complete":
        report = verify.invariance_suite(args.trials, args.n, args.seed, aggregation, args.tol)
    elif args.mode == "automorphism":
        if args.n > 8:
            raise UsageError("automorphism mode enumerates permutations; use --n <= 8")
        report = verify.automorphism_suite(args.trials, args.n, args.seed, args.tol)
    else:
        report = verify.recurrent_invariance_suite(args.trials, args.n, args.steps, args.seed,
                                                   args.tol)
    print(report.line())
    print(f"max_deviation={report.max_dev:.3e}")
    return EXIT_OK if report.ok else EXIT_VIOLATION


def cmd_verify_construction(args):
    from gpinet import construction as C

    if args.list_oracles:
        for name in C.ORACLES:
            print(name)
        return EXIT_OK
    if args.oracle not in C.ORACLES:
        raise UsageError(f"unknown oracle {args.oracle!r}; choose from {sorted(C.ORACLES)}")
    F0 = C.ORACLES[args.oracle]
    rng = np.random.default_rng(args.seed)
    try:
        C.check_oracle_invariance(F0, rng=rng)
    except OracleError as exc:
        print(f"oracle {args.oracle} rejected: {exc}", file=sys.stderr)
        print("cases=0 max_dev=nan status=fail")
        return EXIT_VIOLATION
    reports = []
    if args.exhaustive_n > 0:
        rep = C.verify_construction(F0, C.binary_graphs(args.exhaustive_n), tolerance=0.0,
                                    precheck=False)
        print(f"exhaustive binary n={args.exhaustive_n} (exact)")
        print(rep.table(args.rows))
        print(rep.summary_line())
        reports.append(rep)
    if args.random > 0:
        rep = C.verify_construction(F0, C.random_graphs(args.random, args.sizes, rng),
                                    tolerance=args.tol, precheck=False)
        print(f"random real n in {args.sizes} (tol {args.tol:g})")
        print(rep.table(args.rows))
        print(rep.summary_line())
        reports.append(rep)
    if not reports:
        raise UsageError("nothing to check: give --exhaustive-n or --random")
    ok = all(r.ok for r in reports)
    if len(reports) > 1:
        total = C.ConstructionReport(sum(r.cases for r in reports),
                                     max(r.max_dev for r in reports), 0.0, [])
        print(f"cases={total.cases} max_dev={total.max_dev:g} status={'ok' if ok else 'fail'}")
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_gradcheck(args):
    from gpinet import verify

    for mode in args.aggregation:
        if mode not in ("sum", "attention"):
            raise UsageError(f"unknown aggregation {mode!r}")
    oracle = np.longdouble if args.oracle_precision == "extended" else None
    report = verify.gradcheck_suite(args.graphs, args.n, args.seed, tuple(args.aggregation),
                                    args.h, args.tol, oracle_dtype=oracle)
    print(report.line())
    print(f"max_rel_error={report.max_dev:.3e}")
    return EXIT_OK if report.ok else EXIT_VIOLATION


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "verify-invariance": cmd_verify_invariance,
    "verify-construction": cmd_verify_construction,
    "gradcheck": cmd_gradcheck,
}


def run(argv=None):
    """Run one command; returns the process exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except UsageError as exc:
        print(f"gpinet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    _print_config(args)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gpinet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ContractError, ShapeError) as exc:
        print(f"gpinet: invalid arguments: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, GpiError) as exc:
        print(f"gpinet: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE if isinstance(exc, OSError) else EXIT_VIOLATION


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
