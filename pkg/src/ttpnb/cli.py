"""Command line entry point: ``ttpnb {run,sweep,baseline,partition,coordinator,party}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 protocol error.
"""

from __future__ import annotations

import argparse
import asyncio
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import errors
from .dataset import SplitPlan, load_csv, load_fragment, partition_vertical, write_fragment
from .harness import ExperimentConfig, run_experiment, sweep_noise, sweep_to_dict
from .model import canonical_json
from .perturb import Absolute, RatioOfSampleVariance
from .protocol import ERROR_CLASSES, CoordinatorConfig, PartyPhase, new_coordinator, new_party
from .session import run_party, serve_coordinator
from .transport import parse_address

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_PROTOCOL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_experiment_args(p: argparse.ArgumentParser, dataset_required: bool = True) -> None:
    p.add_argument("--config", help="JSON config file; flags given explicitly override it")
    p.add_argument("--dataset", help="CSV file with a header row")
    p.add_argument("--label", default=None, help="label column name or zero-based index (default: last)")
    p.add_argument("--sites", type=int, default=None, help="number of vertical fragments (default 3)")
    p.add_argument("--seed", type=int, default=None, help="seed for splits and noise (default 42)")
    p.add_argument("--repeats", type=int, default=None, help="number of repetitions (default 10)")
    p.add_argument("--train-fraction", type=float, default=None, help="holdout train share (default 0.5)")
    p.add_argument("--cv", type=int, default=None, metavar="FOLDS",
                   help="use repeated FOLDS-fold cross-validation instead of holdout")
    noise = p.add_mutually_exclusive_group()
    noise.add_argument("--noise-ratio", type=float, default=None,
                       help="noise variance as a fraction of each attribute's sample variance (default 0.25)")
    noise.add_argument("--noise-variance", type=float, default=None, help="absolute noise variance for every attribute")
    p.add_argument("--noise-family", choices=["gaussian", "uniform"], default=None)
    p.add_argument("--transport", choices=["inprocess", "tcp"], default=None)
    p.add_argument("--envelope", choices=["rsa", "null"], default=None,
                   help="envelope scheme; 'null' is unencrypted and for testing only")
    p.add_argument("--mode", choices=["stats", "records"], default=None,
                   help="sites send statistics (default) or perturbed records")
    p.add_argument("--perturb-test", action="store_true", default=None, help="also perturb test instances")
    p.add_argument("--workers", type=int, default=None, help="repeats to run in parallel")
    p.add_argument("--no-timing", action="store_true", help="omit wall-clock timings (byte-reproducible output)")
    p.add_argument("--out", default=None, help="write the JSON report here instead of stdout")


def _config_from_args(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    elif args.dataset:
        cfg = ExperimentConfig(dataset_path=args.dataset)
    else:
        raise UsageError("either --dataset or --config is required")
    updates = {}
    if args.dataset:
        updates["dataset_path"] = args.dataset
    if args.label is not None:
        updates["label_column"] = int(args.label) if args.label.lstrip("-").isdigit() else args.label
    if args.sites is not None:
        updates["num_sites"] = args.sites
    plan = cfg.split_plan
    if args.seed is not None:
        plan = replace(plan, seed=args.seed)
        updates["noise_seed"] = args.seed
    if args.repeats is not None:
        plan = replace(plan, repeats=args.repeats)
    if args.train_fraction is not None:
        plan = replace(plan, train_fraction=args.train_fraction)
    if args.cv is not None:
        plan = replace(plan, scheme="kfold", folds=args.cv)
    updates["split_plan"] = plan
    if args.noise_ratio is not None:
        updates["noise_mode"] = RatioOfSampleVariance(args.noise_ratio)
    if args.noise_variance is not None:
        updates["noise_mode"] = Absolute(args.noise_variance)
    for flag, name in [("noise_family", "noise_family"), ("transport", "transport"), ("envelope", "scheme"),
                       ("mode", "session_mode"), ("perturb_test", "perturb_test"), ("workers", "workers"),
                       ("out", "output_path")]:
        if getattr(args, flag) is not None:
            updates[name] = getattr(args, flag)
    if args.no_timing:
        updates["record_timing"] = False
    return replace(cfg, **updates)


def _emit(doc: dict, out: str | None, table: str | None = None) -> None:
    text = canonical_json(doc)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
        if table:
            print(table)
    else:
        print(text)
        if table:
            print(table, file=sys.stderr)


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    report = run_experiment(cfg)
    _emit(report.to_dict(), cfg.output_path, report.table())
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg = _config_from_args(args)
    report = run_experiment(cfg, baseline_only=True)
    _emit(report.to_dict(), cfg.output_path, report.table())
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    try:
        ratios = [float(r) for r in args.ratios.split(",") if r.strip()]
    except ValueError:
        raise UsageError(f"--ratios must be comma-separated numbers, got {args.ratios!r}") from None
    reports = sweep_noise(cfg, ratios)
    lines = [f"{'ratio':>6}  {'perturbed':>9}  {'baseline':>9}"]
    for ratio, r in zip(ratios, reports):
        lines.append(f"{ratio:>6g}  {r.mean_perturbed:>9.4f}  {r.mean_baseline:>9.4f}")
    _emit(sweep_to_dict(reports), cfg.output_path, "\n".join(lines))
    return EXIT_OK


def cmd_partition(args) -> int:
    table = load_csv(args.dataset, args.label)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for frag in partition_vertical(table, args.sites):
        path = out_dir / f"{table.name}.site{frag.site_id}.csv"
        write_fragment(frag, path)
        paths.append({"site_id": frag.site_id, "path": str(path), "attributes": list(frag.attribute_names)})
    print(canonical_json({"fragments": paths}))
    return EXIT_OK


def _noise_mode(args):
    if args.noise_variance is not None:
        return Absolute(args.noise_variance)
    return RatioOfSampleVariance(0.25 if args.noise_ratio is None else args.noise_ratio)


def cmd_coordinator(args) -> int:
    host, port = parse_address(args.listen)
    plan = SplitPlan(seed=args.seed, train_fraction=args.train_fraction, repeats=args.repeats)
    config = CoordinatorConfig(
        session_id=args.session_id,
        min_sites=args.sites,
        split_plan=plan,
        split_index=args.split_index,
        noise_mode=_noise_mode(args),
        noise_family=args.noise_family,
        noise_seed=args.seed + args.split_index,
        mode=args.mode,
    )
    state = new_coordinator(config, args.envelope)
    result = asyncio.run(serve_coordinator(state, host, port, args.timeout))
    final = result.coordinator
    if final.model is None:
        kind, reason = final.error or ("protocol_violation", "session ended without a model")
        raise ERROR_CLASSES.get(kind, errors.SessionAborted)(reason)
    _emit(final.model.to_dict(), args.out)
    return EXIT_OK


def cmd_party(args) -> int:
    host, port = parse_address(args.connect)
    fragment = load_fragment(args.fragment, args.site_id)
    state = new_party(args.site_id, fragment, args.envelope)
    final = asyncio.run(run_party(state, host, port, args.timeout))
    if final.phase != PartyPhase.HAS_MODEL:
        kind, reason = final.error or ("protocol_violation", "session ended without a model")
        raise ERROR_CLASSES.get(kind, errors.SessionAborted)(reason)
    _emit(final.model.to_dict(), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ttpnb", description="Gaussian Naive Bayes over vertically partitioned, noise-perturbed data.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="full experiment: federated perturbed model vs. plaintext baseline")
    _add_experiment_args(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="repeat the experiment over several noise ratios")
    _add_experiment_args(p)
    p.add_argument("--ratios", default="0,0.1,0.25,0.5,1.0", help="comma-separated noise ratios")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("baseline", help="centralized plaintext model only")
    _add_experiment_args(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("partition", help="write one fragment CSV per site")
    p.add_argument("--dataset", required=True)
    p.add_argument("--label", default="-1")
    p.add_argument("--sites", type=int, default=3)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_partition)

    role_common = argparse.ArgumentParser(add_help=False)
    role_common.add_argument("--envelope", choices=["rsa", "null"], default="rsa")
    role_common.add_argument("--timeout", type=float, default=30.0, help="per-phase deadline in seconds")
    role_common.add_argument("--out", default=None, help="write the model JSON here instead of stdout")

    p = sub.add_parser("coordinator", parents=[role_common], help="trusted third party over TCP")
    p.add_argument("--listen", required=True, metavar="HOST:PORT")
    p.add_argument("--sites", type=int, default=3, help="parties required before the session starts")
    p.add_argument("--session-id", default="session-0")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--train-fraction", type=float, default=0.5)
    p.add_argument("--split-index", type=int, default=0)
    noise = p.add_mutually_exclusive_group()
    noise.add_argument("--noise-ratio", type=float, default=None)
    noise.add_argument("--noise-variance", type=float, default=None)
    p.add_argument("--noise-family", choices=["gaussian", "uniform"], default="gaussian")
    p.add_argument("--mode", choices=["stats", "records"], default="stats")
    p.set_defaults(func=cmd_coordinator)

    p = sub.add_parser("party", parents=[role_common], help="data-holding site over TCP")
    p.add_argument("--connect", required=True, metavar="HOST:PORT")
    p.add_argument("--fragment", required=True, help="fragment CSV written by 'partition'")
    p.add_argument("--site-id", type=int, required=True)
    p.set_defaults(func=cmd_party)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ValueError) as exc:
        print(f"ttpnb: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except errors.DataError as exc:
        print(f"ttpnb: data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (errors.ProtocolError, errors.EnvelopeError, errors.TransportError) as exc:
        print(f"ttpnb: protocol error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except OSError as exc:
        print(f"ttpnb: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
