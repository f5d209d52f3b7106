"""Command line entry point: ``bcdeval {generate,evaluate,correlate,entropy}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..approx_models import ModelSpec
from ..errors import BcdEvalError
from ..metrics import METRIC_NAMES
from .experiment import (
    DEFAULT_POPULATION,
    ExperimentConfig,
    config_from_manifest,
    correlate_metrics,
    entropy_curve,
    export_datasets,
    read_rows_csv,
    run_sweep,
    write_correlation_csv,
    write_entropy_csv,
)


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def parse_models(text: str) -> tuple[ModelSpec, ...]:
    """``tempered:4,edge_noise:0.1,topk:1,bootstrap:50``; a bare kind uses parameter 1."""
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        kind, _, param = item.partition(":")
        out.append(ModelSpec(kind.strip(), float(param) if param else 1.0))
    return tuple(out)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON manifest whose config is used as the base")
    p.add_argument("--d", type=int, default=5)
    p.add_argument("--graph", choices=["er", "sf"], default="er")
    p.add_argument("--edges-per-node", type=int, default=1)
    p.add_argument("--scenario", choices=["identifiable", "non_identifiable"], default="identifiable")
    p.add_argument("--n-list", type=_int_list, default=[5, 10, 100, 1000])
    p.add_argument("--dataset-seeds", type=int, default=20)
    p.add_argument("--model-seeds", type=int, default=3)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--heldout", type=int, default=100)
    p.add_argument("--posterior-samples", type=int, default=1000)
    p.add_argument("--intervention-values", type=_float_list, default=[2.0])
    p.add_argument("--models", type=parse_models, default=DEFAULT_POPULATION)
    p.add_argument("--metrics", type=lambda s: [m.strip() for m in s.split(",") if m.strip()],
                   default=list(METRIC_NAMES))
    p.add_argument("--no-exact", action="store_true", help="do not evaluate the exact posterior itself")
    p.add_argument("--out", required=True)


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        base = config_from_manifest(args.config)
        return ExperimentConfig.from_dict({**base.to_dict(), "out": args.out})
    return ExperimentConfig(d=args.d, graph_family=args.graph, edges_per_node=args.edges_per_node,
                            scenario=args.scenario, sample_sizes=tuple(args.n_list),
                            dataset_seeds=args.dataset_seeds, model_seeds=args.model_seeds,
                            normalize=args.normalize, heldout=args.heldout,
                            posterior_samples=args.posterior_samples,
                            intervention_values=tuple(args.intervention_values), models=tuple(args.models),
                            metrics=tuple(args.metrics), include_exact=not args.no_exact, out=args.out)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcdeval", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write ground-truth SCMs and datasets as JSON")
    _add_config_flags(gen)

    ev = sub.add_parser("evaluate", help="run the metric sweep")
    _add_config_flags(ev)
    ev.add_argument("--format", choices=["csv", "json"], default="csv")
    ev.add_argument("--resume", action="store_true", help="reuse finished per-dataset fragments")
    ev.add_argument("--workers", type=int, default=None, help="overrides BCDEVAL_WORKERS")

    cor = sub.add_parser("correlate", help="Spearman matrix from results CSV files")
    cor.add_argument("results", nargs="+")
    cor.add_argument("--mode", choices=["concat", "per_cell", "both"], default="concat")
    cor.add_argument("--n", type=int, default=None, help="restrict to one sample size")
    cor.add_argument("--include-exact", action="store_true")
    cor.add_argument("--out", required=True)

    ent = sub.add_parser("entropy", help="exact-posterior entropy versus N")
    _add_config_flags(ent)
    ent.add_argument("--neighbors", type=int, default=3)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "correlate":
            rows = [r for path in args.results for r in read_rows_csv(path)]
            if args.n is not None:
                rows = [r for r in rows if r.N == args.n]
            modes = ["concat", "per_cell"] if args.mode == "both" else [args.mode]
            out = Path(args.out)
            for mode in modes:
                matrix = correlate_metrics(rows, mode=mode, include_exact=args.include_exact)
                target = out if len(modes) == 1 else out.with_name(f"{out.stem}_{mode}{out.suffix}")
                write_correlation_csv(matrix, target)
                print(target)
            return 0
        config = config_from_args(args)
        if args.command == "generate":
            print(export_datasets(config, Path(args.out) / "datasets.json"))
        elif args.command == "evaluate":
            from .experiment import emit_report
            rows, errors = run_sweep(config, workers=args.workers, resume=args.resume)
            if args.format == "json":
                emit_report(config, rows, errors, args.out, fmt="json")
            print(f"{len(rows)} rows, {len(errors)} errors -> {args.out}")
        else:
            from ..entropy import KlEntropySpec
            points = entropy_curve(config, KlEntropySpec(args.neighbors))
            print(write_entropy_csv(points, Path(args.out) / "entropy.csv"))
    except (BcdEvalError, ValueError, OSError) as exc:
        print(f"bcdeval: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
