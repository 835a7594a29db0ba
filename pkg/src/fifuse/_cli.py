"""
Command-line interface for fifuse.

Subcommands: ``generate`` (synthetic dataset), ``explain`` (train one model
and write one importance vector), ``fuse`` (fuse an importance matrix),
``experiment`` (run the factor grid) and ``report`` (tabulate records).
Data goes to files or standard output; logs and progress go to standard
error.
"""

from typing import List, Optional
import argparse
import json
import logging
import sys

from ._config import FifuseConfig, get_effective_config
from ._explainers import AttributionMethod, build_background, explain
from ._fusion import FusionStrategy, fuse, read_matrix_csv, vectors_to_frame, write_vectors_csv
from ._harness import (
    FACTORS,
    METRICS,
    SPLITS,
    ExperimentConfig,
    aggregate_table,
    export_report,
    load_records_csv,
    run_experiment,
    summarize_methods,
)
from ._models import PROFILE_CHOICES, ModelKind, default_hyperparams, resolve_profile, score_fit, train
from ._progress import progress_context
from ._synthdata import DataConfig, generate_dataset, load_dataset, save_dataset, split
from ._utils import FifuseError, derive_seed, write_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2

EXPLAIN_METHODS = ("pi", "shap", "shap-exact", "ig")


class _Parser(argparse.ArgumentParser):
    """Argument parser that exits with status 1 on usage errors."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _configure_logging(verbose: bool, config: FifuseConfig) -> None:
    level = logging.DEBUG if verbose else getattr(logging, config.runtime.log_level.upper(), logging.INFO)
    logging.basicConfig(
        stream=sys.stderr,
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


def _seed(args: argparse.Namespace, config: FifuseConfig) -> int:
    return args.seed if args.seed is not None else config.runtime.seed


def _cmd_generate(args: argparse.Namespace, config: FifuseConfig) -> int:
    data_config = DataConfig(
        n_samples=args.n_samples,
        n_features=args.n_features,
        informative_pct=args.informative_pct,
        noise_std=args.noise_std,
        seed=_seed(args, config),
        train_fraction=args.train_fraction,
    )
    csv_path, sidecar = save_dataset(generate_dataset(data_config), args.out)
    print(f"Wrote {csv_path} and {sidecar}", file=sys.stderr)
    return EXIT_OK


def _cmd_explain(args: argparse.Namespace, config: FifuseConfig) -> int:
    seed = _seed(args, config)
    dataset = load_dataset(args.data)
    train_view, test_view = split(dataset)
    view = train_view if args.split == "train" else test_view

    kind = ModelKind(args.model)
    model = train(kind, train_view.X, train_view.y, default_hyperparams(kind, args.profile),
                  seed=derive_seed(seed, kind.value))
    logger.info(f"{kind.label} fit: train R2={score_fit(model, train_view.X, train_view.y):.4f}")

    method = AttributionMethod.SHAP if args.method == "shap-exact" else AttributionMethod(args.method)
    background = None
    if method is AttributionMethod.SHAP:
        background = build_background(train_view.X, config.explainers, seed=derive_seed(seed, "background"))
    vector = explain(
        model, method, view.X, view.y, background, config.explainers,
        seed=derive_seed(seed, kind.value, view.name), split=view.name,
        force_exact=args.method == "shap-exact",
    )

    if args.out:
        write_vectors_csv([vector], args.out, append=args.append)
    else:
        vectors_to_frame([vector]).to_csv(sys.stdout, index=False, float_format="%.17g")
    return EXIT_OK


def _cmd_fuse(args: argparse.Namespace, config: FifuseConfig) -> int:
    matrix = read_matrix_csv(args.matrix)
    alpha = args.alpha if args.alpha is not None else config.fusion.alpha
    bin_width = args.bin_width if args.bin_width is not None else config.fusion.bin_width
    result = fuse(matrix, args.strategy, alpha=alpha, bin_width=bin_width)

    payload = result.to_dict()
    payload["sources"] = [str(label) for label in matrix.labels]
    if args.out:
        write_json(args.out, payload)
    else:
        json.dump(payload, sys.stdout, indent=2)
        sys.stdout.write("\n")
    return EXIT_OK


def _cmd_experiment(args: argparse.Namespace, config: FifuseConfig) -> int:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    if args.profile:
        cfg.scale_profile = resolve_profile(args.profile)
    if args.jobs is not None:
        cfg.jobs = args.jobs
    elif args.config is None:
        cfg.jobs = config.runtime.jobs
    if args.seed is not None:
        cfg.seed_base = args.seed

    with progress_context(enabled=not args.quiet) as progress:
        report = run_experiment(cfg, fusion=config.fusion, explainer_config=config.explainers, progress=progress)
    written = export_report(report, args.out, format=args.format)

    summary = summarize_methods(report, split="test", metric="mae")
    if summary.relative_improvement is not None:
        logger.info(
            f"Best fusion strategy {summary.best_mme} vs best single method {summary.best_sme}: "
            f"{100 * summary.relative_improvement:+.1f}% test MAE improvement"
        )
    print(f"Wrote {len(written)} files to {args.out}", file=sys.stderr)
    return EXIT_OK


def _cmd_report(args: argparse.Namespace, config: FifuseConfig) -> int:
    table = aggregate_table(load_records_csv(args.records), args.factor, args.metric, args.split)
    if args.out:
        table.to_csv(args.out)
    else:
        table.to_csv(sys.stdout)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="Log debug messages")

    parser = _Parser(prog="fifuse", description="Fuse feature importance across models and attribution methods.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", parents=[common], help="Generate a synthetic regression dataset")
    gen.add_argument("--n-samples", type=int, default=500)
    gen.add_argument("--n-features", type=int, default=20)
    gen.add_argument("--informative-pct", type=float, default=100.0)
    gen.add_argument("--noise-std", type=float, default=0.0)
    gen.add_argument("--train-fraction", type=float, default=0.8)
    gen.add_argument("--seed", type=int, default=None)
    gen.add_argument("--out", required=True, help="Dataset CSV; a .json sidecar is written next to it")
    gen.set_defaults(handler=_cmd_generate)

    exp = sub.add_parser("explain", parents=[common], help="Train one model and compute one importance vector")
    exp.add_argument("--data", required=True, help="Dataset CSV written by 'generate'")
    exp.add_argument("--model", choices=[k.value for k in ModelKind], required=True)
    exp.add_argument("--method", choices=EXPLAIN_METHODS, required=True)
    exp.add_argument("--split", choices=SPLITS, default="train")
    exp.add_argument("--profile", choices=PROFILE_CHOICES, default="desk")
    exp.add_argument("--seed", type=int, default=None)
    exp.add_argument("--out", help="Importance CSV (standard output if omitted)")
    exp.add_argument("--append", action="store_true", help="Append to an existing importance CSV")
    exp.set_defaults(handler=_cmd_explain)

    fus = sub.add_parser("fuse", parents=[common], help="Fuse an importance matrix")
    fus.add_argument("--matrix", required=True, help="Importance CSV, one row per source")
    fus.add_argument("--strategy", choices=[s.value for s in FusionStrategy], default="mean")
    fus.add_argument("--alpha", type=float, default=None)
    fus.add_argument("--bin-width", type=float, default=None)
    fus.add_argument("--out", help="Result JSON (standard output if omitted)")
    fus.set_defaults(handler=_cmd_fuse)

    run = sub.add_parser("experiment", parents=[common], help="Run the experiment grid")
    run.add_argument("--config", help="Experiment config JSON")
    run.add_argument("--profile", choices=PROFILE_CHOICES, default=None)
    run.add_argument("--jobs", type=int, default=None)
    run.add_argument("--seed", type=int, default=None, help="Overrides seed_base")
    run.add_argument("--format", choices=("csv", "json"), default="csv")
    run.add_argument("--quiet", action="store_true", help="Hide the progress bar")
    run.add_argument("--out", required=True, help="Output directory")
    run.set_defaults(handler=_cmd_experiment)

    rep = sub.add_parser("report", parents=[common], help="Tabulate run records by factor level")
    rep.add_argument("--records", required=True, help="records.csv written by 'experiment'")
    rep.add_argument("--factor", choices=list(FACTORS), required=True)
    rep.add_argument("--metric", choices=METRICS, default="mae")
    rep.add_argument("--split", choices=SPLITS, default="test")
    rep.add_argument("--out", help="Table CSV (standard output if omitted)")
    rep.set_defaults(handler=_cmd_report)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_USAGE

    config = get_effective_config()
    _configure_logging(args.verbose, config)

    try:
        return args.handler(args, config)
    except FifuseError as e:
        logger.debug(f"{type(e).__name__}: {e.message}")
        print(f"Error: {e.user_message}", file=sys.stderr)
        return EXIT_FAILURE
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
