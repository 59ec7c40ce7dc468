"""Command line entry points.

    fedhet generate --config cfg.toml --out DIR
    fedhet run      --config cfg.toml --out DIR [--jobs N]
    fedhet report   --in DIR --format md|csv

Exit codes: 0 success, 1 config error, 2 run finished with failed cells,
3 total failure. FEDHET_SEED overrides the config seed.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import experiment, synthdata
from .experiment import ExperimentConfigError
from .fedcore import derive_seed


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedhet")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate and archive a synthetic cohort")
    gen.add_argument("--config", required=True)
    gen.add_argument("--out", required=True)

    run = sub.add_parser("run", help="run the full experiment pipeline")
    run.add_argument("--config", required=True)
    run.add_argument("--out", required=True)
    run.add_argument("--jobs", type=int, default=1)

    rep = sub.add_parser("report", help="re-render tables from a results directory")
    rep.add_argument("--in", dest="in_dir", required=True)
    rep.add_argument("--format", choices=("md", "csv"), default="md")
    return parser


def _cmd_generate(args) -> int:
    cfg = experiment.parse_config(args.config)
    cohort = synthdata.generate_cohort(cfg.generator, cfg.seed)
    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "cohort.fhsim")
    synthdata.save_cohort(cohort, path)
    dev, test = synthdata.stratified_split(
        cohort, (cfg.dev_fraction, 1.0 - cfg.dev_fraction), derive_seed(cfg.seed, 0x1)
    )
    print(f"wrote {path}: {len(cohort)} patients ({len(dev)} dev / {len(test)} test)")
    return 0


def _cmd_run(args) -> int:
    cfg = experiment.parse_config(args.config)
    result = experiment.run_experiment(cfg, jobs=max(1, args.jobs))
    files = experiment.emit_report(result, args.out)
    for path in files:
        print(f"wrote {path}")
    if result.failures:
        print(f"{len(result.failures)} cell(s) failed; see report.md", file=sys.stderr)
        return 2
    return 0


def _cmd_report(args) -> int:
    csv_path = os.path.join(args.in_dir, "results.csv")
    if not os.path.exists(csv_path):
        raise ExperimentConfigError(f"no results.csv under {args.in_dir}")
    rows = experiment.read_results_csv(csv_path)
    if args.format == "csv":
        with open(csv_path) as fh:
            sys.stdout.write(fh.read())
        return 0
    folds = 1 + max(r["fold"] for r in rows if r["fold"] != "CV")
    sys.stdout.write(experiment.render_tables(rows, folds))
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    handlers = {"generate": _cmd_generate, "run": _cmd_run, "report": _cmd_report}
    try:
        return handlers[args.command](args)
    except (ExperimentConfigError, synthdata.ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
