"""Command-line front door.

Subcommands map one-to-one onto experiment kinds::

    stiefelnet synth-theorem --out runs/theorem --seed 0,1,2
    stiefelnet synth-sweep   --out runs/sweep
    stiefelnet mnist         --mnist-images train-images --mnist-labels train-labels
    stiefelnet certify lemma1|lemma2|geometry --out runs/cert
    stiefelnet report        --out runs/theorem

A JSON config file (``--config``) supplies defaults; explicit flags override
it. Exit codes: 0 success, 1 experiment failure, 2 bad configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .experiments import (
    CERTIFY_GEOMETRY,
    CERTIFY_LEMMA1,
    CERTIFY_LEMMA2,
    MNIST,
    SYNTH_SWEEP,
    SYNTH_THEOREM,
    ConfigError,
    ExperimentConfig,
    run_experiment,
)
from .report import ReportError, build_report

EXIT_OK = 0
EXIT_EXPERIMENT = 1
EXIT_CONFIG = 2

_CERT_KINDS = {"lemma1": CERTIFY_LEMMA1, "lemma2": CERTIFY_LEMMA2, "geometry": CERTIFY_GEOMETRY}


def _int_list(text: str):
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _add_common(parser):
    parser.add_argument("--config", type=Path, help="JSON config file with defaults")
    parser.add_argument("--seed", type=_int_list, help="comma-separated seed list")
    parser.add_argument("--out", type=Path, help="output directory for traces and reports")
    parser.add_argument("--workers", type=int, help="parallel worker count")
    parser.add_argument("--format", choices=("csv", "jsonl"), help="trace file format")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stiefelnet",
        description="train orthonormality-constrained deep linear networks and "
        "certify their convergence behavior",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(SYNTH_THEOREM, help="basin-calibrated contraction runs")
    _add_common(p)
    p.add_argument("--depth", type=int)
    p.add_argument("--kappa", type=float)
    p.add_argument("--mu", type=float)
    p.add_argument("--max-iters", type=int)

    p = sub.add_parser(SYNTH_SWEEP, help="iterations-to-target across depths")
    _add_common(p)
    p.add_argument("--depths", type=_int_list, help="comma-separated depth list")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--kappa", type=float)

    p = sub.add_parser(MNIST, help="grid-searched constrained vs unconstrained training")
    _add_common(p)
    p.add_argument("--mnist-images", type=Path, help="IDX image file")
    p.add_argument("--mnist-labels", type=Path, help="IDX label file")
    p.add_argument("--synthetic", action="store_true", help="use generated classification data")
    p.add_argument("--subset", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--depths", type=_int_list, dest="mnist_depths")
    p.add_argument("--zca", action="store_true", help="ZCA-whiten inputs first")

    p = sub.add_parser("certify", help="run a certification sampling suite")
    p.add_argument("suite", choices=sorted(_CERT_KINDS))
    _add_common(p)
    p.add_argument("--samples", type=int, help="sample count override")

    p = sub.add_parser("report", help="rebuild reports and figures from persisted traces")
    p.add_argument("--out", type=Path, required=True, help="experiment output directory")

    return parser


def _config_from_args(args, kind: str) -> ExperimentConfig:
    data = {}
    if args.config is not None:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    data["kind"] = kind
    overrides = {
        "seeds": getattr(args, "seed", None),
        "out_dir": str(args.out) if getattr(args, "out", None) else None,
        "workers": getattr(args, "workers", None),
        "fmt": getattr(args, "format", None),
        "depth": getattr(args, "depth", None),
        "kappa": getattr(args, "kappa", None),
        "mu": getattr(args, "mu", None),
        "max_iters": getattr(args, "max_iters", None),
        "depths": getattr(args, "depths", None),
        "epsilon": getattr(args, "epsilon", None),
        "subset": getattr(args, "subset", None),
        "mnist_depths": getattr(args, "mnist_depths", None),
        "sample_count": getattr(args, "samples", None),
    }
    if getattr(args, "mnist_images", None):
        overrides["mnist_images"] = str(args.mnist_images)
    if getattr(args, "mnist_labels", None):
        overrides["mnist_labels"] = str(args.mnist_labels)
    if getattr(args, "synthetic", False):
        overrides["data_source"] = "synthetic"
    if getattr(args, "zca", False):
        overrides["zca"] = True
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    return ExperimentConfig.from_dict(data)


def _print_summary(result: dict) -> None:
    print(json.dumps(result.get("summary", {}), indent=2, sort_keys=True, default=str))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.command == "report":
        try:
            report = build_report(args.out)
        except ReportError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(json.dumps(report["summary"], indent=2, sort_keys=True, default=str))
        for fig in report.get("figures", []):
            print(f"figure: {fig}")
        return EXIT_OK

    kind = _CERT_KINDS[args.suite] if args.command == "certify" else args.command
    try:
        cfg = _config_from_args(args, kind)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # experiment-level failure
        print(f"experiment error: {exc}", file=sys.stderr)
        return EXIT_EXPERIMENT

    _print_summary(result)
    summary = result.get("summary", {})
    if "all_ok" in summary and not summary["all_ok"]:
        return EXIT_EXPERIMENT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
