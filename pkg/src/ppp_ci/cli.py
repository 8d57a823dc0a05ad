#!/usr/bin/env python3
"""
Command-line entry point for ppp-ci experiment runs.

Usage:
    ppp-ci check-ci --measure M2 --query "1 _|_ 2 | 3" --depth 6
    ppp-ci simulate --measure POISSON3 --depth 6 --replicates 100000 --seed 7 --out runs/p3
    ppp-ci verify --suite equivalence --out runs/eq
    ppp-ci --config experiment.json check-ci
    ppp-ci schema
    ppp-ci measures

Exit codes: 0 holds/pass, 1 fails, 2 assumption violation, 64 config error.
"""

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path
from typing import Any, Optional

import numpy as np
from pydantic import ValidationError

from ppp_ci import __version__
from ppp_ci.catalog import BUILTIN_MEASURES, resolve_measure
from ppp_ci.ci_core import equivalence_crosscheck
from ppp_ci.config import DEFAULT_CONFIG_FILE, ExperimentConfig, Settings, get_settings, load_experiment_config
from ppp_ci.measure_spec import measure_spec_schema
from ppp_ci.models import (
    AssumptionViolationError,
    ConfigError,
    InfiniteWindowError,
    PppCiError,
    TestRectangle,
    TruncationError,
    UndecidableMassError,
    UnsupportedCaseError,
)
from ppp_ci.ppp_sim import RandomSource, sample_depth, simulate_window_counts, write_pattern_dump
from ppp_ci.stat_tests import count_moments, write_count_csv
from ppp_ci.suites import SuiteContext, run_suite, write_suite_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_ASSUMPTION = 2
EXIT_CONFIG = 64

COMMANDS = {"check-ci": "check_ci", "simulate": "simulate", "verify": "verify"}


def build_id() -> str:
    return f"ppp-ci {__version__} numpy {np.__version__}"


def config_digest(config: ExperimentConfig) -> str:
    canonical = json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_manifest(config: ExperimentConfig, out_dir: Path, seed: int, outputs: list[str]) -> Path:
    """Write manifest.json; its content is a function of the config alone."""
    manifest = {
        "config_digest": config_digest(config),
        "seed": seed,
        "build_id": build_id(),
        "command": config.command,
        "config": config.model_dump(mode="json"),
        "outputs": sorted(outputs),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _out_dir(config: ExperimentConfig, settings: Settings) -> Path:
    out_dir = Path(config.out or Path(settings.output_dir) / config.command).expanduser()
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


# =============================================================================
# Commands
# =============================================================================

def cmd_check_ci(config: ExperimentConfig, settings: Optional[Settings] = None) -> int:
    """Run the three characterizations and the cross-check; print and write the verdict report."""
    settings = settings or get_settings()
    try:
        measure, _ = resolve_measure(config.measure)
        config.check_labels(measure.labels)
        query = config.parsed_query()
    except PppCiError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    depth = config.depth if config.depth is not None else settings.default_depth
    if depth < 1:
        print("Error: check-ci needs depth >= 1", file=sys.stderr)
        return EXIT_CONFIG
    logger.info(f"check-ci {query} on {measure.provenance} at depth {depth}")
    started = time.perf_counter()
    try:
        report = equivalence_crosscheck(measure, query, depth)
    except (AssumptionViolationError, UnsupportedCaseError) as e:
        print(f"Assumption violation: {e}", file=sys.stderr)
        if isinstance(e, AssumptionViolationError) and e.report is not None:
            for pair in e.report.offending:
                print(f"  aggregate on A={pair.a} B={pair.b} is {pair.mass}", file=sys.stderr)
        return EXIT_ASSUMPTION
    wall_time_ms = (time.perf_counter() - started) * 1000

    holds = report.agree and report.holds
    witness = next((v.witness for v in report.verdicts if v.witness is not None), None)
    document: dict[str, Any] = {
        "query": str(query),
        "method": "crosscheck",
        "depth": depth,
        "holds": holds,
        "agree": report.agree,
        "witness": witness.model_dump(mode="json") if witness else None,
        "verdicts": [v.model_dump(mode="json") for v in report.verdicts],
        "wall_time_ms": round(wall_time_ms, 3),
    }

    print(f"{query}: {'HOLDS' if holds else 'FAILS'} up to depth H={depth}")
    for verdict in report.verdicts:
        line = f"  {verdict.method.value}: {'holds' if verdict.holds else 'fails'}"
        if verdict.witness is not None:
            line += f" ({verdict.witness.describe()})"
        print(line)
    if not report.agree:
        print("  characterizations disagree", file=sys.stderr)

    out_dir = _out_dir(config, settings)
    (out_dir / "verdict.json").write_text(json.dumps(document, indent=2) + "\n")
    seed = config.seed if config.seed is not None else settings.default_seed
    write_manifest(config, out_dir, seed, ["verdict.json"])
    logger.info(f"check-ci report written to {out_dir}")
    return EXIT_OK if holds else EXIT_FAIL


def _default_windows(labels: tuple[int, ...]) -> list[TestRectangle]:
    return [TestRectangle.reduced(1, v) for v in labels]


def cmd_simulate(config: ExperimentConfig, settings: Optional[Settings] = None) -> int:
    """Write pattern dumps, the count statistics CSV and the manifest; deterministic under the seed."""
    settings = settings or get_settings()
    try:
        measure, _ = resolve_measure(config.measure)
        config.check_labels(measure.labels)
    except PppCiError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    depth = config.depth if config.depth is not None else settings.default_depth
    replicates = config.replicates or settings.default_replicates
    seed = config.seed if config.seed is not None else settings.default_seed
    windows = config.windows or _default_windows(measure.labels)
    source = RandomSource(seed)
    out_dir = _out_dir(config, settings)
    logger.info(f"simulate {measure.provenance} depth={depth} replicates={replicates} seed={seed} -> {out_dir}")

    outputs = []
    for i in range(config.dumps):
        name = f"pattern_{i}.tsv"
        write_pattern_dump(sample_depth(measure, depth, source.substream("pattern", i)), str(out_dir / name))
        outputs.append(name)

    rows: list[dict[str, object]] = []
    if depth > 0:
        try:
            sample = simulate_window_counts(
                measure, windows, depth, replicates, source.substream("counts"), settings.block_size, settings.threads
            )
        except (InfiniteWindowError, TruncationError, UndecidableMassError) as e:
            print(f"Error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        rows = count_moments(sample)
    write_count_csv(rows, str(out_dir / "counts.csv"))
    outputs.append("counts.csv")
    write_manifest(config, out_dir, seed, outputs)
    print(f"Wrote {len(outputs)} files to {out_dir}")
    return EXIT_OK


def cmd_verify(config: ExperimentConfig, settings: Optional[Settings] = None) -> int:
    """Run a verification suite; exit 0 iff every row passes."""
    settings = settings or get_settings()
    ctx = SuiteContext(
        depth=config.depth if config.depth is not None else settings.default_depth,
        replicates=config.replicates or settings.default_replicates,
        seed=config.seed if config.seed is not None else settings.default_seed,
        threads=settings.threads,
        block_size=settings.block_size,
    )
    try:
        rows = run_suite(config.suite or "", ctx)
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (AssumptionViolationError, UnsupportedCaseError) as e:
        print(f"Assumption violation: {e}", file=sys.stderr)
        return EXIT_ASSUMPTION

    for row in rows:
        print(f"{'PASS' if row.passed else 'FAIL'}  {row.suite:<13} {row.case:<36} {row.statistic}={row.value} ({row.threshold})")
    out_dir = _out_dir(config, settings)
    write_suite_csv(rows, str(out_dir / "summary.csv"))
    write_manifest(config, out_dir, ctx.seed, ["summary.csv"])
    passed = all(row.passed for row in rows)
    print(f"{sum(r.passed for r in rows)}/{len(rows)} passed")
    return EXIT_OK if passed else EXIT_FAIL


# =============================================================================
# Argument parsing
# =============================================================================

def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--measure", help="Builtin measure name or measure spec file")
    parser.add_argument("--query", help='CI query "A _|_ B | C" with comma-separated labels')
    parser.add_argument("--depth", type=int, help="Depth H")
    parser.add_argument("--replicates", type=int, help="Replicates N")
    parser.add_argument("--seed", type=int, help="Root seed")
    parser.add_argument("--out", help="Output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ppp-ci",
        description="Conditional independence of infinite measures and Poisson point processes",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="Exit codes: 0 holds/pass, 1 fails, 2 assumption violation, 64 config error.",
    )
    parser.add_argument("--config", help="Experiment config JSON (default: $PPP_EXPERIMENT_CONFIG)")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log at INFO level")
    sub = parser.add_subparsers(dest="command", required=True)

    check = sub.add_parser("check-ci", help="Decide A _|_ B | C up to depth H")
    _add_run_flags(check)

    simulate = sub.add_parser("simulate", help="Sample the Poisson process and write dumps and counts")
    _add_run_flags(simulate)
    simulate.add_argument("--dumps", type=int, help="Pattern dumps to write (default 1)")

    verify = sub.add_parser("verify", help="Run a verification suite")
    _add_run_flags(verify)
    verify.add_argument(
        "--suite", help="equivalence | sampler | semigraphoid | bivariate | laplace | condcov | poisson | all"
    )

    sub.add_parser("schema", help="Print the measure spec JSON schema")
    sub.add_parser("measures", help="List builtin measures")
    return parser


def resolve_config(args: argparse.Namespace, settings: Settings) -> ExperimentConfig:
    """Merge the config file (if any) with command-line flags, flags winning field by field.

    Raises:
        ConfigError: If the file or the merged config is invalid.
    """
    data: dict[str, Any] = {}
    if args.config or settings.experiment_config or DEFAULT_CONFIG_FILE.exists():
        data = load_experiment_config(args.config).model_dump(exclude_unset=True)
    command = COMMANDS[args.command]
    if data.get("command", command) != command:
        raise ConfigError(f"config is for {data['command']!r}, not {command!r}")
    data["command"] = command
    for field in ("measure", "query", "depth", "replicates", "seed", "out", "suite", "dumps"):
        value = getattr(args, field, None)
        if value is not None:
            data[field] = value
    try:
        return ExperimentConfig(**data)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def main(argv: Optional[list[str]] = None) -> None:
    """Main entry point for the ppp-ci command."""
    args = build_parser().parse_args(argv)
    try:
        settings = get_settings()
    except ValidationError as e:
        print(f"Error: invalid PPP_* environment: {e}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)

    logging.basicConfig(
        level=logging.INFO if args.verbose else settings.log_level,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )

    if args.command == "schema":
        print(json.dumps(measure_spec_schema(), indent=2))
        sys.exit(EXIT_OK)
    if args.command == "measures":
        for m in BUILTIN_MEASURES.values():
            query = f"  [{m.query}]" if m.query else ""
            print(f"{m.name:<10} {m.description}{query}")
        sys.exit(EXIT_OK)

    try:
        config = resolve_config(args, settings)
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        sys.exit(EXIT_CONFIG)

    handlers = {"check_ci": cmd_check_ci, "simulate": cmd_simulate, "verify": cmd_verify}
    sys.exit(handlers[config.command](config, settings))


if __name__ == "__main__":
    main()
