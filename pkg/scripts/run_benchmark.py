import argparse
import asyncio
import logging
import sys
from pathlib import Path

from camadapt.bench import ExperimentSpec, StudyReport, run_adaptation_study
from camadapt.imaging.synth import default_benchmark_config
from camadapt.types import Task

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

MIN_SOURCE_AUC = 0.90
MIN_DROP = 0.05
MIN_RECOVERY = 0.5
MAX_DEGRADATION = 0.03
MIN_TARGETS = 2


def check_report(report: StudyReport, targets: tuple[str, ...]) -> list[str]:
    """Check a five-brand report against the benchmark thresholds.

    Returns:
        list[str]: One message per failed threshold; empty if all hold.
    """
    failures = []
    source = report.value(report.metadata.source)
    if source < MIN_SOURCE_AUC:
        failures.append(f"source AUC {source:.4f} < {MIN_SOURCE_AUC}")

    dropped = recovered = 0
    for target in targets:
        before = report.value(target)
        after = report.value(target, adapted=True)
        gap = source - before
        logger.info(
            "%s: %.4f -> %.4f (gap %.4f, source %.4f)",
            target,
            before,
            after,
            gap,
            source,
        )
        if after < before - MAX_DEGRADATION:
            failures.append(f"{target} degraded from {before:.4f} to {after:.4f}")
        if gap >= MIN_DROP:
            dropped += 1
            if after - before >= MIN_RECOVERY * gap:
                recovered += 1

    if dropped < MIN_TARGETS:
        failures.append(f"only {dropped} targets drop by {MIN_DROP} AUC")
    if recovered < MIN_TARGETS:
        failures.append(f"only {recovered} targets recover half their gap")
    return failures


def parse_args() -> argparse.Namespace:
    """Parse command-line arguments."""
    parser = argparse.ArgumentParser(
        description="Run the five-brand synthetic benchmark and check its thresholds."
    )
    parser.add_argument(
        "out_dir", type=Path, help="Directory for the dataset, runs and reports."
    )
    parser.add_argument("--seed", type=int, default=0, help="Seed (default: 0)")
    parser.add_argument(
        "--jobs",
        type=int,
        default=2,
        help="Concurrent adaptation runs (default: 2)",
    )
    return parser.parse_args()


def main() -> None:
    """Run the benchmark study and exit non-zero if a threshold fails."""
    args = parse_args()
    spec = ExperimentSpec(
        synthetic=default_benchmark_config(args.seed),
        task=Task.binary,
        seed=args.seed,
        out_dir=args.out_dir,
    )
    report = asyncio.run(run_adaptation_study(spec, jobs=args.jobs))
    failures = check_report(report, spec.targets)
    for failure in failures:
        logger.error("Benchmark threshold failed: %s", failure)
    if failures:
        sys.exit(1)
    logger.info("All benchmark thresholds hold; reports in %s", args.out_dir)


if __name__ == "__main__":
    main()
