"""Command-line sweep runner.

    dassim --config exp1.toml --out-dir results --jobs 4 --plot

Every run writes its own files under ``--out-dir``; ``summary.csv`` collects
one line per run, sorted by run id, once all runs have finished.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path

from .config import InvalidConfig, SimConfig, SweepSpec, U64_MASK, expand_sweep, load_config
from .engine import STALLED, TIMEOUT, build_world, run_to_completion
from .metrics import _atomic_write, export_run
from .overlay import dump_topology

SUMMARY_HEADER = (
    "run_id", "custody_row", "custody_col", "observed", "theoretical", "difference",
    "termination_reason", "flagged",
)


@dataclass(frozen=True)
class RunJob:
    run_id: str
    cfg: SimConfig
    out_dir: Path
    fmt: str = "csv"
    plot: bool = False
    dump_topology: bool = False


@dataclass
class Plan:
    sweep: SweepSpec
    out_dir: Path
    jobs: int
    fmt: str = "csv"
    plot: bool = False
    dry_run: bool = False
    dump_topology: bool = False
    runs: list[RunJob] = field(default_factory=list)


def _default_jobs() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def _u64(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value <= U64_MASK:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dassim",
        description="Simulate DAS block dissemination over topic meshes.",
    )
    p.add_argument("--config", required=True, type=Path, help="TOML config file (may declare sweeps)")
    p.add_argument("--out-dir", type=Path, default=Path("results"), help="output directory")
    p.add_argument("--jobs", type=_positive, default=_default_jobs(), help="concurrent runs")
    p.add_argument("--seed", type=_u64, help="base seed, overrides the config file")
    p.add_argument("--format", choices=("csv", "json"), default="csv", help="time-series format")
    p.add_argument("--plot", action="store_true", help="write plot data and PNG figures")
    p.add_argument("--dry-run", action="store_true", help="print the expanded run list and exit")
    p.add_argument("--dump-topology", action="store_true", help="write per-topic mesh listings")
    return p


def parse_cli(argv=None) -> Plan:
    parser = make_parser()
    args = parser.parse_args(argv)
    if not args.config.is_file():
        parser.error(f"config file not found: {args.config}")
    try:
        sweep = load_config(args.config)
        if args.seed is not None:
            sweep = replace(sweep, base_seed=args.seed, base=replace(sweep.base, seed=args.seed))
        runs = [
            RunJob(rid, cfg, args.out_dir, args.format, args.plot, args.dump_topology)
            for rid, cfg in expand_sweep(sweep)
        ]
    except InvalidConfig as exc:
        parser.error(f"invalid config: {exc}")
    return Plan(
        sweep=sweep,
        out_dir=args.out_dir,
        jobs=args.jobs,
        fmt=args.format,
        plot=args.plot,
        dry_run=args.dry_run,
        dump_topology=args.dump_topology,
        runs=runs,
    )


def run_job(job: RunJob) -> dict:
    """Execute one run and write its files; returns its summary row."""
    world = build_world(job.cfg)
    if job.dump_topology:
        job.out_dir.mkdir(parents=True, exist_ok=True)
        tmp = job.out_dir / f".{job.run_id}.topology.txt.tmp"
        dump_topology(world.overlay, tmp)
        os.replace(tmp, job.out_dir / f"{job.run_id}.topology.txt")
    metrics = run_to_completion(world)
    export_run(metrics, job.cfg, job.out_dir, job.run_id, fmt=job.fmt, plot=job.plot)
    reason = metrics.termination_reason
    return {
        "run_id": job.run_id,
        "custody_row": job.cfg.custody_row,
        "custody_col": job.cfg.custody_col,
        "observed": metrics.final_delivered,
        "theoretical": metrics.theoretical_total,
        "difference": metrics.difference,
        "termination_reason": reason,
        "flagged": int(reason in (STALLED, TIMEOUT)),
    }


def summary_text(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, SUMMARY_HEADER, lineterminator="\n")
    writer.writeheader()
    writer.writerows(sorted(rows, key=lambda r: r["run_id"]))
    return buf.getvalue()


def execute_plan(plan: Plan, stderr=sys.stderr) -> int:
    if plan.dry_run:
        for job in plan.runs:
            c = job.cfg
            print(
                f"{job.run_id} custodyRow={c.custody_row} custodyCol={c.custody_col} "
                f"nbNodes={c.nb_nodes} seed={c.seed}"
            )
        return 0

    plan.out_dir.mkdir(parents=True, exist_ok=True)
    rows, failed = [], []
    total = len(plan.runs)

    def progress(done: int, run_id: str, status: str) -> None:
        print(f"[{done}/{total}] {run_id} {status}", file=stderr, flush=True)

    if plan.jobs <= 1 or total <= 1:
        for i, job in enumerate(plan.runs, 1):
            try:
                rows.append(run_job(job))
                progress(i, job.run_id, rows[-1]["termination_reason"])
            except Exception as exc:  # one bad run must not sink the sweep
                failed.append(job.run_id)
                progress(i, job.run_id, f"failed: {exc}")
    else:
        with ProcessPoolExecutor(max_workers=plan.jobs) as pool:
            futures = {pool.submit(run_job, job): job for job in plan.runs}
            for i, fut in enumerate(as_completed(futures), 1):
                job = futures[fut]
                try:
                    rows.append(fut.result())
                    progress(i, job.run_id, rows[-1]["termination_reason"])
                except Exception as exc:
                    failed.append(job.run_id)
                    progress(i, job.run_id, f"failed: {exc}")

    _atomic_write(plan.out_dir / "summary.csv", summary_text(rows))
    if plan.plot and rows:
        from .plotting import plot_sweep

        plot_sweep(sorted(rows, key=lambda r: r["run_id"]), plan.out_dir / "summary.png")
    return 1 if failed else 0


def main(argv=None) -> int:
    plan = parse_cli(argv)
    try:
        return execute_plan(plan)
    except OSError as exc:
        print(f"dassim: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
