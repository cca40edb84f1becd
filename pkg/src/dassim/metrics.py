"""Delivery targets, custody accounting, sampling checks and run exports."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

import numpy as np

from .config import SimConfig, exact, round_half_away

SERIES_HEADER = ("step", "time_ms", "missing_samples", "delivered_samples", "ready_fraction")


def theoretical_total(cfg: SimConfig) -> int:
    """Total custody samples to deliver over all non-producer nodes.

    (nbNodes - 1) * (ratio * vpn1 + (1 - ratio) * vpn2)
        * (rowSizeN * custodyRow + colSizeN * custodyCol),
    evaluated exactly and rounded to the nearest integer.
    """
    ratio = exact(cfg.class1_ratio)
    per_node = ratio * cfg.vpn1 + (1 - ratio) * cfg.vpn2
    per_validator = cfg.row_size_n * cfg.custody_row + cfg.col_size_n * cfg.custody_col
    return round_half_away(Fraction(cfg.nb_nodes - 1) * per_node * per_validator)


def count_delivered(population, held: np.ndarray) -> int:
    """Custody samples held by their custodians, counted once per validator.

    ``held`` is a (nodes, n_rows * n_cols) availability array. A held cell in
    a custody row counts once for every validator custodying that row, and
    again for every validator custodying its column.
    """
    cfg = population.cfg
    grid = np.asarray(held, dtype=bool).reshape(len(population), cfg.n_rows, cfg.n_cols)
    row_counts = grid.sum(axis=2)
    col_counts = grid.sum(axis=1)
    return int(
        (population.row_multiplicity() * row_counts).sum()
        + (population.col_multiplicity() * col_counts).sum()
    )


@dataclass
class RunMetrics:
    theoretical_total: int
    target: int
    steps: list[int] = field(default_factory=list)
    times_ms: list[int] = field(default_factory=list)
    missing: list[int] = field(default_factory=list)
    delivered: list[int] = field(default_factory=list)
    ready_fraction: list[float] = field(default_factory=list)
    termination_reason: str | None = None
    wall_clock_seconds: float = 0.0
    empty_topics: list[int] = field(default_factory=list)

    def record(self, step: int, time_ms: int, missing: int, delivered: int, ready: float) -> None:
        self.steps.append(int(step))
        self.times_ms.append(int(time_ms))
        self.missing.append(int(missing))
        self.delivered.append(int(delivered))
        self.ready_fraction.append(float(ready))

    @property
    def final_delivered(self) -> int:
        return self.delivered[-1] if self.delivered else 0

    @property
    def difference(self) -> int:
        """Observed minus theoretical delivered samples."""
        return self.final_delivered - self.theoretical_total

    def rows(self):
        return zip(self.steps, self.times_ms, self.missing, self.delivered, self.ready_fraction)


@dataclass
class DetectionReport:
    samplers: int
    samples_per_sampler: int
    successes: int
    unavailable_fraction: float

    @property
    def success_fraction(self) -> float:
        return self.successes / self.samplers if self.samplers else 1.0

    @property
    def expected_success(self) -> float:
        """Success probability of one sampler, (1 - f) ** s."""
        return (1.0 - self.unavailable_fraction) ** self.samples_per_sampler


def sample_availability(source, sampler_count: int, samples_per_sampler: int,
                        rng: np.random.Generator, chunk: int = 1 << 20) -> DetectionReport:
    """Random-sampling availability check.

    Each virtual sampler queries ``samples_per_sampler`` uniform cells (with
    replacement) and succeeds only if every queried cell is available
    somewhere in the network. ``source`` is a World or a BlockAvailability.
    """
    avail = source.network_avail() if hasattr(source, "network_avail") else source
    flat = np.asarray(avail.bits, dtype=bool).reshape(-1)
    successes = 0
    if samples_per_sampler == 0:
        successes = sampler_count
    else:
        per_chunk = max(1, chunk // samples_per_sampler)
        done = 0
        while done < sampler_count:
            m = min(per_chunk, sampler_count - done)
            picks = rng.integers(0, flat.size, size=(m, samples_per_sampler))
            successes += int(flat[picks].all(axis=1).sum())
            done += m
    return DetectionReport(
        samplers=sampler_count,
        samples_per_sampler=samples_per_sampler,
        successes=successes,
        unavailable_fraction=1.0 - flat.mean() if flat.size else 0.0,
    )


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def series_text(metrics: RunMetrics, fmt: str = "csv") -> str:
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(SERIES_HEADER)
        for step, t, miss, dlv, ready in metrics.rows():
            writer.writerow((step, t, miss, dlv, repr(ready)))
        return buf.getvalue()
    if fmt == "json":
        rows = [dict(zip(SERIES_HEADER, row)) for row in metrics.rows()]
        return json.dumps(rows, indent=1) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def summary_record(metrics: RunMetrics, cfg: SimConfig, run_id: str) -> dict[str, Any]:
    return {
        "run_id": run_id,
        "config": cfg.to_dict(),
        "theoretical_total": metrics.theoretical_total,
        "target": metrics.target,
        "observed": metrics.final_delivered,
        "difference": metrics.difference,
        "termination_reason": metrics.termination_reason,
        "steps": metrics.steps[-1] if metrics.steps else 0,
        "final_time_ms": metrics.times_ms[-1] if metrics.times_ms else 0,
        "empty_topics": metrics.empty_topics,
    }


def export_run(metrics: RunMetrics, cfg: SimConfig, out_dir: str | Path, run_id: str,
               fmt: str = "csv", plot: bool = False) -> dict[str, Path]:
    """Write the time series, summary and optional plot data for one run.

    Files land in ``out_dir`` as ``<run_id>.series.<fmt>``,
    ``<run_id>.summary.json`` and, with ``plot``, ``<run_id>.plot.csv`` plus
    a rendered ``<run_id>.png``. Each file is written atomically.
    """
    out = Path(out_dir)
    paths = {
        "series": out / f"{run_id}.series.{fmt}",
        "summary": out / f"{run_id}.summary.json",
    }
    _atomic_write(paths["series"], series_text(metrics, fmt))
    _atomic_write(
        paths["summary"], json.dumps(summary_record(metrics, cfg, run_id), indent=1) + "\n"
    )
    if plot:
        from .plotting import plot_missing

        paths["plot"] = out / f"{run_id}.plot.csv"
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("time_ms", "missing_samples", "theoretical_total"))
        for t, miss in zip(metrics.times_ms, metrics.missing):
            writer.writerow((t, miss, metrics.theoretical_total))
        _atomic_write(paths["plot"], buf.getvalue())
        paths["figure"] = out / f"{run_id}.png"
        plot_missing(metrics, paths["figure"], title=_custody_title(cfg))
    return paths


def _custody_title(cfg: SimConfig) -> str:
    return f"custody rows/columns per validator = {cfg.custody_row}/{cfg.custody_col}"


def read_series(path: str | Path) -> RunMetrics:
    """Parse an exported time series back into a RunMetrics (series only)."""
    path = Path(path)
    text = path.read_text()
    metrics = RunMetrics(theoretical_total=0, target=0)
    if path.suffix == ".json":
        for row in json.loads(text):
            metrics.record(*(row[k] for k in SERIES_HEADER))
        return metrics
    reader = csv.reader(io.StringIO(text))
    header = tuple(next(reader))
    if header != SERIES_HEADER:
        raise ValueError(f"{path}: unexpected header {header}")
    for step, t, miss, dlv, ready in reader:
        metrics.record(int(step), int(t), int(miss), int(dlv), float(ready))
    return metrics
