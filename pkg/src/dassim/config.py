"""Run configuration, parameter sweeps and seed derivation.

A :class:`SimConfig` fully describes one simulation run. Config files use the
camelCase key names (``nbNodes``, ``custodyRow``, ...); the Python attributes
are their snake_case equivalents.
"""

from __future__ import annotations

import hashlib
import itertools
import math
import struct
import sys
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterator, Mapping, Sequence

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SEED_LABELS = ("topology", "custody", "withholding", "malicious", "runOrder")
U64_MASK = 2**64 - 1


class InvalidConfig(ValueError):
    """Raised when a configuration violates one of its invariants."""


def _key(name: str, default: Any) -> Any:
    return field(default=default, metadata={"key": name})


@dataclass(frozen=True)
class SimConfig:
    """Complete parameterization of a single run.

    Defaults reproduce the reference experiment setup (5000 nodes, 100x100
    block without extension, vpn 1, class-1 ratio 0.8, 200/10/200 Mbps,
    mesh degree 8, no withholding and no malicious nodes) with custody 1/1.
    """

    nb_nodes: int = _key("nbNodes", 5000)
    row_size_n: int = _key("rowSizeN", 100)
    col_size_n: int = _key("colSizeN", 100)
    row_size_k: int = _key("rowSizeK", 100)
    col_size_k: int = _key("colSizeK", 100)
    custody_row: int = _key("custodyRow", 1)
    custody_col: int = _key("custodyCol", 1)
    cell_size_bytes: int = _key("cellSizeBytes", 512)
    header_bytes: int = _key("headerBytes", 0)
    class1_ratio: float = _key("class1Ratio", 0.8)
    vpn1: int = _key("vpn1", 1)
    vpn2: int = _key("vpn2", 1)
    net_degree: int = _key("netDegree", 8)
    failure_rate: float = _key("failureRate", 0.0)
    malicious_rate: float = _key("maliciousRate", 0.0)
    bw_uplink_producer: float = _key("bwUplinkProducer", 200.0)
    bw_uplink1: float = _key("bwUplink1", 10.0)
    bw_uplink2: float = _key("bwUplink2", 200.0)
    latency_ms: int = _key("latencyMs", 50)
    step_duration_ms: int = _key("stepDurationMs", 50)
    slot_duration_ms: int = _key("slotDurationMs", 12000)
    seed: int = _key("seed", 0)

    @property
    def n_rows(self) -> int:
        # a column holds one cell per row
        return self.col_size_n

    @property
    def n_cols(self) -> int:
        return self.row_size_n

    @property
    def cell_bits(self) -> int:
        return (self.cell_size_bytes + self.header_bytes) * 8

    def to_dict(self) -> dict[str, Any]:
        """Config as a mapping keyed by file (camelCase) names."""
        return {f.metadata["key"]: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "SimConfig":
        by_key = {f.metadata["key"]: f.name for f in fields(cls)}
        unknown = sorted(set(data) - set(by_key))
        if unknown:
            raise InvalidConfig(f"unknown config keys: {', '.join(unknown)}")
        return cls(**{by_key[k]: v for k, v in data.items()})


CONFIG_KEYS = {f.metadata["key"]: f.name for f in fields(SimConfig)}
INT_FIELDS = {
    "nb_nodes", "row_size_n", "col_size_n", "row_size_k", "col_size_k",
    "custody_row", "custody_col", "cell_size_bytes", "header_bytes",
    "vpn1", "vpn2", "net_degree", "latency_ms", "step_duration_ms",
    "slot_duration_ms", "seed",
}


def exact(value: float | int) -> Fraction:
    """Exact rational for a config number, reading floats by their decimal repr."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, int):
        return Fraction(value)
    return Fraction(repr(float(value)))


def round_half_away(value: float | Fraction) -> int:
    """Round to the nearest integer, ties away from zero."""
    q = exact(value)
    if q < 0:
        return -round_half_away(-q)
    return math.floor(q + Fraction(1, 2))


def validate(cfg: SimConfig) -> SimConfig:
    """Return ``cfg`` unchanged if every invariant holds, else raise InvalidConfig.

    The error message names the first violated invariant.
    """
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        key = f.metadata["key"]
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise InvalidConfig(f"{key} must be a number, got {v!r}")
        if f.name in INT_FIELDS and not isinstance(v, int):
            raise InvalidConfig(f"{key} must be an integer, got {v!r}")
        if isinstance(v, float) and not math.isfinite(v):
            raise InvalidConfig(f"{key} must be finite")

    checks = [
        (cfg.nb_nodes >= 1, "nbNodes >= 1"),
        (0 < cfg.row_size_k <= cfg.row_size_n, "0 < rowSizeK <= rowSizeN (K<=N)"),
        (0 < cfg.col_size_k <= cfg.col_size_n, "0 < colSizeK <= colSizeN (K<=N)"),
        (0 <= cfg.custody_row <= cfg.col_size_n, "0 <= custodyRow <= colSizeN"),
        (0 <= cfg.custody_col <= cfg.row_size_n, "0 <= custodyCol <= rowSizeN"),
        (cfg.custody_row + cfg.custody_col > 0, "custodyRow + custodyCol > 0 (custody empty)"),
        (cfg.cell_size_bytes > 0, "cellSizeBytes > 0"),
        (cfg.header_bytes >= 0, "headerBytes >= 0"),
        (0 <= cfg.class1_ratio <= 1, "0 <= class1Ratio <= 1"),
        (0 <= cfg.failure_rate <= 1, "0 <= failureRate <= 1"),
        (0 <= cfg.malicious_rate <= 1, "0 <= maliciousRate <= 1"),
        (cfg.vpn1 >= 1 and cfg.vpn2 >= 1, "vpn1, vpn2 >= 1"),
        (cfg.net_degree >= 1, "netDegree >= 1"),
        (
            cfg.bw_uplink_producer > 0 and cfg.bw_uplink1 > 0 and cfg.bw_uplink2 > 0,
            "bandwidths > 0",
        ),
        (cfg.latency_ms >= 0, "latencyMs >= 0"),
        (cfg.step_duration_ms > 0, "stepDurationMs > 0"),
        (cfg.slot_duration_ms >= cfg.step_duration_ms, "slotDurationMs >= stepDurationMs"),
        (0 <= cfg.seed <= U64_MASK, "seed is an unsigned 64-bit integer"),
    ]
    for ok, name in checks:
        if not ok:
            raise InvalidConfig(name)
    return cfg


def derive_seed(base_seed: int, label: str, index: int) -> int:
    """Deterministic 64-bit sub-seed for one stochastic concern.

    Pure function of its arguments; the label bytes and index are hashed with
    8-byte BLAKE2b so that distinct (label, index) pairs give unrelated seeds.
    """
    if label not in SEED_LABELS:
        raise ValueError(f"unknown seed label {label!r}; expected one of {SEED_LABELS}")
    h = hashlib.blake2b(digest_size=8, person=b"dassim-seed")
    h.update(struct.pack("<QQ", base_seed & U64_MASK, index & U64_MASK))
    h.update(label.encode())
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class SweepSpec:
    """A base config plus list-valued dimensions to take the product over.

    ``sweep`` maps attribute names to value lists. ``custody_pairs`` is an
    alternative to sweeping custody_row and custody_col independently: the
    pairs are swept together as one dimension.
    """

    base: SimConfig = field(default_factory=SimConfig)
    sweep: Mapping[str, Sequence[Any]] = field(default_factory=dict)
    custody_pairs: Sequence[tuple[int, int]] | None = None
    runs_per_point: int = 1
    base_seed: int = 0

    def dimensions(self) -> list[tuple[str, list[Any]]]:
        """Sweep dimensions in declaration order of SimConfig attributes."""
        dims = []
        for f in fields(SimConfig):
            if f.name == "custody_row" and self.custody_pairs is not None:
                dims.append(("custody_pairs", [tuple(p) for p in self.custody_pairs]))
            elif f.name in self.sweep:
                dims.append((f.name, list(self.sweep[f.name])))
        return dims


def run_id(point: int, rep: int) -> str:
    return f"p{point:04d}-r{rep:03d}"


def expand_sweep(spec: SweepSpec) -> Iterator[tuple[str, SimConfig]]:
    """Yield (runId, validated config) for every point and repetition.

    Points follow the lexicographic product of the dimension lists; within a
    point, repetitions run in order. Each run's seed is derived from the base
    seed and the run's position in that sequence.
    """
    unknown = sorted(set(spec.sweep) - {f.name for f in fields(SimConfig)})
    if unknown:
        raise InvalidConfig(f"unknown sweep parameters: {', '.join(unknown)}")
    if "seed" in spec.sweep:
        raise InvalidConfig("seed cannot be swept; use runsPerPoint")
    if spec.custody_pairs is not None and (
        "custody_row" in spec.sweep or "custody_col" in spec.sweep
    ):
        raise InvalidConfig("custodyPairs cannot be combined with swept custodyRow/custodyCol")
    if spec.runs_per_point < 0:
        raise InvalidConfig("runsPerPoint >= 0")

    dims = spec.dimensions()
    names = [name for name, _ in dims]
    for point, values in enumerate(itertools.product(*(v for _, v in dims))):
        overrides: dict[str, Any] = {}
        for name, value in zip(names, values):
            if name == "custody_pairs":
                overrides["custody_row"], overrides["custody_col"] = value
            else:
                overrides[name] = value
        for rep in range(spec.runs_per_point):
            flat = point * spec.runs_per_point + rep
            seed = derive_seed(spec.base_seed, "runOrder", flat)
            cfg = validate(replace(spec.base, **overrides, seed=seed))
            yield run_id(point, rep), cfg


def sweep_from_mapping(data: Mapping[str, Any]) -> SweepSpec:
    """Build a SweepSpec from a flat key/value mapping (parsed config file).

    A SimConfig key given a list becomes a sweep dimension.
    """
    data = dict(data)
    runs = data.pop("runsPerPoint", 1)
    pairs = data.pop("custodyPairs", None)
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise InvalidConfig(f"unknown config keys: {', '.join(unknown)}")
    if pairs is not None:
        if "custodyRow" in data or "custodyCol" in data:
            raise InvalidConfig("custodyPairs cannot be combined with custodyRow/custodyCol")
        if not all(isinstance(p, (list, tuple)) and len(p) == 2 for p in pairs):
            raise InvalidConfig("custodyPairs must be a list of [row, col] pairs")
        pairs = [(int(r), int(c)) for r, c in pairs]
    if isinstance(runs, bool) or not isinstance(runs, int):
        raise InvalidConfig("runsPerPoint must be an integer")

    scalars = {k: v for k, v in data.items() if not isinstance(v, list)}
    sweep = {CONFIG_KEYS[k]: v for k, v in data.items() if isinstance(v, list)}
    base = SimConfig.from_dict(scalars)
    return SweepSpec(
        base=base,
        sweep=sweep,
        custody_pairs=pairs,
        runs_per_point=runs,
        base_seed=base.seed,
    )


def load_config(path: str | Path) -> SweepSpec:
    """Parse a TOML config file into a SweepSpec."""
    with open(path, "rb") as fh:
        try:
            data = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise InvalidConfig(f"{path}: {exc}") from exc
    nested = [k for k, v in data.items() if isinstance(v, dict)]
    if nested:
        raise InvalidConfig(f"config must be flat, found tables: {', '.join(nested)}")
    return sweep_from_mapping(data)
