import csv
import hashlib
import subprocess
import sys
from pathlib import Path

import pytest

from dassim.cli import execute_plan, main, parse_cli

ROOT = Path(__file__).resolve().parents[1]
SWEEP = ROOT / "configs" / "custody_sweep.toml"

SMALL = """
nbNodes = 40
rowSizeN = 16
colSizeN = 16
rowSizeK = 8
colSizeK = 8
netDegree = 4
failureRate = 0.1
custodyPairs = [[1, 1], [2, 2], [1, 3]]
runsPerPoint = 2
seed = 5
"""


def tree_digest(directory: Path) -> dict[str, str]:
    return {
        str(p.relative_to(directory)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(directory.rglob("*"))
        if p.is_file()
    }


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.toml"
    path.write_text(SMALL)
    return path


def test_dry_run_lists_the_custody_grid(capsys):
    assert main(["--config", str(SWEEP), "--dry-run"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 8
    assert lines[0].startswith("p0000-r000 custodyRow=1 custodyCol=1")
    assert lines[-1].startswith("p0007-r000 custodyRow=100 custodyCol=100")


def test_no_arguments_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2
    err = capsys.readouterr().err
    for flag in ("--config", "--out-dir", "--jobs", "--seed", "--format", "--plot", "--dry-run"):
        assert flag in err


def test_missing_config_file_is_fatal(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["--config", str(tmp_path / "nope.toml")])
    assert exc.value.code == 2


def test_invalid_config_is_fatal(tmp_path):
    path = tmp_path / "bad.toml"
    path.write_text("rowSizeK = 200\n")
    with pytest.raises(SystemExit) as exc:
        main(["--config", str(path), "--dry-run"])
    assert exc.value.code == 2


def test_seed_flag_overrides_file(small_config):
    a = parse_cli(["--config", str(small_config)])
    b = parse_cli(["--config", str(small_config), "--seed", "6"])
    assert a.sweep.base_seed == 5 and b.sweep.base_seed == 6
    assert [r.cfg.seed for r in a.runs] != [r.cfg.seed for r in b.runs]


def test_serial_and_parallel_outputs_are_identical(small_config, tmp_path):
    serial, parallel = tmp_path / "serial", tmp_path / "parallel"
    assert main(["--config", str(small_config), "--out-dir", str(serial), "--jobs", "1", "--plot"]) == 0
    assert main(["--config", str(small_config), "--out-dir", str(parallel), "--jobs", "3", "--plot"]) == 0
    digest = tree_digest(serial)
    assert len(digest) == 6 * 4 + 2
    assert digest == tree_digest(parallel)


def test_summary_table(small_config, tmp_path):
    out = tmp_path / "out"
    assert main(["--config", str(small_config), "--out-dir", str(out), "--jobs", "1"]) == 0
    with open(out / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["run_id"] for r in rows] == sorted(r["run_id"] for r in rows)
    assert [(r["custody_row"], r["custody_col"]) for r in rows[::2]] == [("1", "1"), ("2", "2"), ("1", "3")]
    for r in rows:
        assert int(r["observed"]) - int(r["theoretical"]) == int(r["difference"])
        assert r["flagged"] == str(int(r["termination_reason"] != "complete"))


def test_json_format(small_config, tmp_path):
    out = tmp_path / "out"
    assert main(["--config", str(small_config), "--out-dir", str(out), "--format", "json", "--jobs", "1"]) == 0
    assert len(list(out.glob("*.series.json"))) == 6
    assert not list(out.glob("*.series.csv"))


def test_empty_sweep(tmp_path):
    path = tmp_path / "empty.toml"
    path.write_text("nbNodes = 10\ncustodyPairs = []\n")
    out = tmp_path / "out"
    assert main(["--config", str(path), "--out-dir", str(out)]) == 0
    assert (out / "summary.csv").read_text().splitlines() == [
        "run_id,custody_row,custody_col,observed,theoretical,difference,termination_reason,flagged"
    ]


def test_stalled_runs_are_flagged_but_succeed(tmp_path):
    path = tmp_path / "stall.toml"
    path.write_text("nbNodes = 20\nrowSizeN = 8\ncolSizeN = 8\nrowSizeK = 8\ncolSizeK = 8\nfailureRate = 1.0\n")
    out = tmp_path / "out"
    assert main(["--config", str(path), "--out-dir", str(out), "--jobs", "1"]) == 0
    row = next(csv.DictReader(open(out / "summary.csv")))
    assert row["termination_reason"] == "stalled" and row["flagged"] == "1"


def test_topology_dump(small_config, tmp_path):
    out = tmp_path / "out"
    assert main(["--config", str(small_config), "--out-dir", str(out), "--jobs", "1", "--dump-topology"]) == 0
    dumps = sorted(out.glob("*.topology.txt"))
    assert len(dumps) == 6
    assert len(dumps[0].read_text().splitlines()) == 32


def test_failed_run_does_not_touch_others(small_config, tmp_path, monkeypatch):
    import dassim.cli as cli

    real = cli.run_job

    def flaky(job):
        if job.run_id == "p0001-r000":
            raise RuntimeError("boom")
        return real(job)

    monkeypatch.setattr(cli, "run_job", flaky)
    plan = parse_cli(["--config", str(small_config), "--out-dir", str(tmp_path / "o"), "--jobs", "1"])
    assert execute_plan(plan) == 1
    files = {p.name for p in (tmp_path / "o").iterdir()}
    assert "p0001-r000.series.csv" not in files
    assert "p0002-r001.series.csv" in files
    assert not any(name.endswith(".tmp") for name in files)


def test_module_entry_point(small_config, tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "dassim", "--config", str(small_config), "--dry-run"],
        capture_output=True, text=True, check=True,
    )
    assert len(proc.stdout.splitlines()) == 6
