import json
import subprocess
import sys
from pathlib import Path

import pytest

from spdereg.cli import main
from spdereg.runner import CATALOG, TABLE_COLUMNS, bundled_config, list_examples, run_experiment

GOLDEN = Path(__file__).parent / "golden" / "linear_gaussian"
GOLDEN_FILES = ["semigroup.csv", "gradient.csv", "lipschitz.csv", "records.jsonl", "summary.txt"]


@pytest.fixture(scope="module")
def golden_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("lg")
    return run_experiment(bundled_config("linear_gaussian"), out=out), out


def test_catalog_has_six_entries():
    entries = list_examples()
    assert len(entries) == 6
    assert [e["name"] for e in entries] == [c["name"] for c in CATALOG]
    assert all(Path(e["config"]).is_file() for e in entries)


@pytest.mark.parametrize("name", GOLDEN_FILES)
def test_golden_outputs(golden_run, name):
    _, out = golden_run
    assert (out / name).read_bytes() == (GOLDEN / name).read_bytes()


def test_manifest(golden_run):
    m, out = golden_run
    data = json.loads((out / "manifest.json").read_text())
    assert data["config_hash"] == m.config_hash and data["flags"] == 0
    assert data["seed"] == 20240611 and data["workers"] == 1
    assert (out / "lipschitz.csv").read_text().splitlines()[0] == ",".join(TABLE_COLUMNS)


def test_seed_override_changes_numbers(tmp_path):
    m = run_experiment(bundled_config("linear_gaussian"), seed=1, out=tmp_path)
    assert m.seed == 1
    assert (tmp_path / "semigroup.csv").read_bytes() != (GOLDEN / "semigroup.csv").read_bytes()


def test_worker_count_does_not_change_outputs(tmp_path):
    run_experiment(bundled_config("linear_gaussian"), workers=3, out=tmp_path)
    for name in GOLDEN_FILES:
        assert (tmp_path / name).read_bytes() == (GOLDEN / name).read_bytes()


@pytest.mark.slow
@pytest.mark.parametrize("name", [c["name"] for c in CATALOG])
def test_bundled_examples_run_clean(tmp_path, name):
    m = run_experiment(bundled_config(name), workers=2, out=tmp_path)
    assert m.flags == 0, (tmp_path / "summary.txt").read_text()


def test_cli_examples(capsys):
    assert main(["examples"]) == 0
    assert capsys.readouterr().out.strip().endswith("6 examples")


def test_cli_config_error(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text(bundled_config("linear_gaussian").read_text().replace("horizon: 1.0", "horizon: -1"))
    assert main(["run", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "horizon" in capsys.readouterr().err


def test_cli_run_and_verify(tmp_path, capsys):
    assert main(["run", "linear_gaussian", "--out", str(tmp_path), "--seed", "20240611"]) == 0
    assert "flags: 0" in capsys.readouterr().out
    assert (tmp_path / "records.jsonl").read_bytes() == (GOLDEN / "records.jsonl").read_bytes()
    assert main(["verify", "--criteria", "1", "2"]) == 0
    out = capsys.readouterr().out
    assert "[PASS] criterion  1" in out and "2/2 criteria passed" in out


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "spdereg.cli", "examples"], capture_output=True, text=True)
    assert res.returncode == 0 and "6 examples" in res.stdout
