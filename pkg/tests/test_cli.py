import csv
from pathlib import Path

import numpy as np
import pytest

from simplexma import cli

ROOT = Path(__file__).resolve().parents[1]


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def field_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("solve")
    assert run("solve", "--dim", 1, "--levels", "6,8,10", "--h", 1e-3, "--out", out) == 0
    return out / "field.mafg"


def _files(d):
    return sorted(p.name for p in Path(d).iterdir()) if Path(d).exists() else []


def test_solve_outputs(field_file):
    rep = dict(line.split("=", 1) for line in (field_file.parent / "solve_report.txt").read_text().splitlines())
    assert float(rep["max_error_vs_exact"]) <= 5e-3
    assert rep["sandwich_violations"] == "0"
    assert _files(field_file.parent) == ["field.mafg", "solve_report.txt"]


def test_solve_bad_levels_leaves_nothing(tmp_path):
    assert run("solve", "--dim", 1, "--levels", "8,6", "--out", tmp_path / "o") == 2
    assert _files(tmp_path / "o") == []


def test_solve_failure_removes_partial_files(tmp_path, monkeypatch):
    def broken(field, path):
        Path(path).write_bytes(b"half")
        raise OSError("disk full")

    monkeypatch.setattr(cli, "save_field", broken)
    assert run("solve", "--dim", 1, "--levels", "6,8", "--h", 2e-3, "--out", tmp_path) == 2
    assert _files(tmp_path) == []


def test_simulate_reproducible(field_file, tmp_path):
    for name in ("a", "b"):
        assert run("simulate", "--field", field_file, "--x0", 0.5, "--paths", 300, "--seed", 7, "--record", 3,
                   "--out", tmp_path / name) == 0
    for f in ("paths.csv", "summary.csv", "simulate_report.txt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_simulate_baseline_records_analytic_sigma(tmp_path):
    assert run("simulate", "--baseline", "logistic1d", "--x0", 0.3, "--paths", 5, "--seed", 1, "--record", 2,
               "--out", tmp_path) == 0
    with open(tmp_path / "paths.csv", newline="") as fh:
        rows = [r for r in csv.DictReader(fh) if r["logdetSigma"]]
    t = np.array([float(r["t"]) for r in rows])
    m = np.array([float(r["Y1"]) for r in rows])
    ld = np.array([float(r["logdetSigma"]) for r in rows])
    np.testing.assert_allclose(ld, np.log(2 / (1 - t) * (m * (1 - m)) ** 2), rtol=1e-8, atol=1e-8)


@pytest.mark.parametrize("argv", [
    ["simulate", "--field", "nowhere.mafg", "--seed", 1],
    ["simulate", "--field", "{field}", "--x0", "0.2,0.3", "--seed", 1],
    ["simulate", "--field", "{field}", "--x0", "0.5"],
    ["verify", "--field", "{field}", "--seed", 1, "--only", "no_such_test"],
    ["value", "--field", "{field}", "--x", "0.0001"],
    ["value", "--exact", "--x", "0.5", "--t", "1.0"],
])
def test_usage_errors_exit_2(argv, field_file, tmp_path, capsys):
    argv = [str(field_file) if a == "{field}" else a for a in argv]
    assert run(*argv, *(["--out", tmp_path] if argv[0] != "value" else [])) == 2
    assert "error:" in capsys.readouterr().err
    assert _files(tmp_path) == []


def test_help_and_unknown_flags(capsys):
    for sub in ("solve", "simulate", "verify", "value"):
        with pytest.raises(SystemExit) as exc:
            run(sub, "--help")
        assert exc.value.code == 0
        assert "--" in capsys.readouterr().out
    with pytest.raises(SystemExit) as exc:
        run("solve", "--no-such-flag")
    assert exc.value.code == 2


def test_value_line(capsys):
    assert run("value", "--exact", "--x", 0.5) == 0
    out = capsys.readouterr().out.strip()
    kv = dict(item.split("=", 1) for item in out.split(" "))
    assert float(kv["value"]) == pytest.approx(2.289459, abs=1e-6)
    assert float(kv["sigma_star"].strip("[]")) == pytest.approx(1 / np.pi**2, abs=1e-6)
    assert run("value", "--exact", "--x", 0.5, "--t", 0.999) == 0
    kv = dict(item.split("=", 1) for item in capsys.readouterr().out.split())
    assert abs(float(kv["value"])) < 1e-2


def test_value_near_boundary(field_file, capsys):
    assert run("value", "--field", field_file, "--x", 0.01) == 0
    kv = dict(item.split("=", 1) for item in capsys.readouterr().out.split())
    assert np.isfinite(float(kv["value"]))
    assert float(kv["lower_bound"]) <= float(kv["value"])
    assert run("value", "--field", field_file, "--x", 0.5) == 0
    mid = dict(item.split("=", 1) for item in capsys.readouterr().out.split())
    assert float(kv["lower_bound"]) > float(mid["lower_bound"]) + 3


def test_verify_only_single_entry(field_file, tmp_path):
    assert run("verify", "--field", field_file, "--seed", 1, "--only", "gradient_form_scan", "--out", tmp_path) == 0
    lines = (tmp_path / "report.csv").read_text().splitlines()
    assert len(lines) == 2 and lines[1].startswith("gradient_form_scan,pass")


def test_verify_negative_control_summary(field_file, tmp_path):
    assert run("simulate", "--field", field_file, "--x0", 0.5, "--paths", 400, "--seed", 2, "--out", tmp_path) == 0
    src = (tmp_path / "summary.csv").read_text().splitlines()
    head = src[0].split(",")
    li = head.index("label")
    bad = [src[0]]
    for row in src[1:]:
        r = row.split(",")
        r[li] = "0"  # every path claims vertex 0
        bad.append(",".join(r))
    (tmp_path / "bad.csv").write_text("\n".join(bad) + "\n")
    common = ("verify", "--field", field_file, "--seed", 2, "--x0", 0.5, "--paths", 400)
    cfg = tmp_path / "v.toml"
    cfg.write_text("seed = 2\n[verify]\nmin_paths = 100\n")
    assert run(*common, "--config", cfg, "--only", "terminal_distribution", "--summary", tmp_path / "summary.csv",
               "--out", tmp_path / "good") == 0
    assert run(*common, "--config", cfg, "--only", "terminal_distribution", "--summary", tmp_path / "bad.csv",
               "--out", tmp_path / "bad") == 1
    assert "status=fail" in (tmp_path / "bad" / "report.txt").read_text()


def test_reference_battery_d1(tmp_path):
    cfg = ROOT / "configs" / "d1_reference.toml"
    assert run("solve", "--config", cfg, "--out", tmp_path) == 0
    assert run("verify", "--config", cfg, "--field", tmp_path / "field.mafg", "--out", tmp_path) == 0
    rows = (tmp_path / "report.csv").read_text().splitlines()[1:]
    assert len(rows) == len(cli.BATTERY)
    assert all(r.split(",")[1] == "pass" for r in rows)
