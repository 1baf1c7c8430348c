import csv
import subprocess
import sys

import pytest

from pidheal.harness import persistence
from pidheal.harness.cli import main

SMALL = ["--set", "trials=40", "--set", "N=200"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(cmd, out, *extra):
    return main([cmd, "--out", str(out), *SMALL, *extra])


def test_verify_passes_and_prints_lines(tmp_path, capsys):
    assert run("verify", tmp_path) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[-1].startswith("summary checks=") and "failed=0" in lines[-1]
    assert all("status=PASS" in line for line in lines[:-1])
    assert (tmp_path / "verify.meta").exists()


def test_verify_report_is_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("verify", a) == 0 and run("verify", b) == 0
    for name in ("verify_report.txt", "deviation.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


@pytest.mark.parametrize("args", [["--c", "-1"], ["--gains", "1,2"], ["--set", "nokey=1"],
                                  ["--set", "novalue"], ["--scheme", "Q"]])
def test_config_errors_exit_2(tmp_path, capsys, args):
    assert main(["simulate", "--out", str(tmp_path), *args]) == 2
    assert "config error" in capsys.readouterr().err


def test_pipeline_outputs(tmp_path):
    for cmd in ("gen", "fit", "schedule"):
        assert run(cmd, tmp_path) == 0
    assert {"task.npz", "train.npz", "gen.csv", "ranks.csv", "schedule.csv", "schedule.shc"} <= {
        p.name for p in tmp_path.iterdir()}
    for ch in "PID":
        basis = persistence.load(tmp_path / f"basis_{ch}.shc")
        persistence.check_against_stack(basis, 32, 6)
    ranks = rows(tmp_path / "ranks.csv")
    assert ranks[0]["rank_D"] == "" and float(ranks[0]["residual_P"]) <= 1e-10
    sched = persistence.load(tmp_path / "schedule.shc")
    assert float(rows(tmp_path / "schedule.csv")[-1]["lambda"]) == 0.0 == sched.lambdas[-1]


def test_simulate_matches_prediction(tmp_path):
    assert run("simulate", tmp_path) == 0
    sim = rows(tmp_path / "simulate.csv")
    assert list(sim[0]) == ["seed", "c", "trial", "t", "predicted_err", "empirical_err", "rel_gap"]
    assert max(float(r["rel_gap"]) for r in sim) <= 1e-9
    assert (tmp_path / "deviation.csv").exists()


def test_compare_columns_and_mask_redundancy(tmp_path):
    assert run("compare", tmp_path, "--gains", "1,0,0", "--scheme", "P,PID",
               "--controller", "none,practical") == 0
    out = rows(tmp_path / "compare.csv")
    assert list(out[0]) == ["seed", "scheme", "controller", "par_norm", "perp_norm", "accuracy", "trials"]
    key = lambda r: (r["controller"], r["par_norm"], r["perp_norm"])
    p = {key(r): r["accuracy"] for r in out if r["scheme"] == "P"}
    pid = {key(r): r["accuracy"] for r in out if r["scheme"] == "PID"}
    # I and D channels with zero gain are inactive, so the two masks coincide
    assert p == pid


def test_compare_analytic_beats_uncontrolled(tmp_path):
    assert run("compare", tmp_path, "--controller", "none,analytic", "--scheme", "P") == 0
    out = rows(tmp_path / "compare.csv")
    acc = {(r["controller"], r["par_norm"], r["perp_norm"]): float(r["accuracy"]) for r in out}
    perturbed = [k for k in acc if float(k[2]) > 0 and k[0] == "none"]
    assert perturbed
    for k in perturbed:
        assert acc[("analytic",) + k[1:]] >= acc[k]


def test_bench_small(tmp_path, capsys):
    assert main(["bench", "--out", str(tmp_path), "--set", "bench_d=8", "--set", "bench_batch=10",
                 "--set", "bench_repeats=2", "--set", "bench_warmup=0", "--set", "bench_pmp_repeats=1",
                 "--set", "bench_pmp_warmup=0", "--set", "pmp_iters=1"]) == 0
    modes = [r["mode"] for r in rows(tmp_path / "bench.csv")]
    assert modes == ["base", "analytic", "analytic_projector", "pmp"]
    assert "blas_threads = 1" in (tmp_path / "bench.meta").read_text()


def test_module_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "pidheal", "schedule", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
