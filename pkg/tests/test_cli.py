import json
import subprocess
import sys
import time

import numpy as np
import pytest

from mrmspec.cli import main, read_config
from mrmspec.export import read_csv, write_csv
from mrmspec.spectra import mp_cdf

FAST_SOLVE = ["--grid", "32", "--mrm-grid", "512", "--ensemble", "100", "--lambda-points", "40",
              "--lambda-max", "9"]


def files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "manifest.cfg"}


def test_simulate_smoke(tmp_path):
    t0 = time.perf_counter()
    code = main(["simulate", "--n", "64", "--ensemble", "2", "--gamma2", "0.25", "--out-dir", str(tmp_path)])
    assert code == 0 and time.perf_counter() - t0 < 5
    meta, cols = read_csv(tmp_path / "eigenvalues.csv")
    assert cols["eigenvalue"].size == 128
    assert meta["gamma2"] == "0.25"
    _, hist = read_csv(tmp_path / "histogram.csv")
    assert hist["probability"].sum() == pytest.approx(1.0)


def test_console_script_version():
    out = subprocess.run([sys.executable, "-m", "mrmspec.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "mrmspec" in out.stdout


@pytest.mark.parametrize("argv", [
    ["simulate"],
    ["solve", "--tol", "0"],
    ["solve", "--q", "1.5"],
    ["solve", "--grid", "100"],
])
def test_usage_errors_exit_2(argv, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(argv + ["--out-dir", str(tmp_path)])
    assert exc.value.code == 2


def test_bad_config_exit_2(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("colour = red\n")
    with pytest.raises(SystemExit) as exc:
        main(["solve", "--config", str(cfg)])
    assert exc.value.code == 2


def test_fig2a_preset(tmp_path):
    assert main(["simulate", "--preset", "fig2a", "--out-dir", str(tmp_path)]) == 0
    meta, cols = read_csv(tmp_path / "eigenvalues.csv")
    assert cols["eigenvalue"].size == 8 * 1024
    assert set(cols["sample_id"]) == set(range(8))
    assert meta["gamma2"] == "0.25" and meta["tau"] == "0.25"


def test_series_preset_layout(tmp_path):
    code = main(["simulate", "--preset", "fig3", "--n", "16", "--ensemble", "1", "--out-dir", str(tmp_path)])
    assert code == 0
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["gamma2=0.0_tau=0.25", "gamma2=0.25_tau=0.25", "gamma2=0.5_tau=0.25"]


def test_simulate_thread_invariance(tmp_path):
    base = ["simulate", "--n", "48", "--ensemble", "6", "--gamma2", "0.3", "--save-returns"]
    main(base + ["--threads", "1", "--out-dir", str(tmp_path / "a")])
    main(base + ["--threads", "3", "--out-dir", str(tmp_path / "b")])
    assert files(tmp_path / "a") == files(tmp_path / "b")


def test_solve_thread_invariance(tmp_path):
    base = ["solve", "--gamma2", "0.25", *FAST_SOLVE, "--lambda-points", "12"]
    assert main(base + ["--threads", "1", "--out-dir", str(tmp_path / "a")]) == 0
    assert main(base + ["--threads", "4", "--out-dir", str(tmp_path / "b")]) == 0
    assert files(tmp_path / "a") == files(tmp_path / "b")


def test_manifest_rerun(tmp_path):
    main(["simulate", "--n", "32", "--ensemble", "2", "--gamma2", "0.2", "--seed", "9",
          "--out-dir", str(tmp_path / "a")])
    cfg = read_config(tmp_path / "a" / "manifest.cfg")
    assert cfg["seed"] == 9 and cfg["command"] == "simulate"
    main(["simulate", "--config", str(tmp_path / "a" / "manifest.cfg"), "--out-dir", str(tmp_path / "b")])
    assert files(tmp_path / "a") == files(tmp_path / "b")


def test_flags_override_config(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nn = 16\nensemble = 1\ngamma2 = 0.1\n")
    main(["simulate", "--config", str(cfg), "--gamma2", "0.2", "--out-dir", str(tmp_path / "o")])
    meta, _ = read_csv(tmp_path / "o" / "eigenvalues.csv")
    assert meta["gamma2"] == "0.2" and meta["n"] == "16"


def test_solve_outputs(tmp_path):
    assert main(["solve", "--gamma2", "0.0", *FAST_SOLVE, "--out-dir", str(tmp_path)]) == 0
    _, ups = read_csv(tmp_path / "upsilon.csv")
    _, dens = read_csv(tmp_path / "density.csv")
    assert ups["x"][0] == 0.0 and dens["lambda"].size == 40
    diag = json.loads((tmp_path / "diagnostics.json").read_text())
    assert diag["summary"]["converged_fraction"] == 1.0
    assert len(diag["points"]) == 41
    assert {"z", "iterations", "residual", "converged", "mu2", "clipped_embedding_mass"} <= set(diag["points"][0])
    assert diag["summary"]["upsilon_mass"] == pytest.approx(1.0, abs=0.03)


def test_solve_partial_exit_3(tmp_path):
    code = main(["solve", "--gamma2", "0.25", *FAST_SOLVE, "--max-iter", "1", "--out-dir", str(tmp_path)])
    assert code == 3
    _, ups = read_csv(tmp_path / "upsilon.csv")
    assert np.all(np.isnan(ups["density"]))


def test_compare_sim_vs_solve(tmp_path):
    main(["simulate", "--n", "256", "--ensemble", "2", "--out-dir", str(tmp_path / "sim")])
    main(["solve", *FAST_SOLVE, "--out-dir", str(tmp_path / "sol")])
    code = main(["compare", str(tmp_path / "sim"), str(tmp_path / "sol"), "--out-dir", str(tmp_path / "cmp")])
    assert code == 0
    report = json.loads((tmp_path / "cmp" / "compare.json").read_text())
    assert report["ks"] < 0.06
    assert [r["threshold"] for r in report["tail_mass"]] == [2.0, 4.0, 6.0, 8.0, 10.0]
    assert "KS distance" in (tmp_path / "cmp" / "compare.txt").read_text()


def test_compare_resampled_density(tmp_path):
    main(["solve", *FAST_SOLVE, "--lambda-points", "120", "--out-dir", str(tmp_path / "sol")])
    # Eigenvalues drawn from the exact MP law by inverse CDF.
    u = (np.arange(20000) + 0.5) / 20000
    grid = np.linspace(0, 4, 40001)
    lam = np.interp(u, mp_cdf(grid, 1.0), grid)
    (tmp_path / "sim").mkdir()
    write_csv(tmp_path / "sim" / "eigenvalues.csv", ["sample_id", "eigenvalue"], ((0, v) for v in lam))
    code = main(["compare", str(tmp_path / "sol"), str(tmp_path / "sim"), "--window", "0.05", "4"])
    assert code == 0
    from mrmspec.cli import compare

    report = compare(tmp_path / "sim", tmp_path / "sol", (0.05, 4.0))
    assert report["l1"] < 0.02
    assert report["ks"] < 0.02


def test_compare_two_solves_tail(tmp_path):
    for g in ("0.25", "0.5"):
        main(["solve", "--gamma2", g, *FAST_SOLVE, "--out-dir", str(tmp_path / g)])
    from mrmspec.cli import compare

    report = compare(tmp_path / "0.25", tmp_path / "0.5")
    row = next(r for r in report["tail_mass"] if r["threshold"] == 4.0)
    assert row["second"] > row["first"]


def test_compare_needs_solve(tmp_path):
    main(["simulate", "--n", "16", "--ensemble", "1", "--out-dir", str(tmp_path / "a")])
    with pytest.raises(SystemExit) as exc:
        main(["compare", str(tmp_path / "a"), str(tmp_path / "a")])
    assert exc.value.code == 2
