import csv

import numpy as np
import pytest
import yaml

from graphtt.cli import main
from graphtt.io import save_png, save_tensor

SMALL = {"synthetic": {"shape": [6, 6, 6], "ranks": [1, 2, 2, 1]}, "snr_db": 20, "missing_rate": 0.3,
         "ranks": [1, 2, 2, 1], "max_iters": 5, "trials": 1}


def write_config(path, **extra):
    cfg = dict(SMALL, **extra)
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_flags_override_file_and_config_is_echoed(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", beta0=1.0, solver="opt")
    out = tmp_path / "out"
    assert main(["synth-bench", "--config", cfg, "--beta0", "0.25", "--out", str(out)]) == 0
    eff = yaml.safe_load((out / "effective_config.yaml").read_text())
    assert eff["beta0"] == 0.25
    assert eff["solver"] == "opt"
    assert eff["synthetic"]["shape"] == [6, 6, 6]


def test_single_cell_gives_one_row(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", solver="opt")
    assert main(["synth-bench", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = read_rows(tmp_path / "o" / "bench.csv")
    assert rows[0] == ["trial", "snr", "mr", "solver", "param", "final_rse", "iters", "seconds"]
    assert len(rows) == 2


@pytest.mark.parametrize("solver", ["opt", "vi", "baseline"])
def test_rerun_is_identical_apart_from_timing(tmp_path, solver):
    cfg = write_config(tmp_path / "c.yaml", solver=solver, trials=2)
    bodies = []
    for run in ("a", "b"):
        assert main(["synth-bench", "--config", cfg, "--out", str(tmp_path / run)]) == 0
        bodies.append([r[:-1] for r in read_rows(tmp_path / run / "bench.csv")])
    assert bodies[0] == bodies[1]
    assert len(bodies[0]) == 3


def test_grid_expands_cells(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", grid={"solver": ["opt", "vi"], "beta0": [0.1, 1.0],
                                                  "init_rank": [2], "snr_db": [10, 20]})
    assert main(["synth-bench", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = read_rows(tmp_path / "o" / "bench.csv")[1:]
    assert len(rows) == 2 * 2 + 2
    assert {r[3] for r in rows} == {"opt", "vi"}


def test_missing_input_is_reported(tmp_path, capsys):
    code = main(["complete", "--input", str(tmp_path / "nope.png"), "--out", str(tmp_path / "o")])
    assert code != 0
    assert "nope.png" in capsys.readouterr().err


def test_missing_config_is_reported(tmp_path, capsys):
    assert main(["synth-bench", "--config", str(tmp_path / "none.yaml")]) != 0
    assert "none.yaml" in capsys.readouterr().err


def test_complete_png(tmp_path):
    rng = np.random.default_rng(0)
    img = np.clip(0.5 + 0.1 * rng.standard_normal((12, 10, 3)), 0, 1)
    save_png(tmp_path / "in.png", img)
    out = tmp_path / "o"
    code = main(["complete", "--input", str(tmp_path / "in.png"), "--solver", "opt", "--ranks", "1,3,3,1",
                 "--missing-rate", "0.5", "--max-iters", "3", "--out", str(out)])
    assert code == 0
    for name in ("recovered.png", "metrics.csv", "convergence.csv", "effective_config.yaml"):
        assert (out / name).is_file()
    rows = read_rows(out / "metrics.csv")
    assert rows[0] == ["name", "rse", "psnr", "ssim"]
    assert rows[1][0] == "in"


def test_complete_tensor_with_mask(tmp_path):
    rng = np.random.default_rng(1)
    X = rng.standard_normal((5, 4, 3))
    mask = (rng.random(X.shape) < 0.8).astype(float)
    save_tensor(tmp_path / "x.gtt", X)
    save_tensor(tmp_path / "m.gtt", mask)
    out = tmp_path / "o"
    code = main(["complete", "--input", str(tmp_path / "x.gtt"), "--mask", str(tmp_path / "m.gtt"),
                 "--solver", "vi", "--ranks", "1,2,2,1", "--max-iters", "3", "--out", str(out)])
    assert code == 0
    assert (out / "completed.gtt").is_file()


def test_mask_shape_mismatch(tmp_path, capsys):
    save_tensor(tmp_path / "x.gtt", np.ones((5, 4, 3)))
    save_tensor(tmp_path / "m.gtt", np.ones((5, 4)))
    code = main(["complete", "--input", str(tmp_path / "x.gtt"), "--mask", str(tmp_path / "m.gtt"),
                 "--out", str(tmp_path / "o")])
    assert code != 0
    assert "does not match" in capsys.readouterr().err


def test_compare_updates_guard(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.yaml", opt={"core_cap": 50})
    code = main(["compare-updates", "--config", cfg, "--ranks", "1,3,3,1", "--out", str(tmp_path / "o")])
    assert code != 0
    err = capsys.readouterr().err
    assert "54x54" in err and "6*3*3" in err
    assert not (tmp_path / "o" / "compare_updates.csv").exists()


def test_compare_updates_writes_both_kinds(tmp_path):
    cfg = write_config(tmp_path / "c.yaml", beta0=0.5)
    assert main(["compare-updates", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    rows = read_rows(tmp_path / "o" / "compare_updates.csv")
    assert rows[0] == ["update", "sweep", "objective", "rse", "seconds"]
    assert {r[0] for r in rows[1:]} == {"fiber", "core"}


def test_metrics_command(tmp_path):
    X = np.arange(24, dtype=float).reshape(2, 3, 4) + 1
    save_tensor(tmp_path / "ref.gtt", X)
    save_tensor(tmp_path / "est.gtt", X * 1.1)
    out = tmp_path / "o"
    assert main(["metrics", "--reference", str(tmp_path / "ref.gtt"), "--estimate", str(tmp_path / "est.gtt"),
                 "--out", str(out)]) == 0
    rows = read_rows(out / "metrics.csv")
    assert float(rows[1][1]) == pytest.approx(0.1)


def test_bad_thread_count(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("GRAPHTT_THREADS", "many")
    cfg = write_config(tmp_path / "c.yaml")
    assert main(["synth-bench", "--config", cfg, "--out", str(tmp_path / "o")]) != 0
    assert "GRAPHTT_THREADS" in capsys.readouterr().err
