import builtins
import csv
import os
import shutil
import subprocess
import sys

import pytest

from report_fixtures import HORIZON_MS, square_record, write_bench, write_run
from reports import cli, figures, loader

SHIM = os.path.join(os.path.dirname(__file__), "..", "plot_all")


def run_cli(capsys, *argv):
    code = cli.main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def snapshot(paths):
    state = {}
    for root in paths:
        for base, _dirs, files in os.walk(root):
            for name in files:
                p = os.path.join(base, name)
                with open(p, "rb") as fh:
                    state[p] = fh.read()
    return state


def test_plot_all_end_to_end(seed_trio, tmp_path, capsys):
    write_bench(os.path.join(seed_trio[0], "bench.csv"),
                {"horizon": HORIZON_MS})
    out = tmp_path / "figs"
    code, stdout, _ = run_cli(capsys, *seed_trio, "--out", str(out))
    assert code == 0
    listed = stdout.splitlines()
    assert str(out / "learning_curves.png") in listed
    assert str(out / "learning_summary.csv") in listed
    assert str(out / "complexity.png") in listed
    assert (out / "complexity_summary.csv").is_file()


def test_plot_all_renders_histories_per_run(seed_trio, squares_run, tmp_path,
                                            capsys):
    out = tmp_path / "figs"
    code, stdout, _ = run_cli(capsys, seed_trio[0], squares_run,
                              "--out", str(out))
    assert code == 0
    # only the run with a history gets a safe-set figure, tagged by name
    assert (out / "safe_set_evolution_run_squares.png").is_file()
    assert not (out / "safe_set_evolution_run_s0.png").exists()


def test_plot_all_never_writes_into_run_dirs(seed_trio, squares_run, tmp_path,
                                             capsys, monkeypatch):
    run_dirs = [seed_trio[0], squares_run]
    before = snapshot(run_dirs)
    real_open = builtins.open
    opened = []

    def spy(file, mode="r", *args, **kwargs):
        opened.append((str(file), mode))
        return real_open(file, mode, *args, **kwargs)

    monkeypatch.setattr(builtins, "open", spy)
    code, _, _ = run_cli(capsys, *run_dirs, "--out", str(tmp_path / "figs"))
    monkeypatch.setattr(builtins, "open", real_open)
    assert code == 0
    prefixes = tuple(os.path.abspath(d) for d in run_dirs)
    for path, mode in opened:
        if os.path.abspath(path).startswith(prefixes):
            assert mode in ("r", "rb"), f"wrote {path} with mode {mode}"
    assert snapshot(run_dirs) == before


def test_missing_run_dir_exits_2(tmp_path, capsys):
    code, _, err = run_cli(capsys, str(tmp_path / "gone"),
                           "--out", str(tmp_path / "figs"))
    assert code == 2
    assert "error:" in err and "not a directory" in err


def test_schema_mismatch_exits_2(seed_trio, tmp_path, capsys):
    bad = os.path.join(seed_trio[0], "epochs.csv")
    rows = list(csv.reader(open(bad)))
    rows[0][1] = "score"
    with open(bad, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    code, _, err = run_cli(capsys, seed_trio[0], "--out",
                           str(tmp_path / "figs"))
    assert code == 2
    assert "epochs.csv" in err


def test_explicit_bench_flag(seed_trio, bench_csv, tmp_path, capsys):
    out = tmp_path / "figs"
    code, stdout, _ = run_cli(capsys, seed_trio[0], "--bench", bench_csv,
                              "--out", str(out))
    assert code == 0
    assert str(out / "complexity.png") in stdout.splitlines()


def test_shim_runs_standalone(seed_trio, tmp_path):
    out = tmp_path / "figs"
    proc = subprocess.run([sys.executable, SHIM, *seed_trio, "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (out / "learning_curves.png").is_file()


def micro_train(out_dir: str, cfg_path: str) -> None:
    """Drive the trainer CLI end to end at a tiny budget."""
    with open(cfg_path, "w") as fh:
        fh.write("env_kind = pendulum\n"
                 "epochs = 2\n"
                 "steps_per_epoch = 25\n"
                 "ensemble_size = 1\n"
                 "horizon = 3\n"
                 "delay = 1\n"
                 "use_prior = true\n"
                 "prior_offset = 0.2\n"
                 "init_steps = 1200\n"
                 "pretrain_epochs = 2\n"
                 "model_train_epochs = 3\n"
                 "model_refit_epochs = 1\n"
                 "model_rollouts = 20\n"
                 "policy_updates = 1\n")
    trainer = shutil.which("tubecert")
    assert trainer, "trainer CLI must be on PATH for the integration check"
    proc = subprocess.run([trainer, "train", "--config", cfg_path,
                           "--out-dir", out_dir, "--seed", "3"],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr


def test_real_run_schema_and_area_growth(tmp_path):
    # a real (tiny) training run must load cleanly and its safe set must
    # not shrink between the first and last epoch
    run_dir = str(tmp_path / "run")
    micro_train(run_dir, str(tmp_path / "micro.cfg"))
    run = loader.load_run(run_dir)
    assert run.safe_sets

    out = tmp_path / "figs"
    out.mkdir()
    figures.plot_learning_curves([run], str(out))
    res = figures.plot_safe_set_evolution(run, str(out))
    with open(res["summary"], newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    areas = [float(r[1]) for r in rows]
    assert len(areas) == 3
    assert areas[-1] >= areas[0]
