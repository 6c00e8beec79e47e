import json
import subprocess
import sys

import numpy as np
import pytest

from nllpo.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, build_parser, main, resolve_config

SMALL = ["--seeds", "1", "--set", "epochs=2", "--set", "count=200", "--set", "hidden=8"]


def test_success_writes_outputs(tmp_path, capsys):
    code = main(["synth", "--loss", "pg-heuristic", "--lambda", "0.5", "--out", str(tmp_path), *SMALL])
    assert code == EXIT_OK
    assert "synth pg-heuristic over 1 seed(s)" in capsys.readouterr().out
    config = json.loads((tmp_path / "config.json").read_text())
    assert config["lam"] == 0.5 and config["loss"] == "pg-heuristic"
    assert (tmp_path / "seed_0" / "metrics.jsonl").exists()


def test_closed_form_check(capsys):
    assert main(["closed-form-check"]) == EXIT_OK
    assert capsys.readouterr().out.startswith("closed-form-check:")


@pytest.mark.parametrize(
    "argv",
    [
        ["synth", "--lambda", "-1"],
        ["synth", "--set", "bogus=1"],
        ["synth", "--set", "noequals"],
        ["synth", "--config", "/nonexistent/run.cfg"],
        ["classify", "--set", "csv=x.csv"],
    ],
)
def test_config_errors_exit_2(argv, capsys):
    assert main(argv) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_argparse_errors_exit_2():
    with pytest.raises(SystemExit) as info:
        main(["synth", "--loss", "hinge"])
    assert info.value.code == EXIT_CONFIG


def test_data_errors_exit_3(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,label\n1,0\nx,1\n")
    argv = ["classify", "--seeds", "1", "--set", f"csv={bad}", "--set", "target=label"]
    assert main(argv) == EXIT_DATA
    assert "row 3" in capsys.readouterr().err
    assert main(["classify", "--set", f"csv={tmp_path / 'missing.csv'}", "--set", "target=label"]) == EXIT_DATA


def test_numerical_failure_exit_4(capsys):
    with np.errstate(all="ignore"):
        code = main(["synth", *SMALL, "--set", "optimizer=sgd", "--set", "lr=1e8"])
    assert code == EXIT_NUMERICAL
    assert "numerical failure" in capsys.readouterr().err


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("loss = nll\nlambda = 2.0\nseed = 3\nepochs = 7\n")
    args = build_parser().parse_args(["synth", "--config", str(cfg), "--lambda", "0.25", "--set", "epochs=9"])
    run = resolve_config(args)
    assert (run.loss, run.lam, run.seed, run.epochs) == ("nll", 0.25, 3, 9)


def test_console_script_entry_point():
    out = subprocess.run(
        [sys.executable, "-m", "nllpo.cli", "closed-form-check"], capture_output=True, text=True, check=False
    )
    assert out.returncode == 0 and "closed-form-check" in out.stdout
