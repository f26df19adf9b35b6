import json
import subprocess
import sys

import pytest

from ttsa.cli import main
from ttsa.config import ExperimentConfig
from ttsa.errors import ConfigError, ReportError
from ttsa.experiment import emit_report


CONFIG = """\
scenario = "S1"
steps = 3000
seeds = [0, 1]
sigma = 0.1
analyses = ["deviation", "occupation", "disintegration"]
window = 2.0
window_starts = [100, 1000]
"""


def test_round_trip():
    cfg = ExperimentConfig.from_text(CONFIG)
    again = ExperimentConfig.from_text(cfg.to_text())
    assert again == cfg and again.hash() == cfg.hash()


def test_instance_table_round_trip():
    text = """\
steps = 100
[instance]
d = 1
s = 1
n_states = 1
h = ["-x0"]
g = ["-y0"]
kernel = [["1"]]
box_x = [[-1.0, 1.0]]
box_y = [[-1.0, 1.0]]
"""
    cfg = ExperimentConfig.from_text(text)
    assert cfg.problem().d == 1
    assert ExperimentConfig.from_text(cfg.to_text()) == cfg


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_text('scenario = "S1"\nsteps = 10\nstepz = 4\n')
    assert info.value.line == 3 and info.value.key == "stepz"
    assert "line 3" in str(info.value)


@pytest.mark.parametrize("text, key", [
    ('scenario = "S1"\nsteps = "many"\n', "steps"),
    ('scenario = "S1"\na_exp = 1.2\n', "a_exp"),
    ('scenario = "S1"\nanalyses = ["plots"]\n', "analyses"),
    ('steps = 5\n', "scenario"),
])
def test_bad_values_name_the_key(text, key):
    with pytest.raises(ConfigError) as info:
        ExperimentConfig.from_text(text)
    assert info.value.key == key


def test_run_smoke_and_report(tmp_path, capsys):
    cfg_path = tmp_path / "c.toml"
    cfg_path.write_text(CONFIG)
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    for name in ("manifest.json", "config.toml", "seed_0/trajectory.csv", "seed_0/deviation.csv",
                 "seed_1/residual_n1000.csv", "seed_1/disintegration.json"):
        assert (out / name).is_file(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_code"] == 0 and manifest["known_answers"]["x_star"] == [1 / 3]
    assert main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "target (x, y) = (0.3333333333, 0.1666666667)" in text
    data = json.loads((out / "report.json").read_text())
    assert data["target"] == [0.3333333333, 0.1666666667]
    # every reported number comes straight from an artifact
    last = (out / "seed_0" / "trajectory.csv").read_text().strip().splitlines()[-1].split(",")
    assert data["seeds"][0]["final_x"] == [float("%.10g" % float(last[1]))]


def test_same_config_twice_is_byte_identical(tmp_path):
    out = tmp_path / "r"
    args = ["simulate", "--scenario", "S3", "--steps", "2000", "--seed", "0", "5", "--out", str(out)]
    rels = ("seed_0/trajectory.csv", "seed_5/trajectory.ttsa", "config.toml")
    assert main(args) == 0
    first = {rel: (out / rel).read_bytes() for rel in rels}
    hashes = json.loads((out / "manifest.json").read_text())["artifacts"]
    assert main(args) == 0
    for rel in rels:
        assert (out / rel).read_bytes() == first[rel]
    assert json.loads((out / "manifest.json").read_text())["artifacts"] == hashes


def test_parallel_jobs_match_serial(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["simulate", "--scenario", "S2", "--steps", "1500", "--seed", "0", "1", "2"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(["--jobs", "2"] + args + ["--out", str(b)]) == 0
    for s in (0, 1, 2):
        assert (a / f"seed_{s}/trajectory.csv").read_bytes() == (b / f"seed_{s}/trajectory.csv").read_bytes()


def test_analyze_after_simulate(tmp_path):
    out = tmp_path / "r"
    assert main(["simulate", "--scenario", "S1", "--steps", "2000", "--seed", "0", "--out", str(out)]) == 0
    assert main(["analyze", "--dir", str(out), "--what", "occupation", "--window", "1", "--starts", "100"]) == 0
    assert (out / "seed_0" / "residual_n100.csv").is_file()


def test_invalid_schedule_exit_code(tmp_path, capsys):
    code = main(["simulate", "--scenario", "S1", "--a-exp", "1.2", "--out", str(tmp_path / "x")])
    assert code == 2
    assert "robbins_monro_a" in capsys.readouterr().err


def test_stability_violation_exit_code(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('scenario = "S2"\nsteps = 500\nbudget = 0.5\n')
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 3


def test_missing_window_exit_code(tmp_path):
    out = tmp_path / "r"
    main(["simulate", "--scenario", "S1", "--steps", "200", "--seed", "0", "--out", str(out)])
    assert main(["analyze", "--dir", str(out), "--what", "occupation", "--starts", "100"]) == 4


def test_inclusion_command(tmp_path, capsys):
    assert main(["inclusion", "--scenario", "S2", "--out", str(tmp_path)]) == 0
    assert "class 2" in capsys.readouterr().out
    assert (tmp_path / "chain.json").is_file() and (tmp_path / "inclusion.csv").is_file()


def test_report_on_empty_dir(tmp_path):
    with pytest.raises(ReportError):
        emit_report(tmp_path)
    assert main(["report", str(tmp_path)]) == 2


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "ttsa.cli", "report", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 2 and "error" in proc.stderr
