import json
import subprocess
import sys

import pytest

from carrytail.cli import main, parse_range


def cli(*args):
    return subprocess.run([sys.executable, "-m", "carrytail", *args], capture_output=True, text=True)


def test_run_is_byte_identical_across_invocations():
    a = cli("run", "--seed", "42", "--views", "12")
    b = cli("run", "--seed", "42", "--views", "12")
    assert a.returncode == 0 and a.stdout == b.stdout
    doc = json.loads(a.stdout)
    assert doc["seed"] == 42 and doc["commits_total"] == 10


def test_run_with_preset_and_protocol(capsys):
    assert main(["run", "--protocol", "hotstuff2", "--adversary", "tail-fork", "--views", "12"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["variant"] == "hotstuff2" and doc["forked_honest_tails"] >= 2


def test_run_scenario_file_and_trace(tmp_path, capsys):
    sc = tmp_path / "s.toml"
    sc.write_text('views = 8\n[protocol]\nn = 7\nf = 2\n[adversary]\nbyzantine = [6]\ndefault = "silent"\n')
    trace = tmp_path / "trace.txt"
    assert main(["run", "--scenario", str(sc), "--trace", str(trace)]) == 0
    assert json.loads(capsys.readouterr().out)["n"] == 7
    lines = trace.read_text().splitlines()
    assert lines[0].startswith("#") and len(lines[1].split()) == 6


def test_adversary_file(tmp_path, capsys):
    adv = tmp_path / "a.toml"
    adv.write_text('[adversary]\nbyzantine = [3]\n[adversary.view.3]\nbehavior = "equivocate"\n')
    assert main(["run", "--adversary", str(adv), "--views", "8"]) == 0
    assert json.loads(capsys.readouterr().out)["actual_faults"] == 1


@pytest.mark.parametrize("args", [
    ["run", "--adversary", "teleport"],
    ["run", "--views", "1"],
    ["run", "--scenario", "/nonexistent.toml"],
    ["check", "--n", "5"],
    ["sweep", "--n", "6"],
    ["replay", "--trace", "/nonexistent.json"],
])
def test_configuration_errors_exit_2(args, capsys):
    assert main(args) == 2
    assert "config error" in capsys.readouterr().err


def test_bad_range_is_rejected_by_the_parser():
    with pytest.raises(SystemExit) as exc:
        main(["sweep", "--rho", "5..2"])
    assert exc.value.code == 2


def test_parse_range():
    assert parse_range("1..4") == [1, 2, 3, 4]
    assert parse_range("6") == [6]
    assert parse_range("1,3") == [1, 3]


def test_sweep_csv_output(tmp_path):
    out = tmp_path / "sweep.csv"
    assert main(["sweep", "--rho", "1..2", "--worst-case", "--output", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "# seed=0" and lines[2].startswith("1,carry,1/3,")


def test_check_clean_then_canary_and_replay(tmp_path):
    clean = tmp_path / "clean.json"
    assert main(["check", "--views", "5", "--pre-gst-views", "1", "--output", str(clean)]) == 0
    doc = json.loads(clean.read_text())
    assert doc["violations"] == [] and doc["exhausted"] and doc["bounds"]["views"] == 5

    bad = tmp_path / "bad.json"
    assert main(["check", "--views", "6", "--quorum", "2", "--output", str(bad)]) == 1
    doc = json.loads(bad.read_text())
    assert doc["violations"]
    one = {"bounds": doc["bounds"], "trace": doc["violations"][0]["trace"]}
    single = tmp_path / "one.json"
    single.write_text(json.dumps(one))
    out = tmp_path / "replayed.json"
    assert main(["replay", "--trace", str(single), "--output", str(out)]) == 1
    assert json.loads(out.read_text())["results"][0]["violations"]
