import csv
import io
import json
import shutil
import subprocess
import sys

import pytest

from faultline import adversary
from faultline.cli import ExperimentConfig, main, parse_pattern_file
from faultline.core import ConfigError, PatternSyntaxError, parse_pattern_text


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestParsePatternFile:
    def test_single_injection(self):
        assert len(parse_pattern_file("inject 0 1\n").injections) == 1

    def test_alternation_error_names_line(self):
        with pytest.raises(PatternSyntaxError) as exc:
            parse_pattern_file("inject 0 1\ncrash 1 0\ncrash 2 0\n", m=2)
        assert exc.value.lineno == 3 and "line 3" in str(exc.value)

    def test_inadmissible(self):
        with pytest.raises(ConfigError) as exc:
            parse_pattern_file("crash 1 0\n", m=1)
        assert "line 1" in str(exc.value)

    def test_machine_range(self):
        with pytest.raises(PatternSyntaxError) as exc:
            parse_pattern_file("inject 0 1\nrestart 1 4\n", m=2)
        assert exc.value.lineno == 2

    @pytest.mark.parametrize("kind", ["mlis", "phases", "random"])
    def test_generated_round_trip(self, kind, tmp_path, capsys):
        out = tmp_path / "p.txt"
        assert main(["gen-pattern", "--kind", kind, "--seed", "4", "--epochs", "2", "--horizon", "30",
                     "--out", str(out)]) == 0
        text = out.read_text()
        first = parse_pattern_file(text, m=3)
        again, _ = parse_pattern_text(text)
        assert first.events == again.events
        if kind == "random":
            src = adversary.build_random_pattern(4, 2, (1.0, 2.0), 30, 0.3, 1.0)
            assert len(src.events) == len(first.events)
            for a, b in zip(src.events, first.events):
                assert (a.kind, a.machine) == (b.kind, b.machine) and abs(a.t - b.t) < 1e-9


class TestCommands:
    def test_simulate_completes_everything(self, tmp_path, capsys):
        pat = tmp_path / "two.txt"
        pat.write_text("inject 0 1\ninject 0.5 2\n")
        out = tmp_path / "trace.csv"
        code = main(["simulate", "--pattern", str(pat), "--policy", "fifo", "--machines", "1", "--speedup", "1",
                     "--out", str(out)])
        assert code == 0
        trace = rows(out.read_text())
        assert list(trace[0]) == ["time", "machine", "event", "task", "size", "c_t"]
        assert float(trace[-1]["c_t"]) == 3.0
        assert "completed_load=3 injected_load=3" in capsys.readouterr().out

    def test_sweep_rows(self, capsys):
        assert main(["sweep", "--speedups", "1,2,3", "--policy", "m-lis"]) == 0
        assert len(rows(capsys.readouterr().out)) == 3

    def test_sweep_grid(self, capsys):
        assert main(["sweep", "--speedups", "1,2", "--rhos", "2,3", "--policy", "k-amortized"]) == 0
        assert len(rows(capsys.readouterr().out)) == 4

    def test_verify_mlis(self, capsys):
        assert main(["verify-mlis", "--epochs", "100"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[-1].startswith("PASS")
        assert "offline=11.6208574735 m-lis=11.5602484362" in out[1]
        assert len([line for line in out if line.startswith("epoch ")]) == 100

    def test_verify_mlis_fails_with_impossible_threshold(self, capsys):
        assert main(["verify-mlis", "--epochs", "3", "--max-ratio", "0.5"]) == 1
        assert capsys.readouterr().out.splitlines()[-1].startswith("FAIL")

    def test_verify_preamble(self, tmp_path, capsys):
        out = tmp_path / "suite.csv"
        assert main(["verify-preamble", "--patterns", "6", "--out", str(out)]) == 0
        table = rows(out.read_text())
        assert len(table) == 6 and {r["m"] for r in table} == {"1", "2", "3"}
        assert all(r["result"] == "PASS" for r in table)

    def test_compete_scripted_json(self, capsys):
        assert main(["compete", "--gen", "mlis", "--epochs", "5", "--format", "json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert set(doc["summary"]) >= {"final_ratio", "min_suffix_ratio", "slack_estimate", "duplicates",
                                       "lemma_violations"}
        assert doc["summary"]["final_ratio"] < 1
        assert list(doc["rows"][0]) == ["t", "c_alg", "c_base", "ratio"]

    def test_compete_against_oracle(self, tmp_path, capsys):
        pat = tmp_path / "p.txt"
        pat.write_text("inject 0 1\ninject 0 2\ncrash 1.5 1\n")
        assert main(["compete", "--pattern", str(pat), "--machines", "2", "--horizon", "4"]) == 0
        table = rows(capsys.readouterr().out)
        assert [r["c_base"] for r in table][-1] == "3"

    def test_compete_over_budget(self, capsys):
        code = main(["compete", "--gen", "random", "--machines", "2", "--horizon", "30"])
        assert code == 2
        assert "budget" in capsys.readouterr().err

    def test_oracle_json(self, tmp_path, capsys):
        pat = tmp_path / "p.txt"
        pat.write_text("inject 0 2\ninject 0 1\ncrash 3 0\n")
        assert main(["oracle", "--pattern", str(pat), "--machines", "1", "--horizon", "3"]) == 0
        assert json.loads(capsys.readouterr().out)["load"] == 3

    def test_fatal_invariant_exit_code(self, monkeypatch, capsys):
        from faultline import schedulers
        from faultline.core import InvariantViolation

        def boom(self, *args):
            raise InvariantViolation("forced")

        monkeypatch.setattr(schedulers.MLIS, "choose", boom)
        assert main(["simulate", "--gen", "random", "--horizon", "5"]) == 3
        assert "forced" in capsys.readouterr().err

    @pytest.mark.parametrize("argv", [
        ["simulate"],
        ["simulate", "--gen", "random", "--machines", "0"],
        ["simulate", "--gen", "random", "--speedup", "0.5"],
        ["simulate", "--gen", "random", "--sizes", "2,1"],
        ["simulate", "--gen", "random", "--policy", "k-amortized", "--rho", "2.5"],
        ["simulate", "--pattern", "/nonexistent/file"],
    ])
    def test_config_errors(self, argv, capsys):
        assert main(argv) == 2

    def test_experiment_config_validation(self):
        with pytest.raises(ConfigError):
            ExperimentConfig("simulate", fmt="xml")


def test_outputs_are_byte_identical(tmp_path):
    cmds = [
        ["simulate", "--gen", "random", "--seed", "7", "--machines", "3", "--horizon", "25"],
        ["compete", "--gen", "phases", "--policy", "rho-m-preamble", "--seed", "2", "--format", "json"],
        ["verify-mlis", "--epochs", "10"],
        ["verify-preamble", "--patterns", "4"],
        ["sweep", "--speedups", "1,2", "--rhos", "2,3", "--policy", "k-amortized", "--seed", "3"],
        ["gen-pattern", "--kind", "random", "--seed", "9"],
    ]
    for n, cmd in enumerate(cmds):
        outs = []
        for rep in range(2):
            path = tmp_path / f"{n}_{rep}.out"
            main(cmd + ["--out", str(path)])
            outs.append(path.read_bytes())
        assert outs[0] == outs[1] and outs[0], cmd


def test_console_script_installed(tmp_path):
    exe = shutil.which("faultline")
    cmd = [exe] if exe else [sys.executable, "-m", "faultline"]
    res = subprocess.run(cmd + ["sweep", "--speedups", "1"], capture_output=True, text=True, check=False)
    assert res.returncode == 0 and res.stdout.startswith("speedup,rho,policy")
