"""CLI tests: exit codes, output shape, determinism."""

import json
from importlib import resources

import pytest

from netkf.cli import main


def _bundled_path(name: str) -> str:
    return str(resources.files("netkf") / "scenarios" / f"{name}.scn")


class TestCheck:
    def test_certified_exit_zero(self, capsys):
        code = main(["check", "--scenario", _bundled_path("certified_markov")])
        out = capsys.readouterr().out
        assert code == 0
        assert "verdict: certified" in out
        assert "rank_tolerance: 1e-10" in out

    def test_not_certified_exit_two(self, capsys):
        code = main(["check", "--scenario", _bundled_path("divergent_all_drop")])
        out = capsys.readouterr().out
        assert code == 2
        assert "not-certified" in out

    def test_missing_scenario_exit_one(self, capsys):
        code = main(["check", "--scenario", "/does/not/exist.scn"])
        assert code == 1
        assert "error" in capsys.readouterr().err

    def test_report_files_written(self, tmp_path, capsys):
        code = main(
            [
                "check",
                "--scenario",
                _bundled_path("certified_markov"),
                "--out",
                str(tmp_path),
            ]
        )
        assert code == 0
        assert (tmp_path / "certified_markov_markov_report.txt").exists()
        assert (tmp_path / "certified_markov_markov_rates.csv").exists()

    def test_tolerance_override(self, capsys):
        code = main(
            [
                "check",
                "--scenario",
                _bundled_path("certified_markov"),
                "--tolerance",
                "1e-6",
            ]
        )
        out = capsys.readouterr().out
        assert code == 0
        assert "rank_tolerance: 1e-06" in out


class TestSimulate:
    def test_byte_identical_reruns(self, tmp_path, capsys):
        args = [
            "simulate",
            "--scenario",
            _bundled_path("certified_markov"),
            "--trials",
            "5",
            "--horizon",
            "60",
            "--seed",
            "7",
        ]
        outputs = []
        for sub in ("a", "b"):
            d = tmp_path / sub
            code = main(args + ["--out", str(d)])
            assert code == 0
            outputs.append((d / "certified_markov_series.csv").read_bytes())
        assert outputs[0] == outputs[1]
        assert b"mean_trP" in outputs[0]


class TestRankSet:
    def test_five_sensor_patterns(self, capsys):
        code = main(["rank-set", "--scenario", _bundled_path("five_sensor_tree")])
        out = capsys.readouterr().out
        assert code == 0
        assert "full-rank patterns: 9" in out
        assert "01011" in out and "11111" in out


class TestMuTable:
    def test_grid_emitted(self, capsys):
        code = main(["mu-table", "--scenario", _bundled_path("single_sensor_semi_markov")])
        out = capsys.readouterr().out
        assert code == 0
        lines = [l for l in out.strip().splitlines() if l]
        # header + 2 states x 7 holding times
        assert len(lines) == 1 + 14
        assert lines[0].startswith("state,period_offset,holding_time")

    def test_markov_scenario_rejected(self, capsys):
        code = main(["mu-table", "--scenario", _bundled_path("certified_markov")])
        assert code == 1


class TestReproPaper:
    def test_golden_suite_passes(self, capsys):
        code = main(["repro-paper"])
        out = capsys.readouterr().out
        assert code == 0
        assert "[FAIL]" not in out
        assert "7/7 golden checks passed" in out


class TestUsage:
    def test_unknown_flag(self, capsys):
        code = main(["check", "--scenario", "x.scn", "--bogus"])
        assert code == 1

    def test_no_command(self, capsys):
        assert main([]) == 1
