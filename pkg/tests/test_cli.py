import json

import pytest

from cdac.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main

SMALL = ["--task", "simple", "--c", "0.1", "--beta", "0.9", "--grid-n", "30"]


class TestCli:
    def test_solve_and_export(self, tmp_path, capsys):
        table = tmp_path / "t.cdac"
        assert main(["solve", *SMALL, "--out", str(table)]) == EXIT_OK
        assert "sweeps" in capsys.readouterr().out
        out = tmp_path / "m.csv"
        pgm = tmp_path / "m.pgm"
        code = main(["export-map", *SMALL, "--table", str(table), "--out", str(out),
                     "--pgm", str(pgm)])
        assert code == EXIT_OK
        assert len(out.read_text().splitlines()) == 1 + 496
        assert pgm.read_bytes().startswith(b"P5\n31 31\n255\n")

    def test_export_infomax(self, tmp_path):
        out = tmp_path / "im.csv"
        assert main(["export-map", *SMALL, "--method", "infomax", "--threshold", "0.8",
                     "--out", str(out)]) == EXIT_OK
        assert out.read_text().startswith("p1,p2,p3,action,label\n")

    def test_table_mismatch_is_usage_error(self, tmp_path, capsys):
        table = tmp_path / "t.cdac"
        main(["solve", *SMALL, "--out", str(table)])
        code = main(["simulate", *SMALL[:-1], "31", "--table", str(table), "--trials", "10"])
        assert code == EXIT_USAGE
        assert "grid_n" in capsys.readouterr().err

    @pytest.mark.parametrize("method,extra", [("cdac", []), ("always-stop", []),
                                              ("infomax", ["--threshold", "0.8"]),
                                              ("greedy-map", ["--threshold", "0.8"])])
    def test_simulate(self, capsys, method, extra):
        code = main(["simulate", *SMALL, "--trials", "200", "--method", method, *extra])
        assert code == EXIT_OK
        assert "accuracy" in capsys.readouterr().out

    def test_simulate_needs_threshold(self):
        assert main(["simulate", *SMALL, "--method", "infomax"]) == EXIT_USAGE

    def test_compare_csv(self, tmp_path, capsys):
        out = tmp_path / "r.csv"
        code = main(["compare", *SMALL, "--trials", "1000", "--out", str(out)])
        assert code == EXIT_OK
        text = capsys.readouterr().out
        assert "C-DAC" in text and "infomax" in text
        assert out.read_text().splitlines()[0].startswith("policy,threshold,matched")

    def test_config_file_with_override(self, tmp_path, capsys):
        cfg = tmp_path / "env.json"
        cfg.write_text(json.dumps({"task": "simple", "c": 0.1, "beta": 0.9, "grid_n": 30}))
        assert main(["simulate", "--config", str(cfg), "--trials", "100"]) == EXIT_OK
        assert "trials:    100" in capsys.readouterr().out

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "env.json"
        cfg.write_text(json.dumps({"task": "simple", "c": 0.1, "speed": 3}))
        assert main(["solve", "--config", str(cfg)]) == EXIT_USAGE

    @pytest.mark.parametrize("argv", [[], ["solve", "--bogus"], ["solve", "--task", "simple"],
                                      ["solve", *SMALL, "--c", "-1"]])
    def test_usage_errors(self, argv):
        assert main(argv) == EXIT_USAGE

    def test_approx_reports_nonconvergence(self, capsys):
        code = main(["approx", *SMALL, "--method", "rbf", "--samples", "200"])
        captured = capsys.readouterr()
        assert code == EXIT_NUMERICAL
        assert "agreement with exact policy" in captured.out
        assert "did not converge" in captured.err
