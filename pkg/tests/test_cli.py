import json

import numpy as np
import pytest

from munic.cli import main
from munic.power import ConfigError, parse_config, rows_to_csv, run_power


def write_csv(path, X, header=None):
    np.savetxt(path, X, delimiter=",", header=header or "", comments="")
    return str(path)


SPHERE_CFG = """\
test=sphere
n=30
p=2
replications=40
R=99
seed=5
alternative.family=vmf
alternative.kappa=0,2
"""


class TestTestCommand:
    def test_uniform_accept_and_json(self, tmp_path, rng, capsys):
        path = write_csv(tmp_path / "u.csv", rng.random((40, 3)))
        code = main(["test", "uniform", "--input", path, "--reps", "99", "--no-cache",
                     "--json", "--seed", "1"])
        out = json.loads(capsys.readouterr().out)
        assert code in (0, 1)
        assert code == int(out["m"]["reject"])
        assert out["test_kind"] == "uniform"
        assert len(out["subsets"]) == 7

    def test_reject_exit_one(self, tmp_path, rng):
        path = write_csv(tmp_path / "c.csv", 0.1 * rng.random((60, 2)))
        assert main(["test", "uniform", "--input", path, "--reps", "99", "--no-cache"]) == 1

    def test_header_and_family(self, tmp_path, rng, capsys):
        path = write_csv(tmp_path / "h.csv", rng.random((30, 3)), header="a,b,c")
        assert main(["test", "uniform", "--input", path, "--header", "--reps", "99",
                     "--no-cache", "--family", "min2", "--json"]) in (0, 1)
        out = json.loads(capsys.readouterr().out)
        assert len(out["subsets"]) == 4

    def test_sphere_non_unit_rows(self, tmp_path, capsys):
        path = write_csv(tmp_path / "s.csv", np.array([[1.0, 0, 0], [0.5, 0.5, 0]]))
        assert main(["test", "sphere", "--input", path, "--reps", "99", "--no-cache"]) == 2
        assert "error" in capsys.readouterr().err

    def test_missing_and_malformed(self, tmp_path):
        assert main(["test", "uniform", "--input", str(tmp_path / "nope.csv")]) == 2
        bad = tmp_path / "bad.csv"
        bad.write_text("0.1,0.2\n0.3,x\n")
        assert main(["test", "uniform", "--input", str(bad), "--no-cache"]) == 2
        ragged = tmp_path / "ragged.csv"
        ragged.write_text("0.1,0.2\n0.3\n")
        assert main(["test", "uniform", "--input", str(ragged), "--no-cache"]) == 2

    def test_usage_errors(self, tmp_path, rng):
        path = write_csv(tmp_path / "u.csv", rng.random((10, 2)))
        assert main(["test", "bogus", "--input", path]) == 2
        assert main(["test", "uniform", "--input", path, "--alpha", "1.5", "--no-cache"]) == 2
        assert main(["test", "uniform", "--input", path, "--threads", "0"]) == 2
        assert main([]) == 2

    def test_cache_reuse_identical(self, tmp_path, rng, capsys):
        path = write_csv(tmp_path / "u.csv", rng.random((25, 2)))
        args = ["test", "uniform", "--input", path, "--reps", "99", "--json",
                "--cache", str(tmp_path / "cache")]
        main(args)
        first = capsys.readouterr().out
        assert any((tmp_path / "cache").iterdir())
        main(args)
        assert capsys.readouterr().out == first


class TestSimulateNull:
    def test_round_trip_matches_inline(self, tmp_path, rng, capsys):
        out = tmp_path / "t.tbl"
        assert main(["simulate-null", "uniform", "--n", "30", "--p", "2", "--reps", "99",
                     "--seed", "3", "--out", str(out), "--threads", "1"]) == 0
        path = write_csv(tmp_path / "u.csv", rng.random((30, 2)))
        capsys.readouterr()
        main(["test", "uniform", "--input", path, "--reps", "99", "--seed", "3", "--json",
              "--table", str(out)])
        with_table = json.loads(capsys.readouterr().out)
        main(["test", "uniform", "--input", path, "--reps", "99", "--seed", "3", "--json",
              "--no-cache"])
        inline = json.loads(capsys.readouterr().out)
        assert with_table == inline

    def test_rerun_byte_identical(self, tmp_path):
        a, b = tmp_path / "a.tbl", tmp_path / "b.tbl"
        for out, th in ((a, "1"), (b, "2")):
            main(["simulate-null", "independence", "--n", "20", "--p", "3", "--reps", "130",
                  "--seed", "9", "--out", str(out), "--threads", th])
        assert a.read_bytes() == b.read_bytes()

    def test_rejections(self, tmp_path):
        out = str(tmp_path / "x.tbl")
        assert main(["simulate-null", "normal", "--n", "20", "--p", "2", "--out", out]) == 2
        assert main(["simulate-null", "elliptic", "--n", "20", "--p", "2", "--out", out]) == 2
        assert main(["simulate-null", "isotropy", "--n", "20", "--p", "2", "--collapse",
                     "--out", out]) == 2

    def test_table_mismatch(self, tmp_path, rng):
        out = tmp_path / "t.tbl"
        main(["simulate-null", "uniform", "--n", "30", "--p", "2", "--reps", "99",
              "--out", str(out)])
        path = write_csv(tmp_path / "u.csv", rng.random((31, 2)))
        assert main(["test", "uniform", "--input", path, "--reps", "99",
                     "--table", str(out)]) == 2
        assert main(["test", "sphere", "--input", path, "--reps", "99",
                     "--table", str(out)]) == 2


class TestPower:
    def test_config_parse(self):
        cfg = parse_config(SPHERE_CFG)
        assert cfg.grid == [0.0, 2.0] and cfg.grid_key == "kappa"
        assert cfg.test_kind == "sphere" and cfg.R == 99

    @pytest.mark.parametrize("text", [
        SPHERE_CFG.replace("n=30", "n=30,40"),
        SPHERE_CFG + "alternative.bogus=1,2\n",
        SPHERE_CFG.replace("test=sphere", "test=nope"),
        SPHERE_CFG.replace("vmf", "unknown"),
        SPHERE_CFG.replace("alternative.kappa=0,2", "alternative.kappa=-1"),
        SPHERE_CFG + "colour=red\n",
        SPHERE_CFG + "n=4\n",
        "test=sphere\n",
        SPHERE_CFG + "junk\n",
    ])
    def test_config_errors(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_power_rows(self):
        rows = run_power(parse_config(SPHERE_CFG))
        assert [r["variant"] for r in rows] == ["m", "s", "m_h2", "s_h2"] * 2
        for r in rows:
            np.testing.assert_allclose(r["mc_stderr"],
                                       np.sqrt(r["power"] * (1 - r["power"]) / 40))
        # kappa = 2 on the unit sphere in R^3 is detected far above the level
        assert rows[4]["power"] > 0.5

    def test_cli_thread_invariance(self, tmp_path, capsys):
        cfg = tmp_path / "s.cfg"
        cfg.write_text(SPHERE_CFG)
        outs = []
        for th in ("1", "2"):
            out = tmp_path / f"p{th}.csv"
            assert main(["power", "--config", str(cfg), "--out", str(out),
                         "--threads", th]) == 0
            outs.append(out.read_text())
        assert outs[0] == outs[1]
        assert outs[0].splitlines()[0] == "parameter,variant,power,replications,mc_stderr"
        assert main(["power", "--config", str(cfg), "--out", "-"]) == 0
        assert capsys.readouterr().out == outs[0]

    def test_normal_power_thread_invariance(self):
        cfg = parse_config("test=normal\nn=20\np=2\nreplications=6\nR=99\nseed=2\n"
                           "alternative.family=multivariate_t\nalternative.df=3\n")
        assert rows_to_csv(run_power(cfg, threads=1)) == rows_to_csv(run_power(cfg, threads=2))

    def test_missing_config(self, tmp_path):
        assert main(["power", "--config", str(tmp_path / "none"), "--out", "-"]) == 2
