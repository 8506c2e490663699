import csv
import json
import math

import numpy as np
import pytest

from trapgibbs.harness import cli
from trapgibbs.harness import config as cf
from trapgibbs.harness import records as rc


# ---------------------------------------------------------------- parsers


def test_parse_bool():
    assert cf.parse_bool("yes") and cf.parse_bool("1") and cf.parse_bool("TRUE")
    assert not cf.parse_bool("off") and not cf.parse_bool("0")
    with pytest.raises(cf.ConfigError):
        cf.parse_bool("maybe")


def test_parse_lists():
    assert cf.parse_ints("64, 128,256") == [64, 128, 256]
    assert cf.parse_floats("0.5,1e-3") == [0.5, 1e-3]
    assert cf.parse_floats("3:7:0.5") == [3.0, 3.5, 4.0, 4.5, 5.0, 5.5, 6.0, 6.5, 7.0]
    assert cf.parse_floats("0:1:0.3") == [0.0, 0.3, 0.6, 0.9]
    for bad in ("1:0:0.5", "0:1:0", "0:1"):
        with pytest.raises(cf.ConfigError):
            cf.parse_floats(bad)


def test_parse_optional_float():
    assert cf.parse_optional_float("auto") is None
    assert cf.parse_optional_float("none") is None
    assert cf.parse_optional_float("2.5") == 2.5


def test_param_flag_and_keys():
    assert cf.Param("n_eigs", int, 1).flag == "--n-eigs"
    assert cf.normalize_key(" top-energy ") == "top_energy"


# ----------------------------------------------------------------- config


def _write(tmp_path, text):
    path = tmp_path / "run.cfg"
    path.write_text(text, encoding="utf-8")
    return path


def test_read_config(tmp_path):
    path = _write(tmp_path, "[partition]\nN = 64, 128\nn-samples = 100\n# note\n[sample]\nd = 1\n")
    out = cf.read_config(path, ["partition", "sample"])
    assert out == {"partition": {"N": "64, 128", "n_samples": "100"}, "sample": {"d": "1"}}


def test_read_config_strict(tmp_path):
    with pytest.raises(cf.ConfigError, match="unknown config section"):
        cf.read_config(_write(tmp_path, "[nope]\nd = 1\n"), ["sample"])
    with pytest.raises(cf.ConfigError):
        cf.read_config(_write(tmp_path, "[sample]\nd = 1\nd = 2\n"), ["sample"])
    with pytest.raises(cf.ConfigError):
        cf.read_config(tmp_path / "missing.cfg", ["sample"])


def test_resolve_layers():
    params = [cf.Param("d", int, 1), cf.Param("s", float, 2.0), cf.Param("N", cf.parse_ints, [8])]
    out = cf.resolve(params, {"s": "1.5", "N": "4,8"}, {"d": None, "s": 3.0, "N": None})
    assert out == {"d": 1, "s": 3.0, "N": [4, 8]}
    with pytest.raises(cf.ConfigError, match="unknown config key"):
        cf.resolve(params, {"q": "1"}, {})
    with pytest.raises(cf.ConfigError, match="bad value"):
        cf.resolve(params, {"d": "one"}, {})


def test_repeated_flags():
    assert cf.repeated_flags(["spectrum", "--d", "1", "--d", "1"]) == []
    assert cf.repeated_flags(["spectrum", "--d", "1", "--d=3"]) == ["__d"]
    assert cf.repeated_flags(["--n-eigs", "5", "--n_eigs", "6"]) == ["__n_eigs"]


# ---------------------------------------------------------------- records


def test_result_entry_status_checked():
    with pytest.raises(ValueError):
        rc.ResultEntry("x", 1.0, status="maybe")


def test_within_and_flag():
    assert rc.within("a", 1.04, 1.0, 0.05).status == rc.PASS
    assert rc.within("a", 1.06, 1.0, 0.05).status == rc.FAIL
    assert rc.within("a", math.nan, 1.0, 0.05).status == rc.FAIL
    assert rc.within("a", 3e-5, 0.0, 1e-4, relative=False).status == rc.PASS
    assert rc.flag("b", False).status == rc.FAIL
    assert rc.flag("b", True, 0.3).value == 0.3


def _record(statuses):
    entries = [rc.ResultEntry(f"e{i}", np.float64(i) / 3, 0.1, None, st) for i, st in enumerate(statuses)]
    return rc.RunRecord("0.1", "sample", {"N": np.array([1, 2]), "s": np.float64(1.5)}, 7, 1.25, entries)


def test_record_roundtrip(tmp_path):
    rec = _record([rc.PASS, rc.INCONCLUSIVE])
    assert rc.RunRecord.loads(rec.dumps()) == rec
    path = rec.save(tmp_path / "out")
    assert rc.RunRecord.load(path) == rec
    data = json.loads(path.read_text())
    assert set(data) == {"version", "subcommand", "params", "seed", "wall_clock", "results"}
    assert data["params"] == {"N": [1, 2], "s": 1.5}


@pytest.mark.parametrize(
    "statuses,code",
    [([], 0), ([rc.PASS], 0), ([rc.PASS, rc.INCONCLUSIVE], 3), ([rc.INCONCLUSIVE, rc.FAIL], 2), ([rc.FAIL], 2)],
)
def test_exit_codes(statuses, code):
    assert _record(statuses).exit_code() == code


def test_csv_roundtrip(tmp_path):
    path = tmp_path / "t" / "table.csv"
    vals = [0.1 + 0.2, 1 / 3, np.float64(2.5e-300)]
    rc.write_csv(path, ["k", "v", "tag"], [[i, v, "x"] for i, v in enumerate(vals)])
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["k", "v", "tag"]
    assert [float(r[1]) for r in rows[1:]] == [float(v) for v in vals]


# -------------------------------------------------------------------- CLI


def test_spectrum_end_to_end(tmp_path, capsys):
    out = tmp_path / "spec"
    code = cli.main(["spectrum", "--d", "3", "--s", "2", "--n-eigs", "20", "--n-grid", "2048", "--out", str(out)])
    assert code == 0
    with open(out / "spectrum.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [round(float(r["lambda_sq"]), 3) for r in rows[:3]] == [3.0, 7.0, 11.0]
    rec = rc.RunRecord.load(out / "run.json")
    assert rec.params["n_eigs"] == 20 and rec.subcommand == "spectrum"
    assert "max_rel_error_n_le_100" in capsys.readouterr().out


def test_failing_check_exits_two(tmp_path):
    args = ["spectrum", "--d", "1", "--n-eigs", "10", "--n-grid", "256", "--extrapolate", "no", "--tolerance", "1e-12"]
    assert cli.main(args + ["--out", str(tmp_path)]) == 2


def test_usage_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        cli.main(["nonsense"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["spectrum", "--d", "1", "--d", "3"])
    assert exc.value.code == 1
    bad_key = _write(tmp_path, "[spectrum]\ncolour = blue\n")
    assert cli.main(["spectrum", "--config", str(bad_key), "--out", str(tmp_path)]) == 1
    bad_sec = _write(tmp_path, "[colour]\nd = 1\n")
    assert cli.main(["spectrum", "--config", str(bad_sec), "--out", str(tmp_path)]) == 1
    assert cli.main(["spectrum", "--n-grid", "8", "--out", str(tmp_path)]) == 1


def test_config_file_and_flags(tmp_path):
    path = _write(tmp_path, "[spectrum]\nd = 3\nn-eigs = 5\nn-grid = 1024\nseed = 11\n")
    out = tmp_path / "o"
    assert cli.main(["spectrum", "--config", str(path), "--n-eigs", "8", "--out", str(out)]) == 0
    rec = rc.RunRecord.load(out / "run.json")
    assert rec.params["d"] == 3 and rec.params["n_eigs"] == 8 and rec.seed == 11


def test_phase_end_to_end(tmp_path):
    out = tmp_path / "phase"
    args = ["phase", "--d", "1", "--s", "1.5", "--K", "1", "--alpha", "1", "--p-grid", "3:7:0.5", "--N", "16,32", "--n-samples", "300", "--n-grid", "1024"]
    code = cli.main(args + ["--out", str(out)])
    assert code in (0, 2, 3)
    with open(out / "phase.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert [float(r["p"]) for r in rows] == cf.parse_floats("3:7:0.5")
    assert {r["verdict"] for r in rows} <= {"bounded", "divergent", "inconclusive"}
    assert (out / "phase_scans.csv").exists()


# --------------------------------------------------------------- replay


def _small_partition():
    return cli.defaults("partition", N=[16, 32], n_samples=500, n_grid=1024)


def test_replay_bit_identical(tmp_path):
    rec = cli.run("partition", _small_partition(), seed=3, out=tmp_path / "a")
    loaded = rc.RunRecord.load(tmp_path / "a" / "run.json")
    again = cli.replay(loaded)
    assert [(e.name, e.value, e.stderr, e.status) for e in again.results] == [(e.name, e.value, e.stderr, e.status) for e in rec.results]


def test_replay_rejects_unknown():
    rec = rc.RunRecord("0", "partition", {"colour": 1}, 0, 0.0, [])
    with pytest.raises(cf.ConfigError):
        cli.replay(rec)
    with pytest.raises(ValueError):
        cli.replay(rc.RunRecord("0", "verify-all", {}, 0, 0.0, []))


def test_worker_count_does_not_change_results():
    P = cli.defaults("phase", p_grid=[4.0, 6.0], N=[16, 32], n_samples=300, n_grid=1024)
    one = cli.run("phase", dict(P, workers=1), seed=2)
    two = cli.run("phase", dict(P, workers=2), seed=2)
    assert [(e.name, e.value) for e in one.results] == [(e.name, e.value) for e in two.results]


# ------------------------------------------------------------ verify-all


def test_plan_parameters_valid():
    for name, over in cli.VERIFY_PLAN:
        params = cli.defaults(name, **over)
        assert set(cli.QUICK.get(name, {})) <= set(params)
    assert set(cli.QUICK) <= set(cli.SUBCOMMANDS)
    with pytest.raises(cf.ConfigError):
        cli.defaults("spectrum", colour=1)


def test_verify_all_continues_past_errors(tmp_path, monkeypatch):
    plan = [("spectrum", {"n_grid": 8}), ("spectrum", {"d": 1, "n_eigs": 10, "n_grid": 1024, "tolerance": 1e-2})]
    monkeypatch.setattr(cli, "VERIFY_PLAN", plan)
    rec = cli.verify_all(0, False, tmp_path)
    names = [e.name for e in rec.results]
    assert names[0] == "00-spectrum.error"
    assert any(n.startswith("01-spectrum.") for n in names)
    assert rec.exit_code() == 2
    assert (tmp_path / "run.json").exists() and (tmp_path / "01-spectrum" / "spectrum.csv").exists()
