import json
import os

import pytest

from bankerwalk.cli import fmt, main
from bankerwalk.config import ConfigError, ParseError, load_config, parse_config

SMALL = """\
seed: 123
env:
  P: [[0.7, 0.3], [0.6, 0.4]]
kernel:
  base:
    - [0.30, 0.20, 0.25, 0.25]
    - [0.20, 0.30, 0.25, 0.25]
  perturbations:
    - {state: 0, direction: 0, freq: [1, 0], amplitude: 0.03}
walk:
  m: 8
  trials: 60
  m_list: [4, 8]
sde:
  dt: 0.01
  t_cap: 20
  trials: 60
coefficients:
  points: 5
regimes:
  s: 0.5
  grid: [1.5, 1.75]
  trials: 40
  dt: 0.01
"""

UNIFORM = """\
seed: 1
env:
  P: [[0.7, 0.3], [0.6, 0.4]]
kernel:
  base: [[0.25, 0.25, 0.25, 0.25], [0.25, 0.25, 0.25, 0.25]]
"""


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(tmp_path, text, *args, out="out"):
    cfg = write(tmp_path, text)
    out_dir = tmp_path / out
    code = main([args[0], "--config", cfg, "--out", str(out_dir), *args[1:]])
    return code, out_dir


class TestValidate:
    def test_uniform_two_state_passes(self, tmp_path, capsys):
        code, out = run(tmp_path, UNIFORM, "validate")
        assert code == 0
        assert "FAIL" not in capsys.readouterr().out
        rows = (out / "validate.csv").read_text().splitlines()
        assert rows[0] == "check,passed,value,detail"
        assert all(r.split(",")[1] == "1" for r in rows[1:])

    def test_broken_centering_fails(self, tmp_path, capsys):
        text = "seed: 1\nkernel:\n  base: [[0.255, 0.245, 0.25, 0.25]]\n  center: false\n"
        code, _ = run(tmp_path, text, "validate")
        assert code != 0
        assert "FAIL A.4 centering" in capsys.readouterr().out

    def test_periodic_names_assumption(self, tmp_path, capsys):
        code, out = run(tmp_path, "seed: 1\nenv:\n  P: [[0, 1], [1, 0]]\n", "validate")
        assert code != 0
        text = capsys.readouterr().out
        assert "Assumption (A.3): periodic (period 2)" in text
        assert "A.3 aperiodic,0" in (out / "validate.csv").read_text()


class TestConfig:
    def test_parse_error_has_line_and_field(self):
        with pytest.raises(ParseError) as exc:
            parse_config("seed: 1\nwalk:\n  m: [1, 2\n")
        assert exc.value.line is not None and "line" in str(exc.value)
        with pytest.raises(ParseError) as exc:
            parse_config("seed: 1\nwalk:\n  m: abc\n")
        assert exc.value.field == "walk.m"

    def test_missing_seed(self):
        with pytest.raises(ParseError) as exc:
            parse_config("walk:\n  m: 10\n")
        assert exc.value.field == "seed"

    def test_unknown_block(self):
        with pytest.raises(ConfigError):
            parse_config("seed: 1\nwalks: {}\n")

    def test_hash_ignores_key_order(self, tmp_path):
        a = load_config(write(tmp_path, "seed: 3\nwalk: {m: 10, lam: 1.5}\n", "a.yaml"))
        b = load_config(write(tmp_path, "walk: {lam: 1.5, m: 10}\nseed: 3\n", "b.yaml"))
        assert a.canonical_hash() == b.canonical_hash()

    def test_cli_config_error_exit(self, tmp_path, capsys):
        code, _ = run(tmp_path, "seed: -4\n", "validate")
        assert code == 2
        assert "config error" in capsys.readouterr().err


def test_fmt():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(True) == "1" and fmt(7) == "7"


COMMANDS = [("coefficients", "coefficients.csv"), ("simulate-walk", "walk_path.csv"),
            ("simulate-sde", "sde_hits.csv"), ("deadlock", "deadlock.csv"), ("convergence", "convergence.csv"),
            ("regimes", "regimes.csv")]


@pytest.mark.parametrize("cmd,name", COMMANDS)
def test_reproducible_and_listed(tmp_path, cmd, name):
    _, a = run(tmp_path, SMALL, cmd, "--workers", "1", out="a")
    _, b = run(tmp_path, SMALL, cmd, "--workers", "1", out="b")
    _, c = run(tmp_path, SMALL, cmd, "--workers", "2", out="c")
    body = (a / name).read_bytes()
    assert body == (b / name).read_bytes() == (c / name).read_bytes()
    manifest = json.loads((a / "manifest.json").read_text())
    entry = manifest["runs"][cmd]
    assert entry["files"] == [name]
    assert set(os.listdir(a)) == {name, "manifest.json"}
    assert entry["seed"] == 123 and len(entry["config_hash"]) == 64


def test_manifest_accumulates(tmp_path):
    run(tmp_path, SMALL, "coefficients")
    _, out = run(tmp_path, SMALL, "deadlock")
    manifest = json.loads((out / "manifest.json").read_text())
    assert set(manifest["runs"]) == {"coefficients", "deadlock"}
    listed = {f for r in manifest["runs"].values() for f in r["files"]}
    assert listed | {"manifest.json"} == set(os.listdir(out))


def test_sde_path_and_overrides(tmp_path):
    code, out = run(tmp_path, SMALL, "simulate-sde", "--path", "--dt", "0.05")
    assert code == 0
    lines = (out / "sde_path.csv").read_text().splitlines()
    assert lines[0] == "t,x_1,x_2,H_1,H_2,K_1,K_2"
    assert len(lines) == 1 + 21


def test_seed_override_changes_output(tmp_path):
    _, a = run(tmp_path, SMALL, "deadlock", out="a")
    _, b = run(tmp_path, SMALL, "deadlock", "--seed", "124", out="b")
    assert (a / "deadlock.csv").read_bytes() != (b / "deadlock.csv").read_bytes()


def test_regimes_verdict(tmp_path, capsys):
    code, out = run(tmp_path, SMALL, "regimes", "--s", "0.0", "--grid", "1.5,1.75,1.875")
    text = capsys.readouterr().out
    assert "Null: log fit R²=" in text
    assert (out / "regimes.csv").read_text().splitlines()[0] == "lambda,mean,se,censored_frac"
    run(tmp_path, SMALL, "regimes", "--s", "-0.5")
    assert "Negative: slope β̂=" in capsys.readouterr().out
    run(tmp_path, SMALL, "regimes")
    assert "Positive: bounded (ratio=" in capsys.readouterr().out


def test_regimes_flags_censoring(tmp_path, capsys):
    text = SMALL + "  t_cap: 0.05\n"  # lands in the trailing regimes block
    code, _ = run(tmp_path, text, "regimes")
    assert code == 1
    assert "FAIL censoring at lambda=1.5" in capsys.readouterr().out
