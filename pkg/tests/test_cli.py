import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stockdp import cli
from stockdp import config as cfgio
from stockdp.config import ConfigError, RunConfig, SimSettings, SolverSettings
from stockdp.errors import OracleDisagreementError
from stockdp.instances import explosive_grid, explosive_spec, spec_with_alpha_star, textbook_spec
from stockdp.model import ConstraintRegime, HoldingCost
from stockdp.solver import Grid

REPO = Path(__file__).resolve().parents[1]


def write_cfg(tmp_path, cfg, name="run.json"):
    path = tmp_path / name
    cfgio.save(cfg, path)
    return path


@pytest.fixture
def textbook_cfg(tmp_path):
    cfg = RunConfig(textbook_spec(), Grid(-30.0, 30.0, 1.0), sim=SimSettings(n_paths=5000, start_states=(-5.0, 0.0, 5.0)))
    return write_cfg(tmp_path, cfg)


def run(*args):
    return cli.main([str(a) for a in args])


class TestConfig:
    def test_fnv_reference_vectors(self):
        assert cfgio.fnv1a64(b"") == 0xCBF29CE484222325
        assert cfgio.fnv1a64(b"a") == 0xAF63DC4C8601EC8C
        assert cfgio.fnv1a64(b"foobar") == 0x85944171F73967E8

    @settings(max_examples=30, deadline=None)
    @given(K=st.floats(0.01, 100), c=st.floats(0.01, 10), alpha=st.floats(0, 0.999),
           left=st.floats(0.01, 10), right=st.floats(0.01, 10), a_bar=st.one_of(st.just(math.inf), st.integers(1, 9)),
           seed=st.integers(0, 2**64 - 1), horizon=st.one_of(st.just(math.inf), st.integers(1, 50)))
    def test_round_trip(self, K, c, alpha, left, right, a_bar, seed, horizon):
        import dataclasses
        regime = ConstraintRegime.U() if a_bar == math.inf else ConstraintRegime.BO(float(a_bar))
        spec = dataclasses.replace(textbook_spec(alpha=alpha, K=K, regime=regime), c_bar=c,
                                   h=HoldingCost.linear(right, left))
        cfg = RunConfig(spec, Grid(-20.0, 20.0, 1.0), SolverSettings(horizon=horizon), SimSettings(seed=seed))
        back = cfgio.loads(cfgio.dumps(cfg))
        assert back == cfg
        assert cfgio.config_hash(back) == cfgio.config_hash(cfg)

    def test_tabulated_round_trip(self):
        cfg = RunConfig(explosive_spec(), explosive_grid())
        assert cfgio.loads(cfgio.dumps(cfg)) == cfg

    def test_inf_encoding(self):
        d = cfgio.to_dict(RunConfig(textbook_spec(), Grid(-5.0, 5.0, 1.0)))
        assert d["model"]["regime"]["a_bar"] == "inf" and d["solver"]["horizon"] == "inf"

    def test_syntax_error_line(self):
        with pytest.raises(ConfigError) as err:
            cfgio.loads('{\n  "model": {\n    "K": 1,,\n  }\n}')
        assert err.value.line == 3

    def test_invalid_value_line(self, tmp_path, textbook_cfg):
        text = textbook_cfg.read_text().replace('"K": 5.0', '"K": 0.0')
        with pytest.raises(ConfigError, match="K must be > 0") as err:
            cfgio.loads(text)
        assert err.value.line == text.splitlines().index('    "K": 0.0,') + 1

    def test_grid_conflict(self, textbook_cfg):
        text = textbook_cfg.read_text().replace('"step": 1.0', '"step": 2.0')
        with pytest.raises(ConfigError, match="multiple"):
            cfgio.loads(text)


class TestSolveCommand:
    def test_finite_counts(self, tmp_path):
        cfg = RunConfig(textbook_spec(), Grid(-30.0, 30.0, 1.0), SolverSettings(horizon=3))
        assert run("solve", "--config", write_cfg(tmp_path, cfg), "--out", tmp_path / "o") == 0
        out = tmp_path / "o"
        assert len(list(out.glob("value_stage_*.csv"))) == 4
        assert len(list(out.glob("policy_stage_*.csv"))) == 3

    def test_explosive_diverges(self, tmp_path):
        cfg = RunConfig(explosive_spec(), explosive_grid(), SolverSettings(v_max=1e6, max_iterations=200))
        assert run("solve", "--config", write_cfg(tmp_path, cfg), "--out", tmp_path / "o") == cli.EXIT_DIVERGED
        assert json.loads((tmp_path / "o" / "verdict.json").read_text())["verdict"] == "diverging"

    def test_byte_identical(self, tmp_path, textbook_cfg):
        for d in ("a", "b"):
            assert run("solve", "--config", textbook_cfg, "--out", tmp_path / d) == 0
        for f in (tmp_path / "a").iterdir():
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_hash_header(self, tmp_path, textbook_cfg):
        run("solve", "--config", textbook_cfg, "--out", tmp_path / "o")
        h = cfgio.config_hash(cfgio.load(textbook_cfg))
        for f in (tmp_path / "o").glob("*.csv"):
            assert f.read_text().splitlines()[0] == f"# config_hash={h}"

    def test_jsonl(self, tmp_path, textbook_cfg):
        assert run("solve", "--config", textbook_cfg, "--out", tmp_path / "o", "--format", "jsonl") == 0
        lines = (tmp_path / "o" / "value.jsonl").read_text().splitlines()
        assert "config_hash" in json.loads(lines[0])
        assert set(json.loads(lines[1])) == {"x", "value"}
        pol = cfgio.read_policy(tmp_path / "o" / "policy.jsonl")
        assert pol.grid == Grid(-30.0, 30.0, 1.0)

    def test_config_error_exit(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"model": }')
        assert run("solve", "--config", bad, "--out", tmp_path / "o") == cli.EXIT_CONFIG
        assert "line 1" in capsys.readouterr().err

    def test_missing_config(self, tmp_path):
        assert run("solve", "--config", tmp_path / "nope.json") == cli.EXIT_CONFIG


class TestStructureCommand:
    def test_negative_alpha_star(self, tmp_path):
        spec = spec_with_alpha_star(-0.5, 0.9)
        cfg = RunConfig(spec, Grid(-60.0, 60.0, 1.0), SolverSettings(horizon=4))
        assert run("structure", "--config", write_cfg(tmp_path, cfg), "--out", tmp_path / "o") == 0
        rep = json.loads((tmp_path / "o" / "structure.json").read_text())
        assert rep["N_alpha"] == 0 and rep["oracle_agrees"]
        assert [t["stage"] for t in rep["thresholds"]] == [0, 1, 2, 3]
        assert all(k["passed"] for k in rep["kconvexity"])

    def test_never_order(self, tmp_path):
        cfg = RunConfig(spec_with_alpha_star(0.6, 0.5), Grid(-60.0, 60.0, 1.0))
        assert run("structure", "--config", write_cfg(tmp_path, cfg), "--out", tmp_path / "o") == 0
        rep = json.loads((tmp_path / "o" / "structure.json").read_text())
        assert rep["regime_label"] == "R_inf" and rep["thresholds"] == [] and rep["N_alpha"] == "inf"

    def test_oracle_fault(self, tmp_path, monkeypatch):
        def broken(*a, **k):
            raise OracleDisagreementError("injected")
        monkeypatch.setattr(cli, "n_alpha_oracle", broken)
        cfg = RunConfig(spec_with_alpha_star(0.5, 0.9), Grid(-60.0, 60.0, 1.0))
        assert run("structure", "--config", write_cfg(tmp_path, cfg), "--out", tmp_path / "o") == cli.EXIT_ORACLE
        assert json.loads((tmp_path / "o" / "structure.json").read_text())["oracle_agrees"] is False

    def test_wrong_oracle_value(self, tmp_path):
        cfg = RunConfig(spec_with_alpha_star(0.5, 0.9), Grid(-60.0, 60.0, 1.0))
        assert cli.cmd_structure(cfg, tmp_path, oracle=lambda *a: 7) == cli.EXIT_ORACLE

    def test_unsupported_recorded(self, tmp_path):
        import dataclasses
        spec = dataclasses.replace(textbook_spec(), regime=ConstraintRegime.BO(3.0))
        cfg = RunConfig(spec, Grid(-30.0, 30.0, 1.0))
        assert run("structure", "--config", write_cfg(tmp_path, cfg), "--out", tmp_path / "o") == 0
        assert "unsupported" in json.loads((tmp_path / "o" / "structure.json").read_text())


class TestClassifySweep:
    def test_labels(self):
        rows = cli.classify_sweep(20, 20, "finite")
        assert len(rows) == 400
        for a_star, alpha, label, _ in rows:
            if a_star >= 0 and alpha <= a_star:
                assert label == "R_inf"
            elif a_star < 0:
                assert label == "R_0"

    def test_known_point(self):
        from stockdp.structure import classify_regime
        assert classify_regime(0.5, 0.9, "finite") == "R_2"

    def test_monotone_boundary(self):
        rows = cli.classify_sweep(50, 50, "finite")
        by_star = {}
        for a_star, alpha, _, n in rows:
            by_star.setdefault(a_star, []).append(math.inf if n == "inf" else n)
        for ns in by_star.values():
            assert all(b <= a for a, b in zip(ns, ns[1:]))

    def test_resolution(self):
        with pytest.raises(ConfigError):
            cli.classify_sweep(1, 5)

    def test_command(self, tmp_path, textbook_cfg):
        assert run("classify-sweep", "--config", textbook_cfg, "--out", tmp_path / "o") == 0
        text = (tmp_path / "o" / "regime_map_finite.csv").read_text().splitlines()
        assert text[1] == "alpha_star,alpha,label,N_alpha" and len(text) == 2 + 100 * 100


class TestSimulateCommand:
    def test_rows_within_bounds(self, tmp_path, textbook_cfg):
        run("solve", "--config", textbook_cfg, "--out", tmp_path / "o")
        assert run("simulate", "--config", textbook_cfg, "--out", tmp_path / "o",
                   "--policy", tmp_path / "o" / "policy.csv") == 0
        _, rows = cfgio.read_table(tmp_path / "o" / "simulate.csv")
        assert len(rows) == 3 and all(r["within_4se_plus_bias"] == "true" for r in rows)

    def test_corrupted(self, tmp_path, textbook_cfg):
        run("solve", "--config", textbook_cfg, "--out", tmp_path / "o")
        pol = tmp_path / "o" / "policy.csv"
        text = pol.read_text()
        assert "\n10.0,0.0\n" in text
        pol.write_text(text.replace("\n10.0,0.0\n", "\n10.0,1.0\n"))
        assert run("simulate", "--config", textbook_cfg, "--out", tmp_path / "o", "--policy", pol) == cli.EXIT_ARTIFACT

    def test_missing(self, tmp_path, textbook_cfg):
        assert run("simulate", "--config", textbook_cfg, "--out", tmp_path / "o",
                   "--policy", tmp_path / "none.csv") == cli.EXIT_ARTIFACT

    def test_seed_override(self, tmp_path, textbook_cfg):
        run("solve", "--config", textbook_cfg, "--out", tmp_path / "o")
        pol = tmp_path / "o" / "policy.csv"
        run("simulate", "--config", textbook_cfg, "--out", tmp_path / "a", "--policy", pol)
        run("simulate", "--config", textbook_cfg, "--out", tmp_path / "b", "--policy", pol, "--seed", "99")
        a = cfgio.read_table(tmp_path / "a" / "simulate.csv")[1]
        b = cfgio.read_table(tmp_path / "b" / "simulate.csv")[1]
        for ra, rb in zip(a, b):
            assert ra["stderr"] != rb["stderr"]
            se = float(ra["stderr"]) + float(rb["stderr"])
            assert abs(float(ra["mc_mean"]) - float(rb["mc_mean"])) <= 4 * se

    def test_threads_env_same_output(self, tmp_path, textbook_cfg, monkeypatch):
        run("solve", "--config", textbook_cfg, "--out", tmp_path / "o")
        pol = tmp_path / "o" / "policy.csv"
        monkeypatch.setenv("STOCKDP_THREADS", "1")
        run("simulate", "--config", textbook_cfg, "--out", tmp_path / "a", "--policy", pol)
        monkeypatch.setenv("STOCKDP_THREADS", "3")
        run("simulate", "--config", textbook_cfg, "--out", tmp_path / "b", "--policy", pol)
        assert (tmp_path / "a" / "simulate.csv").read_bytes() == (tmp_path / "b" / "simulate.csv").read_bytes()


class TestCompareCommand:
    def test_compare(self, tmp_path, textbook_cfg):
        assert run("compare", "--config", textbook_cfg, "--out", tmp_path / "o") == 0
        _, rows = cfgio.read_table(tmp_path / "o" / "compare.csv")
        at0 = [r for r in rows if float(r["x0"]) == 0.0]
        assert {r["policy"] for r in at0} == {"table", "never-order", "sS(1,4)"}
        never = next(r for r in at0 if r["policy"] == "never-order")
        assert float(never["ci_low"]) > 0


def test_console_entry_point(tmp_path, textbook_cfg):
    proc = subprocess.run([sys.executable, "-m", "stockdp", "classify-sweep", "--config", str(textbook_cfg),
                           "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.startswith("config_hash=")
