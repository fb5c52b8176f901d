import json
import math
import re

import numpy as np
import pytest

from bdflow import __version__, config
from bdflow.cli import main
from bdflow.config import ConfigError
from bdflow.suite import WORKERS_ENV, max_workers


def write(tmp_path, doc, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def run(tmp_path, command, doc, out="out"):
    code = main([command, "--config", write(tmp_path, doc), "--out", str(tmp_path / out)])
    return code, tmp_path / out


def read_csv(path):
    lines = path.read_text().splitlines()
    header = lines[1].split(",")
    rows = np.array([[float(x) for x in ln.split(",")] for ln in lines[2:]])
    return lines[0], header, rows


CIRCLE = {"domain": {"kind": "circle", "N": 32}, "problem": {"p": 2.0, "a": {"mean": 1.0}}}


class TestConfig:
    def test_defaults_and_hash(self):
        cfg = config.from_dict(CIRCLE)
        assert cfg.time["rtol"] == 1e-8
        assert cfg.hash == config.config_hash(json.loads(json.dumps(CIRCLE)))
        assert len(cfg.hash) == 64

    def test_hash_ignores_key_order(self):
        a = {"problem": {"p": 2.0}, "domain": {"N": 32}}
        b = {"domain": {"N": 32}, "problem": {"p": 2.0}}
        assert config.config_hash(a) == config.config_hash(b)

    @pytest.mark.parametrize("doc", [
        {"problem": {"p": 1.0}},
        {"problem": {"p": 1.01}},
        {"problem": {"p": -2}},
        {"domain": {"N": 15}},
        {"domain": {"kind": "square"}},
        {"time": {"mode": "sideways"}},
        {"dtn": {"method": "spectral"}, "domain": {"kind": "ellipse"}},
        {"output": {"formats": ["xml"]}},
        {"unknown": 1},
        {"problem": {"a": {"mean": 1, "terms": [[0.5, 1, 0]]}}},
        {"rates": {"dt": 0}},
    ])
    def test_rejects(self, doc):
        with pytest.raises(ConfigError):
            config.from_dict(doc)

    def test_guard_message(self):
        with pytest.raises(ConfigError, match=r"\|p - 1\|"):
            config.from_dict({"problem": {"p": 1.01}})

    def test_initial_must_be_positive(self):
        cfg = config.from_dict({**CIRCLE, "initial": {"mean": 0.1, "terms": [[1, 0.5, 0]]}})
        with pytest.raises(ConfigError):
            cfg.initial_field(cfg.curve())
        cfg = config.from_dict({**CIRCLE, "initial": {"mean": 0.1, "terms": [[1, 0.5, 0]],
                                                      "offset": 0.5}})
        assert cfg.initial_field(cfg.curve()).min() > 0


def test_workers_env(monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "1")
    assert max_workers(8) == 1
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert max_workers(8) == 3
    monkeypatch.delenv(WORKERS_ENV)
    assert max_workers(2) == 2


def test_steady_command(tmp_path):
    code, out = run(tmp_path, "steady", CIRCLE)
    assert code == 0
    doc = json.loads((out / "steady.json").read_text())
    assert doc["lambda1"] == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(doc["phi"], 0.5, atol=1e-9)
    assert doc["regime"] == "ExtinctionOrBlowup"
    assert doc["version"] == __version__
    cfg_hash = doc["config_hash"]
    first, header, rows = read_csv(out / "phi.csv")
    assert cfg_hash in first
    assert header == ["theta", "x", "y", "phi"]
    np.testing.assert_allclose(rows[:, 3], 0.5, atol=1e-9)


def test_deterministic_json(tmp_path):
    run(tmp_path, "steady", CIRCLE, "a")
    run(tmp_path, "steady", CIRCLE, "b")
    assert (tmp_path / "a/steady.json").read_bytes() == (tmp_path / "b/steady.json").read_bytes()
    assert (tmp_path / "a/phi.csv").read_bytes() == (tmp_path / "b/phi.csv").read_bytes()


def test_validation_exit_codes(tmp_path, capsys):
    code, _ = run(tmp_path, "steady", {"problem": {"p": 1.0}})
    assert code == 2
    code, _ = run(tmp_path, "steady", {"problem": {"p": 2.0, "a": 0.0}})
    assert code == 2
    assert "mass_target" in capsys.readouterr().err
    code, _ = run(tmp_path, "evolve", CIRCLE)  # no initial data
    assert code == 2
    assert main(["steady", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["steady"]) == 2


def test_solver_failure_exit_code(tmp_path):
    doc = {**CIRCLE, "initial": {"mean": 0.5}, "time": {"horizon": 0.1}}
    code, out = run(tmp_path, "rates", doc)
    assert code == 3
    err = json.loads((out / "error.json").read_text())
    assert err["error"] == "EvolutionError" and "config_hash" in err


def test_evolve_separable(tmp_path):
    doc = {**CIRCLE, "domain": {"kind": "circle", "N": 16}, "initial": {"separable_c": 1.0},
           "time": {"horizon": 2.0, "rtol": 1e-6}}
    code, out = run(tmp_path, "evolve", doc)
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["Tstar_estimate"] == pytest.approx(1.0, rel=0.01)
    assert summary["halted"] == "floor"
    lo, hi = summary["Tstar_bracket"]
    assert lo == pytest.approx(1.0) and hi == pytest.approx(1.0)
    first, header, rows = read_csv(out / "trajectory.csv")
    assert summary["config_hash"] in first
    assert header[:7] == ["time", "Z", "G", "I", "min", "max", "M1"]
    assert len(header) == 7 + 16
    assert np.all(np.diff(rows[:, 0]) > 0)


def test_evolve_normalized_from_steady(tmp_path):
    doc = {**CIRCLE, "initial": {"from_steady": True},
           "time": {"mode": "normalized", "horizon": 1.0, "fixed_dt": 0.1}}
    code, out = run(tmp_path, "evolve", doc)
    assert code == 0
    _, header, rows = read_csv(out / "trajectory.csv")
    np.testing.assert_allclose(rows[:, 7:], 0.5, atol=1e-11)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["checks"]["G"]["passed"]


def test_evolve_ordered_pair(tmp_path):
    doc = {**CIRCLE, "initial": {"mean": 0.4, "compare_with": {"mean": 0.5,
                                                               "terms": [[1, 0.0, 0.1]]}},
           "time": {"horizon": 0.3, "fixed_dt": 0.002}}
    code, out = run(tmp_path, "evolve", doc)
    assert code == 0
    assert json.loads((out / "summary.json").read_text())["comparison"]["verdict"] == "pass"


def test_evolve_unordered_pair_rejected(tmp_path):
    doc = {**CIRCLE, "initial": {"mean": 0.5, "terms": [[1, 0.1, 0.0]],
                                 "compare_with": {"mean": 0.5, "terms": [[1, -0.1, 0.0]]}},
           "time": {"horizon": 0.1, "fixed_dt": 0.01}}
    assert run(tmp_path, "evolve", doc)[0] == 2


@pytest.mark.parametrize("p,a_value,mass,head,gamma", [
    (2.0, 1.0, None, [-2, 0, 0, 2, 2], 1.0),
    (0.5, -1.0, None, [-0.5, 0.5, 0.5, 1.5, 1.5], 1.0),
    (2.0, 0.0, math.sqrt(2 * math.pi), [0, 1, 1, 2, 2], 0.5),
])
def test_spectrum_command(tmp_path, p, a_value, mass, head, gamma):
    doc = {"domain": {"kind": "circle", "N": 32},
           "problem": {"p": p, "a": {"mean": a_value}, "mass_target": mass}}
    code, out = run(tmp_path, "spectrum", doc)
    assert code == 0
    sp = json.loads((out / "spectrum.json").read_text())
    np.testing.assert_allclose(sp["mu"][:5], head, atol=1e-6)
    assert sp["gamma_p"] == pytest.approx(gamma, abs=1e-4)
    first, header, rows = read_csv(out / "modes.csv")
    assert sp["config_hash"] in first and header[0] == "e1" and rows.shape == (32, 8)


RATE_CASES = {
    "growth": {"problem": {"p": 2.0, "a": {"mean": -1.0}}, "initial": {"random_seed": 3},
               "rates": {"dt": 0.02, "tau_end": 12.0}},
    "neutral": {"problem": {"p": 2.0, "a": {"mean": 0.0}},
                "initial": {"mean": 1.0, "terms": [[1, 0.1, 0.0]], "normalize_mass": True},
                "rates": {"dt": 0.02, "tau_end": 20.0}},
    "blowup": {"problem": {"p": 0.5, "a": {"mean": -1.0}},
               "initial": {"from_steady": True, "perturb_mode": 2, "perturb_amplitude": 0.01},
               "time": {"horizon": 5.0, "rtol": 1e-7}, "rates": {"dt": 0.02, "tau_end": 8.0}},
}


@pytest.mark.parametrize("case", sorted(RATE_CASES))
def test_rates_command(tmp_path, case):
    doc = {"domain": {"kind": "circle", "N": 16}, **RATE_CASES[case]}
    code, out = run(tmp_path, "rates", doc)
    assert code == 0
    rates = json.loads((out / "rates.json").read_text())
    assert rates["fit"]["model"] == "Exponential"
    assert rates["fit"]["agreement"] <= 0.1
    assert rates["expansion"]["passed"]
    first, header, rows = read_csv(out / "modes_series.csv")
    assert header[:2] == ["tau", "h_L2"] and header[-3:] == ["G", "I", "Z"]
    assert rates["config_hash"] in first


def test_png_output(tmp_path):
    doc = {**CIRCLE, "output": {"formats": ["json", "csv", "png"]}}
    code, out = run(tmp_path, "steady", doc)
    assert code == 0
    png = (out / "phi.png").read_bytes()
    assert png[:8] == b"\x89PNG\r\n\x1a\n"
    assert json.loads((out / "steady.json").read_text())["config_hash"].encode() in png


def test_verify_subset_passes(tmp_path, capsys):
    doc = {"verify": {"criteria": [2, 3], "N": 64}}
    code, out = run(tmp_path, "verify", doc)
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert re.match(r"\[PASS\] criterion +2:", lines[0])
    assert re.match(r"\[PASS\] criterion +3:", lines[1])
    assert json.loads((out / "verify.json").read_text())["passed"]


def test_verify_coarse_grid_fails(tmp_path, capsys):
    doc = {"verify": {"criteria": [1], "N": 16}}
    code, out = run(tmp_path, "verify", doc)
    assert code == 4
    assert re.match(r"\[FAIL\] criterion +1:", capsys.readouterr().out)
    report = json.loads((out / "verify.json").read_text())
    assert report["criteria"][0]["measured"]["max_error"] > 1e-6
