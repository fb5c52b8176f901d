"""Run configuration: a single JSON document, validated up front.

Coefficient fields and initial data are finite Fourier series written as
``{"mean": m, "terms": [[k, cos_k, sin_k], ...]}``.
"""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry
from .geometry import GeometryError
from .stationary import MIN_EXPONENT_GAP


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "domain": {"kind": "circle", "params": {}, "N": 64},
    "problem": {"p": 2.0, "a": {"mean": 1.0, "terms": []}, "zero_tol": None,
                "mass_target": None},
    "initial": None,
    "time": {"mode": "physical", "horizon": 1.0, "rtol": 1e-8, "fixed_dt": None,
             "dt0": None, "dt_max": None, "store_stride": 1, "floor_factor": 1e-3,
             "ceiling_factor": 1e3},
    "dtn": {"method": "auto", "offset": None, "reg": 1e-12},
    "output": {"directory": "bdflow_out", "formats": ["json", "csv"]},
    "rates": {"window_fraction": 0.5, "tail_fraction": 0.5, "modes": 8,
              "dt": 0.02, "tau_end": 8.0},
    "verify": {"criteria": None, "N": None, "rtol": None},
}

INITIAL_KEYS = {"mean", "terms", "offset", "normalize_mass", "separable_c", "from_steady",
                "perturb_mode", "perturb_amplitude", "compare_with", "random_seed"}
FORMATS = {"json", "csv", "png"}
TIME_MODES = {"physical", "normalized"}


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown configuration key {path + key!r}")
        if isinstance(base[key], dict) and isinstance(val, dict) and key != "params":
            out[key] = _merge(base[key], val, f"{path}{key}.")
        else:
            out[key] = copy.deepcopy(val)
    return out


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON encoding of the raw document."""
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def _series(spec, name) -> tuple[float, list]:
    if isinstance(spec, (int, float)):
        return float(spec), []
    if not isinstance(spec, dict):
        raise ConfigError(f"{name} must be a number or a {{mean, terms}} object")
    extra = set(spec) - {"mean", "terms"} - (INITIAL_KEYS if name == "initial" else set())
    if extra:
        raise ConfigError(f"unknown keys in {name}: {sorted(extra)}")
    terms = []
    for t in spec.get("terms", []):
        if not (isinstance(t, (list, tuple)) and len(t) == 3):
            raise ConfigError(f"{name} terms must be [k, cos, sin] triples, got {t!r}")
        k, c, s = t
        if int(k) != k or k < 1:
            raise ConfigError(f"{name} harmonic index must be a positive integer, got {k!r}")
        terms.append((int(k), float(c), float(s)))
    return float(spec.get("mean", 0.0)), terms


@dataclass
class RunConfig:
    raw: dict
    data: dict
    hash: str

    @property
    def domain(self) -> dict:
        return self.data["domain"]

    @property
    def problem(self) -> dict:
        return self.data["problem"]

    @property
    def initial(self) -> dict | None:
        return self.data["initial"]

    @property
    def time(self) -> dict:
        return self.data["time"]

    @property
    def dtn(self) -> dict:
        return self.data["dtn"]

    @property
    def output(self) -> dict:
        return self.data["output"]

    @property
    def p(self) -> float:
        return float(self.problem["p"])

    def curve(self):
        try:
            return geometry.make_curve(self.domain["kind"], self.domain["params"],
                                       self.domain["N"])
        except GeometryError as exc:
            raise ConfigError(str(exc)) from exc

    def coefficient(self, curve) -> np.ndarray:
        mean, terms = _series(self.problem["a"], "problem.a")
        return self._synth(curve, mean, terms, "problem.a")

    def initial_field(self, curve, spec=None) -> np.ndarray | None:
        """Synthesize ``u0`` from the Fourier description.

        Fields that need the steady state (``separable_c``, ``from_steady``,
        ``perturb_mode``) are resolved by the caller.
        """
        init = self.initial
        if init is None:
            return None
        mean, terms = _series(init, "initial")
        u0 = self._synth(curve, mean, terms, "initial") + float(init.get("offset", 0.0))
        if np.min(u0) <= 0:
            raise ConfigError(f"initial data must be strictly positive after synthesis "
                              f"(min {np.min(u0):.3e})")
        return u0

    @staticmethod
    def _synth(curve, mean, terms, name):
        try:
            return geometry.fourier_field(curve, mean, terms)
        except GeometryError as exc:
            raise ConfigError(f"{name}: {exc}") from exc


def validate(data: dict) -> None:
    dom = data["domain"]
    if dom["kind"] not in ("circle", "ellipse", "star"):
        raise ConfigError(f"domain.kind must be circle, ellipse or star, got {dom['kind']!r}")
    N = dom["N"]
    if not isinstance(N, int) or N % 2 or N < 16:
        raise ConfigError(f"domain.N must be an even integer >= 16, got {N!r}")
    prob = data["problem"]
    try:
        p = float(prob["p"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"problem.p must be a number, got {prob['p']!r}") from exc
    if not p > 0:
        raise ConfigError(f"problem.p must be positive, got {p}")
    if abs(p - 1.0) < MIN_EXPONENT_GAP:
        raise ConfigError(f"problem.p = {p} violates the guard |p - 1| >= {MIN_EXPONENT_GAP}")
    _series(prob["a"], "problem.a")
    if prob["mass_target"] is not None and not float(prob["mass_target"]) > 0:
        raise ConfigError("problem.mass_target must be positive")
    if data["initial"] is not None:
        _series(data["initial"], "initial")
        c = data["initial"].get("separable_c")
        if c is not None and not float(c) > 0:
            raise ConfigError("initial.separable_c must be positive")
        if "compare_with" in data["initial"]:
            _series(data["initial"]["compare_with"], "initial.compare_with")
    tm = data["time"]
    if tm["mode"] not in TIME_MODES:
        raise ConfigError(f"time.mode must be one of {sorted(TIME_MODES)}, got {tm['mode']!r}")
    if not float(tm["horizon"]) > 0:
        raise ConfigError("time.horizon must be positive")
    if not 0 < float(tm["rtol"]) < 1:
        raise ConfigError("time.rtol must lie in (0, 1)")
    for key in ("fixed_dt", "dt0", "dt_max"):
        if tm[key] is not None and not float(tm[key]) > 0:
            raise ConfigError(f"time.{key} must be positive when given")
    if not isinstance(tm["store_stride"], int) or tm["store_stride"] < 1:
        raise ConfigError("time.store_stride must be a positive integer")
    d = data["dtn"]
    if d["method"] not in ("auto", "spectral", "mfs"):
        raise ConfigError(f"dtn.method must be auto, spectral or mfs, got {d['method']!r}")
    if d["method"] == "spectral" and dom["kind"] != "circle":
        raise ConfigError("dtn.method 'spectral' is only available on circles")
    if d["offset"] is not None and not float(d["offset"]) > 0:
        raise ConfigError("dtn.offset must be positive")
    if float(d["reg"]) < 0:
        raise ConfigError("dtn.reg must be nonnegative")
    r = data["rates"]
    for key in ("dt", "tau_end"):
        if not float(r[key]) > 0:
            raise ConfigError(f"rates.{key} must be positive")
    if not 0 < float(r["window_fraction"]) <= 1 or not 0 < float(r["tail_fraction"]) <= 1:
        raise ConfigError("rates.window_fraction and rates.tail_fraction must lie in (0, 1]")
    if not isinstance(r["modes"], int) or r["modes"] < 1:
        raise ConfigError("rates.modes must be a positive integer")
    fmts = data["output"]["formats"]
    if not set(fmts) <= FORMATS:
        raise ConfigError(f"output.formats must be drawn from {sorted(FORMATS)}, got {fmts}")


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    data = _merge(DEFAULTS, raw)
    if isinstance(raw.get("initial"), dict):
        data["initial"] = copy.deepcopy(raw["initial"])
    validate(data)
    return RunConfig(raw, data, config_hash(raw))


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration {path} is not valid JSON: {exc}") from exc
    return from_dict(raw)
