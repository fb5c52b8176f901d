"""Canonical verification scenarios and their pass/fail criteria.

Each criterion is a function of :class:`SuiteSettings` returning a
:class:`CriterionResult`. Scenario runs are cached per process so criteria
that inspect the same trajectories do not recompute them.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import dtn as dtn_mod
from . import evolution as ev
from . import geometry
from .diagnostics import (RateModel, fit_rate, h_bound_report, harnack_report,
                          lyapunov_series, mode_expansion, monotone_report, ordering_report,
                          second_difference_report)
from .numerics import fit_line
from .spectrum import linearized_spectrum
from .stationary import make_problem, mass_of, random_positive_field, solve_steady

WORKERS_ENV = "BDFLOW_MAX_WORKERS"


@dataclass(frozen=True)
class SuiteSettings:
    N_dtn: int = 256
    N_static: int = 128
    N_flow: int = 32
    rtol: float = 1e-7
    seed: int = 7

    @classmethod
    def from_config(cls, cfg) -> "SuiteSettings":
        if cfg is None:
            return cls()
        ver = cfg.data.get("verify", {})
        out = cls()
        if ver.get("N"):
            n = int(ver["N"])
            out = replace(out, N_dtn=n, N_static=n, N_flow=n)
        if ver.get("rtol"):
            out = replace(out, rtol=float(ver["rtol"]))
        return out


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    measured: dict = field(default_factory=dict)
    seconds: float = 0.0
    error: str | None = None

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.number:2d}: {self.title} ({self.seconds:.1f} s)"

    def to_dict(self) -> dict:
        return {"number": self.number, "title": self.title, "passed": self.passed,
                "measured": _plain(self.measured), "error": self.error}


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)) and not isinstance(obj, bool):
        return int(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    return obj


# ---------------------------------------------------------------- scenarios

@lru_cache(maxsize=None)
def circle_problem(N: int, p: float, a: float):
    curve = geometry.make_curve("circle", {}, N)
    op = dtn_mod.build_dtn(curve)
    return make_problem(curve, op, p, np.full(N, a))


@lru_cache(maxsize=None)
def steady_phi(N: int, p: float, a: float, mass_value: float | None = None):
    spec = circle_problem(N, p, a)
    target = None if mass_value is None else mass_of(np.full(N, mass_value), spec)
    return solve_steady(spec, mass_target=target, estimate_energy=False).phi


def _controls(s: SuiteSettings, **kw) -> ev.EvolveControls:
    return ev.EvolveControls(rtol=s.rtol, **kw)


@lru_cache(maxsize=None)
def separable_runs(s: SuiteSettings):
    spec = circle_problem(s.N_flow, 2.0, 1.0)
    phi = steady_phi(s.N_flow, 2.0, 1.0)
    return {c: ev.evolve(spec, ev.separable_initial(spec, phi, c), "Physical", 2 * c,
                         _controls(s)) for c in (0.3, 1.0)}


@lru_cache(maxsize=None)
def generic_extinction(s: SuiteSettings):
    spec = circle_problem(s.N_flow, 2.0, 1.0)
    u0 = 0.5 + 0.1 * np.cos(spec.curve.theta)
    return ev.evolve(spec, u0, "Physical", 10.0, _controls(s))


@lru_cache(maxsize=None)
def growth_runs(s: SuiteSettings, count: int = 3):
    spec = circle_problem(s.N_flow, 0.5, 1.0)
    rng = np.random.default_rng(s.seed)
    runs = []
    for _ in range(count):
        w0 = random_positive_field(spec.curve, rng, low=0.5, high=2.0)
        runs.append(ev.evolve(spec, w0, "Normalized", 30.0, _controls(s, dt_max=0.05)))
    return runs


@lru_cache(maxsize=None)
def neutral_run(s: SuiteSettings):
    spec = circle_problem(s.N_flow, 2.0, 0.0)
    w0 = 1.0 + 0.1 * np.cos(spec.curve.theta)
    # scale so the conserved mass selects phi = 1
    w0 *= (mass_of(np.ones_like(w0), spec) / mass_of(w0, spec)) ** (1.0 / spec.p)
    phi = solve_steady(spec, mass_target=mass_of(w0, spec), estimate_energy=False).phi
    traj = ev.evolve(spec, w0, "Normalized", 60.0, _controls(s, dt_max=0.1))
    return traj, phi, linearized_spectrum(spec, phi)


@lru_cache(maxsize=None)
def blowup_runs(s: SuiteSettings, tau_end: float = 8.0, dt: float = 0.02):
    """Physical blow-up run, T* by extrapolation then shooting, normalized run."""
    spec = circle_problem(s.N_flow, 0.5, -1.0)
    phi = steady_phi(s.N_flow, 0.5, -1.0)
    spectrum = linearized_spectrum(spec, phi)
    u0 = phi + 0.01 * spectrum.modes[:, 1]
    phys = ev.evolve(spec, u0, "Physical", 5.0, _controls(s))
    guess = ev.estimate_Tstar(phys)
    drift = spec.curve.weights * spectrum.weight * spectrum.modes[:, 0]
    T = ev.shoot_Tstar(spec, u0, phi, guess, drift, tau_end, dt)
    norm = ev.evolve(spec, ev.normalized_initial(u0, spec, T), "Normalized", tau_end,
                     ev.EvolveControls(fixed_dt=dt))
    return {"physical": phys, "Tstar_fit": guess, "Tstar": T, "normalized": norm,
            "spectrum": spectrum, "phi": phi}


@lru_cache(maxsize=None)
def comparison_pair(s: SuiteSettings, dt: float = 1e-3):
    spec = circle_problem(s.N_flow, 2.0, 1.0)
    th = spec.curve.theta
    ctl = ev.EvolveControls(fixed_dt=dt)
    lower = ev.evolve(spec, np.full(len(th), 0.4), "Physical", 5.0, ctl)
    upper = ev.evolve(spec, 0.4 + 0.1 * (1.0 + np.sin(th)), "Physical", 5.0, ctl)
    return lower, upper


@lru_cache(maxsize=None)
def bump_runs(s: SuiteSettings, t0: float = 0.05):
    spec = circle_problem(s.N_flow, 2.0, 1.0)
    return {m: ev.evolve(spec, ev.bump_data(spec.curve, m), "Physical", t0,
                         _controls(s, dt0=1e-10)) for m in (1e-4, 1e-6)}


# ---------------------------------------------------------------- criteria

def crit_dtn(s: SuiteSettings) -> CriterionResult:
    N = s.N_dtn
    curve = geometry.make_curve("circle", {}, N)
    t0 = time.perf_counter()
    op = dtn_mod.build_dtn_general(curve)
    build_seconds = time.perf_counter() - t0
    err = 0.0
    for k in range(0, min(20, N // 2) + 1):
        for g in (np.cos(k * curve.theta), np.sin(k * curve.theta)):
            err = max(err, float(np.max(np.abs(op.apply(g) - k * g))))
    rep = op.build_report
    ok = (err <= 1e-6 and rep["symmetry_defect"] <= 1e-7 and rep["psd_defect"] <= 1e-7
          and build_seconds <= 5.0)
    return CriterionResult(1, "DtN cross-validation on the unit circle", ok, {
        "N": N, "max_error": err, "symmetry_defect": rep["symmetry_defect"],
        "psd_defect": rep["psd_defect"], "within_time_budget": build_seconds <= 5.0})


def crit_steady(s: SuiteSettings) -> CriterionResult:
    N = s.N_static
    spec = circle_problem(N, 2.0, 1.0)
    phi_a = solve_steady(spec).phi
    lam = spec.lambda1
    phi_b = solve_steady(circle_problem(N, 0.5, -1.0)).phi
    neutral = circle_problem(N, 2.0, 0.0)
    phi_c = solve_steady(neutral, mass_target=mass_of(np.full(N, 2.0), neutral)).phi
    errs = {"phi_p2": float(np.max(np.abs(phi_a - 0.5))), "lambda1_p2": abs(lam - 1.0),
            "phi_p_half": float(np.max(np.abs(phi_b - 1.0))),
            "phi_neutral": float(np.max(np.abs(phi_c - 2.0)))}
    return CriterionResult(2, "steady closed forms", all(v <= 1e-9 for v in errs.values()),
                           errs)


def _expected_multiset(N, symbol):
    ks = [0] + [k for k in range(1, N // 8 + 1) for _ in (0, 1)]
    return np.sort([symbol(k) for k in ks])


def crit_spectrum(s: SuiteSettings) -> CriterionResult:
    N = s.N_static
    out, ok = {}, True
    cases = [("p2", 2.0, 1.0, None, lambda k: 2.0 * (k - 1.0), (1, 2, 4, 1.0)),
             ("p_half", 0.5, -1.0, None, lambda k: k - 0.5, (None, None, None, 1.0)),
             ("neutral", 2.0, 0.0, 1.0, lambda k: float(k), (None, None, None, 0.5))]
    for name, p, a, mass, symbol, want in cases:
        spec = circle_problem(N, p, a)
        sp = linearized_spectrum(spec, steady_phi(N, p, a, mass))
        expect = _expected_multiset(N, symbol)
        err = float(np.max(np.abs(sp.mu[:len(expect)] - expect)))
        got = (sp.I, sp.K, sp.k, sp.gamma_p)
        case_ok = err <= 1e-6 and abs(sp.gamma_p - want[3]) <= 1e-6
        case_ok &= all(w is None or g == w for g, w in zip(got[:3], want[:3]))
        ok &= case_ok
        out[name] = {"mu_error": err, "I": sp.I, "K": sp.K, "k": sp.k, "gamma_p": sp.gamma_p}
    return CriterionResult(3, "spectrum closed forms", ok, out)


def crit_growth_rate(s: SuiteSettings) -> CriterionResult:
    spec = circle_problem(s.N_flow, 0.5, 1.0)
    phi = steady_phi(s.N_flow, 0.5, 1.0)
    t0 = time.perf_counter()
    runs = growth_runs(s)
    seconds = (time.perf_counter() - t0) / len(runs)
    reports = [fit_rate(tr, phi, gamma_p=1.0) for tr in runs]
    ok = all(r.model is RateModel.EXPONENTIAL and 0.95 <= r.gamma_fit <= 1.05 for r in reports)
    ok &= seconds <= 30.0
    return CriterionResult(4, "Growth regime sharp rate", ok, {
        "N": spec.curve.N, "models": [r.model.value for r in reports],
        "gamma_fit": [r.gamma_fit for r in reports], "within_time_budget": seconds <= 30.0})


def crit_neutral_rate(s: SuiteSettings) -> CriterionResult:
    traj, phi, sp = neutral_run(s)
    r = fit_rate(traj, phi, gamma_p=sp.gamma_p)
    ok = r.model is RateModel.EXPONENTIAL and r.agreement <= 0.1
    return CriterionResult(5, "Neutral regime rate", ok, {
        "model": r.model.value, "gamma_fit": r.gamma_fit, "gamma_p": sp.gamma_p,
        "agreement": r.agreement, "phi_mean": float(np.mean(phi))})


def crit_extinction(s: SuiteSettings) -> CriterionResult:
    out, ok = {}, True
    for c, traj in separable_runs(s).items():
        fit = ev.fit_Tstar(traj)
        Z = traj.diagnostics["Z"]
        _, _, rms = fit_line(traj.times, Z)
        keep = traj.times <= 0.95 * fit.Tstar
        p = traj.spec.p
        lp1 = ((traj.fields[keep] ** (p + 1)) @ traj.spec.curve.weights) ** (1 / (p + 1))
        ratio = lp1 / (fit.Tstar - traj.times[keep]) ** (1 / (p - 1))
        spread = float(np.ptp(ratio) / np.mean(ratio))
        rel = abs(fit.Tstar - c) / c
        z_rel = float(rms / np.max(np.abs(Z)))
        ok &= rel <= 0.01 and z_rel <= 1e-6 and spread <= 0.01
        out[f"c={c}"] = {"Tstar": fit.Tstar, "relative_error": rel, "Z_fit_rms": z_rel,
                         "norm_ratio_spread": spread}
    traj = generic_extinction(s)
    spec = traj.spec
    s1, s2 = ev.separable_bracket(spec, steady_phi(s.N_flow, 2.0, 1.0), traj.fields[0])
    T = ev.estimate_Tstar(traj)
    ok &= s1 <= T <= s2
    out["generic"] = {"Tstar": T, "bracket": [s1, s2]}
    return CriterionResult(6, "extinction time", ok, out)


def _physical_runs(s):
    runs = {f"separable c={c}": tr for c, tr in separable_runs(s).items()}
    runs["generic"] = generic_extinction(s)
    lower, upper = comparison_pair(s)
    runs["pair lower"], runs["pair upper"] = lower, upper
    for m, tr in bump_runs(s).items():
        runs[f"bump {m:g}"] = tr
    runs["blow-up"] = blowup_runs(s)["physical"]
    return runs


def _normalized_runs(s):
    runs = {f"growth {i}": tr for i, tr in enumerate(growth_runs(s))}
    runs["neutral"] = neutral_run(s)[0]
    runs["blow-up"] = blowup_runs(s)["normalized"]
    return runs


def crit_monotone(s: SuiteSettings) -> CriterionResult:
    out, ok = {}, True
    for name, tr in _normalized_runs(s).items():
        g = lyapunov_series(tr)
        i = monotone_report(tr.diagnostics["I"])
        ok &= g.passed and i.passed
        out[f"normalized {name}"] = {"G": g.to_dict(), "I": i.to_dict()}
    for name, tr in _physical_runs(s).items():
        i = monotone_report(tr.diagnostics["I"])
        entry = {"I": i.to_dict()}
        ok &= i.passed
        if tr.halted in ("floor", "ceiling"):
            z = second_difference_report(tr.times, tr.diagnostics["Z"],
                                         1 if tr.spec.p > 1 else -1)
            entry["Z"] = z
            ok &= z["passed"]
        out[f"physical {name}"] = entry
    return CriterionResult(7, "monotone functionals", bool(ok), out)


def crit_comparison(s: SuiteSettings) -> CriterionResult:
    lower, upper = comparison_pair(s)
    rep = ordering_report(lower, upper)
    return CriterionResult(8, "comparison principle", rep["passed"], rep)


def crit_infinite_speed(s: SuiteSettings) -> CriterionResult:
    est = {}
    for m, tr in bump_runs(s).items():
        est[m] = float(np.min(tr.diagnostics["min"][1:] / tr.times[1:] ** (1 / tr.spec.p)))
    vals = list(est.values())
    ratio = max(vals) / min(vals) if min(vals) > 0 else float("inf")
    ok = min(vals) > 0 and ratio <= 2.0
    return CriterionResult(9, "infinite speed of propagation", ok, {
        "epsilon0": {f"{m:g}": v for m, v in est.items()}, "ratio": ratio})


def crit_h_bound(s: SuiteSettings) -> CriterionResult:
    out, ok = {}, True
    for name, tr in _physical_runs(s).items():
        rep = h_bound_report(tr)
        ok &= rep["passed"]
        out[name] = rep
    return CriterionResult(10, "one-sided H bound", ok, out)


def crit_expansion(s: SuiteSettings) -> CriterionResult:
    runs = blowup_runs(s)
    sp, norm = runs["spectrum"], runs["normalized"]
    rate = fit_rate(norm, runs["phi"], gamma_p=sp.gamma_p)
    exp = mode_expansion(norm, sp, rate=rate if rate.model is RateModel.EXPONENTIAL else None)
    # the seeded mode is e_2 (index 1)
    pos = exp.indices.index(1)
    tv = float(exp.variation[pos])
    ok = tv <= 0.1 and exp.remainder_rate >= exp.target_rate
    return CriterionResult(11, "eigenmode expansion", bool(ok), {
        "Tstar_fit": runs["Tstar_fit"], "Tstar_shooting": runs["Tstar"],
        "C2": float(exp.coefficients[pos]), "relative_variation": tv,
        "remainder_rate": exp.remainder_rate, "target_rate": exp.target_rate,
        "rate_model": rate.model.value, "gamma_fit": rate.gamma_fit})


def crit_temporal_order(s: SuiteSettings) -> CriterionResult:
    spec = circle_problem(s.N_flow, 2.0, 1.0)
    phi = steady_phi(s.N_flow, 2.0, 1.0)
    u0 = ev.separable_initial(spec, phi, 1.0)
    exact = ev.separable_solution(spec, phi, 1.0, 0.5)[0]
    errs = []
    for dt in (4e-3, 2e-3, 1e-3):
        tr = ev.evolve(spec, u0, "Physical", 0.5, ev.EvolveControls(fixed_dt=dt))
        errs.append(float(np.max(np.abs(tr.final - exact))))
    ratios = [errs[0] / errs[1], errs[1] / errs[2]]
    ok = all(1.7 <= r <= 2.3 for r in ratios)
    return CriterionResult(12, "first-order temporal convergence", ok,
                           {"errors": errs, "ratios": ratios})


CRITERIA = {1: crit_dtn, 2: crit_steady, 3: crit_spectrum, 4: crit_growth_rate,
            5: crit_neutral_rate, 6: crit_extinction, 7: crit_monotone, 8: crit_comparison,
            9: crit_infinite_speed, 10: crit_h_bound, 11: crit_expansion,
            12: crit_temporal_order}


def run_criterion(number: int, settings: SuiteSettings) -> CriterionResult:
    t0 = time.perf_counter()
    try:
        res = CRITERIA[number](settings)
    except Exception as exc:  # a crashing scenario is a failed criterion
        res = CriterionResult(number, CRITERIA[number].__name__, False,
                              error=f"{type(exc).__name__}: {exc}")
    res.seconds = time.perf_counter() - t0
    return res


def max_workers(requested: int | None = None) -> int:
    cap = os.environ.get(WORKERS_ENV)
    n = requested or os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, n)


def run_suite(settings: SuiteSettings | None = None, criteria=None,
              workers: int | None = None) -> list[CriterionResult]:
    """Run the selected criteria; results come back in criterion order."""
    settings = settings or SuiteSettings()
    numbers = sorted(criteria or CRITERIA)
    unknown = [n for n in numbers if n not in CRITERIA]
    if unknown:
        raise ValueError(f"unknown criteria {unknown}")
    n = min(max_workers(workers), len(numbers))
    if n <= 1:
        return [run_criterion(k, settings) for k in numbers]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(run_criterion, numbers, [settings] * len(numbers)))
