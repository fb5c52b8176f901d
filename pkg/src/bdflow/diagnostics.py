"""Post-processing of trajectories: monotone functionals, Harnack ratios,
convergence-rate classification and eigenmode expansions."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import geometry
from .evolution import FlowMode, Trajectory, monitor_H
from .numerics import fit_line
from .spectrum import LinearizedSpectrum, project_modes

H_FLOOR = 1e-10


class DiagnosticsError(RuntimeError):
    pass


@dataclass(frozen=True)
class MonotoneReport:
    values: np.ndarray
    increments: np.ndarray
    passed: bool
    first_violation: int | None
    worst: float  # largest increment relative to its slack scale

    def to_dict(self) -> dict:
        return {"passed": self.passed, "first_violation": self.first_violation,
                "worst": self.worst, "samples": int(len(self.values))}


def monotone_report(values, slack: float = 1e-8, increasing: bool = False) -> MonotoneReport:
    """Check ``values[i+1] - values[i] <= slack (1 + |values[i]|)`` (or the mirror)."""
    values = np.asarray(values, dtype=float)
    inc = np.diff(values)
    signed = -inc if increasing else inc
    scaled = signed / (1.0 + np.abs(values[:-1]))
    bad = np.flatnonzero(scaled > slack)
    worst = float(scaled.max()) if scaled.size else 0.0
    return MonotoneReport(values, inc, bad.size == 0, int(bad[0]) if bad.size else None, worst)


def lyapunov_series(traj_or_values, slack: float = 1e-8) -> MonotoneReport:
    """Nonincrease of ``G`` along a normalized trajectory (or a raw series)."""
    if isinstance(traj_or_values, Trajectory):
        if traj_or_values.mode is not FlowMode.NORMALIZED:
            raise DiagnosticsError("G is the Lyapunov functional of the normalized flow")
        values = traj_or_values.diagnostics["G"]
    else:
        values = traj_or_values
    return monotone_report(values, slack)


def second_difference_report(times, values, sign: int, slack: float = 1e-7) -> dict:
    """One-signed second differences: ``sign * d2 >= -slack``.

    On a nonuniform grid ``d2`` is the change of slope times the local
    half-width, which reduces to the usual three-point difference on a
    uniform grid and vanishes on linear data.
    """
    t = np.asarray(times, dtype=float)
    z = np.asarray(values, dtype=float)
    if len(t) < 3:
        return {"passed": True, "worst": 0.0, "checked": 0}
    d1 = np.diff(z) / np.diff(t)
    d2 = np.diff(d1) * (0.5 * (t[2:] - t[:-2]))
    worst = float(np.min(sign * d2))
    return {"passed": bool(worst >= -slack), "worst": worst, "checked": int(len(d2))}


@dataclass(frozen=True)
class HarnackReport:
    times: np.ndarray
    r_sup: np.ndarray
    r_inf: np.ndarray
    C_emp: float
    elliptic_sup: np.ndarray
    elliptic_inf: np.ndarray
    lp1_ratio: np.ndarray
    passed: bool

    def to_dict(self) -> dict:
        return {
            "C_emp": self.C_emp,
            "r_sup_range": [float(self.r_sup.min()), float(self.r_sup.max())],
            "r_inf_range": [float(self.r_inf.min()), float(self.r_inf.max())],
            "elliptic_sup_max": float(self.elliptic_sup.max()),
            "elliptic_inf_min": float(self.elliptic_inf.min()),
            "lp1_ratio_range": [float(self.lp1_ratio.min()), float(self.lp1_ratio.max())],
            "passed": self.passed,
        }


def harnack_report(traj: Trajectory, Tstar: float | None) -> HarnackReport:
    """Sandwich ratios of ``u`` against ``(T* - t)^(1/(p-1))`` on ``t <= 0.95 T*``."""
    if Tstar is None:
        raise DiagnosticsError("the Harnack report needs an extinction/blow-up time")
    if traj.mode is not FlowMode.PHYSICAL:
        raise DiagnosticsError("the Harnack report works on physical trajectories")
    spec = traj.spec
    curve, p = spec.curve, spec.p
    keep = traj.times <= 0.95 * Tstar
    t = traj.times[keep]
    u = traj.fields[keep]
    b = (Tstar - t) ** (1.0 / (p - 1.0))
    r_sup = u.max(axis=1) / b
    r_inf = u.min(axis=1) / b
    l1 = u @ curve.weights
    lp1 = ((u ** (p + 1)) @ curve.weights) ** (1.0 / (p + 1))
    C = float(max(r_sup.max(), 1.0 / r_inf.min(), r_sup.max() / r_inf.min()))
    ok = bool(np.all(np.isfinite(r_sup)) and np.all(r_inf > 0) and np.isfinite(C))
    return HarnackReport(t, r_sup, r_inf, C, u.max(axis=1) / l1, u.min(axis=1) / l1,
                         lp1 / b, ok)


def h_bound_report(traj: Trajectory, slack: float = 1e-7) -> dict:
    """One-sided bound on ``H = u^-p (B u + a u)`` along a physical run.

    For ``p > 1`` the minimum over the boundary may not drop below
    ``min(min H(0), 0)``; for ``p < 1`` the maximum may not exceed
    ``max(max H(0), 0)``.
    """
    H = np.array([monitor_H(u, traj.spec) for u in traj.fields])
    if traj.spec.p > 1:
        series = H.min(axis=1)
        bound = min(series[0], 0.0)
        excess = bound - series
    else:
        series = H.max(axis=1)
        bound = max(series[0], 0.0)
        excess = series - bound
    worst = float(excess.max())
    return {"passed": bool(worst <= slack), "bound": float(bound), "worst_excess": worst,
            "side": "lower" if traj.spec.p > 1 else "upper"}


def ordering_report(lower: Trajectory, upper: Trajectory, slack: float = 1e-10) -> dict:
    """Pointwise order ``lower <= upper`` at common sample times."""
    n = min(len(lower), len(upper))
    if not np.allclose(lower.times[:n], upper.times[:n], rtol=1e-12, atol=1e-15):
        raise DiagnosticsError("the two trajectories are not sampled at the same times")
    gap = (upper.fields[:n] - lower.fields[:n]).min(axis=1)
    return {"passed": bool(gap.min() >= -slack), "min_gap": float(gap.min()), "samples": n}


class RateModel(str, Enum):
    EXPONENTIAL = "Exponential"
    ALGEBRAIC = "Algebraic"
    UNDETERMINED = "Undetermined"


@dataclass(frozen=True)
class RateReport:
    model: RateModel
    gamma_fit: float  # decay rate of the log-linear fit
    algebraic_exponent: float  # slope of the log-log fit
    window: tuple
    rms_exponential: float
    rms_algebraic: float
    samples: int
    gamma_p_reference: float | None = None
    reason: str = ""

    @property
    def rms(self) -> float:
        if self.model is RateModel.ALGEBRAIC:
            return self.rms_algebraic
        return self.rms_exponential

    @property
    def agreement(self) -> float | None:
        if self.gamma_p_reference is None:
            return None
        return abs(self.gamma_fit - self.gamma_p_reference) / self.gamma_p_reference

    def to_dict(self) -> dict:
        return {
            "model": self.model.value,
            "gamma_fit": self.gamma_fit,
            "algebraic_exponent": self.algebraic_exponent,
            "window": [float(x) for x in self.window],
            "rms": self.rms,
            "rms_exponential": self.rms_exponential,
            "rms_algebraic": self.rms_algebraic,
            "samples": self.samples,
            "gamma_p_reference": self.gamma_p_reference,
            "agreement": self.agreement,
            "reason": self.reason,
        }


class RateError(DiagnosticsError):
    pass


def fit_rate_series(taus, hnorms, window_fraction: float = 0.5, gamma_p: float | None = None,
                    phi_norm: float | None = None, min_samples: int = 20,
                    margin: float = 0.2) -> RateReport:
    """Classify the decay of ``||h(tau)||`` on the tail of the series.

    Samples below ``H_FLOOR`` are dropped. The tail is the last
    ``window_fraction`` of the remaining tau range. A model wins only when
    its rms residual beats the other one by the relative ``margin``.
    """
    tau = np.asarray(taus, dtype=float)
    h = np.asarray(hnorms, dtype=float)
    keep = (h > H_FLOOR) & (tau > 0)
    tau, h = tau[keep], h[keep]
    if len(tau) < min_samples:
        raise RateError(f"only {len(tau)} usable samples, need {min_samples}")
    start = tau[-1] - window_fraction * (tau[-1] - tau[0])
    tail = tau >= start
    tau, h = tau[tail], h[tail]
    if len(tau) < min_samples:
        raise RateError(f"tail window holds {len(tau)} samples, need {min_samples}")
    window = (float(tau[0]), float(tau[-1]))
    slope_e, _, rms_e = fit_line(tau, np.log(h))
    slope_a, _, rms_a = fit_line(np.log(tau), np.log(h))
    base = dict(gamma_fit=-slope_e, algebraic_exponent=slope_a, window=window,
                rms_exponential=rms_e, rms_algebraic=rms_a, samples=int(len(tau)),
                gamma_p_reference=gamma_p)
    if phi_norm is not None and h[0] >= 0.1 * phi_norm:
        return RateReport(RateModel.UNDETERMINED, reason="perturbation not yet small", **base)
    if rms_e <= 0.05 and rms_e <= (1.0 - margin) * rms_a:
        return RateReport(RateModel.EXPONENTIAL, **base)
    if -1.3 <= slope_a <= -0.7 and rms_a <= (1.0 - margin) * rms_e:
        return RateReport(RateModel.ALGEBRAIC, **base)
    return RateReport(RateModel.UNDETERMINED, reason="no model wins by the required margin",
                      **base)


def perturbation_norms(traj: Trajectory, phi) -> np.ndarray:
    curve = traj.spec.curve
    d = traj.fields - np.asarray(phi)[None, :]
    return np.sqrt((d * d) @ curve.weights)


def fit_rate(traj: Trajectory, phi, window_fraction: float = 0.5,
             gamma_p: float | None = None) -> RateReport:
    if traj.mode is not FlowMode.NORMALIZED:
        raise DiagnosticsError("rates are fitted on normalized trajectories")
    phi_norm = geometry.l2_norm(traj.spec.curve, phi)
    return fit_rate_series(traj.times, perturbation_norms(traj, phi), window_fraction,
                           gamma_p, phi_norm)


@dataclass(frozen=True)
class ExpansionReport:
    indices: list  # 0-based mode indices in the expanded band
    mu: np.ndarray
    coefficients: np.ndarray
    variation: np.ndarray  # tail total variation of y_i / decay_i, relative to |C_i|
    significant: np.ndarray  # modes whose coefficient is resolved above noise
    window: tuple
    taus: np.ndarray
    remainder: np.ndarray
    h_norm: np.ndarray
    remainder_rate: float
    target_rate: float
    passed: bool

    def to_dict(self) -> dict:
        return {
            "modes": [int(i) + 1 for i in self.indices],
            "mu": [float(m) for m in self.mu],
            "C": [float(c) for c in self.coefficients],
            "relative_variation": [float(v) for v in self.variation],
            "significant": [bool(s) for s in self.significant],
            "window": [float(x) for x in self.window],
            "remainder_rate": self.remainder_rate,
            "target_rate": self.target_rate,
            "remainder_over_h_end": (float(self.remainder[-1] / self.h_norm[-1])
                                     if self.h_norm[-1] > 0 else 0.0),
            "passed": self.passed,
        }


def decay_factors(taus, mu, p: float, dt: float | None = None) -> np.ndarray:
    """Linear decay ``exp(-mu tau / p)``, or its backward Euler counterpart
    ``(1 + mu dt / p)^(-tau / dt)`` when the run used a fixed step."""
    taus = np.asarray(taus, dtype=float)[:, None]
    rate = np.asarray(mu, dtype=float)[None, :] / p
    if dt:
        return np.exp(-taus / dt * np.log1p(rate * dt))
    return np.exp(-rate * taus)


def mode_expansion(traj: Trajectory, spectrum: LinearizedSpectrum, tail_fraction: float = 0.5,
                   dt: float | None = None, rate: RateReport | None = None,
                   variation_tol: float = 0.1, rate_factor: float = 1.5) -> ExpansionReport:
    """Leading-order eigenmode expansion of ``h = w - phi`` on the tail.

    Expands over the stable modes with ``mu_i / p < 2 gamma_p``. The limit
    ``C_i`` of ``y_i / decay_i`` is read at the last sample with
    ``||h|| > H_FLOOR``; the remainder after subtracting the expansion must
    decay at least like ``exp(-rate_factor gamma_p tau)``.
    """
    if rate is not None and rate.model is not RateModel.EXPONENTIAL:
        raise DiagnosticsError("mode expansion needs an exponentially converging trajectory")
    if traj.mode is not FlowMode.NORMALIZED:
        raise DiagnosticsError("mode expansion works on normalized trajectories")
    curve = traj.spec.curve
    p, gamma = spectrum.p, spectrum.gamma_p
    dt = dt if dt is not None else traj.meta.get("fixed_dt")
    h = traj.fields - spectrum.phi[None, :]
    hn = np.sqrt((h * h) @ curve.weights)
    band = 2 * gamma - spectrum.zero_tol  # a mode sitting at 2 gamma_p competes with h^2
    idx = [i for i, m in enumerate(spectrum.mu) if m > spectrum.zero_tol and m / p < band]
    mu = spectrum.mu[idx]
    keep = hn > H_FLOOR
    if not keep.any():
        # already at phi: every coefficient vanishes and nothing is left to explain
        zeros = np.zeros(len(idx))
        return ExpansionReport(idx, mu, zeros, zeros, zeros.astype(bool),
                               (float(traj.times[0]), float(traj.times[-1])), traj.times,
                               np.zeros(len(traj)), hn, float("inf"), 0.0, True)
    taus, h, hn = traj.times[keep], h[keep], hn[keep]
    if len(taus) < 10:
        raise DiagnosticsError("too few samples above the noise floor for an expansion")
    start = taus[-1] - tail_fraction * (taus[-1] - taus[0])
    tail = taus >= start
    y = project_modes(h, spectrum, curve)[:, idx]
    decay = decay_factors(taus, mu, p, dt)
    scaled = y / decay
    C = scaled[-1]
    tv = np.abs(np.diff(scaled[tail], axis=0)).sum(axis=0)
    significant = np.abs(C) > 1e-6 * max(float(np.max(np.abs(C))), H_FLOOR)
    variation = tv / np.where(np.abs(C) > 0, np.abs(C), np.inf)
    expansion = (C[None, :] * decay) @ spectrum.modes[:, idx].T
    rem = h - expansion
    rem_norm = np.sqrt((rem * rem) @ curve.weights)
    t_tail, r_tail = taus[tail], rem_norm[tail]
    ok = r_tail > 0
    if ok.sum() >= 3:
        slope, _, _ = fit_line(t_tail[ok], np.log(r_tail[ok]))
        rem_rate = -slope
    else:
        rem_rate = float("inf")
    target = rate_factor * gamma
    passed = bool(np.all(variation[significant] <= variation_tol) and rem_rate >= target)
    return ExpansionReport(idx, mu, C, variation, significant, (float(t_tail[0]),
                           float(t_tail[-1])), taus, rem_norm, hn, float(rem_rate),
                           float(target), passed)


def verify_suite(config=None, criteria=None, workers: int | None = None):
    """Run the canonical verification scenarios (all criteria by default).

    ``config`` is an optional :class:`~bdflow.config.RunConfig` whose
    ``verify`` section may narrow the criteria or coarsen the grids.
    """
    from .suite import SuiteSettings, run_suite

    settings = SuiteSettings.from_config(config)
    if criteria is None and config is not None:
        criteria = config.data.get("verify", {}).get("criteria")
    return run_suite(settings, criteria, workers)
