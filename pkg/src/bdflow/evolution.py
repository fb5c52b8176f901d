"""Backward Euler time stepping of the physical and normalized flows.

The stepped unknown is ``v = w^p``. One step solves

    v_new + dt * ((B + a) v_new^(1/p) - s * v_new) = v_old

by damped Newton, where ``s = sign * p / |p - 1|`` in the normalized flow and
``s = 0`` in the physical one.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.optimize import brentq

from . import geometry
from .numerics import NumericsError, fit_line, solve_dense
from .stationary import ProblemError, ProblemSpec, Regime, energy_Ep, energy_G, separable_b

POSITIVITY_FLOOR = 1e-12


class FlowMode(str, Enum):
    PHYSICAL = "Physical"
    NORMALIZED = "Normalized"


class StepError(RuntimeError):
    """Newton failed to converge or could not keep the iterate positive."""


class EvolutionError(RuntimeError):
    def __init__(self, message: str, state=None):
        self.state = state
        super().__init__(message)


@dataclass(frozen=True)
class FlowState:
    time: float
    u: np.ndarray
    v: np.ndarray
    dt_last: float = 0.0

    @classmethod
    def from_field(cls, time: float, u, p: float, dt_last: float = 0.0) -> "FlowState":
        u = np.asarray(u, dtype=float)
        return cls(float(time), u, u**p, dt_last)


def _source(spec: ProblemSpec, mode: FlowMode) -> float:
    return spec.sign * spec.q if mode is FlowMode.NORMALIZED else 0.0


def step(state: FlowState, spec: ProblemSpec, mode: FlowMode, dt: float,
         max_iter: int = 30) -> FlowState:
    """One backward Euler step of size ``dt``."""
    if not dt > 0:
        raise ProblemError(f"time step must be positive, got {dt}")
    p = spec.p
    inv_p = 1.0 / p
    src = _source(spec, FlowMode(mode))
    M = spec.matrix
    n = M.shape[0]
    diag = np.arange(n)
    v_old = state.v
    v = v_old.copy()

    def residual(v):
        w = v**inv_p
        return v - v_old + dt * (M @ w - src * v)

    G = residual(v)
    norm = np.abs(G).max()
    update = np.inf
    for _ in range(max_iter):
        # a small residual alone is not enough near equilibrium, where the
        # whole increment is tiny; also require a quadratically small update
        vmax = np.abs(v).max()
        if norm <= 1e-11 * vmax and update <= 1e-8 * vmax:
            return FlowState(state.time + dt, v**inv_p, v, dt)
        w = v**inv_p
        J = (dt * inv_p) * M * (w / v)
        J[diag, diag] += 1.0 - dt * src
        try:
            delta = -solve_dense(J, G)
        except NumericsError as exc:
            raise StepError(str(exc)) from exc
        lam = 1.0
        while True:
            trial = v + lam * delta
            if trial.min() > 0:
                G_trial = residual(trial)
                norm_trial = np.abs(G_trial).max()
                if norm_trial < norm or lam < 1e-3:
                    break
            lam *= 0.5
            if lam < 1e-8:
                raise StepError(f"positivity lost at dt = {dt:.3e}")
        update = lam * np.abs(delta).max()
        v, G, norm = trial, G_trial, norm_trial
    raise StepError(f"Newton did not converge at dt = {dt:.3e} (residual {norm:.3e})")


@dataclass
class EvolveControls:
    rtol: float = 1e-8
    dt0: float | None = None
    dt_min: float = 1e-12
    dt_max: float | None = None
    fixed_dt: float | None = None
    growth: float = 1.5
    store_stride: int = 1
    floor_factor: float = 1e-3
    ceiling_factor: float = 1e3
    max_steps: int = 2_000_000
    halt: bool = True
    # optional early stop, called with the accepted state
    stop_when: object = None


@dataclass
class Trajectory:
    mode: FlowMode
    times: np.ndarray
    fields: np.ndarray  # (samples, N)
    spec: ProblemSpec
    diagnostics: dict = field(default_factory=dict)
    Tstar_estimate: float | None = None
    halted: str | None = None
    steps: int = 0
    rejected: int = 0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    @property
    def final(self) -> np.ndarray:
        return self.fields[-1]


DIAGNOSTIC_NAMES = ("Z", "G", "I", "min", "max", "M1")


def sample_diagnostics(u, spec: ProblemSpec) -> dict:
    curve, p = spec.curve, spec.p
    lp1 = geometry.integrate_boundary(curve, u ** (p + 1))
    return {
        "Z": lp1 ** ((p - 1.0) / (p + 1.0)),
        "G": energy_G(u, spec),
        "I": energy_Ep(u, spec),
        "min": float(np.min(u)),
        "max": float(np.max(u)),
        "M1": geometry.integrate_boundary(curve, u**p * spec.phi1),
    }


def _collect(mode, times, fields, spec, **kw) -> Trajectory:
    fields = np.asarray(fields)
    diag = {k: [] for k in DIAGNOSTIC_NAMES}
    for u in fields:
        for k, val in sample_diagnostics(u, spec).items():
            diag[k].append(val)
    diag = {k: np.asarray(v) for k, v in diag.items()}
    return Trajectory(FlowMode(mode), np.asarray(times, dtype=float), fields, spec, diag, **kw)


def _check_initial(spec: ProblemSpec, u0) -> np.ndarray:
    u0 = np.array(geometry._check_field(spec.curve, u0, "initial data"))
    if np.min(u0) < POSITIVITY_FLOOR:
        raise ProblemError(
            f"initial data must be positive (min {np.min(u0):.3e} below {POSITIVITY_FLOOR})"
        )
    return u0


def evolve(spec: ProblemSpec, u0, mode=FlowMode.PHYSICAL, horizon: float = 1.0,
           controls: EvolveControls | None = None) -> Trajectory:
    """Evolve from ``u0`` up to ``horizon`` (or a near-singular halt).

    With ``controls.fixed_dt`` unset the step is chosen by step doubling: a
    step is accepted when two half steps agree with one full step to
    ``rtol`` relative in the sup norm, and the two half steps are kept.
    """
    ctl = controls or EvolveControls()
    mode = FlowMode(mode)
    u0 = _check_initial(spec, u0)
    if not horizon > 0:
        raise ProblemError(f"horizon must be positive, got {horizon}")
    p = spec.p
    singular = mode is FlowMode.PHYSICAL and spec.regime is Regime.EXTINCTION_OR_BLOWUP
    floor = ctl.floor_factor * np.min(u0)
    ceiling = ctl.ceiling_factor * np.max(u0)

    state = FlowState.from_field(0.0, u0, p)
    times, fields = [0.0], [u0.copy()]
    dt = ctl.fixed_dt or ctl.dt0 or min(1e-3, horizon / 10)
    if ctl.dt_max:
        dt = min(dt, ctl.dt_max)
    steps = rejected = 0
    halted = None
    while state.time < horizon * (1 - 1e-14):
        if steps >= ctl.max_steps:
            halted = "max_steps"
            break
        h = min(dt, horizon - state.time)
        try:
            if ctl.fixed_dt:
                new = step(state, spec, mode, h)
            else:
                full = step(state, spec, mode, h)
                half = step(step(state, spec, mode, 0.5 * h), spec, mode, 0.5 * h)
                err = float(np.max(np.abs(half.v - full.v)) / np.max(np.abs(half.v)))
                if err > ctl.rtol:
                    rejected += 1
                    dt = h * max(0.2, 0.9 * np.sqrt(ctl.rtol / err))
                    if dt < ctl.dt_min:
                        raise EvolutionError(f"step size underflow (dt = {dt:.3e}) at t = "
                                             f"{state.time:.12g}", state)
                    continue
                new = replace(half, dt_last=h)
                factor = ctl.growth if err == 0 else min(ctl.growth, 0.9 * np.sqrt(ctl.rtol / err))
                dt = h * max(factor, 0.2)
                if ctl.dt_max:
                    dt = min(dt, ctl.dt_max)
        except StepError:
            rejected += 1
            if ctl.fixed_dt:
                raise EvolutionError(f"Newton failed at fixed dt = {h:.3e}, t = "
                                     f"{state.time:.12g}", state)
            dt = 0.5 * h
            if dt < ctl.dt_min:
                raise EvolutionError(f"step size underflow (dt = {dt:.3e}) at t = "
                                     f"{state.time:.12g}", state)
            continue
        state = new
        steps += 1
        at_end = state.time >= horizon * (1 - 1e-14)
        if singular and ctl.halt:
            if p > 1 and np.min(state.u) < floor:
                halted = "floor"
            elif p < 1 and np.max(state.u) > ceiling:
                halted = "ceiling"
        if ctl.stop_when is not None and ctl.stop_when(state):
            halted = "stop_when"
        if steps % ctl.store_stride == 0 or at_end or halted:
            times.append(state.time)
            fields.append(state.u.copy())
        if halted:
            break
    traj = _collect(mode, times, fields, spec, halted=halted, steps=steps, rejected=rejected)
    traj.meta["fixed_dt"] = ctl.fixed_dt
    if halted in ("floor", "ceiling") and len(traj) >= 5:
        traj.Tstar_estimate = estimate_Tstar(traj)
    return traj


@dataclass(frozen=True)
class TstarFit:
    Tstar: float
    slope: float
    intercept: float
    rms: float
    secant: float  # zero crossing of the last secant of Z
    window: int


def fit_Tstar(traj: Trajectory, window: int = 20) -> TstarFit:
    """Linear extrapolation of ``Z(t)`` over the last samples to ``Z = 0``."""
    if traj.mode is not FlowMode.PHYSICAL:
        raise ProblemError("T* is estimated from physical trajectories")
    n = min(window, len(traj))
    if n < 5:
        raise ProblemError(f"T* extrapolation needs at least 5 samples, have {n}")
    t = traj.times[-n:]
    Z = traj.diagnostics["Z"][-n:]
    slope, intercept, rms = fit_line(t, Z)
    if slope == 0:
        raise ProblemError("Z is flat over the extrapolation window")
    s = (Z[-1] - Z[-2]) / (t[-1] - t[-2])
    secant = float(t[-1] - Z[-1] / s)
    return TstarFit(float(-intercept / slope), slope, intercept, rms, secant, n)


def estimate_Tstar(traj: Trajectory, window: int = 20) -> float:
    return fit_Tstar(traj, window).Tstar


def time_factor(t, spec: ProblemSpec, Tstar: float | None = None):
    """Branch-correct ``b(t)`` and stretched time ``tau(t)`` of the rescaling."""
    t = np.asarray(t, dtype=float)
    p = spec.p
    if spec.regime is Regime.NEUTRAL:
        return np.ones_like(t), t.copy()
    if spec.regime is Regime.GROWTH:
        return (1.0 + t) ** (1.0 / (p - 1.0)), np.log1p(t)
    if Tstar is None:
        raise ProblemError("the extinction/blow-up rescaling needs T*")
    if np.any(t >= Tstar):
        raise ProblemError(f"sample at t = {np.max(t)} is not before T* = {Tstar}")
    return (Tstar - t) ** (1.0 / (p - 1.0)), -np.log1p(-t / Tstar)


def rescale_trajectory(traj: Trajectory, Tstar: float | None = None) -> Trajectory:
    """Map a physical trajectory to the normalized variables ``(tau, w)``."""
    if traj.mode is not FlowMode.PHYSICAL:
        raise ProblemError("only physical trajectories can be rescaled")
    spec = traj.spec
    if Tstar is None:
        Tstar = traj.Tstar_estimate
    b, tau = time_factor(traj.times, spec, Tstar)
    out = _collect(FlowMode.NORMALIZED, tau, traj.fields / b[:, None], spec,
                   steps=traj.steps, rejected=traj.rejected, halted=traj.halted)
    out.meta = {"rescaled_from": "Physical", "Tstar": Tstar, "t": traj.times.copy()}
    return out


def normalized_initial(u0, spec: ProblemSpec, Tstar: float | None = None) -> np.ndarray:
    b, _ = time_factor(np.zeros(1), spec, Tstar)
    return np.asarray(u0, dtype=float) / b[0]


def monitor_H(u, spec: ProblemSpec) -> np.ndarray:
    """``u^-p (B u + a u)``, which equals ``-p u_t / u`` along the physical flow."""
    u = geometry._check_field(spec.curve, u)
    if np.any(u <= 0):
        raise ProblemError("H is defined for positive fields only")
    return spec.apply(u) / u**spec.p


def separable_initial(spec: ProblemSpec, phi, c: float) -> np.ndarray:
    """Initial trace of the separable solution ``phi * b_c(t)``."""
    return np.asarray(phi) * separable_b(0.0, c, spec.p, spec.sign)


def separable_solution(spec: ProblemSpec, phi, c: float, t) -> np.ndarray:
    return np.multiply.outer(np.atleast_1d(separable_b(t, c, spec.p, spec.sign)), np.asarray(phi))


def separable_bracket(spec: ProblemSpec, phi, u0) -> tuple[float, float]:
    """Extinction/blow-up times of the separable solutions enclosing ``u0``.

    Comparison with ``phi * b_s`` from above and below gives
    ``s1 <= T* <= s2``.
    """
    if spec.regime is not Regime.EXTINCTION_OR_BLOWUP:
        raise ProblemError("the separable bracket applies to the extinction/blow-up regime")
    ratio = np.asarray(u0) / np.asarray(phi)
    ends = sorted(float(r) ** (spec.p - 1.0) for r in (ratio.min(), ratio.max()))
    return ends[0], ends[1]


def shoot_Tstar(spec: ProblemSpec, u0, phi, guess: float, mode_vector,
                tau_end: float, dt: float, rel_width: float = 1e-3) -> float:
    """Refine T* so that the normalized flow stays near ``phi``.

    The rescaled data ``u0 / b(0)`` depend on T* only through a scalar factor.
    Away from the true T* the normalized solution leaves ``phi`` along the
    unstable direction ``mode_vector`` (weighted so that a plain dot product
    gives the projection); its sign at ``tau_end`` or at the escape time
    brackets the root.
    """
    mode_vector = np.asarray(mode_vector, dtype=float)
    escape = 0.5 * float(np.max(phi))

    def signed_drift(T):
        w0 = normalized_initial(u0, spec, T)
        ctl = EvolveControls(fixed_dt=dt, store_stride=10**9,
                             stop_when=lambda s: np.max(np.abs(s.u - phi)) > escape)
        try:
            traj = evolve(spec, w0, FlowMode.NORMALIZED, tau_end, ctl)
            last = traj.final
        except EvolutionError as exc:
            last = exc.state.u
        return float(mode_vector @ (last - phi))

    lo, hi = guess * (1 - rel_width), guess * (1 + rel_width)
    f_lo, f_hi = signed_drift(lo), signed_drift(hi)
    for _ in range(20):
        if np.sign(f_lo) != np.sign(f_hi):
            break
        lo, hi = lo - (hi - lo), hi + (hi - lo)
        f_lo, f_hi = signed_drift(lo), signed_drift(hi)
    else:
        raise EvolutionError("could not bracket T* by shooting")
    return float(brentq(signed_drift, lo, hi, xtol=1e-16 * guess, rtol=4 * np.finfo(float).eps,
                        maxiter=200))


def infinite_speed_probe(spec: ProblemSpec, u0, t0: float,
                         controls: EvolveControls | None = None) -> float:
    """Smallest ratio ``min_x u(x, t) / t^(1/p)`` over stored samples in (0, t0]."""
    traj = evolve(spec, u0, FlowMode.PHYSICAL, t0, controls)
    t = traj.times[1:]
    mins = traj.diagnostics["min"][1:]
    return float(np.min(mins / t ** (1.0 / spec.p)))


def bump_data(curve, minimum: float, power: int = 4) -> np.ndarray:
    """Unit-maximum bump ``m + (1 - m) ((1 + cos theta) / 2)^power``."""
    return minimum + (1.0 - minimum) * (0.5 * (1.0 + np.cos(curve.theta))) ** power


def write_trajectory_csv(traj: Trajectory, path, header_comment: str | None = None):
    """One row per sample: time, diagnostics, then the nodal field values."""
    names = ["time", *DIAGNOSTIC_NAMES] + [f"u{i}" for i in range(traj.fields.shape[1])]
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(names)
        for i, t in enumerate(traj.times):
            row = [t] + [traj.diagnostics[k][i] for k in DIAGNOSTIC_NAMES] + list(traj.fields[i])
            writer.writerow([repr(float(x)) for x in row])
