"""First eigenvalue, regime classification, energies and steady profiles.

The steady equation solved here is

    B phi + a phi = sign * p / |p - 1| * phi^p,

where ``sign`` is the sign of the first eigenvalue of ``B + a`` (zero in the
neutral case). Its positive solutions are the fixed points of the normalized
flow in :mod:`bdflow.evolution`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import minimize

from . import geometry
from .dtn import DtNOperator
from .geometry import BoundaryCurve
from .numerics import NumericsError, solve_dense, sym_eig

MIN_EXPONENT_GAP = 0.05


class ProblemError(ValueError):
    pass


class SteadyStateError(RuntimeError):
    def __init__(self, message: str, residual: float | None = None):
        self.residual = residual
        super().__init__(message)


class Regime(str, Enum):
    GROWTH = "Growth"
    NEUTRAL = "Neutral"
    EXTINCTION_OR_BLOWUP = "ExtinctionOrBlowup"


def check_exponent(p: float) -> float:
    p = float(p)
    if not np.isfinite(p) or p <= 0:
        raise ProblemError(f"exponent p must be positive, got {p}")
    if abs(p - 1.0) < MIN_EXPONENT_GAP:
        raise ProblemError(
            f"exponent p = {p} is too close to 1: |p - 1| must be >= {MIN_EXPONENT_GAP}"
        )
    return p


def default_zero_tol(a) -> float:
    return 1e-8 * (1.0 + float(np.max(np.abs(a))))


def operator_matrix(dtn: DtNOperator, a) -> np.ndarray:
    """Nodal matrix of ``B + diag(a)``."""
    return dtn.matrix + np.diag(np.asarray(a, dtype=float))


def _weighted_symmetric(curve: BoundaryCurve, matrix: np.ndarray, weight=None):
    """Conjugate by sqrt(quadrature weight * weight) and symmetrize."""
    w = curve.weights if weight is None else curve.weights * weight
    sq = np.sqrt(w)
    S = sq[:, None] * matrix / sq[None, :]
    defect = float(np.max(np.abs(S - S.T)) / max(np.max(np.abs(S)), 1e-300))
    return 0.5 * (S + S.T), sq, defect


def first_eigen(curve: BoundaryCurve, dtn: DtNOperator, a, method: str = "auto"):
    """Smallest eigenvalue of ``B + a`` and its positive eigenfunction.

    The eigenfunction is normalized in L^2 of arclength. Raises
    :class:`ProblemError` if the computed ground state changes sign, which
    signals a discretization fault rather than a property of the problem.
    """
    a = geometry._check_field(curve, a, "coefficient a")
    S, sq, _ = _weighted_symmetric(curve, operator_matrix(dtn, a))
    eig = sym_eig(S, tol=np.inf, method=method)
    phi1 = eig.vectors[:, 0] / sq
    if phi1.sum() < 0:
        phi1 = -phi1
    if np.min(phi1) <= 0:
        raise ProblemError(
            f"first eigenfunction is not positive (min {np.min(phi1):.3e}); refine the grid"
        )
    phi1 /= geometry.l2_norm(curve, phi1)
    return float(eig.values[0]), phi1


def classify_regime(lambda1: float, p: float, zero_tol: float) -> Regime:
    check_exponent(p)
    if abs(lambda1) <= zero_tol:
        return Regime.NEUTRAL
    if lambda1 * (p - 1.0) < 0:
        return Regime.GROWTH
    return Regime.EXTINCTION_OR_BLOWUP


def separable_b(t, c: float, p: float, sign: int):
    """Time factor of the separable solution ``phi * b(t)``.

    ``sign`` is the regime sign of the first eigenvalue. The factor is
    ``(c - t)^(1/(p-1))`` when ``sign (p - 1) > 0`` (vanishing at ``t = c``),
    ``(c + t)^(1/(p-1))`` when ``sign (p - 1) < 0`` and ``c^(1/(p-1))`` for
    ``sign = 0``.
    """
    if c <= 0:
        raise ProblemError(f"separable constant c must be positive, got {c}")
    t = np.asarray(t, dtype=float)
    expo = 1.0 / (p - 1.0)
    branch = np.sign(sign) * np.sign(p - 1.0)
    if branch > 0:
        if np.any(t >= c):
            raise ProblemError(f"separable solution ends at t = c = {c}; got t up to {np.max(t)}")
        out = (c - t) ** expo
    elif branch < 0:
        out = (c + t) ** expo
    else:
        out = np.full_like(t, c**expo)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class ProblemSpec:
    p: float
    a: np.ndarray
    curve: BoundaryCurve
    dtn: DtNOperator
    lambda1: float
    phi1: np.ndarray
    zero_tol: float
    regime: Regime
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def sign(self) -> int:
        return 0 if self.regime is Regime.NEUTRAL else int(np.sign(self.lambda1))

    @property
    def q(self) -> float:
        """Source coefficient ``p / |p - 1|`` of the normalized flow."""
        return self.p / abs(self.p - 1.0)

    @property
    def matrix(self) -> np.ndarray:
        if "matrix" not in self._cache:
            self._cache["matrix"] = operator_matrix(self.dtn, self.a)
        return self._cache["matrix"]

    def apply(self, f) -> np.ndarray:
        """``(B + a) f``."""
        f = np.asarray(f, dtype=float)
        return self.dtn.apply(f) + self.a * f


def make_problem(curve: BoundaryCurve, dtn: DtNOperator, p: float, a,
                 zero_tol: float | None = None) -> ProblemSpec:
    p = check_exponent(p)
    a = np.array(geometry._check_field(curve, a, "coefficient a"))
    if dtn.N != curve.N:
        raise ProblemError(f"DtN operator has {dtn.N} nodes, curve has {curve.N}")
    tol = default_zero_tol(a) if zero_tol is None else float(zero_tol)
    lambda1, phi1 = first_eigen(curve, dtn, a)
    return ProblemSpec(p, a, curve, dtn, lambda1, phi1, tol, classify_regime(lambda1, p, tol))


def _check_nonnegative(f, name="field"):
    if np.any(f < 0):
        raise ProblemError(f"{name} must be nonnegative, min is {np.min(f):.3e}")


def energy_G(f, spec: ProblemSpec) -> float:
    """Lyapunov functional of the normalized flow."""
    f = geometry._check_field(spec.curve, f)
    _check_nonnegative(f)
    p = spec.p
    density = 0.5 * f * spec.apply(f) - spec.sign * p / (abs(p - 1.0) * (p + 1.0)) * f ** (p + 1)
    return geometry.integrate_boundary(spec.curve, density)


def energy_Ep(f, spec: ProblemSpec) -> float:
    """Dirichlet-type quotient with the L^(p+1) trace norm in the denominator."""
    f = geometry._check_field(spec.curve, f)
    denom = geometry.integrate_boundary(spec.curve, np.abs(f) ** (spec.p + 1))
    if denom <= 0:
        raise ProblemError("E_p is undefined for a field with zero trace norm")
    num = geometry.integrate_boundary(spec.curve, f * spec.apply(f))
    return num / denom ** (2.0 / (spec.p + 1))


def steady_residual(phi, spec: ProblemSpec) -> np.ndarray:
    return spec.apply(phi) - spec.sign * spec.q * phi**spec.p


def estimate_Yp(spec: ProblemSpec, harmonics: int = 5) -> float:
    """Minimize E_p over the span of phi1 and the first few harmonics.

    This is a low-dimensional estimate of the infimum, useful for its sign.
    """
    curve = spec.curve
    basis = [spec.phi1]
    for k in range(1, harmonics + 1):
        basis += [np.cos(k * curve.theta), np.sin(k * curve.theta)]
    basis = np.column_stack(basis)

    def objective(coef):
        return energy_Ep(basis @ coef, spec)

    x0 = np.zeros(basis.shape[1])
    x0[0] = 1.0
    res = minimize(objective, x0, method="BFGS", options={"gtol": 1e-10})
    return float(min(res.fun, objective(x0)))


@dataclass(frozen=True)
class SteadyState:
    phi: np.ndarray
    lambda1: float
    phi1: np.ndarray
    Yp: float
    residual: float
    regime: Regime
    iterations: int = 0
    mass_target: float | None = None

    def to_dict(self) -> dict:
        return {
            "lambda1": self.lambda1,
            "regime": self.regime.value,
            "Yp": self.Yp,
            "residual": self.residual,
            "iterations": self.iterations,
            "mass_target": self.mass_target,
            "phi_min": float(np.min(self.phi)),
            "phi_max": float(np.max(self.phi)),
        }


def initial_scale(spec: ProblemSpec) -> float:
    """Scale ``c`` with ``<F(c phi1), phi1> = 0``.

    The projected equation ``c lambda1 = sign q c^p int phi1^(p+1)`` is solved
    in closed form.
    """
    moment = geometry.integrate_boundary(spec.curve, spec.phi1 ** (spec.p + 1))
    return (abs(spec.lambda1) / (spec.q * moment)) ** (1.0 / (spec.p - 1.0))


def neutral_profile(spec: ProblemSpec, mass_target: float) -> np.ndarray:
    """Multiple of phi1 carrying the conserved mass ``int phi^p phi1``."""
    if mass_target is None or not mass_target > 0:
        raise ProblemError("the neutral regime needs a positive mass_target = int w0^p phi1 dS")
    moment = geometry.integrate_boundary(spec.curve, spec.phi1 ** (spec.p + 1))
    return (mass_target / moment) ** (1.0 / spec.p) * spec.phi1


def mass_of(u, spec: ProblemSpec) -> float:
    return geometry.integrate_boundary(spec.curve, np.asarray(u) ** spec.p * spec.phi1)


def _newton(M, phi, p, q, sign, max_iter):
    """Damped Newton on ``M phi - sign q phi^p``; returns (phi, residual, iterations)."""

    def residual(f):
        return M @ f - sign * q * f**p

    F = residual(phi)
    merit = float(F @ F)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        target = 1e-9 * (1.0 + np.max(phi) ** p)
        if np.max(np.abs(F)) <= 1e-3 * target:
            break
        J = M - np.diag(sign * q * p * phi ** (p - 1.0))
        try:
            delta = -solve_dense(J, F)
        except NumericsError as exc:
            raise SteadyStateError(f"singular Newton matrix: {exc}",
                                   float(np.max(np.abs(F)))) from exc
        step = 1.0
        while True:
            trial = phi + step * delta
            if np.all(trial > 0):
                F_trial = residual(trial)
                merit_trial = float(F_trial @ F_trial)
                if merit_trial <= (1.0 - 1e-4 * step) * merit:
                    break
            step *= 0.5
            if step < 1e-10:
                break
        if step < 1e-10:
            # no descent left: accept if already within contract, else stagnate
            if np.max(np.abs(F)) <= target:
                break
            if not np.all(phi + 1e-10 * delta > 0):
                raise SteadyStateError("positivity lost and not recoverable by backtracking",
                                       float(np.max(np.abs(F))))
            raise SteadyStateError(
                f"Newton stagnated with residual {np.max(np.abs(F)):.3e}", float(np.max(np.abs(F)))
            )
        phi, F, merit = trial, F_trial, merit_trial
    res = float(np.max(np.abs(F)))
    if res > 1e-9 * (1.0 + np.max(phi) ** p):
        raise SteadyStateError(f"Newton did not converge in {max_iter} iterations "
                               f"(residual {res:.3e})", res)
    return phi, res, iterations


def _continuation(spec: ProblemSpec, max_iter: int, min_step: float = 1e-3):
    """Follow the positive branch from ``a = lambda1`` (constant) to ``a``.

    With the constant coefficient ``lambda1`` the profile is an explicit
    constant and the first eigenvalue is unchanged; concavity of the first
    eigenvalue in ``a`` keeps it at least ``lambda1`` along the path.
    """
    p, q, sign = spec.p, spec.q, spec.sign
    B = spec.dtn.matrix
    lam = spec.lambda1
    phi = np.full(spec.curve.N, (abs(lam) / q) ** (1.0 / (p - 1.0)))
    s, ds, total = 0.0, 0.25, 0
    while s < 1.0:
        trial_s = min(1.0, s + ds)
        a_s = (1.0 - trial_s) * lam + trial_s * spec.a
        try:
            trial, res, its = _newton(B + np.diag(a_s), phi.copy(), p, q, sign, max_iter)
        except SteadyStateError:
            ds *= 0.5
            if ds < min_step:
                raise
            continue
        phi, s, total = trial, trial_s, total + its
        ds = min(2.0 * ds, 0.5)
    return phi, res, total


def solve_steady(spec: ProblemSpec, init=None, mass_target: float | None = None,
                 max_iter: int = 100, estimate_energy: bool = True) -> SteadyState:
    """Positive steady profile by damped Newton (or mass selection when neutral).

    Newton steps are shortened until the iterate stays positive and the
    squared residual satisfies an Armijo decrease. When Newton from the
    default guess stagnates, the profile is continued from a constant
    coefficient instead.
    """
    Yp = estimate_Yp(spec) if estimate_energy else float("nan")
    if spec.regime is Regime.NEUTRAL:
        phi = neutral_profile(spec, mass_target)
        res = float(np.max(np.abs(steady_residual(phi, spec))))
        return SteadyState(phi, spec.lambda1, spec.phi1, Yp, res, spec.regime, 0, mass_target)

    if init is None:
        phi = initial_scale(spec) * spec.phi1
    else:
        phi = np.array(geometry._check_field(spec.curve, init, "initial guess"))
        if np.any(phi <= 0):
            raise ProblemError("initial guess must be strictly positive")
    try:
        phi, res, iterations = _newton(spec.matrix, phi, spec.p, spec.q, spec.sign, max_iter)
    except SteadyStateError:
        if init is not None:
            raise
        phi, res, iterations = _continuation(spec, max_iter)
    return SteadyState(phi, spec.lambda1, spec.phi1, Yp, res, spec.regime, iterations, mass_target)


def random_positive_field(curve: BoundaryCurve, rng, harmonics: int = 4,
                          low: float = 0.5, high: float = 2.0) -> np.ndarray:
    """Smooth random field with values inside ``[low, high]``."""
    terms = [(k, *(rng.normal(size=2) / k)) for k in range(1, harmonics + 1)]
    g = geometry.fourier_field(curve, 0.0, terms)
    g = (g - g.min()) / max(np.ptp(g), 1e-300)
    lo = rng.uniform(low, 0.5 * (low + high))
    hi = rng.uniform(0.5 * (low + high), high)
    return lo + (hi - lo) * g


def uniqueness_probe(spec: ProblemSpec, trials: int = 5, seed: int = 0) -> dict:
    """Solve from several random positive guesses and compare the results."""
    if spec.regime is not Regime.GROWTH:
        raise ProblemError(f"uniqueness probe needs the Growth regime, got {spec.regime.value}")
    rng = np.random.default_rng(seed)
    scale = initial_scale(spec)
    sols = []
    for _ in range(int(trials)):
        guess = scale * random_positive_field(spec.curve, rng)
        sols.append(solve_steady(spec, init=guess, estimate_energy=False).phi)
    dist = 0.0
    for i in range(len(sols)):
        for j in range(i + 1, len(sols)):
            dist = max(dist, float(np.max(np.abs(sols[i] - sols[j]))))
    return {"trials": len(sols), "max_distance": dist,
            "phi_min": [float(s.min()) for s in sols], "phi_max": [float(s.max()) for s in sols]}
