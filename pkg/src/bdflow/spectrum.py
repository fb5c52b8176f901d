"""Linearization about a steady profile and its weighted spectrum.

Perturbations ``phi + h`` of a steady state evolve, to first order, by
``p phi^(p-1) h_t = -L h`` with

    L = B + a - sign * p^2 / |p - 1| * phi^(p-1),

so the relevant eigenproblem is ``L e = mu phi^(p-1) e`` and modes decay like
``exp(-mu tau / p)``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import geometry
from .numerics import sym_eig
from .stationary import ProblemSpec


class SpectrumError(RuntimeError):
    pass


def assemble_linearized(spec: ProblemSpec, phi) -> np.ndarray:
    phi = geometry._check_field(spec.curve, phi, "phi")
    if np.any(phi <= 0):
        raise SpectrumError("the base profile must be positive")
    p = spec.p
    coeff = spec.sign * p * p / abs(p - 1.0)
    return spec.matrix - np.diag(coeff * phi ** (p - 1.0))


@dataclass(frozen=True)
class LinearizedSpectrum:
    mu: np.ndarray  # ascending
    modes: np.ndarray  # columns, orthonormal in L^2(phi^(p-1) dS)
    phi: np.ndarray
    weight: np.ndarray  # phi^(p-1)
    p: float
    symmetry_defect: float
    zero_tol: float
    I: int = 0
    K: int = 0
    k: int = 1
    gamma_p: float = float("nan")

    def to_dict(self) -> dict:
        return {
            "mu": [float(m) for m in self.mu],
            "I": self.I,
            "K": self.K,
            "k": self.k,
            "gamma_p": self.gamma_p,
            "symmetry_defect": self.symmetry_defect,
            "zero_tol": self.zero_tol,
        }


def default_zero_tol(mu1: float) -> float:
    return 1e-6 * (1.0 + abs(mu1))


def classify_modes(mu, p: float, zero_tol: float):
    """Counts of unstable and central modes, index of the first stable one and its rate."""
    mu = np.asarray(mu, dtype=float)
    I = int(np.sum(mu < -zero_tol))
    K = int(np.sum(np.abs(mu) <= zero_tol))
    k = I + K + 1
    if k > len(mu):
        raise SpectrumError("no positive eigenvalue: the spectrum has no stable mode")
    return I, K, k, float(mu[k - 1] / p)


def solve_weighted_spectrum(L, phi, p: float, curve, zero_tol: float | None = None,
                            method: str = "auto") -> LinearizedSpectrum:
    """Solve ``L e = mu phi^(p-1) e`` through the symmetric reduction.

    Conjugating with ``sqrt(quadrature weight * phi^(p-1))`` turns the pencil
    into a standard symmetric problem.
    """
    phi = geometry._check_field(curve, phi, "phi")
    weight = phi ** (p - 1.0)
    if np.any(weight <= 0) or not np.all(np.isfinite(weight)):
        raise SpectrumError("the weight phi^(p-1) must be positive")
    sq = np.sqrt(curve.weights * weight)
    # D^-1 (Q L) D^-1 with Q the quadrature weights and D = sqrt(Q phi^(p-1))
    S = (curve.weights / sq)[:, None] * np.asarray(L) / sq[None, :]
    defect = float(np.max(np.abs(S - S.T)) / max(np.max(np.abs(S)), 1e-300))
    eig = sym_eig(0.5 * (S + S.T), tol=np.inf, method=method)
    modes = eig.vectors / sq[:, None]
    # sign: positive weighted mean, so e_1 is a positive multiple of phi
    means = (curve.weights * weight) @ modes
    modes = modes * np.where(means < -1e-12, -1.0, 1.0)
    tol = default_zero_tol(eig.values[0]) if zero_tol is None else float(zero_tol)
    I, K, k, gamma = classify_modes(eig.values, p, tol)
    return LinearizedSpectrum(eig.values, modes, phi, weight, p, defect, tol, I, K, k, gamma)


def linearized_spectrum(spec: ProblemSpec, phi, zero_tol: float | None = None,
                        method: str = "auto") -> LinearizedSpectrum:
    return solve_weighted_spectrum(assemble_linearized(spec, phi), phi, spec.p, spec.curve,
                                   zero_tol, method)


def project_modes(h, spectrum: LinearizedSpectrum, curve, up_to: int | None = None) -> np.ndarray:
    """Weighted projections ``y_i = <h, e_i>`` for the first ``up_to`` modes.

    ``h`` may be a single field or a stack of fields (one per row).
    """
    n = spectrum.modes.shape[1]
    up_to = n if up_to is None else int(up_to)
    if up_to > n:
        raise SpectrumError(f"asked for {up_to} projections, spectrum has {n} modes")
    h = np.asarray(h, dtype=float)
    if h.shape[-1] != curve.N:
        raise SpectrumError(f"field has {h.shape[-1]} nodes, curve has {curve.N}")
    return (h * (curve.weights * spectrum.weight)) @ spectrum.modes[:, :up_to]


def write_spectrum_json(spectrum: LinearizedSpectrum, path, extra: dict | None = None):
    doc = spectrum.to_dict()
    doc.update(extra or {})
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def write_modes_csv(spectrum: LinearizedSpectrum, path, count: int | None = None,
                    header_comment: str | None = None):
    count = spectrum.modes.shape[1] if count is None else min(count, spectrum.modes.shape[1])
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh)
        writer.writerow([f"e{i + 1}" for i in range(count)])
        for row in spectrum.modes[:, :count]:
            writer.writerow([repr(float(x)) for x in row])
