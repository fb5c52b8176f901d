"""Dense linear algebra and periodic signal kernels.

Everything here works on plain numpy arrays. Matrices are 2-D float arrays,
boundary samples are 1-D arrays on a uniform periodic grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import warnings

import numpy as np
import scipy.linalg as sla


class NumericsError(ValueError):
    """Raised when an input violates a kernel precondition."""


class ConvergenceError(RuntimeError):
    pass


class SingularMatrixError(NumericsError):
    def __init__(self, index: int, pivot: float, threshold: float):
        self.index = index
        self.pivot = pivot
        self.threshold = threshold
        super().__init__(
            f"matrix is singular to tolerance: pivot {index} has magnitude "
            f"{abs(pivot):.3e} <= {threshold:.3e}"
        )


@dataclass(frozen=True)
class EigenResult:
    values: np.ndarray  # ascending
    vectors: np.ndarray  # orthonormal columns

    def __len__(self):
        return len(self.values)


def _as_square(matrix) -> np.ndarray:
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NumericsError(f"expected a square matrix, got shape {a.shape}")
    return a


def _round_robin(n: int):
    """Pairings for one cyclic Jacobi sweep; every pair (i, j) appears once."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        half = m // 2
        pairs = [(players[i], players[m - 1 - i]) for i in range(half)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        rounds.append((np.array([p for p, _ in pairs], dtype=int),
                       np.array([q for _, q in pairs], dtype=int)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _jacobi(a: np.ndarray, max_sweeps: int):
    n = a.shape[0]
    a = a.copy()
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    rounds = _round_robin(n)
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), v
    target = 4.0 * np.finfo(float).eps * scale * np.sqrt(n)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(a.diagonal()))
        if off <= target:
            return a.diagonal().copy(), v
        # disjoint pairs commute, so a whole round is applied at once
        for P, Q in rounds:
            apq = a[P, Q]
            active = np.abs(apq) > 1e-17 * (np.abs(a[P, P]) + np.abs(a[Q, Q])) + 1e-300
            if not active.any():
                continue
            P, Q, apq = P[active], Q[active], apq[active]
            tau = (a[Q, Q] - a[P, P]) / (2.0 * apq)
            t = np.where(tau >= 0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            rp, rq = a[P, :].copy(), a[Q, :].copy()
            a[P, :] = c[:, None] * rp - s[:, None] * rq
            a[Q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = a[:, P].copy(), a[:, Q].copy()
            a[:, P] = cp * c - cq * s
            a[:, Q] = cp * s + cq * c
            vp, vq = v[:, P].copy(), v[:, Q].copy()
            v[:, P] = vp * c - vq * s
            v[:, Q] = vp * s + vq * c
    raise ConvergenceError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")


# above this size the vectorized Jacobi sweep costs seconds per call
JACOBI_MAX_N = 160


def sym_eig(matrix, tol: float = 1e-10, method: str = "jacobi",
            max_sweeps: int = 60) -> EigenResult:
    """Full eigendecomposition of a symmetric matrix.

    Parameters
    ----------
    matrix : (n, n) array_like
        Symmetric within ``tol`` (absolute, entrywise).
    tol : float
        Allowed asymmetry ``max|A_ij - A_ji|``.
    method : {"jacobi", "lapack", "auto"}
        ``"jacobi"`` runs cyclic Jacobi rotations; ``"lapack"`` defers to
        ``numpy.linalg.eigh`` and is used as an independent cross-check.
        ``"auto"`` picks Jacobi up to ``JACOBI_MAX_N`` rows and LAPACK above.

    Returns
    -------
    EigenResult
        Eigenvalues ascending (stable order), eigenvectors normalized with their
        largest-magnitude component positive.
    """
    a = _as_square(matrix)
    defect = np.max(np.abs(a - a.T)) if a.size else 0.0
    if defect > tol:
        raise NumericsError(f"matrix is not symmetric: max|A - A^T| = {defect:.3e} > {tol:.3e}")
    a = 0.5 * (a + a.T)
    if method == "auto":
        method = "jacobi" if a.shape[0] <= JACOBI_MAX_N else "lapack"
    if method == "jacobi":
        values, vectors = _jacobi(a, max_sweeps)
    elif method == "lapack":
        values, vectors = np.linalg.eigh(a)
    else:
        raise NumericsError(f"unknown eigensolver method {method!r}")
    order = np.argsort(values, kind="stable")
    values = values[order]
    vectors = vectors[:, order]
    lead = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[lead, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return EigenResult(values, vectors * signs)


def solve_dense(matrix, rhs) -> np.ndarray:
    """Solve ``A x = b`` by LU with partial pivoting.

    A pivot with magnitude at or below ``1e-13 * ||A||_inf`` is treated as
    singular and reported through :class:`SingularMatrixError`.
    """
    a = _as_square(matrix)
    b = np.asarray(rhs, dtype=float)
    if b.shape[0] != a.shape[0]:
        raise NumericsError(f"rhs has {b.shape[0]} rows, matrix has {a.shape[0]}")
    threshold = 1e-13 * np.abs(a).sum(axis=1).max()
    with warnings.catch_warnings():
        # singular pivots are reported below with our own threshold
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(a, check_finite=False)
    pivots = np.abs(lu.diagonal())
    if pivots.min() <= threshold:
        bad = np.flatnonzero(pivots <= threshold)
        raise SingularMatrixError(int(bad[0]), float(lu[bad[0], bad[0]]), float(threshold))
    return sla.lu_solve((lu, piv), b, check_finite=False)


@dataclass(frozen=True)
class FourierCoefficients:
    """Real trigonometric coefficients of a sample on ``theta_j = 2 pi j / N``.

    ``f(theta) = mean + sum_k cos[k-1] cos(k theta) + sin[k-1] sin(k theta)``
    for ``k = 1 .. N/2``. The Nyquist sine coefficient is always zero.
    """

    mean: float
    cos: np.ndarray
    sin: np.ndarray

    @property
    def n(self) -> int:
        return 2 * len(self.cos)


def _check_grid(n: int):
    if n % 2 or n < 8:
        raise NumericsError(f"grid size must be even and >= 8, got {n}")


def dft_real(values) -> FourierCoefficients:
    f = np.asarray(values, dtype=float)
    n = f.shape[0]
    _check_grid(n)
    c = np.fft.rfft(f) / n
    cos = 2.0 * c.real[1:]
    sin = -2.0 * c.imag[1:]
    cos[-1] *= 0.5
    sin[-1] = 0.0
    return FourierCoefficients(float(c.real[0]), cos, sin)


def idft_real(coeffs: FourierCoefficients) -> np.ndarray:
    n = coeffs.n
    c = np.empty(n // 2 + 1, dtype=complex)
    c[0] = coeffs.mean
    c[1:] = 0.5 * (coeffs.cos - 1j * coeffs.sin)
    c[-1] = coeffs.cos[-1]
    return np.fft.irfft(c * n, n)


def fourier_multiply(values, symbol) -> np.ndarray:
    """Apply a real even Fourier multiplier ``symbol(k)``, k = 0..N/2."""
    f = np.asarray(values, dtype=float)
    n = f.shape[0]
    _check_grid(n)
    mult = np.asarray(symbol, dtype=float)
    if mult.shape != (n // 2 + 1,):
        raise NumericsError(f"multiplier needs {n // 2 + 1} entries, got {mult.shape}")
    return np.fft.irfft(np.fft.rfft(f) * mult, n)


def spectral_derivative(values, order: int = 1) -> np.ndarray:
    """Derivative in theta of a periodic sample; the Nyquist mode is dropped."""
    f = np.asarray(values, dtype=float)
    n = f.shape[0]
    _check_grid(n)
    k = np.arange(n // 2 + 1)
    symbol = (1j * k) ** order
    if order % 2:
        symbol[-1] = 0.0
    return np.fft.irfft(np.fft.rfft(f) * symbol, n)


def fit_line(xs, ys):
    """Least-squares line through ``(xs, ys)``.

    Returns ``(slope, intercept, rms)`` where ``rms`` is the root mean square
    of the fit errors.
    """
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise NumericsError("xs and ys must be 1-D arrays of equal length")
    if x.size < 3:
        raise NumericsError(f"need at least 3 points, got {x.size}")
    xm = x.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    if sxx <= 1e-30 * max(1.0, float(np.max(np.abs(x))) ** 2):
        raise NumericsError("degenerate abscissae: all xs are equal")
    slope = float(dx @ (y - y.mean())) / sxx
    intercept = float(y.mean() - slope * xm)
    rms = float(np.sqrt(np.mean((y - slope * x - intercept) ** 2)))
    return slope, intercept, rms
