"""Dense matrix kernels: PSD square roots, the noise decomposition, matrix
exponentials, Kalman rank index, and the steering Gramian with its
inverse-norm scaling.

Everything here is a pure function of its arguments; matrices are plain
numpy arrays at desk scale (n <= 32).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    EllipticityViolatedError,
    NegativeEigenvalueError,
    NotSymmetricError,
    QuadratureNotConvergedError,
    SingularGramianError,
)

TOL_EIG = 1e-10  # eigensolver noise floor for PSD checks


def require_symmetric(a: np.ndarray, what: str = "matrix") -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NotSymmetricError(f"{what} is not square: shape {a.shape}")
    if not np.array_equal(a, a.T):
        gap = float(np.max(np.abs(a - a.T)))
        raise NotSymmetricError(f"{what} is not symmetric (max |a_ij - a_ji| = {gap:.3e})")
    return a


def symmetrize(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return 0.5 * (a + a.T)


def psd_sqrt(a: np.ndarray, tol_eig: float = TOL_EIG) -> np.ndarray:
    """Symmetric PSD square root by spectral decomposition.

    Eigenvalues in [-tol_eig, 0) are clipped to zero; anything below
    -tol_eig raises NegativeEigenvalueError.
    """
    a = require_symmetric(a)
    w, v = np.linalg.eigh(a)
    if w[0] < -tol_eig:
        raise NegativeEigenvalueError(float(w[0]))
    w = np.clip(w, 0.0, None)
    return symmetrize((v * np.sqrt(w)) @ v.T)


def decompose_noise(a: np.ndarray, lam: float, tol_eig: float = TOL_EIG) -> np.ndarray:
    """Split a = (sigma sigma*) into lam^2 I + sigma_tilde^2.

    Returns the symmetric PSD sigma_tilde = sqrt(a - lam^2 I).  Requires
    a - lam^2 I to be PSD; the intended regime a >= 2 lam^2 I leaves the
    remainder with margin sigma_tilde >= lam I.
    """
    a = require_symmetric(a, "noise covariance")
    if lam <= 0:
        raise ValueError("lam must be positive")
    n = a.shape[0]
    shifted = a - (lam ** 2) * np.eye(n)
    w_min = float(np.linalg.eigvalsh(shifted)[0])
    if w_min < -tol_eig:
        raise EllipticityViolatedError(
            f"lambda_min(a) = {w_min + lam**2:.6e} < lam^2 = {lam**2:.6e}")
    return psd_sqrt(symmetrize(shifted), tol_eig)


def matrix_exp(a: np.ndarray, t: float = 1.0) -> np.ndarray:
    """e^{tA} via scaling-and-squaring Pade (scipy.linalg.expm)."""
    a = np.asarray(a, dtype=float)
    return scipy.linalg.expm(t * a)


def kalman_rank_index(a: np.ndarray, m: np.ndarray) -> int | None:
    """Minimal l <= rows(a) with Rank[A^0 M, ..., A^{l-1} M] full, or None.

    The search stops at l = rows(a) by Cayley-Hamilton: further powers of A
    cannot enlarge the Krylov span.
    """
    a = np.asarray(a, dtype=float)
    m = np.atleast_2d(np.asarray(m, dtype=float))
    rows = a.shape[0]
    if m.shape[0] != rows:
        raise ValueError(f"M has {m.shape[0]} rows, expected {rows}")
    blocks = []
    power = m
    for l in range(1, rows + 1):
        blocks.append(power)
        if np.linalg.matrix_rank(np.hstack(blocks)) == rows:
            return l
        power = a @ power
    return None


@dataclass(frozen=True)
class HamiltonianStructure:
    """Block structure (A, M) of a stochastic Hamiltonian system.

    A is m x m, M is m x d, and l is the minimal Kalman rank index:
    Rank[A^0 M, ..., A^{l-1} M] = m.  Construction fails if the pair is
    uncontrollable.
    """

    a: np.ndarray
    m_mat: np.ndarray
    l: int = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        m_mat = np.atleast_2d(np.asarray(self.m_mat, dtype=float))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "m_mat", m_mat)
        l = kalman_rank_index(a, m_mat)
        if l is None:
            raise SingularGramianError(float("nan"))
        object.__setattr__(self, "l", l)

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @property
    def d(self) -> int:
        return self.m_mat.shape[1]


def _gramian_simpson(a: np.ndarray, m: np.ndarray, t: float, n_intervals: int) -> np.ndarray:
    """Composite Simpson for Q_t = int_0^t s(t-s)/t^2 e^{-sA} MM* e^{-sA*} ds."""
    s = np.linspace(0.0, t, n_intervals + 1)
    weights = np.ones(n_intervals + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    weights *= (t / n_intervals) / 3.0
    mmt = m @ m.T
    acc = np.zeros_like(a)
    step = scipy.linalg.expm(-(t / n_intervals) * a)
    e = np.eye(a.shape[0])
    for j, sj in enumerate(s):
        w_s = sj * (t - sj) / t ** 2
        if w_s != 0.0:
            acc += (weights[j] * w_s) * (e @ mmt @ e.T)
        e = e @ step
    return acc


def gramian(a: np.ndarray, m: np.ndarray, t: float, rel_tol: float = 1e-9,
            max_refinements: int = 16) -> np.ndarray:
    """Steering Gramian Q_t = int_0^t s(t-s)/t^2 e^{-sA} MM* e^{-sA*} ds.

    Composite Simpson with interval halving until the relative change in max
    norm drops below rel_tol.  The integrand is smooth, so low-order
    adaptivity suffices.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    a = np.asarray(a, dtype=float)
    m = np.atleast_2d(np.asarray(m, dtype=float))
    n_intervals = 8
    prev = _gramian_simpson(a, m, t, n_intervals)
    for _ in range(max_refinements):
        n_intervals *= 2
        cur = _gramian_simpson(a, m, t, n_intervals)
        scale = max(float(np.max(np.abs(cur))), 1e-300)
        if float(np.max(np.abs(cur - prev))) <= rel_tol * scale:
            return symmetrize(cur)
        prev = cur
    raise QuadratureNotConvergedError(
        f"Gramian quadrature did not reach rel_tol={rel_tol} at t={t}")


def gramian_inverse_norm(a: np.ndarray, m: np.ndarray, t: float) -> float:
    """Operator norm of Q_t^{-1} (= 1/lambda_min since Q_t is symmetric PSD)."""
    q = gramian(a, m, t)
    w_min = float(np.linalg.eigvalsh(q)[0])
    if w_min <= 0.0:
        raise SingularGramianError(t)
    return 1.0 / w_min


@dataclass(frozen=True)
class GramianSlopeReport:
    t_grid: np.ndarray
    inv_norms: np.ndarray
    slope: float
    intercept: float


def gramian_inverse_norm_slope(a: np.ndarray, m: np.ndarray, l: int,
                               t_grid: np.ndarray) -> GramianSlopeReport:
    """Least-squares slope of log ||Q_t^{-1}|| against log t.

    The rank condition is verified up front; for controllable pairs the
    contract is slope >= 1 - 2l - 0.1 (blow-up no worse than t^{1-2l}).
    """
    t_grid = np.asarray(t_grid, dtype=float)
    found = kalman_rank_index(a, np.atleast_2d(m))
    if found is None or found > l:
        raise SingularGramianError(float(t_grid.min()))
    inv_norms = np.array([gramian_inverse_norm(a, m, t) for t in t_grid])
    slope, intercept = np.polyfit(np.log(t_grid), np.log(inv_norms), 1)
    return GramianSlopeReport(t_grid, inv_norms, float(slope), float(intercept))


def solve_psd(q: np.ndarray, rhs: np.ndarray, t: float = float("nan")) -> np.ndarray:
    """Solve Q x = rhs by Cholesky; raises SingularGramianError if Q is not PD."""
    try:
        c, low = scipy.linalg.cho_factor(q)
    except scipy.linalg.LinAlgError as exc:
        raise SingularGramianError(t) from exc
    return scipy.linalg.cho_solve((c, low), rhs)
