"""Empirical measures, exact small-scale Wasserstein distances (plain and
modified), optimal initial couplings, and relative-entropy estimators.

Assignment problems are solved exactly with scipy's linear_sum_assignment;
1-D inputs take the sorting shortcut.  The exact path is capped at N <= 512
particles, which is all the desk-scale experiments need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .errors import (
    DegenerateSampleError,
    SingularCovarianceError,
    SizeMismatchError,
    TooFewParticlesError,
    UnsupportedWeightsError,
)
from .linalg import psd_sqrt, symmetrize

ASSIGNMENT_CAP = 512


class EmpiricalMeasure:
    """Weighted particle cloud; uniform weights unless stated otherwise.

    Points must not be mutated after construction (mean/cov are cached).
    """

    def __init__(self, points: np.ndarray, weights: np.ndarray | None = None):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[0] < 1:
            raise SizeMismatchError("empirical measure needs at least one particle")
        self.points = points
        if weights is None:
            self.weights = np.full(points.shape[0], 1.0 / points.shape[0])
            self._uniform = True
        else:
            weights = np.asarray(weights, dtype=float)
            if weights.shape != (points.shape[0],) or np.any(weights < 0):
                raise UnsupportedWeightsError("weights must be nonnegative, one per particle")
            if abs(weights.sum() - 1.0) > 1e-12:
                raise UnsupportedWeightsError("weights must sum to 1 within 1e-12")
            self.weights = weights
            self._uniform = bool(np.allclose(weights, weights[0]))
        self._mean: np.ndarray | None = None

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def is_uniform(self) -> bool:
        return self._uniform

    @property
    def mean(self) -> np.ndarray:
        if self._mean is None:
            self._mean = self.weights @ self.points
        return self._mean

    def moment(self, k: float) -> float:
        """k-th absolute moment norm ||mu||_k = (int |x|^k dmu)^{1/k}."""
        r = np.linalg.norm(self.points, axis=1)
        return float((self.weights @ r ** k) ** (1.0 / k))


@dataclass(frozen=True, eq=False)
class GaussianLaw:
    """Gaussian N(mean, cov) with PSD covariance (possibly singular)."""

    mean: np.ndarray
    cov: np.ndarray
    _sqrt_cov: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise SizeMismatchError(f"cov shape {cov.shape} does not match mean size {mean.size}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_sqrt_cov", psd_sqrt(symmetrize(cov)))

    @property
    def dim(self) -> int:
        return self.mean.size

    def transport(self, z: np.ndarray) -> np.ndarray:
        """Map standard-normal rows z to samples of this law."""
        return self.mean + z @ self._sqrt_cov.T


def _check_pair(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> None:
    if mu.n_points != nu.n_points:
        raise SizeMismatchError(f"particle counts differ: {mu.n_points} vs {nu.n_points}")
    if mu.dim != nu.dim:
        raise SizeMismatchError(f"dimensions differ: {mu.dim} vs {nu.dim}")
    if not (mu.is_uniform and nu.is_uniform):
        raise UnsupportedWeightsError("exact assignment requires uniform weights")
    if mu.n_points > ASSIGNMENT_CAP:
        raise SizeMismatchError(f"exact assignment capped at N <= {ASSIGNMENT_CAP}")


def wasserstein_k(mu: EmpiricalMeasure, nu: EmpiricalMeasure, k: float = 2.0) -> float:
    """Exact L^k-Wasserstein distance between equal-size uniform clouds."""
    if k < 1:
        raise ValueError("k must be >= 1")
    _check_pair(mu, nu)
    if mu.dim == 1:
        x = np.sort(mu.points[:, 0])
        y = np.sort(nu.points[:, 0])
        cost = np.mean(np.abs(x - y) ** k)
        return float(cost ** (1.0 / k))
    diff = mu.points[:, None, :] - nu.points[None, :, :]
    cost_matrix = np.linalg.norm(diff, axis=2) ** k
    rows, cols = linear_sum_assignment(cost_matrix)
    return float(np.mean(cost_matrix[rows, cols]) ** (1.0 / k))


def modified_distance(x: np.ndarray, y: np.ndarray, t: float, m_split: int) -> float:
    """rho_t(x, y) = sqrt(t^{-2} |x1-y1|^2 + |x2-y2|^2) with block split at m_split."""
    if t <= 0:
        raise ValueError("t must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    d1 = np.linalg.norm(x[:m_split] - y[:m_split])
    d2 = np.linalg.norm(x[m_split:] - y[m_split:])
    return math.sqrt(d1 ** 2 / t ** 2 + d2 ** 2)


def _modified_scale(dim: int, t: float, m_split: int) -> np.ndarray:
    scale = np.ones(dim)
    scale[:m_split] = 1.0 / t
    return scale


def wasserstein_2_modified(mu: EmpiricalMeasure, nu: EmpiricalMeasure, t: float,
                           m_split: int) -> float:
    """Exact assignment distance under the squared modified metric rho_t^2."""
    if t <= 0:
        raise ValueError("t must be positive")
    _check_pair(mu, nu)
    scale = _modified_scale(mu.dim, t, m_split)
    xs = mu.points * scale
    ys = nu.points * scale
    diff = xs[:, None, :] - ys[None, :, :]
    cost_matrix = np.sum(diff ** 2, axis=2)
    rows, cols = linear_sum_assignment(cost_matrix)
    return float(math.sqrt(np.mean(cost_matrix[rows, cols])))


def optimal_initial_coupling(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> np.ndarray:
    """Pairing pi with mean squared pair distance equal to W_2(mu, nu)^2.

    Returns an index array: mu.points[i] is paired with nu.points[pi[i]].
    """
    _check_pair(mu, nu)
    if mu.dim == 1:
        order_x = np.argsort(mu.points[:, 0], kind="stable")
        order_y = np.argsort(nu.points[:, 0], kind="stable")
        pi = np.empty(mu.n_points, dtype=int)
        pi[order_x] = order_y
        return pi
    diff = mu.points[:, None, :] - nu.points[None, :, :]
    cost_matrix = np.sum(diff ** 2, axis=2)
    rows, cols = linear_sum_assignment(cost_matrix)
    pi = np.empty(mu.n_points, dtype=int)
    pi[rows] = cols
    return pi


def gaussian_kl(p: GaussianLaw, q: GaussianLaw) -> float:
    """Relative entropy Ent(p | q) between Gaussians, in nats.

    Requires q.cov nonsingular.  If p.cov is singular the laws are mutually
    singular along the null directions and the entropy is +inf.
    """
    if p.dim != q.dim:
        raise SizeMismatchError("dimension mismatch")
    n = p.dim
    sign_q, logdet_q = np.linalg.slogdet(q.cov)
    if sign_q <= 0:
        raise SingularCovarianceError("q.cov must be nonsingular")
    sign_p, logdet_p = np.linalg.slogdet(p.cov)
    if sign_p <= 0:
        return math.inf
    q_inv = np.linalg.inv(q.cov)
    dm = q.mean - p.mean
    val = 0.5 * (np.trace(q_inv @ p.cov) - n + dm @ q_inv @ dm + logdet_q - logdet_p)
    return float(max(val, 0.0))


def gaussian_wasserstein2(p: GaussianLaw, q: GaussianLaw,
                          scale: np.ndarray | None = None) -> float:
    """W_2 between Gaussians (Bures metric), optionally under a diagonal
    rescaling of coordinates (used for the modified distance rho_t)."""
    if p.dim != q.dim:
        raise SizeMismatchError("dimension mismatch")
    if scale is None:
        mp, sp = p.mean, p.cov
        mq, sq = q.mean, q.cov
    else:
        mp, sp = p.mean * scale, p.cov * np.outer(scale, scale)
        mq, sq = q.mean * scale, q.cov * np.outer(scale, scale)
    root_q = psd_sqrt(symmetrize(sq))
    cross = psd_sqrt(symmetrize(root_q @ sp @ root_q))
    val = float(np.sum((mp - mq) ** 2) + np.trace(sp) + np.trace(sq) - 2.0 * np.trace(cross))
    return math.sqrt(max(val, 0.0))


def gaussian_wasserstein2_modified(p: GaussianLaw, q: GaussianLaw, t: float,
                                   m_split: int) -> float:
    """W_{2,t} between Gaussians: the Bures distance in rho_t coordinates."""
    return gaussian_wasserstein2(p, q, scale=_modified_scale(p.dim, t, m_split))


_TIE_TOL = 1e-12


def _knn_distances(sample_p, sample_q, k_nn, twin=None):
    """(rho_k, nu_k, twin): within-sample (self excluded) and cross-sample
    k-NN distances; an exact cross-sample twin is skipped like 'self' is."""
    tree_p = cKDTree(sample_p)
    tree_q = cKDTree(sample_q)
    dp = tree_p.query(sample_p, k=k_nn + 1)[0]
    rho = dp[:, k_nn]
    dq = tree_q.query(sample_p, k=k_nn + 1)[0]
    if twin is None:
        twin = dq[:, 0] < _TIE_TOL
    nu = np.where(twin, dq[:, k_nn], dq[:, k_nn - 1])
    return rho, nu, twin


def knn_relative_entropy(sample_p: np.ndarray, sample_q: np.ndarray,
                         k_nn: int = 5, jitter_seed: int = 0) -> float:
    """k-NN divergence estimate of Ent(P | Q) from two samples.

    Wang-Kulkarni-Verdu style: (d/N) sum_i log(nu_k(i)/rho_k(i)) + log(M/(N-1)),
    with rho_k the k-th neighbour distance inside sample_p (self excluded) and
    nu_k the k-th neighbour distance into sample_q (an exact twin of the query
    point counts as self there too).  Duplicates within a sample are separated
    by a seeded uniform 1e-10 jitter.
    """
    sample_p = np.atleast_2d(np.asarray(sample_p, dtype=float))
    sample_q = np.atleast_2d(np.asarray(sample_q, dtype=float))
    n, dim = sample_p.shape
    m = sample_q.shape[0]
    if sample_q.shape[1] != dim:
        raise SizeMismatchError("sample dimensions differ")
    if n < k_nn + 2 or m < k_nn + 2:
        raise DegenerateSampleError(f"need at least {k_nn + 2} points per sample")

    rho, nu, twin = _knn_distances(sample_p, sample_q, k_nn)
    if np.any(rho < _TIE_TOL) or np.any(nu < _TIE_TOL):
        rng = np.random.default_rng(jitter_seed)
        jit = rng.uniform(-1e-10, 1e-10, sample_p.shape)
        rho, nu, _ = _knn_distances(sample_p + jit, sample_q, k_nn, twin=twin)
        if np.any(rho <= 0) or np.any(nu <= 0):
            raise DegenerateSampleError("samples remain degenerate after jitter")

    return float((dim / n) * np.sum(np.log(nu / rho)) + math.log(m / (n - 1)))


def gaussian_fit(mu: EmpiricalMeasure) -> GaussianLaw:
    """Sample mean and unbiased sample covariance as a GaussianLaw."""
    n, dim = mu.n_points, mu.dim
    if n <= dim:
        raise TooFewParticlesError(f"need N > dim = {dim}, got N = {n}")
    if not mu.is_uniform:
        raise UnsupportedWeightsError("gaussian_fit expects uniform weights")
    mean = mu.points.mean(axis=0)
    centered = mu.points - mean
    cov = symmetrize(centered.T @ centered / (n - 1))
    return GaussianLaw(mean, cov)
