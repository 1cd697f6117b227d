"""Particle integrator for the mean-field SDE, law-flow estimation with the
common-noise integral xi, and closed-form Gaussian law oracles for linear
models.

Two noise regimes appear throughout:

* law-flow / cloud runs -- every particle carries its own independent pair
  of increment streams (W_i, Wtilde_i); the empirical measure of the
  self-interacting cloud then approximates the deterministic law flow.
* conditioned runs -- a single shared Wtilde path drives the measure-noise
  term while each run keeps its own W; couplings consume the flows computed
  in the first regime as frozen time-dependent coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    NonFiniteStateError,
    SizeMismatchError,
    StreamMismatchError,
)
from .measures import EmpiricalMeasure, GaussianLaw
from .models import MeanFieldModel
from .noise import NoisePlan, Stream


def materialize_initial(initial, n: int, plan: NoisePlan, subid: int = 0) -> np.ndarray:
    """Turn an initial law (GaussianLaw, EmpiricalMeasure, or a single point)
    into an (n, dim) cloud using the plan's INIT stream."""
    if isinstance(initial, GaussianLaw):
        z = plan.gauss(Stream.INIT, 0, (n, initial.dim), subid)
        return initial.transport(z)
    if isinstance(initial, EmpiricalMeasure):
        pts = initial.points
        if pts.shape[0] == n:
            return pts.copy()
        if pts.shape[0] == 1:
            return np.tile(pts, (n, 1))
        u = plan.uniform(Stream.INIT, 0, (n,), subid)
        idx = np.minimum((u * pts.shape[0]).astype(int), pts.shape[0] - 1)
        return pts[idx]
    point = np.atleast_1d(np.asarray(initial, dtype=float))
    return np.tile(point, (n, 1))


@dataclass
class ParticleEnsemble:
    """Particle cloud at one time index of a trajectory."""

    states: np.ndarray
    step_index: int
    plan: NoisePlan

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]

    def empirical_measure(self) -> EmpiricalMeasure:
        return EmpiricalMeasure(self.states.copy())


def _noise_term(sigma: np.ndarray, d_wt: np.ndarray, n: int) -> np.ndarray:
    """sigma @ dWt per particle; d_wt is (N, d) per-particle or (d,) shared."""
    if d_wt.ndim == 1:
        return np.broadcast_to(sigma @ d_wt, (n, sigma.shape[0]))
    return d_wt @ sigma.T


def euler_maruyama_step(model: MeanFieldModel, ens: ParticleEnsemble,
                        d_w: np.ndarray, d_wt: np.ndarray,
                        measure: EmpiricalMeasure | None = None,
                        debug: bool = False) -> ParticleEnsemble:
    """One explicit step of the non-degenerate dynamics.

    Coefficients are sampled at the left endpoint.  `measure` overrides the
    ensemble's own empirical measure for decoupled runs against a
    precomputed flow; per-particle d_wt (N, d) is the law-flow mode, a
    single shared d_wt (d,) the conditioned mode.
    """
    if model.is_degenerate:
        raise ValueError("use hamiltonian_step for models with block structure")
    h = ens.plan.h
    t = ens.step_index * h
    x = ens.states
    mu = measure if measure is not None else EmpiricalMeasure(x)
    sigma = model.sigma_tilde(t, mu)
    if debug:
        _check_ellipticity(sigma, model.lam)
    new = x + h * model.drift(t, x, mu) + model.lam * d_w + _noise_term(sigma, d_wt, x.shape[0])
    if not np.all(np.isfinite(new)):
        raise NonFiniteStateError(ens.step_index)
    return ParticleEnsemble(new, ens.step_index + 1, ens.plan)


def hamiltonian_step(model: MeanFieldModel, ens: ParticleEnsemble,
                     d_w: np.ndarray, d_wt: np.ndarray,
                     measure: EmpiricalMeasure | None = None,
                     debug: bool = False) -> ParticleEnsemble:
    """One explicit step of the degenerate dynamics: block 1 is deterministic
    kinematics, block 2 moves like the non-degenerate step."""
    st = model.structure
    if st is None:
        raise ValueError("model has no Hamiltonian structure")
    h = ens.plan.h
    t = ens.step_index * h
    x = ens.states
    m = st.m
    x1, x2 = x[:, :m], x[:, m:]
    mu = measure if measure is not None else EmpiricalMeasure(x)
    sigma = model.sigma_tilde(t, mu)
    if debug:
        _check_ellipticity(sigma, model.lam)
    new1 = x1 + h * (x1 @ st.a.T + x2 @ st.m_mat.T)
    new2 = (x2 + h * model.drift(t, x, mu) + model.lam * d_w
            + _noise_term(sigma, d_wt, x.shape[0]))
    new = np.hstack([new1, new2])
    if not np.all(np.isfinite(new)):
        raise NonFiniteStateError(ens.step_index)
    return ParticleEnsemble(new, ens.step_index + 1, ens.plan)


def step(model: MeanFieldModel, ens: ParticleEnsemble, d_w: np.ndarray,
         d_wt: np.ndarray, measure: EmpiricalMeasure | None = None,
         debug: bool = False) -> ParticleEnsemble:
    if model.is_degenerate:
        return hamiltonian_step(model, ens, d_w, d_wt, measure, debug)
    return euler_maruyama_step(model, ens, d_w, d_wt, measure, debug)


def _check_ellipticity(sigma: np.ndarray, lam: float, tol: float = 1e-10) -> None:
    from .errors import EllipticityViolatedError

    w_min = float(np.linalg.eigvalsh(sigma)[0])
    if w_min < lam - tol:
        raise EllipticityViolatedError(
            f"sigma_tilde lower eigenvalue {w_min:.6e} below lam = {lam}")


# ---------------------------------------------------------------------------
# law flow
# ---------------------------------------------------------------------------

@dataclass
class LawFlow:
    """Time-indexed estimate of the law flow t -> P_t* mu.

    Stores the empirical snapshots (left endpoints drive the coefficients),
    the sigma_tilde values along the flow, and the xi path driven by the
    designated shared Wtilde stream (subid = xi_subid of SHARED_WTILDE).
    """

    plan: NoisePlan
    snapshots: list = field(repr=False)
    sigma_path: np.ndarray = field(repr=False)   # (J, d, d)
    xi_path: np.ndarray = field(repr=False)      # (J+1, d)
    xi_subid: int = 0

    @property
    def n_steps(self) -> int:
        return self.sigma_path.shape[0]

    @property
    def noise_dim(self) -> int:
        return self.sigma_path.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.plan.times

    def measure_at(self, j: int) -> EmpiricalMeasure:
        return self.snapshots[j]

    def mean_path(self) -> np.ndarray:
        return np.array([snap.mean for snap in self.snapshots])

    def xi_for(self, d_wt_path: np.ndarray) -> np.ndarray:
        """xi path accumulated against arbitrary shared Wtilde increments.

        d_wt_path has shape (J0, d) or (J0, R, d) for R replicas; the result
        gains a leading time axis of length J0 + 1 with xi_0 = 0.
        """
        j0 = d_wt_path.shape[0]
        if j0 > self.n_steps:
            raise SizeMismatchError("more increments than stored flow steps")
        increments = np.einsum("jab,j...b->j...a", self.sigma_path[:j0], d_wt_path)
        out = np.zeros((j0 + 1,) + increments.shape[1:])
        np.cumsum(increments, axis=0, out=out[1:])
        return out

    def same_stream(self, other: "LawFlow") -> bool:
        return (self.plan.seed == other.plan.seed
                and self.plan.h == other.plan.h
                and self.plan.n_steps == other.plan.n_steps
                and self.xi_subid == other.xi_subid)


def n_steps_for(t: float, h: float) -> int:
    """Grid length for horizon t; t must sit on the h-grid."""
    n = round(t / h)
    if abs(n * h - t) > 1e-9 * max(1.0, abs(t)):
        raise SizeMismatchError(f"horizon {t} is not a multiple of h = {h}")
    return max(n, 0)


def simulate_law_flow(model: MeanFieldModel, initial, t_final: float, h: float,
                      n_particles: int, seed: int, xi_subid: int = 0,
                      debug: bool = False) -> LawFlow:
    """Self-interacting cloud with per-particle noises; records snapshots,
    sigma_tilde values, and the xi path of the designated shared stream."""
    if n_particles < 2:
        raise SizeMismatchError("law flow needs at least 2 particles")
    n_steps = n_steps_for(t_final, h)
    plan = NoisePlan(seed, h, n_steps)
    states = materialize_initial(initial, n_particles, plan)
    d = model.noise_dim
    snapshots = [EmpiricalMeasure(states.copy())]
    sigma_path = np.empty((n_steps, d, d))
    xi_path = np.zeros((n_steps + 1, d))
    ens = ParticleEnsemble(states, 0, plan)
    for j in range(n_steps):
        mu_j = snapshots[j]
        sigma_path[j] = model.sigma_tilde(j * h, mu_j)
        shared = plan.brownian(Stream.SHARED_WTILDE, j, xi_subid + 1, d)[xi_subid]
        xi_path[j + 1] = xi_path[j] + sigma_path[j] @ shared
        d_w = plan.brownian(Stream.W, j, n_particles, d)
        d_wt = plan.brownian(Stream.WTILDE, j, n_particles, d)
        ens = step(model, ens, d_w, d_wt, measure=mu_j, debug=debug)
        snapshots.append(ens.empirical_measure())
    return LawFlow(plan=plan, snapshots=snapshots, sigma_path=sigma_path,
                   xi_path=xi_path, xi_subid=xi_subid)


def xi_gap(flow_mu: LawFlow, flow_nu: LawFlow) -> float:
    """sup over the grid of |xi_t^mu - xi_t^nu| along the shared stream."""
    if not flow_mu.same_stream(flow_nu):
        raise StreamMismatchError("flows were built on different Wtilde streams")
    return float(np.max(np.linalg.norm(flow_mu.xi_path - flow_nu.xi_path, axis=1)))


# ---------------------------------------------------------------------------
# Gaussian law oracles for linear models
# ---------------------------------------------------------------------------

def _gaussian_rhs(b_mat, c_mat, lam, sigma_of_mean, noise_embed, m, s):
    dm = (b_mat + c_mat) @ m
    sig = sigma_of_mean(m)
    d = sig.shape[0]
    diff = noise_embed @ (lam ** 2 * np.eye(d) + sig @ sig.T) @ noise_embed.T
    ds = b_mat @ s + s @ b_mat.T + diff
    return dm, ds


def _rk4_gaussian(b_mat, c_mat, lam, sigma_of_mean, noise_embed, m0, s0,
                  t_span: float, n_sub: int):
    m, s = m0.copy(), s0.copy()
    dt = t_span / n_sub
    for _ in range(n_sub):
        k1m, k1s = _gaussian_rhs(b_mat, c_mat, lam, sigma_of_mean, noise_embed, m, s)
        k2m, k2s = _gaussian_rhs(b_mat, c_mat, lam, sigma_of_mean, noise_embed,
                                 m + 0.5 * dt * k1m, s + 0.5 * dt * k1s)
        k3m, k3s = _gaussian_rhs(b_mat, c_mat, lam, sigma_of_mean, noise_embed,
                                 m + 0.5 * dt * k2m, s + 0.5 * dt * k2s)
        k4m, k4s = _gaussian_rhs(b_mat, c_mat, lam, sigma_of_mean, noise_embed,
                                 m + dt * k3m, s + dt * k3s)
        m = m + (dt / 6.0) * (k1m + 2 * k2m + 2 * k3m + k4m)
        s = s + (dt / 6.0) * (k1s + 2 * k2s + 2 * k3s + k4s)
    return m, s


def _integrate_gaussian(b_mat, c_mat, lam, sigma_of_mean, noise_embed,
                        m0, s0, t_grid, tol: float = 1e-10):
    """RK4 over the sorted grid with step halving until the recorded laws
    stabilize below tol."""
    t_grid = np.asarray(t_grid, dtype=float)
    order = np.argsort(t_grid)
    n_sub = 16
    prev = None
    for _ in range(12):
        laws = {}
        m = np.asarray(m0, dtype=float).copy()
        s = np.asarray(s0, dtype=float).copy()
        t_prev = 0.0
        for idx in order:
            t = t_grid[idx]
            span = t - t_prev
            if span > 0:
                steps = max(n_sub, int(math.ceil(span * n_sub)))
                m, s = _rk4_gaussian(b_mat, c_mat, lam, sigma_of_mean,
                                     noise_embed, m, s, span, steps)
            laws[idx] = (m.copy(), 0.5 * (s + s.T))
            t_prev = t
        if prev is not None:
            gap = max(
                max(np.max(np.abs(laws[i][0] - prev[i][0])) for i in laws),
                max(np.max(np.abs(laws[i][1] - prev[i][1])) for i in laws),
            )
            if gap < tol:
                break
        prev = laws
        n_sub *= 2
    return [GaussianLaw(prev[i][0], prev[i][1]) for i in range(len(t_grid))]


def linear_closed_form(b_mat: np.ndarray, c_mat: np.ndarray, sigma_const: np.ndarray,
                       lam: float, m0: np.ndarray, s0: np.ndarray, t: float,
                       tol: float = 1e-10) -> GaussianLaw:
    """Law of the linear model with constant sigma_tilde at time t.

    Mean solves dm/dt = (B + C) m; covariance solves
    dS/dt = B S + S B^T + lam^2 I + Sigma Sigma^T.
    """
    b_mat = np.atleast_2d(np.asarray(b_mat, dtype=float))
    sigma_const = np.atleast_2d(np.asarray(sigma_const, dtype=float))
    dim = b_mat.shape[0]
    return _integrate_gaussian(
        b_mat, np.atleast_2d(np.asarray(c_mat, dtype=float)), lam,
        lambda m: sigma_const, np.eye(dim),
        np.atleast_1d(np.asarray(m0, dtype=float)),
        np.atleast_2d(np.asarray(s0, dtype=float)),
        [t], tol=tol)[0]


def gaussian_law_flow(model: MeanFieldModel, initial: GaussianLaw,
                      t_grid, tol: float = 1e-10) -> list[GaussianLaw]:
    """Closed-form law flow for presets with linear structure (the
    sigma_tilde value rides along the deterministic mean flow)."""
    lin = model.linear
    if lin is None:
        raise ValueError(f"model {model.name!r} has no linear structure")
    return _integrate_gaussian(lin.b_mat, lin.c_mat, model.lam, lin.sigma_of_mean,
                               lin.noise_embed, initial.mean, initial.cov,
                               t_grid, tol=tol)


def stationary_gaussian(model: MeanFieldModel) -> GaussianLaw:
    """Invariant Gaussian law of a linear preset: mean 0 (B + C Hurwitz
    assumed), covariance from the Lyapunov equation."""
    import scipy.linalg

    lin = model.linear
    if lin is None:
        raise ValueError(f"model {model.name!r} has no linear structure")
    dim = lin.b_mat.shape[0]
    mbar = np.zeros(dim)
    sig = lin.sigma_of_mean(mbar)
    d = sig.shape[0]
    diff = lin.noise_embed @ (model.lam ** 2 * np.eye(d) + sig @ sig.T) @ lin.noise_embed.T
    sbar = scipy.linalg.solve_continuous_lyapunov(lin.b_mat, -diff)
    return GaussianLaw(mbar, 0.5 * (sbar + sbar.T))
