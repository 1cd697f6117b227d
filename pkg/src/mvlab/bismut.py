"""Monte Carlo estimators for the intrinsic (Lions) derivative of the
semigroup, via martingale weights built from tangent flows.

One replica is a tangent-carrying interacting cloud: every particle has its
own (W_i, Wtilde_i) pair, the cloud's empirical measure stands in for the
law flow, and the plug-in averages over the same cloud realize the
mean-field expectations inside the weight processes.  The tangent system is
the exact linearization of the simulated particle map, which is what makes
the shared-noise finite-difference oracle converge to it at rate O(eps).

The derivative estimate for a payoff f at time t is

    (1/lam) E[ f(X_t) * int_0^t < grad_b along N_{s,t} + M_{s,t}, dW_s > ],

with (N, M) the plain processes in the non-degenerate case and the
Gramian-steered family (gamma, V, alpha, N1, N2, M) in the degenerate one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .coupling import steering_control, steering_nodes, steering_v_integral
from .errors import GridMismatchError
from .linalg import gramian, solve_psd
from .measures import EmpiricalMeasure
from .models import MeanFieldModel
from .noise import NoisePlan, Stream
from .simulate import materialize_initial, n_steps_for


# ---------------------------------------------------------------------------
# perturbation battery
# ---------------------------------------------------------------------------

def phi_battery(dim: int) -> dict:
    """Named perturbation maps: constant e1, coordinate x_k e_k, contraction."""
    battery = {}

    def constant(x):
        out = np.zeros_like(x)
        out[:, 0] = 1.0
        return out

    battery["constant"] = constant
    for k in range(dim):
        def coordinate(x, k=k):
            out = np.zeros_like(x)
            out[:, k] = x[:, k]
            return out
        battery[f"coordinate{k}"] = coordinate
    battery["contraction"] = lambda x: -x
    return battery


# ---------------------------------------------------------------------------
# tangent flow
# ---------------------------------------------------------------------------

@dataclass
class TangentRun:
    """Base cloud trajectory with its exact tangent flow and the per-particle
    noise bookkeeping the weight processes need."""

    plan: NoisePlan
    states: np.ndarray    # (J+1, N, dim)
    tangents: np.ndarray  # (J+1, N, dim)
    h_path: np.ndarray    # (J+1, N, d) cumulative int <E[D sigma . tangent]> dWtilde_i
    g_sigma: np.ndarray   # (J, d, d) plug-in E[<D sigma, tangent>] per step
    d_w: np.ndarray       # (J, N, d) driving increments

    @property
    def n_steps(self) -> int:
        return self.d_w.shape[0]

    @property
    def n_particles(self) -> int:
        return self.states.shape[1]


def tangent_flow(model: MeanFieldModel, initial_points: np.ndarray, phi,
                 plan: NoisePlan, n_steps: int | None = None,
                 subid: int = 0) -> TangentRun:
    """Evolve the interacting cloud together with the tangent of the whole
    particle map along the initial perturbation phi."""
    steps = plan.n_steps if n_steps is None else n_steps
    h, lam, d = plan.h, model.lam, model.noise_dim
    x = np.array(initial_points, dtype=float)
    n, dim = x.shape
    v = phi(x)
    if v.shape != x.shape:
        raise GridMismatchError("phi must map (N, dim) points to (N, dim) tangents")
    v = np.asarray(v, dtype=float).copy()

    st = model.structure
    states = np.empty((steps + 1, n, dim))
    tangents = np.empty((steps + 1, n, dim))
    h_path = np.zeros((steps + 1, n, d))
    g_sigma = np.empty((steps, d, d))
    d_w_all = np.empty((steps, n, d))
    states[0], tangents[0] = x, v

    for j in range(steps):
        t = j * h
        mu_j = EmpiricalMeasure(x)
        sigma = model.sigma_tilde(t, mu_j)
        gs = model.mean_lions_sigma(t, mu_j, x, v)
        d_w = plan.brownian(Stream.W, j, n, d, subid)
        d_wt = plan.brownian(Stream.WTILDE, j, n, d, subid)
        d_w_all[j] = d_w
        g_sigma[j] = gs
        h_inc = d_wt @ gs.T
        h_path[j + 1] = h_path[j] + h_inc

        drift_v = model.grad_x_drift(t, x, mu_j, v) + model.mean_lions_drift(t, x, mu_j, x, v)
        drift_x = model.drift(t, x, mu_j)
        if st is None:
            x = x + h * drift_x + lam * d_w + d_wt @ sigma.T
            v = v + h * drift_v + h_inc
        else:
            m = st.m
            x1, x2 = x[:, :m], x[:, m:]
            v1, v2 = v[:, :m], v[:, m:]
            x = np.hstack([x1 + h * (x1 @ st.a.T + x2 @ st.m_mat.T),
                           x2 + h * drift_x + lam * d_w + d_wt @ sigma.T])
            v = np.hstack([v1 + h * (v1 @ st.a.T + v2 @ st.m_mat.T),
                           v2 + h * drift_v + h_inc])
        states[j + 1], tangents[j + 1] = x, v

    return TangentRun(plan=plan, states=states, tangents=tangents,
                      h_path=h_path, g_sigma=g_sigma, d_w=d_w_all)


# ---------------------------------------------------------------------------
# weight processes
# ---------------------------------------------------------------------------

def build_nm_nondegenerate(model: MeanFieldModel, run: TangentRun,
                           j_hor: int) -> tuple[np.ndarray, np.ndarray]:
    """Plain weight processes on the sub-grid [0, t]:

    N_{s,t} = ((t-s)/t) phi(X_0) + H_s - (s/t) H_t
    M_{s,t} = E[<D_b-kernel(y,.)(X_s), tangent_s>]|_{y=X_s} + (phi(X_0) + H_t)/t
    """
    if j_hor < 1 or j_hor > run.n_steps:
        raise GridMismatchError("horizon index outside the simulated grid")
    h = run.plan.h
    t_hor = j_hor * h
    phi0 = run.tangents[0][:, :]
    h_t = run.h_path[j_hor]
    times = np.arange(j_hor) * h
    n_proc = ((t_hor - times)[:, None, None] / t_hor) * phi0[None] \
        + run.h_path[:j_hor] - (times[:, None, None] / t_hor) * h_t[None]
    m_proc = np.empty_like(n_proc)
    for j in range(j_hor):
        x_j = run.states[j]
        field_term = model.mean_lions_drift(j * h, x_j, EmpiricalMeasure(x_j),
                                            x_j, run.tangents[j])
        m_proc[j] = field_term + (phi0 + h_t) / t_hor
    return n_proc, m_proc


@dataclass
class DegenerateProcesses:
    gamma: np.ndarray        # (J+1, N, d)
    v_t: np.ndarray          # (N, m)
    alpha: np.ndarray        # (J+1, N, d)
    alpha_prime: np.ndarray  # (J+1, N, d)
    n1: np.ndarray           # (J, N, m)
    n2: np.ndarray           # (J, N, d)
    m_proc: np.ndarray       # (J, N, d)


def build_bismut_degenerate(model: MeanFieldModel, run: TangentRun,
                            j_hor: int) -> DegenerateProcesses:
    """Gramian-steered weight processes (gamma, V, alpha, N1, N2, M) on the
    sub-grid [0, t]; alpha' is analytic, V and N1 are quadratures over the
    stored gamma path."""
    st = model.structure
    if st is None:
        raise GridMismatchError("model has no Hamiltonian structure")
    if j_hor < 1 or j_hor > run.n_steps:
        raise GridMismatchError("horizon index outside the simulated grid")
    h = run.plan.h
    t_hor = j_hor * h
    m = st.m
    phi1 = run.tangents[0][:, :m]
    phi2 = run.tangents[0][:, m:]
    gamma = run.h_path[:j_hor + 1]
    nodes = steering_nodes(st, h, j_hor)
    times = nodes.times

    integrand = ((t_hor - times)[:, None, None] / t_hor) * phi2[None] \
        - (times[:, None, None] / t_hor) * gamma[j_hor][None] + gamma
    v_t = steering_v_integral(nodes, integrand, h)
    q_mat = gramian(st.a, st.m_mat, t_hor)
    q_vec = solve_psd(q_mat, (phi1 + v_t).T, t_hor).T
    alpha, alpha_prime = steering_control(nodes, -(phi2 + gamma[j_hor]), q_vec)

    # N2_s = alpha(s) + phi2 + gamma_s; N1 accumulates e^{(s-r)A} M N2_r
    n2_full = alpha + phi2[None] + gamma
    n1_full = np.empty((j_hor + 1, phi1.shape[0], m))
    n1_full[0] = phi1 @ nodes.e_minus[0].T
    from .linalg import matrix_exp

    e_plus = matrix_exp(st.a, h)
    epm = e_plus @ st.m_mat
    for j in range(j_hor):
        n1_full[j + 1] = n1_full[j] @ e_plus.T + 0.5 * h * (
            n2_full[j] @ epm.T + n2_full[j + 1] @ st.m_mat.T)

    m_proc = np.empty((j_hor, phi2.shape[0], st.d))
    for j in range(j_hor):
        x_j = run.states[j]
        field_term = model.mean_lions_drift(j * h, x_j, EmpiricalMeasure(x_j),
                                            x_j, run.tangents[j])
        m_proc[j] = field_term - alpha_prime[j]
    return DegenerateProcesses(gamma=gamma, v_t=v_t, alpha=alpha,
                               alpha_prime=alpha_prime, n1=n1_full[:j_hor],
                               n2=n2_full[:j_hor], m_proc=m_proc)


def bismut_weights(model: MeanFieldModel, run: TangentRun, j_hor: int) -> np.ndarray:
    """Per-particle martingale weight (1/lam) int_0^t <grad_b(N) + M, dW>."""
    h = run.plan.h
    if model.is_degenerate:
        proc = build_bismut_degenerate(model, run, j_hor)
        n_proc = np.concatenate([proc.n1, proc.n2], axis=2)
        m_proc = proc.m_proc
    else:
        n_proc, m_proc = build_nm_nondegenerate(model, run, j_hor)
    w = np.zeros(run.n_particles)
    for j in range(j_hor):
        x_j = run.states[j]
        integrand = model.grad_x_drift(j * h, x_j, EmpiricalMeasure(x_j),
                                       n_proc[j]) + m_proc[j]
        w += np.sum(integrand * run.d_w[j], axis=1)
    return w / model.lam


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

@dataclass
class BismutEstimate:
    value: float
    std_error: float
    replicas: int
    t: float
    weight_l2: float
    f_name: str = ""
    phi_name: str = ""

    def agrees_with(self, reference: float, reference_se: float = 0.0,
                    rel_tol: float = 0.05) -> bool:
        """Relative error within rel_tol, or within 3 combined standard
        errors, whichever is larger."""
        tol = max(rel_tol * abs(reference),
                  3.0 * math.hypot(self.std_error, reference_se))
        return abs(self.value - reference) <= tol


def bismut_estimate(model: MeanFieldModel, mu0, phi, f_dict: dict, t_grid,
                    n_particles: int, n_clouds: int, seed: int, h: float,
                    phi_name: str = "") -> dict:
    """Derivative estimates for every (t, f) pair, sharing one trajectory per
    cloud replica across the whole t-grid and payoff battery.

    Returns {(t, f_name): BismutEstimate}; the replica axis is the cloud, so
    the standard error is taken across independent clouds.
    """
    t_grid = sorted(float(t) for t in np.atleast_1d(t_grid))
    n_steps = n_steps_for(max(t_grid), h)
    plan = NoisePlan(seed, h, n_steps)
    per_cloud = {key: [] for key in
                 [(t, name) for t in t_grid for name in f_dict]}
    weight_sq = {t: [] for t in t_grid}
    for r in range(n_clouds):
        points = materialize_initial(mu0, n_particles, plan, subid=r)
        run = tangent_flow(model, points, phi, plan, subid=r)
        for t in t_grid:
            j_hor = n_steps_for(t, h)
            w = bismut_weights(model, run, j_hor)
            weight_sq[t].append(float(np.mean(w ** 2)))
            x_t = run.states[j_hor]
            for name, f in f_dict.items():
                per_cloud[(t, name)].append(float(np.mean(f(x_t) * w)))
    out = {}
    for (t, name), vals in per_cloud.items():
        vals = np.array(vals)
        se = float(vals.std(ddof=1) / math.sqrt(n_clouds)) if n_clouds > 1 else math.inf
        out[(t, name)] = BismutEstimate(
            value=float(vals.mean()), std_error=se, replicas=n_clouds, t=t,
            weight_l2=float(math.sqrt(np.mean(weight_sq[t]))),
            f_name=name, phi_name=phi_name)
    return out


def bismut_nondegenerate(model: MeanFieldModel, mu0, phi, f, t: float,
                         n_particles: int, replicas: int, seed: int,
                         h: float) -> BismutEstimate:
    if model.is_degenerate:
        raise ValueError("model is degenerate; use bismut_degenerate")
    return bismut_estimate(model, mu0, phi, {"f": f}, [t], n_particles,
                           replicas, seed, h)[(t, "f")]


def bismut_degenerate(model: MeanFieldModel, mu0, phi, f, t: float,
                      n_particles: int, replicas: int, seed: int,
                      h: float) -> BismutEstimate:
    if not model.is_degenerate:
        raise ValueError("model is non-degenerate; use bismut_nondegenerate")
    return bismut_estimate(model, mu0, phi, {"f": f}, [t], n_particles,
                           replicas, seed, h)[(t, "f")]


# ---------------------------------------------------------------------------
# finite-difference oracle
# ---------------------------------------------------------------------------

def _cloud_trajectory(model: MeanFieldModel, points: np.ndarray, plan: NoisePlan,
                      n_steps: int, subid: int) -> np.ndarray:
    """Plain interacting-cloud trajectory on the same streams tangent_flow uses."""
    h, lam, d = plan.h, model.lam, model.noise_dim
    st = model.structure
    x = np.array(points, dtype=float)
    out = np.empty((n_steps + 1,) + x.shape)
    out[0] = x
    for j in range(n_steps):
        t = j * h
        mu_j = EmpiricalMeasure(x)
        sigma = model.sigma_tilde(t, mu_j)
        d_w = plan.brownian(Stream.W, j, x.shape[0], d, subid)
        d_wt = plan.brownian(Stream.WTILDE, j, x.shape[0], d, subid)
        b = model.drift(t, x, mu_j)
        if st is None:
            x = x + h * b + lam * d_w + d_wt @ sigma.T
        else:
            m = st.m
            x = np.hstack([x[:, :m] + h * (x[:, :m] @ st.a.T + x[:, m:] @ st.m_mat.T),
                           x[:, m:] + h * b + lam * d_w + d_wt @ sigma.T])
        out[j + 1] = x
    return out


@dataclass
class FDOracleEstimate:
    value: float
    std_error: float
    eps: float
    t: float
    f_name: str = ""


def lions_fd_oracle(model: MeanFieldModel, mu0, phi, f_dict: dict, t_grid,
                    eps: float, seed: int, h: float, n_particles: int,
                    n_clouds: int = 4, richardson: bool = False) -> dict:
    """Shared-noise difference quotient of the semigroup along the transport
    perturbation id + eps phi.

    Simulates the cloud from {x_i} and {x_i + eps phi(x_i)} on identical
    streams and returns (P_t f(mu^eps) - P_t f(mu)) / eps per (t, f), with
    optional Richardson extrapolation over (eps, eps/2).
    """
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    t_grid = sorted(float(t) for t in np.atleast_1d(t_grid))
    n_steps = n_steps_for(max(t_grid), h)
    plan = NoisePlan(seed, h, n_steps)
    eps_list = [eps, eps / 2.0] if richardson else [eps]
    per_key = {(t, name): [] for t in t_grid for name in f_dict}
    for r in range(n_clouds):
        points = materialize_initial(mu0, n_particles, plan, subid=r)
        base = _cloud_trajectory(model, points, plan, n_steps, subid=r)
        quotients = []
        for e in eps_list:
            shifted = _cloud_trajectory(model, points + e * phi(points), plan,
                                        n_steps, subid=r)
            quotients.append((shifted, e))
        for t in t_grid:
            j_hor = n_steps_for(t, h)
            for name, f in f_dict.items():
                base_val = float(np.mean(f(base[j_hor])))
                qs = [(float(np.mean(f(traj[j_hor]))) - base_val) / e
                      for traj, e in quotients]
                val = 2.0 * qs[1] - qs[0] if richardson else qs[0]
                per_key[(t, name)].append(val)
    out = {}
    for (t, name), vals in per_key.items():
        vals = np.array(vals)
        se = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else math.inf
        out[(t, name)] = FDOracleEstimate(value=float(vals.mean()), std_error=se,
                                          eps=eps, t=t, f_name=name)
    return out


def tangent_fd_gap(model: MeanFieldModel, initial_points: np.ndarray, phi,
                   eps: float, h: float, n_steps: int, seed: int,
                   subid: int = 0) -> float:
    """sup over (t, particle) of |tangent - shared-noise difference quotient|.

    The quotient and the tangent ride identical increment streams, so the
    gap is pure linearization error, O(eps) for smooth coefficients.
    """
    plan = NoisePlan(seed, h, n_steps)
    run = tangent_flow(model, initial_points, phi, plan, subid=subid)
    shifted = _cloud_trajectory(model, initial_points + eps * phi(initial_points),
                                plan, n_steps, subid=subid)
    quotient = (shifted - run.states) / eps
    return float(np.max(np.linalg.norm(quotient - run.tangents, axis=2)))


# ---------------------------------------------------------------------------
# rate probe
# ---------------------------------------------------------------------------

@dataclass
class RateProbeReport:
    t_grid: np.ndarray
    estimates: np.ndarray
    weight_l2: np.ndarray
    estimate_slope: float
    weight_slope: float
    weight_slope_floor: float
    estimates_se: np.ndarray = field(default=None)

    @property
    def passed(self) -> bool:
        return self.weight_slope >= self.weight_slope_floor


def derivative_rate_probe(model: MeanFieldModel, mu0, phi, f, t_grid,
                          n_particles: int, n_clouds: int, seed: int, h: float,
                          slope_slack: float | None = None) -> RateProbeReport:
    """Slopes of log |estimate| and log ||weight||_{L^2} against log t.

    The contract is on the weight norm: blow-up as t -> 0 no worse than the
    t^{-1/2} (plain) or t^{-(2l-1/2)} (degenerate) rate, within the slack.
    Grid times are snapped to the step grid.
    """
    t_grid = np.atleast_1d(np.asarray(t_grid, dtype=float))
    t_grid = np.unique(np.maximum(np.round(t_grid / h), 1) * h)
    res = bismut_estimate(model, mu0, phi, {"f": f}, t_grid, n_particles,
                          n_clouds, seed, h)
    estimates = np.array([res[(t, "f")].value for t in t_grid])
    ses = np.array([res[(t, "f")].std_error for t in t_grid])
    weight_l2 = np.array([res[(t, "f")].weight_l2 for t in t_grid])
    log_t = np.log(t_grid)
    est_slope = float(np.polyfit(log_t, np.log(np.maximum(np.abs(estimates), 1e-300)), 1)[0])
    w_slope = float(np.polyfit(log_t, np.log(weight_l2), 1)[0])
    if model.is_degenerate:
        l = model.structure.l
        floor = -(2 * l - 0.5) - (0.3 if slope_slack is None else slope_slack)
    else:
        floor = -0.5 - (0.2 if slope_slack is None else slope_slack)
    return RateProbeReport(t_grid=t_grid, estimates=estimates, weight_l2=weight_l2,
                           estimate_slope=est_slope, weight_slope=w_slope,
                           weight_slope_floor=floor, estimates_se=ses)
