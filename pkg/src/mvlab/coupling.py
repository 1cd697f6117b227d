"""Couplings by change of measure with Girsanov weights.

Two constructions are implemented against precomputed law flows:

* non-degenerate: the controlled path Y follows the mu-coefficients plus a
  constant-in-time steering drift built from the initial displacement and
  the terminal xi gap, and hits X exactly at t0;
* degenerate: only the noisy block is controlled; the steering control
  alpha(s) is assembled from the Gramian so that both blocks hit at t0.
  alpha'(s) is evaluated analytically (polynomial times matrix exponential),
  never by numeric differentiation.

Both paths of a run share the same (W, Wtilde) increments; the X path is a
decoupled simulation against the frozen mu-flow.  The Girsanov log-weight is
accumulated in the log domain from the un-normalized control u (the drift
added on top of lam dW), so exp(log R) is structurally positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    FlowHorizonTooShortError,
    LengthMismatchError,
    StreamMismatchError,
)
from .linalg import gramian, matrix_exp, solve_psd
from .measures import EmpiricalMeasure, GaussianLaw, optimal_initial_coupling
from .models import MeanFieldModel
from .noise import Stream
from .simulate import LawFlow, n_steps_for

LOGR_OUTLIER = 50.0  # runs with |log R| beyond this are flagged, never dropped


@dataclass
class CouplingBatch:
    """Vectorized diagnostics of independent coupling replicas."""

    t0: float
    h: float
    lam: float
    log_weights: np.ndarray          # (R,)
    terminal_gaps: np.ndarray        # (R,) |Y_{t0} - X_{t0}|
    interp_residuals: np.ndarray     # (R,) max pathwise identity residual
    control_sq_integrals: np.ndarray  # (R,) int_0^{t0} |u_s|^2 ds
    xi_sup_gaps: np.ndarray          # (R,) sup_j |xi^mu_j - xi^nu_j|
    init_sq: np.ndarray              # (R,) |x0 - y0|^2
    x_terminal: np.ndarray           # (R, dim)
    y_terminal: np.ndarray           # (R, dim)
    x_nu_terminal: np.ndarray | None = None

    @property
    def n_replicas(self) -> int:
        return self.log_weights.shape[0]

    @property
    def n_outliers(self) -> int:
        return int(np.sum(np.abs(self.log_weights) > LOGR_OUTLIER))

    def entropy_cost_lhs(self) -> np.ndarray:
        """Per-replica (1/2) lam^{-2} int |u|^2 dt, the quantity the
        entropy-cost bound controls."""
        return 0.5 * self.control_sq_integrals / self.lam ** 2

    def martingale_check(self) -> tuple[float, float]:
        """(mean, standard error) of exp(log R); the target mean is 1."""
        w = np.exp(self.log_weights)
        return float(w.mean()), float(w.std(ddof=1) / math.sqrt(w.size))


@dataclass
class CouplingRun:
    """Single coupled pair with full paths kept for identity checks."""

    t0: float
    h: float
    lam: float
    times: np.ndarray
    x_path: np.ndarray               # (J0+1, dim)
    y_path: np.ndarray
    eta_path: np.ndarray             # (J0, d) un-normalized control u
    xi_mu: np.ndarray                # (J0+1, d)
    xi_nu: np.ndarray
    log_weight: float
    terminal_gap: float
    interp_residual: float

    @property
    def control_sq_integral(self) -> float:
        return float(self.h * np.sum(self.eta_path ** 2))


def girsanov_logweight(eta: np.ndarray, d_w: np.ndarray, lam: float, h: float) -> np.ndarray:
    """log R = sum_j <eta_j/lam, dW_j> - (h/2) sum_j |eta_j/lam|^2.

    eta and d_w have shape (J, d) or (J, R, d); left-point Ito sums.
    """
    eta = np.asarray(eta, dtype=float)
    d_w = np.asarray(d_w, dtype=float)
    if eta.shape != d_w.shape:
        raise LengthMismatchError(f"eta shape {eta.shape} vs dW shape {d_w.shape}")
    stoch = np.sum(eta * d_w, axis=(0, -1)) / lam
    quad = 0.5 * h * np.sum(eta ** 2, axis=(0, -1)) / lam ** 2
    return stoch - quad


def _check_flows(model: MeanFieldModel, flow_mu: LawFlow, flow_nu: LawFlow,
                 t0: float) -> int:
    if not flow_mu.same_stream(flow_nu):
        raise StreamMismatchError("coupled flows must share seed, grid, and xi stream")
    j0 = n_steps_for(t0, flow_mu.plan.h)
    if j0 < 1:
        raise FlowHorizonTooShortError("t0 must cover at least one step")
    if j0 > flow_mu.n_steps:
        raise FlowHorizonTooShortError(
            f"flows cover {flow_mu.n_steps} steps, coupling needs {j0}")
    if flow_mu.noise_dim != model.noise_dim:
        raise StreamMismatchError("flow noise dimension does not match the model")
    return j0


def _replica_noise(flow: LawFlow, kind: int, j: int, n_rows: int, offset: int,
                   dim: int) -> np.ndarray:
    return flow.plan.brownian(kind, j, offset + n_rows, dim)[offset:]


def _run_nondegenerate(model, flow_mu, flow_nu, x0s, y0s, t0, *,
                       direct_nu=False, keep_paths=False, replica_offset=0):
    j0 = _check_flows(model, flow_mu, flow_nu, t0)
    plan = flow_mu.plan
    h, lam, d = plan.h, model.lam, model.noise_dim
    n = x0s.shape[0]

    d_wt = np.empty((j0, n, d))
    for j in range(j0):
        d_wt[j] = _replica_noise(flow_mu, Stream.SHARED_WTILDE, j, n, replica_offset, d)
    xi_mu = flow_mu.xi_for(d_wt)          # (j0+1, n, d)
    xi_nu = flow_nu.xi_for(d_wt)
    dxi = xi_mu - xi_nu
    shift = (dxi[j0] + x0s - y0s) / t0    # constant steering drift of (2)

    x = x0s.copy()
    y = y0s.copy()
    x_nu = y0s.copy() if direct_nu else None
    log_w = np.zeros(n)
    ctrl_sq = np.zeros(n)
    residual = np.zeros(n)
    paths = None
    if keep_paths:
        paths = {"x": np.empty((j0 + 1, n, model.dim)), "y": np.empty((j0 + 1, n, model.dim)),
                 "eta": np.empty((j0, n, d))}
        paths["x"][0], paths["y"][0] = x, y

    for j in range(j0):
        t = j * h
        mu_j = flow_mu.measure_at(j)
        nu_j = flow_nu.measure_at(j)
        sig_mu = flow_mu.sigma_path[j]
        sig_nu = flow_nu.sigma_path[j]
        d_w = _replica_noise(flow_mu, Stream.COUPLING_W, j, n, replica_offset, d)
        b_x = model.drift(t, x, mu_j)
        eta = model.drift(t, y, nu_j) - b_x - shift
        log_w += np.sum(eta * d_w, axis=1) / lam - 0.5 * h * np.sum(eta ** 2, axis=1) / lam ** 2
        ctrl_sq += h * np.sum(eta ** 2, axis=1)
        x = x + h * b_x + lam * d_w + d_wt[j] @ sig_mu.T
        y = y + h * (b_x + shift) + lam * d_w + d_wt[j] @ sig_nu.T
        if direct_nu:
            x_nu = (x_nu + h * model.drift(t, x_nu, nu_j) + lam * d_w
                    + d_wt[j] @ sig_nu.T)
        tj1 = (j + 1) * h
        ref = ((t0 - tj1) / t0) * (y0s - x0s) + (tj1 / t0) * dxi[j0] - dxi[j + 1]
        residual = np.maximum(residual, np.linalg.norm(y - x - ref, axis=1))
        if keep_paths:
            paths["x"][j + 1], paths["y"][j + 1], paths["eta"][j] = x, y, eta

    gaps = np.linalg.norm(y - x, axis=1)
    xi_sup = np.max(np.linalg.norm(dxi, axis=2), axis=0)
    return {
        "j0": j0, "log_w": log_w, "gaps": gaps, "residual": residual,
        "ctrl_sq": ctrl_sq, "xi_sup": xi_sup, "x": x, "y": y, "x_nu": x_nu,
        "xi_mu": xi_mu, "xi_nu": xi_nu, "paths": paths,
    }


@dataclass(frozen=True)
class SteeringNodes:
    """Matrix-exponential node tables for the Gramian-steered control on a
    uniform grid over [0, t_hor]."""

    t_hor: float
    times: np.ndarray
    e_minus: np.ndarray   # (J+1, m, m)  e^{-s_j A}
    em_m: np.ndarray      # (J+1, m, d)  e^{-s_j A} M
    c_nodes: np.ndarray   # (J+1, d, m)  M^T e^{-s_j A^T}
    d_nodes: np.ndarray   # (J+1, d, m)  M^T A^T e^{-s_j A^T}


def steering_nodes(structure, h: float, j_hor: int) -> SteeringNodes:
    a_mat, m_mat = structure.a, structure.m_mat
    m = structure.m
    e_minus = np.empty((j_hor + 1, m, m))
    e_minus[0] = np.eye(m)
    step_minus = matrix_exp(a_mat, -h)
    for j in range(j_hor):
        e_minus[j + 1] = e_minus[j] @ step_minus
    em_m = e_minus @ m_mat
    return SteeringNodes(
        t_hor=j_hor * h,
        times=np.arange(j_hor + 1) * h,
        e_minus=e_minus,
        em_m=em_m,
        c_nodes=np.transpose(em_m, (0, 2, 1)),
        d_nodes=np.transpose(e_minus @ a_mat @ m_mat, (0, 2, 1)),
    )


def steering_v_integral(nodes: SteeringNodes, integrand: np.ndarray, h: float) -> np.ndarray:
    """Trapezoid of e^{-rA} M integrand(r) over the grid; integrand is
    (J+1, n, d), the result (n, m)."""
    rows = np.einsum("jmd,jnd->jnm", nodes.em_m, integrand)
    weights = np.full(nodes.times.size, h)
    weights[0] = weights[-1] = h / 2.0
    return np.tensordot(weights, rows, axes=(0, 0))


def steering_control(nodes: SteeringNodes, steer: np.ndarray,
                     q_vec: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Control alpha(s) = (s/t) steer - (s(t-s)/t^2) M^T e^{-sA^T} q and its
    analytic derivative on the grid; steer is (n, d), q_vec (n, m)."""
    t_hor, times = nodes.t_hor, nodes.times
    j1, n, d = times.size, steer.shape[0], steer.shape[1]
    w_poly = times * (t_hor - times) / t_hor ** 2
    w_poly_prime = (t_hor - 2.0 * times) / t_hor ** 2
    qc = np.einsum("nm,jdm->jnd", q_vec, nodes.c_nodes)
    qd = np.einsum("nm,jdm->jnd", q_vec, nodes.d_nodes)
    alpha = (times[:, None, None] / t_hor) * steer[None] - w_poly[:, None, None] * qc
    alpha_prime = (1.0 / t_hor) * np.broadcast_to(steer, (j1, n, d)).copy() \
        - w_poly_prime[:, None, None] * qc + w_poly[:, None, None] * qd
    return alpha, alpha_prime


def _run_degenerate(model, flow_mu, flow_nu, x0s, y0s, t0, *,
                    direct_nu=False, keep_paths=False, replica_offset=0):
    st = model.structure
    if st is None:
        raise ValueError("degenerate coupling needs a Hamiltonian structure")
    j0 = _check_flows(model, flow_mu, flow_nu, t0)
    plan = flow_mu.plan
    h, lam, d, m = plan.h, model.lam, model.noise_dim, st.m
    n = x0s.shape[0]
    a_mat, m_mat = st.a, st.m_mat

    d_wt = np.empty((j0, n, d))
    for j in range(j0):
        d_wt[j] = _replica_noise(flow_mu, Stream.SHARED_WTILDE, j, n, replica_offset, d)
    xi_mu = flow_mu.xi_for(d_wt)
    xi_nu = flow_nu.xi_for(d_wt)
    dxi = xi_mu - xi_nu                   # (j0+1, n, d)

    v = y0s - x0s
    v1, v2 = v[:, :m], v[:, m:]
    nodes = steering_nodes(st, h, j0)
    times = nodes.times

    integrand = ((t0 - times)[:, None, None] / t0) * v2[None, :, :] \
        + (times[:, None, None] / t0) * dxi[j0][None, :, :] - dxi
    v_t0 = steering_v_integral(nodes, integrand, h)      # (n, m)

    q_mat = gramian(a_mat, m_mat, t0)
    q_vec = solve_psd(q_mat, (v1 + v_t0).T, t0).T        # (n, m)
    alpha, alpha_prime = steering_control(nodes, dxi[j0] - v2, q_vec)

    x = x0s.copy()
    y = y0s.copy()
    x_nu = y0s.copy() if direct_nu else None
    log_w = np.zeros(n)
    ctrl_sq = np.zeros(n)
    residual = np.zeros(n)
    # reference block-1 gap from the (A3) integral formula, trapezoid form
    e_plus = matrix_exp(a_mat, h)
    ref1 = v1.copy()
    paths = None
    if keep_paths:
        paths = {"x": np.empty((j0 + 1, n, model.dim)), "y": np.empty((j0 + 1, n, model.dim)),
                 "eta": np.empty((j0, n, d))}
        paths["x"][0], paths["y"][0] = x, y

    def block2_ref(j):
        return alpha[j] + v2 - dxi[j]

    for j in range(j0):
        t = j * h
        mu_j = flow_mu.measure_at(j)
        nu_j = flow_nu.measure_at(j)
        sig_mu = flow_mu.sigma_path[j]
        sig_nu = flow_nu.sigma_path[j]
        d_w = _replica_noise(flow_mu, Stream.COUPLING_W, j, n, replica_offset, d)
        b_x = model.drift(t, x, mu_j)
        u = model.drift(t, y, nu_j) - b_x - alpha_prime[j]
        log_w += np.sum(u * d_w, axis=1) / lam - 0.5 * h * np.sum(u ** 2, axis=1) / lam ** 2
        ctrl_sq += h * np.sum(u ** 2, axis=1)

        x1, x2 = x[:, :m], x[:, m:]
        y1, y2 = y[:, :m], y[:, m:]
        new_x1 = x1 + h * (x1 @ a_mat.T + x2 @ m_mat.T)
        new_x2 = x2 + h * b_x + lam * d_w + d_wt[j] @ sig_mu.T
        new_y1 = y1 + h * (y1 @ a_mat.T + y2 @ m_mat.T)
        new_y2 = y2 + h * (b_x + alpha_prime[j]) + lam * d_w + d_wt[j] @ sig_nu.T
        x = np.hstack([new_x1, new_x2])
        y = np.hstack([new_y1, new_y2])
        if direct_nu:
            xn1, xn2 = x_nu[:, :m], x_nu[:, m:]
            new_n1 = xn1 + h * (xn1 @ a_mat.T + xn2 @ m_mat.T)
            new_n2 = (xn2 + h * model.drift(t, x_nu, nu_j) + lam * d_w
                      + d_wt[j] @ sig_nu.T)
            x_nu = np.hstack([new_n1, new_n2])

        ref1 = ref1 @ e_plus.T + 0.5 * h * (block2_ref(j) @ (e_plus @ m_mat).T
                                            + block2_ref(j + 1) @ m_mat.T)
        res2 = np.linalg.norm(y[:, m:] - x[:, m:] - block2_ref(j + 1), axis=1)
        res1 = np.linalg.norm(y[:, :m] - x[:, :m] - ref1, axis=1)
        residual = np.maximum(residual, np.maximum(res1, res2))
        if keep_paths:
            paths["x"][j + 1], paths["y"][j + 1], paths["eta"][j] = x, y, u

    gaps = np.linalg.norm(y - x, axis=1)
    xi_sup = np.max(np.linalg.norm(dxi, axis=2), axis=0)
    return {
        "j0": j0, "log_w": log_w, "gaps": gaps, "residual": residual,
        "ctrl_sq": ctrl_sq, "xi_sup": xi_sup, "x": x, "y": y, "x_nu": x_nu,
        "xi_mu": xi_mu, "xi_nu": xi_nu, "paths": paths,
    }


def _run_for(model):
    return _run_degenerate if model.is_degenerate else _run_nondegenerate


def _single_run(model, flow_mu, flow_nu, x0, y0, t0, replica) -> CouplingRun:
    x0s = np.atleast_1d(np.asarray(x0, dtype=float))[None, :]
    y0s = np.atleast_1d(np.asarray(y0, dtype=float))[None, :]
    out = _run_for(model)(model, flow_mu, flow_nu, x0s, y0s, t0,
                          keep_paths=True, replica_offset=replica)
    j0 = out["j0"]
    h = flow_mu.plan.h
    return CouplingRun(
        t0=t0, h=h, lam=model.lam,
        times=np.arange(j0 + 1) * h,
        x_path=out["paths"]["x"][:, 0, :],
        y_path=out["paths"]["y"][:, 0, :],
        eta_path=out["paths"]["eta"][:, 0, :],
        xi_mu=out["xi_mu"][:, 0, :],
        xi_nu=out["xi_nu"][:, 0, :],
        log_weight=float(out["log_w"][0]),
        terminal_gap=float(out["gaps"][0]),
        interp_residual=float(out["residual"][0]),
    )


def couple_nondegenerate(model: MeanFieldModel, flow_mu: LawFlow, flow_nu: LawFlow,
                         x0, y0, t0: float, replica: int = 0) -> CouplingRun:
    """Coupled pair for the non-degenerate dynamics; exact terminal hit."""
    if model.is_degenerate:
        raise ValueError("model is degenerate; use couple_degenerate")
    return _single_run(model, flow_mu, flow_nu, x0, y0, t0, replica)


def couple_degenerate(model: MeanFieldModel, flow_mu: LawFlow, flow_nu: LawFlow,
                      x0, y0, t0: float, replica: int = 0) -> CouplingRun:
    """Gramian-steered coupled pair for the degenerate dynamics."""
    if not model.is_degenerate:
        raise ValueError("model is non-degenerate; use couple_nondegenerate")
    return _single_run(model, flow_mu, flow_nu, x0, y0, t0, replica)


def _initial_pairs(mu0, nu0, n_replicas, plan):
    """Replica initial pairs drawn from the optimal coupling of the initial
    measures; plain points are treated as Dirac masses."""
    if isinstance(mu0, EmpiricalMeasure) and isinstance(nu0, EmpiricalMeasure):
        pi = optimal_initial_coupling(mu0, nu0)
        u = plan.uniform(Stream.INIT, 0, (n_replicas,), subid=1)
        idx = np.minimum((u * mu0.n_points).astype(int), mu0.n_points - 1)
        return mu0.points[idx], nu0.points[pi[idx]]
    x0 = np.atleast_1d(np.asarray(mu0, dtype=float))
    y0 = np.atleast_1d(np.asarray(nu0, dtype=float))
    return np.tile(x0, (n_replicas, 1)), np.tile(y0, (n_replicas, 1))


def coupling_replicas(model: MeanFieldModel, flow_mu: LawFlow, flow_nu: LawFlow,
                      mu0, nu0, t0: float, n_replicas: int,
                      direct_nu: bool = False) -> CouplingBatch:
    """Independent coupling replicas sharing the law flows; each replica has
    its own (W, Wtilde) pair, and the direct nu-path (when requested) rides
    the same increments."""
    x0s, y0s = _initial_pairs(mu0, nu0, n_replicas, flow_mu.plan)
    out = _run_for(model)(model, flow_mu, flow_nu, x0s, y0s, t0, direct_nu=direct_nu)
    return CouplingBatch(
        t0=t0, h=flow_mu.plan.h, lam=model.lam,
        log_weights=out["log_w"],
        terminal_gaps=out["gaps"],
        interp_residuals=out["residual"],
        control_sq_integrals=out["ctrl_sq"],
        xi_sup_gaps=out["xi_sup"],
        init_sq=np.sum((x0s - y0s) ** 2, axis=1),
        x_terminal=out["x"],
        y_terminal=out["y"],
        x_nu_terminal=out["x_nu"],
    )


# ---------------------------------------------------------------------------
# weighted-law transfer and entropy-cost probes
# ---------------------------------------------------------------------------

@dataclass
class TransferRow:
    name: str
    weighted_mean: float      # mean of R f(X_{t0})
    direct_mean: float        # mean of f(X_{t0}^nu)
    diff_se: float            # SE of the paired difference
    closed_form: float | None = None
    direct_se: float | None = None

    @property
    def passed(self) -> bool:
        ok = abs(self.weighted_mean - self.direct_mean) <= 3.0 * self.diff_se
        if self.closed_form is not None and self.direct_se is not None:
            ok = ok and abs(self.direct_mean - self.closed_form) <= 3.0 * self.direct_se
        return ok


@dataclass
class TransferReport:
    t0: float
    rows: list[TransferRow]
    n_outliers: int

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)


def default_f_battery(dim: int) -> dict:
    """Coordinates, quadratics, and bounded exponentials."""
    battery = {"one": lambda x: np.ones(x.shape[0])}
    for k in range(dim):
        battery[f"coord{k}"] = lambda x, k=k: x[:, k]
        battery[f"quad{k}"] = lambda x, k=k: x[:, k] ** 2
    battery["exp_bump"] = lambda x: np.exp(-np.sum(x ** 2, axis=1))
    return battery


def weighted_law_transfer_check(batch: CouplingBatch, f_battery: dict | None = None,
                                closed_form_nu: GaussianLaw | None = None) -> TransferReport:
    """Check E[R f(X_{t0})] = E[f(X_{t0}^nu)] for every f in the battery.

    The batch must have been built with direct_nu=True so both sides ride
    the same increments; the paired difference then has a well-defined SE.
    Coordinate means on the nu side are also compared to the closed-form law
    when one is supplied.
    """
    if batch.x_nu_terminal is None:
        raise ValueError("batch lacks the direct nu-path; rebuild with direct_nu=True")
    if f_battery is None:
        f_battery = default_f_battery(batch.x_terminal.shape[1])
    weights = np.exp(batch.log_weights)
    n = batch.n_replicas
    rows = []
    for name, f in f_battery.items():
        lhs = weights * f(batch.x_terminal)
        rhs = f(batch.x_nu_terminal)
        diff = lhs - rhs
        closed = None
        direct_se = None
        if closed_form_nu is not None and name.startswith("coord"):
            k = int(name[5:])
            closed = float(closed_form_nu.mean[k])
            direct_se = float(rhs.std(ddof=1) / math.sqrt(n))
        rows.append(TransferRow(
            name=name,
            weighted_mean=float(lhs.mean()),
            direct_mean=float(rhs.mean()),
            diff_se=float(diff.std(ddof=1) / math.sqrt(n)),
            closed_form=closed,
            direct_se=direct_se,
        ))
    return TransferReport(t0=batch.t0, rows=rows, n_outliers=batch.n_outliers)


@dataclass
class EntropyBoundProbe:
    t0_grid: np.ndarray
    lhs_means: np.ndarray            # mean of (1/2) lam^{-2} int |eta|^2
    regressors: np.ndarray           # W2^2 (1 + 1/t0)
    fitted_c2: float
    residuals: np.ndarray

    @property
    def max_relative_residual(self) -> float:
        return float(np.max(np.abs(self.residuals) / np.maximum(self.lhs_means, 1e-300)))


def entropy_bound_probe(batches: list[CouplingBatch], w2_sq: float) -> EntropyBoundProbe:
    """Fit the constant c2 in the quadratic-cost bound
    mean[(1/2) lam^{-2} int |eta|^2] <= c2 W2^2 (1 + 1/t0) over a t0 grid."""
    if any(batch.n_replicas < 1000 for batch in batches):
        raise ValueError("entropy bound probe needs >= 1000 replicas per t0")
    t0s = np.array([batch.t0 for batch in batches])
    lhs = np.array([float(batch.entropy_cost_lhs().mean()) for batch in batches])
    x = w2_sq * (1.0 + 1.0 / t0s)
    c2 = float(np.sum(lhs * x) / np.sum(x * x))
    residuals = lhs - c2 * x
    return EntropyBoundProbe(t0_grid=t0s, lhs_means=lhs, regressors=x,
                             fitted_c2=c2, residuals=residuals)
