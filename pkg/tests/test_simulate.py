import numpy as np
import pytest

from mvlab.errors import NonFiniteStateError, StreamMismatchError
from mvlab.linalg import HamiltonianStructure, matrix_exp
from mvlab.measures import EmpiricalMeasure, GaussianLaw, gaussian_fit
from mvlab.models import MeanFieldModel, get_preset
from mvlab.noise import NoisePlan, Stream
from mvlab.simulate import (
    LawFlow,
    ParticleEnsemble,
    euler_maruyama_step,
    gaussian_law_flow,
    hamiltonian_step,
    linear_closed_form,
    materialize_initial,
    simulate_law_flow,
    stationary_gaussian,
    step,
    xi_gap,
)


def toy_model(drift=None, sigma=None, lam=0.5, dim=2, structure=None):
    """Distribution-free test model with pluggable coefficients."""
    drift = drift if drift is not None else (lambda t, x, mu: np.zeros((x.shape[0],
                                             structure.d if structure else dim)))
    d = structure.d if structure else dim
    sig = sigma if sigma is not None else np.zeros((d, d))
    return MeanFieldModel(
        name="toy", dim=dim, noise_dim=d, lam=lam,
        drift=drift,
        sigma_tilde=lambda t, mu: sig,
        grad_x_drift=lambda t, x, mu, v: np.zeros((x.shape[0], d)),
        mean_lions_drift=lambda t, x, mu, ys, vs: np.zeros((x.shape[0], d)),
        mean_lions_sigma=lambda t, mu, ys, vs: np.zeros((d, d)),
        structure=structure,
    )


class TestSteps:
    def test_no_dynamics_is_identity(self):
        model = toy_model(lam=0.0)
        plan = NoisePlan(1, 0.1, 5)
        ens = ParticleEnsemble(np.ones((4, 2)), 0, plan)
        out = euler_maruyama_step(model, ens, np.zeros((4, 2)), np.zeros((4, 2)))
        assert np.array_equal(out.states, ens.states)
        assert out.step_index == 1

    def test_explicit_euler_contraction(self):
        model = toy_model(drift=lambda t, x, mu: -x, lam=0.0)
        plan = NoisePlan(1, 0.1, 5)
        ens = ParticleEnsemble(np.full((3, 2), 2.0), 0, plan)
        out = euler_maruyama_step(model, ens, np.zeros((3, 2)), np.zeros((3, 2)))
        assert np.allclose(out.states, 2.0 * (1 - 0.1))

    def test_linear_mean_ode(self):
        # ensemble mean follows dm/dt = (B + C) m to O(h)
        model = get_preset("linear-ou", sigma1=0.0)
        h = 0.005
        n = 2000
        flow = simulate_law_flow(model, GaussianLaw(np.array([1.0, -0.5]), np.zeros((2, 2))),
                                 1.0, h, n, seed=7)
        rate = model.info.params["beta"] - model.info.params["eps0"]
        expected = np.exp(-rate) * np.array([1.0, -0.5])
        fit = gaussian_fit(flow.measure_at(flow.n_steps))
        se = np.sqrt(np.trace(fit.cov) / n)
        assert np.linalg.norm(fit.mean - expected) <= 3 * se + 5.0 * h

    def test_hamiltonian_block_drift(self):
        structure = HamiltonianStructure(np.zeros((1, 1)), np.eye(1))
        model = toy_model(lam=0.0, dim=2, structure=structure)
        plan = NoisePlan(1, 0.1, 5)
        ens = ParticleEnsemble(np.array([[0.0, 2.0]]), 0, plan)
        out = hamiltonian_step(model, ens, np.zeros((1, 1)), np.zeros((1, 1)))
        assert np.allclose(out.states, [[0.2, 2.0]])

    def test_zero_noise_matches_matrix_exponential(self):
        a = np.array([[0.0, 1.0], [0.0, 0.0]])
        m = np.array([[0.0], [1.0]])
        structure = HamiltonianStructure(a, m)
        g = np.array([[-1.0, -2.0, -1.5]])
        model = toy_model(drift=lambda t, x, mu: x @ g.T, lam=0.0, dim=3,
                          structure=structure)
        h = 0.001
        plan = NoisePlan(1, h, 1000)
        ens = ParticleEnsemble(np.array([[1.0, 0.5, -0.2]]), 0, plan)
        for j in range(1000):
            ens = step(model, ens, np.zeros((1, 1)), np.zeros((1, 1)))
        full = np.zeros((3, 3))
        full[:2, :2] = a
        full[:2, 2:] = m
        full[2:, :] = g
        expected = matrix_exp(full, 1.0) @ np.array([1.0, 0.5, -0.2])
        assert np.linalg.norm(ens.states[0] - expected) <= 5e-3  # O(h)

    def test_long_run_stays_finite(self):
        model = get_preset("kinetic-langevin")
        plan = NoisePlan(3, 0.01, 1000)
        ens = ParticleEnsemble(materialize_initial(
            GaussianLaw(np.zeros(3), 0.1 * np.eye(3)), 64, plan), 0, plan)
        for j in range(1000):
            d_w = plan.brownian(Stream.W, j, 64, 1)
            d_wt = plan.brownian(Stream.WTILDE, j, 64, 1)
            ens = step(model, ens, d_w, d_wt)
        assert np.all(np.isfinite(ens.states))
        assert ens.n_particles == 64

    def test_divergence_guard(self):
        model = toy_model(drift=lambda t, x, mu: np.full_like(x, np.inf), lam=0.0)
        plan = NoisePlan(1, 1.0, 3)
        ens = ParticleEnsemble(np.ones((2, 2)), 0, plan)
        with pytest.raises(NonFiniteStateError) as info:
            euler_maruyama_step(model, ens, np.zeros((2, 2)), np.zeros((2, 2)))
        assert info.value.step == 0


class TestLawFlow:
    def test_xi_zero_when_sigma_zero(self):
        model = toy_model(lam=0.5)
        flow = simulate_law_flow(model, np.zeros(2), 0.5, 0.01, 8, seed=2)
        assert np.all(flow.xi_path == 0.0)

    def test_xi_constant_sigma_is_brownian(self):
        sig = np.array([[1.5, 0.2], [0.2, 0.7]])
        model = toy_model(sigma=sig, lam=0.5)
        flow = simulate_law_flow(model, np.zeros(2), 0.5, 0.01, 8, seed=2)
        wt = np.zeros(2)
        for j in range(flow.n_steps):
            wt = wt + flow.plan.brownian(Stream.SHARED_WTILDE, j, 1, 2)[0]
        assert np.allclose(flow.xi_path[-1], sig @ wt)

    def test_flow_matches_step_loop_bitwise(self):
        model = get_preset("linear-ou")
        law0 = GaussianLaw(np.array([0.5, 0.1]), 0.04 * np.eye(2))
        flow = simulate_law_flow(model, law0, 0.2, 0.01, 32, seed=11)
        plan = flow.plan
        ens = ParticleEnsemble(materialize_initial(law0, 32, plan), 0, plan)
        for j in range(flow.n_steps):
            mu_j = EmpiricalMeasure(ens.states.copy())
            d_w = plan.brownian(Stream.W, j, 32, 2)
            d_wt = plan.brownian(Stream.WTILDE, j, 32, 2)
            ens = euler_maruyama_step(model, ens, d_w, d_wt, measure=mu_j)
        assert np.array_equal(ens.states, flow.measure_at(flow.n_steps).points)

    def test_determinism(self):
        model = get_preset("mean-repelled")
        law0 = GaussianLaw(np.zeros(2), 0.09 * np.eye(2))
        a = simulate_law_flow(model, law0, 0.3, 0.01, 64, seed=5)
        b = simulate_law_flow(model, law0, 0.3, 0.01, 64, seed=5)
        assert np.array_equal(a.measure_at(a.n_steps).points,
                              b.measure_at(b.n_steps).points)
        assert np.array_equal(a.xi_path, b.xi_path)

    def test_xi_additivity(self):
        model = get_preset("linear-ou")
        flow = simulate_law_flow(model, np.array([0.4, 0.0]), 0.3, 0.01, 16, seed=6)
        increments = np.diff(flow.xi_path, axis=0)
        resummed = np.vstack([np.zeros(2), np.cumsum(increments, axis=0)])
        assert np.array_equal(resummed, flow.xi_path)

    def test_mc_law_matches_closed_form(self):
        model = get_preset("linear-ou")
        law0 = GaussianLaw(np.array([0.8, -0.4]), 0.09 * np.eye(2))
        flow = simulate_law_flow(model, law0, 1.0, 0.005, 4000, seed=8)
        target = gaussian_law_flow(model, law0, [1.0])[0]
        fit = gaussian_fit(flow.measure_at(flow.n_steps))
        se = np.sqrt(np.trace(fit.cov) / 4000)
        assert np.linalg.norm(fit.mean - target.mean) <= 3 * se + 5.0 * 0.005
        assert np.max(np.abs(fit.cov - target.cov)) <= 0.08


class TestXiGap:
    def test_same_flow_zero(self):
        model = get_preset("linear-ou")
        mu0 = GaussianLaw(np.array([0.3, 0.0]), 0.01 * np.eye(2))
        a = simulate_law_flow(model, mu0, 0.4, 0.01, 32, seed=3)
        b = simulate_law_flow(model, mu0, 0.4, 0.01, 32, seed=3)
        assert xi_gap(a, b) == 0.0

    def test_measure_independent_sigma_zero_gap(self):
        sig = 0.8 * np.eye(2)
        model = toy_model(sigma=sig, drift=lambda t, x, mu: -x, lam=0.5)
        a = simulate_law_flow(model, np.zeros(2), 0.4, 0.01, 32, seed=3)
        b = simulate_law_flow(model, np.ones(2), 0.4, 0.01, 32, seed=3)
        assert xi_gap(a, b) == 0.0

    def test_stream_mismatch(self):
        model = get_preset("linear-ou")
        a = simulate_law_flow(model, np.zeros(2), 0.4, 0.01, 32, seed=3)
        b = simulate_law_flow(model, np.zeros(2), 0.4, 0.01, 32, seed=4)
        with pytest.raises(StreamMismatchError):
            xi_gap(a, b)

    def test_gap_vanishes_with_initial_distance(self):
        # Lipschitz sigma(mu): the mean-square gap scales like W2(mu, nu)^2
        model = get_preset("linear-ou", sigma1=0.45, sigma0=1.0)
        base = np.array([0.5, 0.0])
        gaps, dists = [], []
        for scale in (0.8, 0.4, 0.2, 0.1):
            sq = []
            for rep in range(6):
                a = simulate_law_flow(model, base, 0.5, 0.01, 256, seed=40 + rep)
                b = simulate_law_flow(model, base + np.array([scale, 0.0]),
                                      0.5, 0.01, 256, seed=40 + rep)
                sq.append(xi_gap(a, b) ** 2)
            gaps.append(np.mean(sq))
            dists.append(scale ** 2)
        ratio = np.array(gaps) / np.array(dists)
        assert np.all(np.isfinite(ratio))
        assert gaps == sorted(gaps, reverse=True)
        # fitted constant stays bounded as W2 -> 0
        assert ratio.max() <= 10.0 * ratio.min() + 1e-12


class TestClosedForm:
    def test_frozen_law(self):
        law = linear_closed_form(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)),
                                 0.0, np.array([1.0, 2.0]), 0.25 * np.eye(2), 3.0)
        assert np.allclose(law.mean, [1.0, 2.0])
        assert np.allclose(law.cov, 0.25 * np.eye(2))

    def test_ou_stationary_half_identity(self):
        law = linear_closed_form(-np.eye(2), np.zeros((2, 2)), np.zeros((2, 2)),
                                 1.0, np.array([1.0, 1.0]), np.zeros((2, 2)), 30.0)
        assert np.max(np.abs(law.cov - 0.5 * np.eye(2))) <= 1e-9

    def test_mean_decay_via_coupling_matrix(self):
        law = linear_closed_form(np.zeros((1, 1)), -np.eye(1), np.array([[0.8]]),
                                 0.3, np.array([2.0]), np.zeros((1, 1)), 1.0)
        assert law.mean[0] == pytest.approx(2.0 * np.exp(-1.0), abs=1e-9)
        # refinement oracle: integrating at much higher resolution agrees
        finer = linear_closed_form(np.zeros((1, 1)), -np.eye(1), np.array([[0.8]]),
                                   0.3, np.array([2.0]), np.zeros((1, 1)), 1.0,
                                   tol=1e-13)
        assert abs(law.cov[0, 0] - finer.cov[0, 0]) <= 1e-9

    def test_stationary_gaussian_solves_lyapunov(self):
        model = get_preset("linear-ou")
        law = stationary_gaussian(model)
        lin = model.linear
        sig = lin.sigma_of_mean(law.mean)
        resid = lin.b_mat @ law.cov + law.cov @ lin.b_mat.T \
            + model.lam ** 2 * np.eye(2) + sig @ sig.T
        assert np.max(np.abs(resid)) <= 1e-10


class TestDebugGuards:
    def test_ellipticity_guard_in_debug_mode(self):
        from mvlab.errors import EllipticityViolatedError

        # sigma_tilde dips below lam I: only the debug path checks it
        model = toy_model(sigma=0.1 * np.eye(2), lam=0.5)
        plan = NoisePlan(1, 0.01, 5)
        ens = ParticleEnsemble(np.zeros((4, 2)), 0, plan)
        euler_maruyama_step(model, ens, np.zeros((4, 2)), np.zeros((4, 2)))
        with pytest.raises(EllipticityViolatedError):
            euler_maruyama_step(model, ens, np.zeros((4, 2)), np.zeros((4, 2)),
                                debug=True)

    def test_weak_error_bound_under_h_halving(self):
        model = get_preset("linear-ou")
        law0 = GaussianLaw(np.array([0.8, -0.4]), 0.09 * np.eye(2))
        target = gaussian_law_flow(model, law0, [0.5])[0]
        for h in (0.01, 0.005):
            flow = simulate_law_flow(model, law0, 0.5, h, 3000, seed=21)
            fit = gaussian_fit(flow.measure_at(flow.n_steps))
            se = np.sqrt(np.trace(fit.cov) / 3000)
            assert np.linalg.norm(fit.mean - target.mean) <= 3 * se + 5.0 * h
