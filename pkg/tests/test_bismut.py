import math

import numpy as np
import pytest
import scipy.linalg

from mvlab.bismut import (
    bismut_degenerate,
    bismut_estimate,
    bismut_nondegenerate,
    build_bismut_degenerate,
    build_nm_nondegenerate,
    derivative_rate_probe,
    lions_fd_oracle,
    phi_battery,
    tangent_fd_gap,
    tangent_flow,
)
from mvlab.linalg import matrix_exp
from mvlab.measures import GaussianLaw
from mvlab.models import MeanFieldModel, get_preset
from mvlab.noise import NoisePlan

MU0 = GaussianLaw(np.array([0.8, -0.4]), 0.09 * np.eye(2))
COORD0 = {"f": lambda x: x[:, 0]}


def free_ou_model(beta=1.0, sig=0.8, lam=0.5, dim=2):
    """Distribution-free OU: b = -beta x, constant sigma; all measure
    derivatives vanish, so the weight collapses to the classical form."""
    return MeanFieldModel(
        name="free-ou", dim=dim, noise_dim=dim, lam=lam,
        drift=lambda t, x, mu: -beta * x,
        sigma_tilde=lambda t, mu: sig * np.eye(dim),
        grad_x_drift=lambda t, x, mu, v: -beta * v,
        mean_lions_drift=lambda t, x, mu, ys, vs: np.zeros((x.shape[0], dim)),
        mean_lions_sigma=lambda t, mu, ys, vs: np.zeros((dim, dim)),
    )


class TestTangentFlow:
    def test_zero_phi_stays_zero(self):
        model = get_preset("linear-ou")
        plan = NoisePlan(3, 0.01, 30)
        pts = MU0.transport(plan.gauss(0, 0, (32, 2)))
        run = tangent_flow(model, pts, lambda x: np.zeros_like(x), plan)
        assert np.all(run.tangents == 0.0)
        assert np.all(run.h_path == 0.0)

    def test_initial_tangent_is_phi(self):
        model = get_preset("linear-ou")
        plan = NoisePlan(3, 0.01, 5)
        pts = MU0.transport(plan.gauss(0, 0, (16, 2)))
        phi = phi_battery(2)["contraction"]
        run = tangent_flow(model, pts, phi, plan)
        assert np.array_equal(run.tangents[0], phi(pts))

    def test_distribution_free_linear_tangent(self):
        # v_t = e^{Bt} phi(x_0) exactly in the continuous limit
        model = free_ou_model(beta=1.3)
        h = 0.001
        plan = NoisePlan(5, h, 1000)
        pts = np.random.default_rng(0).normal(size=(8, 2))
        phi = phi_battery(2)["contraction"]
        run = tangent_flow(model, pts, phi, plan)
        target = phi(pts) @ matrix_exp(-1.3 * np.eye(2), 1.0).T
        assert np.max(np.abs(run.tangents[-1] - target)) <= 5e-3  # O(h)

    def test_linearity_in_phi(self):
        model = get_preset("mean-repelled")
        plan = NoisePlan(7, 0.01, 40)
        pts = MU0.transport(plan.gauss(0, 0, (64, 2)))
        bat = phi_battery(2)
        run1 = tangent_flow(model, pts, bat["constant"], plan)
        run2 = tangent_flow(model, pts, bat["contraction"], plan)
        combo = tangent_flow(
            model, pts, lambda x: 0.7 * bat["constant"](x) - 1.2 * bat["contraction"](x),
            plan)
        mix = 0.7 * run1.tangents - 1.2 * run2.tangents
        assert np.max(np.abs(combo.tangents - mix)) <= 1e-9

    def test_fd_gap_halves_with_eps(self):
        model = get_preset("mean-repelled")
        plan = NoisePlan(11, 0.01, 50)
        pts = MU0.transport(plan.gauss(0, 0, (128, 2)))
        phi = phi_battery(2)["contraction"]
        gaps = [tangent_fd_gap(model, pts, phi, eps, 0.01, 50, seed=11)
                for eps in (1e-2, 5e-3, 2.5e-3)]
        assert gaps[0] / gaps[1] == pytest.approx(2.0, abs=0.3)
        assert gaps[1] / gaps[2] == pytest.approx(2.0, abs=0.3)


class TestWeightProcesses:
    def test_distribution_free_reduction(self):
        # with both measure kernels absent: N = ((t-s)/t) phi(X0), M = phi(X0)/t
        model = free_ou_model()
        plan = NoisePlan(13, 0.01, 20)
        pts = np.random.default_rng(1).normal(size=(16, 2))
        phi = phi_battery(2)["constant"]
        run = tangent_flow(model, pts, phi, plan)
        n_proc, m_proc = build_nm_nondegenerate(model, run, 20)
        t_hor = 0.2
        phi0 = phi(pts)
        for j in (0, 7, 19):
            s = j * 0.01
            assert np.allclose(n_proc[j], ((t_hor - s) / t_hor) * phi0)
            assert np.allclose(m_proc[j], phi0 / t_hor)
        assert np.allclose(n_proc[0], phi0)  # s = 0 endpoint

    def test_degenerate_gramian_cancellation(self):
        # gamma = 0: N2_{t,t} vanishes identically and N1_{t,t} collapses
        # through Q_t Q_t^{-1} up to quadrature error
        model = get_preset("kinetic-langevin", sigma1=0.0)
        st = model.structure
        h = 0.002
        j0 = 400
        plan = NoisePlan(17, h, j0)
        pts = GaussianLaw(np.array([0.4, 0.0, -0.2]), 0.04 * np.eye(3)).transport(
            plan.gauss(0, 0, (8, 3)))

        def phi(x):
            return np.tile([1.0, -0.5, 0.3], (x.shape[0], 1))

        run = tangent_flow(model, pts, phi, plan)
        proc = build_bismut_degenerate(model, run, j0)
        assert np.max(np.abs(proc.gamma)) == 0.0
        n2_end = proc.alpha[j0] + run.tangents[0][:, 2:]
        assert np.max(np.abs(n2_end)) <= 1e-12
        e_plus = matrix_exp(st.a, h)
        epm = e_plus @ st.m_mat
        n2_full = proc.alpha + run.tangents[0][:, 2:][None] + proc.gamma
        n1 = run.tangents[0][:, :2].copy()
        for j in range(j0):
            n1 = n1 @ e_plus.T + 0.5 * h * (n2_full[j] @ epm.T + n2_full[j + 1] @ st.m_mat.T)
        assert np.max(np.abs(n1)) <= 1e-4

    def test_scalar_structure_alpha_closed_form(self):
        # A = 0, M = 1, phi = (1, 0), gamma = 0: Q_t = t/6 and
        # alpha(s) = -(s(t-s)/t^2)(6/t)
        model = get_preset("kinetic-underdamped", sigma1=0.0)
        h = 0.002
        j0 = 350
        t_hor = j0 * h
        plan = NoisePlan(19, h, j0)
        pts = GaussianLaw(np.zeros(2), 0.04 * np.eye(2)).transport(
            plan.gauss(0, 0, (8, 2)))

        def phi(x):
            out = np.zeros_like(x)
            out[:, 0] = 1.0
            return out

        run = tangent_flow(model, pts, phi, plan)
        proc = build_bismut_degenerate(model, run, j0)
        times = np.arange(j0 + 1) * h
        expected = -(times * (t_hor - times) / t_hor ** 2) * (6.0 / t_hor)
        assert np.max(np.abs(proc.alpha[:, 0, 0] - expected)) <= 1e-6


class TestEstimators:
    def test_phi_zero_gives_zero(self):
        model = get_preset("linear-ou")
        est = bismut_nondegenerate(model, MU0, lambda x: np.zeros_like(x),
                                   COORD0["f"], 0.5, 256, 3, seed=23, h=0.01)
        assert est.value == 0.0

    def test_constant_payoff_zero_mean(self):
        model = get_preset("linear-ou")
        est = bismut_nondegenerate(model, MU0, phi_battery(2)["constant"],
                                   lambda x: np.ones(x.shape[0]), 0.5,
                                   1000, 8, seed=29, h=0.01)
        assert abs(est.value) <= 3.0 * est.std_error

    def test_linear_model_analytic_reference(self):
        model = get_preset("linear-ou")
        lin = model.linear
        drift_full = lin.b_mat + lin.c_mat
        for phi_name, phibar in (("constant", np.array([1.0, 0.0])),
                                 ("contraction", -MU0.mean)):
            res = bismut_estimate(model, MU0, phi_battery(2)[phi_name], COORD0,
                                  [0.5, 1.0], 2000, 5, seed=31, h=0.01)
            for t in (0.5, 1.0):
                exact = float((scipy.linalg.expm(drift_full * t) @ phibar)[0])
                est = res[(t, "f")]
                assert est.agrees_with(exact, 0.0, rel_tol=0.05), \
                    f"{phi_name} t={t}: {est.value} vs {exact}"

    def test_estimator_linearity_in_phi(self):
        model = get_preset("linear-ou")
        bat = phi_battery(2)
        one = bismut_nondegenerate(model, MU0, bat["constant"], COORD0["f"],
                                   0.5, 1000, 4, seed=37, h=0.01)
        three = bismut_nondegenerate(model, MU0, lambda x: 3.0 * bat["constant"](x),
                                     COORD0["f"], 0.5, 1000, 4, seed=37, h=0.01)
        assert three.value == pytest.approx(3.0 * one.value, rel=1e-9)

    def test_distribution_free_reduction_vs_fd(self):
        model = free_ou_model()
        mu0 = GaussianLaw(np.array([0.5, 0.5]), 0.04 * np.eye(2))
        phi = phi_battery(2)["constant"]
        est = bismut_nondegenerate(model, mu0, phi, COORD0["f"], 0.5, 2000, 5,
                                   seed=41, h=0.005)
        oracle = lions_fd_oracle(model, mu0, phi, COORD0, [0.5], eps=5e-3,
                                 seed=43, h=0.005, n_particles=2000)[(0.5, "f")]
        # classical derivative: e^{-beta t} in the first coordinate
        exact = math.exp(-0.5)
        assert est.agrees_with(exact, 0.0, rel_tol=0.05)
        assert est.agrees_with(oracle.value, oracle.std_error, rel_tol=0.05)

    def test_degenerate_vs_fd(self):
        model = get_preset("kinetic-langevin", lam=1.0, sigma0=1.3)
        mu0 = GaussianLaw(np.array([0.4, 0.0, -0.2]), 0.04 * np.eye(3))

        def phi(x):
            out = np.zeros_like(x)
            out[:, 2] = 1.0
            return out

        fs = {"f": lambda x: x[:, 0]}
        est = bismut_degenerate(model, mu0, phi, fs["f"], 1.0, 1000, 5,
                                seed=47, h=0.005)
        oracle = lions_fd_oracle(model, mu0, phi, fs, [1.0], eps=5e-3, seed=53,
                                 h=0.005, n_particles=1000)[(1.0, "f")]
        assert est.agrees_with(oracle.value, oracle.std_error, rel_tol=0.07)

    def test_dispatch_guards(self):
        with pytest.raises(ValueError):
            bismut_degenerate(get_preset("linear-ou"), MU0, phi_battery(2)["constant"],
                              COORD0["f"], 0.5, 64, 2, seed=1, h=0.01)
        with pytest.raises(ValueError):
            bismut_nondegenerate(get_preset("kinetic-langevin"), MU0,
                                 phi_battery(3)["constant"], COORD0["f"],
                                 0.5, 64, 2, seed=1, h=0.01)


class TestFDOracle:
    def test_zero_phi(self):
        model = get_preset("linear-ou")
        out = lions_fd_oracle(model, MU0, lambda x: np.zeros_like(x), COORD0,
                              [0.5], eps=1e-2, seed=3, h=0.01, n_particles=128)
        assert out[(0.5, "f")].value == 0.0

    def test_linear_payoff_quotient_eps_independent(self):
        # linear model + linear f: the quotient is O(eps)-flat in eps
        model = get_preset("linear-ou")
        vals = [lions_fd_oracle(model, MU0, phi_battery(2)["constant"], COORD0,
                                [0.5], eps=e, seed=5, h=0.01,
                                n_particles=512)[(0.5, "f")].value
                for e in (1e-2, 5e-3)]
        assert vals[0] == pytest.approx(vals[1], abs=5e-4)

    def test_eps_halving_is_cauchy(self):
        model = get_preset("mean-repelled")
        quotients = [lions_fd_oracle(model, MU0, phi_battery(2)["contraction"],
                                     COORD0, [0.5], eps=e, seed=7, h=0.01,
                                     n_particles=1024)[(0.5, "f")].value
                     for e in (2e-2, 1e-2, 5e-3)]
        gap1 = abs(quotients[0] - quotients[1])
        gap2 = abs(quotients[1] - quotients[2])
        assert gap2 <= 0.75 * gap1  # O(eps) convergence

    def test_richardson_reduces_eps_error(self):
        model = get_preset("mean-repelled")
        plain = lions_fd_oracle(model, MU0, phi_battery(2)["contraction"], COORD0,
                                [0.5], eps=4e-2, seed=9, h=0.01,
                                n_particles=1024)[(0.5, "f")].value
        rich = lions_fd_oracle(model, MU0, phi_battery(2)["contraction"], COORD0,
                               [0.5], eps=4e-2, seed=9, h=0.01, n_particles=1024,
                               richardson=True)[(0.5, "f")].value
        tiny = lions_fd_oracle(model, MU0, phi_battery(2)["contraction"], COORD0,
                               [0.5], eps=1e-3, seed=9, h=0.01,
                               n_particles=1024)[(0.5, "f")].value
        assert abs(rich - tiny) <= abs(plain - tiny)


class TestRateProbe:
    def test_nondegenerate_weight_slope(self):
        model = get_preset("linear-ou")
        grid = np.geomspace(0.125, 1.0, 5)
        probe = derivative_rate_probe(model, MU0, phi_battery(2)["constant"],
                                      COORD0["f"], grid, 1000, 4, seed=59, h=0.0125)
        assert probe.passed
        assert probe.weight_slope == pytest.approx(-0.5, abs=0.2)

    def test_degenerate_weight_slope_floor(self):
        model = get_preset("kinetic-langevin", lam=1.0, sigma0=1.3)
        mu0 = GaussianLaw(np.array([0.4, 0.0, -0.2]), 0.04 * np.eye(3))

        def phi(x):
            out = np.zeros_like(x)
            out[:, 2] = 1.0
            return out

        grid = np.geomspace(0.25, 1.0, 4)
        probe = derivative_rate_probe(model, mu0, phi, lambda x: x[:, 0],
                                      grid, 800, 4, seed=61, h=0.0125)
        assert probe.weight_slope_floor == -(2 * 2 - 0.5) - 0.3
        assert probe.passed
