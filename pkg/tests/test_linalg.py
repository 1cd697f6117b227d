import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mvlab.errors import (
    EllipticityViolatedError,
    NegativeEigenvalueError,
    NotSymmetricError,
    SingularGramianError,
)
from mvlab.linalg import (
    HamiltonianStructure,
    decompose_noise,
    gramian,
    gramian_inverse_norm,
    gramian_inverse_norm_slope,
    kalman_rank_index,
    matrix_exp,
    psd_sqrt,
    symmetrize,
)

CHAIN_A = np.array([[0.0, 1.0], [0.0, 0.0]])
CHAIN_M = np.array([[0.0], [1.0]])


def random_psd(rng, n, scale=1.0):
    g = rng.normal(size=(n, n))
    return symmetrize(scale * g @ g.T)


class TestPsdSqrt:
    def test_identity(self):
        assert np.allclose(psd_sqrt(np.eye(2)), np.eye(2))

    def test_diagonal(self):
        assert np.allclose(psd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))

    def test_multiply_back(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = random_psd(rng, rng.integers(1, 9))
            r = psd_sqrt(a)
            assert np.max(np.abs(r @ r - a)) <= 1e-10 * max(1.0, np.max(np.abs(a)))

    def test_idempotence(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            r = psd_sqrt(random_psd(rng, rng.integers(1, 9)))
            assert np.max(np.abs(psd_sqrt(r @ r) - r)) <= 1e-9

    def test_rejects_asymmetric(self):
        with pytest.raises(NotSymmetricError):
            psd_sqrt(np.array([[1.0, 0.1], [0.0, 1.0]]))

    def test_rejects_negative(self):
        with pytest.raises(NegativeEigenvalueError):
            psd_sqrt(np.diag([1.0, -1e-6]))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 10 ** 6))
    def test_multiply_back_property(self, n, seed):
        a = random_psd(np.random.default_rng(seed), n)
        r = psd_sqrt(a)
        assert np.max(np.abs(r @ r - a)) <= 1e-10 * max(1.0, np.max(np.abs(a)))


class TestDecomposeNoise:
    def test_scalar_case(self):
        assert np.allclose(decompose_noise(4.0 * np.eye(2), 1.0),
                           np.sqrt(3.0) * np.eye(2))

    def test_boundary(self):
        assert np.allclose(decompose_noise(np.eye(3), 1.0), np.zeros((3, 3)))

    def test_diagonal(self):
        assert np.allclose(decompose_noise(np.diag([2.0, 5.0]), 1.0),
                           np.diag([1.0, 2.0]))

    def test_round_trip(self):
        rng = np.random.default_rng(2)
        lam = 0.7
        for _ in range(20):
            n = rng.integers(1, 9)
            base = random_psd(rng, n)
            a = symmetrize(base + 2 * lam ** 2 * np.eye(n))
            sig = decompose_noise(a, lam)
            assert np.max(np.abs(sig @ sig + lam ** 2 * np.eye(n) - a)) <= 1e-9
            # margin: remainder dominates lam I when a >= 2 lam^2 I
            assert np.linalg.eigvalsh(sig)[0] >= lam - 1e-10

    def test_ellipticity_violation(self):
        with pytest.raises(EllipticityViolatedError):
            decompose_noise(0.5 * np.eye(2), 1.0)


class TestMatrixExp:
    def test_zero(self):
        assert np.allclose(matrix_exp(np.zeros((3, 3))), np.eye(3))

    def test_nilpotent_series(self):
        for t in (0.3, 1.7, -2.0):
            assert np.allclose(matrix_exp(CHAIN_A, t), np.eye(2) + t * CHAIN_A,
                               atol=1e-14)

    def test_inverse_identity(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            a = rng.normal(size=(4, 4))
            t = rng.uniform(0.1, 2.0)
            assert np.max(np.abs(matrix_exp(a, t) @ matrix_exp(a, -t) - np.eye(4))) <= 1e-10

    def test_group_law(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            a = rng.normal(size=(3, 3))
            a *= 2.0 / max(np.linalg.norm(a, 2), 2.0)
            s, t = rng.uniform(0.1, 1.5, size=2)
            lhs = matrix_exp(a, s + t)
            rhs = matrix_exp(a, s) @ matrix_exp(a, t)
            assert np.max(np.abs(lhs - rhs)) <= 1e-9


class TestKalmanRank:
    def test_full_row_rank(self):
        assert kalman_rank_index(np.zeros((2, 2)), np.eye(2)) == 1

    def test_chain(self):
        assert kalman_rank_index(CHAIN_A, CHAIN_M) == 2

    def test_uncontrollable(self):
        assert kalman_rank_index(np.zeros((2, 2)), np.zeros((2, 1))) is None

    def test_structure_minimality(self):
        st_pair = HamiltonianStructure(CHAIN_A, CHAIN_M)
        assert st_pair.l == 2 and st_pair.m == 2 and st_pair.d == 1
        with pytest.raises(SingularGramianError):
            HamiltonianStructure(np.zeros((2, 2)), np.zeros((2, 1)))


def chain_gramian_exact(t):
    return np.array([[t ** 3 / 20.0, -(t ** 2) / 12.0],
                     [-(t ** 2) / 12.0, t / 6.0]])


class TestGramian:
    def test_scalar_closed_form(self):
        for t in (0.25, 1.0, 2.0):
            q = gramian(np.zeros((1, 1)), np.eye(1), t)
            assert abs(q[0, 0] - t / 6.0) <= 1e-12

    def test_zero_m(self):
        assert np.allclose(gramian(CHAIN_A, np.zeros((2, 1)), 1.0), 0.0)

    def test_chain_vs_high_res_trapezoid(self):
        # oracle: 10^6-node trapezoid using the exact nilpotent exponential
        t = 1.0
        s = np.linspace(0.0, t, 10 ** 6 + 1)
        w = s * (t - s) / t ** 2
        # e^{-sA} M = (-s, 1)^T for the chain
        q11 = np.trapezoid(w * s ** 2, s)
        q12 = np.trapezoid(-w * s, s)
        q22 = np.trapezoid(w, s)
        oracle = np.array([[q11, q12], [q12, q22]])
        assert np.max(np.abs(gramian(CHAIN_A, CHAIN_M, t) - oracle)) <= 1e-8
        assert np.max(np.abs(oracle - chain_gramian_exact(t))) <= 1e-8

    def test_symmetry_and_psd(self):
        rng = np.random.default_rng(5)
        for _ in range(8):
            a = rng.normal(size=(3, 3))
            m = rng.normal(size=(3, 2))
            q = gramian(a, m, 0.8)
            assert np.array_equal(q, q.T)
            assert np.linalg.eigvalsh(q)[0] >= -1e-12

    def test_positive_definite_iff_controllable(self):
        q = gramian(CHAIN_A, CHAIN_M, 0.5)
        assert np.linalg.eigvalsh(q)[0] > 0
        q_bad = gramian(np.zeros((2, 2)), np.array([[1.0], [0.0]]), 0.5)
        assert np.linalg.eigvalsh(q_bad)[0] <= 1e-14
        assert kalman_rank_index(np.zeros((2, 2)), np.array([[1.0], [0.0]])) is None


class TestGramianSlope:
    grid = np.array([2.0 ** -k for k in range(1, 9)])

    def test_scalar_family_exact(self):
        rep = gramian_inverse_norm_slope(np.zeros((2, 2)), np.eye(2), 1, self.grid)
        assert np.max(np.abs(rep.inv_norms - 6.0 / self.grid)) <= 1e-8
        assert abs(rep.slope + 1.0) <= 1e-6

    def test_chain_slope(self):
        rep = gramian_inverse_norm_slope(CHAIN_A, CHAIN_M, 2, self.grid)
        assert abs(rep.slope + 3.0) <= 0.1
        assert rep.slope >= 1 - 2 * 2 - 0.1

    def test_rescaling_m_keeps_slope(self):
        rep1 = gramian_inverse_norm_slope(CHAIN_A, CHAIN_M, 2, self.grid)
        rep2 = gramian_inverse_norm_slope(CHAIN_A, 2.0 * CHAIN_M, 2, self.grid)
        assert abs(rep1.slope - rep2.slope) <= 1e-6

    def test_uncontrollable_raises(self):
        with pytest.raises(SingularGramianError):
            gramian_inverse_norm_slope(np.zeros((2, 2)), np.zeros((2, 1)), 2, self.grid)

    def test_inverse_norm_requires_pd(self):
        with pytest.raises(SingularGramianError):
            gramian_inverse_norm(np.zeros((2, 2)), np.array([[1.0], [0.0]]), 0.5)
