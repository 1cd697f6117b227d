import numpy as np
import pytest

from mvlab.noise import NoisePlan, Stream


class TestNoisePlan:
    plan = NoisePlan(seed=123, h=0.01, n_steps=50)

    def test_replay(self):
        a = self.plan.brownian(Stream.W, 3, 16, 2)
        b = NoisePlan(123, 0.01, 50).brownian(Stream.W, 3, 16, 2)
        assert np.array_equal(a, b)

    def test_row_purity_in_block_size(self):
        # particle i's increment must not depend on how many rows are drawn
        big = self.plan.brownian(Stream.W, 7, 64, 3)
        small = self.plan.brownian(Stream.W, 7, 5, 3)
        assert np.array_equal(big[:5], small)

    def test_streams_differ(self):
        a = self.plan.brownian(Stream.W, 0, 8, 2)
        b = self.plan.brownian(Stream.WTILDE, 0, 8, 2)
        c = self.plan.brownian(Stream.W, 1, 8, 2)
        d = self.plan.brownian(Stream.W, 0, 8, 2, subid=1)
        assert not np.array_equal(a, b)
        assert not np.array_equal(a, c)
        assert not np.array_equal(a, d)

    def test_variance_scaling(self):
        draws = np.concatenate([self.plan.brownian(Stream.W, j, 4000, 2).ravel()
                                for j in range(5)])
        assert abs(draws.mean()) <= 0.005
        assert abs(draws.var() - self.plan.h) <= 0.002

    def test_horizon_and_restriction(self):
        assert self.plan.horizon == pytest.approx(0.5)
        sub = self.plan.restricted(10)
        assert np.array_equal(sub.brownian(Stream.W, 2, 4, 2),
                              self.plan.brownian(Stream.W, 2, 4, 2))
        with pytest.raises(ValueError):
            self.plan.restricted(51)

    def test_path_shape(self):
        path = self.plan.brownian_path(Stream.COUPLING_W, rows=3, dim=2, n_steps=7)
        assert path.shape == (7, 3, 2)
        assert np.array_equal(path[4], self.plan.brownian(Stream.COUPLING_W, 4, 3, 2))
