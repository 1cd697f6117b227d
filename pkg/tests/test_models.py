import numpy as np
import pytest

from mvlab.errors import ParameterOutOfRangeError
from mvlab.measures import EmpiricalMeasure
from mvlab.models import PRESETS, get_preset, list_presets, validate_model


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_preset_oracles_validate(name):
    worst = validate_model(get_preset(name), n_probes=10, seed=3)
    assert worst["sigma_margin"] >= -1e-10, "sigma_tilde must dominate lam I"
    assert worst["lipschitz_excess"] <= 1e-9
    assert worst["grad_fd_gap"] <= 1e-6
    assert worst["lions_drift_fd_gap"] <= 1e-5
    assert worst["lions_sigma_fd_gap"] <= 1e-5


def test_catalogue_contents():
    infos = {info.name: info for info in list_presets()}
    assert "linear-ou" in infos
    assert infos["kinetic-langevin"].l == 2
    assert infos["kinetic-underdamped"].l == 1
    under = infos["kinetic-underdamped"]
    assert under.theta2 > under.theta1 >= 0
    assert 0 < under.c0 < 1
    assert abs(under.r0) < 1.0


def test_catalogue_stable_ordering():
    first = [info.name for info in list_presets()]
    second = [info.name for info in list_presets()]
    assert first == second == sorted(first)


def test_linear_ou_constants():
    info = get_preset("linear-ou").info
    beta, eps0, sigma1 = (info.params[k] for k in ("beta", "eps0", "sigma1"))
    assert info.theta2 == pytest.approx(2 * beta - eps0)
    assert info.theta1 == pytest.approx(eps0 + info.dim * sigma1 ** 2)
    assert info.theta > 0


def test_degenerate_block_conventions():
    model = get_preset("kinetic-langevin")
    assert model.dim == 3 and model.noise_dim == 1 and model.m_split == 2
    mu = EmpiricalMeasure(np.zeros((4, 3)))
    x = np.array([[1.0, 2.0, 3.0]])
    b = model.drift(0.0, x, mu)
    p = model.info.params
    assert b.shape == (1, 1)
    assert b[0, 0] == pytest.approx(-p["a"] * 1.0 - p["bf"] * 2.0 - p["cf"] * 3.0)


def test_ellipticity_guard_on_construction():
    with pytest.raises(ParameterOutOfRangeError):
        get_preset("linear-ou", sigma0=0.6, sigma1=0.3, lam=0.5)


def test_preset_overrides():
    model = get_preset("linear-ou", beta=2.0)
    assert model.info.params["beta"] == 2.0
    assert model.info.theta2 == pytest.approx(2 * 2.0 - 0.25)
