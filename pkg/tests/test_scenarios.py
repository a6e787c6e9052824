import json

import numpy as np
import pytest

from lpfs.errors import ScenarioError
from lpfs.propagator import monodromy
from lpfs.scenarios import (SCENARIOS, HeatSpec, counterexample_h1state, fd_laplacian, heat_1d,
                            laplacian_eigenvalues, random_periodic, random_subspace, scenario,
                            sine_mode, switching_scalar, write_scenarios)
from lpfs.spectral import split
from lpfs.system import load_scenario


def _moduli(s):
    return np.sort(np.abs(split(monodromy(s)).multipliers))[::-1]


def test_galerkin_free_heat_multipliers():
    s = heat_1d(HeatSpec(size=4, period=0.1))
    want = np.exp(-laplacian_eigenvalues(np.arange(1, 5)) * 0.1)
    assert np.allclose(_moduli(s), want, rtol=1e-9)


def test_fd_laplacian_sine_modes_are_eigenvectors():
    m = 31
    L = fd_laplacian(m)
    x = np.arange(1, m + 1) / (m + 1)
    dx = 1.0 / (m + 1)
    for k in (1, 2, 7):
        v = sine_mode(k, x)
        th = k * np.pi * dx
        lam = (-2 * np.cos(2 * th) + 32 * np.cos(th) - 30) / (12 * dx * dx)
        assert np.allclose(L @ v, lam * v, atol=1e-8 * abs(lam))
    # fourth-order accuracy of the leading eigenvalue
    e1 = [abs(np.max(np.linalg.eigvalsh(fd_laplacian(n))) + np.pi**2) for n in (15, 31)]
    assert 12 < e1[0] / e1[1] < 20


@pytest.mark.parametrize("c", [1.5 * np.pi**2, 3.5 * np.pi**2])
def test_shift_between_first_two_modes_gives_one_unstable(c):
    s = heat_1d(HeatSpec(size=5, period=0.1, static=-c))
    assert split(monodromy(s)).n0 == 1


def test_fd_agrees_with_galerkin():
    prof = lambda x: 20 * x * (1 - x)
    kw = dict(period=0.1, static=-(4 * np.pi**2 + 5), oscillating=prof)
    a = _moduli(heat_1d(HeatSpec(size=12, **kw)))[:3]
    b = _moduli(heat_1d(HeatSpec(size=64, discretization="finite-difference", **kw)))[:3]
    assert np.all(np.abs(a - b) < 1e-3 * a)


def test_time_varying_potential_callable():
    pot = lambda x, t: -(np.pi**2) * np.ones_like(x) * (1 + np.cos(20 * np.pi * t))
    s = heat_1d(HeatSpec(size=3, period=0.1, potential=pot))
    # mean potential cancels the first eigenvalue exactly
    assert abs(_moduli(s)[0] - 1.0) < 1e-9


def test_rank_one_mode_control():
    s = heat_1d(HeatSpec(size=4, control_kind="rank-one-mode-1"))
    D = s.input(0.0)
    assert np.linalg.matrix_rank(D) == 1 and D[0, 0] == 1.0


def test_indicator_gram_matrix_is_window_inner_products():
    s = heat_1d(HeatSpec(size=3, window=(0.0, 1.0)))
    assert np.allclose(s.input(0.0), np.eye(3), atol=1e-12)


@pytest.mark.parametrize("window", [(0.5, 0.2), (-0.1, 0.5), (0.3, 1.2)])
def test_invalid_window(window):
    with pytest.raises(ScenarioError, match="window"):
        HeatSpec(window=window)


def test_heat_settings_validation():
    with pytest.raises(ScenarioError):
        HeatSpec(discretization="chebyshev")
    with pytest.raises(ScenarioError):
        HeatSpec(size=0)
    with pytest.raises(ScenarioError, match="no grid points"):
        heat_1d(HeatSpec(size=4, discretization="finite-difference", window=(0.01, 0.02)))


def test_heat_label_records_truncation():
    assert "5 modes" in heat_1d(HeatSpec(size=5)).label
    assert "9 interior points" in heat_1d(HeatSpec(size=9, discretization="finite-difference")).label
    assert "modes" in heat_1d(HeatSpec(size=3, label="custom")).label


def test_counterexample_more_modes():
    s = counterexample_h1state(8, 0.1)
    lam = laplacian_eigenvalues(np.arange(1, 9))
    assert np.allclose(_moduli(s), np.exp((lam[1] - lam) * 0.1), rtol=1e-8)
    with pytest.raises(ScenarioError):
        counterexample_h1state(2)


def test_switching_reference_laws():
    s, stepped_k, constant_k = switching_scalar()
    assert stepped_k.provenance == constant_k(1.0).provenance == "prescribed"
    assert constant_k(-3.0).gain([0.2, 1.7])[:, 0, 0].tolist() == [-3.0, -3.0]


def test_random_is_deterministic():
    a = random_periodic(5, 2, 42, 2)
    b = random_periodic(5, 2, 42, 2)
    t = a.grid.nodes
    assert np.array_equal(a.drift.sample(t), b.drift.sample(t))
    assert np.array_equal(a.input.sample(t), b.input.sample(t))


@pytest.mark.parametrize("n_x, n_u, target", [(1, 1, 0), (1, 1, 1), (4, 2, 0), (4, 1, 2), (7, 3, 3), (3, 2, 3)])
def test_random_hits_unstable_target(n_x, n_u, target):
    for seed in range(4):
        assert split(monodromy(random_periodic(n_x, n_u, seed, target))).n0 == target


def test_random_hidden_mode_unreachable():
    s = random_periodic(5, 2, 9, 2, hidden_unstable=1)
    assert split(monodromy(s)).n0 == 2


def test_random_argument_validation():
    with pytest.raises(ScenarioError):
        random_periodic(2, 3, 0)
    with pytest.raises(ScenarioError):
        random_periodic(3, 1, 0, 4)
    with pytest.raises(ScenarioError):
        random_periodic(3, 1, 0, 1, hidden_unstable=2)


def test_random_subspace_dimensions():
    r = np.random.default_rng(0)
    for d in range(4):
        B = random_subspace(3, d, r).matrix(3)
        assert B.shape == (3, d) and np.allclose(B.T @ B, np.eye(d))


def test_registry_and_unknown_name():
    assert {"switching", "heat-counterexample", "heat-interior", "time-invariant"} <= set(SCENARIOS)
    with pytest.raises(ScenarioError, match="unknown scenario"):
        scenario("nope")


def test_write_scenarios(tmp_path):
    paths = write_scenarios(tmp_path, ["switching", "oscillator"], seed=5)
    assert [p.name for p in paths] == ["switching.json", "oscillator.json", "random-seed-5.json"]
    for p in paths:
        json.loads(p.read_text())
        load_scenario(p)
