import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fvheat.analysis import ManufacturedProblem
from fvheat.exceptions import InvalidParameterError, NumericalError
from fvheat.mesh import generate_almost_symmetric, generate_uniform_symmetric
from fvheat.operators import FVESystem, eigendecompose
from fvheat.timestepping import (Propagator, TimeGrid, backward_euler, be_factor, cn_factor,
                                 crank_nicolson, propagate)


@pytest.fixture(scope="module")
def sys16():
    s = FVESystem(generate_almost_symmetric(16, 1.0, seed=3))
    return s, eigendecompose(s)


def test_time_grid():
    g = TimeGrid.reaching(0.5, 1 / 80)
    assert g.steps == 40 and g.final_time == pytest.approx(0.5, abs=1e-14)
    with pytest.raises(InvalidParameterError):
        TimeGrid.reaching(0.1, 0.03)
    with pytest.raises(InvalidParameterError):
        TimeGrid(-1.0, 3)
    with pytest.raises(InvalidParameterError):
        TimeGrid(0.1, 2.5)


def test_modal_factors(sys16):
    s, dec = sys16
    k = 0.013
    for j in (0, 5, 50, dec.count - 1):
        phi, lam = dec.vectors[:, j], dec.values[j]
        u = backward_euler(s, phi, TimeGrid(k, 1))
        assert np.abs(u - be_factor(k, lam) * phi).max() <= 1e-10 * np.abs(phi).max()
        u = crank_nicolson(s, phi, TimeGrid(k, 1))
        assert np.abs(u - cn_factor(k, lam) * phi).max() <= 1e-10 * np.abs(phi).max()


def test_be_started_cn_modal(sys16):
    s, dec = sys16
    k, lam, phi = 0.01, dec.values[7], dec.vectors[:, 7]
    u = crank_nicolson(s, phi, TimeGrid(k, 5), be_start_steps=2)
    expected = be_factor(k, lam) ** 2 * cn_factor(k, lam) ** 3
    assert np.abs(u - expected * phi).max() <= 1e-10


def test_propagate_identity_and_mode(sys16):
    s, dec = sys16
    v = np.random.default_rng(0).standard_normal(s.n_dofs)
    assert np.array_equal(propagate(s, v, 0.0), v)
    phi = dec.vectors[:, 0]
    u = propagate(s, phi, 0.1, method="eigen")
    assert np.abs(u - np.exp(-0.1 * dec.values[0]) * phi).max() <= 1e-10
    with pytest.raises(InvalidParameterError):
        propagate(s, v, -1.0)


@pytest.mark.parametrize("N", [8, 16, 32])
def test_substep_matches_eigen(N):
    s = FVESystem(generate_uniform_symmetric(N))
    v = np.random.default_rng(N).standard_normal(s.n_dofs)
    a = Propagator(s, "eigen").propagate(v, 0.1)
    b = Propagator(s, "substep", tol=1e-8).propagate(v, 0.1)
    assert s.l2_norm(a - b) <= 5e-8 * s.l2_norm(a)


def test_partial_eigen_matches_dense():
    s = FVESystem(generate_uniform_symmetric(48))
    assert s.n_dofs > 1600
    v = np.random.default_rng(1).standard_normal(s.n_dofs)
    p = Propagator(s, "eigen", tol=1e-8)
    a = p.propagate(v, 0.1)
    assert p.last_method == "eigen"
    # reference: complete dense decomposition
    b = Propagator(s, "eigen", dense_max=10 ** 6).propagate(v, 0.1)
    assert s.l2_norm(a - b) <= 1e-8 * s.l2_norm(b)


def test_auto_falls_back_with_notice(caplog):
    s = FVESystem(generate_uniform_symmetric(48))
    v = np.random.default_rng(2).standard_normal(s.n_dofs)
    p = Propagator(s, "auto", tol=1e-6, max_modes=32)
    with caplog.at_level(logging.INFO, logger="fvheat.timestepping"):
        p.propagate(v, 0.001)
    assert p.last_method == "substep"
    assert any("substepping" in r.message for r in caplog.records)


def test_substep_failure_raises():
    s = FVESystem(generate_uniform_symmetric(8))
    v = np.random.default_rng(3).standard_normal(s.n_dofs)
    with pytest.raises(NumericalError):
        Propagator(s, "substep", tol=1e-14, max_halvings=1).propagate(v, 0.1)


def test_smoothing_estimates(sys16):
    s, _ = sys16
    rng = np.random.default_rng(4)
    ratios = []
    for _ in range(5):
        v = rng.standard_normal(s.n_dofs)
        for t in (0.01, 0.1, 1.0):
            u = propagate(s, v, t)
            assert s.l2_norm(u) <= 1.5 * s.l2_norm(v)
            ratios.append(np.sqrt(t) * s.h1_seminorm(u) / s.l2_norm(v))
    assert max(ratios) < 2.0


@settings(max_examples=10, deadline=None)
@given(k=st.sampled_from([0.5, 0.1, 0.01, 0.001]), seed=st.integers(0, 1000),
       be=st.sampled_from([0, 2]))
def test_unconditional_stability(k, seed, be):
    s = FVESystem(generate_almost_symmetric(8, 1.0, seed=seed % 7))
    v = np.random.default_rng(seed).standard_normal(s.n_dofs)
    traj = backward_euler(s, v, TimeGrid(k, 6), trajectory=True)
    fv = [s.fv_norm(u) for u in traj]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(fv, fv[1:]))
    assert s.l2_norm(traj[-1]) <= s.l2_norm(v)
    u = crank_nicolson(s, v, TimeGrid(k, 6), be_start_steps=be)
    assert s.fv_norm(u) <= s.fv_norm(v) * (1 + 1e-12)


def test_bad_be_start():
    s = FVESystem(generate_uniform_symmetric(4))
    with pytest.raises(InvalidParameterError):
        crank_nicolson(s, np.ones(s.n_dofs), TimeGrid(0.1, 2), be_start_steps=1)


def test_generalized_path_uses_operator():
    m = generate_uniform_symmetric(8)
    s = FVESystem(m, ManufacturedProblem().coefficients)
    dec = eigendecompose(s)
    phi, lam = dec.vectors[:, 0], dec.values[0]
    u = backward_euler(s, phi, TimeGrid(0.01, 1))
    assert np.abs(u - be_factor(0.01, lam) * phi).max() < 1e-10
    # first generalized eigenvalue is close to mu = 2 pi^2 (1 + c) + 1
    assert abs(lam - ManufacturedProblem().mu) / lam < 0.1
