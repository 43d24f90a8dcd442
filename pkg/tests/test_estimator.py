import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fvheat.estimator import FVEHeatSolver
from fvheat.exceptions import InvalidParameterError
from fvheat.mesh import generate_uniform_symmetric
from fvheat.operators import FVESystem
from fvheat.timestepping import Propagator, TimeGrid, backward_euler

MESH = generate_uniform_symmetric(8)


def test_params_roundtrip():
    est = FVEHeatSolver(t=0.2, scheme="cn", k=0.05)
    params = est.get_params()
    assert params["scheme"] == "cn" and params["k"] == 0.05
    copy = clone(est)
    assert copy.get_params() == params
    est.set_params(scheme="be")
    assert est.scheme == "be"


def test_transform_matches_functional_api():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((3, MESH.n_dofs))
    sysm = FVESystem(MESH)
    be = FVEHeatSolver(t=0.1, scheme="be", k=0.01).fit(MESH).transform(X)
    for row, out in zip(X, be):
        assert np.allclose(out, backward_euler(sysm, row, TimeGrid.reaching(0.1, 0.01)))
    sd = FVEHeatSolver(t=0.1).fit(MESH)
    out = sd.transform(X[:1])
    assert np.allclose(out[0], Propagator(sysm).propagate(X[0], 0.1))
    assert sd.score(X[:1], out) == pytest.approx(0.0, abs=1e-15)


def test_validation():
    with pytest.raises(NotFittedError):
        FVEHeatSolver().transform(np.ones((1, MESH.n_dofs)))
    with pytest.raises(InvalidParameterError):
        FVEHeatSolver(scheme="rk4").fit(MESH)
    with pytest.raises(InvalidParameterError):
        FVEHeatSolver(scheme="be").fit(MESH)
    with pytest.raises(InvalidParameterError):
        FVEHeatSolver().fit(np.ones((3, 3)))
    est = FVEHeatSolver().fit(MESH)
    with pytest.raises(InvalidParameterError):
        est.transform(np.ones((1, MESH.n_dofs + 1)))
    with pytest.raises(ValueError):
        est.transform(np.full((1, MESH.n_dofs), np.nan))


def test_general_operator():
    est = FVEHeatSolver(alpha=lambda x, y: 1 + x, beta=lambda x, y: 1 + 0 * x).fit(MESH)
    assert est.system_.generalized
    plain = FVEHeatSolver().fit(MESH)
    X = np.ones((1, MESH.n_dofs))
    # extra diffusion and reaction dissipate faster
    assert np.linalg.norm(est.transform(X)) < np.linalg.norm(plain.transform(X))
