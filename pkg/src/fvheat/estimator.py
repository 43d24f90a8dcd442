"""Estimator-style wrapper around the heat solver.

``fit`` takes a mesh and assembles the operators; ``transform`` maps rows of
initial nodal data to the discrete solution at the final time.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .analysis import SCHEMES, evolve
from .assembly import CoefficientField
from .exceptions import InvalidParameterError
from .mesh import Mesh
from .operators import FVESystem


class FVEHeatSolver(BaseEstimator):
    """Finite volume element solver for u_t = div(alpha grad u) - beta u.

    Parameters
    ----------
    t : float
        Final time.
    scheme : {"semidiscrete", "be", "cn", "cn-be"}
    k : float, optional
        Time step for the fully discrete schemes; ``t / k`` must be an integer.
    alpha, beta : callable, optional
        Coefficients; the Laplacian when both are None.
    propagator : {"auto", "eigen", "substep"}
        How the semidiscrete solution operator is evaluated.
    tol : float
        Accuracy target for substep propagation.
    """

    def __init__(self, t=0.1, scheme="semidiscrete", k=None, alpha=None, beta=None,
                 propagator="auto", tol=1e-8):
        self.t = t
        self.scheme = scheme
        self.k = k
        self.alpha = alpha
        self.beta = beta
        self.propagator = propagator
        self.tol = tol

    def _validate_params(self):
        if self.scheme not in SCHEMES:
            raise InvalidParameterError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not (np.isfinite(self.t) and self.t >= 0):
            raise InvalidParameterError(f"t must be a nonnegative number, got {self.t!r}")
        if self.scheme != "semidiscrete" and (self.k is None or not self.k > 0):
            raise InvalidParameterError(f"scheme {self.scheme!r} needs a positive step k")

    def fit(self, X, y=None):
        """Assemble on mesh ``X``."""
        if not isinstance(X, Mesh):
            raise InvalidParameterError(f"fit expects a Mesh, got {type(X).__name__}")
        self._validate_params()
        coeffs = None
        if self.alpha is not None or self.beta is not None:
            coeffs = CoefficientField(self.alpha, self.beta)
        self.system_ = FVESystem(X, coeffs)
        self.n_features_in_ = X.n_dofs
        return self

    def transform(self, X):
        """Evolve each row of ``X`` (shape (n_samples, n_dofs)) to time ``t``."""
        check_is_fitted(self, "system_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise InvalidParameterError(
                f"expected {self.n_features_in_} nodal values per row, got {X.shape[1]}")
        return np.vstack([evolve(self.system_, row, self.scheme, self.t, self.k,
                                 self.propagator, self.tol) for row in X])

    def score(self, X, y):
        """Negative mean relative L2 distance between ``transform(X)`` and ``y``."""
        U = self.transform(X)
        y = check_array(y, dtype=np.float64)
        norms = [self.system_.l2_norm(u - v) / max(self.system_.l2_norm(v), 1e-300)
                 for u, v in zip(U, y)]
        return -float(np.mean(norms))
