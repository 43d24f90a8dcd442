"""Discrete operators on S_h: projections, the quadrature-error operator Q_h,
the finite volume Laplacian and its generalized eigenpairs.

Everything operates on an :class:`FVESystem`, which bundles a mesh with its
assembled matrices. Nodal fields are plain 1-D arrays over the interior
vertices of that mesh.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import assembly
from .assembly import CoefficientField
from .exceptions import InvalidParameterError, NumericalError
from .mesh import Mesh

log = logging.getLogger(__name__)

CG_RTOL = 1e-12
# the mass matrices are uniformly well conditioned, so CG reaches this cheaply
MASS_RTOL = 1e-14
DENSE_EIGEN_MAX = 1600


def cg_solve(A, b, rtol: float = CG_RTOL, maxiter: Optional[int] = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients; raises on non-convergence."""
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros_like(b)
    d = A.diagonal()
    precond = spla.LinearOperator(A.shape, matvec=lambda x: x / d, dtype=float)
    maxiter = maxiter or max(1000, 10 * A.shape[0])
    x, info = spla.cg(A, b, rtol=rtol, atol=0.0, M=precond, maxiter=maxiter)
    res = np.linalg.norm(A @ x - b) / bnorm
    if info != 0 or not res <= 10 * rtol:
        raise NumericalError(f"CG did not converge (info={info}, relative residual {res:.2e})",
                             residual=res)
    return x


class FVESystem:
    """A mesh together with the matrices of the finite volume element method.

    Parameters
    ----------
    mesh : Mesh
    coefficients : CoefficientField, optional
        Diffusion and reaction coefficients; the Laplacian when omitted.
    quad_order : int
        Degree of the triangle rule used for analytic right-hand sides.
    rtol : float
        Relative residual for the CG solves.
    """

    def __init__(self, mesh: Mesh, coefficients: Optional[CoefficientField] = None,
                 quad_order: int = 4, rtol: float = CG_RTOL):
        self.mesh = mesh
        self.coefficients = coefficients or CoefficientField()
        self.quad_order = quad_order
        self.rtol = rtol
        self._eigen = {}

    @property
    def generalized(self) -> bool:
        return not self.coefficients.is_laplacian

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_dofs

    @cached_property
    def mass(self):
        return assembly.mass_matrix(self.mesh)

    @cached_property
    def fv_mass(self):
        return assembly.fv_mass_matrix(self.mesh)

    @cached_property
    def laplacian(self):
        return assembly.stiffness_matrix(self.mesh)

    @cached_property
    def operator(self):
        """Matrix of a~_h(., J_h .): the Laplacian stiffness, or S_alpha + B_beta."""
        if not self.generalized:
            return self.laplacian
        return assembly.operator_matrix(self.mesh, self.coefficients)

    @cached_property
    def quadrature_error(self):
        """M~ - M, the matrix of eps_h on S_h."""
        return (self.fv_mass - self.mass).tocsr()

    def stiffness(self, generalized: Optional[bool] = None):
        if generalized is None:
            generalized = self.generalized
        return self.operator if generalized else self.laplacian

    # norms ---------------------------------------------------------------

    def l2_norm(self, x) -> float:
        x = np.asarray(x)
        return float(np.sqrt(x @ (self.mass @ x)))

    def fv_norm(self, x) -> float:
        x = np.asarray(x)
        return float(np.sqrt(x @ (self.fv_mass @ x)))

    def h1_seminorm(self, x) -> float:
        x = np.asarray(x)
        return float(np.sqrt(x @ (self.laplacian @ x)))

    def solve(self, A, b, rtol: Optional[float] = None) -> np.ndarray:
        return cg_solve(A, b, rtol=self.rtol if rtol is None else rtol)

    def __repr__(self):
        kind = "generalized" if self.generalized else "laplacian"
        return f"FVESystem({self.mesh!r}, operator={kind!r})"


def _system(obj) -> FVESystem:
    if isinstance(obj, FVESystem):
        return obj
    if isinstance(obj, Mesh):
        return FVESystem(obj)
    raise InvalidParameterError(f"expected FVESystem or Mesh, got {type(obj).__name__}")


def interpolate(mesh: Mesh, v) -> np.ndarray:
    """Nodal interpolant I_h v at interior vertices (boundary values are dropped)."""
    if isinstance(mesh, FVESystem):
        mesh = mesh.mesh
    p = mesh.vertices[mesh.interior]
    return np.broadcast_to(np.asarray(v(p[:, 0], p[:, 1]), dtype=float), (mesh.n_dofs,)).copy()


def l2_project(system, v) -> np.ndarray:
    """P_h v: solve M x = ((v, Phi_i))_i. Nodal arrays are taken as elements of S_h."""
    system = _system(system)
    if callable(v):
        b = assembly.load_vector(system.mesh, v, system.quad_order)
    else:
        b = system.mass @ np.asarray(v, dtype=float)
    return system.solve(system.mass, b, rtol=min(system.rtol, MASS_RTOL))


def ritz_project(system, v, grad=None) -> np.ndarray:
    """R_h v: solve S x = ((grad v, grad Phi_i))_i.

    ``v`` can be a nodal array, an object exposing ``neg_laplacian(x, y)``
    (for instance :class:`~fvheat.analysis.EigenSeriesData`, where the right
    side is sum lambda_k c_k (phi_k, Phi_i)), or a callable together with
    its gradient ``grad(x, y) -> (gx, gy)``.
    """
    system = _system(system)
    mesh = system.mesh
    if hasattr(v, "neg_laplacian"):
        b = assembly.load_vector(mesh, v.neg_laplacian, system.quad_order)
    elif grad is not None:
        b = _grad_load(mesh, grad, system.quad_order)
    elif callable(v):
        raise InvalidParameterError("ritz_project needs grad= or an eigen-series for analytic v")
    else:
        b = system.laplacian @ np.asarray(v, dtype=float)
    return system.solve(system.laplacian, b)


def _grad_load(mesh: Mesh, grad, quad_order):
    from .quadrature import physical_points, triangle_rule
    bary, w = triangle_rule(quad_order)
    pts = physical_points(mesh.corners, bary)
    gx, gy = grad(pts[..., 0], pts[..., 1])
    mean = np.stack([np.broadcast_to(gx, pts.shape[:2]) @ w,
                     np.broadcast_to(gy, pts.shape[:2]) @ w], axis=1)
    local = mesh.areas[:, None] * np.einsum("td,tkd->tk", mean, mesh.grad_basis)
    full = np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)
    return full[mesh.interior]


def qh_apply(system, psi, generalized: Optional[bool] = None) -> np.ndarray:
    """Q_h psi: the solution q of a~_h(q, J_h chi) = eps_h(psi, chi) for all chi."""
    system = _system(system)
    rhs = system.quadrature_error @ np.asarray(psi, dtype=float)
    return system.solve(system.stiffness(generalized), rhs)


def discrete_operator_apply(system, w, generalized: Optional[bool] = None) -> np.ndarray:
    """Finite volume Laplacian: returns -M~^{-1} A w (A = S, or S_alpha + B_beta)."""
    system = _system(system)
    rhs = system.stiffness(generalized) @ np.asarray(w, dtype=float)
    return -system.solve(system.fv_mass, rhs, rtol=min(system.rtol, MASS_RTOL))


@dataclass
class EigenDecomposition:
    """Eigenpairs of A phi = lambda M~ phi, ascending, orthonormal in <., .>.

    ``vectors[:, j]`` holds the nodal values of the j-th eigenfunction.
    ``complete`` is False for a partial (lowest ``k``) decomposition.
    """

    values: np.ndarray
    vectors: np.ndarray
    complete: bool
    residuals: np.ndarray

    @property
    def count(self) -> int:
        return len(self.values)

    def coefficients(self, fv_mass, v) -> np.ndarray:
        """<v, phi_j> for each computed eigenfunction."""
        return self.vectors.T @ (fv_mass @ np.asarray(v, dtype=float))

    def evolve(self, fv_mass, v, t: float) -> np.ndarray:
        c = self.coefficients(fv_mass, v)
        return self.vectors @ (np.exp(-self.values * t) * c)


def _sign_fix(V):
    scale = np.abs(V).max(axis=0)
    for j in range(V.shape[1]):
        nz = np.flatnonzero(np.abs(V[:, j]) > 1e-8 * scale[j])
        if nz.size and V[nz[0], j] < 0:
            V[:, j] = -V[:, j]
    return V


def _residuals(A, Mt, lam, V):
    R = A @ V - (Mt @ V) * lam
    return np.linalg.norm(R, axis=0) / (np.abs(lam) * np.linalg.norm(Mt @ V, axis=0))


def eigendecompose(system, count=None, generalized: Optional[bool] = None,
                   tol: float = 1e-10) -> EigenDecomposition:
    """Generalized eigenpairs of the stiffness / FV-mass pencil.

    ``count=None`` (or ``"all"``) computes the full spectrum densely; an
    integer requests the lowest ``count`` pairs by shift-invert Lanczos,
    followed by a Rayleigh-Ritz cleanup so the returned vectors are exactly
    orthonormal in the FV inner product.
    """
    system = _system(system)
    A = system.stiffness(generalized)
    Mt = system.fv_mass
    n = A.shape[0]
    if count in (None, "all") or int(count) >= n - 1:
        lam, V = sla.eigh(A.toarray(), Mt.toarray())
        complete = True
    else:
        k = int(count)
        v0 = np.ones(n)
        try:
            lam, V = spla.eigsh(A.tocsc(), k=k, M=Mt.tocsc(), sigma=0.0, which="LM", v0=v0, tol=0.0)
        except spla.ArpackError as err:
            raise NumericalError(f"partial eigensolve failed: {err}") from err
        # Rayleigh-Ritz on the computed subspace
        Q, _ = np.linalg.qr(V)
        a = Q.T @ (A @ Q)
        m = Q.T @ (Mt @ Q)
        lam, Y = sla.eigh(0.5 * (a + a.T), 0.5 * (m + m.T))
        V = Q @ Y
        complete = False
    order = np.argsort(lam, kind="stable")
    lam, V = lam[order], _sign_fix(np.array(V[:, order]))
    res = _residuals(A, Mt, lam, V)
    if not (lam > 0).all():
        raise NumericalError("nonpositive eigenvalue in a positive definite pencil")
    if res.max() > tol:
        raise NumericalError(f"eigenpair residual {res.max():.2e} exceeds {tol:.0e}", residual=res.max())
    return EigenDecomposition(lam, V, complete, res)


def cached_eigendecomposition(system: FVESystem, count=None, generalized=None) -> EigenDecomposition:
    """Like :func:`eigendecompose`, reusing the largest decomposition computed so far."""
    key = system.generalized if generalized is None else generalized
    have = system._eigen.get(key)
    want = system.n_dofs if count in (None, "all") else min(int(count), system.n_dofs)
    if have is not None and (have.complete or have.count >= want):
        return have
    dec = eigendecompose(system, count, generalized)
    system._eigen[key] = dec
    return dec
