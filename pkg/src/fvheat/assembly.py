"""Matrices of the bilinear forms used by the finite volume element method.

All local matrices come from closed-form element integrals, so algebraic
identities between them hold to rounding. Global matrices are returned in CSR
form over the interior degrees of freedom (homogeneous Dirichlet data) unless
``full=True`` is passed.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .exceptions import AssemblyError, InvalidParameterError
from .mesh import Mesh
from .quadrature import physical_points, triangle_rule

MASS_PATTERN = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]])
FV_MASS_PATTERN = np.array([[22.0, 7.0, 7.0], [7.0, 22.0, 7.0], [7.0, 7.0, 22.0]])


@dataclass(frozen=True)
class CoefficientField:
    """Diffusion tensor ``alpha(x, y)`` and reaction ``beta(x, y)``, both vectorised.

    ``alpha`` may return a scalar field (isotropic), a constant 2x2 matrix or
    an array of shape (..., 2, 2). Both are sampled once per triangle, at the
    barycenter.
    """

    alpha: Optional[Callable] = None
    beta: Optional[Callable] = None

    def sample_alpha(self, points: np.ndarray) -> np.ndarray:
        n = len(points)
        if self.alpha is None:
            return np.broadcast_to(np.eye(2), (n, 2, 2))
        a = np.asarray(self.alpha(points[:, 0], points[:, 1]), dtype=float)
        if a.shape in ((), (n,)):
            a = a[..., None, None] * np.eye(2)
        a = np.broadcast_to(a, (n, 2, 2))
        scale = np.abs(a).max(axis=(1, 2)) + 1e-300
        asym = np.abs(a[:, 0, 1] - a[:, 1, 0]) > 1e-14 * scale
        det = a[:, 0, 0] * a[:, 1, 1] - a[:, 0, 1] * a[:, 1, 0]
        bad = np.flatnonzero(asym | ~(a[:, 0, 0] > 0) | ~(det > 0))
        if bad.size:
            t = int(bad[0])
            raise AssemblyError(f"alpha is not symmetric positive definite on triangle {t}: "
                                f"{a[t].tolist()}", triangle=t)
        return a

    def sample_beta(self, points: np.ndarray) -> np.ndarray:
        n = len(points)
        if self.beta is None:
            return np.zeros(n)
        b = np.broadcast_to(np.asarray(self.beta(points[:, 0], points[:, 1]), dtype=float), (n,))
        bad = np.flatnonzero(~(b >= 0))
        if bad.size:
            t = int(bad[0])
            raise AssemblyError(f"beta is negative on triangle {t}: {b[t]}", triangle=t)
        return b

    @property
    def is_laplacian(self) -> bool:
        return self.alpha is None and self.beta is None


def _as_field(alpha):
    if alpha is None or isinstance(alpha, CoefficientField):
        return alpha or CoefficientField()
    return CoefficientField(alpha=alpha)


def _assemble(mesh: Mesh, local: np.ndarray, full: bool) -> sp.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = mesh.n_vertices
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    if full:
        return A
    idx = mesh.interior
    return A[idx][:, idx].tocsr()


def _mirror_upper(local):
    """Copy the upper triangle of each 3x3 block onto the lower one (exact symmetry)."""
    for i in range(3):
        for j in range(i):
            local[:, i, j] = local[:, j, i]
    return local


def local_mass(areas) -> np.ndarray:
    return (np.asarray(areas)[:, None, None] / 12.0) * MASS_PATTERN


def local_fv_mass(areas) -> np.ndarray:
    return (np.asarray(areas)[:, None, None] / 108.0) * FV_MASS_PATTERN


def mass_matrix(mesh: Mesh, full: bool = False) -> sp.csr_matrix:
    """Consistent mass matrix (Phi_i, Phi_j)."""
    return _assemble(mesh, local_mass(mesh.areas), full)


def fv_mass_matrix(mesh: Mesh, full: bool = False) -> sp.csr_matrix:
    """Finite volume mass matrix (Phi_i, J_h Phi_j)."""
    return _assemble(mesh, local_fv_mass(mesh.areas), full)


def lumped_mass_matrix(mesh: Mesh, full: bool = False) -> sp.csr_matrix:
    d = np.bincount(mesh.triangles.ravel(), weights=np.repeat(mesh.areas / 3.0, 3),
                    minlength=mesh.n_vertices)
    if not full:
        d = d[mesh.interior]
    return sp.diags(d, format="csr")


def _local_stiffness(mesh: Mesh, alpha_samples: np.ndarray) -> np.ndarray:
    g = mesh.grad_basis
    ag = np.einsum("tab,tjb->tja", alpha_samples, g)
    local = np.empty((mesh.n_triangles, 3, 3))
    for i in range(3):
        for j in range(i, 3):
            local[:, i, j] = mesh.areas * (g[:, i, 0] * ag[:, j, 0] + g[:, i, 1] * ag[:, j, 1])
    return _mirror_upper(local)


def stiffness_matrix(mesh: Mesh, alpha=None, full: bool = False) -> sp.csr_matrix:
    """(alpha~ grad Phi_j, grad Phi_i) with alpha sampled at barycenters; Laplacian if omitted."""
    field = _as_field(alpha)
    a = field.sample_alpha(mesh.barycenters)
    return _assemble(mesh, _local_stiffness(mesh, a), full)


def control_volume_normals(mesh: Mesh) -> np.ndarray:
    """Integrated outward normal of the dual-boundary pieces of V_z inside each triangle.

    Shape (nt, 3, 2): entry [t, i] is the integral of n over the two segments
    (midpoint, barycenter, midpoint) that bound V_{z_i} within triangle t.
    """
    p = mesh.corners
    b = mesh.barycenters
    out = np.empty((mesh.n_triangles, 3, 2))
    for i in range(3):
        m_next = 0.5 * (p[:, i] + p[:, (i + 1) % 3])
        m_prev = 0.5 * (p[:, i] + p[:, (i + 2) % 3])
        n = np.zeros((mesh.n_triangles, 2))
        for start, end in ((m_next, b), (b, m_prev)):
            d = end - start
            n += np.column_stack([d[:, 1], -d[:, 0]])
        out[:, i] = n
    return out


def fv_flux_stiffness_matrix(mesh: Mesh, alpha=None, full: bool = False) -> sp.csr_matrix:
    """Flux form a_h: entry (i, j) = -int_{dV_i} (alpha~ grad Phi_j) . n ds.

    The integrand is constant on each segment, so the line integrals are exact.
    """
    field = _as_field(alpha)
    a = field.sample_alpha(mesh.barycenters)
    ag = np.einsum("tab,tjb->tja", a, mesh.grad_basis)
    normals = control_volume_normals(mesh)
    local = -np.einsum("tid,tjd->tij", normals, ag)
    return _assemble(mesh, local, full)


def fv_beta_matrix(mesh: Mesh, beta, full: bool = False) -> sp.csr_matrix:
    """(beta~ Phi_j, J_h Phi_i) with beta sampled at barycenters."""
    if not isinstance(beta, CoefficientField):
        beta = CoefficientField(beta=beta)
    b = beta.sample_beta(mesh.barycenters)
    return _assemble(mesh, local_fv_mass(mesh.areas * b), full)


def operator_matrix(mesh: Mesh, coefficients: Optional[CoefficientField] = None) -> sp.csr_matrix:
    """Matrix of a~_h(psi, J_h chi) = (alpha~ grad psi, grad chi) + (beta~ psi, J_h chi)."""
    field = _as_field(coefficients)
    S = stiffness_matrix(mesh, field)
    if field.beta is None:
        return S
    # add in place so stored zeros survive and the sparsity matches the Laplacian
    B = fv_beta_matrix(mesh, field).tocsr()
    rows = np.repeat(np.arange(S.shape[0]), np.diff(S.indptr))
    out = S.copy()
    out.data = out.data + np.asarray(B[rows, S.indices]).ravel()
    return out


def mh_apply(mesh: Mesh, chi) -> np.ndarray:
    """Patch stencil -(1/54) sum_tau |tau| (chi(z+) - 2 chi(z) + chi(z-)) at interior vertices."""
    c = mesh.extend(chi)
    t = mesh.triangles
    ct = c[t]
    second = np.roll(ct, -1, axis=1) - 2.0 * ct + np.roll(ct, 1, axis=1)
    contrib = -(mesh.areas[:, None] / 54.0) * second
    out = np.bincount(t.ravel(), weights=contrib.ravel(), minlength=mesh.n_vertices)
    return out[mesh.interior]


def load_vector(mesh: Mesh, f, quad_order: int = 4) -> np.ndarray:
    """b_i = (f, Phi_i) for interior vertices, by triangle quadrature."""
    bary, w = triangle_rule(quad_order)
    pts = physical_points(mesh.corners, bary)
    vals = np.broadcast_to(np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float), pts.shape[:2])
    local = mesh.areas[:, None] * np.einsum("tq,q,qk->tk", vals, w, bary)
    full = np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)
    return full[mesh.interior]


def control_volume_integrals(mesh: Mesh, f, quad_order: int = 4) -> np.ndarray:
    """int_{V_z} f for interior vertices z (quadrature on the dual quadrilaterals)."""
    bary, w = triangle_rule(quad_order)
    p = mesh.corners
    b = mesh.barycenters
    local = np.zeros((mesh.n_triangles, 3))
    for i in range(3):
        z = p[:, i]
        m_next = 0.5 * (z + p[:, (i + 1) % 3])
        m_prev = 0.5 * (z + p[:, (i + 2) % 3])
        for tri in ((z, m_next, b), (z, b, m_prev)):
            corners = np.stack(tri, axis=1)
            d1 = corners[:, 1] - corners[:, 0]
            d2 = corners[:, 2] - corners[:, 0]
            area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
            pts = physical_points(corners, bary)
            vals = np.broadcast_to(np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float), pts.shape[:2])
            local[:, i] += area * (vals @ w)
    full = np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=mesh.n_vertices)
    return full[mesh.interior]


def eps_h(mesh: Mesh, f, chi, quad_order: int = 4) -> float:
    """Quadrature error functional (f, J_h chi) - (f, chi).

    ``f`` is either a vectorised callable (integrated by quadrature) or a
    nodal vector on the interior vertices (evaluated exactly).
    """
    chi = np.asarray(chi, dtype=float)
    if callable(f):
        return float(control_volume_integrals(mesh, f, quad_order) @ chi
                     - load_vector(mesh, f, quad_order) @ chi)
    f = np.asarray(f, dtype=float)
    if f.shape != chi.shape:
        raise InvalidParameterError("nodal f and chi must have the same length")
    return float(f @ (fv_mass_matrix(mesh) @ chi) - f @ (mass_matrix(mesh) @ chi))


def dump_coo(A, path) -> None:
    """Write ``i j value`` lines (0-based) for debugging."""
    C = sp.coo_matrix(A)
    lines = [f"{i} {j} {v!r}" for i, j, v in zip(C.row.tolist(), C.col.tolist(), C.data.tolist())]
    Path(path).write_text("\n".join(lines) + "\n")
