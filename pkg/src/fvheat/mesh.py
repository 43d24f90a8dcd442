"""Triangulations of polygonal domains, barycentric control volumes and vertex patches.

Meshes are stored as plain numpy arrays (vertex coordinates, counter-clockwise
vertex triples) and are immutable after construction. The structured families
built here all live on the unit square and are tensor grids whose rectangles
are split along one diagonal:

``"nw"``
    the diagonal joins the upper-left and lower-right corners of a cell,
``"ne"``
    the diagonal joins the lower-left and upper-right corners.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

from .exceptions import (
    GenerationFailedError,
    InvalidParameterError,
    MeshParseError,
    MeshValidationError,
)

DEFAULT_REGULARITY_BOUND = 10.0
DEFAULT_SYMMETRY_TOL = 1e-9


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


class Mesh:
    """A conforming triangulation with homogeneous Dirichlet boundary.

    Parameters
    ----------
    vertices : array_like, shape (nv, 2)
    triangles : array_like, shape (nt, 3)
        Vertex indices, counter-clockwise.
    boundary : array_like of bool, shape (nv,), optional
        Boundary flags. Derived from the edges used by a single triangle
        when omitted.
    meta : dict, optional
        Free-form generation metadata (family, grid lines, seed, ...).
    regularity_bound : float
        Upper bound on circumradius / inradius over all triangles.
    """

    def __init__(self, vertices, triangles, boundary=None, meta=None,
                 regularity_bound=DEFAULT_REGULARITY_BOUND):
        vertices = np.asarray(vertices, dtype=float)
        triangles = np.asarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshValidationError("vertices must have shape (nv, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshValidationError("triangles must have shape (nt, 3)")
        if len(triangles) == 0:
            raise MeshValidationError("mesh has no triangles")
        if triangles.min() < 0 or triangles.max() >= len(vertices):
            raise MeshValidationError("triangle references a missing vertex")
        self.vertices = _readonly(vertices)
        self.triangles = _readonly(triangles)
        self.meta = dict(meta or {})
        self.regularity_bound = float(regularity_bound)
        self._check_areas()
        self._check_edges()
        if boundary is None:
            boundary = np.zeros(len(vertices), dtype=bool)
            boundary[self.boundary_edges.ravel()] = True
        else:
            boundary = np.asarray(boundary, dtype=bool)
            if boundary.shape != (len(vertices),):
                raise MeshValidationError("boundary flags must have one entry per vertex")
            unflagged = ~boundary[self.boundary_edges].all(axis=1)
            if unflagged.any():
                e = self.boundary_edges[np.argmax(unflagged)]
                raise MeshValidationError(
                    f"edge ({e[0]}, {e[1]}) lies on the boundary but its vertices are not flagged")
        self.boundary = _readonly(boundary)
        self._check_regularity()

    # -- validation -------------------------------------------------------

    def _check_areas(self):
        bad = np.flatnonzero(~(self.signed_areas > 0))
        if bad.size:
            t = int(bad[0])
            raise MeshValidationError(
                f"triangle {t} has non-positive signed area {self.signed_areas[t]:.3e}", triangle=t)

    def _check_edges(self):
        counts = self._edge_counts
        if (counts > 2).any():
            e = self._unique_edges[np.argmax(counts > 2)]
            raise MeshValidationError(f"edge ({e[0]}, {e[1]}) is shared by more than two triangles")

    def _check_regularity(self):
        ratio = self.regularity
        worst = int(np.argmax(ratio))
        if ratio[worst] > self.regularity_bound:
            raise MeshValidationError(
                f"triangle {worst} has circumradius/inradius {ratio[worst]:.3g} "
                f"> {self.regularity_bound}", triangle=worst)

    # -- geometry ---------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @cached_property
    def corners(self) -> np.ndarray:
        """Vertex coordinates per triangle, shape (nt, 3, 2)."""
        return _readonly(self.vertices[self.triangles])

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return _readonly(0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]))

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def area(self) -> float:
        return float(self.areas.sum())

    @cached_property
    def barycenters(self) -> np.ndarray:
        return _readonly(self.corners.mean(axis=1))

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        """Length of the edge opposite each local vertex, shape (nt, 3)."""
        p = self.corners
        return _readonly(np.stack([
            np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
            np.linalg.norm(p[:, 0] - p[:, 2], axis=1),
            np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
        ], axis=1))

    @cached_property
    def diameters(self) -> np.ndarray:
        return _readonly(self.edge_lengths.max(axis=1))

    @cached_property
    def h_max(self) -> float:
        return float(self.diameters.max())

    @cached_property
    def regularity(self) -> np.ndarray:
        """Circumradius over inradius per triangle (2 for equilateral)."""
        L = self.edge_lengths
        A = self.areas
        s = 0.5 * L.sum(axis=1)
        return _readonly(L.prod(axis=1) * s / (4.0 * A ** 2))

    @cached_property
    def grad_basis(self) -> np.ndarray:
        """Gradients of the three barycentric coordinates per triangle, shape (nt, 3, 2)."""
        p = self.corners
        twice_area = 2.0 * self.areas[:, None]
        g = np.empty((self.n_triangles, 3, 2))
        for i in range(3):
            a = p[:, (i + 1) % 3]
            b = p[:, (i + 2) % 3]
            g[:, i, 0] = (a[:, 1] - b[:, 1]) / twice_area[:, 0]
            g[:, i, 1] = (b[:, 0] - a[:, 0]) / twice_area[:, 0]
        return _readonly(g)

    # -- topology ---------------------------------------------------------

    @cached_property
    def _all_edges(self):
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.sort(e, axis=1)

    @cached_property
    def _edge_table(self):
        return np.unique(self._all_edges, axis=0, return_counts=True)

    @property
    def _unique_edges(self):
        return self._edge_table[0]

    @property
    def _edge_counts(self):
        return self._edge_table[1]

    @cached_property
    def edges(self) -> np.ndarray:
        return _readonly(self._unique_edges)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return _readonly(self._unique_edges[self._edge_counts == 1])

    @cached_property
    def interior(self) -> np.ndarray:
        """Vertex ids of the degrees of freedom, in increasing order."""
        return _readonly(np.flatnonzero(~self.boundary))

    @cached_property
    def interior_index(self) -> np.ndarray:
        """Map vertex id -> interior dof index, -1 on the boundary."""
        idx = np.full(self.n_vertices, -1, dtype=np.int64)
        idx[self.interior] = np.arange(len(self.interior))
        return _readonly(idx)

    @property
    def n_dofs(self) -> int:
        return len(self.interior)

    @cached_property
    def vertex_triangles(self) -> list:
        """Triangle ids incident to each vertex."""
        order = np.argsort(self.triangles.ravel(), kind="stable")
        owners = order // 3
        counts = np.bincount(self.triangles.ravel(), minlength=self.n_vertices)
        return np.split(owners, np.cumsum(counts)[:-1])

    # -- fields -----------------------------------------------------------

    def extend(self, values) -> np.ndarray:
        """Interior nodal values -> all-vertex values with zeros on the boundary."""
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.n_dofs:
            raise InvalidParameterError(
                f"field has {values.shape[0]} values, mesh has {self.n_dofs} interior vertices")
        full = np.zeros((self.n_vertices,) + values.shape[1:])
        full[self.interior] = values
        return full

    def restrict(self, values) -> np.ndarray:
        return np.asarray(values, dtype=float)[self.interior]

    # -- derived structures ----------------------------------------------

    def patch(self, z: int) -> "Patch":
        return build_patch(self, z)

    @cached_property
    def patches(self) -> list:
        """Patches of all interior vertices, in dof order."""
        return [build_patch(self, int(z)) for z in self.interior]

    @cached_property
    def control_volumes(self) -> list:
        return build_control_volumes(self)

    def __repr__(self):
        fam = self.meta.get("family", "custom")
        return (f"Mesh(family={fam!r}, vertices={self.n_vertices}, "
                f"triangles={self.n_triangles}, h_max={self.h_max:.4g})")


@dataclass(frozen=True)
class ControlVolume:
    """Barycentric control volume around one vertex.

    ``segments`` has shape (m, 2, 2) with start and end points of each piece
    of the volume boundary, traversed counter-clockwise about the vertex;
    ``normals`` are the matching unit outward normals. Segments lying on the
    domain boundary are flagged in ``on_domain_boundary``.
    """

    vertex: int
    pieces: list
    segments: np.ndarray
    normals: np.ndarray
    lengths: np.ndarray
    on_domain_boundary: np.ndarray

    @property
    def area(self) -> float:
        return float(sum(a for _, a in self.pieces))

    def normal_integral(self) -> np.ndarray:
        return (self.normals * self.lengths[:, None]).sum(axis=0)


@dataclass(frozen=True)
class Patch:
    """Triangles around an interior vertex, ordered counter-clockwise.

    Triangle ``ring_triangles[j]`` has vertices ``center``,
    ``ring_vertices[j]`` and ``ring_vertices[j + 1]`` (cyclically), and
    ``weights[j] = areas[j - 1] + areas[j]``.
    """

    center: int
    ring_vertices: np.ndarray
    ring_triangles: np.ndarray
    areas: np.ndarray
    weights: np.ndarray
    center_point: np.ndarray = field(repr=False)
    ring_points: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.ring_vertices)

    @property
    def area(self) -> float:
        return float(self.areas.sum())

    def first_moment(self) -> np.ndarray:
        """sum_j w_j (zeta_j - zeta_0); vanishes on symmetric patches."""
        return (self.weights[:, None] * (self.ring_points - self.center_point)).sum(axis=0)


def _triangle_rotation(tri, z):
    """Return (z, next, prev) for a CCW triangle containing z."""
    k = int(np.flatnonzero(tri == z)[0])
    return tri[(k + 1) % 3], tri[(k + 2) % 3]


def build_patch(mesh: Mesh, z: int) -> Patch:
    if mesh.boundary[z]:
        raise InvalidParameterError(f"vertex {z} is on the boundary; patches are built for interior vertices")
    tris = np.sort(mesh.vertex_triangles[z])
    by_first = {}
    for t in tris:
        a, b = _triangle_rotation(mesh.triangles[t], z)
        by_first[int(a)] = (int(t), int(b))
    start = int(tris[0])
    a, _ = _triangle_rotation(mesh.triangles[start], z)
    ring, ring_tris = [], []
    cur = int(a)
    for _ in range(len(tris)):
        if cur not in by_first:
            raise MeshValidationError(f"patch of vertex {z} is not a closed fan")
        t, nxt = by_first[cur]
        ring.append(cur)
        ring_tris.append(t)
        cur = nxt
    if cur != ring[0]:
        raise MeshValidationError(f"patch of vertex {z} is not a closed fan")
    ring = np.array(ring, dtype=np.int64)
    ring_tris = np.array(ring_tris, dtype=np.int64)
    areas = mesh.areas[ring_tris].copy()
    weights = np.roll(areas, 1) + areas
    return Patch(z, _readonly(ring), _readonly(ring_tris), _readonly(areas), _readonly(weights),
                 mesh.vertices[z].copy(), mesh.vertices[ring].copy())


def classify_patch(patch: Patch, h: float, tolerance: float = DEFAULT_SYMMETRY_TOL) -> str:
    """Return ``"symmetric"`` if the ring is invariant under reflection through the center.

    Matching of reflected ring vertices is done to within ``tolerance * h``.
    """
    if patch.size % 2:
        return "asymmetric"
    reflected = 2.0 * patch.center_point - patch.ring_points
    d = np.linalg.norm(reflected[:, None, :] - patch.ring_points[None, :, :], axis=2)
    tol = tolerance * h
    matched = (d <= tol).any(axis=1).all() and (d <= tol).any(axis=0).all()
    return "symmetric" if matched else "asymmetric"


def symmetry_report(mesh: Mesh, tolerance: float = DEFAULT_SYMMETRY_TOL) -> np.ndarray:
    """Boolean array over interior dofs: True where the patch is symmetric."""
    return np.array([classify_patch(p, mesh.h_max, tolerance) == "symmetric"
                     for p in mesh.patches], dtype=bool)


def build_control_volumes(mesh: Mesh) -> list:
    """Barycentric dual: join each barycenter to the midpoints of its triangle's edges."""
    p = mesh.corners
    bary = mesh.barycenters
    areas = mesh.areas
    pieces = [[] for _ in range(mesh.n_vertices)]
    segs = [[] for _ in range(mesh.n_vertices)]
    flags = [[] for _ in range(mesh.n_vertices)]
    for t in range(mesh.n_triangles):
        for i in range(3):
            z = int(mesh.triangles[t, i])
            nxt = p[t, (i + 1) % 3]
            prv = p[t, (i + 2) % 3]
            m_next = 0.5 * (p[t, i] + nxt)
            m_prev = 0.5 * (p[t, i] + prv)
            pieces[z].append((t, areas[t] / 3.0))
            segs[z].append((m_next, bary[t]))
            segs[z].append((bary[t], m_prev))
            flags[z].extend([False, False])
    for a, b in mesh.boundary_edges:
        # the half edges on the domain boundary close the volumes of boundary vertices
        mid = 0.5 * (mesh.vertices[a] + mesh.vertices[b])
        for z, other in ((a, b), (b, a)):
            start, end = mesh.vertices[z], mid
            seg_dir = end - start
            # orient counter-clockwise about z: the volume must lie to the left
            tris = mesh.vertex_triangles[z]
            inside = bary[tris].mean(axis=0) - start
            if seg_dir[0] * inside[1] - seg_dir[1] * inside[0] < 0:
                start, end = end, start
            segs[z].append((start.copy(), end.copy()))
            flags[z].append(True)
    volumes = []
    for z in range(mesh.n_vertices):
        s = np.array(segs[z], dtype=float).reshape(-1, 2, 2)
        d = s[:, 1] - s[:, 0]
        lengths = np.linalg.norm(d, axis=1)
        normals = np.stack([d[:, 1], -d[:, 0]], axis=1) / lengths[:, None]
        volumes.append(ControlVolume(z, pieces[z], _readonly(s), _readonly(normals),
                                     _readonly(lengths), _readonly(np.array(flags[z], dtype=bool))))
    return volumes


# ---------------------------------------------------------------------------
# structured families


def _tensor_mesh(xs, ys, diagonals, meta):
    """Tensor grid on [xs] x [ys]; ``diagonals`` is a (ny, nx) array of 'nw'/'ne'."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    nx, ny = len(xs) - 1, len(ys) - 1
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])
    j, m = np.meshgrid(np.arange(nx), np.arange(ny))
    p00 = (m * (nx + 1) + j).ravel()
    p10 = p00 + 1
    p01 = p00 + nx + 1
    p11 = p01 + 1
    ne = (np.asarray(diagonals) == "ne").ravel()
    t1 = np.where(ne[:, None], np.column_stack([p00, p10, p11]), np.column_stack([p00, p10, p01]))
    t2 = np.where(ne[:, None], np.column_stack([p00, p11, p01]), np.column_stack([p10, p11, p01]))
    triangles = np.empty((2 * len(p00), 3), dtype=np.int64)
    triangles[0::2] = t1
    triangles[1::2] = t2
    boundary = ((np.isclose(vertices[:, 0], xs[0]) | np.isclose(vertices[:, 0], xs[-1])
                 | np.isclose(vertices[:, 1], ys[0]) | np.isclose(vertices[:, 1], ys[-1])))
    meta = dict(meta)
    meta.setdefault("x", xs.tolist())
    meta.setdefault("y", ys.tolist())
    return Mesh(vertices, triangles, boundary, meta=meta)


def grid_vertex(mesh: Mesh, j: int, m: int) -> int:
    """Vertex id of grid node (x_j, y_m) on a tensor-grid family."""
    if "x" not in mesh.meta:
        raise InvalidParameterError("mesh carries no tensor-grid metadata")
    return m * len(mesh.meta["x"]) + j


def generate_uniform_symmetric(N: int, diagonal: str = "nw") -> Mesh:
    """Unit square, N x N cells, each split along the same diagonal; h = sqrt(2)/N."""
    if int(N) != N or N < 2:
        raise InvalidParameterError(f"N must be an integer >= 2, got {N}")
    N = int(N)
    if diagonal not in ("nw", "ne"):
        raise InvalidParameterError(f"diagonal must be 'nw' or 'ne', got {diagonal!r}")
    xs = np.arange(N + 1) / N
    diag = np.full((N, N), diagonal)
    return _tensor_mesh(xs, xs, diag, {"family": "uniform_symmetric", "N": N})


def stripes_coordinates(N: int):
    """Grid lines of the alternating-step mesh: steps h/2 (odd j) and h (even j), h = 4/(3N)."""
    if int(N) != N or N < 4 or N % 4:
        raise InvalidParameterError(f"N must be a positive multiple of 4, got {N}")
    N = int(N)
    h = 4.0 / (3 * N)
    steps = np.where(np.arange(1, N + 1) % 2 == 1, 0.5 * h, h)
    xs = np.concatenate([[0.0], np.cumsum(steps)])
    xs[-1] = 1.0
    M = 3 * N // 4
    ys = np.arange(M + 1) * h
    ys[-1] = 1.0
    return xs, ys, h


def generate_counterexample_stripes(N: int) -> Mesh:
    """Nonsymmetric-everywhere mesh with alternating column widths h/2, h.

    The upper-left/lower-right diagonals make the patch at (x_{2j}, y_m) have
    three triangles of area h^2/4 (right) and three of area h^2/2 (left).
    """
    xs, ys, h = stripes_coordinates(N)
    diag = np.full((len(ys) - 1, len(xs) - 1), "nw")
    return _tensor_mesh(xs, ys, diag, {"family": "counterexample_stripes", "N": int(N), "h": h})


def interface_coordinates(J: int):
    if int(J) != J or J < 1:
        raise InvalidParameterError(f"J must be a positive integer, got {J}")
    J = int(J)
    N, M = 7 * J, 4 * J
    h = 1.0 / (4 * J)
    j = np.arange(N + 1)
    xs = np.where(j <= J, j * h, 0.25 + (j - J) * h / 2)
    xs[-1] = 1.0
    ys = np.arange(M + 1) * h
    ys[-1] = 1.0
    return xs, ys, h


def generate_counterexample_interface(J: int) -> Mesh:
    """Spacing h left of x = 1/4 and h/2 right of it; asymmetric only on that line."""
    xs, ys, h = interface_coordinates(J)
    diag = np.full((len(ys) - 1, len(xs) - 1), "nw")
    return _tensor_mesh(xs, ys, diag, {"family": "counterexample_interface", "J": int(J), "h": h})


def _disk_displacements(rng, n, radius):
    # uniform on the disk: radius * sqrt(U), angle 2 pi V
    r = np.sqrt(rng.random(n))
    theta = 2.0 * np.pi * rng.random(n)
    return np.column_stack([r * np.cos(theta), r * np.sin(theta)]) * np.asarray(radius)[..., None]


def _perturbed(base: Mesh, displacement, meta) -> Mesh:
    vertices = base.vertices + displacement
    p = vertices[base.triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    bad = np.flatnonzero(signed <= 0)
    if bad.size:
        raise GenerationFailedError(
            f"perturbation produced a degenerate triangle {int(bad[0])}", triangle=int(bad[0]))
    return Mesh(vertices, base.triangles, base.boundary, meta=meta)


def generate_almost_symmetric(N: int, amplitude: float, seed: int = 0) -> Mesh:
    """O(h^2) random perturbation of the uniform symmetric mesh.

    Every interior vertex moves by a vector drawn uniformly from the disk of
    radius ``amplitude * h**2``, h = sqrt(2)/N. Boundary vertices stay fixed.
    """
    if amplitude < 0:
        raise InvalidParameterError("amplitude must be nonnegative")
    base = generate_uniform_symmetric(N)
    if amplitude == 0:
        return Mesh(base.vertices, base.triangles, base.boundary,
                    meta={**base.meta, "family": "almost_symmetric", "amplitude": 0.0, "seed": seed})
    rng = np.random.default_rng(seed)
    radius = amplitude * base.h_max ** 2
    disp = np.zeros_like(base.vertices)
    disp[base.interior] = _disk_displacements(rng, base.n_dofs, np.full(base.n_dofs, radius))
    meta = {**base.meta, "family": "almost_symmetric", "amplitude": float(amplitude), "seed": seed}
    return _perturbed(base, disp, meta)


@dataclass(frozen=True)
class Subdomain:
    """Axis-aligned rectangle of a piecewise layout with its own diagonal and perturbation."""

    x0: float
    x1: float
    y0: float
    y1: float
    diagonal: str = "nw"
    amplitude: float = 0.0


LAYOUTS = {
    "single": [Subdomain(0, 1, 0, 1, "nw")],
    "halves": [Subdomain(0, 0.5, 0, 1, "nw"), Subdomain(0.5, 1, 0, 1, "ne")],
    "quadrants": [Subdomain(0, 0.5, 0, 0.5, "nw"), Subdomain(0.5, 1, 0, 0.5, "ne"),
                  Subdomain(0, 0.5, 0.5, 1, "ne"), Subdomain(0.5, 1, 0.5, 1, "nw")],
}


def resolve_layout(layout, amplitude=None) -> list:
    if isinstance(layout, str):
        if layout not in LAYOUTS:
            raise InvalidParameterError(f"unknown layout {layout!r}; choose from {sorted(LAYOUTS)}")
        layout = LAYOUTS[layout]
    out = []
    for s in layout:
        if not isinstance(s, Subdomain):
            s = Subdomain(**s) if isinstance(s, dict) else Subdomain(*s)
        if amplitude is not None:
            s = Subdomain(s.x0, s.x1, s.y0, s.y1, s.diagonal, float(amplitude))
        out.append(s)
    return out


def generate_piecewise_almost_symmetric(layout, N: int, seed: int = 0, amplitude=None) -> Mesh:
    """Symmetric meshes on rectangular subdomains glued along grid-aligned interfaces.

    Subdomain corners must lie on the 1/N grid. Vertices on subdomain
    interfaces are shared and left in place; vertices strictly inside a
    subdomain are perturbed by up to ``amplitude * h**2``. A single-subdomain
    layout draws the same random stream as :func:`generate_almost_symmetric`.
    """
    if int(N) != N or N < 2:
        raise InvalidParameterError(f"N must be an integer >= 2, got {N}")
    N = int(N)
    subs = resolve_layout(layout, amplitude)
    owner = np.full((N, N), -1)
    for k, s in enumerate(subs):
        if s.diagonal not in ("nw", "ne"):
            raise InvalidParameterError(f"subdomain {k}: diagonal must be 'nw' or 'ne'")
        if s.amplitude < 0:
            raise InvalidParameterError(f"subdomain {k}: amplitude must be nonnegative")
        ij = []
        for c in (s.x0, s.x1, s.y0, s.y1):
            g = c * N
            if abs(g - round(g)) > 1e-9 or not 0 <= round(g) <= N:
                raise InvalidParameterError(
                    f"subdomain {k}: boundary {c} is not on the 1/{N} grid (incompatible interface)")
            ij.append(int(round(g)))
        i0, i1, j0, j1 = ij
        if i1 <= i0 or j1 <= j0:
            raise InvalidParameterError(f"subdomain {k} is empty")
        if (owner[j0:j1, i0:i1] >= 0).any():
            raise InvalidParameterError(f"subdomain {k} overlaps another subdomain")
        owner[j0:j1, i0:i1] = k
    if (owner < 0).any():
        raise InvalidParameterError("layout does not tile the unit square")
    diag = np.array([[subs[owner[m, j]].diagonal for j in range(N)] for m in range(N)])
    xs = np.arange(N + 1) / N
    base = _tensor_mesh(xs, xs, diag, {"family": "piecewise_almost_symmetric", "N": N})

    # per-vertex owner: a vertex is interior to a subdomain iff all 4 surrounding cells share it
    padded = np.full((N + 2, N + 2), -2)
    padded[1:-1, 1:-1] = owner
    quad = np.stack([padded[:-1, :-1], padded[:-1, 1:], padded[1:, :-1], padded[1:, 1:]])
    same = (quad == quad[0]).all(axis=0) & (quad[0] >= 0)
    amp_grid = np.where(same, np.array([s.amplitude for s in subs] + [0.0])[quad[0]], 0.0)
    amp = amp_grid.ravel()
    meta = {**base.meta, "seed": seed, "layout": [s.__dict__ for s in subs]}
    if not amp.any():
        return Mesh(base.vertices, base.triangles, base.boundary, meta=meta)
    rng = np.random.default_rng(seed)
    h2 = base.h_max ** 2
    disp = np.zeros_like(base.vertices)
    disp[base.interior] = _disk_displacements(rng, base.n_dofs, amp[base.interior] * h2)
    return _perturbed(base, disp, meta)


def refine(mesh: Mesh) -> Mesh:
    """Uniform red refinement: every triangle is split into four by its edge midpoints."""
    edges = mesh.edges
    nv = mesh.n_vertices
    key = {(int(a), int(b)): nv + k for k, (a, b) in enumerate(edges)}
    mids = 0.5 * (mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]])
    vertices = np.vstack([mesh.vertices, mids])
    boundary = np.concatenate([mesh.boundary, np.zeros(len(edges), dtype=bool)])
    for a, b in mesh.boundary_edges:
        boundary[key[(int(a), int(b))]] = True

    def mid(a, b):
        return key[(a, b) if a < b else (b, a)]

    tris = []
    for a, b, c in mesh.triangles.tolist():
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        tris += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
    meta = dict(mesh.meta)
    meta["refinements"] = meta.get("refinements", 0) + 1
    for axis in ("x", "y"):
        if axis in meta:
            g = np.asarray(meta[axis])
            fine = np.empty(2 * len(g) - 1)
            fine[0::2] = g
            fine[1::2] = 0.5 * (g[:-1] + g[1:])
            meta[axis] = fine.tolist()
    for k in ("N",):
        if k in meta:
            meta[k] = 2 * meta[k]
    return Mesh(vertices, np.array(tris, dtype=np.int64), boundary, meta=meta,
                regularity_bound=mesh.regularity_bound)


FAMILIES = ("uniform_symmetric", "almost_symmetric", "piecewise_almost_symmetric",
            "counterexample_stripes", "counterexample_interface")


def generate(kind: str, **params) -> Mesh:
    """Dispatch on a family name (short aliases accepted)."""
    aliases = {"symmetric": "uniform_symmetric", "almost": "almost_symmetric",
               "piecewise": "piecewise_almost_symmetric", "stripes": "counterexample_stripes",
               "interface": "counterexample_interface"}
    kind = aliases.get(kind, kind)
    if kind == "uniform_symmetric":
        return generate_uniform_symmetric(params["N"])
    if kind == "almost_symmetric":
        return generate_almost_symmetric(params["N"], params.get("amplitude", 1.0), params.get("seed", 0))
    if kind == "piecewise_almost_symmetric":
        return generate_piecewise_almost_symmetric(params.get("layout", "halves"), params["N"],
                                                   params.get("seed", 0), params.get("amplitude"))
    if kind == "counterexample_stripes":
        return generate_counterexample_stripes(params["N"])
    if kind == "counterexample_interface":
        return generate_counterexample_interface(params["J"])
    raise InvalidParameterError(f"unknown mesh family {kind!r}")


# ---------------------------------------------------------------------------
# text format:  "nv nt", nv lines "x y flag", nt lines "i j k"


def save_mesh(mesh: Mesh, path) -> None:
    lines = [f"{mesh.n_vertices} {mesh.n_triangles}"]
    lines += [f"{x!r} {y!r} {int(b)}" for (x, y), b in zip(mesh.vertices.tolist(), mesh.boundary)]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path, regularity_bound=DEFAULT_REGULARITY_BOUND) -> Mesh:
    text = Path(path).read_text().splitlines()
    if not text:
        raise MeshParseError("empty file", line=1)

    def fields(lineno, count, conv):
        if lineno > len(text):
            raise MeshParseError("unexpected end of file", line=lineno)
        parts = text[lineno - 1].split()
        if len(parts) != count:
            raise MeshParseError(f"expected {count} fields, got {len(parts)}", line=lineno)
        try:
            return [c(p) for c, p in zip(conv, parts)]
        except ValueError as err:
            raise MeshParseError(str(err), line=lineno) from None

    nv, nt = fields(1, 2, (int, int))
    if nv < 3 or nt < 1:
        raise MeshParseError("need at least 3 vertices and 1 triangle", line=1)
    vertices = np.empty((nv, 2))
    boundary = np.empty(nv, dtype=bool)
    for k in range(nv):
        x, y, flag = fields(2 + k, 3, (float, float, int))
        if flag not in (0, 1):
            raise MeshParseError(f"boundary flag must be 0 or 1, got {flag}", line=2 + k)
        vertices[k] = x, y
        boundary[k] = bool(flag)
    triangles = np.empty((nt, 3), dtype=np.int64)
    for k in range(nt):
        lineno = 2 + nv + k
        tri = fields(lineno, 3, (int, int, int))
        if min(tri) < 0 or max(tri) >= nv:
            raise MeshParseError(f"vertex index out of range in {tri}", line=lineno)
        triangles[k] = tri
    return Mesh(vertices, triangles, boundary, meta={"family": "loaded", "source": str(path)},
                regularity_bound=regularity_bound)


__all__ = [
    "Mesh", "ControlVolume", "Patch", "Subdomain", "LAYOUTS", "FAMILIES",
    "build_patch", "build_control_volumes", "classify_patch", "symmetry_report",
    "generate", "generate_uniform_symmetric", "generate_counterexample_stripes",
    "generate_counterexample_interface", "generate_almost_symmetric",
    "generate_piecewise_almost_symmetric", "refine", "save_mesh", "load_mesh",
    "grid_vertex", "stripes_coordinates", "interface_coordinates",
]
