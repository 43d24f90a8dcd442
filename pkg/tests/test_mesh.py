import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fvheat.exceptions import (FVHeatError, GenerationFailedError, InvalidParameterError, MeshParseError,
                               MeshValidationError)
from fvheat.mesh import (Mesh, build_control_volumes, build_patch, classify_patch, generate,
                         generate_almost_symmetric, generate_counterexample_interface,
                         generate_counterexample_stripes, generate_piecewise_almost_symmetric,
                         generate_uniform_symmetric, grid_vertex, interface_coordinates, load_mesh,
                         refine, save_mesh, stripes_coordinates, symmetry_report)


def all_families():
    return [generate_uniform_symmetric(8), generate_almost_symmetric(8, 1.0, seed=3),
            generate_piecewise_almost_symmetric("halves", 8, seed=1, amplitude=1.0),
            generate_piecewise_almost_symmetric("quadrants", 8, seed=2, amplitude=0.5),
            generate_counterexample_stripes(8), generate_counterexample_interface(2)]


FAMILY_MESHES = all_families()
FAMILY_IDS = ["symmetric", "almost", "halves", "quadrants", "stripes", "interface"]


def test_smallest_symmetric_mesh():
    m = generate_uniform_symmetric(2)
    assert m.n_triangles == 8
    assert m.n_dofs == 1
    p = m.patch(int(m.interior[0]))
    assert p.size == 6
    assert classify_patch(p, m.h_max) == "symmetric"


def test_n4_symmetric_everywhere():
    m = generate_uniform_symmetric(4)
    assert m.n_triangles == 32 and m.n_dofs == 9
    assert symmetry_report(m).all()


@pytest.mark.parametrize("N", [2, 4, 8, 16, 32])
def test_uniform_meshes_symmetric(N):
    assert symmetry_report(generate_uniform_symmetric(N)).all()


@pytest.mark.parametrize("mesh", FAMILY_MESHES, ids=FAMILY_IDS)
def test_structural_invariants(mesh):
    assert (mesh.signed_areas > 0).all()
    assert abs(mesh.areas.sum() - 1.0) < 1e-13
    # interior edges shared twice, boundary edges once, boundary edges on the square
    counts = np.bincount(np.unique(np.sort(mesh._all_edges, axis=1), axis=0, return_inverse=True)[1].ravel())
    assert set(counts.tolist()) <= {1, 2}
    for a, b in mesh.boundary_edges:
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        on_side = [(abs(pa[d] - c) < 1e-14 and abs(pb[d] - c) < 1e-14) for d in (0, 1) for c in (0, 1)]
        assert any(on_side)
    flagged = np.flatnonzero(~mesh.boundary)
    assert (mesh.interior_index[flagged] == np.arange(mesh.n_dofs)).all()
    assert (mesh.interior_index[mesh.boundary] == -1).all()
    assert mesh.regularity.max() <= 10.0


@pytest.mark.parametrize("mesh", FAMILY_MESHES, ids=FAMILY_IDS)
def test_patch_weights_and_volumes(mesh):
    for patch in mesh.patches:
        assert abs(patch.weights.sum() - 2 * patch.area) <= 1e-13 * patch.area
        # cyclic indexing: w_j = |tau_{j-1}| + |tau_j|
        assert np.allclose(patch.weights, np.roll(patch.areas, 1) + patch.areas, rtol=0, atol=1e-16)
    vols = mesh.control_volumes
    assert abs(sum(v.area for v in vols) - 1.0) <= 1e-13
    for v in vols:
        assert np.abs(v.normal_integral()).max() < 1e-14
    for v in vols:
        tri_sum = mesh.areas[mesh.vertex_triangles[v.vertex]].sum() / 3
        assert abs(v.area - tri_sum) < 1e-15


def test_control_volume_pieces_single_triangle():
    m = Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]], boundary=[True, True, True])
    vols = build_control_volumes(m)
    for v in vols:
        assert v.area == pytest.approx(0.5 / 3, abs=1e-16)
        # Green's theorem over the oriented boundary segments
        a, b = v.segments[:, 0], v.segments[:, 1]
        green = 0.5 * np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1])
        assert green == pytest.approx(0.5 / 3, abs=1e-15)


def test_stripes_coordinates_n4():
    xs, ys, h_grid = stripes_coordinates(4)
    h = 1 / 3
    assert h_grid == pytest.approx(h)
    assert np.allclose(xs, [0, h / 2, 1.5 * h, 2 * h, 3 * h], atol=1e-15)
    assert xs[-1] == 1.0


def test_stripes_rejects_bad_n():
    with pytest.raises(InvalidParameterError):
        generate_counterexample_stripes(6)


def test_stripes_patch_listing():
    """Area listing and weight pattern at (x_{2j}, y_m): h^2/4 x3, h^2/2 x3; weights (3,2,2,3,4,4) h^2/4."""
    N = 8
    m = generate_counterexample_stripes(N)
    h = 4 / (3 * N)
    xs = m.meta["x"]
    for j in range(2, len(xs) - 1, 2):
        for row in (1, 2, 3):
            p = m.patch(grid_vertex(m, j, row))
            areas = np.sort(p.areas / h ** 2)
            assert np.allclose(areas, [0.25] * 3 + [0.5] * 3, atol=1e-12)
            w = p.weights * 4 / h ** 2
            target = np.array([3, 2, 2, 3, 4, 4], dtype=float)
            assert any(np.allclose(np.roll(w, s), target, atol=1e-12) for s in range(6))


def test_stripes_first_moment_direction():
    """sum w_j (zeta_j - zeta_0) is (h^3/108)^(-1)-scaled (3,-1) up to the stencil factor."""
    m = generate_counterexample_stripes(8)
    h = 4 / 24
    p = m.patch(grid_vertex(m, 2, 2))
    mom = p.first_moment() / h ** 3
    assert np.allclose(mom, [-1.5, 0.5], atol=1e-12)


def test_stripes_never_symmetric():
    for N in (8, 16):
        assert not symmetry_report(generate_counterexample_stripes(N)).any()


def test_interface_coordinates_j1():
    xs, ys, h = interface_coordinates(1)
    assert h == 0.25
    assert np.allclose(xs, [0, 1 / 4, 3 / 8, 1 / 2, 5 / 8, 3 / 4, 7 / 8, 1], atol=1e-15)
    assert len(ys) == 5


@pytest.mark.parametrize("J", [1, 2, 4])
def test_interface_asymmetry_only_on_line(J):
    m = generate_counterexample_interface(J)
    nx, ny = len(m.meta["x"]), len(m.meta["y"])
    assert m.n_vertices == nx * ny
    sym = symmetry_report(m)
    x = m.vertices[m.interior][:, 0]
    on_line = np.abs(x - 0.25) < 1e-12
    assert (~sym == on_line).all()


def test_almost_symmetric_zero_amplitude_matches():
    a = generate_almost_symmetric(8, 0.0)
    b = generate_uniform_symmetric(8)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.triangles, b.triangles)


def test_almost_symmetric_displacement_bound():
    N = 16
    base = generate_uniform_symmetric(N)
    m = generate_almost_symmetric(N, 1.0, seed=7)
    disp = np.linalg.norm(m.vertices - base.vertices, axis=1)
    assert disp.max() <= base.h_max ** 2 + 1e-15
    assert (disp[base.boundary] == 0).all()
    assert m.regularity.max() <= 2 * base.regularity.max()


def test_almost_symmetric_too_coarse_raises():
    # at N = 4 an h^2 displacement is a third of h; most seeds degenerate
    with pytest.raises(FVHeatError):
        generate_almost_symmetric(4, 1.0, seed=0)


def test_almost_symmetric_deterministic():
    a = generate_almost_symmetric(8, 1.0, seed=11)
    b = generate_almost_symmetric(8, 1.0, seed=11)
    c = generate_almost_symmetric(8, 1.0, seed=12)
    assert np.array_equal(a.vertices, b.vertices)
    assert not np.array_equal(a.vertices, c.vertices)


def test_almost_symmetric_huge_amplitude_fails():
    with pytest.raises(GenerationFailedError):
        for seed in range(20):
            generate_almost_symmetric(4, 200.0, seed=seed)


def test_piecewise_halves_asymmetry_near_interface():
    m = generate_piecewise_almost_symmetric("halves", 8, amplitude=0.0)
    sym = symmetry_report(m)
    x = m.vertices[m.interior][:, 0]
    assert (np.abs(x[~sym] - 0.5) <= m.h_max + 1e-12).all()
    assert (~sym).any()


def test_piecewise_single_reduces_to_almost():
    a = generate_piecewise_almost_symmetric("single", 8, seed=4, amplitude=1.0)
    b = generate_almost_symmetric(8, 1.0, seed=4)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.triangles, b.triangles)


def test_piecewise_interface_vertices_fixed():
    base = generate_piecewise_almost_symmetric("halves", 8, amplitude=0.0)
    m = generate_piecewise_almost_symmetric("halves", 8, seed=5, amplitude=1.0)
    on_interface = np.abs(base.vertices[:, 0] - 0.5) < 1e-14
    assert np.array_equal(m.vertices[on_interface], base.vertices[on_interface])


def test_piecewise_incompatible_interface():
    with pytest.raises(InvalidParameterError, match="incompatible"):
        generate_piecewise_almost_symmetric("halves", 5)


def test_classify_odd_patch_asymmetric():
    # a vertex surrounded by 5 triangles
    ang = np.linspace(0, 2 * np.pi, 6)[:-1]
    verts = np.vstack([[0, 0], np.column_stack([np.cos(ang), np.sin(ang)])])
    tris = [[0, 1 + i, 1 + (i + 1) % 5] for i in range(5)]
    m = Mesh(verts, tris, boundary=[False] + [True] * 5)
    p = build_patch(m, 0)
    assert p.size == 5
    assert classify_patch(p, m.h_max) == "asymmetric"


def test_refine_halves_h():
    m = generate_almost_symmetric(8, 0.5, seed=1)
    r = refine(m)
    assert r.n_triangles == 4 * m.n_triangles
    assert r.h_max == pytest.approx(m.h_max / 2, rel=0.01)
    assert abs(r.areas.sum() - 1) < 1e-13


def test_generate_dispatch():
    assert generate("stripes", N=8).meta["family"] == "counterexample_stripes"
    with pytest.raises(InvalidParameterError):
        generate("hexagonal", N=4)


def test_save_load_roundtrip(tmp_path):
    m = generate_almost_symmetric(8, 1.0, seed=2)
    path = tmp_path / "m.txt"
    save_mesh(m, path)
    back = load_mesh(path)
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.boundary, m.boundary)


def test_load_truncated(tmp_path):
    m = generate_uniform_symmetric(4)
    path = tmp_path / "m.txt"
    save_mesh(m, path)
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(MeshParseError, match="line"):
        load_mesh(path)


def test_load_bad_field(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text("3 1\n0 0 1\n1 zero 1\n0 1 1\n0 1 2\n")
    with pytest.raises(MeshParseError, match="line 3"):
        load_mesh(path)


def test_load_zero_area_triangle(tmp_path):
    path = tmp_path / "m.txt"
    path.write_text("4 2\n0 0 1\n1 0 1\n0 1 1\n2 0 1\n0 1 2\n0 1 3\n")
    with pytest.raises(MeshValidationError, match="triangle 1") as info:
        load_mesh(path)
    assert info.value.triangle == 1


def test_mesh_arrays_read_only():
    m = generate_uniform_symmetric(4)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 3.0


@settings(max_examples=15, deadline=None)
@given(N=st.sampled_from([8, 10, 12, 16]), amp=st.floats(0, 1), seed=st.integers(0, 10_000))
def test_almost_symmetric_property(N, amp, seed):
    m = generate_almost_symmetric(N, amp, seed=seed)
    assert abs(m.areas.sum() - 1) < 1e-13
    assert abs(sum(v.area for v in m.control_volumes) - 1) < 1e-13
    for p in m.patches:
        assert abs(p.weights.sum() - 2 * p.area) <= 1e-13 * p.area
