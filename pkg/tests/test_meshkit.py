import numpy as np
import pytest

from segapipe.errors import ArgumentError, TopologyError
from segapipe.meshkit import (
    SURFACE_PRESET,
    VOLUMETRIC_PRESET,
    SmoothingConfig,
    check_watertight,
    close_holes,
    enclosed_volume,
    marching_cubes,
    windowed_sinc_smooth,
)
from segapipe.volgrid import LabelVolume, TriMesh
from conftest import icosphere, make_geom


def _mask(vox, spacing=(1.0, 1.0, 1.0)):
    nz, ny, nx = vox.shape
    return LabelVolume(geom=make_geom((nx, ny, nz), spacing), voxels=vox.astype(np.uint8))


# -- marching cubes -----------------------------------------------------------

def test_empty_mask_empty_mesh():
    mesh = marching_cubes(_mask(np.zeros((3, 3, 3))))
    assert len(mesh.vertices) == 0 and len(mesh.triangles) == 0
    assert not check_watertight(mesh).watertight


def test_single_voxel_octahedron():
    vox = np.zeros((3, 3, 3))
    vox[1, 1, 1] = 1
    mesh = marching_cubes(_mask(vox))
    assert len(mesh.vertices) == 6
    assert len(mesh.triangles) == 8
    rep = check_watertight(mesh)
    assert rep.watertight and rep.euler_characteristic == 2
    assert enclosed_volume(mesh) > 0


def test_block_watertight_euler():
    vox = np.zeros((4, 4, 4))
    vox[1:3, 1:3, 1:3] = 1
    rep = check_watertight(marching_cubes(_mask(vox)))
    assert rep.watertight and rep.euler_characteristic == 2


def test_vertices_near_crossing_segments():
    # every unsmoothed vertex sits on a segment between adjacent voxel
    # centers, i.e. within half a voxel diagonal of a foreground center
    rng = np.random.default_rng(3)
    vox = (rng.random((6, 6, 6)) < 0.4).astype(np.uint8)
    mask = _mask(vox, spacing=(1.0, 2.0, 0.5))
    mesh = marching_cubes(mask)
    fg = np.argwhere(vox)[:, ::-1] * np.array(mask.geom.spacing)  # zyx -> xyz mm
    half_diag = np.linalg.norm(np.array(mask.geom.spacing)) / 2.0 + 1e-9
    for v in mesh.vertices:
        assert np.linalg.norm(fg - v, axis=1).min() <= half_diag


def test_marching_cubes_watertight_500_random_masks():
    rng = np.random.default_rng(17)
    for trial in range(500):
        dims = rng.integers(1, 13, size=3)
        vox = (rng.random(tuple(dims)) < rng.uniform(0.1, 0.9)).astype(np.uint8)
        mesh = marching_cubes(_mask(vox))
        if vox.sum() == 0:
            assert len(mesh.triangles) == 0
            continue
        rep = check_watertight(mesh)
        assert rep.watertight, f"trial {trial}: {rep}"
        assert enclosed_volume(mesh) > 0, f"trial {trial}"


def test_mesh_volume_close_to_voxel_volume():
    vox = np.zeros((8, 8, 8))
    vox[2:6, 2:6, 2:6] = 1
    mesh = marching_cubes(_mask(vox))
    assert enclosed_volume(mesh) == pytest.approx(64.0, rel=0.1)


# -- watertight report --------------------------------------------------------

def test_two_disjoint_octahedra_chi_4():
    vox = np.zeros((3, 3, 7))
    vox[1, 1, 1] = 1
    vox[1, 1, 5] = 1
    rep = check_watertight(marching_cubes(_mask(vox)))
    assert rep.watertight and rep.euler_characteristic == 4


def test_open_mesh_reported():
    tri = TriMesh(vertices=np.eye(3), triangles=np.array([[0, 1, 2]], np.int32))
    rep = check_watertight(tri)
    assert not rep.watertight
    assert rep.boundary_edges == 3


# -- smoothing ----------------------------------------------------------------

def test_smoothing_zero_iterations_identity():
    s = icosphere(subdiv=1)
    out = windowed_sinc_smooth(s, SmoothingConfig(iterations=0))
    assert np.array_equal(out.vertices, s.vertices)


def test_smoothing_below_window_length_returns_input():
    s = icosphere(subdiv=1)
    out = windowed_sinc_smooth(s, SmoothingConfig(iterations=1))
    assert out is s


def test_smoothing_flat_plane_fixed_point():
    n = 9
    xs, ys = np.meshgrid(np.arange(n, dtype=float), np.arange(n, dtype=float))
    verts = np.stack([xs.ravel(), ys.ravel(), np.zeros(n * n)], axis=1)
    tris = []
    for i in range(n - 1):
        for j in range(n - 1):
            a = i * n + j
            tris += [[a, a + 1, a + n + 1], [a, a + n + 1, a + n]]
    plane = TriMesh(vertices=verts, triangles=np.array(tris, np.int32))
    out = windowed_sinc_smooth(plane, SURFACE_PRESET)
    interior = np.ones(n * n, bool)
    interior[:n] = interior[-n:] = False
    interior[::n] = interior[n - 1 :: n] = False
    assert np.abs(out.vertices - plane.vertices)[interior].max() < 1e-6


@pytest.mark.parametrize("preset", [SURFACE_PRESET, VOLUMETRIC_PRESET])
def test_smoothing_icosphere_volume_within_5_percent(preset):
    s = icosphere(radius=10.0, subdiv=3)
    v0 = enclosed_volume(s)
    out = windowed_sinc_smooth(s, preset)
    assert len(out.vertices) == len(s.vertices)
    assert len(out.triangles) == len(s.triangles)
    assert np.array_equal(out.triangles, s.triangles)
    assert abs(enclosed_volume(out) / v0 - 1.0) < 0.05


def test_smoothing_reduces_voxel_roughness():
    zz, yy, xx = np.indices((24, 24, 24))
    ball = (((zz - 11.5) ** 2 + (yy - 11.5) ** 2 + (xx - 11.5) ** 2) <= 64).astype(np.uint8)
    mesh = marching_cubes(_mask(ball))
    out = windowed_sinc_smooth(mesh, SURFACE_PRESET)
    c = np.array([11.5, 11.5, 11.5])
    rough_in = np.linalg.norm(mesh.vertices - c, axis=1).std()
    rough_out = np.linalg.norm(out.vertices - c, axis=1).std()
    assert rough_out < 0.5 * rough_in


def test_smoothing_deterministic():
    s = icosphere(subdiv=2)
    a = windowed_sinc_smooth(s, SURFACE_PRESET)
    b = windowed_sinc_smooth(s, SURFACE_PRESET)
    assert a.vertices.tobytes() == b.vertices.tobytes()


def test_smoothing_config_validation():
    with pytest.raises(ArgumentError):
        SmoothingConfig(pass_band=2.5)
    with pytest.raises(ArgumentError):
        SmoothingConfig(iterations=-1)


# -- close_holes --------------------------------------------------------------

def _octahedron():
    vox = np.zeros((3, 3, 3))
    vox[1, 1, 1] = 1
    return marching_cubes(_mask(vox))


def test_close_holes_watertight_unchanged():
    octa = _octahedron()
    out = close_holes(octa)
    assert np.array_equal(out.triangles, octa.triangles)
    assert np.array_equal(out.vertices, octa.vertices)


def test_close_holes_missing_triangle():
    octa = _octahedron()
    holed = TriMesh(vertices=octa.vertices, triangles=octa.triangles[:-1])
    assert check_watertight(holed).boundary_edges == 3
    closed = close_holes(holed)
    rep = check_watertight(closed)
    assert rep.watertight and rep.boundary_edges == 0
    assert len(closed.triangles) >= len(holed.triangles) + 1


def test_close_holes_open_cylinder_two_loops():
    k, levels = 12, 5
    ang = np.linspace(0, 2 * np.pi, k, endpoint=False)
    verts = np.array([[np.cos(a), np.sin(a), float(z)] for z in range(levels) for a in ang])
    tris = []
    for z in range(levels - 1):
        for i in range(k):
            a = z * k + i
            b = z * k + (i + 1) % k
            tris += [[a, b, b + k], [a, b + k, a + k]]
    cyl = TriMesh(vertices=verts, triangles=np.array(tris, np.int32))
    assert check_watertight(cyl).boundary_edges == 2 * k
    closed = close_holes(cyl)
    rep = check_watertight(closed)
    assert rep.watertight
    assert rep.euler_characteristic == 2
    assert len(closed.vertices) == len(cyl.vertices) + 2  # one centroid per loop


def test_close_holes_never_removes_triangles():
    octa = _octahedron()
    holed = TriMesh(vertices=octa.vertices, triangles=octa.triangles[:-2])
    closed = close_holes(holed)
    as_sets = {tuple(sorted(t)) for t in holed.triangles.tolist()}
    out_sets = {tuple(sorted(t)) for t in closed.triangles.tolist()}
    assert as_sets <= out_sets


def test_close_holes_non_orientable_rejected():
    # two triangles traversing a shared edge in the same direction leave
    # a vertex with two outgoing boundary successors
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], float)
    tris = np.array([[0, 1, 2], [0, 1, 3]], np.int32)
    with pytest.raises(TopologyError):
        close_holes(TriMesh(vertices=verts, triangles=tris))
