import hashlib
import struct

import numpy as np
import pytest

from segapipe.errors import ArgumentError, FormatError
from segapipe.volgrid import (
    Geometry3,
    ImageVolume,
    LabelVolume,
    TriMesh,
    flatten_index,
    read_mhd,
    read_node_ele,
    unflatten_index,
    write_mhd,
    write_obj,
    write_stl,
)
from conftest import make_geom


def test_read_mhd_uchar_cube(tmp_path):
    (tmp_path / "m.mhd").write_text(
        "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\nElementSpacing = 1 1 1\n"
        "Offset = 0 0 0\nTransformMatrix = 1 0 0 0 1 0 0 0 1\n"
        "ElementType = MET_UCHAR\nElementDataFile = m.raw\n"
    )
    (tmp_path / "m.raw").write_bytes(b"\x01" * 8)
    vol = read_mhd(tmp_path / "m.mhd")
    assert isinstance(vol, LabelVolume)
    assert vol.voxels.sum() == 8
    assert vol.geom.spacing == (1.0, 1.0, 1.0)


def test_read_mhd_missing_key(tmp_path):
    (tmp_path / "m.mhd").write_text(
        "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\n"
        "Offset = 0 0 0\nTransformMatrix = 1 0 0 0 1 0 0 0 1\n"
        "ElementType = MET_UCHAR\nElementDataFile = m.raw\n"
    )
    with pytest.raises(FormatError, match="missing key ElementSpacing"):
        read_mhd(tmp_path / "m.mhd")


def test_read_mhd_truncated_payload(tmp_path):
    (tmp_path / "m.mhd").write_text(
        "ObjectType = Image\nNDims = 3\nDimSize = 2 2 2\nElementSpacing = 1 1 1\n"
        "Offset = 0 0 0\nTransformMatrix = 1 0 0 0 1 0 0 0 1\n"
        "ElementType = MET_UCHAR\nElementDataFile = m.raw\n"
    )
    (tmp_path / "m.raw").write_bytes(b"\x01" * 5)
    with pytest.raises(FormatError, match="payload"):
        read_mhd(tmp_path / "m.mhd")


@pytest.mark.parametrize("dtype,domain", [(np.float32, "float"), (np.int16, "short")])
def test_mhd_round_trip_bit_exact(tmp_path, dtype, domain):
    rng = np.random.default_rng(11)
    if dtype is np.float32:
        vox = rng.standard_normal((3, 4, 5)).astype(np.float32)
    else:
        vox = rng.integers(-1000, 3000, size=(3, 4, 5)).astype(np.int16)
    geom = Geometry3(dims=(5, 4, 3), spacing=(0.7, 1.1, 2.5), origin=(-3.0, 4.5, 9.25))
    vol = ImageVolume(geom=geom, voxels=vox, intensity_domain="HU")
    write_mhd(vol, tmp_path / "v.mhd")
    back = read_mhd(tmp_path / "v.mhd")
    assert back.voxels.tobytes() == vox.tobytes()
    assert back.geom.same_grid(geom)
    # payload on disk is exactly the x-fastest flat voxel order
    raw = (tmp_path / "v.raw").read_bytes()
    assert raw == vox.tobytes()


def test_mhd_round_trip_checksum_64(tmp_path):
    rng = np.random.default_rng(5)
    vox = rng.standard_normal((64, 64, 64)).astype(np.float32)
    vol = ImageVolume(geom=make_geom((64, 64, 64)), voxels=vox, intensity_domain="HU")
    write_mhd(vol, tmp_path / "big.mhd")
    back = read_mhd(tmp_path / "big.mhd")
    assert hashlib.sha256(back.voxels.tobytes()).hexdigest() == hashlib.sha256(vox.tobytes()).hexdigest()


def test_write_mhd_label_element_type(tmp_path):
    mask = LabelVolume(geom=make_geom((1, 1, 1)), voxels=np.zeros((1, 1, 1), np.uint8))
    write_mhd(mask, tmp_path / "l.mhd")
    header = (tmp_path / "l.mhd").read_text()
    assert "ElementType = MET_UCHAR" in header
    assert read_mhd(tmp_path / "l.mhd").voxels[0, 0, 0] == 0


def test_write_stl_single_triangle_size(tmp_path):
    mesh = TriMesh(vertices=np.eye(3), triangles=np.array([[0, 1, 2]], np.int32))
    write_stl(mesh, tmp_path / "t.stl")
    assert (tmp_path / "t.stl").stat().st_size == 80 + 4 + 50


def test_stl_independent_parser_round_trip(tmp_path):
    # re-read with a from-scratch struct parser, independent of the writer
    rng = np.random.default_rng(3)
    verts = rng.standard_normal((12, 3))
    tris = np.array([[i, (i + 1) % 12, (i + 5) % 12] for i in range(12)], np.int32)
    mesh = TriMesh(vertices=verts, triangles=tris)
    write_stl(mesh, tmp_path / "m.stl")
    blob = (tmp_path / "m.stl").read_bytes()
    (count,) = struct.unpack_from("<I", blob, 80)
    assert count == len(tris)
    tri_pts = []
    for k in range(count):
        vals = struct.unpack_from("<12fH", blob, 84 + 50 * k)
        tri_pts.append(np.array(vals[3:12]).reshape(3, 3))
    expected = mesh.vertices[mesh.triangles].astype(np.float32)
    assert np.array_equal(np.array(tri_pts, dtype=np.float32), expected)


def test_write_obj(tmp_path):
    mesh = TriMesh(vertices=np.eye(3), triangles=np.array([[0, 1, 2]], np.int32))
    write_obj(mesh, tmp_path / "t.obj")
    lines = (tmp_path / "t.obj").read_text().splitlines()
    assert lines[-1] == "f 1 2 3"
    assert sum(1 for ln in lines if ln.startswith("v ")) == 3


def test_node_ele_one_based(tmp_path):
    (tmp_path / "a.node").write_text("4 3 0 0\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n")
    (tmp_path / "a.ele").write_text("1 4 0\n1 1 2 3 4\n")
    tet = read_node_ele(tmp_path / "a.node", tmp_path / "a.ele")
    assert np.array_equal(tet.tets, [[0, 1, 2, 3]])
    assert np.allclose(tet.nodes[3], [0, 0, 1])


def test_node_ele_zero_based(tmp_path):
    (tmp_path / "a.node").write_text("4 3 0 0\n0 0 0 0\n1 1 0 0\n2 0 1 0\n3 0 0 1\n")
    (tmp_path / "a.ele").write_text("1 4 0\n0 0 1 2 3\n")
    tet = read_node_ele(tmp_path / "a.node", tmp_path / "a.ele")
    assert np.array_equal(tet.tets, [[0, 1, 2, 3]])


def test_node_ele_bad_reference(tmp_path):
    (tmp_path / "a.node").write_text("4 3 0 0\n1 0 0 0\n2 1 0 0\n3 0 1 0\n4 0 0 1\n")
    (tmp_path / "a.ele").write_text("1 4 0\n1 1 2 3 9\n")
    with pytest.raises(FormatError, match="references node id 9"):
        read_node_ele(tmp_path / "a.node", tmp_path / "a.ele")


def test_flatten_unflatten_bijective():
    geom = make_geom((5, 3, 4))
    seen = set()
    for z in range(4):
        for y in range(3):
            for x in range(5):
                i = flatten_index(geom, x, y, z)
                assert unflatten_index(geom, i) == (x, y, z)
                seen.add(i)
    assert seen == set(range(60))


def test_voxel_mm_round_trip():
    rng = np.random.default_rng(0)
    # random orthonormal direction via QR
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    geom = Geometry3(dims=(7, 6, 5), spacing=(0.5, 1.25, 2.0), origin=(3, -2, 7), direction=q)
    idx = rng.uniform(0, 5, size=(50, 3))
    back = geom.mm_to_voxel(geom.voxel_to_mm(idx))
    assert np.abs(back - idx).max() < 1e-9


def test_invariant_violations():
    with pytest.raises(ArgumentError):
        Geometry3(dims=(0, 1, 1), spacing=(1, 1, 1))
    with pytest.raises(ArgumentError):
        Geometry3(dims=(2, 2, 2), spacing=(1, -1, 1))
    with pytest.raises(ArgumentError):
        Geometry3(dims=(2, 2, 2), spacing=(1, 1, 1), direction=np.ones((3, 3)))
    with pytest.raises(ArgumentError):
        LabelVolume(geom=make_geom((2, 2, 2)), voxels=np.full((2, 2, 2), 3, np.uint8))
    with pytest.raises(ArgumentError):
        ImageVolume(geom=make_geom((2, 2, 2)), voxels=np.full((2, 2, 2), 1.5, np.float32),
                    intensity_domain="normalized01")
    with pytest.raises(ArgumentError):
        TriMesh(vertices=np.eye(3), triangles=np.array([[0, 1, 5]]))
    with pytest.raises(ArgumentError):
        TriMesh(vertices=np.eye(3), triangles=np.array([[0, 1, 1]]))
