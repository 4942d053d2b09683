"""Volume and mesh data model plus bit-exact file I/O.

Voxel payloads are kept in x-fastest order: the canonical in-memory form
is a C-contiguous array of shape (nz, ny, nx) indexed [z, y, x], whose
flat view is exactly the raw-file byte order. Geometry maps voxel
*centers* to physical millimetres: mm = origin + direction @ (spacing * index).
"""

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, FormatError

HU = "HU"
NORMALIZED01 = "normalized01"
PROBABILITY = "probability"

_ELEMENT_TYPES = {
    "MET_SHORT": np.dtype("<i2"),
    "MET_FLOAT": np.dtype("<f4"),
    "MET_UCHAR": np.dtype("u1"),
}
_DTYPE_TO_ELEMENT = {np.dtype(k): v for v, k in (("MET_SHORT", "<i2"), ("MET_FLOAT", "<f4"), ("MET_UCHAR", "u1"))}


@dataclass
class Geometry3:
    """Grid geometry: voxel counts, spacing (mm), origin (mm), direction cosines."""

    dims: tuple  # (nx, ny, nz)
    spacing: tuple  # (sx, sy, sz) mm
    origin: tuple = (0.0, 0.0, 0.0)
    direction: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3, 3)
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise ArgumentError(f"dims must be three positive counts, got {self.dims}")
        if any(s <= 0 for s in self.spacing):
            raise ArgumentError(f"spacing must be positive, got {self.spacing}")
        if np.abs(self.direction.T @ self.direction - np.eye(3)).max() > 1e-6:
            raise ArgumentError("direction matrix is not orthonormal")

    @property
    def shape_zyx(self):
        return (self.dims[2], self.dims[1], self.dims[0])

    def voxel_to_mm(self, idx_xyz):
        """Physical position (mm) of continuous voxel index (x, y, z); accepts (3,) or (N, 3)."""
        idx = np.asarray(idx_xyz, dtype=np.float64)
        return (self.direction @ (np.array(self.spacing) * idx).T).T + self.origin

    def mm_to_voxel(self, mm):
        """Continuous (x, y, z) voxel index of a physical position."""
        rel = np.asarray(mm, dtype=np.float64) - self.origin
        return (self.direction.T @ rel.T).T / np.array(self.spacing)

    def same_grid(self, other):
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing)
            and np.allclose(self.origin, other.origin)
            and np.allclose(self.direction, other.direction)
        )


def flatten_index(geom, x, y, z):
    """Linear payload index of voxel (x, y, z); x varies fastest."""
    nx, ny, _ = geom.dims
    return x + nx * (y + ny * z)


def unflatten_index(geom, i):
    """Inverse of flatten_index."""
    nx, ny, _ = geom.dims
    return i % nx, (i // nx) % ny, i // (nx * ny)


@dataclass
class ImageVolume:
    """Scalar volume with physical geometry; intensity_domain tags the value range."""

    geom: Geometry3
    voxels: np.ndarray  # (nz, ny, nx)
    intensity_domain: str = HU

    def __post_init__(self):
        self.voxels = np.ascontiguousarray(self.voxels)
        if self.voxels.shape != self.geom.shape_zyx:
            raise ArgumentError(
                f"voxel array shape {self.voxels.shape} does not match dims {self.geom.dims} (zyx {self.geom.shape_zyx})"
            )
        if self.intensity_domain not in (HU, NORMALIZED01, PROBABILITY):
            raise ArgumentError(f"unknown intensity domain {self.intensity_domain!r}")
        if self.intensity_domain in (NORMALIZED01, PROBABILITY):
            lo, hi = float(self.voxels.min()), float(self.voxels.max())
            if lo < 0.0 or hi > 1.0:
                raise ArgumentError(
                    f"{self.intensity_domain} volume has values outside [0, 1]: [{lo}, {hi}]"
                )


@dataclass
class LabelVolume:
    """Binary mask sharing ImageVolume geometry."""

    geom: Geometry3
    voxels: np.ndarray  # (nz, ny, nx) of {0, 1}

    def __post_init__(self):
        self.voxels = np.ascontiguousarray(self.voxels, dtype=np.uint8)
        if self.voxels.shape != self.geom.shape_zyx:
            raise ArgumentError(
                f"voxel array shape {self.voxels.shape} does not match dims {self.geom.dims} (zyx {self.geom.shape_zyx})"
            )
        if self.voxels.max(initial=0) > 1:
            raise ArgumentError("label volume has values other than 0 and 1")

    def foreground_count(self):
        return int(self.voxels.sum())


@dataclass
class TriMesh:
    """Indexed triangle surface in physical mm; triangles wind counter-clockwise seen from outside."""

    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int32

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int32).reshape(-1, 3)
        if len(self.triangles):
            if self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices):
                raise ArgumentError("triangle index out of range")
            t = self.triangles
            if np.any((t[:, 0] == t[:, 1]) | (t[:, 1] == t[:, 2]) | (t[:, 0] == t[:, 2])):
                raise ArgumentError("triangle with repeated vertex index")


@dataclass
class TetMesh:
    """Tetrahedral mesh (nodes + 4-index cells) as read from .node/.ele files."""

    nodes: np.ndarray  # (N, 3) float64
    tets: np.ndarray  # (M, 4) int32

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.float64).reshape(-1, 3)
        self.tets = np.asarray(self.tets, dtype=np.int32).reshape(-1, 4)
        if len(self.tets):
            if self.tets.min() < 0 or self.tets.max() >= len(self.nodes):
                raise ArgumentError("tet node index out of range")
            t = self.tets
            for a in range(4):
                for b in range(a + 1, 4):
                    if np.any(t[:, a] == t[:, b]):
                        raise ArgumentError("tet with repeated node index")


# ---------------------------------------------------------------------------
# MetaImage (.mhd + .raw)

_MANDATORY_KEYS = (
    "ObjectType",
    "NDims",
    "DimSize",
    "ElementSpacing",
    "Offset",
    "TransformMatrix",
    "ElementType",
    "ElementDataFile",
)


def read_mhd(path):
    """Read a MetaImage header + raw payload.

    MET_SHORT / MET_FLOAT payloads come back as ImageVolume (HU domain),
    MET_UCHAR as LabelVolume.
    """
    header = {}
    with open(path, "r", encoding="ascii") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"{path}: malformed header line {line!r}")
            key, value = line.split("=", 1)
            header[key.strip()] = value.strip()
    for key in _MANDATORY_KEYS:
        if key not in header:
            raise FormatError(f"{path}: missing key {key}")
    if header["ObjectType"] != "Image":
        raise FormatError(f"{path}: ObjectType must be Image, got {header['ObjectType']}")
    if header["NDims"] != "3":
        raise FormatError(f"{path}: NDims must be 3, got {header['NDims']}")
    if header.get("BinaryDataByteOrderMSB", "False") == "True":
        raise FormatError(f"{path}: big-endian payloads are not supported")
    if header.get("CompressedData", "False") == "True":
        raise FormatError(f"{path}: compressed payloads are not supported")
    try:
        dims = tuple(int(v) for v in header["DimSize"].split())
        spacing = tuple(float(v) for v in header["ElementSpacing"].split())
        origin = tuple(float(v) for v in header["Offset"].split())
        tmat = np.array([float(v) for v in header["TransformMatrix"].split()], dtype=np.float64)
    except ValueError as e:
        raise FormatError(f"{path}: bad numeric header value ({e})") from None
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3 or tmat.size != 9:
        raise FormatError(f"{path}: DimSize/ElementSpacing/Offset/TransformMatrix have wrong arity")
    etype = header["ElementType"]
    if etype not in _ELEMENT_TYPES:
        raise FormatError(f"{path}: unsupported ElementType {etype}")
    dtype = _ELEMENT_TYPES[etype]
    raw_path = os.path.join(os.path.dirname(os.path.abspath(path)), header["ElementDataFile"])
    if not os.path.exists(raw_path):
        raise FormatError(f"{path}: ElementDataFile {header['ElementDataFile']} not found")
    payload = np.fromfile(raw_path, dtype=dtype)
    expected = dims[0] * dims[1] * dims[2]
    if payload.size != expected:
        raise FormatError(
            f"{raw_path}: payload holds {payload.size} elements, header implies {expected}"
        )
    geom = Geometry3(dims=dims, spacing=spacing, origin=origin, direction=tmat.reshape(3, 3))
    voxels = payload.reshape(geom.shape_zyx)
    if etype == "MET_UCHAR":
        return LabelVolume(geom=geom, voxels=voxels)
    return ImageVolume(geom=geom, voxels=voxels, intensity_domain=HU)


def write_mhd(vol, path):
    """Write a volume as .mhd header + side-by-side .raw payload.

    read_mhd inverts this bit-exactly for every supported element type.
    """
    if isinstance(vol, LabelVolume):
        etype = "MET_UCHAR"
        payload = vol.voxels
    else:
        dtype = vol.voxels.dtype.newbyteorder("<")
        if np.dtype(dtype) not in _DTYPE_TO_ELEMENT:
            payload = vol.voxels.astype("<f4")
        else:
            payload = vol.voxels.astype(dtype, copy=False)
        etype = _DTYPE_TO_ELEMENT[np.dtype(payload.dtype.newbyteorder("<"))]
    base = os.path.basename(path)
    if base.endswith(".mhd"):
        base = base[:-4]
    raw_name = base + ".raw"
    g = vol.geom
    lines = [
        "ObjectType = Image",
        "NDims = 3",
        "BinaryData = True",
        "BinaryDataByteOrderMSB = False",
        "CompressedData = False",
        "TransformMatrix = " + " ".join(repr(float(v)) for v in g.direction.ravel()),
        "Offset = " + " ".join(repr(float(v)) for v in g.origin),
        "ElementSpacing = " + " ".join(repr(float(v)) for v in g.spacing),
        "DimSize = " + " ".join(str(d) for d in g.dims),
        f"ElementType = {etype}",
        f"ElementDataFile = {raw_name}",
    ]
    with open(path, "w", encoding="ascii") as f:
        f.write("\n".join(lines) + "\n")
    payload.tofile(os.path.join(os.path.dirname(os.path.abspath(path)), raw_name))


# ---------------------------------------------------------------------------
# Binary STL / ASCII OBJ

def write_stl(mesh, path):
    """Binary STL: 80-byte header, uint32 count, 50 bytes per triangle."""
    tris = mesh.vertices[mesh.triangles]  # (T, 3, 3)
    n = np.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0])
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        n = np.where(norm > 0, n / np.where(norm == 0, 1.0, norm), 0.0)
    rec = np.zeros(len(tris), dtype=[("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    rec["n"] = n
    rec["v"] = tris
    with open(path, "wb") as f:
        f.write(b"segapipe binary STL".ljust(80, b"\0"))
        f.write(struct.pack("<I", len(tris)))
        f.write(rec.tobytes())


def write_obj(mesh, path):
    """ASCII OBJ with 1-based face indices."""
    with open(path, "w", encoding="ascii") as f:
        for v in mesh.vertices:
            f.write(f"v {v[0]!r} {v[1]!r} {v[2]!r}\n")
        for t in mesh.triangles:
            f.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


# ---------------------------------------------------------------------------
# ASCII .node / .ele tetrahedral meshes

def _data_lines(path):
    with open(path, "r", encoding="ascii") as f:
        for line in f:
            line = line.split("#", 1)[0].strip()
            if line:
                yield line


def read_node_ele(node_path, ele_path):
    """Read a TetMesh from .node/.ele files; indices are normalised to 0-based."""
    lines = _data_lines(node_path)
    try:
        head = next(lines).split()
    except StopIteration:
        raise FormatError(f"{node_path}: empty file") from None
    n_nodes = int(head[0])
    if len(head) < 2 or int(head[1]) != 3:
        raise FormatError(f"{node_path}: expected 3-D nodes")
    ids = []
    pos = []
    for line in lines:
        parts = line.split()
        if len(parts) < 4:
            raise FormatError(f"{node_path}: bad node line {line!r}")
        ids.append(int(parts[0]))
        pos.append([float(parts[1]), float(parts[2]), float(parts[3])])
    if len(ids) != n_nodes:
        raise FormatError(f"{node_path}: header promises {n_nodes} nodes, found {len(ids)}")
    base = ids[0]
    if base not in (0, 1):
        raise FormatError(f"{node_path}: first node id must be 0 or 1, got {base}")
    order = np.argsort(ids)
    if not np.array_equal(np.asarray(ids)[order], np.arange(base, base + n_nodes)):
        raise FormatError(f"{node_path}: node ids are not consecutive from {base}")
    nodes = np.asarray(pos, dtype=np.float64)[order]

    lines = _data_lines(ele_path)
    try:
        head = next(lines).split()
    except StopIteration:
        raise FormatError(f"{ele_path}: empty file") from None
    n_tets = int(head[0])
    if len(head) < 2 or int(head[1]) != 4:
        raise FormatError(f"{ele_path}: expected 4-node tetrahedra")
    tets = []
    for line in lines:
        parts = line.split()
        if len(parts) < 5:
            raise FormatError(f"{ele_path}: bad element line {line!r}")
        ref = [int(v) - base for v in parts[1:5]]
        for r, raw in zip(ref, parts[1:5]):
            if r < 0 or r >= n_nodes:
                raise FormatError(f"{ele_path}: element references node id {raw} absent from {node_path}")
        tets.append(ref)
    if len(tets) != n_tets:
        raise FormatError(f"{ele_path}: header promises {n_tets} elements, found {len(tets)}")
    return TetMesh(nodes=nodes, tets=np.asarray(tets, dtype=np.int32))
