"""Mask-to-surface meshing: marching cubes, windowed-sinc smoothing, hole closing.

The 256-case triangle table is generated at import from a per-face
marching-squares rule (runs of inside corners along each face perimeter,
saddles always split so inside corners stay separated). Because every
cell resolves a shared face from the same four values with the same
rule, neighbouring cells emit matching segments and the extracted
surface is watertight by construction.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import sparse

from . import _kernels
from .errors import ArgumentError, TopologyError
from .volgrid import TriMesh

# cube corners: bit 0 -> +x, bit 1 -> +y, bit 2 -> +z
_CORNER = [(c & 1, (c >> 1) & 1, (c >> 2) & 1) for c in range(8)]

# 12 cell edges as (corner, corner | axis_bit); ids 0-3 x, 4-7 y, 8-11 z
_EDGES = []
for _axis, _bit in ((0, 1), (1, 2), (2, 4)):
    for _c in range(8):
        if not _c & _bit:
            _EDGES.append((_c, _c | _bit, _axis))
_EDGE_ID = {(a, b): i for i, (a, b, _) in enumerate(_EDGES)}
_EDGE_ID.update({(b, a): i for i, (a, b, _) in enumerate(_EDGES)})


def _face_perimeters():
    """Corner loops of the 6 faces, counter-clockwise seen from outside the cell."""
    cross = {(1, 2): 0, (2, 0): 1, (0, 1): 2}
    faces = []
    for axis in range(3):
        p, q = [(1, 2), (2, 0), (0, 1)][axis]
        assert cross[(p, q)] == axis
        for side in (0, 1):
            u, v = (p, q) if side == 1 else (q, p)
            loop = []
            for uu, vv in ((0, 0), (1, 0), (1, 1), (0, 1)):
                coord = [0, 0, 0]
                coord[axis] = side
                coord[u] = uu
                coord[v] = vv
                loop.append(coord[0] | (coord[1] << 1) | (coord[2] << 2))
            faces.append(loop)
    return faces


_FACES = _face_perimeters()


def _face_segments(perim, inside):
    """Directed contour segments of one face: (exit edge id -> entry edge id).

    Maximal circular runs of inside corners each emit one segment from the
    run's exit crossing to its entry crossing; a saddle face therefore
    yields two segments keeping the diagonal inside corners apart.
    """
    flags = [inside[c] for c in perim]
    if all(flags) or not any(flags):
        return []
    segs = []
    for i in range(4):
        if flags[i] and not flags[i - 1]:  # run starts at i
            j = i
            while flags[(j + 1) % 4]:
                j = (j + 1) % 4
            entry = _EDGE_ID[(perim[i - 1], perim[i])]
            exit_ = _EDGE_ID[(perim[j], perim[(j + 1) % 4])]
            segs.append((entry, exit_))
    return segs


_CENTER_ID = 12  # pseudo-edge id: vertex at the cell midpoint


@lru_cache(maxsize=1)
def mc_tables():
    """Triangle table for all 256 corner configurations.

    Triangles reference the 12 cell-edge crossings plus id 12, the cell
    midpoint. Loops of 3 crossings emit one triangle; longer loops are
    star-triangulated from the midpoint, so no triangle edge other than a
    contour segment ever lies inside a cell face — adjacent cells then
    cannot double up a mesh edge. Returns (tri_counts[256], tri_offsets[256],
    tri_edges flat, edge_axis[13], edge_base[13, 3]).
    """
    counts = np.zeros(256, dtype=np.int32)
    offsets = np.zeros(256, dtype=np.int32)
    edges_flat = []
    for case in range(256):
        inside = [(case >> c) & 1 for c in range(8)]
        seg = {}
        for perim in _FACES:
            for a, b in _face_segments(perim, inside):
                assert a not in seg
                seg[a] = b
        offsets[case] = len(edges_flat)
        ntri = 0
        remaining = dict(seg)
        while remaining:
            start = min(remaining)
            loop = [start]
            nxt = remaining.pop(start)
            while nxt != start:
                loop.append(nxt)
                nxt = remaining.pop(nxt)
            assert len(loop) >= 3
            if len(loop) == 3:
                edges_flat.extend(loop)
                ntri += 1
            else:
                for i in range(len(loop)):
                    edges_flat.extend((_CENTER_ID, loop[i], loop[(i + 1) % len(loop)]))
                    ntri += 1
        counts[case] = ntri
    edge_axis = np.array([e[2] for e in _EDGES] + [3], dtype=np.int32)
    edge_base = np.array([_CORNER[e[0]] for e in _EDGES] + [(0, 0, 0)], dtype=np.int32)
    return counts, offsets, np.array(edges_flat, dtype=np.int32), edge_axis, edge_base


def marching_cubes(mask):
    """Extract the foreground surface of a binary mask as a triangle mesh (mm).

    The mask is padded with one background layer so surfaces touching the
    border close; vertices sit midway between adjacent voxel centers.
    """
    padded = np.pad(mask.voxels, 1)
    keys = _kernels.mc_cell_triangles(padded, *mc_tables())
    if len(keys) == 0:
        return TriMesh(vertices=np.zeros((0, 3)), triangles=np.zeros((0, 3), dtype=np.int32))
    uniq, inv = np.unique(keys.ravel(), return_inverse=True)
    tris = inv.reshape(-1, 3).astype(np.int32)
    Zp, Yp, Xp = padded.shape
    nvox = Zp * Yp * Xp
    axis = uniq // nvox
    lin = uniq % nvox
    x = (lin % Xp).astype(np.float64)
    y = ((lin // Xp) % Yp).astype(np.float64)
    z = (lin // (Xp * Yp)).astype(np.float64)
    idx = np.stack([x, y, z], axis=1) - 1.0  # unpad
    for a, col in ((0, 0), (1, 1), (2, 2)):
        idx[axis == a, col] += 0.5
    idx[axis == 3] += 0.5  # cell-midpoint vertices
    verts = mask.geom.voxel_to_mm(idx)
    return TriMesh(vertices=verts, triangles=tris)


# ---------------------------------------------------------------------------
# windowed-sinc smoothing

@dataclass
class SmoothingConfig:
    boundary_smoothing: bool = False
    feature_edge_smoothing: bool = False
    iterations: int = 25
    feature_angle: float = 120.0
    pass_band: float = 0.001
    non_manifold_smoothing: bool = True

    def __post_init__(self):
        if self.iterations < 0:
            raise ArgumentError("iterations must be >= 0")
        if not 0.0 < self.pass_band < 2.0:
            raise ArgumentError("pass band must lie in (0, 2)")


SURFACE_PRESET = SmoothingConfig(False, False, 25, 120.0, 0.001, True)
VOLUMETRIC_PRESET = SmoothingConfig(True, True, 30, 120.0, 0.001, True)


def _edge_incidence(triangles):
    """Undirected edge array (E, 2) and per-edge triangle incidence counts."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    und = np.sort(e, axis=1)
    uniq, inverse, counts = np.unique(und, axis=0, return_inverse=True, return_counts=True)
    return e, und, uniq, inverse, counts


def _feature_edges(mesh, uniq, inverse, counts, feature_angle):
    """Mark manifold edges whose face normals disagree by more than feature_angle degrees."""
    tri = mesh.vertices[mesh.triangles]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    ln = np.linalg.norm(n, axis=1)
    n = n / np.where(ln > 1e-30, ln, 1.0)[:, None]
    tri_of_edge = np.tile(np.arange(len(mesh.triangles)), 3)
    first = np.full(len(uniq), -1, dtype=np.int64)
    second = np.full(len(uniq), -1, dtype=np.int64)
    for k in range(len(inverse)):
        e = inverse[k]
        if first[e] < 0:
            first[e] = tri_of_edge[k]
        elif second[e] < 0:
            second[e] = tri_of_edge[k]
    feat = np.zeros(len(uniq), dtype=bool)
    man = (counts == 2) & (second >= 0)
    dots = np.einsum("ij,ij->i", n[first[man]], n[second[man]])
    ang = np.degrees(np.arccos(np.clip(dots, -1.0, 1.0)))
    feat[man] = ang > feature_angle
    return feat


def windowed_sinc_smooth(mesh, cfg):
    """Low-pass vertex smoothing via a Chebyshev windowed-sinc filter.

    The ideal low-pass with cutoff pass_band in the Laplacian spectrum
    [0, 2] is windowed (Hamming) to `iterations` Chebyshev terms and the
    coefficients renormalised so constants pass unchanged, which is what
    makes the filter shrinkage-resistant. Connectivity never changes;
    fewer than 2 iterations returns the input unchanged.
    """
    if cfg.iterations < 2 or len(mesh.triangles) == 0:
        return mesh
    nv = len(mesh.vertices)
    _, und, uniq, inverse, counts = _edge_incidence(mesh.triangles)

    fixed = np.zeros(nv, dtype=bool)
    if not cfg.boundary_smoothing:
        b = uniq[counts == 1]
        fixed[b.ravel()] = True
    if not cfg.non_manifold_smoothing:
        nm = uniq[counts >= 3]
        fixed[nm.ravel()] = True

    # neighbour sets: default full 1-ring; feature vertices slide along the crease
    ring_src = np.concatenate([uniq[:, 0], uniq[:, 1]])
    ring_dst = np.concatenate([uniq[:, 1], uniq[:, 0]])
    use_ring = np.ones(nv, dtype=bool)
    extra_rows = extra_cols = None
    if cfg.feature_edge_smoothing:
        feat = _feature_edges(mesh, uniq, inverse, counts, cfg.feature_angle)
        deg_feat = np.zeros(nv, dtype=np.int64)
        fe = uniq[feat]
        np.add.at(deg_feat, fe.ravel(), 1)
        corner = deg_feat >= 3
        fixed |= corner
        crease = (deg_feat == 2) & ~fixed
        if crease.any():
            keep = crease[fe[:, 0]] | crease[fe[:, 1]]
            fk = fe[keep]
            sel0 = crease[fk[:, 0]]
            sel1 = crease[fk[:, 1]]
            extra_rows = np.concatenate([fk[sel0, 0], fk[sel1, 1]])
            extra_cols = np.concatenate([fk[sel0, 1], fk[sel1, 0]])
            use_ring &= ~crease

    active = ~fixed & use_ring
    sel = active[ring_src]
    rows = ring_src[sel]
    cols = ring_dst[sel]
    if extra_rows is not None:
        rows = np.concatenate([rows, extra_rows])
        cols = np.concatenate([cols, extra_cols])
    deg = np.zeros(nv, dtype=np.float64)
    np.add.at(deg, rows, 1.0)
    vals = 1.0 / deg[rows]
    lonely = deg == 0  # unreferenced or isolated: keep in place
    diag_idx = np.nonzero(fixed | lonely)[0]
    rows = np.concatenate([rows, diag_idx])
    cols = np.concatenate([cols, diag_idx])
    vals = np.concatenate([vals, np.ones(len(diag_idx))])
    W = sparse.csr_matrix((vals, (rows, cols)), shape=(nv, nv))

    n_it = int(cfg.iterations)
    # ideal cutoff sits one Hamming main-lobe half-width above the passband
    # edge, so the realized response stays ~1 through the whole passband
    # instead of sagging mid-transition; coefficients are renormalised to
    # unit gain at eigenvalue 0 (exact constant/translation invariance)
    theta_c = np.arccos(1.0 - cfg.pass_band) + 4.0 * np.pi / (n_it + 1)
    j = np.arange(n_it + 1)
    c = np.empty(n_it + 1)
    c[0] = theta_c / np.pi
    c[1:] = 2.0 * np.sin(j[1:] * theta_c) / (j[1:] * np.pi)
    window = 0.54 + 0.46 * np.cos(np.pi * j / (n_it + 1))
    coeff = window * c
    coeff /= coeff.sum()

    t_prev = mesh.vertices.copy()
    t_cur = W @ t_prev
    acc = coeff[0] * t_prev + coeff[1] * t_cur
    for jj in range(2, n_it + 1):
        t_prev, t_cur = t_cur, 2.0 * (W @ t_cur) - t_prev
        acc += coeff[jj] * t_cur
    return TriMesh(vertices=acc, triangles=mesh.triangles.copy())


# ---------------------------------------------------------------------------
# watertightness

@dataclass
class WatertightReport:
    watertight: bool
    boundary_edges: int
    non_manifold_edges: int
    euler_characteristic: int


def check_watertight(mesh):
    """Edge-incidence audit: closed orientable surfaces have every edge used twice, oppositely."""
    if len(mesh.vertices) == 0 or len(mesh.triangles) == 0:
        return WatertightReport(False, 0, 0, 0)
    e, und, uniq, inverse, counts = _edge_incidence(mesh.triangles)
    boundary = int((counts == 1).sum())
    non_manifold = int((counts >= 3).sum())
    directed = e[:, 0] * np.int64(len(mesh.vertices)) + e[:, 1]
    orient_ok = len(np.unique(directed)) == len(directed)
    chi = len(mesh.vertices) - len(uniq) + len(mesh.triangles)
    ok = boundary == 0 and non_manifold == 0 and orient_ok
    return WatertightReport(bool(ok), boundary, non_manifold, int(chi))


def enclosed_volume(mesh):
    """Signed volume via the divergence theorem; positive for outward orientation."""
    t = mesh.vertices[mesh.triangles]
    return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)


def close_holes(mesh):
    """Cap every boundary loop with a centroid fan; never removes triangles."""
    if len(mesh.triangles) == 0:
        return mesh
    e, und, uniq, inverse, counts = _edge_incidence(mesh.triangles)
    boundary_mask = counts[inverse] == 1
    bdir = e[boundary_mask]
    if len(bdir) == 0:
        return mesh
    nxt = {}
    for a, b in bdir:
        if int(b) in nxt:
            raise TopologyError(f"non-orientable boundary at vertex {int(b)}")
        nxt[int(b)] = int(a)  # cap traverses opposite to the surviving edge
    new_verts = [mesh.vertices]
    new_tris = [mesh.triangles]
    nv = len(mesh.vertices)
    visited = set()
    for start in sorted(nxt):
        if start in visited:
            continue
        loop = [start]
        visited.add(start)
        cur = nxt[start]
        while cur != start:
            if cur in visited:
                raise TopologyError(f"boundary loops share vertex {cur}")
            loop.append(cur)
            visited.add(cur)
            cur = nxt[cur]
        centroid = mesh.vertices[loop].mean(axis=0)
        new_verts.append(centroid[None, :])
        tris = np.array(
            [[loop[i], loop[(i + 1) % len(loop)], nv] for i in range(len(loop))], dtype=np.int32
        )
        new_tris.append(tris)
        nv += 1
    return TriMesh(vertices=np.concatenate(new_verts), triangles=np.concatenate(new_tris))
