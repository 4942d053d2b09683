"""Segmentation and mesh-quality metrics: Dice, HD95 (mm), scaled Jacobian.

HD95 defaults to the pooled convention: the two directed surface-distance
sets are merged before taking the 95th percentile (linear interpolation
between closest ranks). `mode="max_directed"` takes the maximum of the
two directed percentiles instead; the two differ on asymmetric masks.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import ArgumentError, MetricUndefinedError


@dataclass
class SegScore:
    dice: float
    hd95_mm: float


@dataclass
class TetQuality:
    inverted_count: int
    median_jac: float
    jac_variance: float
    jac_skewness: float


def dice(a, b):
    """Overlap 2|A n B| / (|A| + |B|); two empty masks count as 1.0."""
    if not a.geom.same_grid(b.geom):
        raise ArgumentError("dice requires masks on the same grid")
    va = a.voxels.astype(bool)
    vb = b.voxels.astype(bool)
    na, nb = int(va.sum()), int(vb.sum())
    if na == 0 and nb == 0:
        return 1.0
    return 2.0 * int((va & vb).sum()) / (na + nb)


def surface_voxels(mask):
    """Foreground voxels with at least one face neighbour that is background or outside."""
    v = mask.voxels.astype(bool)
    interior = np.ones_like(v)
    for axis in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(1, None)
        hi[axis] = slice(None, -1)
        shifted = np.zeros_like(v)
        shifted[tuple(hi)] = v[tuple(lo)]
        interior &= shifted
        shifted = np.zeros_like(v)
        shifted[tuple(lo)] = v[tuple(hi)]
        interior &= shifted
    return v & ~interior


def _directed_distances(surf_from, surf_to, spacing_zyx):
    dt = _kernels.edt(surf_to, spacing_zyx)
    return dt[surf_from]


def hd95(a, b, mode="pooled"):
    """95th percentile of surface-to-surface Euclidean distances in mm."""
    if mode not in ("pooled", "max_directed"):
        raise ArgumentError(f"unknown hd95 mode {mode!r}")
    if not a.geom.same_grid(b.geom):
        raise ArgumentError("hd95 requires masks on the same grid")
    sa = surface_voxels(a)
    sb = surface_voxels(b)
    if not sa.any() or not sb.any():
        raise MetricUndefinedError("hd95 is undefined when either mask is empty")
    sx, sy, sz = a.geom.spacing
    spacing_zyx = (sz, sy, sx)
    d_ab = _directed_distances(sa, sb, spacing_zyx)
    d_ba = _directed_distances(sb, sa, spacing_zyx)
    if mode == "pooled":
        return float(np.percentile(np.concatenate([d_ab, d_ba]), 95))
    return float(max(np.percentile(d_ab, 95), np.percentile(d_ba, 95)))


def evaluate_pair(pred, truth, hd95_mode="pooled"):
    return SegScore(dice=dice(pred, truth), hd95_mm=hd95(pred, truth, mode=hd95_mode))


# ---------------------------------------------------------------------------
# tetrahedral quality

_CORNER_OTHERS = [(1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2)]
_CORNER_PARITY = (1.0, -1.0, 1.0, -1.0)


def corner_jacobians(nodes):
    """Determinant of the unit edge vectors at each of the 4 corners.

    Orientation-signed: all four values share the sign of the tet volume.
    Degenerate corners (a zero-length edge) yield 0.
    """
    nodes = np.asarray(nodes, dtype=np.float64).reshape(4, 3)
    out = np.empty(4)
    for i, others in enumerate(_CORNER_OTHERS):
        e = nodes[list(others)] - nodes[i]
        lens = np.linalg.norm(e, axis=1)
        prod = lens.prod()
        if prod == 0.0:
            out[i] = 0.0
        else:
            out[i] = _CORNER_PARITY[i] * np.linalg.det(e) / prod
    return out


def scaled_jacobian(nodes):
    """Minimum corner scaled Jacobian of one tet.

    Corner values are sqrt(2) * det(unit edges), the normalisation that
    scores the regular tetrahedron 1 and the unit right-corner tet
    sqrt(2)/2; values <= 0 mark inverted elements.
    """
    return float(np.sqrt(2.0) * corner_jacobians(nodes).min())


def _all_scaled_jacobians(mesh):
    p = mesh.nodes[mesh.tets]  # (M, 4, 3)
    vals = np.empty((len(mesh.tets), 4))
    for i, others in enumerate(_CORNER_OTHERS):
        e = p[:, list(others), :] - p[:, i : i + 1, :]
        lens = np.linalg.norm(e, axis=2)
        prod = lens.prod(axis=1)
        det = np.linalg.det(e)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals[:, i] = np.where(prod > 0.0, _CORNER_PARITY[i] * det / prod, 0.0)
    return np.sqrt(2.0) * vals.min(axis=1)


def tet_quality_report(mesh):
    """Scaled-Jacobian statistics over a tet mesh.

    inverted_count counts J <= 0; median interpolates between closest
    ranks; variance is the population variance; skewness is Fisher's
    m3 / m2^1.5 with the 0/0 case reported as 0.
    """
    if len(mesh.tets) == 0:
        raise ArgumentError("tet mesh has no elements")
    j = _all_scaled_jacobians(mesh)
    m = j.mean()
    m2 = ((j - m) ** 2).mean()
    m3 = ((j - m) ** 3).mean()
    skew = 0.0 if m2 == 0.0 else float(m3 / m2**1.5)
    return TetQuality(
        inverted_count=int((j <= 0.0).sum()),
        median_jac=float(np.median(j)),
        jac_variance=float(m2),
        jac_skewness=skew,
    )


# ---------------------------------------------------------------------------
# report formatting

def format_case_report(rows):
    """Line-per-case report: case_id, dice, hd95 in mm, tab-separated."""
    return "".join(f"{cid}\t{d:.6f}\t{h:.6f}\n" for cid, d, h in rows)


def format_summary_table(rows, title="Results"):
    """Summary in the ablation-table layout: config, Avg. DSC, Avg. HD95 [mm]."""
    out = [f"# {title}", "Config\tAvg. DSC\tAvg. HD95 [mm]"]
    for name, dsc, hd in rows:
        out.append(f"{name}\t{dsc:.4f}\t{hd:.2f}")
    return "\n".join(out) + "\n"
