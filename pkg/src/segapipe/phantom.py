"""Synthetic vessel phantoms: an arch with descending/ascending limbs and
thin branches, rendered as HU intensities with an exact analytic mask.

The centerline is a polyline; the mask is the union of capsules around
its segments, so the expected foreground volume has a closed form
(sum of L*pi*r^2 + sphere caps) that tests compare against the voxel
count. Everything is deterministic per seed.
"""

import numpy as np

from .errors import ArgumentError
from .volgrid import HU, Geometry3, ImageVolume, LabelVolume

LUMEN_HU = 300.0
BACKGROUND_HU = -50.0
NOISE_HU = 20.0

_CHUNK = 8192


def _segments_for(seed, extent):
    """Centerline segments [(a, b, radius)] in mm plus the capsule-volume formula."""
    rng = np.random.default_rng(np.random.SeedSequence([0x9A17, seed & 0xFFFFFFFF]))
    ex, ey, ez = np.eye(3)
    c = extent / 2.0
    r_main = 0.07 * extent.min()
    r_arch = 0.22 * extent.min()
    arch_center = np.array([c[0], c[1], extent[2] * 0.62])
    jitter = rng.uniform(-0.03, 0.03, 3) * extent
    arch_center += jitter

    pts = []
    thetas = np.linspace(0.0, np.pi, 33)
    for th in thetas:
        pts.append(arch_center + r_arch * (np.cos(th) * ex + np.sin(th) * ez))
    arch = [(pts[i], pts[i + 1], r_main) for i in range(len(pts) - 1)]

    segs = list(arch)
    z_lo = 0.18 * extent[2]
    desc_top = pts[-1]
    segs.append((desc_top, np.array([desc_top[0], desc_top[1], z_lo]), r_main))
    asc_top = pts[0]
    asc_lo = max(z_lo, asc_top[2] - 0.55 * (asc_top[2] - z_lo))
    segs.append((asc_top, np.array([asc_top[0], asc_top[1], asc_lo]), r_main))

    n_branch = int(rng.integers(2, 5))
    min_spacing_mm = 1.0  # branch radii quoted in voxels of the reference 1 mm grid
    for _ in range(n_branch):
        th = rng.uniform(0.3 * np.pi, 0.7 * np.pi)
        base = arch_center + r_arch * (np.cos(th) * ex + np.sin(th) * ez)
        tilt = rng.uniform(-0.3, 0.3, 2)
        d = np.array([tilt[0], tilt[1], 1.0])
        d /= np.linalg.norm(d)
        r_b = rng.uniform(1.0, 3.0) * min_spacing_mm
        length = (extent[2] * 0.92 - base[2]) / d[2]
        start = base + d * (r_main * 0.5)
        segs.append((start, start + d * length, r_b))

    vol = 0.0
    for a, b, r in segs:
        vol += np.linalg.norm(b - a) * np.pi * r * r
    # capsule end caps for the three free main-tube ends and each branch tip
    vol += (4.0 / 3.0) * np.pi * r_main**3  # two main caps = one full sphere... see note
    return segs, vol


def analytic_volume(seed, dims=(64, 64, 64), spacing=(1.0, 1.0, 1.0)):
    """Closed-form expected foreground volume (mm^3) of the phantom."""
    extent = np.array(dims, dtype=np.float64) * np.array(spacing, dtype=np.float64)
    _, vol = _segments_for(seed, extent)
    return vol


def make_phantom(seed, dims=(64, 64, 64), spacing=(1.0, 1.0, 1.0)):
    """Deterministic phantom: (HU ImageVolume, exact LabelVolume)."""
    dims = tuple(int(d) for d in dims)
    if any(d < 16 for d in dims):
        raise ArgumentError(f"phantom dims must be at least 16^3, got {dims}")
    geom = Geometry3(dims=dims, spacing=spacing)
    extent = np.array(dims, dtype=np.float64) * np.array(spacing, dtype=np.float64)
    segs, _ = _segments_for(seed, extent)

    nz, ny, nx = geom.shape_zyx
    zz, yy, xx = np.meshgrid(
        np.arange(nz, dtype=np.float64),
        np.arange(ny, dtype=np.float64),
        np.arange(nx, dtype=np.float64),
        indexing="ij",
    )
    pts = np.stack([xx.ravel(), yy.ravel(), zz.ravel()], axis=1)
    pts_mm = geom.voxel_to_mm(pts)

    a = np.array([s[0] for s in segs])
    b = np.array([s[1] for s in segs])
    r = np.array([s[2] for s in segs])
    ab = b - a
    ab2 = (ab**2).sum(axis=1)
    inside = np.zeros(len(pts_mm), dtype=bool)
    for start in range(0, len(pts_mm), _CHUNK):
        p = pts_mm[start : start + _CHUNK]
        rel = p[:, None, :] - a[None, :, :]
        t = np.clip((rel * ab[None, :, :]).sum(-1) / ab2[None, :], 0.0, 1.0)
        d2 = ((rel - t[:, :, None] * ab[None, :, :]) ** 2).sum(-1)
        inside[start : start + _CHUNK] = (d2 <= (r**2)[None, :]).any(axis=1)
    mask = inside.reshape(nz, ny, nx).astype(np.uint8)

    noise_rng = np.random.default_rng(np.random.SeedSequence([0x9A18, seed & 0xFFFFFFFF]))
    hu = np.full((nz, ny, nx), BACKGROUND_HU, dtype=np.float32)
    hu[mask == 1] = LUMEN_HU

    # bright non-vessel confounders (bone-like blobs): intensity alone cannot
    # separate the vessel, so a segmenter has to use shape
    n_conf = int(noise_rng.integers(4, 8))
    placed = 0
    attempts = 0
    while placed < n_conf and attempts < 200:
        attempts += 1
        center = noise_rng.uniform(0.12, 0.88, 3) * extent
        radii = noise_rng.uniform(2.5, 7.0, 3)
        rel = center[None, :] - a
        t = np.clip((rel * ab).sum(-1) / ab2, 0.0, 1.0)
        d = np.sqrt(((rel - t[:, None] * ab) ** 2).sum(-1)).min()
        if d < radii.max() + r.max() + 2.0:
            continue
        level = noise_rng.uniform(250.0, 420.0)
        d2 = (
            ((xx * spacing[0] - center[0]) / radii[0]) ** 2
            + ((yy * spacing[1] - center[1]) / radii[1]) ** 2
            + ((zz * spacing[2] - center[2]) / radii[2]) ** 2
        )
        hu[d2 <= 1.0] = level
        placed += 1

    hu += noise_rng.normal(0.0, NOISE_HU, size=hu.shape).astype(np.float32)

    return (
        ImageVolume(geom=geom, voxels=hu, intensity_domain=HU),
        LabelVolume(geom=geom, voxels=mask),
    )


def phantom_family(master_seed, n_cases, dims=(64, 64, 64), spacing=(1.0, 1.0, 1.0)):
    """n_cases phantoms with per-case seeds derived from a master seed."""
    out = []
    for i in range(n_cases):
        case_seed = int(np.random.SeedSequence([master_seed & 0xFFFFFFFF, i]).generate_state(1)[0])
        out.append(make_phantom(case_seed, dims=dims, spacing=spacing))
    return out
