import numpy as np
import pytest

from segapipe.errors import ArgumentError
from segapipe.phantom import analytic_volume, make_phantom, phantom_family


def test_deterministic_per_seed():
    a_img, a_mask = make_phantom(5)
    b_img, b_mask = make_phantom(5)
    assert np.array_equal(a_img.voxels, b_img.voxels)
    assert np.array_equal(a_mask.voxels, b_mask.voxels)
    c_img, _ = make_phantom(6)
    assert not np.array_equal(a_img.voxels, c_img.voxels)


@pytest.mark.parametrize("seed", [0, 7, 42])
def test_mask_volume_matches_analytic_formula(seed):
    _, mask = make_phantom(seed)
    voxel_volume = 1.0  # 1 mm spacing
    measured = mask.voxels.sum() * voxel_volume
    expected = analytic_volume(seed)
    assert abs(measured - expected) / expected <= 0.10


def test_lumen_brighter_than_background(phantom64):
    img, mask = phantom64
    lumen = img.voxels[mask.voxels == 1].mean()
    background = img.voxels[mask.voxels == 0].mean()
    assert lumen > background


def test_has_bright_confounders(phantom64):
    img, mask = phantom64
    assert ((img.voxels > 200) & (mask.voxels == 0)).sum() > 100


def test_small_dims_rejected():
    with pytest.raises(ArgumentError):
        make_phantom(0, dims=(8, 32, 32))


def test_family_distinct_and_deterministic():
    fam1 = phantom_family(3, 3, dims=(32, 32, 32))
    fam2 = phantom_family(3, 3, dims=(32, 32, 32))
    for (i1, m1), (i2, m2) in zip(fam1, fam2):
        assert np.array_equal(i1.voxels, i2.voxels)
        assert np.array_equal(m1.voxels, m2.voxels)
    assert not np.array_equal(fam1[0][1].voxels, fam1[1][1].voxels)
