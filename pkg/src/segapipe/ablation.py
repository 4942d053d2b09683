"""Ablation experiments over resolution, loss function and augmentation.

Each axis produces rows in the cross-validation table layout
(config name, Avg. DSC, Avg. HD95 [mm]). Validation predictions go
through the full inference path: predict at the training resolution,
resample back to the native grid, threshold, score against the native
ground truth.
"""

from dataclasses import replace

import numpy as np

from .augment import TRANSFORM_ORDER, elastic_deform_pair
from .errors import ArgumentError, MetricUndefinedError
from .metrics import dice, hd95
from .postproc import threshold as apply_threshold
from .resunet import train
from .resunet.training import _predict_volume
from .volgrid import PROBABILITY, ImageVolume
from .xform import clip_normalize, resample

AXES = ("resolution", "loss", "augmentation")

AUGMENTATION_ROWS = (
    ("full", TRANSFORM_ORDER, True),
    ("no_elastic", TRANSFORM_ORDER, False),
    ("no_geometric", tuple(t for t in TRANSFORM_ORDER if t not in ("affine", "flip")), True),
    ("no_intensity", ("affine", "flip"), True),
    ("none", (), False),
)

LOSS_ROWS = ("dice_focal", "dice", "dice_ce", "focal")


def preprocess_pair(img, mask, resolution, clip_lo=-700.0, clip_hi=2300.0):
    """Native (HU image, mask) -> normalised training pair at the target resolution."""
    x = clip_normalize(img, clip_lo, clip_hi)
    return resample(x, resolution, "trilinear"), resample(mask, resolution, "nearest")


def predict_native(model, img_native, resolution, clip_lo=-700.0, clip_hi=2300.0, thr=0.5):
    """Full inference path: preprocess, forward, resample back, threshold."""
    x = clip_normalize(img_native, clip_lo, clip_hi)
    xr = resample(x, resolution, "trilinear")
    prob = _predict_volume(model, xr)
    prob_native = resample(prob, img_native.geom.dims, "trilinear")
    prob_native = ImageVolume(
        geom=prob_native.geom, voxels=np.clip(prob_native.voxels, 0.0, 1.0),
        intensity_domain=PROBABILITY,
    )
    return apply_threshold(prob_native, thr)


def _score_folds(dataset, folds, train_cfg, net_cfg, resolution, seed,
                 augment_spec=None, extra_train=None):
    dscs, hds = [], []
    for f, hold in enumerate(folds):
        train_native = [dataset[i] for i in range(len(dataset)) if i not in hold]
        if extra_train:
            train_native = train_native + [extra_train[i] for i in range(len(extra_train))
                                           if (i % len(dataset)) not in hold]
        train_set = [preprocess_pair(im, mk, resolution) for im, mk in train_native]
        val_set = [preprocess_pair(*dataset[i], resolution) for i in hold]
        model, _, _ = train(train_set, train_cfg, net_cfg, seed=seed + f,
                            val_dataset=val_set, augment_spec=augment_spec)
        for i in hold:
            img, truth = dataset[i]
            pred = predict_native(model, img, resolution)
            dscs.append(dice(pred, truth))
            try:
                hds.append(hd95(pred, truth))
            except MetricUndefinedError:
                hds.append(np.inf)
    return float(np.mean(dscs)), float(np.mean(hds))


def _folds(n, k, seed):
    perm = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0xF0])).permutation(n)
    return [sorted(int(i) for i in perm[f::k]) for f in range(k)]


def run_ablation(axis, dataset, train_cfg, net_cfg, resolution=(32, 32, 32), k=2,
                 seed=0, augment_spec=None, elastic_spec=None, resolutions=((64,) * 3, (32,) * 3, (16,) * 3)):
    """Rows (name, avg dsc, avg hd95) for one ablation axis on a native-resolution dataset."""
    if axis not in AXES:
        raise ArgumentError(f"unknown ablation axis {axis!r}; pick one of {AXES}")
    if k < 2 or k > len(dataset):
        raise ArgumentError(f"k={k} invalid for dataset of {len(dataset)}")
    folds = _folds(len(dataset), k, seed)
    rows = []
    if axis == "resolution":
        for res in resolutions:
            dsc, hd = _score_folds(dataset, folds, train_cfg, net_cfg, tuple(res), seed,
                                   augment_spec=augment_spec)
            rows.append((f"{res[0]}^3", dsc, hd))
        return rows
    if axis == "loss":
        for variant in LOSS_ROWS:
            cfg = replace(train_cfg, loss_variant=variant)
            dsc, hd = _score_folds(dataset, folds, cfg, net_cfg, resolution, seed,
                                   augment_spec=augment_spec)
            rows.append((variant, dsc, hd))
        return rows
    if augment_spec is None or elastic_spec is None:
        raise ArgumentError("augmentation axis needs augment_spec and elastic_spec")
    for name, enabled, use_elastic in AUGMENTATION_ROWS:
        spec = replace(augment_spec, enabled_transforms=enabled) if enabled else None
        extra = None
        if use_elastic and elastic_spec.n_output_cases > 0:
            extra = []
            for i in range(elastic_spec.n_output_cases):
                src = i % len(dataset)
                e_seed = int(np.random.SeedSequence([seed & 0xFFFFFFFF, 0xE7A, i]).generate_state(1)[0])
                extra.append(elastic_deform_pair(*dataset[src], elastic_spec, e_seed))
        dsc, hd = _score_folds(dataset, folds, train_cfg, net_cfg, resolution, seed,
                               augment_spec=spec, extra_train=extra)
        rows.append((name, dsc, hd))
    return rows
