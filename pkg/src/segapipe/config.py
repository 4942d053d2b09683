"""Pipeline configuration: flat "key = value" sections, INI style.

Values are validated by constructing the owning module's config objects,
so a bad file fails at load time with the module's own error message.
Command-line flags override file values.
"""

import configparser
from dataclasses import dataclass, field

from .augment import TRANSFORM_ORDER, AugmentationSpec, ElasticSpec
from .errors import ArgumentError
from .meshkit import SURFACE_PRESET, VOLUMETRIC_PRESET, SmoothingConfig
from .resunet import NetConfig, TrainConfig


@dataclass
class PipelineConfig:
    resolution: tuple = (64, 64, 64)
    clip_lo: float = -700.0
    clip_hi: float = 2300.0
    threshold: float = 0.5
    connectivity: int = 26
    dilation_radius: int = 1
    dilation_structuring: int = 6
    hd95_mode: str = "pooled"
    smoothing_preset: str = "surface"
    seed: int = 0
    net: NetConfig = field(default_factory=NetConfig)
    training: TrainConfig = field(default_factory=TrainConfig)
    augmentation: AugmentationSpec = field(default_factory=AugmentationSpec)
    augmentation_enabled: bool = True
    elastic: ElasticSpec = field(default_factory=ElasticSpec)
    smoothing: SmoothingConfig = None

    def __post_init__(self):
        if self.clip_hi <= self.clip_lo:
            raise ArgumentError(f"clip window is empty: [{self.clip_lo}, {self.clip_hi}]")
        if not 0.0 <= self.threshold <= 1.0:
            raise ArgumentError("threshold must lie in [0, 1]")
        if self.connectivity not in (6, 26):
            raise ArgumentError("connectivity must be 6 or 26")
        if self.dilation_radius < 0:
            raise ArgumentError("dilation radius must be >= 0")
        if self.hd95_mode not in ("pooled", "max_directed"):
            raise ArgumentError(f"unknown hd95 mode {self.hd95_mode!r}")
        if self.smoothing_preset not in ("surface", "volumetric"):
            raise ArgumentError("smoothing preset must be surface or volumetric")
        div = 2 ** (self.net.levels - 1)
        for n in self.resolution:
            if n % div:
                raise ArgumentError(
                    f"resolution {self.resolution} not divisible by 2^(levels-1)={div}"
                )
        if self.smoothing is None:
            self.smoothing = SURFACE_PRESET if self.smoothing_preset == "surface" else VOLUMETRIC_PRESET


def _get(cp, section, key, cast, default):
    if not cp.has_option(section, key):
        return default
    raw = cp.get(section, key)
    try:
        if cast is bool:
            low = raw.strip().lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        return cast(raw)
    except ValueError:
        raise ArgumentError(f"[{section}] {key}: cannot parse {raw!r}") from None


def _tuple3(raw):
    parts = [int(v) for v in str(raw).split()]
    if len(parts) == 1:
        return (parts[0],) * 3
    if len(parts) != 3:
        raise ValueError(raw)
    return tuple(parts)


def load_config(path=None, overrides=None):
    """Build a PipelineConfig from an INI file plus key=value overrides.

    Overrides use dotted keys ("training.epochs=5", "pipeline.threshold=0.4");
    bare keys default to the pipeline section.
    """
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if path is not None:
        read = cp.read(path)
        if not read:
            raise ArgumentError(f"config file {path} not found or unreadable")
    for item in overrides or []:
        if "=" not in item:
            raise ArgumentError(f"override {item!r} is not key=value")
        key, value = item.split("=", 1)
        key = key.strip()
        section, _, opt = key.rpartition(".")
        section = section or "pipeline"
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, opt.strip(), value.strip())

    p = "pipeline"
    net = NetConfig(
        levels=_get(cp, "network", "levels", int, 3),
        base_channels=_get(cp, "network", "base_channels", int, 8),
        blocks_per_level=_get(cp, "network", "blocks_per_level", int, 1),
    )
    training = TrainConfig(
        lr0=_get(cp, "training", "lr0", float, 0.001),
        decay=_get(cp, "training", "decay", float, 0.999),
        batch=_get(cp, "training", "batch", int, 16),
        iterations_per_epoch=_get(cp, "training", "iterations_per_epoch", int, 64),
        weight_decay=_get(cp, "training", "weight_decay", float, 0.005),
        clip_value=_get(cp, "training", "clip_value", float, 2.0),
        clip_norm=_get(cp, "training", "clip_norm", float, 10.0),
        loss_variant=_get(cp, "training", "loss_variant", str, "dice_focal"),
        epochs=_get(cp, "training", "epochs", int, 100),
        patience=_get(cp, "training", "patience", int, 10),
        target_val_dsc=_get(cp, "training", "target_val_dsc", float, None),
    )
    enabled = tuple(
        _get(cp, "augmentation", "enabled_transforms", str, " ".join(TRANSFORM_ORDER)).split()
    )
    augmentation = AugmentationSpec(
        rotation_deg=_get(cp, "augmentation", "rotation_deg", float, 15.0),
        scale_range=(
            _get(cp, "augmentation", "scale_lo", float, 0.9),
            _get(cp, "augmentation", "scale_hi", float, 1.1),
        ),
        translation_mm=_get(cp, "augmentation", "translation_mm", float, 10.0),
        gamma_range=(
            _get(cp, "augmentation", "gamma_lo", float, 0.7),
            _get(cp, "augmentation", "gamma_hi", float, 1.5),
        ),
        noise_std_range=(
            _get(cp, "augmentation", "noise_std_lo", float, 0.0),
            _get(cp, "augmentation", "noise_std_hi", float, 0.03),
        ),
        flip_axes=tuple(_get(cp, "augmentation", "flip_axes", str, "x y z").split()),
        motion_ghosts=(
            _get(cp, "augmentation", "motion_ghosts_lo", int, 2),
            _get(cp, "augmentation", "motion_ghosts_hi", int, 4),
        ),
        motion_magnitude_mm=_get(cp, "augmentation", "motion_magnitude_mm", float, 2.0),
        anisotropy_factor_range=(
            _get(cp, "augmentation", "anisotropy_lo", float, 1.5),
            _get(cp, "augmentation", "anisotropy_hi", float, 4.0),
        ),
        anisotropy_axes=tuple(_get(cp, "augmentation", "anisotropy_axes", str, "x y z").split()),
        blur_sigma_mm=(
            _get(cp, "augmentation", "blur_sigma_lo", float, 0.0),
            _get(cp, "augmentation", "blur_sigma_hi", float, 2.0),
        ),
        apply_probability=_get(cp, "augmentation", "apply_probability", float, 0.5),
        enabled_transforms=enabled,
    )
    elastic = ElasticSpec(
        control_grid=_get(cp, "elastic", "control_grid", _tuple3, (8, 8, 8)),
        max_displacement_mm=_get(cp, "elastic", "max_displacement_mm", float, 8.0),
        smoothing_sigma_mm=_get(cp, "elastic", "smoothing_sigma_mm", float, 4.0),
        n_output_cases=_get(cp, "elastic", "n_output_cases", int, 0),
    )
    preset = _get(cp, p, "smoothing_preset", str, "surface")
    base = SURFACE_PRESET if preset == "surface" else VOLUMETRIC_PRESET
    smoothing = SmoothingConfig(
        boundary_smoothing=_get(cp, "smoothing", "boundary_smoothing", bool, base.boundary_smoothing),
        feature_edge_smoothing=_get(cp, "smoothing", "feature_edge_smoothing", bool, base.feature_edge_smoothing),
        iterations=_get(cp, "smoothing", "iterations", int, base.iterations),
        feature_angle=_get(cp, "smoothing", "feature_angle", float, base.feature_angle),
        pass_band=_get(cp, "smoothing", "pass_band", float, base.pass_band),
        non_manifold_smoothing=_get(cp, "smoothing", "non_manifold_smoothing", bool, base.non_manifold_smoothing),
    )
    return PipelineConfig(
        resolution=_get(cp, p, "resolution", _tuple3, (64, 64, 64)),
        clip_lo=_get(cp, p, "clip_lo", float, -700.0),
        clip_hi=_get(cp, p, "clip_hi", float, 2300.0),
        threshold=_get(cp, p, "threshold", float, 0.5),
        connectivity=_get(cp, p, "connectivity", int, 26),
        dilation_radius=_get(cp, p, "dilation_radius", int, 1),
        dilation_structuring=_get(cp, p, "dilation_structuring", int, 6),
        hd95_mode=_get(cp, p, "hd95_mode", str, "pooled"),
        smoothing_preset=preset,
        seed=_get(cp, p, "seed", int, 0),
        net=net,
        training=training,
        augmentation=augmentation,
        augmentation_enabled=_get(cp, "augmentation", "enabled", bool, True),
        elastic=elastic,
        smoothing=smoothing,
    )
