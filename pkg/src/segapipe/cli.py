"""Command-line pipeline orchestration.

Subcommands: phantom, preprocess, augment, elastic-expand, train, kfold,
infer, mesh, evaluate, ablate. Configuration comes from an INI file plus
--set key=value overrides (flags win). Exit codes: 0 ok, 2 format or
argument errors, 3 shape errors, 4 numerical errors.
"""

import argparse
import sys

import numpy as np

from . import ablation, meshkit, metrics, postproc
from .augment import augment_pair, elastic_expand
from .config import load_config
from .errors import FormatError, SegapipeError
from .phantom import make_phantom, phantom_family
from .resunet import NetConfig, load_checkpoint, save_checkpoint, train
from .resunet.training import _predict_volume, kfold
from .volgrid import PROBABILITY, ImageVolume, LabelVolume, read_mhd, write_mhd, write_obj, write_stl
from .xform import clip_normalize, resample


class _Stage:
    """Context manager that prefixes pipeline errors with the failing stage."""

    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, etype, err, tb):
        if err is not None and isinstance(err, SegapipeError):
            err.args = (f"stage {self.name}: {err}",)
        return False


def _load_pairs(manifest_path):
    """Manifest rows name (img, mask) paths in the last two tab-separated columns."""
    pairs = []
    with open(manifest_path, "r", encoding="ascii") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) < 2:
                raise FormatError(f"{manifest_path}: need at least two columns per row: {line!r}")
            pairs.append((cols[-2], cols[-1]))
    if not pairs:
        raise FormatError(f"{manifest_path}: no data rows")
    return pairs


def _read_pairs(manifest_path):
    return [(read_mhd(i), read_mhd(m)) for i, m in _load_pairs(manifest_path)]


def _prep_dataset(pairs, cfg):
    return [
        ablation.preprocess_pair(img, mask, cfg.resolution, cfg.clip_lo, cfg.clip_hi)
        for img, mask in pairs
    ]


def cmd_phantom(args, cfg):
    img, mask = make_phantom(args.seed if args.seed is not None else cfg.seed,
                             dims=cfg.resolution if args.dims is None else tuple(args.dims),
                             spacing=tuple(args.spacing))
    write_mhd(img, args.out_img)
    write_mhd(mask, args.out_mask)
    return 0


def cmd_preprocess(args, cfg):
    with _Stage("load"):
        vol = read_mhd(args.input)
    with _Stage("resample"):
        vol = resample(vol, cfg.resolution, "trilinear" if isinstance(vol, ImageVolume) else "nearest")
    if isinstance(vol, ImageVolume):
        with _Stage("normalize"):
            vol = clip_normalize(vol, cfg.clip_lo, cfg.clip_hi)
    write_mhd(vol, args.output)
    return 0


def cmd_augment(args, cfg):
    with _Stage("load"):
        img = read_mhd(args.image)
        mask = read_mhd(args.mask)
    with _Stage("normalize"):
        img = clip_normalize(img, cfg.clip_lo, cfg.clip_hi)
    with _Stage("augment"):
        seed = args.seed if args.seed is not None else cfg.seed
        out_img, out_mask = augment_pair(img, mask, cfg.augmentation, seed)
    write_mhd(out_img, args.out_image)
    write_mhd(out_mask, args.out_mask)
    return 0


def cmd_elastic_expand(args, cfg):
    with _Stage("load"):
        dataset = _read_pairs(args.manifest)
    spec = cfg.elastic
    if args.cases is not None:
        from dataclasses import replace

        spec = replace(spec, n_output_cases=args.cases)
    with _Stage("elastic"):
        rows = elastic_expand(dataset, spec, args.out_dir,
                              master_seed=args.seed if args.seed is not None else cfg.seed)
    print(f"wrote {len(rows)} cases to {args.out_dir}", file=sys.stderr)
    return 0


def cmd_train(args, cfg):
    with _Stage("load"):
        pairs = _read_pairs(args.manifest)
    with _Stage("preprocess"):
        dataset = _prep_dataset(pairs, cfg)
    with _Stage("train"):
        spec = cfg.augmentation if cfg.augmentation_enabled else None
        model, history, log_lines = train(dataset, cfg.training, cfg.net,
                                          seed=cfg.seed, augment_spec=spec)
    save_checkpoint(model, args.checkpoint)
    log_path = args.log or (args.checkpoint + ".log")
    with open(log_path, "w", encoding="ascii") as f:
        f.write("\n".join(log_lines) + "\n")
    print(f"trained {len(history)} epochs; final val dsc "
          f"{history[-1]['val_dsc']:.4f}", file=sys.stderr)
    return 0


def cmd_kfold(args, cfg):
    with _Stage("load"):
        pairs = _read_pairs(args.manifest)
    with _Stage("preprocess"):
        dataset = _prep_dataset(pairs, cfg)
    with _Stage("kfold"):
        spec = cfg.augmentation if cfg.augmentation_enabled else None
        rows, mean = kfold(dataset, args.k, cfg.training, cfg.net, seed=cfg.seed,
                           augment_spec=spec)
    table = [(f"fold {r['fold']}", r["dsc"], r["hd95"]) for r in rows]
    table.append(("mean", mean["dsc"], mean["hd95"]))
    report = metrics.format_summary_table(table, title=f"{args.k}-fold cross-validation")
    _emit(report, args.report)
    return 0


def cmd_infer(args, cfg):
    with _Stage("load"):
        vol = read_mhd(args.input)
        model = load_checkpoint(args.checkpoint)
    with _Stage("resample"):
        x = resample(vol, cfg.resolution, "trilinear")
    with _Stage("normalize"):
        x = clip_normalize(x, cfg.clip_lo, cfg.clip_hi)
    with _Stage("forward"):
        prob = _predict_volume(model, x)
    with _Stage("resample-back"):
        prob = resample(prob, vol.geom.dims, "trilinear")
        prob = ImageVolume(geom=prob.geom, voxels=np.clip(prob.voxels, 0.0, 1.0),
                           intensity_domain=PROBABILITY)
    with _Stage("threshold"):
        mask = postproc.threshold(prob, cfg.threshold)
    with _Stage("save"):
        write_mhd(mask, args.out_mask)
    if args.mesh:
        _mesh_pipeline(mask, cfg, args.mesh)
    return 0


def _mesh_pipeline(mask, cfg, out_path):
    with _Stage("largest-component"):
        mask = postproc.largest_component(mask, cfg.connectivity)
    with _Stage("dilate"):
        mask = postproc.dilate(mask, cfg.dilation_radius, cfg.dilation_structuring)
    with _Stage("marching-cubes"):
        mesh = meshkit.marching_cubes(mask)
    with _Stage("smooth"):
        mesh = meshkit.windowed_sinc_smooth(mesh, cfg.smoothing)
    with _Stage("close-holes"):
        mesh = meshkit.close_holes(mesh)
    with _Stage("save-mesh"):
        if out_path.lower().endswith(".obj"):
            write_obj(mesh, out_path)
        else:
            write_stl(mesh, out_path)


def cmd_mesh(args, cfg):
    with _Stage("load"):
        mask = read_mhd(args.mask)
    if not isinstance(mask, LabelVolume):
        raise FormatError(f"{args.mask} is not a label volume")
    _mesh_pipeline(mask, cfg, args.out_mesh)
    return 0


def cmd_evaluate(args, cfg):
    with _Stage("load"):
        pred = read_mhd(args.pred)
        truth = read_mhd(args.truth)
    with _Stage("evaluate"):
        d = metrics.dice(pred, truth)
        h = metrics.hd95(pred, truth, mode=args.hd95_mode or cfg.hd95_mode)
    _emit(metrics.format_case_report([(args.case_id, d, h)]), args.report)
    return 0


def cmd_ablate(args, cfg):
    with _Stage("load"):
        if args.manifest:
            dataset = _read_pairs(args.manifest)
        else:
            dataset = phantom_family(cfg.seed, args.phantoms)
    with _Stage("ablate"):
        rows = ablation.run_ablation(
            args.axis, dataset, cfg.training, cfg.net,
            resolution=cfg.resolution, k=args.k, seed=cfg.seed,
            augment_spec=cfg.augmentation, elastic_spec=cfg.elastic,
            resolutions=tuple((r, r, r) for r in args.resolutions),
        )
    _emit(metrics.format_summary_table(rows, title=f"Ablation - {args.axis}"), args.report)
    return 0


def _emit(text, path):
    if path:
        with open(path, "w", encoding="ascii") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def build_parser():
    ap = argparse.ArgumentParser(prog="segapipe",
                                 description="3-D vessel segmentation pipeline on synthetic phantoms")
    ap.add_argument("--config", help="INI config file")
    ap.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                    help="override a config value (repeatable; flags win)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic vessel phantom")
    p.add_argument("out_img")
    p.add_argument("out_mask")
    p.add_argument("--seed", type=int)
    p.add_argument("--dims", type=int, nargs=3)
    p.add_argument("--spacing", type=float, nargs=3, default=(1.0, 1.0, 1.0))
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("preprocess", help="resample + clip/normalize a volume")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("augment", help="apply one seeded online augmentation draw")
    p.add_argument("image")
    p.add_argument("mask")
    p.add_argument("out_image")
    p.add_argument("out_mask")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("elastic-expand", help="offline elastic dataset expansion")
    p.add_argument("manifest", help="TSV with image/mask paths in the last two columns")
    p.add_argument("out_dir")
    p.add_argument("--cases", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_elastic_expand)

    p = sub.add_parser("train", help="train the segmentation network")
    p.add_argument("manifest")
    p.add_argument("checkpoint")
    p.add_argument("--log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("kfold", help="k-fold cross-validation")
    p.add_argument("manifest")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--report")
    p.set_defaults(func=cmd_kfold)

    p = sub.add_parser("infer", help="segment a volume with a trained checkpoint")
    p.add_argument("input")
    p.add_argument("checkpoint")
    p.add_argument("out_mask")
    p.add_argument("--mesh", help="also mesh the prediction to this STL/OBJ path")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("mesh", help="mesh a saved mask (component filter, dilate, MC, smooth, close)")
    p.add_argument("mask")
    p.add_argument("out_mesh")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("evaluate", help="Dice + HD95 of a prediction against ground truth")
    p.add_argument("pred")
    p.add_argument("truth")
    p.add_argument("--case-id", default="case")
    p.add_argument("--hd95-mode", choices=("pooled", "max_directed"))
    p.add_argument("--report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("ablate", help="run one ablation axis, report in table layout")
    p.add_argument("--axis", required=True, choices=ablation.AXES)
    p.add_argument("--manifest")
    p.add_argument("--phantoms", type=int, default=4)
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--resolutions", type=int, nargs="+", default=(64, 32, 16))
    p.add_argument("--report")
    p.set_defaults(func=cmd_ablate)

    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        return args.func(args, cfg)
    except SegapipeError as e:
        print(f"segapipe {args.command}: {e}", file=sys.stderr)
        return getattr(e, "exit_code", 2)
    except FileNotFoundError as e:
        print(f"segapipe {args.command}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
