"""End-to-end command-line pipeline on a desk-scale phantom."""

import struct

import numpy as np
import pytest

from segapipe.cli import main
from segapipe.volgrid import read_mhd

DESK = [
    "pipeline.resolution=32",
    "network.levels=3",
    "network.base_channels=8",
    "training.iterations_per_epoch=1",
    "training.batch=1",
    "training.epochs=150",
    "training.patience=150",
    "training.target_val_dsc=0.93",
    "augmentation.enabled=false",
]


def _set(overrides):
    out = []
    for item in overrides:
        out += ["--set", item]
    return out


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Phantom + trained checkpoint shared by the CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    assert main(["phantom", str(root / "img.mhd"), str(root / "mask.mhd"),
                 "--seed", "0", "--dims", "32", "32", "32"]) == 0
    manifest = root / "train.tsv"
    manifest.write_text(f"{root / 'img.mhd'}\t{root / 'mask.mhd'}\n")
    rc = main(_set(DESK) + ["train", str(manifest), str(root / "model.ckpt")])
    assert rc == 0
    return root


def test_phantom_files_valid(workdir):
    img = read_mhd(workdir / "img.mhd")
    mask = read_mhd(workdir / "mask.mhd")
    assert img.geom.dims == (32, 32, 32)
    assert set(np.unique(mask.voxels)) <= {0, 1}


def test_preprocess(workdir, tmp_path):
    rc = main(_set(DESK) + ["preprocess", str(workdir / "img.mhd"), str(tmp_path / "prep.mhd")])
    assert rc == 0
    out = read_mhd(tmp_path / "prep.mhd")
    assert out.geom.dims == (32, 32, 32)
    assert 0.0 <= out.voxels.min() and out.voxels.max() <= 1.0


def test_augment_subcommand(workdir, tmp_path):
    rc = main(_set(DESK) + ["augment", str(workdir / "img.mhd"), str(workdir / "mask.mhd"),
                            str(tmp_path / "ai.mhd"), str(tmp_path / "am.mhd"), "--seed", "3"])
    assert rc == 0
    mask = read_mhd(tmp_path / "am.mhd")
    assert set(np.unique(mask.voxels)) <= {0, 1}


def test_elastic_expand_subcommand(workdir, tmp_path):
    manifest = workdir / "train.tsv"
    rc = main(_set(DESK + ["elastic.n_output_cases=2", "elastic.max_displacement_mm=3"])
              + ["elastic-expand", str(manifest), str(tmp_path / "exp")])
    assert rc == 0
    rows = (tmp_path / "exp" / "manifest.tsv").read_text().splitlines()
    assert len(rows) == 2


def test_infer_accuracy_and_mesh(workdir, tmp_path):
    rc = main(_set(DESK) + ["infer", str(workdir / "img.mhd"), str(workdir / "model.ckpt"),
                            str(tmp_path / "pred.mhd"), "--mesh", str(tmp_path / "pred.stl")])
    assert rc == 0
    pred = read_mhd(tmp_path / "pred.mhd")
    truth = read_mhd(workdir / "mask.mhd")
    from segapipe.metrics import dice

    assert dice(pred, truth) >= 0.90  # overfit single case at 32^3
    blob = (tmp_path / "pred.stl").read_bytes()
    (count,) = struct.unpack_from("<I", blob, 80)
    assert len(blob) == 84 + 50 * count
    # watertightness of the written mesh
    from segapipe.meshkit import check_watertight
    from segapipe.volgrid import TriMesh

    tris = np.frombuffer(blob[84:], dtype=np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("a", "<u2")]))
    pts = tris["v"].reshape(-1, 3)
    uniq, inv = np.unique(pts.round(5), axis=0, return_inverse=True)
    mesh = TriMesh(vertices=uniq.astype(np.float64), triangles=inv.reshape(-1, 3).astype(np.int32))
    assert check_watertight(mesh).watertight


def test_infer_deterministic(workdir, tmp_path):
    args = _set(DESK) + ["infer", str(workdir / "img.mhd"), str(workdir / "model.ckpt")]
    assert main(args + [str(tmp_path / "p1.mhd")]) == 0
    assert main(args + [str(tmp_path / "p2.mhd")]) == 0
    assert (tmp_path / "p1.raw").read_bytes() == (tmp_path / "p2.raw").read_bytes()


def test_infer_missing_checkpoint_exit_2(workdir, tmp_path, capsys):
    rc = main(_set(DESK) + ["infer", str(workdir / "img.mhd"), str(tmp_path / "nope.ckpt"),
                            str(tmp_path / "pred.mhd")])
    assert rc == 2
    assert "nope.ckpt" in capsys.readouterr().err


def test_infer_bad_volume_exit_2(workdir, tmp_path, capsys):
    bad = tmp_path / "bad.mhd"
    bad.write_text("ObjectType = Image\nNDims = 3\n")
    rc = main(_set(DESK) + ["infer", str(bad), str(workdir / "model.ckpt"), str(tmp_path / "o.mhd")])
    assert rc == 2
    assert "stage load" in capsys.readouterr().err


def test_mesh_subcommand(workdir, tmp_path):
    rc = main(_set(DESK) + ["mesh", str(workdir / "mask.mhd"), str(tmp_path / "m.obj")])
    assert rc == 0
    text = (tmp_path / "m.obj").read_text()
    assert text.startswith("v ")


def test_evaluate_subcommand(workdir, tmp_path, capsys):
    rc = main(["evaluate", str(workdir / "mask.mhd"), str(workdir / "mask.mhd"),
               "--case-id", "self"])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.startswith("self\t1.000000\t0.000000")


def test_evaluate_report_file(workdir, tmp_path):
    rc = main(["evaluate", str(workdir / "mask.mhd"), str(workdir / "mask.mhd"),
               "--report", str(tmp_path / "r.tsv")])
    assert rc == 0
    assert (tmp_path / "r.tsv").read_text().split("\t")[1] == "1.000000"


def test_train_log_deterministic(workdir, tmp_path):
    manifest = workdir / "train.tsv"
    short = DESK[:-1] + ["training.epochs=2", "augmentation.enabled=false"]
    assert main(_set(short) + ["train", str(manifest), str(tmp_path / "a.ckpt")]) == 0
    assert main(_set(short) + ["train", str(manifest), str(tmp_path / "b.ckpt")]) == 0
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    assert (tmp_path / "a.ckpt.log").read_text() == (tmp_path / "b.ckpt.log").read_text()


def test_config_file_with_override(workdir, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("[pipeline]\nresolution = 32\nthreshold = 0.5\n[network]\nlevels = 2\nbase_channels = 2\n")
    rc = main(["--config", str(cfg), "--set", "pipeline.threshold=0.4",
               "phantom", str(tmp_path / "i.mhd"), str(tmp_path / "m.mhd"), "--seed", "1"])
    assert rc == 0


def test_bad_config_value_exit_2(tmp_path, capsys):
    rc = main(["--set", "pipeline.threshold=2.0",
               "phantom", str(tmp_path / "i.mhd"), str(tmp_path / "m.mhd")])
    assert rc == 2
