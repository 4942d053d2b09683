"""Kernel backend selection.

The hot voxel kernels exist twice: a Cython extension (``_compiled``)
and a NumPy/SciPy fallback (``_python``). The compiled lane is used
when the extension is importable; SEGAPIPE_BACKEND=python|compiled
forces a lane. Both lanes implement identical contracts, so everything
above this module is backend-agnostic.
"""

import os

from . import _python

try:
    from . import _compiled
except ImportError:  # extension not built; fallback lane only
    _compiled = None

_names = (
    "conv3d_forward",
    "conv3d_grad_input",
    "conv3d_grad_weight",
    "sample_trilinear",
    "sample_nearest",
    "edt",
    "label_components",
    "mc_cell_triangles",
)


def _select():
    requested = os.environ.get("SEGAPIPE_BACKEND", "auto")
    if requested == "python":
        return _python, "python"
    if requested == "compiled":
        if _compiled is None:
            raise ImportError(
                "SEGAPIPE_BACKEND=compiled but the extension is not built; "
                "run `python setup.py build_ext --inplace` or reinstall"
            )
        return _compiled, "compiled"
    if _compiled is not None:
        return _compiled, "compiled"
    return _python, "python"


_active, BACKEND = _select()

conv3d_forward = _active.conv3d_forward
conv3d_grad_input = _active.conv3d_grad_input
conv3d_grad_weight = _active.conv3d_grad_weight
sample_trilinear = _active.sample_trilinear
sample_nearest = _active.sample_nearest
edt = _active.edt
label_components = _active.label_components
mc_cell_triangles = _active.mc_cell_triangles


def backend_name():
    """Name of the active kernel lane ('compiled' or 'python')."""
    return BACKEND


def available_backends():
    out = {"python": _python}
    if _compiled is not None:
        out["compiled"] = _compiled
    return out
