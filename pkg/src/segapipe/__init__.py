"""segapipe: a 3-D vessel segmentation pipeline runnable on synthetic phantoms.

Preprocessing, stochastic augmentation, a trainable residual U-Net,
postprocessing, surface meshing and quantitative evaluation. Hot voxel
kernels run through a compiled extension with a NumPy/SciPy fallback;
see segapipe._kernels.backend_name().
"""

from ._kernels import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
