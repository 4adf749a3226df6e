"""Edge-supervised unsupervised domain adaptation for semantic segmentation.

Desk-scale training stack: a small reverse-mode autodiff engine, classical
edge extraction for label-free supervision targets, a shared-encoder /
dual-branch / correlation-module network, DICE + cross-entropy objectives
with pseudo-label self-training, and procedural source/target scenes for
benchmarking the adaptation trend.
"""

import os as _os

# Pin BLAS thread pools before numpy spins them up; single-threaded kernels
# keep training runs bitwise reproducible.
for _var in (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
):
    _os.environ.setdefault(_var, "1")
del _os, _var

__version__ = "0.1.0"
