"""Depth-based light-field angular super-resolution at desk scale."""
import os as _os

# Thread override must be in place before numpy loads its BLAS.
if "LFASR_NUM_THREADS" in _os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _os.environ["LFASR_NUM_THREADS"])

__version__ = "0.1.0"
