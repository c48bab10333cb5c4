"""Hot inner loops with a compiled backend and a numpy fallback.

The compiled extension ``_ckernels`` is preferred when importable. Set the
environment variable ``SGGRU_PURE_PYTHON=1`` to force the fallback.

The compiled GRU loops beat numpy only for small state sizes; above
``GRU_COMPILED_MAX_DIM`` the matrix products of the fallback (which go to
BLAS) are faster, so the GRU entry points switch by size. Run
``benchmarks/bench_kernels.py`` to see the crossover on a given machine.

Attributes
----------
BACKEND : str
    ``"cython"`` or ``"python"``, whichever was selected at import.
"""

import os

from . import _pykernels

SIGMOID = _pykernels.SIGMOID
TANH = _pykernels.TANH

_compiled = None
if os.environ.get("SGGRU_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

GRU_COMPILED_MAX_DIM = 16

if _compiled is not None:
    BACKEND = "cython"
    jacobi_sweeps = _compiled.jacobi_sweeps

    def gru_forward(x, h0, *params):
        impl = _compiled if h0.shape[1] <= GRU_COMPILED_MAX_DIM else _pykernels
        return impl.gru_forward(x, h0, *params)

    def gru_backward(x, hs, *rest):
        impl = _compiled if hs.shape[2] <= GRU_COMPILED_MAX_DIM else _pykernels
        return impl.gru_backward(x, hs, *rest)
else:
    BACKEND = "python"
    jacobi_sweeps = _pykernels.jacobi_sweeps
    gru_forward = _pykernels.gru_forward
    gru_backward = _pykernels.gru_backward


def available_backends():
    """Return the kernel modules that can be used in this interpreter."""
    found = {"python": _pykernels}
    try:
        from . import _ckernels
    except ImportError:
        pass
    else:
        found["cython"] = _ckernels
    return found
