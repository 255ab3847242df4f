"""Hot kernels with a compiled core and a numpy fallback.

The compiled extension is used when it imports; set ``GNSDE_PURE_PYTHON=1``
to force the fallback.  ``BACKEND`` names the active implementation.
"""

import os

from . import _pykernels

if os.environ.get("GNSDE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
        BACKEND = "python"

csr_matmul = _impl.csr_matmul
counter_bits = _impl.counter_bits

__all__ = ["BACKEND", "csr_matmul", "counter_bits"]
