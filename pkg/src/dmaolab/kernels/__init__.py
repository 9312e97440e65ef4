"""Hot-loop kernels with a numba fast path and a pure-numpy fallback.

The backend is picked once at import time from the DMAOLAB_BACKEND
environment variable: "numba" (default when importable) or "numpy".
Both backends are deterministic; floating-point results may differ by
rounding between them, so reproducibility guarantees hold per backend.
"""
import os

_choice = os.environ.get("DMAOLAB_BACKEND", "").strip().lower()
if _choice not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"DMAOLAB_BACKEND must be 'numba' or 'numpy', got {_choice!r}"
    )

if _choice == "numpy":
    from . import numpy_backend as _impl

    BACKEND = "numpy"
else:
    try:
        from . import numba_backend as _impl

        BACKEND = "numba"
    except ImportError:
        if _choice == "numba":
            raise
        from . import numpy_backend as _impl

        BACKEND = "numpy"

ctc_alpha_beta = _impl.ctc_alpha_beta
ctc_grad = _impl.ctc_grad
depthwise_conv1d_forward = _impl.depthwise_conv1d_forward
depthwise_conv1d_backward = _impl.depthwise_conv1d_backward
levenshtein = _impl.levenshtein

__all__ = [
    "BACKEND",
    "ctc_alpha_beta",
    "ctc_grad",
    "depthwise_conv1d_forward",
    "depthwise_conv1d_backward",
    "levenshtein",
]
