"""Backend dispatch for the hot encoder kernels.

The env var ``LEANPREMISE_BACKEND`` selects the implementation:
``numba`` (default when numba imports), ``numpy`` (pure fallback), or
``auto``. Matrix multiplies stay in BLAS either way; these kernels cover
the fused, memory-bound loops (layernorm, attention softmax, GELU, and
the embedding-gradient scatter-add).
"""

import os

_requested = os.environ.get("LEANPREMISE_BACKEND", "auto").strip().lower()

if _requested not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"LEANPREMISE_BACKEND={_requested!r}: expected 'auto', 'numba', or 'numpy'"
    )

if _requested == "numpy":
    from . import numpy_backend as _impl

    BACKEND = "numpy"
elif _requested == "numba":
    from . import numba_backend as _impl

    BACKEND = "numba"
else:
    try:
        from . import numba_backend as _impl

        BACKEND = "numba"
    except ImportError:
        from . import numpy_backend as _impl

        BACKEND = "numpy"

gelu = _impl.gelu
gelu_backward = _impl.gelu_backward
layer_norm = _impl.layer_norm
layer_norm_backward = _impl.layer_norm_backward
attn_softmax = _impl.attn_softmax
attn_softmax_backward = _impl.attn_softmax_backward
add_at_rows = _impl.add_at_rows
