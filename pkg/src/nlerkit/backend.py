"""Kernel backend selection.

Hot inner loops (convolutions, dense layers, the CTMC simulator) exist in
two variants: numba ``@njit`` kernels and pure-numpy fallbacks, selected by
the ``NLERKIT_BACKEND`` environment variable:

* ``auto`` (default) - fastest measured path per kernel family: numba for
  the event-driven CTMC simulator (two orders of magnitude over the Python
  loop), numpy for the layer kernels (BLAS/einsum beats the explicit loops
  by 10-100x at training shapes; see ``benchmarks/kernel_bench.py``)
* ``numba``          - force numba everywhere (layer kernels then give
  bit-exact batched-vs-per-example forward passes)
* ``numpy``          - force the pure-numpy path everywhere

Both variants are always importable from :mod:`nlerkit.kernels` (suffixed
``_nb`` / ``_np``) for benchmarking and cross-checking.
"""

import os

BACKEND = os.environ.get("NLERKIT_BACKEND", "auto").lower()
if BACKEND not in ("auto", "numba", "numpy"):
    raise RuntimeError(
        f"NLERKIT_BACKEND must be one of auto/numba/numpy, got {BACKEND!r}"
    )

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAS_NUMBA = False

if BACKEND == "numba" and not HAS_NUMBA:  # pragma: no cover
    raise ImportError("NLERKIT_BACKEND=numba but numba is not installed")

# layer kernels: numba only on explicit request; simulator: numba unless
# numpy is forced (or unavailable)
LAYER_KERNELS_NUMBA = BACKEND == "numba"
SIM_KERNELS_NUMBA = HAS_NUMBA and BACKEND != "numpy"
USE_NUMBA = SIM_KERNELS_NUMBA


if HAS_NUMBA:
    njit = numba.njit
    prange = numba.prange
else:  # pragma: no cover - exercised only without numba

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def decorator(func):
            return func

        return decorator

    prange = range
