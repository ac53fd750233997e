"""Convex dynamic programming through discrete Legendre-Fenchel transforms."""

import os

# the bundled TBB is too old for numba; use its portable thread pool instead
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
