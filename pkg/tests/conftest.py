"""Shared test configuration.

Caps BLAS thread pools to the available CPU budget: the container exposes
few cores and OpenBLAS otherwise spawns its compiled-in maximum, which
makes small factorizations pathologically slow.
"""

import os

from threadpoolctl import threadpool_limits

_BLAS_LIMIT = threadpool_limits(limits=max(1, min(2, os.cpu_count() or 1)))
