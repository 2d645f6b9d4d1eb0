"""BLAS thread limiting for the training and scoring hot loops.

The network's GEMMs are small and memory-bound; multi-threaded BLAS adds
spin-wait overhead that can dominate runtime on small or shared machines, so
the heavy loops run with the pool pinned to one thread.
"""

from __future__ import annotations

import contextlib

try:
    from threadpoolctl import threadpool_limits

    def single_thread_blas():
        return threadpool_limits(limits=1, user_api="blas")

except ImportError:  # pragma: no cover

    def single_thread_blas():
        return contextlib.nullcontext()
