"""Pin BLAS to one thread before numpy loads anywhere.

The desk-scale matrices here are small enough that thread fan-out costs
more than it saves, and single-threaded BLAS keeps reductions ordered
the same way on every run, which the determinism tests rely on.
"""

import os

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")
os.environ.setdefault("MKL_NUM_THREADS", "1")
