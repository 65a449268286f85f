"""Dynamic pericoronary adipose tissue analysis on cardiac CT perfusion series."""

import os

import numba

__version__ = "0.1.0"

# prefer OpenMP; TBB is tried last so a missing TBB runtime stays silent
if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
