"""Inner-loop kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment variable
``BATCHENSEMBLE_NUMBA`` is not set to ``0``. Both paths compute the same values;
per-member reductions accumulate rows in ascending row order in both, so the
results agree bit for bit on the reductions and to rounding on the rest.
"""
import os
from types import SimpleNamespace

import numpy as np

try:
    from numba import njit
    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False


def _env_wants_numba():
    return os.environ.get("BATCHENSEMBLE_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


# ---------------------------------------------------------------------------
# pure numpy
# ---------------------------------------------------------------------------

def np_gather_rows(table, assign):
    return table[assign]


def np_segment_sum(values, assign, n_segments):
    out = np.zeros((n_segments, values.shape[1]))
    # unbuffered, applied in row order: same summation order as the jit loop
    np.add.at(out, assign, values)
    return out


def np_ece_bins(confidence, correct, n_bins):
    upper = np.arange(1, n_bins + 1) / n_bins
    idx = np.searchsorted(upper, confidence, side="left")
    idx = np.minimum(idx, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins).astype(np.int64)
    conf_sum = np.zeros(n_bins)
    acc_sum = np.zeros(n_bins)
    np.add.at(conf_sum, idx, confidence)
    np.add.at(acc_sum, idx, correct)
    return counts, conf_sum, acc_sum


def np_count_disagree(a, b):
    return int(np.count_nonzero(a != b))


# ---------------------------------------------------------------------------
# numba loops
# ---------------------------------------------------------------------------

def _loop_gather_rows(table, assign):
    out = np.empty((assign.shape[0], table.shape[1]))
    for b in range(assign.shape[0]):
        i = assign[b]
        for k in range(table.shape[1]):
            out[b, k] = table[i, k]
    return out


def _loop_segment_sum(values, assign, n_segments):
    out = np.zeros((n_segments, values.shape[1]))
    for b in range(values.shape[0]):
        i = assign[b]
        for k in range(values.shape[1]):
            out[i, k] += values[b, k]
    return out


def _loop_ece_bins(confidence, correct, n_bins):
    counts = np.zeros(n_bins, dtype=np.int64)
    conf_sum = np.zeros(n_bins)
    acc_sum = np.zeros(n_bins)
    for j in range(confidence.shape[0]):
        c = confidence[j]
        # first bin whose upper edge m/n_bins is >= c; edges computed as in the numpy path
        m = 0
        while m < n_bins - 1 and (m + 1) / n_bins < c:
            m += 1
        counts[m] += 1
        conf_sum[m] += c
        acc_sum[m] += correct[j]
    return counts, conf_sum, acc_sum


def _loop_count_disagree(a, b):
    n = 0
    for j in range(a.shape[0]):
        if a[j] != b[j]:
            n += 1
    return n


numpy_kernels = SimpleNamespace(
    name="numpy",
    gather_rows=np_gather_rows,
    segment_sum=np_segment_sum,
    ece_bins=np_ece_bins,
    count_disagree=np_count_disagree,
)

if NUMBA_AVAILABLE:
    numba_kernels = SimpleNamespace(
        name="numba",
        gather_rows=njit(cache=True)(_loop_gather_rows),
        segment_sum=njit(cache=True)(_loop_segment_sum),
        ece_bins=njit(cache=True)(_loop_ece_bins),
        count_disagree=njit(cache=True)(_loop_count_disagree),
    )
else:  # pragma: no cover
    numba_kernels = None


def get_kernels(name=None):
    """Return the kernel namespace for ``name`` ('numba' or 'numpy'); default follows the env flag."""
    if name is None:
        name = "numba" if (NUMBA_AVAILABLE and _env_wants_numba()) else "numpy"
    if name == "numba":
        if numba_kernels is None:
            raise RuntimeError("numba backend requested but numba is not importable")
        return numba_kernels
    if name == "numpy":
        return numpy_kernels
    raise ValueError(f"unknown kernel backend {name!r}")


active = get_kernels()
BACKEND = active.name


def gather_rows(table, assign):
    return active.gather_rows(np.ascontiguousarray(table, dtype=np.float64),
                              np.ascontiguousarray(assign, dtype=np.int64))


def segment_sum(values, assign, n_segments):
    return active.segment_sum(np.ascontiguousarray(values, dtype=np.float64),
                              np.ascontiguousarray(assign, dtype=np.int64), int(n_segments))


def ece_bins(confidence, correct, n_bins):
    return active.ece_bins(np.ascontiguousarray(confidence, dtype=np.float64),
                           np.ascontiguousarray(correct, dtype=np.float64), int(n_bins))


def count_disagree(a, b):
    return int(active.count_disagree(np.ascontiguousarray(a, dtype=np.int64),
                                     np.ascontiguousarray(b, dtype=np.int64)))
