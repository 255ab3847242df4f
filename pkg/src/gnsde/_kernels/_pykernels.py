"""Numpy fallbacks for the compiled kernels.

Results are bitwise identical to the compiled versions: accumulation runs in
CSR order starting from 0.0, and the integer mixing wraps modulo 2**64.
"""

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STRIDE = np.uint64(0xD1B54A32D192ED03)


def _splitmix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def csr_matmul(indptr, indices, values, x):
    n = indptr.shape[0] - 1
    out = np.zeros((n, x.shape[1]), dtype=np.float64)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    np.add.at(out, rows, values[:, None] * x[indices])
    return out


def counter_bits(seed, start, count):
    with np.errstate(over="ignore"):
        key = _splitmix(np.array([seed], dtype=np.uint64))[0]
        ctr = np.arange(count, dtype=np.uint64) + np.uint64(start)
        return _splitmix(key ^ (ctr * _STRIDE))
