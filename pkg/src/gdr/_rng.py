"""Counter-based random draws usable inside numba kernels.

Each draw is a pure function of ``(seed, a, b, c)``, so results do not depend
on iteration order or on how many threads split the loop.
"""

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


@njit(cache=True, inline="always")
def _mix(z):
    z = z + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def hash4(seed, a, b, c):
    h = _mix(np.uint64(seed))
    h = _mix(h ^ np.uint64(a))
    h = _mix(h ^ np.uint64(b))
    return _mix(h ^ np.uint64(c))


@njit(cache=True, inline="always")
def rand_below(seed, a, b, c, n):
    """Uniform integer in ``[0, n)``."""
    return np.int64(hash4(seed, a, b, c) % np.uint64(n))


@njit(cache=True, inline="always")
def rand_unit(seed, a, b, c):
    """Uniform float in ``[0, 1)`` with 53 bits of resolution."""
    return np.float64(hash4(seed, a, b, c) >> _S11) * (1.0 / 9007199254740992.0)
