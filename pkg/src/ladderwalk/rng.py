"""Counter-based random streams.

Every random number used for tree sampling is a pure function of
``(key, index, field)``, so windows can be grown in any order and still be
bit-identical.  Walk trajectories use a sequential SplitMix64 stream whose
state is a single ``uint64`` held in a length-1 array (the jitted kernels
update it in place).
"""

import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_FIELD_SALT = np.uint64(0xD1B54A32D192ED03)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# Domain labels for key derivation.
TREE = 1
WALK = 2
AUX = 3

# Fields of the per-block stream.
FIELD_F = 0
FIELD_FP = 1
FIELD_W = 2
FIELD_G0 = 3
FIELD_H0 = 4
FIELD_FP0 = 5
FIELD_W0 = 6


@njit(cache=True, inline="always")
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, inline="always")
def to_unit(z):
    """Uniform on ``(0, 1]``; never returns 0 so ``log`` is always finite."""
    return ((z >> _S11) + np.uint64(1)) * _INV53


@njit(cache=True)
def _derive(seed, domain, index):
    h = mix64(np.uint64(seed) + GOLDEN)
    h = mix64(h ^ (np.uint64(domain) * GOLDEN + _FIELD_SALT))
    return mix64(h + np.uint64(index) * _M2)


def derive_key(seed, domain, index=0):
    """64-bit key for stream ``domain`` of replica ``index`` under ``seed``."""
    return int(_derive(np.uint64(seed), np.uint64(domain), np.uint64(index)))


@njit(cache=True, inline="always")
def keyed_bits(key, index, field):
    h = mix64(key + np.uint64(index) * GOLDEN)
    return mix64(h ^ (np.uint64(field) * _M1 + _FIELD_SALT))


@njit(cache=True)
def keyed_uniforms(key, indices, field):
    """Uniforms on (0, 1] for each (signed) index in ``indices``."""
    out = np.empty(indices.shape[0])
    k = np.uint64(key)
    for i in range(indices.shape[0]):
        out[i] = to_unit(keyed_bits(k, np.uint64(indices[i]), field))
    return out


@njit(cache=True, inline="always")
def next_uniform(state):
    state[0] += GOLDEN
    return to_unit(mix64(state[0]))


@njit(cache=True)
def _fill(state, out):
    for i in range(out.shape[0]):
        out[i] = next_uniform(state)


class WalkStream:
    """Sequential stream for one walker replica."""

    def __init__(self, seed, replica=0, domain=WALK):
        self.state = np.array([derive_key(seed, domain, replica)], dtype=np.uint64)

    def uniform(self):
        return float(next_uniform(self.state))

    def uniforms(self, n):
        out = np.empty(int(n))
        _fill(self.state, out)
        return out

    def copy(self):
        other = WalkStream.__new__(WalkStream)
        other.state = self.state.copy()
        return other
