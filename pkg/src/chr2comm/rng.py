"""Counter-based random numbers for reproducible, order-independent sampling.

Every uniform draw is a pure function of (master seed, stream id, counter):

    key(seed, s)   = mix64(seed + GOLDEN * (s + 1))
    raw(key, j)    = mix64(key + GOLDEN * (j + 1))
    uniform        = (raw >> 11) * 2**-53          # in [0, 1)

``mix64`` is the SplitMix64 finalizer, so ``raw(key, 0), raw(key, 1), ...``
is exactly the SplitMix64 output sequence seeded at ``key``.  Because draws
are addressed rather than consumed, results are identical no matter how
trials are batched, ordered, or spread across workers.

The same arithmetic is reimplemented with numba in :mod:`chr2comm.kernels`;
tests assert bit-equality between the scalar, vectorized, and jitted forms.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MIX_A = 0xBF58476D1CE4E5B9
_MIX_B = 0x94D049BB133111EB

U53_INV = 2.0**-53


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a 64-bit integer (Python-int reference form)."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MIX_A) & MASK64
    z = ((z ^ (z >> 27)) * _MIX_B) & MASK64
    return z ^ (z >> 31)

def stream_key(seed: int, stream: int) -> int:
    """Key of stream ``stream`` under ``seed``; streams are trials, grid points, etc."""
    return mix64((seed + GOLDEN * (stream + 1)) & MASK64)

def uniform(key: int, ctr: int) -> float:
    """Draw ``ctr`` of the stream with the given key, as a float64 in [0, 1)."""
    return (mix64((key + GOLDEN * (ctr + 1)) & MASK64) >> 11) * U53_INV


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(_MIX_A)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(_MIX_B)
    return z ^ (z >> np.uint64(31))

def stream_keys(seed: int, streams: np.ndarray) -> np.ndarray:
    """Vectorized ``stream_key`` over an array of stream ids."""
    s = streams.astype(np.uint64)
    with np.errstate(over="ignore"):  # uint64 wraparound is the point
        return _mix64_vec(np.uint64(seed & MASK64) + np.uint64(GOLDEN) * (s + np.uint64(1)))

def uniforms(keys: np.ndarray, ctr) -> np.ndarray:
    """Vectorized ``uniform``; ``ctr`` may be a scalar or an array broadcastable to keys."""
    c = np.asarray(ctr, dtype=np.uint64)
    with np.errstate(over="ignore"):
        raw = _mix64_vec(keys + np.uint64(GOLDEN) * (c + np.uint64(1)))
    return (raw >> np.uint64(11)).astype(np.float64) * U53_INV
