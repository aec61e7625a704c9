"""Hot Monte Carlo sampling kernels.

The per-trial simulation loop dominates sweep runtime, so it ships in two
interchangeable backends: a numba-jitted per-trial loop and a vectorized
pure-numpy fallback.  Both consume the same counter-addressed uniforms from
:mod:`chr2comm.rng` (slot layout below), so their outputs are bit-identical;
``CHR2COMM_BACKEND=numpy`` or ``=numba`` in the environment forces a backend,
the default is numba when importable.

Draw slots within a trial stream: 0 = transmitted bit, 1 = tie-break coin,
2 = initial state, then per transition step j: 3+2j = photon count,
4+2j = state jump.  Unused slots are simply never addressed, which keeps the
layout stable between the noise-free and noisy paths.
"""

import os

import numpy as np

from . import rng as _rng

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency, but stay importable
    HAVE_NUMBA = False

_env = os.environ.get("CHR2COMM_BACKEND", "").strip().lower()
if _env not in ("", "numba", "numpy"):
    raise ValueError(f"CHR2COMM_BACKEND must be 'numba' or 'numpy', got {_env!r}")
DEFAULT_BACKEND = _env or ("numba" if HAVE_NUMBA else "numpy")

SLOT_BIT = 0
SLOT_COIN = 1
SLOT_INIT = 2
SLOT_STEP0 = 3


def _simulate_numpy(seed, n_trials, n_obs, prior, init_cdf, photon_cdf, cum3d, emit):
    """Vectorized fallback: one searchsorted batch per step across all trials."""
    keys = _rng.stream_keys(seed, np.arange(n_trials, dtype=np.uint64))
    bits = (_rng.uniforms(keys, SLOT_BIT) < prior).astype(np.int8)
    coins = _rng.uniforms(keys, SLOT_COIN)
    n_states = cum3d.shape[1]
    n_photon = photon_cdf.shape[0]
    state = np.searchsorted(init_cdf, _rng.uniforms(keys, SLOT_INIT), side="right")
    state = np.minimum(state, n_states - 1)
    ys = np.empty((n_trials, n_obs), dtype=np.int16)
    ys[:, 0] = emit[state]
    on = bits == 1
    for j in range(n_obs - 1):
        mat = np.zeros(n_trials, dtype=np.intp)
        if on.any():
            uf = _rng.uniforms(keys[on], SLOT_STEP0 + 2 * j)
            f = np.minimum(np.searchsorted(photon_cdf, uf, side="right"), n_photon - 1)
            mat[on] = 1 + f
        us = _rng.uniforms(keys, SLOT_STEP0 + 2 * j + 1)
        rows = cum3d[mat, state]
        state = np.minimum((us[:, None] >= rows).sum(axis=1), n_states - 1)
        ys[:, j + 1] = emit[state]
    return bits, ys, coins


if HAVE_NUMBA:
    from numba import njit

    _U_GOLDEN = np.uint64(_rng.GOLDEN)
    _U_MIX_A = np.uint64(0xBF58476D1CE4E5B9)
    _U_MIX_B = np.uint64(0x94D049BB133111EB)

    @njit(cache=True, inline="always")
    def _mix64_nb(z):
        z = (z ^ (z >> np.uint64(30))) * _U_MIX_A
        z = (z ^ (z >> np.uint64(27))) * _U_MIX_B
        return z ^ (z >> np.uint64(31))

    @njit(cache=True, inline="always")
    def _uniform_nb(key, ctr):
        raw = _mix64_nb(key + _U_GOLDEN * (np.uint64(ctr) + np.uint64(1)))
        return np.float64(raw >> np.uint64(11)) * 1.1102230246251565e-16  # 2**-53

    @njit(cache=True, inline="always")
    def _find_right(cdf, u):
        # index of the first entry > u, i.e. numpy searchsorted side='right'
        lo = 0
        hi = cdf.shape[0]
        while lo < hi:
            mid = (lo + hi) // 2
            if cdf[mid] <= u:
                lo = mid + 1
            else:
                hi = mid
        return lo

    @njit(cache=True, nogil=True)
    def _simulate_numba(seed, n_trials, n_obs, prior, init_cdf, photon_cdf, cum3d, emit,
                        bits, ys, coins):
        n_states = cum3d.shape[1]
        n_photon = photon_cdf.shape[0]
        for t in range(n_trials):
            key = _mix64_nb(seed + _U_GOLDEN * (np.uint64(t) + np.uint64(1)))
            bit = 1 if _uniform_nb(key, SLOT_BIT) < prior else 0
            bits[t] = bit
            coins[t] = _uniform_nb(key, SLOT_COIN)
            s = _find_right(init_cdf, _uniform_nb(key, SLOT_INIT))
            if s > n_states - 1:
                s = n_states - 1
            ys[t, 0] = emit[s]
            for j in range(n_obs - 1):
                m = 0
                if bit == 1:
                    f = _find_right(photon_cdf, _uniform_nb(key, SLOT_STEP0 + 2 * j))
                    if f > n_photon - 1:
                        f = n_photon - 1
                    m = 1 + f
                u = _uniform_nb(key, SLOT_STEP0 + 2 * j + 1)
                s = _find_right(cum3d[m, s], u)
                if s > n_states - 1:
                    s = n_states - 1
                ys[t, j + 1] = emit[s]


def simulate_observations(seed, n_trials, n_obs, prior, init_cdf, photon_cdf, cum3d, emit,
                          backend: str | None = None):
    """Sample per-trial bits, observation rows, and tie-break coins.

    ``cum3d[m]`` holds cumulative transition rows; matrix 0 drives bit-0 steps
    and matrix 1+f the bit-1 step that saw f photons (noise-free runs pass a
    single-entry ``photon_cdf`` so f is always 0).  Output is independent of
    backend and of how trials are partitioned.
    """
    backend = backend or DEFAULT_BACKEND
    init_cdf = np.ascontiguousarray(init_cdf, dtype=np.float64)
    photon_cdf = np.ascontiguousarray(photon_cdf, dtype=np.float64)
    cum3d = np.ascontiguousarray(cum3d, dtype=np.float64)
    emit = np.ascontiguousarray(emit, dtype=np.int16)
    if backend == "numpy":
        return _simulate_numpy(seed, n_trials, n_obs, prior, init_cdf, photon_cdf, cum3d, emit)
    if not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    bits = np.empty(n_trials, dtype=np.int8)
    ys = np.empty((n_trials, n_obs), dtype=np.int16)
    coins = np.empty(n_trials, dtype=np.float64)
    _simulate_numba(
        np.uint64(seed & _rng.MASK64), n_trials, n_obs, float(prior),
        init_cdf, photon_cdf, cum3d, emit, bits, ys, coins,
    )
    return bits, ys, coins
