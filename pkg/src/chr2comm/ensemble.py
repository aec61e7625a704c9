"""Lumped Markov chain over N independent, identical receptors.

The joint state of N exchangeable receptors is reduced to the occupancy
counts (n_C1, n_O2, n_D3).  Transitions of the lumped chain follow from the
single-receptor one-step matrix by multinomial convolution: the receptors
sitting in each source state scatter independently to destinations, and the
probability of a destination count vector is the convolution of the three
multinomial laws.  This reproduces the hand-built two-receptor matrix and
generalizes to any N.
"""

from dataclasses import dataclass
from functools import lru_cache
import math
from typing import NamedTuple

import numpy as np

from .errors import InvalidSingle
from .kinetics import (
    N_STATES,
    STATE_LABELS,
    RateParams,
    TransitionMatrix,
    build_rate_matrix,
    check_stochastic,
    discretize_euler,
    discretize_exact,
)

_TWO_RECEPTOR_LABELS = "ABCDEF"


class CombinationState(NamedTuple):
    n_c1: int
    n_o2: int
    n_d3: int


def _compositions(total: int, bins: int):
    """All ways to split ``total`` into ``bins`` ordered nonnegative parts,
    in descending lexicographic order."""
    if bins == 1:
        yield (total,)
        return
    for head in range(total, -1, -1):
        for rest in _compositions(total - head, bins - 1):
            yield (head,) + rest


def enumerate_combinations(n_receptors: int, k: int = N_STATES) -> list:
    """Occupancy count vectors of ``n_receptors`` receptors over ``k`` states.

    Exactly C(N+k-1, k-1) states, ordered descending on the leading counts;
    for two receptors over three states this is the conventional A..F order.
    """
    if n_receptors < 1:
        raise ValueError(f"n_receptors must be >= 1, got {n_receptors}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    combos = list(_compositions(n_receptors, k))
    if k == N_STATES:
        combos = [CombinationState(*c) for c in combos]
    return combos


def state_label(state, index: int, n_receptors: int) -> str:
    """Display label: receptor-state name for N=1, letters A.. for N=2, tuple otherwise."""
    if n_receptors == 1:
        return STATE_LABELS[state.index(1)]
    if n_receptors == 2:
        return _TWO_RECEPTOR_LABELS[index]
    return "(%d,%d,%d)" % tuple(state)


@lru_cache(maxsize=None)
def _lump_terms(n_receptors: int):
    """Flattened multinomial-convolution table for ``n_receptors``.

    Each term contributes ``coef * prod_ij P[i,j]**expo[ij]`` to entry
    (src, dst) of the lumped matrix; the table depends only on N, so it is
    built once and reused for every intensity.
    """
    states = enumerate_combinations(n_receptors)
    index = {s: i for i, s in enumerate(states)}
    splits = {}
    for m in range(n_receptors + 1):
        splits[m] = [
            (c, math.factorial(m) // (math.factorial(c[0]) * math.factorial(c[1]) * math.factorial(c[2])))
            for c in _compositions(m, N_STATES)
        ]
    src, dst, coef, expo = [], [], [], []
    for si, s in enumerate(states):
        for d0, w0 in splits[s[0]]:
            for d1, w1 in splits[s[1]]:
                for d2, w2 in splits[s[2]]:
                    target = (d0[0] + d1[0] + d2[0], d0[1] + d1[1] + d2[1], d0[2] + d1[2] + d2[2])
                    src.append(si)
                    dst.append(index[target])
                    coef.append(w0 * w1 * w2)
                    expo.append(d0 + d1 + d2)
    return (
        np.array(src, dtype=np.intp),
        np.array(dst, dtype=np.intp),
        np.array(coef, dtype=float),
        np.array(expo, dtype=np.int64),
    )


def build_combined_matrix(p_single, n_receptors: int) -> np.ndarray:
    """Lumped one-step matrix over occupancy counts from a single-receptor matrix.

    ``p_single`` may be a TransitionMatrix or a bare 3x3 row-stochastic array.
    Destination counts implying a forbidden single-receptor jump inherit exact
    zeros from the corresponding entries of ``p_single``.
    """
    p = p_single.p if isinstance(p_single, TransitionMatrix) else np.asarray(p_single, dtype=float)
    if p.shape != (N_STATES, N_STATES):
        raise InvalidSingle(f"expected a {N_STATES}x{N_STATES} matrix, got shape {p.shape}")
    problem = check_stochastic(p)
    if problem is not None:
        raise InvalidSingle(problem)
    src, dst, coef, expo = _lump_terms(n_receptors)
    vals = coef * np.prod(p.reshape(1, -1) ** expo, axis=1)
    size = len(enumerate_combinations(n_receptors))
    pc = np.zeros((size, size))
    np.add.at(pc, (src, dst), vals)
    return pc


def lump_distribution(pi_single: np.ndarray, n_receptors: int) -> np.ndarray:
    """Multinomial lumping of a single-receptor distribution to occupancy counts."""
    pi = np.asarray(pi_single, dtype=float)
    states = enumerate_combinations(n_receptors)
    counts = np.array(states, dtype=np.int64)
    coefs = np.array(
        [math.factorial(n_receptors) // (math.factorial(a) * math.factorial(b) * math.factorial(c))
         for a, b, c in states],
        dtype=float,
    )
    out = coefs * np.prod(pi[None, :] ** counts, axis=1)
    return out / out.sum()


class EnsembleModel:
    """Receptor-population model: state space plus per-intensity transition matrices.

    Immutable after construction; matrices are built on demand and cached by
    exact intensity value, which keeps photon-noise sampling cheap (photon
    counts hit a small set of distinct intensities).
    """

    def __init__(self, params: RateParams, n_receptors: int, dt: float, mode: str = "exact"):
        if mode not in ("euler", "exact"):
            raise ValueError(f"mode must be 'euler' or 'exact', got {mode!r}")
        self.params = params
        self.n_receptors = int(n_receptors)
        self.dt = float(dt)
        self.mode = mode
        self.states = tuple(enumerate_combinations(self.n_receptors))
        self.index = {s: i for i, s in enumerate(self.states)}
        self.open_counts = np.array([s.n_o2 for s in self.states], dtype=np.int64)
        self._single_cache: dict[float, TransitionMatrix] = {}
        self._combined_cache: dict[float, np.ndarray] = {}

    @property
    def n_states(self) -> int:
        return len(self.states)

    def single_matrix(self, intensity: float) -> TransitionMatrix:
        tm = self._single_cache.get(intensity)
        if tm is None:
            rm = build_rate_matrix(self.params, intensity)
            disc = discretize_euler if self.mode == "euler" else discretize_exact
            tm = disc(rm, self.dt)
            self._single_cache[intensity] = tm
        return tm

    def combined_matrix(self, intensity: float) -> np.ndarray:
        pc = self._combined_cache.get(intensity)
        if pc is None:
            pc = build_combined_matrix(self.single_matrix(intensity), self.n_receptors)
            pc.setflags(write=False)
            self._combined_cache[intensity] = pc
        return pc

    def labels(self) -> list[str]:
        return [state_label(s, i, self.n_receptors) for i, s in enumerate(self.states)]


def initial_distribution(model: EnsembleModel, mode: str, avg_intensity: float | None = None,
                         custom: np.ndarray | None = None) -> np.ndarray:
    """Distribution over combination states at the start of a bit slot.

    ``steady_avg`` lumps the single-receptor stationary vector at the given
    average intensity, ``steady_off`` the one at zero light (all receptors
    closed), and ``custom`` lumps a caller-supplied single-receptor vector.
    """
    from .kinetics import steady_state  # local import avoids a cycle at module load

    if mode == "steady_off":
        pi = steady_state(model.single_matrix(0.0))
    elif mode == "steady_avg":
        if avg_intensity is None:
            raise ValueError("steady_avg requires avg_intensity")
        pi = steady_state(model.single_matrix(float(avg_intensity)))
    elif mode == "custom":
        pi = np.asarray(custom, dtype=float)
        if pi.shape != (N_STATES,) or pi.min() < 0 or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError(f"custom initial vector must be a probability {N_STATES}-vector, got {custom!r}")
    else:
        raise ValueError(f"unknown initial-distribution mode {mode!r}")
    return lump_distribution(pi, model.n_receptors)


@dataclass(frozen=True)
class TrajectorySample:
    """One sampled state path s_0..s_n with the inputs that drove it."""

    states: tuple
    intensities: tuple
    seed_info: str


def sample_trajectories(model: EnsembleModel, init: np.ndarray, intensities, n_samples: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Sample ``n_samples`` state paths; returns (n_samples, len(intensities)+1) indices.

    Step i uses the lumped matrix at ``intensities[i]``; sampling is
    vectorized across paths with one uniform per path per step.
    """
    init = np.asarray(init, dtype=float)
    init_cdf = np.cumsum(init)
    init_cdf[-1] = 1.0
    n_steps = len(intensities)
    out = np.empty((n_samples, n_steps + 1), dtype=np.int64)
    state = np.searchsorted(init_cdf, rng.random(n_samples), side="right")
    np.minimum(state, model.n_states - 1, out=state)
    out[:, 0] = state
    for i, x in enumerate(intensities):
        if x < 0:
            raise ValueError(f"intensity must be nonnegative, got {x!r}")
        cum = np.cumsum(model.combined_matrix(float(x)), axis=1)
        cum[:, -1] = 1.0
        u = rng.random(n_samples)
        nxt = np.empty_like(state)
        for s in np.unique(state):
            mask = state == s
            nxt[mask] = np.searchsorted(cum[s], u[mask], side="right")
        np.minimum(nxt, model.n_states - 1, out=nxt)
        state = nxt
        out[:, i + 1] = state
    return out


def sample_trajectory(model: EnsembleModel, init: np.ndarray, intensities,
                      rng: np.random.Generator, seed_info: str = "") -> TrajectorySample:
    """Single state path drawn from the lumped chain under per-step inputs."""
    idx = sample_trajectories(model, init, intensities, 1, rng)[0]
    return TrajectorySample(
        states=tuple(model.states[i] for i in idx),
        intensities=tuple(float(x) for x in intensities),
        seed_info=seed_info or repr(rng),
    )


def write_combined_matrix_csv(model: EnsembleModel, intensity: float, fh) -> None:
    """Dump the lumped matrix at one intensity as CSV with combination labels."""
    labels = model.labels()
    pc = model.combined_matrix(intensity)
    fh.write("," + ",".join(labels) + "\n")
    for lab, row in zip(labels, pc):
        fh.write(lab + "," + ",".join("%.17g" % v for v in row) + "\n")
