"""Single-receptor photocycle model.

The receptor cycles C1 -> O2 -> D3 -> C1; reverse jumps are forbidden.  Only
the opening step C1 -> O2 is light-sensitive, with rate ``q12_per_lumen * x``
for intensity ``x`` in lumens.  This module builds the continuous-time rate
matrix, turns it into a one-step transition matrix (first-order or exact),
and solves for stationary distributions.
"""

from dataclasses import dataclass
from enum import IntEnum
import math

import numpy as np

from .errors import InvalidStep, NegativeIntensity, NegativeRate, NonUniqueStationary

STOCHASTIC_TOL = 1e-12
STATIONARY_TOL = 1e-10

N_STATES = 3
STATE_LABELS = ("C1", "O2", "D3")


class ReceptorState(IntEnum):
    C1 = 0  # closed / ground state, light-sensitive
    O2 = 1  # open, the only conducting state
    D3 = 2  # desensitized: non-conducting and blind to light


@dataclass(frozen=True)
class RateParams:
    """Photocycle rate coefficients; q12 is per second per lumen, the rest per second."""

    q12_per_lumen: float = 5000.0
    q23: float = 50.0
    q31: float = 17.0

    def __post_init__(self):
        for name in ("q12_per_lumen", "q23", "q31"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise NegativeRate(f"{name} must be nonnegative and finite, got {v!r}")


@dataclass(frozen=True)
class RateMatrix:
    """Continuous-time generator Q (rows sum to zero) at a fixed input intensity."""

    q: np.ndarray
    intensity: float


@dataclass(frozen=True)
class TransitionMatrix:
    """One-step matrix P with its step size and discretization mode tag."""

    p: np.ndarray
    dt: float
    mode: str

    def __post_init__(self):
        problem = check_stochastic(self.p)
        if problem is not None:
            raise ValueError(f"not a transition matrix: {problem}")


def check_stochastic(p: np.ndarray) -> str | None:
    """Return a description of the first stochasticity violation, or None."""
    p = np.asarray(p)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        return f"shape {p.shape} is not square"
    if not np.all(np.isfinite(p)):
        return "non-finite entries"
    if p.min() < -STOCHASTIC_TOL or p.max() > 1.0 + STOCHASTIC_TOL:
        return f"entries outside [0, 1]: min {p.min()}, max {p.max()}"
    err = np.abs(p.sum(axis=1) - 1.0).max()
    if err > STOCHASTIC_TOL:
        return f"row sums deviate from 1 by {err:.3e}"
    return None


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def build_rate_matrix(params: RateParams, x: float) -> RateMatrix:
    """Rate matrix at light intensity ``x`` lumens; opening rate scales linearly in x."""
    if not math.isfinite(x) or x < 0:
        raise NegativeIntensity(f"intensity must be nonnegative and finite, got {x!r}")
    q12 = params.q12_per_lumen * x
    q = np.array(
        [
            [-q12, q12, 0.0],
            [0.0, -params.q23, params.q23],
            [params.q31, 0.0, -params.q31],
        ]
    )
    return RateMatrix(_frozen(q), x)


def euler_step_limit(rm: RateMatrix) -> float:
    """Largest dt for which I + dt*Q stays a probability matrix (inf if Q = 0)."""
    fastest = float(np.max(-np.diag(rm.q)))
    return math.inf if fastest == 0.0 else 1.0 / fastest


def discretize_euler(rm: RateMatrix, dt: float) -> TransitionMatrix:
    """First-order step P = I + dt*Q; rejects dt beyond the validity bound."""
    if dt <= 0:
        raise InvalidStep(f"dt must be positive, got {dt!r}")
    limit = euler_step_limit(rm)
    if dt > limit:
        raise InvalidStep(
            f"euler step dt={dt:g} s exceeds the validity bound 1/max|Q_ii|={limit:g} s "
            f"(fastest rate {1.0 / limit:g}/s); use the exact mode for steps this large"
        )
    p = np.eye(N_STATES) + dt * rm.q
    return TransitionMatrix(_frozen(p), dt, "euler")


def discretize_exact(rm: RateMatrix, dt: float) -> TransitionMatrix:
    """Exact step P = exp(dt*Q) via uniformization.

    Writing Q = rate*(B - I) with B = I + Q/rate nonnegative and row-stochastic,
    exp(dt*Q) is a Poisson-weighted sum of powers of B, so every term is a
    probability matrix and the result is nonnegative by construction.  Large
    rate*dt is split as exp(dt*Q) = exp(dt*Q/m)**m to keep the series short.
    """
    if dt <= 0:
        raise InvalidStep(f"dt must be positive, got {dt!r}")
    rate = float(np.max(-np.diag(rm.q)))
    if rate == 0.0:
        return TransitionMatrix(_frozen(np.eye(N_STATES)), dt, "exact")
    x = rate * dt
    squarings = max(0, math.ceil(math.log2(x / 20.0))) if x > 20.0 else 0
    x /= 2**squarings

    b = np.eye(N_STATES) + rm.q / rate
    term = np.eye(N_STATES)
    weight = math.exp(-x)
    acc = weight * term
    total = weight
    k = 0
    while not (k >= x and weight < 1e-17):  # past the mode, remaining tail < 2*weight
        k += 1
        weight *= x / k
        term = term @ b
        acc += weight * term
        total += weight
    p = acc / total
    for _ in range(squarings):
        p = p @ p
    return TransitionMatrix(_frozen(p), dt, "exact")


def recurrent_classes(p: np.ndarray) -> list[tuple[int, ...]]:
    """Closed communicating classes of a stochastic matrix (edges where P > 0)."""
    p = np.asarray(p)
    n = p.shape[0]
    reach = (p > 0) | np.eye(n, dtype=bool)
    for k in range(n):  # transitive closure
        reach |= reach[:, k : k + 1] & reach[k : k + 1, :]
    classes = []
    seen = np.zeros(n, dtype=bool)
    for i in range(n):
        if seen[i]:
            continue
        comm = reach[i] & reach[:, i]
        members = np.flatnonzero(comm)
        seen[members] = True
        if not (reach[members] & ~comm).any():
            classes.append(tuple(int(m) for m in members))
    return classes


def steady_state(p) -> np.ndarray:
    """Stationary distribution pi with pi P = pi, if it is unique.

    Solves the linear system (P^T - I) pi = 0 with the normalization row
    appended; raises NonUniqueStationary (listing all recurrent classes) when
    the chain has more than one closed class.
    """
    mat = p.p if isinstance(p, TransitionMatrix) else np.asarray(p, dtype=float)
    classes = recurrent_classes(mat)
    if len(classes) != 1:
        raise NonUniqueStationary(
            f"stationary vector is not unique: {len(classes)} recurrent classes {classes}",
            classes,
        )
    n = mat.shape[0]
    a = np.vstack([mat.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(a, b, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()
