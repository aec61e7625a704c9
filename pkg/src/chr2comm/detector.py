"""MAP detection of the transmitted bit from per-window open-receptor counts.

The receiver reads the conducted current in n windows of dt each; window i
reports the number of open receptors.  The first window samples the initial
state directly and each later window follows one lumped-chain step, so a bit
slot spans n observations and n-1 transitions.  Likelihoods come from a
forward recursion over hidden combination states restricted to states whose
emission matches the observed count.
"""

from dataclasses import dataclass
from itertools import product
import math

import numpy as np

from .ensemble import EnsembleModel, initial_distribution, state_label
from .errors import InfeasibleObservation, TableTooLarge

ERASURE = "erasure"

_TABLE_GUARD = 6561  # 3**8: sequence enumeration cap


@dataclass(frozen=True)
class DetectorConfig:
    """Detection-side knobs; the chain itself lives in the EnsembleModel."""

    prior: float = 0.5
    tie_rule: str = "coin"
    init_mode: str = "steady_avg"
    custom_init: tuple | None = None
    x_on: float = 1.0
    binary_readout: bool = False

    def __post_init__(self):
        if not 0.0 <= self.prior <= 1.0:
            raise ValueError(f"prior must be in [0, 1], got {self.prior!r}")
        if self.tie_rule not in ("coin", "erasure"):
            raise ValueError(f"tie_rule must be 'coin' or 'erasure', got {self.tie_rule!r}")
        if self.init_mode not in ("steady_avg", "steady_off", "custom"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        if not math.isfinite(self.x_on) or self.x_on < 0:
            raise ValueError(f"x_on must be nonnegative, got {self.x_on!r}")


@dataclass(frozen=True)
class PosteriorResult:
    p1: float
    p0: float
    decision: object  # 0, 1, or ERASURE
    feasible: bool = True


def emission(state) -> int:
    """Observable symbol of a combination state: the open-receptor count."""
    return int(state[1])


def emission_map(model: EnsembleModel, binary: bool = False) -> np.ndarray:
    emit = model.open_counts.copy()
    if binary:
        emit = (emit > 0).astype(np.int64)
    return emit


def resolve_initial(model: EnsembleModel, config: DetectorConfig) -> np.ndarray:
    """Lumped start-of-slot distribution; steady_avg uses x_avg = prior * x_on."""
    return initial_distribution(
        model,
        config.init_mode,
        avg_intensity=config.prior * config.x_on,
        custom=config.custom_init,
    )


def forward_likelihoods(ys: np.ndarray, p: np.ndarray, init: np.ndarray,
                        emit: np.ndarray, n_symbols: int) -> np.ndarray:
    """Batched p(y|x) for observation rows ``ys`` under one transition matrix.

    alpha starts as the initial distribution masked to states emitting y_1,
    then alternates a chain step with the next emission mask.
    """
    ys = np.asarray(ys)
    if ys.ndim == 1:
        ys = ys[None, :]
    match = np.zeros((n_symbols, p.shape[0]))
    match[emit, np.arange(p.shape[0])] = 1.0
    alpha = init[None, :] * match[ys[:, 0]]
    for i in range(1, ys.shape[1]):
        alpha = (alpha @ p) * match[ys[:, i]]
    return alpha.sum(axis=1)


def _hypothesis_weights(y, model: EnsembleModel, config: DetectorConfig):
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 1 or y.size < 1:
        raise ValueError("observation must be a nonempty 1-d sequence")
    n_symbols = 2 if config.binary_readout else model.n_receptors + 1
    if y.min() < 0 or y.max() >= n_symbols:
        raise ValueError(f"observation symbols must lie in [0, {n_symbols - 1}]")
    emit = emission_map(model, config.binary_readout)
    init = resolve_initial(model, config)
    like0 = forward_likelihoods(y, model.combined_matrix(0.0), init, emit, n_symbols)[0]
    like1 = forward_likelihoods(y, model.combined_matrix(config.x_on), init, emit, n_symbols)[0]
    return like0, like1


def likelihood(y, x: int, model: EnsembleModel, config: DetectorConfig) -> float:
    """p(y | bit x); zero for observations the hypothesis cannot produce."""
    like0, like1 = _hypothesis_weights(y, model, config)
    return float(like1 if x else like0)


def posterior(y, model: EnsembleModel, config: DetectorConfig,
              rng: np.random.Generator | None = None) -> PosteriorResult:
    """Bayes posterior over the bit and the resulting decision.

    Exact posterior ties go to the tie rule: a fair pseudorandom bit under
    'coin', the erasure symbol under 'erasure'.  With a degenerate prior the
    posterior follows the prior on observations the favored hypothesis cannot
    produce.
    """
    like0, like1 = _hypothesis_weights(y, model, config)
    if like0 == 0.0 and like1 == 0.0:
        raise InfeasibleObservation(f"observation {list(np.asarray(y))} impossible under both hypotheses")
    w0 = like0 * (1.0 - config.prior)
    w1 = like1 * config.prior
    if w0 + w1 == 0.0:  # feasible y ruled out by a 0/1 prior
        p1 = config.prior
    else:
        p1 = float(w1 / (w0 + w1))
    p0 = 1.0 - p1
    if p1 > p0:
        decision = 1
    elif p0 > p1:
        decision = 0
    elif config.tie_rule == "erasure":
        decision = ERASURE
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        decision = 1 if rng.random() < 0.5 else 0
    return PosteriorResult(p1=p1, p0=p0, decision=decision, feasible=True)


@dataclass(frozen=True)
class TableRow:
    sequence: tuple  # state indices s_1..s_n
    labels: str  # dash-joined display labels
    y: tuple  # emitted observation
    p1: float | None
    p0: float | None
    feasible: bool


# One-step reachability of the photocycle: stay anywhere, C1->O2, O2->D3, D3->C1.
_STRUCTURAL_EDGES = np.array(
    [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]
)


def _structural_mask(model: EnsembleModel) -> np.ndarray:
    from .ensemble import build_combined_matrix

    return build_combined_matrix(_STRUCTURAL_EDGES, model.n_receptors) > 0.0


def posterior_table(model: EnsembleModel, config: DetectorConfig, n_obs: int) -> list[TableRow]:
    """Posteriors for every length-n state sequence, as in the reference table.

    Sequences containing a jump the photocycle forbids in one step are marked
    infeasible; posteriors are computed from the emitted observation, so rows
    sharing an emission share (p1, p0).
    """
    n_states = model.n_states
    if n_states**n_obs > _TABLE_GUARD:
        raise TableTooLarge(
            f"{n_states}**{n_obs} = {n_states**n_obs} sequences exceed the {_TABLE_GUARD} guard"
        )
    emit = emission_map(model, config.binary_readout)
    reachable = _structural_mask(model)
    cache: dict[tuple, tuple] = {}
    rows = []
    for seq in product(range(n_states), repeat=n_obs):
        y = tuple(int(emit[s]) for s in seq)
        feasible = all(reachable[a, b] for a, b in zip(seq, seq[1:]))
        if y not in cache:
            try:
                res = posterior(np.array(y), model, config)
                cache[y] = (res.p1, res.p0)
            except InfeasibleObservation:
                cache[y] = (None, None)
        p1, p0 = cache[y]
        labels = "-".join(state_label(model.states[s], s, model.n_receptors) for s in seq)
        rows.append(TableRow(sequence=seq, labels=labels, y=y, p1=p1, p0=p0, feasible=feasible))
    return rows


def write_posterior_table_csv(rows: list[TableRow], fh) -> None:
    fh.write("sequence,y,p_x1,p_x0,feasible\n")
    for r in rows:
        p1 = "" if r.p1 is None else "%.17g" % r.p1
        p0 = "" if r.p0 is None else "%.17g" % r.p0
        fh.write(
            "%s,%s,%s,%s,%s\n"
            % (r.labels, "-".join(str(v) for v in r.y), p1, p0, "true" if r.feasible else "false")
        )
