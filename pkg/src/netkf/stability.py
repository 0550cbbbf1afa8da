"""Exponential-boundedness certificates for the networked Kalman filter.

Two sufficient conditions are computed. For a Markov network state the
certificate bounds the per-step probability that the realized observation
matrix loses full column rank; for a semi-Markov state it bounds, per
renewal, the probability that the observability stack accumulated over one
holding interval stays rank deficient. Both compare a worst-case product of
rank-failure rates and squared spectral norms against 1: strictly below 1
certifies an exponential bound on the expected covariance trace.

Rank-failure rates are computed by exact enumeration of dropout patterns
(shared-prefix search with full-rank pruning) up to 2**20 patterns and by
stratified Monte Carlo beyond that; every rank decision goes through
``numerical_rank`` with one global tolerance, echoed in the report.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from netkf.errors import DimensionError, ModelError
from netkf.linalg import (
    DEFAULT_RANK_TOLERANCE,
    RankTolerance,
    numerical_rank,
    spectral_norm,
    transition_matrix,
)
from netkf.network import MarkovNetworkChain, SemiMarkovNetworkChain, Topology
from netkf.plant import PlantModel

_EXACT_PATTERN_BITS = 20


def _rel(tol: RankTolerance | float) -> float:
    return tol.relative_threshold if isinstance(tol, RankTolerance) else float(tol)


# ---------------------------------------------------------------------------
# Single-slot rank success set


@dataclass(frozen=True)
class RankSuccessSet:
    """All per-edge success patterns whose delivered rows span the state space.

    Patterns are over the edge outcomes (not end-to-end delivery); distinct
    edge patterns mapping to the same delivery pattern are kept separate so
    their probabilities can be summed directly.
    """

    patterns: tuple[tuple[int, ...], ...]
    n_sensors: int
    state_dim: int
    rank_tolerance: float

    def success_probability(self, phi_row) -> float:
        """Probability the realized observation matrix has full column rank,
        given per-edge success probabilities for one network state."""
        phi_row = np.asarray(phi_row, dtype=float).reshape(-1)
        if phi_row.shape[0] != self.n_sensors:
            raise DimensionError(
                f"phi row must have {self.n_sensors} entries, got {phi_row.shape[0]}"
            )
        total = 0.0
        for pat in self.patterns:
            p = 1.0
            for m, g in enumerate(pat):
                p *= phi_row[m] if g else 1.0 - phi_row[m]
            total += p
        return total

    def per_state_probabilities(self, phi: np.ndarray) -> np.ndarray:
        phi = np.asarray(phi, dtype=float)
        return np.array([self.success_probability(row) for row in phi])


def _delivered_rows(plant: PlantModel, theta) -> np.ndarray:
    blocks = [s.c for s, t in zip(plant.sensors, theta) if t]
    if not blocks:
        return np.zeros((0, plant.n))
    return np.vstack(blocks)


def rank_success_set(
    plant: PlantModel,
    topology: Topology,
    tol: RankTolerance | float = DEFAULT_RANK_TOLERANCE,
) -> RankSuccessSet:
    """Enumerate all edge-outcome patterns that yield a full-column-rank
    observation matrix after tree-consistent delivery.

    Exact enumeration is capped at 20 sensors; beyond that the Monte Carlo
    estimator (``rank_failure_rates_mc``) must be used instead.
    """
    m_count = topology.n_sensors
    if m_count > _EXACT_PATTERN_BITS:
        raise ValueError(
            f"exact enumeration over 2**{m_count} patterns exceeds the 2**20 cap; "
            "use rank_failure_rates_mc instead"
        )
    if m_count != plant.n_sensors:
        raise DimensionError(
            f"topology has {m_count} sensors but plant declares {plant.n_sensors}"
        )
    n = plant.n
    good = []
    for gamma in itertools.product((0, 1), repeat=m_count):
        theta = topology.theta_from_gamma(np.asarray(gamma, dtype=np.uint8))
        rows = _delivered_rows(plant, theta)
        if rows.shape[0] >= n and numerical_rank(rows, tol) >= n:
            good.append(tuple(gamma))
    return RankSuccessSet(
        patterns=tuple(sorted(good)),
        n_sensors=m_count,
        state_dim=n,
        rank_tolerance=_rel(tol),
    )


def rank_failure_rates(
    plant: PlantModel,
    topology: Topology,
    chain: MarkovNetworkChain,
    phi: np.ndarray,
    tol: RankTolerance | float = DEFAULT_RANK_TOLERANCE,
) -> np.ndarray:
    """Per previous-state probability that the next slot's observation matrix
    is rank deficient, marginalized over the chain transition."""
    rss = rank_success_set(plant, topology, tol)
    p_full = rss.per_state_probabilities(phi)
    return chain.transition @ (1.0 - p_full)


def _unique_patterns(bits: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct rows of a 0/1 matrix with per-row counts; packs rows into
    integer codes when they fit in 62 bits (much faster than axis-0 unique)."""
    n_bits = bits.shape[1]
    if n_bits <= 62:
        powers = 1 << np.arange(n_bits, dtype=np.int64)
        codes = bits.astype(np.int64) @ powers
        uniq_codes, counts = np.unique(codes, return_counts=True)
        uniq = (uniq_codes[:, None] >> np.arange(n_bits, dtype=np.int64)) & 1
        return uniq.astype(np.uint8), counts
    uniq, counts = np.unique(bits, axis=0, return_counts=True)
    return uniq.astype(np.uint8), counts


def rank_failure_rates_mc(
    plant: PlantModel,
    topology: Topology,
    chain: MarkovNetworkChain,
    phi: np.ndarray,
    n_samples: int = 100_000,
    rng: np.random.Generator | None = None,
    tol: RankTolerance | float = DEFAULT_RANK_TOLERANCE,
) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo counterpart of ``rank_failure_rates``; samples are
    stratified by network state. Returns (estimates, standard errors)."""
    if rng is None:
        rng = np.random.default_rng(0)
    phi = np.asarray(phi, dtype=float)
    n_states = chain.n_states
    m_count = topology.n_sensors
    p_fail = np.empty(n_states)
    var = np.empty(n_states)
    for j in range(n_states):
        gamma = (rng.random((n_samples, m_count)) < phi[j]).astype(np.uint8)
        theta = np.empty_like(gamma)
        for m in range(1, m_count + 1):
            edges = [e - 1 for e in topology.path_edges(m)]
            theta[:, m - 1] = np.bitwise_and.reduce(gamma[:, edges], axis=1)
        uniq, counts = _unique_patterns(theta)
        fail_count = 0
        for pat, cnt in zip(uniq, counts):
            rows = _delivered_rows(plant, pat)
            if rows.shape[0] < plant.n or numerical_rank(rows, tol) < plant.n:
                fail_count += int(cnt)
        p_fail[j] = fail_count / n_samples
        var[j] = p_fail[j] * (1.0 - p_fail[j]) / n_samples
    nu_hat = chain.transition @ p_fail
    stderr = np.sqrt((chain.transition**2) @ var)
    return nu_hat, stderr


# ---------------------------------------------------------------------------
# Multi-step (holding interval) rank failure


def _theta_groups(topology: Topology, phi_row: np.ndarray) -> list[tuple[tuple[int, ...], float]]:
    """Aggregate edge-outcome probabilities by the delivery pattern they induce."""
    m_count = topology.n_sensors
    acc: dict[tuple[int, ...], float] = {}
    for gamma in itertools.product((0, 1), repeat=m_count):
        p = 1.0
        for m, g in enumerate(gamma):
            p *= phi_row[m] if g else 1.0 - phi_row[m]
        if p == 0.0:
            continue
        theta = tuple(int(t) for t in topology.theta_from_gamma(np.asarray(gamma, dtype=np.uint8)))
        acc[theta] = acc.get(theta, 0.0) + p
    return sorted(acc.items())


def _step_blocks(plant: PlantModel, k0: int, delta: int) -> list[list[np.ndarray]]:
    """Per step t in the window, each sensor's rows propagated back to k0."""
    blocks = []
    phi_mat = np.eye(plant.n)
    for t in range(delta):
        if t > 0:
            phi_mat = plant.a(k0 + t - 1) @ phi_mat
        blocks.append([s.c @ phi_mat for s in plant.sensors])
    return blocks


def _window_failure_exact(
    plant: PlantModel,
    topology: Topology,
    phi_row: np.ndarray,
    k0: int,
    delta: int,
    tol: RankTolerance | float,
) -> float:
    """Probability that the observability stack over a delta-step window with
    state-conditioned i.i.d. dropouts never reaches full column rank.

    Depth-first enumeration over per-step delivery patterns with shared
    prefixes; once a prefix reaches full rank the whole subtree is pruned
    (additional rows cannot reduce rank).
    """
    n = plant.n
    groups = _theta_groups(topology, phi_row)
    blocks = _step_blocks(plant, k0, delta)
    m_count = topology.n_sensors
    failure = 0.0

    def recurse(t: int, rows: tuple[np.ndarray, ...], prob: float):
        nonlocal failure
        if t == delta:
            failure += prob
            return
        for theta, p in groups:
            added = [blocks[t][m] for m in range(m_count) if theta[m]]
            if not added:
                recurse(t + 1, rows, prob * p)
                continue
            new_rows = rows + tuple(added)
            stack = np.vstack(new_rows)
            if stack.shape[0] >= n and numerical_rank(stack, tol) >= n:
                continue  # full rank: no failure mass anywhere below
            recurse(t + 1, new_rows, prob * p)

    recurse(0, (), 1.0)
    return failure


def _window_failure_mc(
    plant: PlantModel,
    topology: Topology,
    phi_row: np.ndarray,
    k0: int,
    delta: int,
    n_samples: int,
    rng: np.random.Generator,
    tol: RankTolerance | float,
) -> tuple[float, float]:
    """Monte Carlo estimate of the window rank-failure probability for one
    state, with rank decided once per distinct sampled delivery pattern."""
    m_count = topology.n_sensors
    n = plant.n
    gamma = rng.random((n_samples, delta, m_count)) < phi_row
    theta = np.empty_like(gamma)
    for m in range(1, m_count + 1):
        edges = [e - 1 for e in topology.path_edges(m)]
        theta[..., m - 1] = np.logical_and.reduce(gamma[..., edges], axis=-1)
    flat = theta.reshape(n_samples, delta * m_count).astype(np.uint8)
    uniq, counts = _unique_patterns(flat)
    blocks = _step_blocks(plant, k0, delta)
    row_counts = np.array([s.l for s in plant.sensors])
    fail_count = 0
    for pat, cnt in zip(uniq, counts):
        pat2 = pat.reshape(delta, m_count).astype(bool)
        if int(pat2.sum(axis=0) @ row_counts) < n:
            fail_count += int(cnt)
            continue
        rows = [blocks[t][m] for t in range(delta) for m in range(m_count) if pat2[t, m]]
        if numerical_rank(np.vstack(rows), tol) < n:
            fail_count += int(cnt)
    p_hat = fail_count / n_samples
    return p_hat, float(np.sqrt(p_hat * (1.0 - p_hat) / n_samples))


@dataclass(frozen=True)
class WindowFailure:
    """Window rank-failure rates for one (period offset, holding time) pair."""

    rates: np.ndarray                 # per previous state
    per_state_failure: np.ndarray     # per new state, before the embedded-row mix
    stderr: np.ndarray | None
    method: str


def window_rank_failure_rates(
    plant: PlantModel,
    topology: Topology,
    semichain: SemiMarkovNetworkChain,
    phi: np.ndarray,
    k0: int,
    delta: int,
    *,
    tol: RankTolerance | float = DEFAULT_RANK_TOLERANCE,
    method: str = "auto",
    mc_samples: int = 100_000,
    rng: np.random.Generator | None = None,
) -> WindowFailure:
    """Probability, per previous state, that the observability stack built
    over a holding interval of length ``delta`` starting at period offset
    ``k0`` stays rank deficient.

    Exact enumeration is used while the pattern space has at most 2**20
    elements; otherwise stratified Monte Carlo with the given sample count.
    """
    if not 1 <= delta <= semichain.sigma:
        raise DimensionError(
            f"holding time {delta} outside 1..{semichain.sigma}"
        )
    phi = np.asarray(phi, dtype=float)
    m_count = topology.n_sensors
    exact_feasible = m_count * delta <= _EXACT_PATTERN_BITS
    if method == "exact" and not exact_feasible:
        raise ValueError(
            f"exact enumeration needs {m_count * delta} pattern bits > "
            f"{_EXACT_PATTERN_BITS}; use method='monte_carlo'"
        )
    if method not in ("auto", "exact", "monte_carlo"):
        raise ValueError(f"unknown method {method!r}")
    use_exact = method == "exact" or (method == "auto" and exact_feasible)
    n_states = semichain.n_states
    p_fail = np.empty(n_states)
    se: np.ndarray | None = None
    if use_exact:
        for j in range(n_states):
            p_fail[j] = _window_failure_exact(plant, topology, phi[j], k0, delta, tol)
        resolved = "exact"
    else:
        if rng is None:
            rng = np.random.default_rng(0)
        se = np.empty(n_states)
        for j in range(n_states):
            p_fail[j], se[j] = _window_failure_mc(
                plant, topology, phi[j], k0, delta, mc_samples, rng, tol
            )
        resolved = "monte_carlo"
    rates = semichain.embedded @ p_fail
    stderr = None if se is None else np.sqrt((semichain.embedded**2) @ (se**2))
    return WindowFailure(rates=rates, per_state_failure=p_fail, stderr=stderr, method=resolved)


# ---------------------------------------------------------------------------
# Certificates


_TOLERANCE_NOTE = (
    "full-rank decisions use a numerical SVD threshold (relative tolerance "
    "echoed above); exact rank has no direct floating-point meaning"
)
_PERIOD_NOTE = (
    "worst case over time is taken over one period of the dynamics table, "
    "which upper-bounds the supremum over all steps for periodic models"
)
_HOLDING_NOTE = (
    "certificate weights pair each holding time with the new segment's pmf "
    "at the renewal boundary; the path sampler draws holding times from the "
    "current segment's pmf (the two views describe the same process)"
)


@dataclass
class StabilityReport:
    """Outcome of one certificate evaluation."""

    kind: str
    certified: bool
    lhs: float
    margin: float
    rho: float | None
    sigma: int
    per_state_lhs: np.ndarray
    argmax_state: int
    argmax_time: int
    method: str
    mc_stderr: float | None
    rank_tolerance: float
    notes: tuple[str, ...] = ()
    tables: dict = field(default_factory=dict)

    def verdict(self) -> str:
        return "certified" if self.certified else "not-certified"

    def to_text(self) -> str:
        lines = [
            f"certificate: {self.kind}",
            f"verdict: {self.verdict()}",
            f"lhs_max: {self.lhs!r}",
            "bound: 1.0 (strict)",
            f"margin: {self.margin!r}",
            f"rho: {'' if self.rho is None else repr(self.rho)}",
            f"sigma: {self.sigma}",
            f"argmax_state: {self.argmax_state}",
            f"argmax_time_offset: {self.argmax_time}",
            f"method: {self.method}",
            f"mc_stderr: {'' if self.mc_stderr is None else repr(self.mc_stderr)}",
            f"rank_tolerance: {self.rank_tolerance!r}",
        ]
        lines.append("per_state_lhs:")
        for i, v in enumerate(np.asarray(self.per_state_lhs).reshape(-1)):
            lines.append(f"  state {i}: {float(v)!r}")
        for name, table in self.tables.items():
            arr = np.asarray(table)
            lines.append(f"table {name}: shape {arr.shape}")
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines)

    def table_rows(self) -> list[dict]:
        """Flatten the rate tables for CSV emission."""
        rows: list[dict] = []
        if "rank_failure" in self.tables:
            for i, v in enumerate(self.tables["rank_failure"]):
                rows.append({"state": i, "rank_failure_rate": repr(float(v))})
        if "window_failure" in self.tables:
            arr = self.tables["window_failure"]
            for i in range(arr.shape[0]):
                for k0 in range(arr.shape[1]):
                    for d in range(arr.shape[2]):
                        rows.append(
                            {
                                "state": i,
                                "period_offset": k0,
                                "holding_time": d + 1,
                                "window_failure_rate": repr(float(arr[i, k0, d])),
                            }
                        )
        return rows


def check_markov_certificate(
    plant: PlantModel,
    topology: Topology,
    chain: MarkovNetworkChain,
    phi: np.ndarray,
    tol: RankTolerance | float = DEFAULT_RANK_TOLERANCE,
) -> StabilityReport:
    """Certificate for Markov network states: worst case over states and one
    dynamics period of (rank-failure rate) x (squared spectral norm)."""
    nu = rank_failure_rates(plant, topology, chain, phi, tol)
    norms_sq = np.array([spectral_norm(a_k) ** 2 for a_k in plant.a_table])
    grid = np.outer(nu, norms_sq)
    flat_idx = int(np.argmax(grid))
    argmax_state, argmax_time = np.unravel_index(flat_idx, grid.shape)
    lhs = float(grid[argmax_state, argmax_time])
    certified = lhs < 1.0
    return StabilityReport(
        kind="markov",
        certified=certified,
        lhs=lhs,
        margin=1.0 - lhs,
        rho=lhs if certified else None,
        sigma=1,
        per_state_lhs=grid.max(axis=1),
        argmax_state=int(argmax_state),
        argmax_time=int(argmax_time),
        method="exact",
        mc_stderr=None,
        rank_tolerance=_rel(tol),
        notes=(_TOLERANCE_NOTE, _PERIOD_NOTE),
        tables={"rank_failure": nu, "norms_sq": norms_sq},
    )


def check_semi_markov_certificate(
    plant: PlantModel,
    topology: Topology,
    semichain: SemiMarkovNetworkChain,
    phi: np.ndarray,
    tol: RankTolerance | float = DEFAULT_RANK_TOLERANCE,
    *,
    mc_samples: int = 100_000,
    mc_seed: int = 0,
) -> StabilityReport:
    """Certificate for semi-Markov network states.

    For every previous state i and period offset k0 the left-hand side sums,
    over holding times, the window rank-failure rate times the probability
    of that holding time (new-segment pmf mixed by the embedded row) times
    the squared spectral norm of the window's transition product. The max
    must fall strictly below 1; the certified decay rate is then the max to
    the power 1/sigma.
    """
    phi = np.asarray(phi, dtype=float)
    n_states = semichain.n_states
    sigma = semichain.sigma
    period = plant.a_table.shape[0]

    psi = np.zeros((n_states, sigma))
    for j in range(n_states):
        support = semichain.holding[j]
        psi[j, : support.size] = support
    weights = semichain.embedded @ psi  # (i, delta-1): Pr{holding | prev state}

    norm_sq = np.empty((period, sigma))
    for k0 in range(period):
        for d in range(sigma):
            norm_sq[k0, d] = spectral_norm(transition_matrix(plant, k0 + d + 1, k0)) ** 2

    mu_table = np.empty((n_states, period, sigma))
    var_table = np.zeros((n_states, period, sigma))
    methods = set()
    for k0 in range(period):
        for d in range(sigma):
            # deterministic per-(offset, holding) stream for the MC fallback
            rng = np.random.default_rng(
                np.random.SeedSequence(entropy=mc_seed, spawn_key=(k0, d))
            )
            wf = window_rank_failure_rates(
                plant,
                topology,
                semichain,
                phi,
                k0,
                d + 1,
                tol=tol,
                method="auto",
                mc_samples=mc_samples,
                rng=rng,
            )
            mu_table[:, k0, d] = wf.rates
            if wf.stderr is not None:
                var_table[:, k0, d] = wf.stderr**2
            methods.add(wf.method)

    lhs_grid = np.empty((n_states, period))
    lhs_var = np.zeros((n_states, period))
    for i in range(n_states):
        for k0 in range(period):
            terms = mu_table[i, k0] * weights[i] * norm_sq[k0]
            lhs_grid[i, k0] = terms.sum()
            lhs_var[i, k0] = ((weights[i] * norm_sq[k0]) ** 2 * var_table[i, k0]).sum()

    flat_idx = int(np.argmax(lhs_grid))
    argmax_state, argmax_time = np.unravel_index(flat_idx, lhs_grid.shape)
    lhs = float(lhs_grid[argmax_state, argmax_time])
    certified = lhs < 1.0
    method = methods.pop() if len(methods) == 1 else "mixed"
    stderr = float(np.sqrt(lhs_var[argmax_state, argmax_time])) if method != "exact" else None
    return StabilityReport(
        kind="semi_markov",
        certified=certified,
        lhs=lhs,
        margin=1.0 - lhs,
        rho=lhs ** (1.0 / sigma) if certified else None,
        sigma=sigma,
        per_state_lhs=lhs_grid.max(axis=1),
        argmax_state=int(argmax_state),
        argmax_time=int(argmax_time),
        method=method,
        mc_stderr=stderr,
        rank_tolerance=_rel(tol),
        notes=(_TOLERANCE_NOTE, _PERIOD_NOTE, _HOLDING_NOTE),
        tables={
            "window_failure": mu_table,
            "holding_weights": weights,
            "norms_sq": norm_sq,
        },
    )


def check_single_sensor_certificate(
    plant: PlantModel,
    chain: MarkovNetworkChain,
    phi: np.ndarray,
    tol: RankTolerance | float = DEFAULT_RANK_TOLERANCE,
) -> StabilityReport:
    """Closed-form certificate for one sensor, constant dynamics, and a
    full-column-rank observation matrix: per state, the squared spectral
    norm times the expected next-slot dropout probability."""
    if plant.n_sensors != 1:
        raise DimensionError(
            f"single-sensor certificate requires exactly one sensor, got {plant.n_sensors}"
        )
    a0 = plant.a_table[0]
    for a_k in plant.a_table[1:]:
        if not np.array_equal(a_k, a0):
            raise ModelError("single-sensor certificate requires constant dynamics")
    c1 = plant.sensors[0].c
    if numerical_rank(c1, tol) < plant.n:
        raise ModelError(
            "single-sensor certificate requires a full-column-rank observation "
            f"matrix; rank {numerical_rank(c1, tol)} < {plant.n}"
        )
    phi = np.asarray(phi, dtype=float)
    norm_sq = spectral_norm(a0) ** 2
    per_state = (chain.transition @ (1.0 - phi[:, 0])) * norm_sq
    argmax_state = int(np.argmax(per_state))
    lhs = float(per_state[argmax_state])
    certified = lhs < 1.0
    return StabilityReport(
        kind="single_sensor",
        certified=certified,
        lhs=lhs,
        margin=1.0 - lhs,
        rho=lhs if certified else None,
        sigma=1,
        per_state_lhs=per_state,
        argmax_state=argmax_state,
        argmax_time=0,
        method="exact",
        mc_stderr=None,
        rank_tolerance=_rel(tol),
        notes=(_TOLERANCE_NOTE,),
        tables={"rank_failure": chain.transition @ (1.0 - phi[:, 0])},
    )
