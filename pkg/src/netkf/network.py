"""Fading sensor-network model: tree topology, network-state chain,
per-state channel gains, power/bit-rate policies, link dropouts, and
assembly of the realized observation matrix.

The network state is a discrete variable indexing radio-environment
configurations. Conditioned on it, channel gains (and hence link successes)
are independent across links and time slots; temporal correlation enters
only through the state process, which is either a Markov chain or a
semi-Markov chain with finite-support holding times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import integrate

from netkf.errors import DimensionError, ModelError
from netkf.plant import PlantModel

_ROW_SUM_TOL = 1e-12
_PMF_SUM_TOL = 1e-9


# ---------------------------------------------------------------------------
# Topology


@dataclass(frozen=True)
class Topology:
    """Directed tree of sensors rooted at the gateway (node 0).

    ``parents[m-1]`` is the node sensor m transmits to; edge m is the single
    outgoing edge of sensor m.
    """

    parents: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        m_count = len(self.parents)
        if m_count < 1:
            raise ModelError("topology needs at least one sensor")
        paths = []
        for m in range(1, m_count + 1):
            edges = []
            node = m
            seen = set()
            while node != 0:
                if node in seen or not 1 <= node <= m_count:
                    raise ModelError(
                        f"topology is not a tree rooted at the gateway: "
                        f"sensor {m} does not reach node 0"
                    )
                seen.add(node)
                edges.append(node)
                node = self.parents[node - 1]
            paths.append(tuple(edges))
        object.__setattr__(self, "_paths", tuple(paths))

    @property
    def n_sensors(self) -> int:
        return len(self.parents)

    def path_edges(self, m: int) -> tuple[int, ...]:
        """Edge indices (sensor ids) on the route from sensor m to the gateway."""
        if not 1 <= m <= self.n_sensors:
            raise DimensionError(f"no sensor {m} in a {self.n_sensors}-sensor topology")
        return self._paths[m - 1]

    def theta_from_gamma(self, gamma: np.ndarray) -> np.ndarray:
        """End-to-end delivery bits: theta_m = product of gamma over the path edges."""
        gamma = np.asarray(gamma)
        theta = np.empty(self.n_sensors, dtype=np.uint8)
        for m in range(1, self.n_sensors + 1):
            ok = 1
            for e in self._paths[m - 1]:
                ok &= int(gamma[e - 1])
            theta[m - 1] = ok
        return theta


# ---------------------------------------------------------------------------
# Network-state chains


def _check_stochastic_rows(mat: np.ndarray, name: str):
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ModelError(f"{name} must be square, got {mat.shape}")
    if np.any(mat < -1e-15) or np.any(mat > 1 + 1e-15):
        raise ModelError(f"{name} entries must lie in [0, 1]")
    sums = mat.sum(axis=1)
    bad = np.where(np.abs(sums - 1.0) > _ROW_SUM_TOL)[0]
    if bad.size:
        i = int(bad[0])
        raise ModelError(
            f"{name} row {i} sums to {float(sums[i])!r}, expected 1 within {_ROW_SUM_TOL}"
        )


def _check_distribution(vec: np.ndarray, name: str, tol: float):
    if np.any(vec < -1e-15):
        raise ModelError(f"{name} has negative entries")
    s = float(vec.sum())
    if abs(s - 1.0) > tol:
        raise ModelError(f"{name} sums to {s!r}, expected 1 within {tol}")


@dataclass
class MarkovNetworkChain:
    """Time-homogeneous Markov chain on network states 0..n_states-1."""

    transition: np.ndarray
    initial: np.ndarray | None = None

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        _check_stochastic_rows(self.transition, "chain transition matrix")
        s = self.transition.shape[0]
        if self.initial is None:
            self.initial = np.full(s, 1.0 / s)
        self.initial = np.asarray(self.initial, dtype=float).reshape(-1)
        if self.initial.shape != (s,):
            raise ModelError(f"initial distribution must have length {s}")
        _check_distribution(self.initial, "chain initial distribution", _ROW_SUM_TOL)
        self._cum_rows = np.cumsum(self.transition, axis=1)
        self._cum_init = np.cumsum(self.initial)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]


@dataclass
class SemiMarkovNetworkChain:
    """Embedded Markov chain plus per-state holding-time distributions.

    ``holding[i][d]`` is the probability that a visit to state i lasts d+1
    steps; supports are finite so the longest holding time (sigma) is well
    defined, which the multi-step certificate requires.
    """

    embedded: np.ndarray
    holding: tuple[np.ndarray, ...]
    initial: np.ndarray | None = None

    def __post_init__(self):
        self.embedded = np.asarray(self.embedded, dtype=float)
        _check_stochastic_rows(self.embedded, "embedded transition matrix")
        s = self.embedded.shape[0]
        if len(self.holding) != s:
            raise ModelError(
                f"need one holding-time pmf per state, got {len(self.holding)} for {s} states"
            )
        holding = []
        for i, pmf in enumerate(self.holding):
            arr = np.asarray(pmf, dtype=float).reshape(-1)
            if arr.size < 1:
                raise ModelError(f"holding pmf for state {i} is empty")
            _check_distribution(arr, f"holding pmf for state {i}", _PMF_SUM_TOL)
            holding.append(arr)
        self.holding = tuple(holding)
        if self.initial is None:
            self.initial = np.full(s, 1.0 / s)
        self.initial = np.asarray(self.initial, dtype=float).reshape(-1)
        if self.initial.shape != (s,):
            raise ModelError(f"initial distribution must have length {s}")
        _check_distribution(self.initial, "chain initial distribution", _ROW_SUM_TOL)
        self._cum_rows = np.cumsum(self.embedded, axis=1)
        self._cum_init = np.cumsum(self.initial)
        self._cum_holding = tuple(np.cumsum(h) for h in self.holding)

    @property
    def n_states(self) -> int:
        return self.embedded.shape[0]

    @property
    def sigma(self) -> int:
        """Largest holding time with nonzero probability across all states."""
        return max(
            int(np.max(np.nonzero(h > 0.0)[0])) + 1 if np.any(h > 0.0) else 1
            for h in self.holding
        )

    def holding_prob(self, state: int, delta: int) -> float:
        """Probability that a visit to ``state`` lasts exactly ``delta`` steps."""
        pmf = self.holding[state]
        if not 1 <= delta:
            raise DimensionError(f"holding time must be >= 1, got {delta}")
        return float(pmf[delta - 1]) if delta <= pmf.size else 0.0


def _draw_index(cum: np.ndarray, u: float) -> int:
    # cum[-1] can sit a few ulp below 1; clamp so such draws hit the last bin
    return min(int(np.searchsorted(cum, u, side="right")), cum.size - 1)


def sample_state_path(
    chain: MarkovNetworkChain | SemiMarkovNetworkChain,
    horizon: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample the network-state sequence over ``horizon`` steps.

    For the semi-Markov chain the path is built by renewals: given the
    current state, its holding time and the next state are drawn jointly
    (holding time from the current state's pmf, successor from the embedded
    row), and the state stays constant over the holding interval. Virtual
    self-transitions are allowed.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    states = np.empty(horizon, dtype=np.int64)
    if isinstance(chain, MarkovNetworkChain):
        s = _draw_index(chain._cum_init, rng.random())
        for k in range(horizon):
            states[k] = s
            s = _draw_index(chain._cum_rows[s], rng.random())
        return states
    if isinstance(chain, SemiMarkovNetworkChain):
        current = _draw_index(chain._cum_init, rng.random())
        k = 0
        while k < horizon:
            delta = _draw_index(chain._cum_holding[current], rng.random()) + 1
            nxt = _draw_index(chain._cum_rows[current], rng.random())
            end = min(k + delta, horizon)
            states[k:end] = current
            k = end
            current = nxt
        return states
    raise TypeError(f"unsupported chain type {type(chain).__name__}")


# ---------------------------------------------------------------------------
# Channel gain distributions


class GainDistribution:
    """Per-state distribution of a link's channel power gain."""

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        raise NotImplementedError

    def expect(self, fn) -> float:
        """E[fn(h)] for a bounded integrand, by closed form or quadrature."""
        raise NotImplementedError


@dataclass(frozen=True)
class PointMassGain(GainDistribution):
    value: float

    def __post_init__(self):
        if self.value < 0:
            raise ModelError(f"gain must be nonnegative, got {self.value}")

    def sample(self, rng, size):
        return np.full(size, self.value)

    def expect(self, fn):
        return float(fn(self.value))


@dataclass(frozen=True)
class ExponentialGain(GainDistribution):
    """Rayleigh-fading power gain: exponential with the given mean."""

    mean: float

    def __post_init__(self):
        if not self.mean > 0:
            raise ModelError(f"exponential gain mean must be > 0, got {self.mean}")

    def sample(self, rng, size):
        return rng.exponential(self.mean, size)

    def expect(self, fn):
        val, _err = integrate.quad(
            lambda u: float(fn(self.mean * u)) * math.exp(-u),
            0.0,
            np.inf,
            epsabs=1e-10,
            epsrel=1e-10,
            limit=200,
        )
        return val


@dataclass(frozen=True)
class LognormalGain(GainDistribution):
    """Shadow-fading style gain: log of the gain is N(mu, sigma^2)."""

    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise ModelError(f"lognormal sigma must be >= 0, got {self.sigma}")

    def sample(self, rng, size):
        return rng.lognormal(self.mu, self.sigma, size)

    def expect(self, fn):
        if self.sigma == 0:
            return float(fn(math.exp(self.mu)))
        inv_sqrt2pi = 1.0 / math.sqrt(2.0 * math.pi)
        # exponent capped so the far tail (negligible Gaussian weight) cannot
        # overflow; the integrand is bounded
        val, _err = integrate.quad(
            lambda z: float(fn(math.exp(min(self.mu + self.sigma * z, 700.0))))
            * inv_sqrt2pi
            * math.exp(-0.5 * z * z),
            -np.inf,
            np.inf,
            epsabs=1e-10,
            epsrel=1e-10,
            limit=200,
        )
        return val


@dataclass(frozen=True)
class DiscreteGain(GainDistribution):
    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        probs = np.asarray(self.probs, dtype=float)
        if vals.shape != probs.shape or vals.ndim != 1 or vals.size == 0:
            raise ModelError("discrete gain needs matching nonempty values/probs")
        if np.any(vals < 0):
            raise ModelError("discrete gain values must be nonnegative")
        _check_distribution(probs, "discrete gain probabilities", _PMF_SUM_TOL)
        object.__setattr__(self, "values", tuple(float(v) for v in vals))
        object.__setattr__(self, "probs", tuple(float(p) for p in probs))

    def sample(self, rng, size):
        vals = np.asarray(self.values)
        cum = np.cumsum(self.probs)
        return vals[np.searchsorted(cum, rng.random(size), side="right")]

    def expect(self, fn):
        return float(sum(p * float(fn(v)) for v, p in zip(self.values, self.probs)))


# ---------------------------------------------------------------------------
# Power / bit-rate policies


class Policy:
    """Maps (network state, own channel gain) to a transmit parameter."""

    def evaluate(self, state, h):
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantPolicy(Policy):
    value: float

    def evaluate(self, state, h):
        return float(self.value)  # broadcasts against any gain shape


@dataclass(frozen=True)
class SaturatedInversePolicy(Policy):
    """Channel inversion with a saturation limit: min(gain_target / h, limit)."""

    gain_target: float
    limit: float

    def __post_init__(self):
        if self.gain_target < 0 or self.limit <= 0:
            raise ModelError("saturated inverse policy needs gain_target >= 0, limit > 0")

    def evaluate(self, state, h):
        h_arr = np.asarray(h, dtype=float)
        with np.errstate(divide="ignore"):
            raw = np.where(h_arr > 0, self.gain_target / np.maximum(h_arr, 1e-300), np.inf)
        out = np.minimum(raw, self.limit)
        return out if np.ndim(h) else float(out)


@dataclass(frozen=True)
class PerStatePolicy(Policy):
    values: tuple[float, ...]

    def evaluate(self, state, h):
        vals = np.asarray(self.values)
        out = vals[np.asarray(state)]
        if np.ndim(h) and np.ndim(out) == 0:
            out = np.broadcast_to(out, np.shape(h)).copy()
        return out if (np.ndim(h) or np.ndim(state)) else float(out)


# ---------------------------------------------------------------------------
# Packet success functions


class SuccessFunction:
    """Packet success probability as a function of received power and bit-rate.

    Must be nondecreasing in the received signal power and nonincreasing in
    the bit-rate; both are spot-checked on a grid at link construction.
    """

    def evaluate(self, x, b):
        raise NotImplementedError


@dataclass(frozen=True)
class FskSuccess(SuccessFunction):
    """Noncoherent-FSK style packet success: (1 - 0.5 exp(-x / (2 n0)))**b.

    ``retries`` applies a fast-retransmission wrapper 1 - (1 - f)**L.
    """

    n0: float = 1.0
    retries: int = 1

    def __post_init__(self):
        if not self.n0 > 0:
            raise ModelError(f"noise level n0 must be > 0, got {self.n0}")
        if self.retries < 1:
            raise ModelError(f"retries must be >= 1, got {self.retries}")

    def evaluate(self, x, b):
        x_arr = np.asarray(x, dtype=float)
        single = (1.0 - 0.5 * np.exp(-x_arr / (2.0 * self.n0))) ** np.asarray(b, dtype=float)
        if self.retries > 1:
            single = 1.0 - (1.0 - single) ** self.retries
        return single if np.ndim(x) else float(single)


@dataclass(frozen=True)
class DirectSuccess(SuccessFunction):
    """Interprets the received power directly as a success probability.

    Together with point-mass gains this declares a per-state dropout
    probability outright, covering on/off and hidden-Markov style channels.
    """

    def evaluate(self, x, b):
        out = np.clip(np.asarray(x, dtype=float), 0.0, 1.0)
        return out if np.ndim(x) else float(out)


@dataclass(frozen=True)
class TableSuccess(SuccessFunction):
    """Piecewise-linear success curves, one per allowed bit-rate.

    ``curves[b] = (x_knots, values)``; evaluation clamps outside the knots.
    """

    curves: tuple[tuple[float, tuple[float, ...], tuple[float, ...]], ...]

    def __post_init__(self):
        if not self.curves:
            raise ModelError("table success function needs at least one curve")
        for b, xs, ys in self.curves:
            xs_a, ys_a = np.asarray(xs, float), np.asarray(ys, float)
            if xs_a.shape != ys_a.shape or xs_a.ndim != 1 or xs_a.size < 1:
                raise ModelError(f"curve for bit-rate {b} has mismatched knots")
            if np.any(np.diff(xs_a) <= 0):
                raise ModelError(f"curve for bit-rate {b} needs strictly increasing knots")
            if np.any((ys_a < 0) | (ys_a > 1)):
                raise ModelError(f"curve for bit-rate {b} has values outside [0, 1]")

    def _curve(self, b: float):
        for cb, xs, ys in self.curves:
            if cb == b:
                return np.asarray(xs, float), np.asarray(ys, float)
        raise ModelError(f"no success curve declared for bit-rate {b}")

    def evaluate(self, x, b):
        b_arr = np.asarray(b, dtype=float)
        x_arr = np.asarray(x, dtype=float)
        if b_arr.ndim == 0:
            xs, ys = self._curve(float(b_arr))
            out = np.interp(x_arr, xs, ys)
            return out if np.ndim(x) else float(out)
        out = np.empty_like(x_arr)
        for bv in np.unique(b_arr):
            xs, ys = self._curve(float(bv))
            mask = b_arr == bv
            out[mask] = np.interp(x_arr[mask], xs, ys)
        return out


# ---------------------------------------------------------------------------
# Link model and sampling


@dataclass
class LinkModel:
    """One wireless link: per-state gain distributions, success function,
    and power/bit-rate policies."""

    gains: tuple[GainDistribution, ...]
    success: SuccessFunction
    power: Policy = field(default_factory=lambda: ConstantPolicy(1.0))
    bitrate: Policy = field(default_factory=lambda: ConstantPolicy(1.0))

    def __post_init__(self):
        self.gains = tuple(self.gains)
        if not self.gains:
            raise ModelError("link needs one gain distribution per network state")
        self._spot_check_monotonicity()

    def _spot_check_monotonicity(self):
        xs = np.concatenate([[0.0], np.geomspace(1e-3, 50.0, 40)])
        if isinstance(self.success, TableSuccess):
            bitrates = sorted(b for b, _xs, _ys in self.success.curves)
        else:
            bitrates = [1.0, 2.0, 4.0]
        prev = None
        for b in bitrates:
            vals = np.asarray(self.success.evaluate(xs, b), dtype=float)
            if np.any(np.diff(vals) < -1e-12):
                raise ModelError("success function must be nondecreasing in received power")
            if np.any((vals < -1e-12) | (vals > 1 + 1e-12)):
                raise ModelError("success function must map into [0, 1]")
            if prev is not None and np.any(vals - prev > 1e-12):
                raise ModelError("success function must be nonincreasing in bit-rate")
            prev = vals

    def success_given_gain(self, state, h):
        """Packet success probability for gain realization(s) h in a state."""
        u = self.power.evaluate(state, h)
        b = self.bitrate.evaluate(state, h)
        return self.success.evaluate(np.asarray(h) * u, b)


def link_success_prob(link: LinkModel, state: int) -> float:
    """Conditional link success probability given the network state.

    The expectation over the state's gain distribution is taken in closed
    form for degenerate/discrete gains and by adaptive quadrature otherwise;
    the declared policies depend only on the link's own gain, so a scalar
    integral always suffices.
    """
    if not 0 <= state < len(link.gains):
        raise DimensionError(f"state {state} out of range for {len(link.gains)} states")
    gain = link.gains[state]
    val = gain.expect(lambda h: link.success_given_gain(state, h))
    return float(min(max(val, 0.0), 1.0))


def phi_table(links: Sequence[LinkModel], n_states: int) -> np.ndarray:
    """Per-state, per-link success probabilities, shape (n_states, n_links)."""
    for m, link in enumerate(links, start=1):
        if len(link.gains) != n_states:
            raise ModelError(
                f"link {m} declares {len(link.gains)} gain distributions "
                f"for {n_states} network states"
            )
    return np.array(
        [[link_success_prob(link, j) for link in links] for j in range(n_states)]
    )


def path_success_prob(topology: Topology, phi: np.ndarray, m: int, state: int) -> float:
    """Probability the whole route of sensor m delivers, given the state."""
    phi = np.asarray(phi, dtype=float)
    prob = 1.0
    for e in topology.path_edges(m):
        prob *= float(phi[state, e - 1])
    return prob


@dataclass(frozen=True)
class DropoutRealization:
    """One slot's link outcomes: per-edge successes and per-sensor delivery."""

    gamma: np.ndarray
    theta: np.ndarray
    state: int


def sample_dropouts(
    topology: Topology,
    links: Sequence[LinkModel],
    state: int,
    rng: np.random.Generator,
) -> DropoutRealization:
    """Draw one slot of link outcomes in the given network state.

    Gains are drawn independently per link, policies applied, and each edge
    succeeds with its conditional probability; sensor delivery is the product
    of edge outcomes along the route.
    """
    m_count = topology.n_sensors
    if len(links) != m_count:
        raise DimensionError(f"need {m_count} links, got {len(links)}")
    gamma = np.empty(m_count, dtype=np.uint8)
    for idx, link in enumerate(links):
        h = float(link.gains[state].sample(rng, 1)[0])
        p = float(link.success_given_gain(state, h))
        gamma[idx] = rng.random() < p
    theta = topology.theta_from_gamma(gamma)
    return DropoutRealization(gamma=gamma, theta=theta, state=int(state))


def sample_dropout_batch(
    topology: Topology,
    links: Sequence[LinkModel],
    states: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized dropout sampling along a whole state path.

    Returns (gamma, theta) with shape (len(states), n_sensors). Sampling
    order is fixed (per link: gains grouped by state in ascending order,
    then one uniform array for the Bernoulli draw) for reproducibility.
    """
    states = np.asarray(states, dtype=np.int64)
    horizon = states.shape[0]
    m_count = topology.n_sensors
    if len(links) != m_count:
        raise DimensionError(f"need {m_count} links, got {len(links)}")
    gamma = np.empty((horizon, m_count), dtype=np.uint8)
    n_states = len(links[0].gains)
    for idx, link in enumerate(links):
        h = np.empty(horizon)
        for j in range(n_states):
            mask = states == j
            cnt = int(mask.sum())
            if cnt:
                h[mask] = link.gains[j].sample(rng, cnt)
        p = np.asarray(link.success_given_gain(states, h), dtype=float)
        gamma[:, idx] = rng.random(horizon) < p
    theta = np.empty_like(gamma)
    for m in range(1, m_count + 1):
        edges = [e - 1 for e in topology.path_edges(m)]
        theta[:, m - 1] = np.bitwise_and.reduce(gamma[:, edges], axis=1)
    return gamma, theta


# ---------------------------------------------------------------------------
# Observation assembly


@dataclass(frozen=True)
class Observation:
    """Stacked observation for one slot, in two equivalent forms.

    The full form keeps one (possibly zeroed) block row per sensor with the
    complete block-diagonal noise covariance; the compact form keeps only
    delivered sensors' rows with the matching noise blocks. Both induce the
    same filter update.
    """

    full_c: np.ndarray
    full_r: np.ndarray
    compact_c: np.ndarray
    compact_r: np.ndarray
    received: tuple[int, ...]
    received_rows: tuple[int, ...]


def assemble_observation(plant: PlantModel, theta: np.ndarray, k: int = 0) -> Observation:
    """Build the realized observation matrix and noise covariance at step k."""
    theta = np.asarray(theta).reshape(-1)
    m_count = plant.n_sensors
    if theta.shape[0] != m_count:
        raise DimensionError(f"theta must have length {m_count}, got {theta.shape[0]}")
    n = plant.n
    total = plant.total_rows
    full_c = np.zeros((total, n))
    full_r = np.zeros((total, total))
    compact_blocks = []
    compact_noise = []
    received = []
    received_rows = []
    offset = 0
    for m, sensor in enumerate(plant.sensors):
        rows = slice(offset, offset + sensor.l)
        r_k = sensor.r(k)
        full_r[rows, rows] = r_k
        if theta[m]:
            full_c[rows] = sensor.c
            compact_blocks.append(sensor.c)
            compact_noise.append(r_k)
            received.append(m + 1)
            received_rows.extend(range(offset, offset + sensor.l))
        offset += sensor.l
    if compact_blocks:
        compact_c = np.vstack(compact_blocks)
        total_recv = compact_c.shape[0]
        compact_r = np.zeros((total_recv, total_recv))
        pos = 0
        for blk in compact_noise:
            size = blk.shape[0]
            compact_r[pos : pos + size, pos : pos + size] = blk
            pos += size
    else:
        compact_c = np.zeros((0, n))
        compact_r = np.zeros((0, 0))
    return Observation(
        full_c=full_c,
        full_r=full_r,
        compact_c=compact_c,
        compact_r=compact_r,
        received=tuple(received),
        received_rows=tuple(received_rows),
    )
