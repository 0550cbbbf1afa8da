"""Monte Carlo experiment engine and empirical boundedness probes.

Trials are independent and embarrassingly parallel: trial t derives its
generator from the master seed by spawn key, so results are identical for
any worker count; the aggregator always reduces in trial-index order.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import nnls

from netkf.errors import NumericalError
from netkf.kalman import FilterState, kf_step
from netkf.network import assemble_observation, sample_dropout_batch, sample_state_path
from netkf.plant import simulate_plant
from netkf.scenario import Scenario

log = logging.getLogger("netkf.montecarlo")


@dataclass
class TrialLog:
    """Per-step records of one trial: chain state, link outcomes, delivery
    outcomes, and the pre-update covariance trace."""

    states: np.ndarray      # (horizon,)
    gamma: np.ndarray       # (horizon, M)
    theta: np.ndarray       # (horizon, M)
    trace_p: np.ndarray     # (horizon,), NaN after a numerical abort
    error_step: int | None = None


@dataclass
class MonteCarloResult:
    """Aggregated covariance-trace statistics plus the raw trial logs."""

    steps: np.ndarray
    mean: np.ndarray
    q05: np.ndarray
    q50: np.ndarray
    q95: np.ndarray
    alive: np.ndarray
    logs: list[TrialLog]
    n_trials: int
    n_failed: int
    seed: int

    def series_rows(self) -> list[tuple]:
        return [
            (int(k), float(m), float(a), float(b), float(c), int(n))
            for k, m, a, b, c, n in zip(
                self.steps, self.mean, self.q05, self.q50, self.q95, self.alive
            )
        ]

    def to_csv(self, path: str | Path) -> None:
        """Emit the per-step series; floats are serialized with full
        round-trip precision."""
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", "mean_trP", "q05", "q50", "q95", "n_trials_alive"])
            for k, m, a, b, c, n in self.series_rows():
                writer.writerow([k, repr(m), repr(a), repr(b), repr(c), n])


def read_series_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Parse a series CSV back into arrays (exact float round trip)."""
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        rows = list(reader)
    out: dict[str, np.ndarray] = {}
    for col in ("k", "n_trials_alive"):
        out[col] = np.array([int(r[col]) for r in rows])
    for col in ("mean_trP", "q05", "q50", "q95"):
        out[col] = np.array([float(r[col]) for r in rows])
    return out


def _trial_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=master_seed, spawn_key=(index,))


def _run_trial(scenario: Scenario, horizon: int, seed_seq: np.random.SeedSequence) -> TrialLog:
    rng = np.random.default_rng(seed_seq)
    plant = scenario.plant
    states = sample_state_path(scenario.chain, horizon, rng)
    traj = simulate_plant(plant, horizon, rng)
    gamma, theta = sample_dropout_batch(scenario.topology, scenario.links, states, rng)

    trace = np.full(horizon, np.nan)
    fs = FilterState(xhat=plant.x0.copy(), p=plant.p0.copy(), k=0)
    error_step: int | None = None
    obs_cache: dict = {}
    r_period = int(np.lcm.reduce([s.r_table.shape[0] for s in plant.sensors]))
    for k in range(horizon):
        trace[k] = float(np.trace(fs.p))
        key = (theta[k].tobytes(), k % r_period)
        obs = obs_cache.get(key)
        if obs is None:
            obs = assemble_observation(plant, theta[k], k)
            obs_cache[key] = obs
        try:
            if obs.received:
                y = np.concatenate([traj.measurements[m - 1][k] for m in obs.received])
                fs = kf_step(fs, plant.a(k), plant.q(k), obs.compact_c, obs.compact_r, y)
            else:
                fs = kf_step(fs, plant.a(k), plant.q(k))
        except NumericalError as exc:
            error_step = k
            trace[k + 1 :] = np.nan
            log.warning("trial aborted at step %d: %s", k, exc)
            break
    return TrialLog(states=states, gamma=gamma, theta=theta, trace_p=trace, error_step=error_step)


def _run_trial_batch(args) -> list[tuple[int, TrialLog]]:
    scenario, horizon, master_seed, indices = args
    return [(i, _run_trial(scenario, horizon, _trial_seed(master_seed, i))) for i in indices]


def run_monte_carlo(
    scenario: Scenario,
    trials: int | None = None,
    horizon: int | None = None,
    seed: int | None = None,
    workers: int = 1,
) -> MonteCarloResult:
    """Run independent trials and aggregate per-step trace statistics.

    Defaults come from the scenario's experiment block. Trials that abort on
    a numerical error are counted and excluded from the per-step statistics
    from the failing step onward.
    """
    trials = scenario.experiment.trials if trials is None else int(trials)
    horizon = scenario.experiment.horizon if horizon is None else int(horizon)
    seed = scenario.experiment.seed if seed is None else int(seed)
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")

    indices = list(range(trials))
    results: dict[int, TrialLog] = {}
    if workers <= 1 or trials == 1:
        for i in indices:
            results[i] = _run_trial(scenario, horizon, _trial_seed(seed, i))
    else:
        chunk = max(1, trials // (workers * 4))
        batches = [
            (scenario, horizon, seed, indices[pos : pos + chunk])
            for pos in range(0, trials, chunk)
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for batch_result in pool.map(_run_trial_batch, batches):
                for i, tl in batch_result:
                    results[i] = tl

    logs = [results[i] for i in range(trials)]
    v = np.vstack([tl.trace_p for tl in logs])
    alive = (~np.isnan(v)).sum(axis=0)
    with np.errstate(invalid="ignore"):
        mean = np.nanmean(v, axis=0)
        q05, q50, q95 = np.nanquantile(v, [0.05, 0.50, 0.95], axis=0)
    n_failed = sum(1 for tl in logs if tl.error_step is not None)
    if n_failed:
        log.info("%d of %d trials aborted on numerical errors", n_failed, trials)
    return MonteCarloResult(
        steps=np.arange(horizon),
        mean=mean,
        q05=q05,
        q50=q50,
        q95=q95,
        alive=alive,
        logs=logs,
        n_trials=trials,
        n_failed=n_failed,
        seed=seed,
    )


# ---------------------------------------------------------------------------
# Exponential-bound fitting


@dataclass
class BoundFit:
    """Least-squares fit of alpha * rho**k + beta to a per-step mean series.

    ``residual`` is the largest amount by which the series exceeds the fit
    (clipped below at zero); ``ok`` is False when no exponential bound of
    this shape describes the data within the relative tolerance, which is a
    valid experimental outcome rather than an error.
    """

    alpha: float
    rho: float
    beta: float
    residual: float
    ok: bool

    @property
    def rel_residual(self) -> float:
        return self.residual / self.beta if self.beta > 0 else np.inf if self.residual > 0 else 0.0


def _nnls_at_rho(series: np.ndarray, rho: float) -> tuple[float, float, float]:
    k = np.arange(series.size)
    design = np.column_stack([rho**k, np.ones(series.size)])
    coef, rnorm = nnls(design, series)
    return float(coef[0]), float(coef[1]), float(rnorm**2)


def fit_bound(series, rel_tol: float = 0.05) -> BoundFit:
    """Fit a decaying-exponential-plus-constant envelope to a mean series.

    The decay rate is found by golden-section search on [0, 1); at each
    candidate rate the offset and amplitude come from nonnegative least
    squares. Requires at least 50 finite values.
    """
    s = np.asarray(series, dtype=float).reshape(-1)
    if s.size < 50:
        raise ValueError(f"series must have >= 50 entries, got {s.size}")
    if not np.all(np.isfinite(s)):
        raise ValueError("series contains non-finite entries")
    scale = float(np.max(np.abs(s)))
    if scale == 0.0:
        return BoundFit(alpha=0.0, rho=0.0, beta=0.0, residual=0.0, ok=True)
    work = s / scale

    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    lo, hi = 0.0, 1.0 - 1e-9
    x1 = hi - inv_phi * (hi - lo)
    x2 = lo + inv_phi * (hi - lo)
    f1 = _nnls_at_rho(work, x1)[2]
    f2 = _nnls_at_rho(work, x2)[2]
    for _ in range(90):
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - inv_phi * (hi - lo)
            f1 = _nnls_at_rho(work, x1)[2]
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + inv_phi * (hi - lo)
            f2 = _nnls_at_rho(work, x2)[2]
    rho = x1 if f1 <= f2 else x2
    alpha_s, beta_s, _sse = _nnls_at_rho(work, rho)
    alpha, beta = alpha_s * scale, beta_s * scale
    k = np.arange(s.size)
    residual = float(max(0.0, np.max(s - (alpha * rho**k + beta))))
    if beta > 0:
        ok = residual <= rel_tol * beta
    else:
        ok = residual <= 1e-9 * scale
    return BoundFit(alpha=alpha, rho=float(rho), beta=beta, residual=residual, ok=ok)


# ---------------------------------------------------------------------------
# Conditional drift probe


@dataclass
class DriftBin:
    state: int
    v_lo: float
    v_hi: float
    count: int
    mean_v: float
    mean_v_next: float
    conclusive: bool


@dataclass
class DriftProbe:
    """Empirical check that the covariance trace satisfies a one-step
    conditional drift bound mean(V_next | state, V bin) <= rho * V + beta.

    ``beta_hat`` is the largest bin excess over rho * mean(V); the probe
    passes when that excess is finite and stable between the first and
    second halves of the time horizon (ratio below 2). Divergent dynamics
    show up as a second-half excess far above the first half's.
    """

    rho: float
    beta_hat: float
    beta_first_half: float
    beta_second_half: float
    bins: list[DriftBin]
    passed: bool
    n_samples: int


def drift_probe(logs: list[TrialLog], rho_cert: float, min_bin: int = 50) -> DriftProbe:
    """Bin (state, V) pairs by state and V-decile and test the drift bound."""
    states_list, v_list, v_next_list, time_list = [], [], [], []
    horizon = 0
    for tl in logs:
        v = tl.trace_p
        horizon = max(horizon, v.size)
        last = v.size if tl.error_step is None else tl.error_step
        # need Z(k) = (V_k, previous state); first step has no previous state
        for k in range(1, last - 1):
            states_list.append(tl.states[k - 1])
            v_list.append(v[k])
            v_next_list.append(v[k + 1])
            time_list.append(k)
    n_samples = len(v_list)
    if n_samples < 10_000:
        raise ValueError(f"drift probe needs >= 10000 samples, got {n_samples}")
    states = np.asarray(states_list)
    v = np.asarray(v_list)
    v_next = np.asarray(v_next_list)
    times = np.asarray(time_list)

    edges = np.unique(np.quantile(v, np.linspace(0.1, 0.9, 9)))
    bin_ids = np.digitize(v, edges)
    n_bins = edges.size + 1

    def beta_over(mask: np.ndarray) -> tuple[float, list[DriftBin]]:
        best = -np.inf
        bins = []
        for s in np.unique(states):
            for b in range(n_bins):
                sel = mask & (states == s) & (bin_ids == b)
                cnt = int(sel.sum())
                if cnt == 0:
                    continue
                conclusive = cnt >= min_bin
                mean_v = float(v[sel].mean())
                mean_vn = float(v_next[sel].mean())
                lo = float(edges[b - 1]) if b > 0 else float(v.min())
                hi = float(edges[b]) if b < edges.size else float(v.max())
                bins.append(
                    DriftBin(
                        state=int(s), v_lo=lo, v_hi=hi, count=cnt,
                        mean_v=mean_v, mean_v_next=mean_vn, conclusive=conclusive,
                    )
                )
                if conclusive:
                    best = max(best, mean_vn - rho_cert * mean_v)
        return best, bins

    all_mask = np.ones(n_samples, dtype=bool)
    beta_all, bins = beta_over(all_mask)
    half = horizon // 2
    beta_1, _ = beta_over(times < half)
    beta_2, _ = beta_over(times >= half)

    finite = np.isfinite(beta_all) and np.isfinite(beta_1) and np.isfinite(beta_2)
    if finite:
        b1 = max(beta_1, 0.0)
        b2 = max(beta_2, 0.0)
        floor = 1e-12 * max(1.0, float(np.max(np.abs(v))))
        if b1 <= floor and b2 <= floor:
            stable = True
        else:
            stable = max(b1, b2) < 2.0 * max(min(b1, b2), floor)
    else:
        stable = False
    return DriftProbe(
        rho=float(rho_cert),
        beta_hat=float(beta_all),
        beta_first_half=float(beta_1),
        beta_second_half=float(beta_2),
        bins=bins,
        passed=bool(finite and stable),
        n_samples=n_samples,
    )
