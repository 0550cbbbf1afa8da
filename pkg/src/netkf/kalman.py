"""Time-varying Kalman filter driven by the realized observation matrix.

The one-step prediction covariance is propagated in Joseph-stabilized form
and symmetrized every step; slots where nothing was delivered skip the
update branch entirely and reduce to pure prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from netkf.errors import DimensionError, NumericalError
from netkf.network import DropoutRealization, assemble_observation
from netkf.plant import PlantModel, Trajectory


@dataclass(frozen=True)
class FilterState:
    """One-step-ahead estimate and its covariance at time index k."""

    xhat: np.ndarray
    p: np.ndarray
    k: int = 0


@dataclass(frozen=True)
class StepRecord:
    """Per-step log: covariance trace, delivery bits, and chain states."""

    trace_p: float
    theta: np.ndarray
    state_prev: int | None
    state: int


def kf_step(
    fs: FilterState,
    a: np.ndarray,
    q: np.ndarray,
    c: np.ndarray | None = None,
    r: np.ndarray | None = None,
    y: np.ndarray | None = None,
) -> FilterState:
    """Advance the one-step predictor by a single time step.

    With no delivered rows (``c`` is None or empty) the step is pure
    prediction. Otherwise the innovation covariance is factorized by
    Cholesky; a failure there is a numerical error (measurement noise is
    positive definite by model invariant, so this signals conditioning).
    """
    a = np.asarray(a, dtype=float)
    q = np.asarray(q, dtype=float)
    if c is None or c.shape[0] == 0:
        p_next = a @ fs.p @ a.T + q
        x_next = a @ fs.xhat
    else:
        c = np.asarray(c, dtype=float)
        r = np.asarray(r, dtype=float)
        y = np.asarray(y, dtype=float).reshape(-1)
        if c.shape[1] != fs.p.shape[0]:
            raise DimensionError(
                f"observation matrix has {c.shape[1]} columns, state dim {fs.p.shape[0]}"
            )
        if y.shape[0] != c.shape[0]:
            raise DimensionError(f"measurement length {y.shape[0]} != rows {c.shape[0]}")
        pct = fs.p @ c.T
        s = c @ pct + r
        s = 0.5 * (s + s.T)
        try:
            cho = sla.cho_factor(s, lower=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                "innovation covariance is not positive definite",
                cond=float(np.linalg.cond(s)),
            ) from exc
        # K = A P C^T S^{-1}
        gain = a @ sla.cho_solve(cho, pct.T, check_finite=False).T
        x_next = a @ fs.xhat + gain @ (y - c @ fs.xhat)
        a_kc = a - gain @ c
        p_next = a_kc @ fs.p @ a_kc.T + gain @ r @ gain.T + q
    p_next = 0.5 * (p_next + p_next.T)
    return FilterState(xhat=x_next, p=p_next, k=fs.k + 1)


def run_filter(
    plant: PlantModel,
    traj: Trajectory,
    dropouts: list[DropoutRealization],
) -> list[StepRecord]:
    """Run the filter over a realized trajectory and dropout sequence.

    At each step only delivered sensors' measurement rows are fed to the
    update; the returned records carry the pre-update covariance trace.
    """
    horizon = traj.horizon
    if len(dropouts) != horizon:
        raise DimensionError(
            f"dropout sequence length {len(dropouts)} != trajectory horizon {horizon}"
        )
    fs = FilterState(xhat=plant.x0.copy(), p=plant.p0.copy(), k=0)
    records: list[StepRecord] = []
    for k in range(horizon):
        drop = dropouts[k]
        records.append(
            StepRecord(
                trace_p=float(np.trace(fs.p)),
                theta=np.asarray(drop.theta, dtype=np.uint8).copy(),
                state_prev=dropouts[k - 1].state if k > 0 else None,
                state=drop.state,
            )
        )
        obs = assemble_observation(plant, drop.theta, k)
        if obs.received:
            y = np.concatenate(
                [traj.measurements[m - 1][k] for m in obs.received]
            )
            fs = kf_step(fs, plant.a(k), plant.q(k), obs.compact_c, obs.compact_r, y)
        else:
            fs = kf_step(fs, plant.a(k), plant.q(k))
    return records
