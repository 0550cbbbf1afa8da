"""Linear time-varying plant and sensor measurement model.

Time variation is expressed through finite periodic tables: the dynamics
matrix at step k is ``a_table[k % len(a_table)]`` and likewise for the
process- and measurement-noise covariances. Finite tables keep every
sequence bounded and make worst-case maxima computable over one period.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from netkf.errors import DimensionError, ModelError

_SYM_TOL = 1e-9


def _as_table(entries, name: str) -> np.ndarray:
    arr = np.asarray(entries, dtype=float)
    if arr.ndim != 3:
        raise DimensionError(f"{name} must be a list of matrices, got ndim={arr.ndim}")
    if arr.shape[0] == 0:
        raise DimensionError(f"{name} must contain at least one matrix")
    if not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} contains non-finite entries")
    return arr


def psd_factor(mat: np.ndarray, name: str = "matrix", tol: float = 1e-10) -> np.ndarray:
    """Rank-revealing factor L with L @ L.T == mat for symmetric PSD input.

    Accepts singular matrices (zero eigenvalues); raises ModelError when an
    eigenvalue is negative beyond the tolerance or the matrix is asymmetric.
    """
    scale = max(1.0, float(np.abs(mat).max())) if mat.size else 1.0
    if np.abs(mat - mat.T).max(initial=0.0) > _SYM_TOL * scale:
        raise ModelError(f"{name} is not symmetric")
    eigvals, eigvecs = np.linalg.eigh(0.5 * (mat + mat.T))
    if eigvals.min(initial=0.0) < -tol * scale:
        raise ModelError(f"{name} is not positive semidefinite (min eig {eigvals.min():.3e})")
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


@dataclass
class SensorSpec:
    """One sensor: a constant observation matrix and a periodic noise table.

    Measurement noise is Gaussian; quantization-style distortion is modeled
    by folding its variance into the (possibly time-varying) noise blocks.
    """

    c: np.ndarray
    r_table: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        if self.c.ndim != 2 or self.c.shape[0] < 1:
            raise DimensionError("sensor observation matrix must be 2-D with >= 1 row")
        if not np.all(np.isfinite(self.c)):
            raise DimensionError("sensor observation matrix has non-finite entries")
        self.r_table = _as_table(self.r_table, "sensor noise table")
        l = self.c.shape[0]
        if self.r_table.shape[1:] != (l, l):
            raise DimensionError(
                f"sensor noise blocks must be {l}x{l}, got {self.r_table.shape[1:]}"
            )

    @property
    def l(self) -> int:
        return self.c.shape[0]

    def r(self, k: int) -> np.ndarray:
        return self.r_table[k % self.r_table.shape[0]]


@dataclass
class PlantModel:
    """Plant dynamics, process noise, sensors, and the initial condition."""

    a_table: np.ndarray
    q_table: np.ndarray
    sensors: list[SensorSpec]
    x0: np.ndarray
    p0: np.ndarray

    def __post_init__(self):
        self.a_table = _as_table(self.a_table, "dynamics table")
        self.q_table = _as_table(self.q_table, "process noise table")
        n = self.a_table.shape[1]
        if self.a_table.shape[2] != n:
            raise DimensionError("dynamics matrices must be square")
        if self.q_table.shape[1:] != (n, n):
            raise DimensionError(
                f"process noise blocks must be {n}x{n}, got {self.q_table.shape[1:]}"
            )
        self.x0 = np.asarray(self.x0, dtype=float).reshape(-1)
        if self.x0.shape != (n,):
            raise DimensionError(f"x0 must have length {n}, got {self.x0.shape}")
        self.p0 = np.asarray(self.p0, dtype=float)
        if self.p0.shape != (n, n):
            raise DimensionError(f"p0 must be {n}x{n}, got {self.p0.shape}")
        if not self.sensors:
            raise DimensionError("plant needs at least one sensor")
        for m, s in enumerate(self.sensors, start=1):
            if s.c.shape[1] != n:
                raise DimensionError(
                    f"sensor {m} observation matrix has {s.c.shape[1]} columns, state dim is {n}"
                )
        self._factors = None

    @property
    def n(self) -> int:
        return self.a_table.shape[1]

    @property
    def n_sensors(self) -> int:
        return len(self.sensors)

    def a(self, k: int) -> np.ndarray:
        return self.a_table[k % self.a_table.shape[0]]

    def q(self, k: int) -> np.ndarray:
        return self.q_table[k % self.q_table.shape[0]]

    @property
    def total_rows(self) -> int:
        return sum(s.l for s in self.sensors)

    def noise_factors(self) -> "NoiseFactors":
        """Cholesky-style factors for sampling; built once, reused per trial."""
        if self._factors is None:
            violations = validate_model(self)
            if violations:
                raise ModelError("invalid plant model: " + "; ".join(violations))
            self._factors = NoiseFactors(
                p0=psd_factor(self.p0, "p0"),
                q=[psd_factor(qk, f"q_table[{i}]") for i, qk in enumerate(self.q_table)],
                r=[
                    [np.linalg.cholesky(rk) for rk in s.r_table]
                    for s in self.sensors
                ],
            )
        return self._factors


@dataclass
class NoiseFactors:
    p0: np.ndarray
    q: list[np.ndarray]
    r: list[list[np.ndarray]]


@dataclass
class Trajectory:
    """Realized states and per-sensor measurements over one horizon."""

    states: np.ndarray            # (horizon, n)
    measurements: list[np.ndarray]  # per sensor, (horizon, l_m)

    @property
    def horizon(self) -> int:
        return self.states.shape[0]


def validate_model(plant: PlantModel) -> list[str]:
    """Check the numeric invariants; returns human-readable violations.

    An empty list means the model is valid. Dimension consistency is already
    enforced at construction; this covers symmetry, positive semidefiniteness
    of the process noise and initial covariance, and positive definiteness of
    every measurement noise block.
    """
    violations: list[str] = []

    def check_psd(mat: np.ndarray, name: str):
        scale = max(1.0, float(np.abs(mat).max()))
        if np.abs(mat - mat.T).max(initial=0.0) > _SYM_TOL * scale:
            violations.append(f"{name} is not symmetric")
            return
        min_eig = float(np.linalg.eigvalsh(0.5 * (mat + mat.T)).min())
        if min_eig < -1e-10 * scale:
            violations.append(f"{name} is not PSD (min eigenvalue {min_eig:.3e})")

    for i, qk in enumerate(plant.q_table):
        check_psd(qk, f"q_table[{i}]")
    check_psd(plant.p0, "p0")
    for m, sensor in enumerate(plant.sensors, start=1):
        for i, rk in enumerate(sensor.r_table):
            scale = max(1.0, float(np.abs(rk).max()))
            if np.abs(rk - rk.T).max(initial=0.0) > _SYM_TOL * scale:
                violations.append(f"sensor {m} r_table[{i}] is not symmetric")
                continue
            min_eig = float(np.linalg.eigvalsh(0.5 * (rk + rk.T)).min())
            if min_eig <= 1e-14 * scale:
                violations.append(
                    f"sensor {m} r_table[{i}] is not positive definite "
                    f"(min eigenvalue {min_eig:.3e}); the innovation covariance "
                    "must stay invertible"
                )
    return violations


def simulate_plant(plant: PlantModel, horizon: int, rng: np.random.Generator) -> Trajectory:
    """Draw one state/measurement trajectory of the given length.

    The initial state is Gaussian around x0 with covariance p0; process and
    measurement noises are independent Gaussians from the periodic tables.
    Draw order is fixed (initial state, then per step: each sensor's noise in
    order, then the process noise), so a seeded generator reproduces the
    trajectory bit-for-bit.
    """
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    factors = plant.noise_factors()
    n = plant.n
    states = np.empty((horizon, n))
    measurements = [np.empty((horizon, s.l)) for s in plant.sensors]

    x = plant.x0 + factors.p0 @ rng.standard_normal(n)
    n_q = len(factors.q)
    for k in range(horizon):
        states[k] = x
        for m, sensor in enumerate(plant.sensors):
            r_fac = factors.r[m][k % sensor.r_table.shape[0]]
            measurements[m][k] = sensor.c @ x + r_fac @ rng.standard_normal(sensor.l)
        x = plant.a(k) @ x + factors.q[k % n_q] @ rng.standard_normal(n)
    return Trajectory(states=states, measurements=measurements)


def draw_process_noise(
    plant: PlantModel, k: int, rng: np.random.Generator, size: int
) -> np.ndarray:
    """Sample ``size`` process-noise vectors for step k (used by variance checks)."""
    factors = plant.noise_factors()
    fac = factors.q[k % len(factors.q)]
    return rng.standard_normal((size, plant.n)) @ fac.T
