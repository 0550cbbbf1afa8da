"""Dense matrix utilities: spectral norm, numerical rank, state-transition
products, and stacked observability matrices.

All rank and norm computations go through SVD (or the symmetric
eigendecomposition it is equivalent to) so results are deterministic across
platforms; pivoted-QR rank is deliberately not used.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from netkf.errors import DimensionError

if TYPE_CHECKING:  # pragma: no cover
    from netkf.plant import PlantModel


@dataclass(frozen=True)
class RankTolerance:
    """Relative singular-value threshold used to decide numerical rank.

    A singular value counts toward the rank when it exceeds
    ``relative_threshold * s_max * max(rows, cols)``.
    """

    relative_threshold: float = 1e-10

    def __post_init__(self):
        if not 0.0 < self.relative_threshold < 1.0:
            raise ValueError(
                f"relative_threshold must lie in (0, 1), got {self.relative_threshold}"
            )


DEFAULT_RANK_TOLERANCE = RankTolerance(1e-10)


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Coerce to a finite 2-D float array, raising DimensionError otherwise."""
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise DimensionError(f"{name} contains non-finite entries")
    return arr


def spectral_norm(m) -> float:
    """Largest singular value of ``m``.

    Raises DimensionError for empty matrices.
    """
    arr = as_matrix(m)
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise DimensionError(f"spectral_norm of empty matrix {arr.shape}")
    return float(np.linalg.svd(arr, compute_uv=False)[0])


def numerical_rank(m, tol: RankTolerance | float = DEFAULT_RANK_TOLERANCE) -> int:
    """Number of singular values above the relative threshold.

    Total on finite matrices: the zero matrix (and any empty matrix) has
    rank 0.
    """
    arr = as_matrix(m)
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        return 0
    rel = tol.relative_threshold if isinstance(tol, RankTolerance) else float(tol)
    if not 0.0 < rel < 1.0:
        raise ValueError(f"rank tolerance must lie in (0, 1), got {rel}")
    svals = np.linalg.svd(arr, compute_uv=False)
    cutoff = rel * svals[0] * max(arr.shape)
    return int(np.count_nonzero(svals > cutoff))


def transition_matrix(plant: "PlantModel", ell: int, k: int) -> np.ndarray:
    """Product of plant matrices propagating the state from step k to step ell.

    Returns the identity when ``ell == k``. The product is accumulated
    right-to-left (earliest factor innermost) so repeated calls compose
    consistently.
    """
    if ell < k:
        raise DimensionError(f"transition_matrix needs ell >= k, got ell={ell}, k={k}")
    if k < 0:
        raise DimensionError(f"transition_matrix needs k >= 0, got k={k}")
    phi = np.eye(plant.n)
    for t in range(k, ell):
        phi = plant.a(t) @ phi
    return phi


def observability_matrix(
    plant: "PlantModel",
    c_rows: Sequence[np.ndarray],
    k: int,
    t: int,
) -> np.ndarray:
    """Vertical stack of ``c_rows[i] @ transition_matrix(plant, k+i, k)``.

    ``c_rows`` holds the realized observation matrices at steps k..k+t; each
    must have ``plant.n`` columns (zero-row blocks are allowed and drop out
    of the stack's rank).
    """
    if t < 0:
        raise DimensionError(f"order t must be >= 0, got {t}")
    if len(c_rows) != t + 1:
        raise DimensionError(f"expected {t + 1} observation blocks, got {len(c_rows)}")
    n = plant.n
    blocks = []
    phi = np.eye(n)
    for i, c in enumerate(c_rows):
        c = as_matrix(c, name=f"c_rows[{i}]")
        if c.shape[1] != n:
            raise DimensionError(
                f"c_rows[{i}] has {c.shape[1]} columns, plant state dimension is {n}"
            )
        if i > 0:
            phi = plant.a(k + i - 1) @ phi
        if c.shape[0]:
            blocks.append(c @ phi)
    if not blocks:
        return np.zeros((0, n))
    return np.vstack(blocks)
