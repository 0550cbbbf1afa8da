"""Shared model builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from netkf.network import (
    DirectSuccess,
    LinkModel,
    MarkovNetworkChain,
    PointMassGain,
    SemiMarkovNetworkChain,
    Topology,
)
from netkf.plant import PlantModel, SensorSpec

# Unstable 2-state plant with a single scalar sensor; two consecutive
# deliveries at any lag 1..6 restore observability.
A_EXPANSIVE = np.array([[1.25, 0.0], [1.0, 1.1]])
C_ROW = np.array([[1.0, 1.0]])


def expansive_plant(q_scale: float = 0.01, r_scale: float = 0.25) -> PlantModel:
    return PlantModel(
        a_table=A_EXPANSIVE[None],
        q_table=(q_scale * np.eye(2))[None],
        sensors=[SensorSpec(c=C_ROW.copy(), r_table=(r_scale * np.eye(1))[None])],
        x0=np.array([1.0, 0.0]),
        p0=np.eye(2),
    )


def full_rank_plant(q_scale: float = 0.01, r_scale: float = 0.04) -> PlantModel:
    """Same dynamics but a square invertible observation matrix."""
    return PlantModel(
        a_table=A_EXPANSIVE[None],
        q_table=(q_scale * np.eye(2))[None],
        sensors=[SensorSpec(c=np.eye(2), r_table=(r_scale * np.eye(2))[None])],
        x0=np.array([1.0, 0.0]),
        p0=np.eye(2),
    )


def direct_links(phi: np.ndarray) -> list[LinkModel]:
    """One link per column of phi; phi[j, m] is the success probability of
    link m+1 in state j."""
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    return [
        LinkModel(
            gains=tuple(PointMassGain(float(phi[j, m])) for j in range(phi.shape[0])),
            success=DirectSuccess(),
        )
        for m in range(phi.shape[1])
    ]


def single_edge_topology() -> Topology:
    return Topology(parents=(0,))


def two_state_chain(p11: float = 0.9, p22: float = 0.8) -> MarkovNetworkChain:
    return MarkovNetworkChain(
        transition=np.array([[p11, 1 - p11], [1 - p22, p22]]),
        initial=np.array([1.0, 0.0]),
    )


def degenerate_semi_chain(chain: MarkovNetworkChain) -> SemiMarkovNetworkChain:
    """Semi-Markov chain equivalent to the given Markov chain (unit holding)."""
    return SemiMarkovNetworkChain(
        embedded=chain.transition.copy(),
        holding=tuple(np.array([1.0]) for _ in range(chain.n_states)),
        initial=chain.initial.copy(),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20260811)
