"""Ready-made game configurations.

The default parameter set (stopping reward 20, stop cost -2, intrusion
loss -1 per step, discount 0.99, prevention probability 1/(2l), seven
stops) pairs with a synthetic alert-count model: Gaussian mixtures per
state, discretized onto the observation alphabet.  The mixtures are
stochastically ordered (intrusions shift the alert counts up), so the
stacked pmfs are totally positive of order 2, which the structural
results on threshold best responses assume.
"""

from __future__ import annotations

import numpy as np

from .game import GameConfig, ObservationModel, half_inverse_phi
from .obsmodel import Gmm1D, discretize


def synthetic_observation_model(n: int = 100) -> ObservationModel:
    """Alert-count model over {0..n-1} with well separated state mixtures."""
    if n >= 20:
        # The low-weight wide components keep both pmfs above the
        # discretization floor across the whole alphabet, which keeps
        # the stacked matrix exactly TP2 (no floored decreasing tail).
        scale = n / 100.0
        g0 = Gmm1D(
            weights=[0.63, 0.34, 0.03],
            means=[2.0 * scale, 12.0 * scale, 10.0 * scale],
            variances=[(3.0 * scale) ** 2, (6.0 * scale) ** 2, (25.0 * scale) ** 2],
        )
        g1 = Gmm1D(
            weights=[0.5, 0.3, 0.2],
            means=[30.0 * scale, 48.0 * scale, 70.0 * scale],
            variances=[(9.0 * scale) ** 2, (12.0 * scale) ** 2, (28.0 * scale) ** 2],
        )
    else:
        # Small alphabets: single components, equal-enough spreads keep
        # the likelihood ratio monotone across the truncated range.
        g0 = Gmm1D(weights=[1.0], means=[0.1 * n], variances=[(0.15 * n) ** 2])
        g1 = Gmm1D(weights=[1.0], means=[0.5 * n], variances=[(0.2 * n) ** 2])
    return ObservationModel(discretize(g0, n), discretize(g1, n))


def default_game_config(n: int = 100, seed: int = 0, horizon_cap: int = 1000) -> GameConfig:
    """The full-scale parameter set with seven defender stops."""
    return GameConfig(
        L=7,
        R_st=20.0,
        R_cost=-2.0,
        R_int=-1.0,
        gamma=0.99,
        phi=half_inverse_phi(7),
        obs=synthetic_observation_model(n),
        horizon_cap=horizon_cap,
        seed=seed,
    )


def desk_game_config(L: int = 3, n: int = 10, seed: int = 0, horizon_cap: int = 500) -> GameConfig:
    """A scaled-down instance for fast experiments and tests."""
    return GameConfig(
        L=L,
        R_st=20.0,
        R_cost=-2.0,
        R_int=-1.0,
        gamma=0.99,
        phi=half_inverse_phi(L),
        obs=synthetic_observation_model(n),
        horizon_cap=horizon_cap,
        seed=seed,
    )
