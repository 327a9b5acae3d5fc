"""Threshold fictitious self-play.

Each iteration both players learn a best response to the opponent's
current average strategy by running stochastic gradient ascent on their
simulated objective, with gradients estimated by simultaneous
perturbation: one Rademacher direction, two objective evaluations at
symmetric perturbations, one estimate for every coordinate.  The
learned threshold vectors accumulate in per-player buffers whose
uniform mixtures are the average strategies; the loop stops when the
dynamic-programming exploitability of the average pair falls below a
threshold.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, IO

import numpy as np

from .evaluator import BeliefGrid, exploitability_report
from .game import GameConfig, simulate_batch
from .strategies import (
    ATTACKER,
    DEFAULT_P1_FLOOR,
    DEFAULT_Q_FLOOR,
    DEFENDER,
    MixedStrategy,
    ThresholdDefenderPolicy,
    ThresholdAttackerPolicy,
    ThresholdStrategy,
    random_threshold_strategy,
)


@dataclass
class SpsaConfig:
    """Gain schedule and batch sizes for the best-response learner.

    Step sizes follow a_n = a / (n + A)^eps and perturbation widths
    c_n = c / n^lam, with the exponent roles as configured (the defaults
    put 0.101 on the step sizes and 0.602 on the perturbations).
    """

    a: float = 1.0
    c: float = 10.0
    eps: float = 0.101
    lam: float = 0.602
    A: float = 100.0
    N: int = 50
    episodes_per_eval: int = 100
    #: Start each best-response run from the player's previously learned
    #: vector instead of a fresh uniform {-1,+1} draw.  The steep gates
    #: make the objective nearly flat far from the thresholds, so fresh
    #: draws rarely re-cross the flat region within N steps; warm starts
    #: let that progress accumulate across fictitious-play iterations.
    warm_start_theta: bool = False
    #: Episode truncation for training simulations only (None = the game
    #: config's horizon cap).  Evaluation and exploitability always use
    #: the full cap.
    horizon: int | None = None

    def __post_init__(self):
        if min(self.a, self.c, self.eps, self.lam) <= 0 or self.A < 0:
            raise ValueError("gain coefficients must be positive (A may be zero)")
        if self.N < 1 or self.episodes_per_eval < 1:
            raise ValueError("N and episodes_per_eval must be >= 1")

    def step_size(self, n: int) -> float:
        return self.a / (n + self.A) ** self.eps

    def perturbation(self, n: int) -> float:
        return self.c / n ** self.lam


@dataclass
class EvalConfig:
    """Per-iteration evaluation settings for the fictitious-play loop."""

    grid_K: int = 100
    vi_tol: float = 1e-5
    vi_max_sweeps: int = 20_000
    episodes: int = 200
    p1_floor: float = DEFAULT_P1_FLOOR
    q_floor: float = DEFAULT_Q_FLOOR
    warm_start: bool = True


@dataclass
class IterationStats:
    iteration: int
    exploitability: float
    j1_vs_br_attacker: float
    j1_defender_mix: float
    mean_T: float
    mean_intrusion_len: float


@dataclass
class TfpState:
    """Buffers, learning curves and the current exploitability estimate."""

    defender_buffer: MixedStrategy
    attacker_buffer: MixedStrategy
    iterations: int
    history: list[IterationStats]
    exploitability_now: float
    initial_exploitability: float
    converged: bool

    def write_history_csv(self, f: IO[str]) -> None:
        w = csv.writer(f)
        w.writerow(
            ["iter", "exploitability", "J1_vs_br_attacker", "J1_defender_mix",
             "mean_T", "mean_intrusion_len"]
        )
        for h in self.history:
            w.writerow(
                [h.iteration, repr(h.exploitability), repr(h.j1_vs_br_attacker),
                 repr(h.j1_defender_mix), repr(h.mean_T), repr(h.mean_intrusion_len)]
            )


def spsa_gradient(
    evaluate: Callable[[np.ndarray, np.random.Generator], float],
    theta: np.ndarray,
    c_n: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """One simultaneous-perturbation gradient estimate.

    Draws a Rademacher direction, evaluates the objective at the two
    symmetric perturbations and divides the difference by twice the
    per-coordinate displacement.  Both evaluations receive generators
    seeded identically, so stochastic objectives see common random
    numbers; the estimate stays unbiased for the smoothed objective and
    its variance drops.
    """
    if c_n <= 0:
        raise ValueError("c_n must be positive")
    theta = np.asarray(theta, dtype=float)
    delta = rng.integers(0, 2, size=theta.size) * 2.0 - 1.0
    eval_seed = int(rng.integers(0, 2**63 - 1))
    r_high = float(evaluate(theta + c_n * delta, np.random.default_rng(eval_seed)))
    r_low = float(evaluate(theta - c_n * delta, np.random.default_rng(eval_seed)))
    return (r_high - r_low) / (2.0 * c_n * delta)


def _objective(player: str, opponent, cfg: GameConfig, spsa: SpsaConfig,
               p1_floor: float, q_floor: float,
               public_defender=None, filter_attacker=None):
    """Simulated objective J_i(theta) against a fixed opponent strategy.

    The opponent is held fixed as a behavioral strategy: when the
    defender deviates, the attacker opponent keeps gating on the public
    defender (``public_defender``); when the attacker deviates, the
    belief filter keeps modeling the public attacker
    (``filter_attacker``).  Left unset, both default to the acting
    policies.
    """

    def evaluate(theta: np.ndarray, rng: np.random.Generator) -> float:
        if player == DEFENDER:
            cand = ThresholdStrategy(DEFENDER, theta)
            pi1 = ThresholdDefenderPolicy(cand, p1_floor)
            pi2 = opponent if _is_policy(opponent) else ThresholdAttackerPolicy(opponent, p1_floor, q_floor)
            ref = None
            if public_defender is not None:
                ref = public_defender if _is_policy(public_defender) else ThresholdDefenderPolicy(public_defender, p1_floor)
            stats = simulate_batch(pi1, pi2, cfg, spsa.episodes_per_eval, rng,
                                   attacker_p1_ref=ref, horizon_cap=spsa.horizon)
            return stats.mean_return
        cand = ThresholdStrategy(ATTACKER, theta)
        pi1 = opponent if _is_policy(opponent) else ThresholdDefenderPolicy(opponent, p1_floor)
        pi2 = ThresholdAttackerPolicy(cand, p1_floor, q_floor)
        filt = None
        if filter_attacker is not None:
            filt = filter_attacker if _is_policy(filter_attacker) else ThresholdAttackerPolicy(filter_attacker, p1_floor, q_floor)
        stats = simulate_batch(pi1, pi2, cfg, spsa.episodes_per_eval, rng,
                               filter_pi2=filt, horizon_cap=spsa.horizon)
        return -stats.mean_return

    return evaluate


def _is_policy(obj) -> bool:
    return hasattr(obj, "stop_prob_batch")


def learn_best_response(
    player: str,
    opponent,
    cfg: GameConfig,
    spsa: SpsaConfig,
    rng: np.random.Generator,
    *,
    p1_floor: float = DEFAULT_P1_FLOOR,
    q_floor: float = DEFAULT_Q_FLOOR,
    public_defender=None,
    filter_attacker=None,
    theta0: np.ndarray | None = None,
) -> ThresholdStrategy:
    """SPSA ascent on the player's simulated objective.

    The threshold vector starts uniform on {-1, +1}^dim (dim = L for the
    defender, 2L for the attacker) and takes N gradient steps; every
    objective sample averages ``episodes_per_eval`` simulated episodes
    against the fixed opponent.  ``public_defender`` and
    ``filter_attacker`` pin the opponent's behavioral law to the public
    average strategies (see :func:`_objective`).  The returned strategy
    is the final iterate.
    """
    if player not in (DEFENDER, ATTACKER):
        raise ValueError(f"unknown player {player!r}")
    evaluate = _objective(player, opponent, cfg, spsa, p1_floor, q_floor,
                          public_defender=public_defender, filter_attacker=filter_attacker)
    theta = random_threshold_strategy(player, cfg.L, rng).theta
    if theta0 is not None:
        theta = np.asarray(theta0, dtype=float).copy()
    for n in range(1, spsa.N + 1):
        grad = spsa_gradient(evaluate, theta, spsa.perturbation(n), rng)
        theta = theta + spsa.step_size(n) * grad
    return ThresholdStrategy(player, theta)


def run_tfp(
    cfg: GameConfig,
    spsa: SpsaConfig,
    delta: float,
    max_iters: int,
    eval_cfg: EvalConfig | None = None,
    seed: int | None = None,
) -> TfpState:
    """The fictitious self-play loop.

    Both players best-respond to the opponent averages from the previous
    iteration; the new vectors join the buffers and the refreshed
    averages are scored: exploitability by dynamic programming, pair
    value and episode statistics by a Monte Carlo batch.  Stops when
    exploitability falls below ``delta`` or after ``max_iters``
    iterations (reported, not raised).  Fully deterministic for a fixed
    seed.
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    eval_cfg = eval_cfg or EvalConfig()
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    grid = BeliefGrid(eval_cfg.grid_K)

    defender_buffer = MixedStrategy([random_threshold_strategy(DEFENDER, cfg.L, rng)])
    attacker_buffer = MixedStrategy([random_threshold_strategy(ATTACKER, cfg.L, rng)])

    report = exploitability_report(
        defender_buffer, attacker_buffer, cfg, grid,
        tol=eval_cfg.vi_tol, max_sweeps=eval_cfg.vi_max_sweeps,
        p1_floor=eval_cfg.p1_floor, q_floor=eval_cfg.q_floor,
    )
    delta_hat = report.value
    initial = delta_hat
    history: list[IterationStats] = []
    iteration = 0
    while iteration < max_iters and delta_hat >= delta:
        iteration += 1
        pi1_avg = defender_buffer.snapshot()
        pi2_avg = attacker_buffer.snapshot()
        warm_d_theta = defender_buffer.strategies[-1].theta if spsa.warm_start_theta else None
        warm_a_theta = attacker_buffer.strategies[-1].theta if spsa.warm_start_theta else None
        defender_buffer.add(
            learn_best_response(DEFENDER, pi2_avg, cfg, spsa, rng,
                                p1_floor=eval_cfg.p1_floor, q_floor=eval_cfg.q_floor,
                                public_defender=pi1_avg, theta0=warm_d_theta)
        )
        attacker_buffer.add(
            learn_best_response(ATTACKER, pi1_avg, cfg, spsa, rng,
                                p1_floor=eval_cfg.p1_floor, q_floor=eval_cfg.q_floor,
                                filter_attacker=pi2_avg, theta0=warm_a_theta)
        )
        warm_d = report.defender_br.values if eval_cfg.warm_start else None
        warm_a = report.attacker_br.values if eval_cfg.warm_start else None
        report = exploitability_report(
            defender_buffer, attacker_buffer, cfg, grid,
            tol=eval_cfg.vi_tol, max_sweeps=eval_cfg.vi_max_sweeps,
            p1_floor=eval_cfg.p1_floor, q_floor=eval_cfg.q_floor,
            warm_defender=warm_d, warm_attacker=warm_a,
        )
        delta_hat = report.value
        stats = simulate_batch(
            ThresholdDefenderPolicy(defender_buffer, eval_cfg.p1_floor),
            ThresholdAttackerPolicy(attacker_buffer, eval_cfg.p1_floor, eval_cfg.q_floor),
            cfg,
            eval_cfg.episodes,
            rng,
        )
        history.append(
            IterationStats(
                iteration=iteration,
                exploitability=delta_hat,
                j1_vs_br_attacker=-report.attacker_br_value,
                j1_defender_mix=stats.mean_return,
                mean_T=float(stats.lengths.mean()),
                mean_intrusion_len=float(stats.intrusion_lengths.mean()),
            )
        )
    return TfpState(
        defender_buffer=defender_buffer,
        attacker_buffer=attacker_buffer,
        iterations=iteration,
        history=history,
        exploitability_now=delta_hat,
        initial_exploitability=initial,
        converged=delta_hat < delta,
    )
