"""Threshold stopping strategies, fictitious-play mixtures, and baselines.

A threshold strategy is parameterized by a real vector ``theta``: the
defender has one entry per stops-remaining level ``l`` and stops with
probability ``smooth_gate(theta[l], b)``, a steep sigmoid gate in the
belief that crosses 1/2 exactly at the threshold ``sigmoid(theta[l])``.
The attacker has ``2L`` entries indexed by (state, l) and gates on the
defender's stop probability rather than on the belief directly: in
state 1 it stops once the defender is likely to stop, and in state 0 it
stops (starts the intrusion) while the defender is unlikely to stop, so
the stop probability is the gate's complement there.

Mixtures hold a buffer of threshold vectors and average behaviorally
(per-context mean of the members' stop probabilities).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .game import INTRUSION, NO_INTRUSION, STOP, CONTINUE

DEFENDER = "defender"
ATTACKER = "attacker"

#: Exponent magnitude of the smooth threshold gate.
DEFAULT_STEEPNESS = 20.0

#: Gate inputs (the belief for the defender, the defender's stop
#: probability for the attacker) are clamped to [floor, 1 - floor] when
#: a threshold strategy is played or modeled.  Without the input clamp
#: the gate is pinned to an exact 0 or 1 at the endpoint beliefs in
#: which every episode starts, independently of the parameters, which
#: freezes both learning and the belief filter.
DEFAULT_P1_FLOOR = 0.05

#: Attacker behavioral probabilities are kept this far away from 0 and
#: 1.  A tiny floor suffices: it keeps the filter's opponent model full
#: support (beliefs can never collapse irreversibly) while leaving the
#: family able to express never-attack and always-attack play.
DEFAULT_Q_FLOOR = 1e-3


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    if out.ndim == 0:
        return float(out)
    return out


def logit(p):
    p = np.asarray(p, dtype=float)
    with np.errstate(divide="ignore"):
        out = np.log(p) - np.log1p(-p)
    if out.ndim == 0:
        return float(out)
    return out


def smooth_gate(a, b, steepness: float = DEFAULT_STEEPNESS):
    """Smooth threshold gate phi(a, b) in [0, 1].

    Equals ``(1 + (b (1 - s(a)) / (s(a) (1 - b)))^(-steepness))^(-1)``
    with ``s`` the sigmoid, computed in log-odds space as
    ``sigmoid(steepness * (logit(b) - a))``, which is the same function
    without overflow.  Limit conventions: gate(a, 0) = 0, gate(a, 1) = 1.
    Nondecreasing in both arguments; crosses 1/2 at b = sigmoid(a).
    """
    if steepness <= 0:
        raise ValueError("steepness must be > 0")
    return sigmoid(steepness * (logit(b) - np.asarray(a, dtype=float)))


@dataclass
class ThresholdStrategy:
    """A pure threshold strategy for one player.

    theta has length L for the defender and 2L for the attacker, with
    attacker entry ``s * L + (l - 1)`` controlling state ``s`` at
    stops-remaining ``l`` (1-indexed l, matching the game).
    """

    player: str
    theta: np.ndarray
    steepness: float = DEFAULT_STEEPNESS

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.player not in (DEFENDER, ATTACKER):
            raise ValueError(f"unknown player {self.player!r}")
        if self.theta.ndim != 1 or self.theta.size < 1:
            raise ValueError("theta must be a nonempty vector")
        if self.player == ATTACKER and self.theta.size % 2 != 0:
            raise ValueError("attacker theta must have even length 2L")
        if self.steepness <= 0:
            raise ValueError("steepness must be > 0")

    @property
    def L(self) -> int:
        return self.theta.size if self.player == DEFENDER else self.theta.size // 2

    def thresholds(self) -> np.ndarray:
        """Gate midpoints sigmoid(theta) in (0, 1)."""
        return sigmoid(self.theta)

    def defender_stop_prob(self, l, b1):
        """Stop probability at belief b1 with l stops remaining."""
        if self.player != DEFENDER:
            raise ValueError("not a defender strategy")
        th = self.theta[_l_index(l, self.L)]
        return smooth_gate(th, b1, self.steepness)

    def attacker_stop_prob(self, l, s, pi1_prob):
        """Stop probability given the defender's stop probability.

        In state 1 the gate opens as pi1_prob grows; in state 0 the
        stop region is the complementary lower interval, so the
        probability is one minus the gate.
        """
        if self.player != ATTACKER:
            raise ValueError("not an attacker strategy")
        idx = np.asarray(s) * self.L + _l_index(l, self.L)
        g = smooth_gate(self.theta[idx], pi1_prob, self.steepness)
        return np.where(np.asarray(s) == INTRUSION, g, 1.0 - g) if np.ndim(g) else (
            g if s == INTRUSION else 1.0 - g
        )

    def to_dict(self) -> dict:
        return {
            "player": self.player,
            "steepness": self.steepness,
            "theta": self.theta.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "ThresholdStrategy":
        return ThresholdStrategy(d["player"], np.asarray(d["theta"]), float(d["steepness"]))


def _l_index(l, L: int):
    l = np.asarray(l)
    if np.any(l < 1) or np.any(l > L):
        raise ValueError(f"l must lie in 1..{L}")
    idx = l - 1
    return idx if idx.ndim else int(idx)


def random_threshold_strategy(player: str, L: int, rng, steepness: float = DEFAULT_STEEPNESS):
    """Uniform draw over {-1, +1}^dim, dim = L (defender) or 2L (attacker)."""
    dim = L if player == DEFENDER else 2 * L
    theta = rng.integers(0, 2, size=dim) * 2.0 - 1.0
    return ThresholdStrategy(player, theta, steepness)


@dataclass
class MixedStrategy:
    """Uniform mixture over a buffer of threshold strategies.

    The buffer is append-only; action probabilities are behavioral
    averages (arithmetic mean of member stop probabilities at the given
    context), which yields a stationary behavioral strategy usable both
    for acting and inside the belief filter.
    """

    strategies: list[ThresholdStrategy] = field(default_factory=list)

    def __post_init__(self):
        if not self.strategies:
            raise ValueError("mixture buffer must be nonempty")
        p0 = self.strategies[0]
        for st in self.strategies[1:]:
            if st.player != p0.player or st.theta.size != p0.theta.size:
                raise ValueError("mixture members must share player role and dimension")

    @property
    def player(self) -> str:
        return self.strategies[0].player

    @property
    def L(self) -> int:
        return self.strategies[0].L

    @property
    def steepness(self) -> float:
        return self.strategies[0].steepness

    def __len__(self) -> int:
        return len(self.strategies)

    def add(self, strategy: ThresholdStrategy) -> None:
        if strategy.player != self.player or strategy.theta.size != self.strategies[0].theta.size:
            raise ValueError("mixture members must share player role and dimension")
        self.strategies.append(strategy)

    def snapshot(self) -> "MixedStrategy":
        """A fixed-contents view of the current buffer."""
        return MixedStrategy(list(self.strategies))

    def _theta_stack(self) -> np.ndarray:
        # Rebuilt only when the buffer has grown; hot path for batch play.
        cache = getattr(self, "_stack_cache", None)
        if cache is None or cache.shape[0] != len(self.strategies):
            cache = np.stack([st.theta for st in self.strategies])
            self._stack_cache = cache
        return cache

    def defender_stop_prob(self, l, b1):
        if self.player != DEFENDER:
            raise ValueError("not a defender mixture")
        l_b, b_b = np.broadcast_arrays(np.asarray(l), np.asarray(b1, dtype=float))
        idx = np.asarray(_l_index(l_b, self.L))
        thetas = self._theta_stack()[:, idx]
        k = self.steepness
        out = np.mean(sigmoid(k * (logit(b_b)[None, ...] - thetas)), axis=0)
        return float(out) if np.ndim(out) == 0 else out

    def attacker_stop_prob(self, l, s, pi1_prob):
        if self.player != ATTACKER:
            raise ValueError("not an attacker mixture")
        l_b, s_b, p_b = np.broadcast_arrays(
            np.asarray(l), np.asarray(s), np.asarray(pi1_prob, dtype=float)
        )
        idx = s_b * self.L + np.asarray(_l_index(l_b, self.L))
        thetas = self._theta_stack()[:, idx]
        k = self.steepness
        gates = np.mean(sigmoid(k * (logit(p_b)[None, ...] - thetas)), axis=0)
        out = np.where(s_b == INTRUSION, gates, 1.0 - gates)
        return float(out) if np.ndim(out) == 0 else out

    def to_dict(self) -> dict:
        return {
            "player": self.player,
            "steepness": self.steepness,
            "buffer": [st.theta.tolist() for st in self.strategies],
        }

    @staticmethod
    def from_dict(d: dict) -> "MixedStrategy":
        k = float(d.get("steepness", DEFAULT_STEEPNESS))
        return MixedStrategy(
            [ThresholdStrategy(d["player"], np.asarray(t), k) for t in d["buffer"]]
        )

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, sort_keys=True)
            f.write("\n")

    @staticmethod
    def from_json(path) -> "MixedStrategy":
        with open(path) as f:
            return MixedStrategy.from_dict(json.load(f))


def defender_stop_prob(strategy, l: int, b):
    """Module-level convenience mirroring the strategy method."""
    return strategy.defender_stop_prob(l, b)


def attacker_stop_prob(strategy, l: int, s: int, b, pi1_prob):
    """Attacker stop probability; gates on pi1_prob, not on b."""
    del b  # the threshold family reacts to the defender, not the belief
    return strategy.attacker_stop_prob(l, s, pi1_prob)


def mixed_action_prob(mix: MixedStrategy, *context):
    """Behavioral-average stop probability at a context.

    Defender context: (l, b1).  Attacker context: (l, s, b1, pi1_prob).
    """
    if mix.player == DEFENDER:
        l, b1 = context
        return mix.defender_stop_prob(l, b1)
    l, s, b1, pi1_prob = context
    del b1
    return mix.attacker_stop_prob(l, s, pi1_prob)


# Baseline defenders ---------------------------------------------------------

ALERT_ON_ANY = "alert-any"
ORACLE_INTRUSION_TIME = "oracle"


def baseline_defender_action(kind: str, o: int, intrusion_started: bool) -> int:
    """Action of a baseline defender.

    ``alert-any`` stops whenever an alert occurred (o >= 1); ``oracle``
    stops at every step once the intrusion has started, a privilege
    available only in evaluation where the simulator exposes the state.
    """
    if kind == ALERT_ON_ANY:
        return STOP if o >= 1 else CONTINUE
    if kind == ORACLE_INTRUSION_TIME:
        return STOP if intrusion_started else CONTINUE
    raise ValueError(f"unknown baseline kind {kind!r}")


# Policy adapters for the simulator -----------------------------------------
#
# The simulator consumes duck-typed policy objects.  Defender policies
# expose stop_prob(t, b1, l, o, s) plus a vectorized batch variant;
# attacker policies expose stop_prob(s, b1, l, p1, o).  Threshold
# adapters apply the behavioral clamp to the defender-probability input
# of attacker gates; the defender's own action probability is the raw
# gate of the belief.


class DefenderPolicy:
    def stop_prob(self, t: int, b1: float, l: int, o: int, s: int) -> float:
        raise NotImplementedError

    def stop_prob_batch(self, t, b1, l, o, s):
        b1, l, o, s = np.broadcast_arrays(b1, l, o, s)
        return np.array(
            [self.stop_prob(t, float(bb), int(ll), int(oo), int(ss))
             for bb, ll, oo, ss in zip(b1, l, o, s)]
        )


class AttackerPolicy:
    def stop_prob(self, s: int, b1: float, l: int, p1: float, o: int) -> float:
        raise NotImplementedError

    def stop_prob_batch(self, s, b1, l, p1, o):
        s, b1, l, p1, o = np.broadcast_arrays(s, b1, l, p1, o)
        return np.array(
            [self.stop_prob(int(ss), float(bb), int(ll), float(pp), int(oo))
             for ss, bb, ll, pp, oo in zip(s, b1, l, p1, o)]
        )


_TABLE_SIZE = 4097


def _interp_uniform(tables: np.ndarray, rows, x) -> np.ndarray:
    """Linear interpolation of per-row tables over a uniform [0, 1] grid."""
    n = tables.shape[-1]
    pos = np.clip(np.asarray(x, dtype=float), 0.0, 1.0) * (n - 1)
    i0 = np.minimum(pos.astype(np.int64), n - 2)
    w = pos - i0
    lo = tables[rows, i0]
    hi = tables[rows, i0 + 1]
    return lo * (1.0 - w) + hi * w


class ThresholdDefenderPolicy(DefenderPolicy):
    """Plays a threshold strategy or mixture on the filtered belief.

    The gate input is clamped to [floor, 1 - floor]; expressible
    thresholds therefore live in that interval, and the gate stays
    responsive to the parameters at beliefs pinned to 0 or 1.
    """

    def __init__(self, strategy, p1_floor: float = DEFAULT_P1_FLOOR):
        if strategy.player != DEFENDER:
            raise ValueError("defender strategy required")
        self.strategy = strategy
        self.p1_floor = p1_floor

    def _clamp(self, b1):
        return np.clip(b1, self.p1_floor, 1.0 - self.p1_floor)

    def stop_prob(self, t, b1, l, o, s):
        return float(self.strategy.defender_stop_prob(l, self._clamp(b1)))

    def stop_prob_batch(self, t, b1, l, o, s):
        return self.strategy.defender_stop_prob(
            np.asarray(l), self._clamp(np.asarray(b1, dtype=float))
        )

    def tabulated(self, L: int) -> "_TabulatedDefender":
        return _TabulatedDefender(self, L)


class _TabulatedDefender(DefenderPolicy):
    """Interpolation-table rendering of a belief-indexed defender policy.

    Built once per simulation batch; the per-step lookup replaces the
    member-stack gate evaluation, which dominates long batches.
    """

    def __init__(self, policy: ThresholdDefenderPolicy, L: int):
        x = np.linspace(0.0, 1.0, _TABLE_SIZE)
        ones = np.ones(_TABLE_SIZE, dtype=np.int64)
        self.tables = np.stack(
            [np.asarray(policy.stop_prob_batch(1, x, l * ones, 0 * ones, 0 * ones), dtype=float)
             for l in range(1, L + 1)]
        )

    def stop_prob(self, t, b1, l, o, s):
        return float(_interp_uniform(self.tables, l - 1, b1))

    def stop_prob_batch(self, t, b1, l, o, s):
        return _interp_uniform(self.tables, np.asarray(l) - 1, b1)


class ThresholdAttackerPolicy(AttackerPolicy):
    """Behavioral realization of a threshold attacker.

    The gate input (the defender's stop probability) is clamped to
    [p1_floor, 1 - p1_floor], which keeps the gate responsive to the
    parameters when the input is pinned at an exact endpoint.  The
    output probability is clamped into [q_floor, 1 - q_floor]; the tiny
    floor keeps the filter's opponent model full support so the belief
    can never collapse irreversibly onto 0 or 1.
    """

    def __init__(
        self,
        strategy,
        p1_floor: float = DEFAULT_P1_FLOOR,
        q_floor: float = DEFAULT_Q_FLOOR,
    ):
        if strategy.player != ATTACKER:
            raise ValueError("attacker strategy required")
        if not 0 <= p1_floor < 0.5 or not 0 <= q_floor < 0.5:
            raise ValueError("floors must lie in [0, 0.5)")
        self.strategy = strategy
        self.p1_floor = p1_floor
        self.q_floor = q_floor

    def stop_prob(self, s, b1, l, p1, o):
        p = np.clip(p1, self.p1_floor, 1.0 - self.p1_floor)
        q = self.strategy.attacker_stop_prob(l, s, p)
        return float(np.clip(q, self.q_floor, 1.0 - self.q_floor))

    def stop_prob_batch(self, s, b1, l, p1, o):
        s = np.asarray(s)
        l = np.asarray(l)
        p = np.clip(np.asarray(p1, dtype=float), self.p1_floor, 1.0 - self.p1_floor)
        s_b, l_b, p_b = np.broadcast_arrays(s, l, p)
        q = self.strategy.attacker_stop_prob(l_b, s_b, p_b)
        return np.clip(q, self.q_floor, 1.0 - self.q_floor)

    def tabulated(self, L: int) -> "_TabulatedAttacker":
        return _TabulatedAttacker(self, L)


class _TabulatedAttacker(AttackerPolicy):
    """Interpolation-table rendering of an attacker policy over its
    defender-stop-probability input."""

    def __init__(self, policy: ThresholdAttackerPolicy, L: int):
        x = np.linspace(0.0, 1.0, _TABLE_SIZE)
        ones = np.ones(_TABLE_SIZE, dtype=np.int64)
        zeros = np.zeros(_TABLE_SIZE)
        self.L = L
        self.tables = np.stack(
            [
                np.stack(
                    [np.asarray(policy.stop_prob_batch(sv * ones, zeros, l * ones, x, 0 * ones),
                                dtype=float)
                     for l in range(1, L + 1)]
                )
                for sv in (0, 1)
            ]
        ).reshape(2 * L, _TABLE_SIZE)

    def stop_prob(self, s, b1, l, p1, o):
        return float(_interp_uniform(self.tables, s * self.L + l - 1, p1))

    def stop_prob_batch(self, s, b1, l, p1, o):
        rows = np.asarray(s) * self.L + np.asarray(l) - 1
        return _interp_uniform(self.tables, rows, p1)


class FixedBehavioralAttacker(AttackerPolicy):
    """State-contingent stop probabilities, constant or functions of b."""

    def __init__(self, q0, q1):
        self.q0 = q0 if callable(q0) else (lambda b, v=float(q0): np.full_like(np.asarray(b, dtype=float), v) if np.ndim(b) else v)
        self.q1 = q1 if callable(q1) else (lambda b, v=float(q1): np.full_like(np.asarray(b, dtype=float), v) if np.ndim(b) else v)

    def stop_prob(self, s, b1, l, p1, o):
        return float(self.q1(b1) if s == INTRUSION else self.q0(b1))

    def stop_prob_batch(self, s, b1, l, p1, o):
        b1 = np.asarray(b1, dtype=float)
        s_b, b_b = np.broadcast_arrays(np.asarray(s), b1)
        q0 = np.broadcast_to(np.asarray(self.q0(b_b), dtype=float), b_b.shape)
        q1 = np.broadcast_to(np.asarray(self.q1(b_b), dtype=float), b_b.shape)
        return np.where(s_b == INTRUSION, q1, q0)


class AlertTriggerDefender(DefenderPolicy):
    """Stops whenever the current observation shows at least one alert."""

    def stop_prob(self, t, b1, l, o, s):
        return 1.0 if o >= 1 else 0.0

    def stop_prob_batch(self, t, b1, l, o, s):
        return (np.asarray(o) >= 1).astype(float)


class IntrusionOracleDefender(DefenderPolicy):
    """Stops at every step once the intrusion has started (true state 1)."""

    def stop_prob(self, t, b1, l, o, s):
        return 1.0 if s == INTRUSION else 0.0

    def stop_prob_batch(self, t, b1, l, o, s):
        return (np.asarray(s) == INTRUSION).astype(float)


class SampledMixturePolicy:
    """Per-episode sampling realization of a mixture.

    Instead of averaging behaviorally, one member is drawn per episode
    and played for the whole episode.  The simulator materializes the
    draw through bind_episodes.
    """

    def __init__(
        self,
        mixture: MixedStrategy,
        p1_floor: float = DEFAULT_P1_FLOOR,
        q_floor: float = DEFAULT_Q_FLOOR,
    ):
        self.mixture = mixture
        self.p1_floor = p1_floor
        self.q_floor = q_floor

    def bind_episodes(self, rng, n_episodes: int):
        members = rng.integers(0, len(self.mixture.strategies), size=n_episodes)
        return _BoundSampledMixture(self.mixture, members, self.p1_floor, self.q_floor)


class _BoundSampledMixture(DefenderPolicy, AttackerPolicy):
    def __init__(self, mixture, members, p1_floor, q_floor):
        self.mixture = mixture
        self.members = np.asarray(members)
        self.p1_floor = p1_floor
        self.q_floor = q_floor
        self._thetas = mixture._theta_stack()[self.members]
        self._k = mixture.steepness

    def stop_prob(self, *args):
        lo, hi = self.p1_floor, 1.0 - self.p1_floor
        if self.mixture.player == DEFENDER:
            t, b1, l, o, s = args
            th = self._thetas[0, _l_index(l, self.mixture.L)]
            return float(smooth_gate(th, np.clip(b1, lo, hi), self._k))
        s, b1, l, p1, o = args
        p = np.clip(p1, lo, hi)
        th = self._thetas[0, s * self.mixture.L + _l_index(l, self.mixture.L)]
        g = float(smooth_gate(th, p, self._k))
        return float(np.clip(g if s == INTRUSION else 1.0 - g, self.q_floor, 1.0 - self.q_floor))

    def stop_prob_batch(self, *args):
        lane = np.arange(self.members.size)
        lo, hi = self.p1_floor, 1.0 - self.p1_floor
        if self.mixture.player == DEFENDER:
            t, b1, l, o, s = args
            th = self._thetas[lane, _l_index(np.asarray(l), self.mixture.L)]
            return smooth_gate(th, np.clip(np.asarray(b1, dtype=float), lo, hi), self._k)
        s, b1, l, p1, o = args
        s = np.asarray(s)
        p = np.clip(np.asarray(p1, dtype=float), lo, hi)
        th = self._thetas[lane, s * self.mixture.L + _l_index(np.asarray(l), self.mixture.L)]
        g = smooth_gate(th, p, self._k)
        return np.clip(np.where(s == INTRUSION, g, 1.0 - g), self.q_floor, 1.0 - self.q_floor)


def as_defender_policy(strategy_or_policy, p1_floor: float = DEFAULT_P1_FLOOR) -> DefenderPolicy:
    if isinstance(strategy_or_policy, DefenderPolicy):
        return strategy_or_policy
    return ThresholdDefenderPolicy(strategy_or_policy, p1_floor)


def as_attacker_policy(
    strategy_or_policy,
    p1_floor: float = DEFAULT_P1_FLOOR,
    q_floor: float = DEFAULT_Q_FLOOR,
) -> AttackerPolicy:
    if isinstance(strategy_or_policy, AttackerPolicy):
        return strategy_or_policy
    return ThresholdAttackerPolicy(strategy_or_policy, p1_floor, q_floor)
