"""Core model of the intrusion stopping game.

A zero-sum, partially observed stochastic game between a defender
(player 1) and an attacker (player 2).  The state is 0 (no intrusion),
1 (intrusion ongoing) or terminal.  Both players choose stop/continue
simultaneously each step; the defender has a budget of ``L`` stops and
observes only alert counts, from which it filters a belief ``b(1)``
that an intrusion is ongoing.  The attacker observes everything.

This module holds the game configuration, the exact transition, reward
and observation kernels, the Bayes belief filter, and episode
simulation (a scalar reference path and a vectorized batch path).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, IO, Iterable, Sequence

import numpy as np

# State encoding.
NO_INTRUSION = 0
INTRUSION = 1
TERMINAL = 2

# Action encoding for both players.
CONTINUE = 0
STOP = 1

#: Sentinel observation emitted by the terminal state.
TERMINAL_OBS = -1

_TINY = 1e-300


class FilterDegenerateError(ValueError):
    """The realized observation has zero predictive probability under the
    filter's opponent model.  The caller decides the reset policy."""


def half_inverse_phi(L: int) -> np.ndarray:
    """Prevention probabilities 1/(2l) for l = 1..L."""
    return 1.0 / (2.0 * np.arange(1, L + 1))


@dataclass(frozen=True)
class ObservationModel:
    """Per-state pmf over the finite observation alphabet {0..n-1}.

    ``pmf0`` conditions on state 0 (no intrusion), ``pmf1`` on state 1.
    Both rows must be proper distributions; entries may be zero, but a
    zero-free model (see :meth:`floored`) guarantees the belief filter
    never degenerates.
    """

    pmf0: np.ndarray
    pmf1: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "pmf0", np.asarray(self.pmf0, dtype=float))
        object.__setattr__(self, "pmf1", np.asarray(self.pmf1, dtype=float))
        if self.pmf0.ndim != 1 or self.pmf0.shape != self.pmf1.shape:
            raise ValueError("pmf0 and pmf1 must be 1-d arrays of equal length")
        if self.pmf0.size < 1:
            raise ValueError("observation alphabet must be nonempty")
        for name, pmf in (("pmf0", self.pmf0), ("pmf1", self.pmf1)):
            if np.any(pmf < 0):
                raise ValueError(f"{name} has negative entries")
            if abs(pmf.sum() - 1.0) > 1e-12:
                raise ValueError(f"{name} must sum to 1 within 1e-12, got {pmf.sum()!r}")

    @property
    def alphabet_size(self) -> int:
        return int(self.pmf0.size)

    @cached_property
    def _cdf0(self) -> np.ndarray:
        return np.cumsum(self.pmf0)

    @cached_property
    def _cdf1(self) -> np.ndarray:
        return np.cumsum(self.pmf1)

    def sample(self, state, u) -> np.ndarray:
        """Inverse-cdf observation draw; ``state`` and ``u`` broadcast."""
        hi = self.alphabet_size - 1
        o0 = np.minimum(np.searchsorted(self._cdf0, u), hi)
        o1 = np.minimum(np.searchsorted(self._cdf1, u), hi)
        return np.where(np.asarray(state) == INTRUSION, o1, o0)

    def floored(self, floor: float = 1e-12) -> "ObservationModel":
        """Return a copy with every bin at least ``floor``, renormalized."""
        p0 = np.maximum(self.pmf0, floor)
        p1 = np.maximum(self.pmf1, floor)
        return ObservationModel(p0 / p0.sum(), p1 / p1.sum())

    def to_dict(self) -> dict:
        return {
            "n": self.alphabet_size,
            "pmf0": self.pmf0.tolist(),
            "pmf1": self.pmf1.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "ObservationModel":
        model = ObservationModel(np.asarray(d["pmf0"]), np.asarray(d["pmf1"]))
        if "n" in d and int(d["n"]) != model.alphabet_size:
            raise ValueError(
                f"declared alphabet size {d['n']} does not match pmf length "
                f"{model.alphabet_size}"
            )
        return model


@dataclass(frozen=True)
class GameConfig:
    """All game parameters.

    ``phi[l-1]`` is the probability that an ongoing intrusion is stopped
    at stops-remaining level ``l`` while the attacker continues.
    ``horizon_cap`` truncates simulated episodes; with the default 1000
    and gamma = 0.99 the discounted truncation error is negligible.
    """

    L: int
    R_st: float
    R_cost: float
    R_int: float
    gamma: float
    phi: np.ndarray
    obs: ObservationModel
    horizon_cap: int = 1000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "phi", np.asarray(self.phi, dtype=float))
        if self.L < 1:
            raise ValueError("L must be a positive integer")
        if not self.R_st > 0:
            raise ValueError("R_st must be > 0")
        if not self.R_cost < 0:
            raise ValueError("R_cost must be < 0")
        if not self.R_int < 0:
            raise ValueError("R_int must be < 0")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.phi.shape != (self.L,):
            raise ValueError(f"phi must have length L={self.L}")
        if np.any(self.phi < 0) or np.any(self.phi > 1):
            raise ValueError("phi values must lie in [0, 1]")
        if self.horizon_cap < 1:
            raise ValueError("horizon_cap must be a positive integer")
        ls = np.arange(1, self.L + 1)
        if np.any(self.R_st / ls - self.R_cost / ls - self.R_int < 0):
            raise ValueError("R_st/l - R_cost/l - R_int must be >= 0 for all l")

    def phi_at(self, l: int) -> float:
        if not 1 <= l <= self.L:
            raise ValueError(f"l must lie in 1..{self.L}, got {l}")
        return float(self.phi[l - 1])

    def to_dict(self) -> dict:
        phi = self.phi
        phi_out: object = phi.tolist()
        if np.allclose(phi, half_inverse_phi(self.L), rtol=0, atol=0):
            phi_out = "half-inverse"
        return {
            "L": self.L,
            "R_st": self.R_st,
            "R_cost": self.R_cost,
            "R_int": self.R_int,
            "gamma": self.gamma,
            "phi": phi_out,
            "obs": self.obs.to_dict(),
            "horizon_cap": self.horizon_cap,
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "GameConfig":
        L = int(d["L"])
        phi = d["phi"]
        if isinstance(phi, str):
            if phi != "half-inverse":
                raise ValueError(f"unknown phi spec {phi!r}")
            phi = half_inverse_phi(L)
        return GameConfig(
            L=L,
            R_st=float(d["R_st"]),
            R_cost=float(d["R_cost"]),
            R_int=float(d["R_int"]),
            gamma=float(d["gamma"]),
            phi=np.asarray(phi, dtype=float),
            obs=ObservationModel.from_dict(d["obs"]),
            horizon_cap=int(d.get("horizon_cap", 1000)),
            seed=int(d.get("seed", 0)),
        )

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @staticmethod
    def from_json(path) -> "GameConfig":
        with open(path) as f:
            return GameConfig.from_dict(json.load(f))


def _check_sal(s: int, a: tuple, l: int, cfg: GameConfig) -> None:
    if s not in (NO_INTRUSION, INTRUSION, TERMINAL):
        raise ValueError(f"invalid state {s}")
    if not 1 <= l <= cfg.L:
        raise ValueError(f"l must lie in 1..{cfg.L}, got {l}")
    a1, a2 = a
    if a1 not in (CONTINUE, STOP) or a2 not in (CONTINUE, STOP):
        raise ValueError(f"invalid action pair {a}")


def transition_row(s: int, l: int, a: tuple, cfg: GameConfig) -> np.ndarray:
    """Distribution of the next state over (0, 1, terminal).

    The terminal state is absorbing.  The defender's final stop (l = 1,
    a1 = S) ends the game regardless of anything else; the attacker's
    stop in state 1 ends the game; while the intrusion runs and the
    attacker continues, the prevention event fires with probability
    phi_l independently of the defender's current action.
    """
    _check_sal(s, a, l, cfg)
    a1, a2 = a
    row = np.zeros(3)
    if s == TERMINAL:
        row[TERMINAL] = 1.0
        return row
    if a1 == STOP and l == 1:
        row[TERMINAL] = 1.0
        return row
    if s == INTRUSION:
        if a2 == STOP:
            row[TERMINAL] = 1.0
        else:
            phi = cfg.phi_at(l)
            row[INTRUSION] = 1.0 - phi
            row[TERMINAL] = phi
        return row
    # s == NO_INTRUSION
    if a2 == STOP:
        row[INTRUSION] = 1.0
    else:
        row[NO_INTRUSION] = 1.0
    return row


def transition_prob(s_next: int, s: int, l: int, a: tuple, cfg: GameConfig) -> float:
    """P[s_next | s, a] at stops-remaining level l."""
    if s_next not in (NO_INTRUSION, INTRUSION, TERMINAL):
        raise ValueError(f"invalid state {s_next}")
    return float(transition_row(s, l, a, cfg)[s_next])


def reward(s: int, l: int, a: tuple, cfg: GameConfig) -> float:
    """Defender reward r_t; the attacker receives the negation."""
    _check_sal(s, a, l, cfg)
    a1, a2 = a
    if s == TERMINAL:
        return 0.0
    if s == INTRUSION:
        if a2 == STOP:
            return 0.0
        if a1 == STOP:
            return cfg.R_st / l
        return cfg.R_int
    # s == NO_INTRUSION
    if a1 == STOP:
        return cfg.R_cost / l
    return 0.0


def belief_update(
    b: float,
    a1: int,
    o: int,
    pi2: Callable[[int, float], float],
    l: int,
    cfg: GameConfig,
) -> float:
    """Bayes-filtered belief that an intrusion is ongoing.

    Conditions on the single realized observation ``o``, marginalizing
    the attacker's action through the opponent model ``pi2(s, b)`` (the
    probability that the attacker stops in state ``s`` at belief ``b``)
    and the transition kernel.  Observations are emitted by the
    post-transition state.

    Raises:
        FilterDegenerateError: if ``o`` has zero predictive probability.
    """
    if not 0.0 <= b <= 1.0:
        raise ValueError(f"belief must lie in [0, 1], got {b}")
    if not 0 <= o < cfg.obs.alphabet_size:
        raise ValueError(f"observation {o} outside alphabet")
    prior = (1.0 - b, b)
    f_next = (float(cfg.obs.pmf0[o]), float(cfg.obs.pmf1[o]))
    num = [0.0, 0.0]
    for s in (NO_INTRUSION, INTRUSION):
        if prior[s] == 0.0:
            continue
        q = float(pi2(s, b))
        for a2, pa2 in ((STOP, q), (CONTINUE, 1.0 - q)):
            if pa2 == 0.0:
                continue
            row = transition_row(s, l, (a1, a2), cfg)
            for s_next in (NO_INTRUSION, INTRUSION):
                num[s_next] += prior[s] * pa2 * row[s_next] * f_next[s_next]
    total = num[0] + num[1]
    if total <= _TINY:
        raise FilterDegenerateError(
            f"observation {o} has zero predictive probability at b={b}, a1={a1}, l={l}"
        )
    return num[1] / total


@dataclass
class StepOutcome:
    a1: int
    a2: int
    s_next: int
    o_next: int
    r: float


def sample_step(s, l, b, o, t, pi1, pi2, cfg: GameConfig, rng, *, attacker_p1_ref=None) -> StepOutcome:
    """Sample one simultaneous move.

    Actions are drawn from both policies, the next state from the
    transition kernel, the next observation from the pmf of the next
    state, and the reward from the reward kernel.  Draw order is fixed:
    defender action, attacker action, transition, observation.
    """
    if s == TERMINAL:
        raise ValueError("cannot step from the terminal state")
    p1 = float(pi1.stop_prob(t, b, l, o, s))
    a1 = STOP if rng.random() < p1 else CONTINUE
    p1_ref = p1 if attacker_p1_ref is None else float(attacker_p1_ref.stop_prob(t, b, l, o, s))
    p2 = float(pi2.stop_prob(s, b, l, p1_ref, o))
    a2 = STOP if rng.random() < p2 else CONTINUE
    row = transition_row(s, l, (a1, a2), cfg)
    u = rng.random()
    s_next = min(int(np.searchsorted(np.cumsum(row), u)), TERMINAL)
    u_obs = rng.random()
    if s_next == TERMINAL:
        o_next = TERMINAL_OBS
    else:
        o_next = int(cfg.obs.sample(s_next, u_obs))
    return StepOutcome(a1, a2, s_next, o_next, reward(s, l, (a1, a2), cfg))


@dataclass
class StepRecord:
    t: int
    s: int
    l: int
    b1: float
    a1: int
    a2: int
    o: int
    r: float


@dataclass
class EpisodeTrace:
    """Full record of one simulated episode.

    ``steps[k].o`` is the observation held when acting at step k + 1, so
    the defender's history is recoverable from the records.  Stopping
    times are the step indices at which each player played stop.
    """

    steps: list[StepRecord] = field(default_factory=list)
    discounted_return: float = 0.0
    defender_stops: list[int] = field(default_factory=list)
    attacker_stops: list[int] = field(default_factory=list)
    truncated: bool = False

    @property
    def length(self) -> int:
        return len(self.steps)

    @property
    def intrusion_length(self) -> int:
        return sum(1 for st in self.steps if st.s == INTRUSION)

    def to_csv(self, f: IO[str]) -> None:
        w = csv.writer(f)
        w.writerow(["t", "s", "l", "b1", "a1", "a2", "o", "r"])
        for st in self.steps:
            w.writerow([st.t, st.s, st.l, repr(st.b1), st.a1, st.a2, st.o, repr(st.r)])


def simulate_episode(
    pi1,
    pi2,
    cfg: GameConfig,
    rng,
    *,
    filter_pi2=None,
    attacker_p1_ref=None,
    horizon_cap: int | None = None,
) -> EpisodeTrace:
    """Simulate one episode of the game.

    ``pi1``/``pi2`` are policy objects (see :mod:`stopgame.strategies`).
    The defender's belief is maintained with ``filter_pi2`` as the
    filter's opponent model; it defaults to the acting attacker policy.
    ``attacker_p1_ref`` optionally supplies the defender policy whose
    stop probability the attacker (and the filter model) react to;
    against a deviating defender this keeps the attacker a fixed
    behavioral strategy gated on the public defender.  Episodes are
    truncated at ``horizon_cap`` (default from the config).
    """
    if filter_pi2 is None:
        filter_pi2 = pi2
    ref = pi1 if attacker_p1_ref is None else attacker_p1_ref
    cap = cfg.horizon_cap if horizon_cap is None else horizon_cap
    s, l, b, t = NO_INTRUSION, cfg.L, 0.0, 1
    o = int(cfg.obs.sample(NO_INTRUSION, rng.random()))
    trace = EpisodeTrace()
    ret = 0.0
    disc = 1.0
    while s != TERMINAL and t <= cap:
        out = sample_step(s, l, b, o, t, pi1, pi2, cfg, rng, attacker_p1_ref=ref)
        trace.steps.append(StepRecord(t, s, l, b, out.a1, out.a2, o, out.r))
        if out.a1 == STOP:
            trace.defender_stops.append(t)
        if out.a2 == STOP:
            trace.attacker_stops.append(t)
        ret += disc * out.r
        disc *= cfg.gamma
        if out.s_next != TERMINAL:
            p1 = float(ref.stop_prob(t, b, l, o, s))
            q = (filter_pi2.stop_prob(0, b, l, p1, o), filter_pi2.stop_prob(1, b, l, p1, o))
            b = belief_update(b, out.a1, out.o_next, lambda sv, bv: q[sv], l, cfg)
        l = l - out.a1 if out.s_next != TERMINAL else l
        s, o = out.s_next, out.o_next
        t += 1
    trace.truncated = s != TERMINAL
    trace.discounted_return = ret
    return trace


@dataclass
class BatchStats:
    """Per-episode outcome arrays from a vectorized simulation batch."""

    returns: np.ndarray
    lengths: np.ndarray
    intrusion_lengths: np.ndarray
    truncated: np.ndarray

    @property
    def mean_return(self) -> float:
        return float(self.returns.mean())

    def ci95(self) -> float:
        n = self.returns.size
        if n < 2:
            return float("inf")
        return float(1.96 * self.returns.std(ddof=1) / np.sqrt(n))


def simulate_batch(
    pi1,
    pi2,
    cfg: GameConfig,
    n_episodes: int,
    rng,
    *,
    filter_pi2=None,
    attacker_p1_ref=None,
    horizon_cap: int | None = None,
) -> BatchStats:
    """Simulate ``n_episodes`` in lockstep with vectorized kernels.

    Equivalent in distribution to :func:`simulate_episode`; all random
    draws are arrays over the batch, with a fixed per-step order, so
    results are reproducible for a fixed generator state.  Lanes whose
    episode has ended keep consuming draws, which keeps the stream
    layout independent of outcomes.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be positive")
    if filter_pi2 is None:
        filter_pi2 = pi2
    pi1 = _bind_episodes(pi1, rng, n_episodes)
    pi2 = _bind_episodes(pi2, rng, n_episodes)
    filter_pi2 = _bind_episodes(filter_pi2, rng, n_episodes) if filter_pi2 is not pi2 else pi2
    p1_ref_policy = None if attacker_p1_ref is None else _bind_episodes(attacker_p1_ref, rng, n_episodes)
    # Threshold-family policies get rendered as interpolation tables for
    # the hot loop; other policies run their own batch path.
    same_filter = filter_pi2 is pi2
    pi1 = _tabulate(pi1, cfg.L)
    pi2 = _tabulate(pi2, cfg.L)
    filter_pi2 = pi2 if same_filter else _tabulate(filter_pi2, cfg.L)
    if p1_ref_policy is not None:
        p1_ref_policy = _tabulate(p1_ref_policy, cfg.L)
    cap = cfg.horizon_cap if horizon_cap is None else horizon_cap
    B = n_episodes
    pmf0, pmf1 = cfg.obs.pmf0, cfg.obs.pmf1
    phi_by_l = cfg.phi

    s = np.zeros(B, dtype=np.int64)
    l = np.full(B, cfg.L, dtype=np.int64)
    b = np.zeros(B)
    alive = np.ones(B, dtype=bool)
    o = cfg.obs.sample(s, rng.random(B)).astype(np.int64)

    ret = np.zeros(B)
    lengths = np.zeros(B, dtype=np.int64)
    intr = np.zeros(B, dtype=np.int64)
    disc = 1.0
    t = 1
    while alive.any() and t <= cap:
        # Dead lanes keep consuming draws; clamp their state for the
        # policy calls so per-state indexing stays in range.
        s_pol = np.where(s == TERMINAL, NO_INTRUSION, s)
        p1 = np.asarray(pi1.stop_prob_batch(t, b, l, o, s_pol), dtype=float)
        a1 = (rng.random(B) < p1) & alive
        if p1_ref_policy is not None:
            p1 = np.asarray(p1_ref_policy.stop_prob_batch(t, b, l, o, s_pol), dtype=float)
        p2 = np.asarray(pi2.stop_prob_batch(s_pol, b, l, p1, o), dtype=float)
        a2 = (rng.random(B) < p2) & alive

        in0 = alive & (s == NO_INTRUSION)
        in1 = alive & (s == INTRUSION)
        li = l - 1
        r = np.zeros(B)
        r[in0 & a1] = cfg.R_cost / l[in0 & a1]
        stop_hit = in1 & a1 & ~a2
        r[stop_hit] = cfg.R_st / l[stop_hit]
        r[in1 & ~a1 & ~a2] = cfg.R_int
        ret += disc * r
        lengths += alive
        intr += in1

        # Transition: final defender stop and attacker stop in state 1 end
        # the game; prevention fires at rate phi_l while the attacker stays.
        u = rng.random(B)
        s_next = s.copy()
        s_next[in0 & a2] = INTRUSION
        prevented = in1 & ~a2 & (u < phi_by_l[li])
        s_next[prevented] = TERMINAL
        s_next[in1 & a2] = TERMINAL
        s_next[alive & a1 & (l == 1)] = TERMINAL

        o_next = cfg.obs.sample(s_next, rng.random(B)).astype(np.int64)

        live_next = alive & (s_next != TERMINAL)
        if live_next.any():
            q0 = np.asarray(filter_pi2.stop_prob_batch(0, b, l, p1, o), dtype=float)
            q1 = np.asarray(filter_pi2.stop_prob_batch(1, b, l, p1, o), dtype=float)
            f0 = pmf0[o_next]
            f1 = pmf1[o_next]
            phi = phi_by_l[li]
            num0 = (1.0 - b) * (1.0 - q0) * f0
            num1 = ((1.0 - b) * q0 + b * (1.0 - q1) * (1.0 - phi)) * f1
            tot = num0 + num1
            bad = live_next & (tot <= _TINY)
            if bad.any():
                i = int(np.flatnonzero(bad)[0])
                raise FilterDegenerateError(
                    f"observation {int(o_next[i])} has zero predictive probability "
                    f"at b={b[i]}, l={int(l[i])}"
                )
            b = np.where(live_next, num1 / np.maximum(tot, _TINY), b)

        l = l - (a1 & live_next)
        s = np.where(alive, s_next, s)
        o = np.where(alive, o_next, o)
        alive = live_next
        disc *= cfg.gamma
        t += 1

    return BatchStats(
        returns=ret,
        lengths=lengths,
        intrusion_lengths=intr,
        truncated=alive.copy(),
    )


def _bind_episodes(policy, rng, n_episodes):
    """Give sampling-mode policies a chance to fix per-episode members."""
    bind = getattr(policy, "bind_episodes", None)
    if bind is None:
        return policy
    return bind(rng, n_episodes)


def _tabulate(policy, L):
    tab = getattr(policy, "tabulated", None)
    return policy if tab is None else tab(L)
