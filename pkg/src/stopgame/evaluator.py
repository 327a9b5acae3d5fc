"""Dynamic-programming evaluation on a discretized belief grid.

Best responses are computed by value iteration over (stops-remaining,
belief) cells: the defender's best response to a fixed attacker
behavioral strategy solves the induced partially observed problem, and
the attacker's best response to a fixed defender solves the induced
fully observed problem in which the defender's belief (filtered with a
fixed opponent model) is part of the environment state.  Exploitability
of a strategy pair sums the two best-response values at the initial
point.  The game value itself comes from minimax value iteration whose
stage games are 2x4 matrices (defender action x state-contingent
attacker action), solved exactly by breakpoint enumeration of the
piecewise linear concave maximin objective.

Structural checks verify, on the grid, that computed best responses
have the threshold form that optimal stopping theory predicts.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .game import (
    CONTINUE,
    GameConfig,
    INTRUSION,
    NO_INTRUSION,
    ObservationModel,
    STOP,
    TERMINAL,
    reward,
    transition_prob,
)
from .strategies import (
    ATTACKER,
    AttackerPolicy,
    DEFAULT_P1_FLOOR,
    DEFAULT_Q_FLOOR,
    DEFENDER,
    MixedStrategy,
    ThresholdStrategy,
)

_TINY = 1e-300

#: (b_grid, l) -> defender stop probabilities
DefenderMap = Callable[[np.ndarray, int], np.ndarray]
#: (s, b_grid, l) -> attacker stop probabilities
AttackerMap = Callable[[int, np.ndarray, int], np.ndarray]


@dataclass(frozen=True)
class BeliefGrid:
    """Uniform grid on [0, 1] with K cells and linear interpolation."""

    K: int

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("grid resolution must be >= 1")

    @property
    def points(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.K + 1)

    @property
    def cell(self) -> float:
        return 1.0 / self.K

    def interp(self, values_row: np.ndarray, x) -> np.ndarray:
        return np.interp(x, self.points, values_row)


@dataclass
class BeliefGridSolution:
    """Value tables and policies over the belief grid.

    Defender solutions hold arrays of shape (L, K+1); attacker solutions
    (2, L, K+1) with the leading axis the true state.  ``policy`` holds
    stop probabilities (0/1 for greedy best responses, the equilibrium
    stop probability for minimax solutions).  ``margin`` is the gain of
    stopping over continuing, used by structure checks to ignore cells
    that are numerically indifferent.
    """

    player: str
    grid: BeliefGrid
    values: np.ndarray
    policy: np.ndarray
    margin: np.ndarray | None
    residual: float
    sweeps: int
    converged: bool
    attacker_policy: np.ndarray | None = None

    def value_at(self, l: int, b: float, s: int | None = None) -> float:
        row = self.values[l - 1] if s is None else self.values[s, l - 1]
        return float(self.grid.interp(row, b))

    def stop_prob_at(self, l: int, b: float, s: int | None = None) -> float:
        row = self.policy[l - 1] if s is None else self.policy[s, l - 1]
        return float(self.grid.interp(row, b))


def _transition_quads(s: int, a1: int, l: int, cfg: GameConfig):
    """(to-state-0, to-state-1) probabilities under attacker stop/continue."""
    t0 = [transition_prob(NO_INTRUSION, s, l, (a1, a2), cfg) for a2 in (CONTINUE, STOP)]
    t1 = [transition_prob(INTRUSION, s, l, (a1, a2), cfg) for a2 in (CONTINUE, STOP)]
    return t0, t1


def _posterior_tables(reach0, reach1, obs: ObservationModel):
    """Predictive weights and posteriors per (grid point, observation)."""
    num0 = reach0[:, None] * obs.pmf0[None, :]
    num1 = reach1[:, None] * obs.pmf1[None, :]
    w = num0 + num1
    bp = num1 / np.maximum(w, _TINY)
    return w, bp


class _DefenderBackup:
    """Precomputed one-step backup for the defender's filtered problem."""

    def __init__(self, pi2: AttackerMap, cfg: GameConfig, grid: BeliefGrid):
        self.cfg = cfg
        self.grid = grid
        g = grid.points
        self.er = {}
        self.w = {}
        self.bp = {}
        self.lp = {}
        for l in range(1, cfg.L + 1):
            q0 = np.asarray(pi2(NO_INTRUSION, g, l), dtype=float)
            q1 = np.asarray(pi2(INTRUSION, g, l), dtype=float)
            for a1 in (CONTINUE, STOP):
                er0 = q0 * reward(NO_INTRUSION, l, (a1, STOP), cfg) + (1 - q0) * reward(
                    NO_INTRUSION, l, (a1, CONTINUE), cfg
                )
                er1 = q1 * reward(INTRUSION, l, (a1, STOP), cfg) + (1 - q1) * reward(
                    INTRUSION, l, (a1, CONTINUE), cfg
                )
                self.er[l, a1] = (1 - g) * er0 + g * er1
                lp = l - a1
                self.lp[l, a1] = lp
                if lp == 0:
                    continue
                t0_0, t1_0 = _transition_quads(NO_INTRUSION, a1, l, cfg)
                t0_1, t1_1 = _transition_quads(INTRUSION, a1, l, cfg)
                reach0 = (1 - g) * ((1 - q0) * t0_0[0] + q0 * t0_0[1]) + g * (
                    (1 - q1) * t0_1[0] + q1 * t0_1[1]
                )
                reach1 = (1 - g) * ((1 - q0) * t1_0[0] + q0 * t1_0[1]) + g * (
                    (1 - q1) * t1_1[0] + q1 * t1_1[1]
                )
                self.w[l, a1], self.bp[l, a1] = _posterior_tables(reach0, reach1, cfg.obs)

    def q_tables(self, V: np.ndarray):
        """Q(continue), Q(stop) arrays of shape (L, K+1) given V (L, K+1)."""
        cfg, g = self.cfg, self.grid
        Q = np.zeros((2, cfg.L, g.K + 1))
        for l in range(1, cfg.L + 1):
            for a1 in (CONTINUE, STOP):
                q = self.er[l, a1].copy()
                lp = self.lp[l, a1]
                if lp > 0:
                    w, bp = self.w[l, a1], self.bp[l, a1]
                    vn = g.interp(V[lp - 1], bp.ravel()).reshape(bp.shape)
                    q += cfg.gamma * (w * vn).sum(axis=1)
                Q[a1, l - 1] = q
        return Q[CONTINUE], Q[STOP]


def _iterate(step, v0, tol, max_sweeps, horizon):
    v = v0
    residual = math.inf
    sweeps = 0
    if horizon is not None:
        for _ in range(horizon):
            v_new = step(v)
            residual = float(np.max(np.abs(v_new - v)))
            v = v_new
            sweeps += 1
        return v, residual, sweeps, True
    while sweeps < max_sweeps:
        v_new = step(v)
        residual = float(np.max(np.abs(v_new - v)))
        v = v_new
        sweeps += 1
        if residual <= tol:
            return v, residual, sweeps, True
    return v, residual, sweeps, False


def defender_best_response_vi(
    pi2: AttackerMap,
    cfg: GameConfig,
    grid: BeliefGrid,
    *,
    tol: float = 1e-6,
    max_sweeps: int = 10_000,
    horizon: int | None = None,
    v0: np.ndarray | None = None,
) -> BeliefGridSolution:
    """Defender best response to a fixed attacker behavioral strategy.

    Jacobi value iteration over (l, belief) cells; the filter inside the
    backup marginalizes the attacker through ``pi2``, which doubles as
    the environment and the opponent model.  ``horizon`` switches to an
    exact finite-horizon computation (that many backward sweeps from the
    zero table).  Exceeding ``max_sweeps`` is reported through the
    ``converged`` flag rather than raised.
    """
    backup = _DefenderBackup(pi2, cfg, grid)
    v_init = np.zeros((cfg.L, grid.K + 1)) if v0 is None else np.array(v0, dtype=float)

    def step(v):
        qc, qs = backup.q_tables(v)
        return np.maximum(qc, qs)

    v, residual, sweeps, ok = _iterate(step, v_init, tol, max_sweeps, horizon)
    qc, qs = backup.q_tables(v)
    margin = qs - qc
    return BeliefGridSolution(
        player=DEFENDER,
        grid=grid,
        values=np.maximum(qc, qs),
        policy=(margin > 0).astype(float),
        margin=margin,
        residual=residual,
        sweeps=sweeps,
        converged=ok,
    )


def policy_value_vi(
    pi1: DefenderMap,
    pi2: AttackerMap,
    cfg: GameConfig,
    grid: BeliefGrid,
    *,
    tol: float = 1e-6,
    max_sweeps: int = 10_000,
    horizon: int | None = None,
) -> BeliefGridSolution:
    """Value of a fixed strategy pair (no optimization), for the defender."""
    backup = _DefenderBackup(pi2, cfg, grid)
    g = grid.points
    p1 = np.stack([np.asarray(pi1(g, l), dtype=float) for l in range(1, cfg.L + 1)])

    def step(v):
        qc, qs = backup.q_tables(v)
        return (1 - p1) * qc + p1 * qs

    v, residual, sweeps, ok = _iterate(
        step, np.zeros((cfg.L, grid.K + 1)), tol, max_sweeps, horizon
    )
    return BeliefGridSolution(
        player=DEFENDER,
        grid=grid,
        values=v,
        policy=p1,
        margin=None,
        residual=residual,
        sweeps=sweeps,
        converged=ok,
    )


class _AttackerBackup:
    """Precomputed backup for the attacker's fully observed problem.

    The defender's belief is part of the environment: it evolves with
    the fixed filter model ``pi2_filter`` no matter what the optimizing
    attacker actually plays, since the belief is the defender's
    statistic and cannot react to the deviation.
    """

    def __init__(self, pi1: DefenderMap, pi2_filter: AttackerMap, cfg: GameConfig, grid: BeliefGrid):
        self.cfg = cfg
        self.grid = grid
        g = grid.points
        self.p1 = {l: np.clip(np.asarray(pi1(g, l), dtype=float), 0.0, 1.0) for l in range(1, cfg.L + 1)}
        self.bp = {}
        self.lp = {}
        for l in range(1, cfg.L + 1):
            q0 = np.asarray(pi2_filter(NO_INTRUSION, g, l), dtype=float)
            q1 = np.asarray(pi2_filter(INTRUSION, g, l), dtype=float)
            for a1 in (CONTINUE, STOP):
                lp = l - a1
                self.lp[l, a1] = lp
                if lp == 0:
                    continue
                t0_0, t1_0 = _transition_quads(NO_INTRUSION, a1, l, cfg)
                t0_1, t1_1 = _transition_quads(INTRUSION, a1, l, cfg)
                reach0 = (1 - g) * ((1 - q0) * t0_0[0] + q0 * t0_0[1]) + g * (
                    (1 - q1) * t0_1[0] + q1 * t0_1[1]
                )
                reach1 = (1 - g) * ((1 - q0) * t1_0[0] + q0 * t1_0[1]) + g * (
                    (1 - q1) * t1_1[0] + q1 * t1_1[1]
                )
                _, self.bp[l, a1] = _posterior_tables(reach0, reach1, cfg.obs)

    def q_tables(self, V: np.ndarray):
        """Attacker-reward Q arrays of shape (2 states, 2 actions, L, K+1)."""
        cfg, grid = self.cfg, self.grid
        obs = cfg.obs
        Q = np.zeros((2, 2, cfg.L, grid.K + 1))
        for l in range(1, cfg.L + 1):
            p1 = self.p1[l]
            exp_obs = {}
            for a1 in (CONTINUE, STOP):
                lp = self.lp[l, a1]
                if lp == 0:
                    exp_obs[a1] = (0.0, 0.0)
                    continue
                bp = self.bp[l, a1]
                flat = bp.ravel()
                v0n = grid.interp(V[NO_INTRUSION, lp - 1], flat).reshape(bp.shape)
                v1n = grid.interp(V[INTRUSION, lp - 1], flat).reshape(bp.shape)
                exp_obs[a1] = (v0n @ obs.pmf0, v1n @ obs.pmf1)
            for s in (NO_INTRUSION, INTRUSION):
                for a2 in (CONTINUE, STOP):
                    total = np.zeros(grid.K + 1)
                    for a1, pa1 in ((CONTINUE, 1 - p1), (STOP, p1)):
                        r = -reward(s, l, (a1, a2), cfg)
                        e0, e1 = exp_obs[a1]
                        cont = (
                            transition_prob(NO_INTRUSION, s, l, (a1, a2), cfg) * e0
                            + transition_prob(INTRUSION, s, l, (a1, a2), cfg) * e1
                        )
                        total = total + pa1 * (r + cfg.gamma * cont)
                    Q[s, a2, l - 1] = total
        return Q


def attacker_best_response_vi(
    pi1: DefenderMap,
    pi2_filter: AttackerMap,
    cfg: GameConfig,
    grid: BeliefGrid,
    *,
    tol: float = 1e-6,
    max_sweeps: int = 10_000,
    horizon: int | None = None,
    v0: np.ndarray | None = None,
) -> BeliefGridSolution:
    """Attacker best response to a fixed defender.

    Values are in attacker reward (the negated defender reward), so best
    responses maximize.  ``pi2_filter`` is the attacker model inside the
    defender's filter; against a fictitious-play pair this is the
    attacker's current average strategy, not the deviating optimizer.
    """
    backup = _AttackerBackup(pi1, pi2_filter, cfg, grid)
    v_init = np.zeros((2, cfg.L, grid.K + 1)) if v0 is None else np.array(v0, dtype=float)

    def step(v):
        q = backup.q_tables(v)
        return np.maximum(q[:, CONTINUE], q[:, STOP])

    v, residual, sweeps, ok = _iterate(step, v_init, tol, max_sweeps, horizon)
    q = backup.q_tables(v)
    margin = q[:, STOP] - q[:, CONTINUE]
    return BeliefGridSolution(
        player=ATTACKER,
        grid=grid,
        values=np.maximum(q[:, CONTINUE], q[:, STOP]),
        policy=(margin > 0).astype(float),
        margin=margin,
        residual=residual,
        sweeps=sweeps,
        converged=ok,
    )


# Stage games and minimax value iteration ------------------------------------

#: Column order: attacker pure state-contingent maps (a2 if s=0, a2 if s=1).
STAGE_COLUMNS = ((0, 0), (0, 1), (1, 0), (1, 1))


@dataclass
class StageSolution:
    p_stop: float
    attacker_mix: np.ndarray
    value: float


def _stage_batch(payoffs: np.ndarray):
    """Maximin over defender mixtures for a batch of 2x4 stage games.

    ``payoffs[i, a1, col]`` is the defender payoff of row a1 (0 =
    continue, 1 = stop) against attacker column ``col``.  The objective
    g(p) = min over columns of the payoff at stop probability p is
    piecewise linear concave, so the maximum sits at 0, 1 or a
    crossing of two column lines; all candidates are enumerated.
    """
    p = np.asarray(payoffs, dtype=float)
    squeeze = p.ndim == 2
    if squeeze:
        p = p[None]
    c0 = p[:, 0, :]
    slopes = p[:, 1, :] - c0
    n = p.shape[0]
    pairs = [(u, v) for u in range(4) for v in range(u + 1, 4)]
    cands = np.empty((n, 2 + len(pairs)))
    cands[:, 0] = 0.0
    cands[:, 1] = 1.0
    for k, (u, v) in enumerate(pairs):
        denom = slopes[:, u] - slopes[:, v]
        with np.errstate(divide="ignore", invalid="ignore"):
            x = (c0[:, v] - c0[:, u]) / denom
        x = np.where(np.isfinite(x), x, 0.0)
        cands[:, 2 + k] = np.clip(x, 0.0, 1.0)
    # payoff of every candidate against every column: (n, cand, col)
    lines = c0[:, None, :] + cands[:, :, None] * slopes[:, None, :]
    gvals = lines.min(axis=2)
    best = np.argmax(gvals, axis=1)
    idx = np.arange(n)
    p_star = cands[idx, best]
    value = gvals[idx, best]
    if squeeze:
        return float(p_star[0]), float(value[0])
    return p_star, value


def solve_stage_game(payoff: np.ndarray) -> StageSolution:
    """Solve one 2x4 stage game exactly.

    Returns the defender's maximin stop probability, an attacker column
    mixture supported on active columns that certifies the value, and
    the game value.
    """
    payoff = np.asarray(payoff, dtype=float)
    if payoff.shape != (2, 4):
        raise ValueError("stage payoff must be a 2x4 matrix")
    if not np.all(np.isfinite(payoff)):
        raise ValueError("stage payoffs must be finite")
    p_star, value = _stage_batch(payoff)
    c0 = payoff[0]
    slopes = payoff[1] - payoff[0]
    at_p = c0 + p_star * slopes
    scale = max(1.0, float(np.abs(payoff).max()))
    active = np.flatnonzero(at_p <= value + 1e-9 * scale)
    mix = np.zeros(4)
    s_act = slopes[active]
    if p_star <= 0.0:
        mix[active[np.argmin(s_act)]] = 1.0
    elif p_star >= 1.0:
        mix[active[np.argmax(s_act)]] = 1.0
    else:
        u = active[np.argmin(s_act)]
        v = active[np.argmax(s_act)]
        su, sv = slopes[u], slopes[v]
        if u == v or sv - su <= 1e-12 * scale:
            mix[u] = 1.0
        else:
            wu = sv / (sv - su)
            mix[u] = np.clip(wu, 0.0, 1.0)
            mix[v] = 1.0 - mix[u]
    return StageSolution(p_stop=float(p_star), attacker_mix=mix, value=float(value))


class _MinimaxBackup:
    """Precomputed stage payoff pieces for minimax value iteration.

    Continuation beliefs are filtered per attacker column: each pure
    state-contingent attacker action map plays the role of the opponent
    model for its own column.
    """

    def __init__(self, cfg: GameConfig, grid: BeliefGrid):
        self.cfg = cfg
        self.grid = grid
        g = grid.points
        self.er = {}
        self.w = {}
        self.bp = {}
        for l in range(1, cfg.L + 1):
            for a1 in (CONTINUE, STOP):
                lp = l - a1
                for ci, (m0, m1) in enumerate(STAGE_COLUMNS):
                    self.er[l, a1, ci] = (1 - g) * reward(NO_INTRUSION, l, (a1, m0), cfg) + g * reward(
                        INTRUSION, l, (a1, m1), cfg
                    )
                    if lp == 0:
                        continue
                    reach0 = (1 - g) * transition_prob(NO_INTRUSION, NO_INTRUSION, l, (a1, m0), cfg) + g * transition_prob(
                        NO_INTRUSION, INTRUSION, l, (a1, m1), cfg
                    )
                    reach1 = (1 - g) * transition_prob(INTRUSION, NO_INTRUSION, l, (a1, m0), cfg) + g * transition_prob(
                        INTRUSION, INTRUSION, l, (a1, m1), cfg
                    )
                    self.w[l, a1, ci], self.bp[l, a1, ci] = _posterior_tables(reach0, reach1, cfg.obs)

    def payoffs(self, V: np.ndarray, l: int) -> np.ndarray:
        """Stage payoff tensor (K+1, 2, 4) at level l given V (L, K+1)."""
        cfg, grid = self.cfg, self.grid
        out = np.empty((grid.K + 1, 2, 4))
        for a1 in (CONTINUE, STOP):
            lp = l - a1
            for ci in range(4):
                q = self.er[l, a1, ci]
                if lp > 0:
                    w, bp = self.w[l, a1, ci], self.bp[l, a1, ci]
                    vn = grid.interp(V[lp - 1], bp.ravel()).reshape(bp.shape)
                    q = q + cfg.gamma * (w * vn).sum(axis=1)
                out[:, a1, ci] = q
        return out


def minimax_value_iteration(
    cfg: GameConfig,
    grid: BeliefGrid,
    *,
    tol: float = 1e-6,
    max_sweeps: int = 10_000,
    horizon: int | None = None,
    v0: np.ndarray | None = None,
) -> BeliefGridSolution:
    """Game value on the belief grid via stage-game value iteration.

    Each sweep solves one 2x4 stage game per (l, belief) cell; the
    returned policy is the defender's equilibrium stop probability and
    ``attacker_policy[s, l-1]`` the attacker's per-state stop
    probability from the equilibrium column mixtures.
    """
    backup = _MinimaxBackup(cfg, grid)
    v_init = np.zeros((cfg.L, grid.K + 1)) if v0 is None else np.array(v0, dtype=float)

    def step(v):
        out = np.empty_like(v)
        for l in range(1, cfg.L + 1):
            _, out[l - 1] = _stage_batch(backup.payoffs(v, l))
        return out

    v, residual, sweeps, ok = _iterate(step, v_init, tol, max_sweeps, horizon)
    policy = np.empty_like(v)
    attacker_policy = np.empty((2, cfg.L, grid.K + 1))
    for l in range(1, cfg.L + 1):
        payoffs = backup.payoffs(v, l)
        for i in range(grid.K + 1):
            sol = solve_stage_game(payoffs[i])
            policy[l - 1, i] = sol.p_stop
            cols = np.asarray(STAGE_COLUMNS)
            attacker_policy[0, l - 1, i] = float(sol.attacker_mix @ cols[:, 0])
            attacker_policy[1, l - 1, i] = float(sol.attacker_mix @ cols[:, 1])
    return BeliefGridSolution(
        player="minimax",
        grid=grid,
        values=v,
        policy=policy,
        margin=None,
        residual=residual,
        sweeps=sweeps,
        converged=ok,
        attacker_policy=attacker_policy,
    )


# Strategy binding and exploitability ----------------------------------------


def defender_map(strategy, p1_floor: float = DEFAULT_P1_FLOOR) -> DefenderMap:
    """Behavioral map (b, l) -> stop prob from a strategy-like object.

    Threshold strategies and mixtures are rendered exactly as the
    simulation adapters play them (gate input clamped to
    [p1_floor, 1 - p1_floor]); grid solutions and plain callables pass
    through untouched.
    """
    if callable(strategy):
        return strategy
    if isinstance(strategy, BeliefGridSolution):
        if strategy.player != DEFENDER:
            raise ValueError("need a defender solution")
        return lambda b, l: strategy.grid.interp(strategy.policy[l - 1], b)
    if getattr(strategy, "player", None) == DEFENDER:
        lo, hi = p1_floor, 1.0 - p1_floor
        return lambda b, l: strategy.defender_stop_prob(l, np.clip(b, lo, hi))
    raise TypeError(f"cannot interpret {type(strategy).__name__} as a defender map")


def bind_attacker(
    attacker,
    defender,
    p1_floor: float = DEFAULT_P1_FLOOR,
    q_floor: float = DEFAULT_Q_FLOOR,
) -> AttackerMap:
    """Close an attacker strategy over the defender it reacts to.

    Threshold attackers gate on the defender's stop probability; the
    bound map evaluates that probability at each belief and applies the
    same input and output clamps as the simulation adapters, so the
    result is a self-contained behavioral strategy usable as a filter
    model or as the environment inside a best-response computation.
    """
    if callable(attacker) and not isinstance(attacker, (ThresholdStrategy, MixedStrategy)):
        return attacker
    dmap = defender_map(defender, p1_floor)

    def bound(s, b, l):
        p1 = np.clip(dmap(np.asarray(b, dtype=float), l), p1_floor, 1.0 - p1_floor)
        return np.clip(attacker.attacker_stop_prob(l, s, p1), q_floor, 1.0 - q_floor)

    return bound


@dataclass
class ExploitabilityReport:
    value: float
    defender_br_value: float
    attacker_br_value: float
    defender_br: BeliefGridSolution
    attacker_br: BeliefGridSolution

    @property
    def converged(self) -> bool:
        return self.defender_br.converged and self.attacker_br.converged


def exploitability_report(
    pi1,
    pi2,
    cfg: GameConfig,
    grid: BeliefGrid,
    *,
    tol: float = 1e-6,
    max_sweeps: int = 10_000,
    p1_floor: float = DEFAULT_P1_FLOOR,
    q_floor: float = DEFAULT_Q_FLOOR,
    warm_defender: np.ndarray | None = None,
    warm_attacker: np.ndarray | None = None,
) -> ExploitabilityReport:
    """Best-response values of both deviators at the initial point.

    The attacker strategy is bound to the public defender strategy
    before anything is solved; the same bound behavioral strategy then
    serves as the defender-side environment and as the filter model on
    the attacker side, so neither best response can influence the
    defender's belief through its own deviation.
    """
    dmap = defender_map(pi1, p1_floor)
    pi2_bound = bind_attacker(pi2, dmap, p1_floor, q_floor)
    dsol = defender_best_response_vi(
        pi2_bound, cfg, grid, tol=tol, max_sweeps=max_sweeps, v0=warm_defender
    )
    asol = attacker_best_response_vi(
        dmap, pi2_bound, cfg, grid, tol=tol, max_sweeps=max_sweeps, v0=warm_attacker
    )
    j1 = dsol.value_at(cfg.L, 0.0)
    j2 = asol.value_at(cfg.L, 0.0, s=NO_INTRUSION)
    return ExploitabilityReport(
        value=j1 + j2,
        defender_br_value=j1,
        attacker_br_value=j2,
        defender_br=dsol,
        attacker_br=asol,
    )


def exploitability(
    pi1,
    pi2,
    cfg: GameConfig,
    grid: BeliefGrid,
    tol: float = 1e-6,
    **kwargs,
) -> float:
    """Sum of both best-response gains; zero exactly at equilibrium."""
    return exploitability_report(pi1, pi2, cfg, grid, tol=tol, **kwargs).value


# Exact small MDPs for baseline defenders ------------------------------------


def attacker_br_vs_alert_defender(cfg: GameConfig, *, tol: float = 1e-10, max_iters: int = 200_000):
    """Attacker best-response value against the alert-triggered defender.

    The defender stops exactly when the current observation shows an
    alert, so its action is a function of the observation class d in
    {no alert, alert} and the attacker faces an exact finite MDP over
    (state, class, stops remaining).  Returns the attacker value at the
    start of an episode and the (value, policy) tables.
    """
    n0 = float(cfg.obs.pmf0[0])
    n1 = float(cfg.obs.pmf1[0])
    p_class = np.array([[n0, 1 - n0], [n1, 1 - n1]])  # P(class | next state)
    V = np.zeros((2, 2, cfg.L + 1))  # V[s, d, l]; l = 0 column stays 0
    for _ in range(max_iters):
        Vn = np.zeros_like(V)
        for s in (NO_INTRUSION, INTRUSION):
            for d in (0, 1):
                a1 = STOP if d else CONTINUE
                for l in range(1, cfg.L + 1):
                    lp = l - a1
                    best = -math.inf
                    for a2 in (CONTINUE, STOP):
                        r = -reward(s, l, (a1, a2), cfg)
                        cont = 0.0
                        if lp > 0:
                            for sn in (NO_INTRUSION, INTRUSION):
                                tp = transition_prob(sn, s, l, (a1, a2), cfg)
                                if tp:
                                    cont += tp * (
                                        p_class[sn, 0] * V[sn, 0, lp]
                                        + p_class[sn, 1] * V[sn, 1, lp]
                                    )
                        best = max(best, r + cfg.gamma * cont)
                    Vn[s, d, l] = best
        if np.max(np.abs(Vn - V)) <= tol:
            V = Vn
            break
        V = Vn
    start = p_class[NO_INTRUSION, 0] * V[NO_INTRUSION, 0, cfg.L] + p_class[
        NO_INTRUSION, 1
    ] * V[NO_INTRUSION, 1, cfg.L]
    return float(start), V


def attacker_br_vs_oracle_defender(cfg: GameConfig, *, tol: float = 1e-10, max_iters: int = 200_000):
    """Attacker best-response value against the intrusion-time oracle."""
    V = np.zeros((2, cfg.L + 1))
    for _ in range(max_iters):
        Vn = np.zeros_like(V)
        for s in (NO_INTRUSION, INTRUSION):
            a1 = STOP if s == INTRUSION else CONTINUE
            for l in range(1, cfg.L + 1):
                lp = l - a1
                best = -math.inf
                for a2 in (CONTINUE, STOP):
                    r = -reward(s, l, (a1, a2), cfg)
                    cont = 0.0
                    if lp > 0:
                        for sn in (NO_INTRUSION, INTRUSION):
                            tp = transition_prob(sn, s, l, (a1, a2), cfg)
                            if tp:
                                cont += tp * V[sn, lp]
                    best = max(best, r + cfg.gamma * cont)
                Vn[s, l] = best
        if np.max(np.abs(Vn - V)) <= tol:
            V = Vn
            break
        V = Vn
    return float(V[NO_INTRUSION, cfg.L]), V


class GridAttackerPolicy(AttackerPolicy):
    """Greedy play of an attacker best-response solution in simulation."""

    def __init__(self, solution: BeliefGridSolution):
        if solution.player != ATTACKER or solution.margin is None:
            raise ValueError("need an attacker best-response solution")
        self.solution = solution

    def stop_prob(self, s, b1, l, p1, o):
        m = self.solution.grid.interp(self.solution.margin[s, l - 1], b1)
        return 1.0 if m > 0 else 0.0

    def stop_prob_batch(self, s, b1, l, p1, o):
        s = np.asarray(s)
        l = np.asarray(l)
        b1 = np.asarray(b1, dtype=float)
        out = np.zeros(np.broadcast(s, l, b1).shape)
        for sv in (NO_INTRUSION, INTRUSION):
            for lv in np.unique(l):
                if lv < 1:
                    continue
                mask = (s == sv) & (l == lv)
                if mask.any():
                    m = self.solution.grid.interp(self.solution.margin[sv, lv - 1], b1[mask])
                    out[mask] = (m > 0).astype(float)
        return out


# Structural checks -----------------------------------------------------------


@dataclass
class Tp2Report:
    passed: bool
    violating_minors: int
    worst_minor: float


def check_tp2(model: ObservationModel, tol: float = 0.0) -> Tp2Report:
    """Nonnegativity of all 2x2 minors of the stacked pmf matrix."""
    p0, p1 = model.pmf0, model.pmf1
    n = model.alphabet_size
    worst = 0.0
    count = 0
    for i in range(n - 1):
        d = p0[i] * p1[i + 1 :] - p0[i + 1 :] * p1[i]
        mn = float(d.min())
        worst = min(worst, mn)
        count += int((d < -tol).sum())
    return Tp2Report(passed=count == 0, violating_minors=count, worst_minor=worst)


@dataclass
class StructureReport:
    passed: bool
    thresholds: dict
    violations: list[str] = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_json(self) -> str:
        def clean(x):
            if isinstance(x, np.ndarray):
                return x.tolist()
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            if isinstance(x, (list, tuple)):
                return [clean(v) for v in x]
            if isinstance(x, (np.floating, np.integer)):
                return x.item()
            return x

        return json.dumps(
            {
                "pass": self.passed,
                "thresholds": clean(self.thresholds),
                "violations": self.violations,
                "details": clean(self.details),
            },
            sort_keys=True,
        )


def check_threshold_structure(
    solution: BeliefGridSolution, margin_tol: float = 1e-4
) -> StructureReport:
    """Verify a defender best response is a monotone threshold policy.

    For each l the decisive stop region must be an upper belief interval
    (no stop below a higher continue), and the extracted thresholds must
    decrease with l within one grid cell.  Cells whose stop/continue
    margin is within ``margin_tol`` are numerically indifferent and do
    not count against either pattern.
    """
    if solution.player != DEFENDER or solution.margin is None:
        raise ValueError("need a defender best-response solution")
    g = solution.grid.points
    cell = solution.grid.cell
    violations: list[str] = []
    alphas = np.full(solution.values.shape[0], math.inf)
    for li, (pol, mar) in enumerate(zip(solution.policy, solution.margin)):
        decisive = np.abs(mar) > margin_tol
        stop = pol > 0.5
        ds = np.flatnonzero(decisive & stop)
        dc = np.flatnonzero(decisive & ~stop)
        if ds.size:
            alphas[li] = g[ds.min()]
        if ds.size and dc.size and ds.min() < dc.max():
            bad = [i for i in ds if i < dc.max()]
            violations.append(
                f"l={li + 1}: stop region is not an upper interval "
                f"(stops at b={g[bad[0]]:.4f} below a continue at b={g[dc.max()]:.4f})"
            )
    for li in range(len(alphas) - 1):
        if alphas[li] + cell + 1e-12 < alphas[li + 1]:
            violations.append(
                f"thresholds not monotone: alpha_{li + 1}={alphas[li]:.4f} < "
                f"alpha_{li + 2}={alphas[li + 1]:.4f} beyond one grid cell"
            )
    return StructureReport(
        passed=not violations,
        thresholds={"alpha": alphas},
        violations=violations,
        details={"margin_tol": margin_tol},
    )


def check_attacker_structure(
    solution: BeliefGridSolution,
    pi1: DefenderMap,
    margin_tol: float = 1e-4,
    lemma_value_tol: float = 1e-6,
) -> StructureReport:
    """Verify attacker best-response structure against a monotone defender.

    Requires pi1 nondecreasing in the belief with pi1(1) = 1.  Checks,
    per l: the state-0 continue region and the state-1 stop region are
    upper intervals in the defender's stop probability; values are
    nonnegative up to ``lemma_value_tol``; and wherever state 1 stops
    decisively, state 0 does not.
    """
    if solution.player != ATTACKER or solution.margin is None:
        raise ValueError("need an attacker best-response solution")
    g = solution.grid.points
    L = solution.values.shape[1]
    violations: list[str] = []
    beta0 = np.full(L, math.inf)
    beta1 = np.full(L, math.inf)
    for li in range(L):
        p1 = np.asarray(pi1(g, li + 1), dtype=float)
        if np.any(np.diff(p1) < -1e-12):
            raise ValueError("pi1 must be nondecreasing in the belief")
        if abs(p1[-1] - 1.0) > 1e-9:
            raise ValueError("pi1 must stop with probability 1 at b = 1")
        for s, want_upper_stop in ((NO_INTRUSION, False), (INTRUSION, True)):
            mar = solution.margin[s, li]
            pol = solution.policy[s, li] > 0.5
            decisive = np.abs(mar) > margin_tol
            upper = pol if want_upper_stop else ~pol  # region claimed to be upper
            d_up = np.flatnonzero(decisive & upper)
            d_lo = np.flatnonzero(decisive & ~upper)
            if d_up.size:
                (beta1 if want_upper_stop else beta0)[li] = p1[d_up.min()]
            if d_up.size and d_lo.size:
                worst_lo = p1[d_lo].max()
                bad = d_up[p1[d_up] < worst_lo - 1e-12]
                if bad.size:
                    kind = "stop" if want_upper_stop else "continue"
                    violations.append(
                        f"l={li + 1}, s={s}: {kind} region not an upper interval in "
                        f"pi1 (cell b={g[bad[0]]:.4f})"
                    )
        both = (
            (solution.margin[INTRUSION, li] > margin_tol)
            & (solution.margin[NO_INTRUSION, li] > margin_tol)
        )
        if both.any():
            violations.append(
                f"l={li + 1}: states 0 and 1 both stop decisively at "
                f"b={g[np.flatnonzero(both)[0]]:.4f}"
            )
    vmin = float(solution.values.min())
    if vmin < -lemma_value_tol:
        violations.append(f"attacker value {vmin:.3e} below -{lemma_value_tol:.0e}")
    return StructureReport(
        passed=not violations,
        thresholds={"beta0": beta0, "beta1": beta1},
        violations=violations,
        details={"min_value": vmin, "margin_tol": margin_tol},
    )


# CSV export ------------------------------------------------------------------


def write_value_csv(solution: BeliefGridSolution, path) -> None:
    """Rows ``l,b,V`` (defender/minimax) or ``s,l,b,V`` (attacker)."""
    g = solution.grid.points
    with open(path, "w") as f:
        if solution.values.ndim == 2:
            f.write("l,b,V\n")
            for li, row in enumerate(solution.values, start=1):
                for b, v in zip(g, row):
                    f.write(f"{li},{b!r},{v!r}\n")
        else:
            f.write("s,l,b,V\n")
            for s in (0, 1):
                for li, row in enumerate(solution.values[s], start=1):
                    for b, v in zip(g, row):
                        f.write(f"{s},{li},{b!r},{v!r}\n")


def write_policy_csv(solution: BeliefGridSolution, path) -> None:
    """Rows ``s,l,b,stop_prob``; s is -1 for defender policies."""
    g = solution.grid.points
    with open(path, "w") as f:
        f.write("s,l,b,stop_prob\n")
        if solution.policy.ndim == 2:
            for li, row in enumerate(solution.policy, start=1):
                for b, v in zip(g, row):
                    f.write(f"-1,{li},{b!r},{v!r}\n")
        else:
            for s in (0, 1):
                for li, row in enumerate(solution.policy[s], start=1):
                    for b, v in zip(g, row):
                        f.write(f"{s},{li},{b!r},{v!r}\n")
