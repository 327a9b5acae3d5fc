"""Solver suite for a zero-sum optimal-stopping intrusion game."""

from .game import (
    CONTINUE,
    EpisodeTrace,
    FilterDegenerateError,
    GameConfig,
    INTRUSION,
    NO_INTRUSION,
    ObservationModel,
    STOP,
    TERMINAL,
    belief_update,
    half_inverse_phi,
    reward,
    sample_step,
    simulate_batch,
    simulate_episode,
    transition_prob,
    transition_row,
)
from .strategies import (
    ATTACKER,
    DEFENDER,
    MixedStrategy,
    ThresholdStrategy,
    attacker_stop_prob,
    baseline_defender_action,
    defender_stop_prob,
    mixed_action_prob,
    random_threshold_strategy,
    smooth_gate,
)
from .evaluator import (
    BeliefGrid,
    BeliefGridSolution,
    attacker_best_response_vi,
    bind_attacker,
    check_attacker_structure,
    check_threshold_structure,
    check_tp2,
    defender_best_response_vi,
    exploitability,
    exploitability_report,
    minimax_value_iteration,
    policy_value_vi,
    solve_stage_game,
)
from .tfp import EvalConfig, SpsaConfig, TfpState, learn_best_response, run_tfp, spsa_gradient
from .obsmodel import (
    Gmm1D,
    TraceDataset,
    discretize,
    em_fit,
    fit_observation_model,
    ingest_trace,
)
from . import presets

__version__ = "0.1.0"
