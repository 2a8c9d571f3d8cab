"""Age-of-information scheduling for two-hop device -> relay -> base-station networks.

The package provides a slotted-time simulator of lossy two-hop networks,
classic AoI baseline schedulers, a gym-style episodic environment, a small
numpy neural-network core, a vote-based PPO scheduler with a linear action
interface, and an experiment harness with a command-line front end.
"""

from relaysched.baselines import (
    RoundRobinState,
    maf,
    maf_mad,
    random_sched,
    round_robin,
)
from relaysched.config import ConfigError, ScenarioConfig, apply_mode, parse_scenario
from relaysched.env import AoiEnv, EpisodeDone, encode_observation
from relaysched.harness import (
    ExperimentSpec,
    ResultRow,
    analyze_action_space,
    iterations_to_converge,
    perturb_topology,
    run_episode,
    run_eval,
    run_stack_study,
    run_sweep,
    run_trace,
    run_transfer,
    topology_for,
)
from relaysched.nets import Adam, Mlp
from relaysched.network import (
    Action,
    AoiSnapshot,
    ConstraintViolation,
    GenerateAtWill,
    NetState,
    Periodic,
    StepOutcome,
    Topology,
    action_space_cardinality,
    apply_outcomes,
    average_aoi,
    build_topology,
    latest_generation,
    snapshot_of,
    step_dynamics,
)
from relaysched.vppo import (
    PolicyParams,
    TrainConfig,
    TrainingDiverged,
    act,
    decode_votes,
    evaluate_policy,
    init_policy,
    load_policy,
    save_policy,
    train,
    transfer_init,
)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "Adam",
    "AoiEnv",
    "AoiSnapshot",
    "ConfigError",
    "ConstraintViolation",
    "EpisodeDone",
    "ExperimentSpec",
    "GenerateAtWill",
    "Mlp",
    "NetState",
    "Periodic",
    "PolicyParams",
    "ResultRow",
    "RoundRobinState",
    "ScenarioConfig",
    "StepOutcome",
    "Topology",
    "TrainConfig",
    "TrainingDiverged",
    "act",
    "action_space_cardinality",
    "analyze_action_space",
    "apply_mode",
    "apply_outcomes",
    "average_aoi",
    "build_topology",
    "decode_votes",
    "encode_observation",
    "evaluate_policy",
    "init_policy",
    "iterations_to_converge",
    "latest_generation",
    "load_policy",
    "maf",
    "maf_mad",
    "parse_scenario",
    "perturb_topology",
    "random_sched",
    "round_robin",
    "run_episode",
    "run_eval",
    "run_stack_study",
    "run_sweep",
    "run_trace",
    "run_transfer",
    "save_policy",
    "snapshot_of",
    "step_dynamics",
    "topology_for",
    "train",
    "transfer_init",
    "__version__",
]
