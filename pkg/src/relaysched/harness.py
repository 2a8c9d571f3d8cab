"""Experiment orchestration: seeded evaluations, parameter sweeps, transfer
and stack studies, action-space analysis, and CSV/manifest emission.

Everything here is deterministic given the experiment seeds: environment
randomness is keyed by (seed, episode), topology draws by the scenario seed,
and training by the trainer's own seed.  The only nondeterministic output
field is the wall-time column, which is why comparisons strip it.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import time
from dataclasses import dataclass

import numpy as np

from relaysched.baselines import RoundRobinState, maf, maf_mad, random_sched, round_robin
from relaysched.config import MODES, ScenarioConfig, apply_mode, parse_scenario
from relaysched.env import AoiEnv
from relaysched.network import (
    Action,
    GenerateAtWill,
    Periodic,
    Topology,
    build_topology,
)
from relaysched.network import action_space_cardinality
from relaysched.vppo import (
    PolicyParams,
    TrainConfig,
    act,
    evaluate_policy,
    train,
    transfer_init,
)

__all__ = [
    "ExperimentSpec",
    "ResultRow",
    "RESULT_COLUMNS",
    "TRAINING_LOG_COLUMNS",
    "TRACE_COLUMNS",
    "SCHEDULERS",
    "PERTURB_KINDS",
    "analyze_action_space",
    "iterations_to_converge",
    "make_decider",
    "perturb_topology",
    "run_episode",
    "run_eval",
    "run_stack_study",
    "run_sweep",
    "run_trace",
    "run_transfer",
    "scenario_payload",
    "spec_from_config",
    "summarize_rows",
    "topology_for",
    "training_env_factory",
    "write_manifest",
    "write_results_csv",
    "write_trace_csv",
    "write_training_log",
]

SCHEDULERS = ("maf_mad", "maf", "rr", "random", "vppo")
SWEEP_VARS = ("M", "N", "L", "K", "z")
PERTURB_KINDS = ("channels", "periodicity")

RESULT_COLUMNS = [
    "scheduler",
    "seed",
    "sweep_var",
    "sweep_value",
    "episodes",
    "mean_aoi_relay",
    "min_aoi_relay",
    "max_aoi_relay",
    "mean_aoi_tbs",
    "min_aoi_tbs",
    "max_aoi_tbs",
    "wall_time_s",  # keep last: the one nondeterministic column
]
TRAINING_LOG_COLUMNS = [
    "iteration",
    "episodes_seen",
    "mean_reward",
    "mean_aoi_tbs",
    "mean_aoi_relay",
    "actor_loss",
    "critic_loss",
    "entropy",
]
TRACE_COLUMNS = [
    "slot",
    "device",
    "aoi_relay",
    "aoi_tbs",
    "sampled",
    "updated",
    "sample_lost",
    "update_lost",
]


# ---------------------------------------------------------------------------
# experiment description


@dataclass(frozen=True)
class ExperimentSpec:
    """A resolved experiment: scenario, scheduler, seeds, and run sizes."""

    scenario: ScenarioConfig
    scheduler: str
    seeds: tuple[int, ...] = (0,)
    episodes: int = 200
    mode: str = "practical"
    sweep_var: str | None = None
    sweep_values: tuple = ()
    z: int = 4
    out_dir: str | None = None
    config_path: str | None = None

    def __post_init__(self):
        if self.scheduler not in SCHEDULERS:
            raise ValueError(f"scheduler must be one of {SCHEDULERS}, got {self.scheduler!r}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.sweep_var is not None and self.sweep_var not in SWEEP_VARS:
            raise ValueError(f"sweep variable must be one of {SWEEP_VARS}")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.episodes < 1:
            raise ValueError("episode count must be positive")

    @property
    def horizon(self) -> int:
        return self.scenario.T


def spec_from_config(path, mode: str, **fields) -> ExperimentSpec:
    """Load a scenario file and resolve it to the requested environment mode."""
    scenario = apply_mode(parse_scenario(path), mode)
    return ExperimentSpec(
        scenario=scenario, mode=mode, config_path=str(path), **fields
    )


def topology_for(scenario: ScenarioConfig) -> Topology:
    """Deterministic topology draw keyed by the scenario seed."""
    return build_topology(
        scenario, np.random.default_rng(np.random.SeedSequence(scenario.seed))
    )


# ---------------------------------------------------------------------------
# per-result aggregation


@dataclass(frozen=True)
class ResultRow:
    scheduler: str
    seed: int
    sweep_var: str
    sweep_value: str
    episodes: int
    mean_aoi_relay: float
    min_aoi_relay: float
    max_aoi_relay: float
    mean_aoi_tbs: float
    min_aoi_tbs: float
    max_aoi_tbs: float
    wall_time_s: float

    def as_record(self) -> list[str]:
        return [
            self.scheduler,
            str(self.seed),
            self.sweep_var,
            self.sweep_value,
            str(self.episodes),
            _fmt(self.mean_aoi_relay),
            _fmt(self.min_aoi_relay),
            _fmt(self.max_aoi_relay),
            _fmt(self.mean_aoi_tbs),
            _fmt(self.min_aoi_tbs),
            _fmt(self.max_aoi_tbs),
            f"{self.wall_time_s:.3f}",
        ]


def _fmt(x: float) -> str:
    return f"{float(x):.12g}"


def summarize_rows(
    scheduler: str,
    seed: int,
    relay: np.ndarray,
    tbs: np.ndarray,
    sweep_var: str = "",
    sweep_value: str = "",
    wall_time_s: float = 0.0,
) -> ResultRow:
    """Collapse per-episode means into one result row."""
    return ResultRow(
        scheduler=scheduler,
        seed=seed,
        sweep_var=sweep_var,
        sweep_value=sweep_value,
        episodes=len(tbs),
        mean_aoi_relay=float(np.mean(relay)),
        min_aoi_relay=float(np.min(relay)),
        max_aoi_relay=float(np.max(relay)),
        mean_aoi_tbs=float(np.mean(tbs)),
        min_aoi_tbs=float(np.min(tbs)),
        max_aoi_tbs=float(np.max(tbs)),
        wall_time_s=wall_time_s,
    )


# ---------------------------------------------------------------------------
# scheduler deciders: uniform reset()/decide(snapshot, observation) interface


class MafMadDecider:
    name = "maf_mad"

    def __init__(self, topo: Topology):
        self.topo = topo

    def reset(self) -> None:
        pass

    def decide(self, snap, obs) -> Action:
        return maf_mad(snap, self.topo)


class MafDecider:
    name = "maf"

    def __init__(self, topo: Topology):
        self.topo = topo

    def reset(self) -> None:
        pass

    def decide(self, snap, obs) -> Action:
        return maf(snap, self.topo)


class RoundRobinDecider:
    name = "rr"

    def __init__(self, topo: Topology):
        self.topo = topo
        self.state = RoundRobinState.fresh(topo)

    def reset(self) -> None:
        self.state = RoundRobinState.fresh(self.topo)

    def decide(self, snap, obs) -> Action:
        action, self.state = round_robin(self.state, self.topo)
        return action


class RandomDecider:
    name = "random"

    def __init__(self, topo: Topology, seed: int = 0):
        self.topo = topo
        self._rng = np.random.default_rng(np.random.SeedSequence((seed, 2)))

    def reset(self) -> None:
        pass  # the stream keeps advancing so episodes explore different draws

    def decide(self, snap, obs) -> Action:
        return random_sched(self.topo, self._rng)


class PolicyDecider:
    name = "vppo"

    def __init__(self, policy: PolicyParams, topo: Topology):
        self.policy = policy
        self.topo = topo

    def reset(self) -> None:
        pass

    def decide(self, snap, obs) -> Action:
        action, _, _ = act(self.policy, self.topo, obs, deterministic=True)
        return action


def make_decider(scheduler: str, topo: Topology, seed: int = 0, policy=None):
    if scheduler == "maf_mad":
        return MafMadDecider(topo)
    if scheduler == "maf":
        return MafDecider(topo)
    if scheduler == "rr":
        return RoundRobinDecider(topo)
    if scheduler == "random":
        return RandomDecider(topo, seed)
    if scheduler == "vppo":
        if policy is None:
            raise ValueError("the trained scheduler needs a policy checkpoint")
        return PolicyDecider(policy, topo)
    raise ValueError(f"unknown scheduler {scheduler!r}")


# ---------------------------------------------------------------------------
# episode drivers


def run_episode(env: AoiEnv, decider) -> tuple[float, float]:
    """One full episode; returns (mean relay AoI, mean TBS AoI)."""
    obs = env.reset()
    decider.reset()
    relay_sum = 0.0
    tbs_sum = 0.0
    done = False
    while not done:
        action = decider.decide(env.current_snapshot(), obs)
        obs, _reward, done, info = env.step(action)
        snap = info["snapshot"]
        relay_sum += float(np.mean(snap.aoi_relay))
        tbs_sum += float(np.mean(snap.aoi_tbs))
    return relay_sum / env.horizon, tbs_sum / env.horizon


def run_trace(env: AoiEnv, decider) -> list[dict]:
    """Per-slot, per-device log of one episode.

    Each decision slot t contributes M rows carrying the ages seen when the
    decision was taken plus that slot's link outcomes; the closing row block
    at t = horizon+1 reports the final ages with all outcome flags zero.
    """
    obs = env.reset()
    decider.reset()
    rows: list[dict] = []
    done = False
    while not done:
        snap = env.current_snapshot()
        action = decider.decide(snap, obs)
        obs, _reward, done, info = env.step(action)
        out = info["outcome"]
        for m in range(env.topo.M):
            rows.append(
                {
                    "slot": snap.t,
                    "device": m,
                    "aoi_relay": int(snap.aoi_relay[m]),
                    "aoi_tbs": int(snap.aoi_tbs[m]),
                    "sampled": int(out.sampled[m]),
                    "updated": int(out.updated[m]),
                    "sample_lost": int(out.sample_lost[m]),
                    "update_lost": int(out.update_lost[m]),
                }
            )
    final = env.current_snapshot()
    for m in range(env.topo.M):
        rows.append(
            {
                "slot": final.t,
                "device": m,
                "aoi_relay": int(final.aoi_relay[m]),
                "aoi_tbs": int(final.aoi_tbs[m]),
                "sampled": 0,
                "updated": 0,
                "sample_lost": 0,
                "update_lost": 0,
            }
        )
    return rows


def _episode_env(topo, z, horizon, seed, episode) -> AoiEnv:
    return AoiEnv(
        topo, z=z, horizon=horizon, seed=np.random.SeedSequence((seed, episode))
    )


def _eval_cell(
    topo: Topology,
    scheduler: str,
    seed: int,
    episodes: int,
    z: int,
    horizon: int,
    policy=None,
):
    """Per-episode (relay, tbs) means for one (scheduler, seed) cell.

    The trained policy runs its episodes in lockstep; both paths draw the
    same per-episode environment seeds, so schedulers face identical
    channel/traffic randomness.
    """
    if scheduler == "vppo":
        if policy is None:
            raise ValueError("the trained scheduler needs a policy checkpoint")
        return evaluate_policy(policy, topo, episodes, seed)
    decider = make_decider(scheduler, topo, seed)
    relay = np.zeros(episodes)
    tbs = np.zeros(episodes)
    for e in range(episodes):
        env = _episode_env(topo, z, horizon, seed, e)
        relay[e], tbs[e] = run_episode(env, decider)
    return relay, tbs


def run_eval(
    spec: ExperimentSpec,
    scheduler: str | None = None,
    policy=None,
    topo: Topology | None = None,
    sweep_var: str = "",
    sweep_value: str = "",
) -> list[ResultRow]:
    """One result row per seed for the given scheduler on the experiment's scenario."""
    scheduler = scheduler or spec.scheduler
    if topo is None:
        topo = topology_for(spec.scenario)
    rows = []
    for seed in spec.seeds:
        start = time.perf_counter()
        relay, tbs = _eval_cell(
            topo, scheduler, seed, spec.episodes, spec.z, spec.horizon, policy
        )
        rows.append(
            summarize_rows(
                scheduler,
                seed,
                relay,
                tbs,
                sweep_var=sweep_var,
                sweep_value=sweep_value,
                wall_time_s=time.perf_counter() - start,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# sweeps


def run_sweep(spec: ExperimentSpec, policy=None) -> list[ResultRow]:
    """run_eval at every sweep point of one topology variable (M, N, L, or K).

    Infeasible points (for instance N > M) raise; sweeping M under the
    trained scheduler raises because the policy's input width is tied to the
    device count.  Stack-size sweeps live in run_stack_study, which retrains
    per z.
    """
    if spec.sweep_var is None or not spec.sweep_values:
        raise ValueError("sweep needs a variable and at least one value")
    if spec.sweep_var == "z":
        raise ValueError("stack-size sweeps retrain the policy: use run_stack_study")
    if spec.scheduler == "vppo" and spec.sweep_var == "M":
        raise ValueError(
            "the trained scheduler's input width is fixed by the device count; "
            "sweep N, L, or K instead, or retrain per point"
        )
    rows = []
    for value in spec.sweep_values:
        changes: dict = {spec.sweep_var: int(value)}
        if spec.sweep_var in ("M", "N"):
            # per-relay grouping no longer fits the new counts
            changes["groups"] = None
        if spec.sweep_var == "M":
            # per-device pins have the old length; fall back to ranges/sets
            changes.update(loss_sample=None, loss_update=None, periodicity=None)
        scenario = apply_mode(spec.scenario.replace(**changes), spec.mode)
        topo = topology_for(scenario)
        rows.extend(
            run_eval(
                dataclasses.replace(spec, scenario=scenario),
                policy=policy,
                topo=topo,
                sweep_var=spec.sweep_var,
                sweep_value=str(int(value)),
            )
        )
    return rows


# ---------------------------------------------------------------------------
# training helpers


def training_env_factory(topo: Topology, z: int, horizon: int, seed: int):
    """Rollout-environment maker for the trainer; episode streams are keyed
    (seed, 1, index) so they never collide with evaluation's (seed, index)."""

    def make(i: int) -> AoiEnv:
        return AoiEnv(
            topo, z=z, horizon=horizon, seed=np.random.SeedSequence((seed, 1, i))
        )

    return make


def run_stack_study(
    scenario: ScenarioConfig, z_values, train_cfg: TrainConfig
) -> dict[int, tuple[PolicyParams, list[dict]]]:
    """Train one policy per observation stack depth on a shared topology."""
    topo = topology_for(scenario)
    out = {}
    for z in z_values:
        z = int(z)
        cfg = dataclasses.replace(train_cfg, z=z)
        policy, rows = train(
            training_env_factory(topo, z, scenario.T, cfg.seed), cfg
        )
        out[z] = (policy, rows)
    return out


# ---------------------------------------------------------------------------
# transfer study


_PERTURB_TAG = {"channels": 3, "periodicity": 36}
_MODE_TAG = {"uninitialized": 5, "explore": 6, "adapt": 7}


def perturb_topology(
    topo: Topology,
    kind: str,
    rng: np.random.Generator,
    loss_range: tuple[float, float] = (0.05, 0.5),
    period_set=(1, 2, 3, 4, 5),
) -> tuple[Topology, tuple[int, ...]]:
    """Re-draw conditions for ceil(10% of M) seeded-chosen devices.

    kind="channels" re-samples both loss probabilities of each chosen device
    from loss_range; kind="periodicity" re-draws its generation period from
    period_set excluding the device's current value, so the period is
    guaranteed to actually change (all traffic must already be periodic).
    Returns the new topology and the changed device indices.
    """
    if kind not in PERTURB_KINDS:
        raise ValueError(f"kind must be one of {PERTURB_KINDS}, got {kind!r}")
    n_changed = math.ceil(0.1 * topo.M)
    devices = np.sort(rng.choice(topo.M, size=n_changed, replace=False))
    if kind == "channels":
        loss_sample = topo.loss_sample.copy()
        loss_update = topo.loss_update.copy()
        for m in devices:
            loss_sample[m] = rng.uniform(*loss_range)
            loss_update[m] = rng.uniform(*loss_range)
        new = dataclasses.replace(
            topo, loss_sample=loss_sample, loss_update=loss_update
        )
    else:
        if any(isinstance(tr, GenerateAtWill) for tr in topo.traffic):
            raise ValueError(
                "periodicity perturbation needs periodic traffic on every device"
            )
        traffic = list(topo.traffic)
        for m in devices:
            candidates = [int(p) for p in period_set if int(p) != traffic[m].period]
            if not candidates:
                raise ValueError(
                    f"cannot change device {m}'s period: every value in "
                    f"{tuple(period_set)} equals its current period"
                )
            traffic[m] = Periodic(int(rng.choice(candidates)))
        new = dataclasses.replace(topo, traffic=tuple(traffic))
    return new, tuple(int(m) for m in devices)


def run_transfer(
    spec: ExperimentSpec,
    pretrained: PolicyParams | None,
    mode: str,
    kind: str,
    train_cfg: TrainConfig,
):
    """Perturb the scenario's topology, warm-start per `mode`, and retrain.

    Returns (policy, log_rows, perturbed_topology, changed_devices).  The
    perturbation draw is keyed by (scenario seed, kind) so every mode trains
    against the identical changed network.
    """
    if mode != "uninitialized" and pretrained is None:
        raise ValueError(f"transfer mode {mode!r} needs a pretrained policy")
    topo = topology_for(spec.scenario)
    perturb_rng = np.random.default_rng(
        np.random.SeedSequence((spec.scenario.seed, _PERTURB_TAG[kind]))
    )
    topo_new, changed = perturb_topology(
        topo,
        kind,
        perturb_rng,
        loss_range=spec.scenario.loss_sample_range,
        period_set=spec.scenario.periodicity_set,
    )
    if pretrained is not None:
        initial = transfer_init(
            pretrained,
            mode,
            np.random.default_rng(
                np.random.SeedSequence((train_cfg.seed, _MODE_TAG[mode]))
            ),
        )
    else:
        initial = None  # fresh start inside train()
    policy, rows = train(
        training_env_factory(topo_new, train_cfg.z, spec.horizon, train_cfg.seed),
        train_cfg,
        initial_policy=initial,
    )
    return policy, rows, topo_new, changed


def iterations_to_converge(curve, rel_tol: float = 0.05) -> int:
    """First iteration whose AoI is within rel_tol of the final level.

    The final level is the mean of the last tenth of the curve (at least one
    point).  Ages are positive and lower is better, so convergence means
    dropping to <= level * (1 + rel_tol).
    """
    curve = np.asarray(list(curve), dtype=np.float64)
    if curve.size == 0:
        raise ValueError("empty learning curve")
    tail = curve[-max(1, curve.size // 10):]
    level = float(np.mean(tail))
    hits = np.nonzero(curve <= level * (1.0 + rel_tol))[0]
    return int(hits[0]) + 1 if hits.size else curve.size


# ---------------------------------------------------------------------------
# action-space analysis


def analyze_action_space(points) -> list[dict]:
    """Exact combinatorial vs linear action counts for (M, N, L, K) tuples."""
    rows = []
    for M, N, L, K in points:
        base, extra = divmod(M, N)
        groups, start = [], 0
        for n in range(N):
            size = base + (1 if n < extra else 0)
            groups.append(tuple(range(start, start + size)))
            start += size
        topo = Topology(
            M=M,
            N=N,
            L=L,
            K=K,
            groups=tuple(groups),
            loss_sample=np.zeros(M),
            loss_update=np.zeros(M),
            traffic=tuple(GenerateAtWill() for _ in range(M)),
        )
        combinatorial, linear = action_space_cardinality(topo)
        rows.append(
            {
                "M": M,
                "N": N,
                "L": L,
                "K": K,
                "combinatorial": combinatorial,
                "linear": linear,
            }
        )
    return rows


# ---------------------------------------------------------------------------
# file emission


def write_results_csv(path, rows: list[ResultRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for row in rows:
            writer.writerow(row.as_record())


def write_training_log(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAINING_LOG_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    str(row["iteration"]),
                    str(row["episodes_seen"]),
                    _fmt(row["mean_reward"]),
                    _fmt(row["mean_aoi_tbs"]),
                    _fmt(row["mean_aoi_relay"]),
                    _fmt(row["actor_loss"]),
                    _fmt(row["critic_loss"]),
                    _fmt(row["entropy"]),
                ]
            )


def write_trace_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRACE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


def write_manifest(path, payload: dict) -> None:
    """Machine-readable run record: resolved config, seeds, outputs."""
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def scenario_payload(scenario: ScenarioConfig, topo: Topology | None = None) -> dict:
    """JSON-friendly dump of a scenario and (optionally) its drawn topology."""
    payload = dataclasses.asdict(scenario)
    if topo is not None:
        payload["topology"] = {
            "groups": [list(g) for g in topo.groups],
            "loss_sample": [float(x) for x in topo.loss_sample],
            "loss_update": [float(x) for x in topo.loss_update],
            "traffic": [
                {"model": "generate_at_will"}
                if isinstance(tr, GenerateAtWill)
                else {"model": "periodic", "period": tr.period}
                for tr in topo.traffic
            ],
        }
    return payload
