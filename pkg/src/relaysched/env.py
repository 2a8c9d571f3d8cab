"""Episodic environment: fixed-horizon scheduling with stacked observations.

An episode starts at slot 1 with every age equal to 1 and lasts exactly T
decisions.  The observation is a flat float64 vector holding, for each of the
``z`` most recent slots (newest first), the slot index and the 2M ages, all
divided by T.  The reward after a decision is minus the mean base-station age
at the next slot, so the undiscounted episode return is exactly -T times the
episode's mean base-station age.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from relaysched.network import (
    Action,
    AoiSnapshot,
    NetState,
    StepOutcome,
    Topology,
    snapshot_of,
    step_dynamics,
)

__all__ = ["AoiEnv", "EpisodeDone", "encode_observation"]


class EpisodeDone(RuntimeError):
    """step() was called after the episode finished."""


def encode_observation(history: Sequence[AoiSnapshot], z: int, horizon: int) -> np.ndarray:
    """Flatten the ``z`` most recent snapshots, newest first, scaled by 1/T.

    ``history`` is ordered oldest to newest.  When fewer than ``z`` snapshots
    exist yet, the oldest available one (the slot-1 snapshot early in an
    episode) is repeated to pad the window.
    """
    if z < 1:
        raise ValueError(f"stack depth must be >= 1, got {z}")
    if len(history) == 0:
        raise ValueError("history is empty")
    M = history[0].aoi_relay.shape[0]
    scale = 1.0 / float(horizon)
    out = np.empty(z * (2 * M + 1), dtype=np.float64)
    width = 2 * M + 1
    for slot_back in range(z):
        idx = len(history) - 1 - slot_back
        snap = history[idx] if idx >= 0 else history[0]
        base = slot_back * width
        out[base] = snap.t * scale
        out[base + 1 : base + 1 + M] = snap.aoi_relay * scale
        out[base + 1 + M : base + width] = snap.aoi_tbs * scale
    return out


class AoiEnv:
    """Gym-style wrapper around the network dynamics.

    Each reset starts a fresh episode with its own pair of link-outcome
    streams spawned from the environment seed, so an environment instance
    yields a reproducible sequence of episodes.
    """

    def __init__(
        self,
        topo: Topology,
        z: int = 4,
        horizon: int = 20,
        seed: int | np.random.SeedSequence = 0,
    ):
        if z < 1:
            raise ValueError(f"stack depth must be >= 1, got {z}")
        if horizon < 1:
            raise ValueError(f"horizon must be >= 1, got {horizon}")
        self.topo = topo
        self.z = z
        self.horizon = horizon
        self._seed_seq = (
            seed
            if isinstance(seed, np.random.SeedSequence)
            else np.random.SeedSequence(seed)
        )
        self.state: NetState | None = None
        self._history: list[AoiSnapshot] = []
        self._done = True

    @property
    def observation_dim(self) -> int:
        return self.z * (2 * self.topo.M + 1)

    def reset(self) -> np.ndarray:
        sample_seq, update_seq = self._seed_seq.spawn(2)
        self._rng = (
            np.random.default_rng(sample_seq),
            np.random.default_rng(update_seq),
        )
        self.state = NetState.initial(self.topo.M)
        self._history = [snapshot_of(self.state)]
        self._done = False
        return encode_observation(self._history, self.z, self.horizon)

    def step(self, action: Action):
        """Apply one decision; returns (observation, reward, done, info).

        info carries the post-decision snapshot and the per-link outcome
        record for tracing.
        """
        if self._done or self.state is None:
            raise EpisodeDone("episode is over; call reset() first")
        self.state, outcome = step_dynamics(self.state, self.topo, action, self._rng)
        snap = snapshot_of(self.state)
        self._history.append(snap)
        if len(self._history) > self.z:
            self._history = self._history[-self.z :]
        reward = -float(np.mean(snap.aoi_tbs))
        self._done = self.state.t >= self.horizon + 1
        obs = encode_observation(self._history, self.z, self.horizon)
        info = {"snapshot": snap, "outcome": outcome}
        return obs, reward, self._done, info

    @property
    def done(self) -> bool:
        return self._done

    def current_snapshot(self) -> AoiSnapshot:
        if self.state is None:
            raise EpisodeDone("environment has not been reset")
        return self._history[-1]
