"""Slotted-time model of a lossy two-hop device -> relay -> base-station network.

Each device's freshest data is tracked by the generation slot of the newest
packet held at each hop (device, serving relay, base station).  Age of
information at a hop is the current slot minus that generation slot.  A slot
carries two kinds of scheduled transmissions:

* sampling: a device sends its newest packet to its relay over one of the
  relay's L access channels;
* updating: a relay forwards a device's packet to the base station over one
  of the K shared backhaul channels.

Every scheduled transmission fails independently with the link's loss
probability.  Within one slot, updates forward the packet the relay held when
the slot began; a packet sampled in a slot can therefore be forwarded no
earlier than the next slot (a one-slot pipeline delay).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

from relaysched.config import ScenarioConfig

__all__ = [
    "Action",
    "AoiSnapshot",
    "ConstraintViolation",
    "GenerateAtWill",
    "NetState",
    "Periodic",
    "StepOutcome",
    "Topology",
    "TrafficModel",
    "action_space_cardinality",
    "apply_outcomes",
    "average_aoi",
    "build_topology",
    "latest_generation",
    "snapshot_of",
    "step_dynamics",
]


class ConstraintViolation(ValueError):
    """An action requests more transmissions than the channels allow."""


# ---------------------------------------------------------------------------
# traffic models


@dataclass(frozen=True)
class GenerateAtWill:
    """The device creates a fresh packet at the instant it is sampled."""


@dataclass(frozen=True)
class Periodic:
    """The device emits a packet every ``period`` slots.

    An initial packet generated at slot 0 exists before the first period
    elapses, so a brand-new network is never empty.
    """

    period: int

    def __post_init__(self):
        if self.period < 1:
            raise ValueError(f"period must be >= 1, got {self.period}")


TrafficModel = Union[GenerateAtWill, Periodic]


def latest_generation(traffic: TrafficModel, t: int, sampled_now: bool = False) -> int:
    """Generation slot of the newest packet a device can offer at slot ``t``.

    Generate-at-will devices mint a packet on demand, so when sampled the
    answer is ``t`` itself; unsampled they still hold the initial slot-0
    packet.  Periodic devices hold the packet from the most recent period
    boundary (slot 0 before the first boundary), whether sampled or not.
    """
    if isinstance(traffic, GenerateAtWill):
        return t if sampled_now else 0
    return traffic.period * (t // traffic.period) if t >= traffic.period else 0


# ---------------------------------------------------------------------------
# topology


@dataclass(frozen=True)
class Topology:
    """Static description of one network: who talks to whom, and how reliably.

    ``groups[n]`` lists the device indices served by relay ``n``; together the
    groups partition ``0..M-1``.  ``loss_sample[m]`` / ``loss_update[m]`` are
    the per-link loss probabilities of device m's access link and backhaul
    share.  ``positions`` is optional metadata (the dynamics never read it).
    """

    M: int
    N: int
    L: int
    K: int
    groups: tuple[tuple[int, ...], ...]
    loss_sample: np.ndarray
    loss_update: np.ndarray
    traffic: tuple[TrafficModel, ...]
    positions: np.ndarray | None = None

    def __post_init__(self):
        if min(self.M, self.N, self.L, self.K) < 1:
            raise ValueError("M, N, L and K must all be >= 1")
        if len(self.groups) != self.N:
            raise ValueError(f"{len(self.groups)} groups for N = {self.N} relays")
        flat = [m for g in self.groups for m in g]
        if sorted(flat) != list(range(self.M)):
            raise ValueError("groups must partition the device indices 0..M-1")
        for name in ("loss_sample", "loss_update"):
            vec = getattr(self, name)
            if vec.shape != (self.M,):
                raise ValueError(f"{name} must have shape ({self.M},)")
            if np.any(vec < 0.0) or np.any(vec >= 1.0):
                raise ValueError(f"{name} entries must lie in [0, 1)")
        if len(self.traffic) != self.M:
            raise ValueError("need one traffic model per device")
        if self.positions is not None and self.positions.shape != (self.M, 2):
            raise ValueError(f"positions must have shape ({self.M}, 2)")

    def group_sizes(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups)

    def relay_of(self, device: int) -> int:
        for n, g in enumerate(self.groups):
            if device in g:
                return n
        raise ValueError(f"device {device} not in any group")


def build_topology(config: ScenarioConfig, rng: np.random.Generator) -> Topology:
    """Realize a scenario into a concrete topology.

    Devices 0..M-1 are assigned to relays in index order following the group
    sizes.  Random draws happen in a fixed order (sample losses, update
    losses, periodicities, positions) and only for quantities the scenario
    does not pin down explicitly, so a topology is reproducible from the
    scenario plus the generator state.
    """
    sizes = config.group_sizes()
    groups, start = [], 0
    for size in sizes:
        groups.append(tuple(range(start, start + size)))
        start += size

    if config.loss_sample is not None:
        loss_sample = np.asarray(config.loss_sample, dtype=np.float64)
    else:
        lo, hi = config.loss_sample_range
        loss_sample = rng.uniform(lo, hi, size=config.M)
    if config.loss_update is not None:
        loss_update = np.asarray(config.loss_update, dtype=np.float64)
    else:
        lo, hi = config.loss_update_range
        loss_update = rng.uniform(lo, hi, size=config.M)

    if config.traffic_model == "generate_at_will":
        traffic: tuple[TrafficModel, ...] = tuple(GenerateAtWill() for _ in range(config.M))
    else:
        if config.periodicity is not None:
            periods = config.periodicity
        else:
            choices = np.asarray(config.periodicity_set, dtype=np.int64)
            periods = tuple(int(p) for p in rng.choice(choices, size=config.M))
        traffic = tuple(Periodic(int(p)) for p in periods)

    positions = None
    if config.area_l is not None:
        positions = rng.uniform(0.0, 1.0, size=(config.M, 2))
        positions[:, 0] *= config.area_l
        positions[:, 1] *= config.area_b

    return Topology(
        M=config.M,
        N=config.N,
        L=config.L,
        K=config.K,
        groups=tuple(groups),
        loss_sample=loss_sample,
        loss_update=loss_update,
        traffic=traffic,
        positions=positions,
    )


# ---------------------------------------------------------------------------
# state and actions


@dataclass
class NetState:
    """Generation slots of the freshest packet at each hop, at slot ``t``.

    Invariant: tbs_gen <= relay_gen <= dev_gen <= t - 1 entrywise (a packet
    can only move forward along the chain, and nothing from the future).
    """

    t: int
    dev_gen: np.ndarray
    relay_gen: np.ndarray
    tbs_gen: np.ndarray

    @classmethod
    def initial(cls, M: int) -> "NetState":
        """Slot-1 state: every hop holds the slot-0 initial packet, all ages 1."""
        zeros = np.zeros(M, dtype=np.int64)
        return cls(t=1, dev_gen=zeros.copy(), relay_gen=zeros.copy(), tbs_gen=zeros.copy())

    def copy(self) -> "NetState":
        return NetState(
            t=self.t,
            dev_gen=self.dev_gen.copy(),
            relay_gen=self.relay_gen.copy(),
            tbs_gen=self.tbs_gen.copy(),
        )


@dataclass(frozen=True)
class AoiSnapshot:
    """Per-device ages at the two monitored hops at slot ``t``."""

    t: int
    aoi_relay: np.ndarray
    aoi_tbs: np.ndarray


def snapshot_of(state: NetState) -> AoiSnapshot:
    return AoiSnapshot(
        t=state.t,
        aoi_relay=(state.t - state.relay_gen).astype(np.int64),
        aoi_tbs=(state.t - state.tbs_gen).astype(np.int64),
    )


@dataclass(frozen=True)
class Action:
    """One slot's scheduling decision.

    ``sample_sets[n]`` are the devices relay n polls this slot (at most L,
    all from relay n's group); ``update_set`` are the devices whose packets
    are forwarded to the base station (at most K).
    """

    sample_sets: tuple[tuple[int, ...], ...]
    update_set: tuple[int, ...]


def validate_action(action: Action, topo: Topology) -> None:
    if len(action.sample_sets) != topo.N:
        raise ConstraintViolation(
            f"action carries {len(action.sample_sets)} sample sets for N = {topo.N} relays"
        )
    for n, chosen in enumerate(action.sample_sets):
        if len(set(chosen)) != len(chosen):
            raise ConstraintViolation(f"relay {n} sample set has duplicates: {chosen}")
        if len(chosen) > topo.L:
            raise ConstraintViolation(
                f"relay {n} samples {len(chosen)} devices but has L = {topo.L} channels"
            )
        group = set(topo.groups[n])
        for m in chosen:
            if m not in group:
                raise ConstraintViolation(f"device {m} is not served by relay {n}")
    if len(set(action.update_set)) != len(action.update_set):
        raise ConstraintViolation(f"update set has duplicates: {action.update_set}")
    if len(action.update_set) > topo.K:
        raise ConstraintViolation(
            f"{len(action.update_set)} updates scheduled but only K = {topo.K} channels"
        )
    for m in action.update_set:
        if not (0 <= m < topo.M):
            raise ConstraintViolation(f"update set names unknown device {m}")


# ---------------------------------------------------------------------------
# dynamics


@dataclass(frozen=True)
class StepOutcome:
    """What happened on each link during one slot (all flags per device)."""

    sampled: np.ndarray
    updated: np.ndarray
    sample_lost: np.ndarray
    update_lost: np.ndarray


def apply_outcomes(
    state: NetState,
    topo: Topology,
    action: Action,
    sample_success: Mapping[int, bool],
    update_success: Mapping[int, bool],
) -> NetState:
    """Deterministic slot transition with every link outcome forced.

    Updates forward the packet the relay held when the slot began, then
    sampling lands — so a packet sampled at slot t reaches the base station
    no earlier than slot t+1.
    """
    validate_action(action, topo)
    t = state.t
    dev = state.dev_gen.copy()
    relay = state.relay_gen.copy()
    tbs = state.tbs_gen.copy()

    # periodic devices accumulate packets whether or not anyone polls them
    for m, traffic in enumerate(topo.traffic):
        if isinstance(traffic, Periodic):
            gen = latest_generation(traffic, t)
            if gen > dev[m]:
                dev[m] = gen

    pre_relay = state.relay_gen  # what the relays held at the start of the slot
    for m in action.update_set:
        if update_success[m]:
            tbs[m] = pre_relay[m]

    for chosen in action.sample_sets:
        for m in chosen:
            gen = latest_generation(topo.traffic[m], t, sampled_now=True)
            if gen > dev[m]:  # generate-at-will mints a packet even if the link then drops it
                dev[m] = gen
            if sample_success[m]:
                relay[m] = dev[m]

    new_state = NetState(t=t + 1, dev_gen=dev, relay_gen=relay, tbs_gen=tbs)
    if not (np.all(tbs <= relay) and np.all(relay <= dev) and np.all(dev <= t)):
        raise AssertionError("packet-chain invariant violated (internal error)")
    return new_state


def step_dynamics(
    state: NetState,
    topo: Topology,
    action: Action,
    rng: "np.random.Generator | tuple[np.random.Generator, np.random.Generator]",
) -> tuple[NetState, StepOutcome]:
    """Advance one slot, drawing link outcomes from ``rng``.

    ``rng`` is either a single generator or a ``(sample_rng, update_rng)``
    pair.  With a pair, the access-link and backhaul outcome processes are
    fully decoupled, so the relay-side trajectory is bit-identical no matter
    how many backhaul channels exist — handy when comparing sweeps over K.
    With a single generator, access-link outcomes are simply drawn first
    (device indices in ascending order in both cases).
    """
    validate_action(action, topo)
    if isinstance(rng, tuple):
        sample_rng, update_rng = rng
    else:
        sample_rng = update_rng = rng
    sample_list = sorted(m for chosen in action.sample_sets for m in chosen)
    update_list = sorted(action.update_set)

    sample_success = {
        m: bool(sample_rng.random() < 1.0 - topo.loss_sample[m]) for m in sample_list
    }
    update_success = {
        m: bool(update_rng.random() < 1.0 - topo.loss_update[m]) for m in update_list
    }
    new_state = apply_outcomes(state, topo, action, sample_success, update_success)

    sampled = np.zeros(topo.M, dtype=bool)
    updated = np.zeros(topo.M, dtype=bool)
    sample_lost = np.zeros(topo.M, dtype=bool)
    update_lost = np.zeros(topo.M, dtype=bool)
    for m in sample_list:
        sampled[m] = True
        sample_lost[m] = not sample_success[m]
    for m in update_list:
        updated[m] = True
        update_lost[m] = not update_success[m]
    return new_state, StepOutcome(sampled, updated, sample_lost, update_lost)


# ---------------------------------------------------------------------------
# metrics


def average_aoi(snapshots: Sequence[AoiSnapshot]) -> tuple[float, float]:
    """Mean relay-side and base-station-side age over a trace of snapshots."""
    if len(snapshots) == 0:
        raise ValueError("cannot average an empty trace")
    M = snapshots[0].aoi_relay.shape[0]
    for snap in snapshots:
        if snap.aoi_relay.shape != (M,) or snap.aoi_tbs.shape != (M,):
            raise ValueError("snapshots disagree on the number of devices")
    relay = float(np.mean([snap.aoi_relay for snap in snapshots]))
    tbs = float(np.mean([snap.aoi_tbs for snap in snapshots]))
    return relay, tbs


def action_space_cardinality(topo: Topology) -> tuple[int, int]:
    """(combinatorial, linear) action-space sizes for one topology.

    combinatorial: distinct joint scheduling decisions — the product over
    relays of C(m_n, min(L, m_n)) choices, times C(M, min(K, M)) update
    choices (exact integer).  linear: the 2M scores a vote-based scheduler
    emits instead.
    """
    comb = 1
    for size in topo.group_sizes():
        comb *= math.comb(size, min(topo.L, size))
    comb *= math.comb(topo.M, min(topo.K, topo.M))
    return comb, 2 * topo.M
