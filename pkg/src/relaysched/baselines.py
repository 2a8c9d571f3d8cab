"""Baseline schedulers: age-greedy, round-robin and random.

All of them decide from the current ages alone (no loss probabilities, no
traffic knowledge).  Every tie breaks toward the lowest device index so runs
are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from relaysched.network import Action, AoiSnapshot, Topology

__all__ = [
    "RoundRobinState",
    "maf",
    "maf_mad",
    "random_sched",
    "round_robin",
]


def _top_by(indices, scores, count):
    """The ``count`` indices with the largest score, lowest index first on ties."""
    ranked = sorted(indices, key=lambda m: (-scores[m], m))
    return tuple(sorted(ranked[:count]))


def _greedy_sample_sets(snap: AoiSnapshot, topo: Topology):
    """Per relay, poll the devices whose relay-side age is largest."""
    sets = []
    for group in topo.groups:
        sets.append(_top_by(group, snap.aoi_relay, min(topo.L, len(group))))
    return tuple(sets)


def maf_mad(snap: AoiSnapshot, topo: Topology) -> Action:
    """Max-age-first sampling, max-age-difference updating.

    Relays poll their oldest-at-relay devices; the base station pulls the
    devices whose relay copy would improve its own age the most, i.e. the
    largest aoi_tbs - aoi_relay gap.
    """
    diff = snap.aoi_tbs - snap.aoi_relay
    return Action(
        sample_sets=_greedy_sample_sets(snap, topo),
        update_set=_top_by(range(topo.M), diff, min(topo.K, topo.M)),
    )


def maf(snap: AoiSnapshot, topo: Topology) -> Action:
    """Max-age-first on both hops (updates ranked by base-station age alone)."""
    return Action(
        sample_sets=_greedy_sample_sets(snap, topo),
        update_set=_top_by(range(topo.M), snap.aoi_tbs, min(topo.K, topo.M)),
    )


@dataclass
class RoundRobinState:
    """Rotation cursors: one per relay plus one for the backhaul."""

    relay_cursors: list[int]
    tbs_cursor: int = 0

    @classmethod
    def fresh(cls, topo: Topology) -> "RoundRobinState":
        return cls(relay_cursors=[0] * topo.N, tbs_cursor=0)


def round_robin(state: RoundRobinState, topo: Topology) -> tuple[Action, RoundRobinState]:
    """Circular scheduling: each relay walks its group, the backhaul walks all devices.

    Cursors advance by the number of channels actually granted, so over any
    window of group-size slots every device in a group is polled equally
    often.
    """
    sample_sets = []
    new_cursors = []
    for n, group in enumerate(topo.groups):
        size = len(group)
        grant = min(topo.L, size)
        cursor = state.relay_cursors[n]
        chosen = tuple(sorted(group[(cursor + i) % size] for i in range(grant)))
        sample_sets.append(chosen)
        new_cursors.append((cursor + grant) % size)

    grant = min(topo.K, topo.M)
    cursor = state.tbs_cursor
    update_set = tuple(sorted((cursor + i) % topo.M for i in range(grant)))
    new_state = RoundRobinState(relay_cursors=new_cursors, tbs_cursor=(cursor + grant) % topo.M)
    return Action(tuple(sample_sets), update_set), new_state


def random_sched(topo: Topology, rng: np.random.Generator) -> Action:
    """Uniformly random feasible action using every available channel."""
    sample_sets = []
    for group in topo.groups:
        grant = min(topo.L, len(group))
        chosen = rng.choice(np.asarray(group), size=grant, replace=False)
        sample_sets.append(tuple(sorted(int(m) for m in chosen)))
    grant = min(topo.K, topo.M)
    chosen = rng.choice(topo.M, size=grant, replace=False)
    update_set = tuple(sorted(int(m) for m in chosen))
    return Action(tuple(sample_sets), update_set)
