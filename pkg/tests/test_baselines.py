import numpy as np
import pytest

from relaysched.baselines import (
    RoundRobinState,
    maf,
    maf_mad,
    random_sched,
    round_robin,
)
from relaysched.network import AoiSnapshot, validate_action

from test_network import make_topology


def snap(t, relay, tbs):
    return AoiSnapshot(
        t=t,
        aoi_relay=np.asarray(relay, dtype=np.int64),
        aoi_tbs=np.asarray(tbs, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# maf_mad


def test_maf_mad_samples_oldest_per_relay():
    topo = make_topology(M=4, N=2, L=1, K=1)  # groups (0,1), (2,3)
    s = snap(3, relay=[2, 3, 1, 2], tbs=[3, 3, 3, 3])
    act = maf_mad(s, topo)
    assert act.sample_sets == ((1,), (3,))


def test_maf_mad_updates_largest_age_gap():
    topo = make_topology(M=3, N=1, L=1, K=1)
    s = snap(4, relay=[1, 2, 3], tbs=[4, 4, 3])  # gaps 3, 2, 0
    act = maf_mad(s, topo)
    assert act.update_set == (0,)


def test_maf_mad_breaks_ties_toward_lowest_index():
    topo = make_topology(M=3, N=1, L=1, K=2)
    s = snap(2, relay=[2, 2, 2], tbs=[3, 3, 3])
    act = maf_mad(s, topo)
    assert act.sample_sets == ((0,),)
    assert act.update_set == (0, 1)


def test_maf_mad_uses_all_channels():
    topo = make_topology(M=6, N=2, L=2, K=4)
    s = snap(5, relay=[5, 1, 2, 4, 3, 1], tbs=[6, 6, 6, 6, 6, 6])
    act = maf_mad(s, topo)
    assert tuple(len(g) for g in act.sample_sets) == (2, 2)
    assert len(act.update_set) == 4
    validate_action(act, topo)


def test_maf_mad_channels_beyond_group_take_everyone():
    topo = make_topology(M=2, N=1, L=5, K=5)
    act = maf_mad(snap(1, [1, 1], [1, 1]), topo)
    assert act.sample_sets == ((0, 1),)
    assert act.update_set == (0, 1)


# ---------------------------------------------------------------------------
# maf


def test_maf_same_sampling_as_maf_mad():
    topo = make_topology(M=4, N=2, L=1, K=2)
    s = snap(6, relay=[1, 4, 2, 5], tbs=[6, 5, 6, 6])
    assert maf(s, topo).sample_sets == maf_mad(s, topo).sample_sets


def test_maf_updates_largest_tbs_age():
    topo = make_topology(M=3, N=1, L=1, K=1)
    s = snap(4, relay=[1, 2, 3], tbs=[4, 5, 3])
    assert maf(s, topo).update_set == (1,)


def test_maf_and_maf_mad_can_disagree_on_updates():
    topo = make_topology(M=2, N=1, L=1, K=1)
    # device 0: large tbs age but equally stale at the relay (no gain from update)
    s = snap(5, relay=[5, 1], tbs=[5, 4])
    assert maf(s, topo).update_set == (0,)
    assert maf_mad(s, topo).update_set == (1,)


# ---------------------------------------------------------------------------
# round robin


def test_round_robin_walks_and_wraps():
    topo = make_topology(M=3, N=1, L=2, K=1)
    state = RoundRobinState.fresh(topo)
    act1, state = round_robin(state, topo)
    assert act1.sample_sets == ((0, 1),)
    assert state.relay_cursors == [2]
    act2, state = round_robin(state, topo)
    assert act2.sample_sets == ((0, 2),)
    assert state.relay_cursors == [1]


def test_round_robin_update_cursor_walks_all_devices():
    topo = make_topology(M=4, N=2, L=1, K=3)
    state = RoundRobinState.fresh(topo)
    act1, state = round_robin(state, topo)
    assert act1.update_set == (0, 1, 2)
    act2, state = round_robin(state, topo)
    assert act2.update_set == (0, 1, 3)


def test_round_robin_equal_shares_over_group_window():
    # over group-size slots each device is polled exactly min(L, size) times
    for size, L in ((3, 2), (4, 2), (5, 3)):
        topo = make_topology(M=size, N=1, L=L, K=1)
        state = RoundRobinState.fresh(topo)
        counts = np.zeros(size, dtype=int)
        for _ in range(size):
            act, state = round_robin(state, topo)
            for m in act.sample_sets[0]:
                counts[m] += 1
        assert np.all(counts == min(L, size))


def test_round_robin_full_grant_leaves_cursor_in_place():
    topo = make_topology(M=2, N=1, L=5, K=5)
    state = RoundRobinState.fresh(topo)
    act, state = round_robin(state, topo)
    assert act.sample_sets == ((0, 1),)
    assert state.relay_cursors == [0]
    assert state.tbs_cursor == 0


def test_round_robin_ignores_ages_entirely():
    topo = make_topology(M=4, N=1, L=1, K=1)
    s1, s2 = RoundRobinState.fresh(topo), RoundRobinState.fresh(topo)
    acts1, acts2 = [], []
    for _ in range(6):
        a, s1 = round_robin(s1, topo)
        acts1.append(a)
        b, s2 = round_robin(s2, topo)
        acts2.append(b)
    assert acts1 == acts2


# ---------------------------------------------------------------------------
# random


def test_random_sched_always_feasible():
    rng = np.random.default_rng(0)
    for _ in range(50):
        M = int(rng.integers(1, 9))
        N = int(rng.integers(1, M + 1))
        topo = make_topology(M=M, N=N, L=int(rng.integers(1, 4)), K=int(rng.integers(1, M + 1)))
        act = random_sched(topo, rng)
        validate_action(act, topo)
        # uses every channel it can
        for group, chosen in zip(topo.groups, act.sample_sets):
            assert len(chosen) == min(topo.L, len(group))
        assert len(act.update_set) == min(topo.K, topo.M)


def test_random_sched_deterministic_per_seed():
    topo = make_topology(M=6, N=2, L=2, K=3)
    a = random_sched(topo, np.random.default_rng(33))
    b = random_sched(topo, np.random.default_rng(33))
    assert a == b


def test_random_sched_uniform_membership_frequency():
    # group of 4 with L=2: every device should appear with frequency ~1/2
    topo = make_topology(M=4, N=1, L=2, K=2)
    rng = np.random.default_rng(5)
    n = 10_000
    counts = np.zeros(4)
    for _ in range(n):
        act = random_sched(topo, rng)
        for m in act.sample_sets[0]:
            counts[m] += 1
    freq = counts / n
    se = (0.5 * 0.5 / n) ** 0.5
    assert np.all(np.abs(freq - 0.5) <= 4 * se)


# ---------------------------------------------------------------------------
# shared properties


def test_greedy_schedulers_are_pure_functions():
    topo = make_topology(M=4, N=2, L=1, K=2)
    s = snap(7, relay=[3, 1, 2, 4], tbs=[7, 5, 6, 7])
    assert maf_mad(s, topo) == maf_mad(s, topo)
    assert maf(s, topo) == maf(s, topo)


def test_all_baselines_emit_valid_actions_on_random_snapshots():
    rng = np.random.default_rng(99)
    for _ in range(30):
        M = int(rng.integers(1, 9))
        N = int(rng.integers(1, M + 1))
        topo = make_topology(M=M, N=N, L=int(rng.integers(1, 4)), K=int(rng.integers(1, M + 1)))
        t = int(rng.integers(1, 30))
        relay = rng.integers(1, t + 1, size=M)
        s = snap(t, relay, relay + rng.integers(0, 10, size=M))
        validate_action(maf_mad(s, topo), topo)
        validate_action(maf(s, topo), topo)
        act, _ = round_robin(RoundRobinState.fresh(topo), topo)
        validate_action(act, topo)
