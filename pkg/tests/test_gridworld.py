import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cprep.gridworld import (
    ARRIVED, DONE, DROPOFF, EAST, NORTH, PAIRINGS, PICKUP, SOUTH, WEST, Cmdp, Context,
    EnvState, EpisodeFinishedError, GridMap, TaskMdp, count_contexts, ctl_features,
    default_placements, instantiate, render_task, sample_contexts, state_features,
)

from oracles import bfs_steps_to_goal, connected


def gn_task(goal, grid=None):
    return TaskMdp("GN", grid or GridMap(), (goal,), (1,))


def test_gn_el_instantiation():
    task = instantiate(Cmdp("GN", "EL"), Context("EL", ((5, 1),)))
    assert task.destination() == (5, 1)
    assert (5, 1) not in task.start_cells() and len(task.start_cells()) == 35
    s = task.state_at((5, 1))
    res = task.step(s, DONE)
    assert res.reward == 1.0 and res.done


def test_plain_move_and_boundary():
    task = gn_task((0, 1))
    res = task.step(task.state_at((0, 0)), EAST)
    assert res.next.agent == (0, 1) and res.reward == 0 and not res.done
    res = task.step(task.state_at((0, 3)), NORTH)
    assert res.next.agent == (0, 3) and res.reward == 0
    assert task.step(task.state_at((5, 5)), SOUTH).next.agent == (5, 5)
    assert task.step(task.state_at((2, 0)), WEST).next.agent == (2, 0)


def test_wall_blocks_move():
    grid = GridMap(walls={((0, 0), (0, 1))})
    task = gn_task((3, 3), grid)
    assert task.step(task.state_at((0, 0)), EAST).next.agent == (0, 0)
    assert task.step(task.state_at((0, 1)), WEST).next.agent == (0, 1)
    assert task.step(task.state_at((0, 0)), SOUTH).next.agent == (1, 0)


def test_done_elsewhere_is_noop():
    task = gn_task((3, 3))
    res = task.step(task.state_at((0, 0)), DONE)
    assert res.next.agent == (0, 0) and res.reward == 0 and not res.done


def test_finished_episode_raises():
    task = gn_task((0, 0))
    res = task.step(task.state_at((0, 0)), DONE)
    with pytest.raises(EpisodeFinishedError):
        task.step(res.next, NORTH)


def test_truncation():
    task = TaskMdp("GN", GridMap(), ((5, 5),), (1,), max_steps=3)
    s = task.state_at((0, 0))
    flags = []
    for _ in range(3):
        res = task.step(s, NORTH)
        flags.append(res.truncated)
        s = res.next
    assert flags == [False, False, True]
    with pytest.raises(EpisodeFinishedError):
        task.step(s, NORTH)


def test_mp_visits_any_order():
    task = TaskMdp("MP", GridMap(), ((0, 0), (0, 1)), (1, 2))
    s = task.state_at((0, 1))
    r = task.step(s, ARRIVED)
    assert r.next.status == (0, 1) and not r.done
    r2 = task.step(r.next, ARRIVED)
    assert r2.next.status == (0, 1)
    r3 = task.step(task.step(r.next, WEST).next, ARRIVED)
    assert r3.done and r3.reward == 1.0


def test_on_wrong_order_is_noop():
    task = instantiate(Cmdp("ON", "PO", entity_count=3), Context("PO", (3, 1, 2)))
    e = task.entities
    s = task.state_at(e[0])  # entity 1, but 3 comes first
    assert task.step(s, ARRIVED).next.status == (0, 0, 0)
    s = task.state_at(e[2])
    assert task.step(s, ARRIVED).next.status == (0, 0, 1)


def test_pd_pickup_and_dropoff():
    cmdp = Cmdp("PD", "CM", entity_count=1)
    task = instantiate(cmdp, Context("CM", (0,) * 60))
    assert task.grid.walls == frozenset()
    assert task.entities == ((0, 0), (5, 5))
    s = task.state_at((0, 0))
    assert task.step(s, DROPOFF).next.status == (0,)
    s = task.step(s, PICKUP).next
    assert s.status == (1,)
    s = EnvState((5, 5), s.status)
    res = task.step(s, DROPOFF)
    assert res.next.status == (2,) and res.done and res.reward == 1.0


def test_default_placements():
    g = GridMap()
    assert default_placements(g, 5) == [(0, 0), (5, 5), (0, 5), (5, 0), (3, 3)]
    assert default_placements(g, 6)[5] == (0, 1)


def test_invalid_contexts():
    with pytest.raises(ValueError, match="out of bounds"):
        instantiate(Cmdp("GN", "EL"), Context("EL", ((6, 0),)))
    with pytest.raises(ValueError, match="permutation"):
        instantiate(Cmdp("ON", "PO"), Context("PO", (1, 1, 2, 3, 4)))
    g = GridMap()
    bits = [int(e in {((0, 0), (0, 1)), ((0, 0), (1, 0))}) for e in g.interior_edges()]
    with pytest.raises(ValueError, match="disconnected"):
        instantiate(Cmdp("GN", "CM"), Context("CM", bits))
    with pytest.raises(ValueError):
        Cmdp("GN", "PO")


def test_pairings():
    assert len(PAIRINGS) == 7


def test_interior_edges_count():
    assert len(GridMap().interior_edges()) == 60
    assert len(ctl_features(Context("CM", (0,) * 60), GridMap())) == 60


def test_sample_gn_el():
    src, tgt = sample_contexts(Cmdp("GN", "EL"), 8, 16, np.random.default_rng(0))
    assert len(src) == 8 and len(tgt) == 16
    assert len(set(src) | set(tgt)) == 24
    with pytest.raises(ValueError, match="only 36"):
        sample_contexts(Cmdp("GN", "EL"), 20, 17, np.random.default_rng(0))


def test_sample_cm_connected_and_wall_range():
    cmdp = Cmdp("MP", "CM", cm_wall_range=(3, 12))
    src, tgt = sample_contexts(cmdp, 30, 30, np.random.default_rng(1))
    edges = GridMap().interior_edges()
    for c in src + tgt:
        assert 3 <= sum(c.payload) <= 12
        blocked = {frozenset(e) for e, b in zip(edges, c.payload) if b}
        assert connected(6, 6, blocked)
    assert not set(src) & set(tgt)


def test_state_features():
    task = gn_task((5, 5))
    f = state_features(task, task.state_at((1, 1)))
    assert f.shape == (36,) and f[7] == 1 and f.sum() == 1
    pd = instantiate(Cmdp("PD", "EL"), Context("EL", ((0, 0), (1, 1), (2, 2), (3, 3))))
    assert state_features(pd, pd.state_at((4, 4))).shape == (40,)
    f = state_features(pd, EnvState((4, 4), (1, 2)))
    assert f[36:].tolist() == [1, 0, 0, 1]


def test_ctl_features():
    np.testing.assert_allclose(ctl_features(Context("EL", ((2, 3),)), GridMap()), [0.4, 0.6])
    np.testing.assert_allclose(ctl_features(Context("PO", (1, 2, 3, 4, 5)), GridMap()), [0, 0.25, 0.5, 0.75, 1])
    np.testing.assert_allclose(ctl_features(Context("PO", (3, 1, 2)), GridMap()), [0.5, 1.0, 0.0])


def test_render():
    task = instantiate(Cmdp("GN", "EL"), Context("EL", ((0, 1),)))
    text = render_task(task, task.state_at((0, 0)))
    assert text.splitlines()[1].startswith("|@ G")


def test_count_contexts():
    assert count_contexts(Cmdp("GN", "EL")) == 36
    assert count_contexts(Cmdp("ON", "PO")) == 120


@pytest.mark.parametrize("kind, space", sorted(PAIRINGS))
def test_every_sampled_task_is_solvable(kind, space):
    cmdp = Cmdp(kind, space)
    src, _ = sample_contexts(cmdp, 3, 1, np.random.default_rng(5))
    for c in src:
        task = instantiate(cmdp, c)
        for cell in task.start_cells()[::7]:
            assert bfs_steps_to_goal(task, task.state_at(cell)) is not None


@given(st.integers(0, 2**32 - 1), st.lists(st.integers(0, 5), min_size=1, max_size=60))
def test_status_monotone_and_reward_rules(seed, actions):
    rng = np.random.default_rng(seed)
    kind, space = sorted(PAIRINGS)[seed % 7]
    cmdp = Cmdp(kind, space)
    (c,), _ = sample_contexts(cmdp, 1, 0, rng)
    task = instantiate(cmdp, c, seed)
    s = task.reset()
    total = 0.0
    for a in actions:
        a = a % task.n_actions
        res = task.step(s, a)
        assert all(x <= y for x, y in zip(s.status, res.next.status))
        assert res.reward in (0.0, 1.0)
        assert (res.reward == 1.0) == res.done
        total += res.reward
        s = res.next
        if res.done or res.truncated:
            break
    assert total <= 1.0


def test_reset_determinism_and_uniformity():
    task = instantiate(Cmdp("GN", "EL"), Context("EL", ((2, 2),)), seed=3)
    again = instantiate(Cmdp("GN", "EL"), Context("EL", ((2, 2),)), seed=3)
    a = [task.reset().agent for _ in range(20)]
    b = [again.reset().agent for _ in range(20)]
    assert a == b
    rng = np.random.default_rng(0)
    counts = {}
    for _ in range(7000):
        cell = task.reset(rng).agent
        counts[cell] = counts.get(cell, 0) + 1
    assert len(counts) == 35 and (2, 2) not in counts
    assert max(counts.values()) < 1.5 * 7000 / 35
