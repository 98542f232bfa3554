import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcsforge.envs import (
    COLLECT, MATRIX_PAYOFF, NOOP, WEIGHTED_REACH_PAYOFF, ConfigurationError, ContractError, CoopReach,
    EnvId, HeuristicTeammate, LevelBasedForaging, RepeatedMatrixGame, WeightedCoopReach, corners,
    enumerate_actions, heuristic_action, make_env, manhattan, play_episode,
)


class Constant:
    def __init__(self, a):
        self.a = a

    def reset(self, rng):
        pass

    def act(self, obs):
        return self.a


def test_matrix_reset_observation():
    env = RepeatedMatrixGame()
    jo = env.reset(0)
    assert jo.obs_a.tolist() == [0.0]
    assert jo.obs_b.tolist() == [0.0]


@pytest.mark.parametrize("a,b,r", [(0, 0, 10.0), (2, 1, 4.0), (1, 1, 6.0), (0, 1, 0.0)])
def test_matrix_payoff_entries(a, b, r):
    env = RepeatedMatrixGame()
    env.reset(0)
    _, reward, _ = env.step(a, b)
    assert reward == r


@pytest.mark.parametrize("a", range(3))
@pytest.mark.parametrize("b", range(3))
def test_matrix_constant_policy_return(a, b):
    env = RepeatedMatrixGame(horizon=5)
    assert play_episode(env, Constant(a), Constant(b), seed=0) == 5 * MATRIX_PAYOFF[a, b]


def test_invalid_action_and_step_after_done():
    env = RepeatedMatrixGame(horizon=1)
    env.reset(0)
    with pytest.raises(IndexError):
        env.step(3, 0)
    env.step(0, 0)
    with pytest.raises(ContractError):
        env.step(0, 0)


def test_enumerate_actions():
    assert len(enumerate_actions("RepeatedMatrix")) == 3
    assert len(enumerate_actions(EnvId.CoopReach)) == 5
    assert len(enumerate_actions("WeightedCoopReach")) == 5
    assert len(enumerate_actions("LBF")) == 6


@given(st.integers(0, 2**63 - 1))
@settings(max_examples=50, deadline=None)
def test_grid_spawn_avoids_corners(seed):
    env = CoopReach(grid_dim=7)
    env.reset(seed)
    for p in env.pos:
        assert 0 <= p[0] < 7 and 0 <= p[1] < 7
        assert p not in corners(7)


def test_reset_determinism():
    for env in (CoopReach(), WeightedCoopReach(), LevelBasedForaging()):
        assert env.reset(42) == env.reset(42)


def test_weighted_reach_corner_pair_reward():
    env = WeightedCoopReach(grid_dim=7)
    env.reset(0)
    # place agents next to corners A and C
    env.pos = [(0, 1), (6, 5)]
    _, r, done = env.step(2, 3)  # LEFT onto A, RIGHT onto C
    assert r == 6.0 and done


def test_weighted_reach_payoff_symmetric():
    assert np.array_equal(WEIGHTED_REACH_PAYOFF, WEIGHTED_REACH_PAYOFF.T)


def test_coop_reach_needs_simultaneous_same_corner():
    env = CoopReach(grid_dim=5, horizon=3)
    env.reset(0)
    env.pos = [(0, 1), (2, 2)]
    _, r, done = env.step(2, NOOP)
    assert r == 0.0 and not done
    env.step(NOOP, NOOP)
    _, r, done = env.step(NOOP, NOOP)
    assert r == 0.0 and done and env.t == 3


def test_lbf_collection_requires_both():
    env = LevelBasedForaging(grid_dim=8)
    env.reset(3)
    item = env.items[0]
    nbrs = [(item[0] + d[0], item[1] + d[1]) for d in ((-1, 0), (1, 0), (0, -1), (0, 1))]
    nbrs = [p for p in nbrs if 0 <= p[0] < 8 and 0 <= p[1] < 8 and p not in env.items]
    env.pos = [nbrs[0], nbrs[-1]]
    _, r, _ = env.step(COLLECT, NOOP)
    assert r == 0.0 and env.present[0]
    _, r, _ = env.step(COLLECT, COLLECT)
    assert r == pytest.approx(0.33) and not env.present[0]


def test_every_episode_terminates_within_horizon():
    rng = np.random.default_rng(0)
    for env in (RepeatedMatrixGame(), CoopReach(), WeightedCoopReach(), LevelBasedForaging()):
        for seed in range(5):
            env.reset(seed)
            done, steps = False, 0
            while not done:
                _, _, done = env.step(int(rng.integers(env.n_actions)), int(rng.integers(env.n_actions)))
                steps += 1
            assert steps <= env.horizon


# --- heuristics ------------------------------------------------------------


def test_matrix_h1_first_action():
    h = HeuristicTeammate("RepeatedMatrix", "H1")
    assert all(heuristic_action(h, np.array([0.0])) == 0 for _ in range(20))


def test_matrix_h5_frequencies():
    h = HeuristicTeammate("RepeatedMatrix", "H5", rng_seed=7)
    acts = np.array([h.act(np.array([0.0])) for _ in range(100_000)])
    freq = np.bincount(acts, minlength=3) / len(acts)
    assert np.allclose(freq, [0.15, 0.7, 0.15], atol=0.01)


def test_heuristic_env_mismatch():
    with pytest.raises(ConfigurationError):
        HeuristicTeammate("RepeatedMatrix", "H9")
    h = HeuristicTeammate("RepeatedMatrix", "H1")
    with pytest.raises(ConfigurationError):
        heuristic_action(h, np.array([0.0]), env_id="LBF")


@pytest.mark.parametrize("seed", range(20))
def test_reach_h9_monotone_toward_b(seed):
    env = CoopReach(grid_dim=7)
    jo = env.reset(seed)
    h = HeuristicTeammate("CoopReach", "H9")
    h.reset()
    target = corners(7)[1]
    d = manhattan(env.pos[1], target)
    while env.pos[1] != target:
        jo, _, done = env.step(NOOP, h.act(jo.obs_b))
        nd = manhattan(env.pos[1], target)
        assert nd == d - 1
        d = nd


def test_reach_h1_h2_pick_nearest_and_farthest():
    env = CoopReach(grid_dim=7)
    jo = env.reset(0)
    env.pos = [(3, 3), (1, 2)]
    jo = env.observe()
    near, far = HeuristicTeammate("CoopReach", "H1"), HeuristicTeammate("CoopReach", "H2")
    near.act(jo.obs_b)
    far.act(jo.obs_b)
    assert near.episodic_state["dest"] == 0  # A is nearest to (1, 2)
    assert far.episodic_state["dest"] == 2  # C is farthest


def test_reach_h13_destination_frequencies():
    h = HeuristicTeammate("CoopReach", "H13", rng_seed=1)
    counts = np.zeros(4)
    obs = CoopReach().reset(0).obs_b
    for _ in range(20_000):
        h.reset()
        h.act(obs)
        counts[h.episodic_state["dest"]] += 1
    assert np.allclose(counts / counts.sum(), [0.15, 0.55, 0.15, 0.15], atol=0.015)


@pytest.mark.parametrize("env_id,hid", [
    ("RepeatedMatrix", "H1"), ("RepeatedMatrix", "H3"),
    ("CoopReach", "H8"), ("WeightedCoopReach", "H11"),
    ("LBF", "H3"), ("LBF", "H8"),
])
def test_deterministic_heuristics_reproducible(env_id, hid):
    env = make_env(env_id)
    rets = [play_episode(env, HeuristicTeammate(env_id, "H1" if env_id == "RepeatedMatrix" else hid),
                         HeuristicTeammate(env_id, hid), seed=11) for _ in range(2)]
    assert rets[0] == rets[1]


def test_lbf_same_order_collects_everything():
    env = LevelBasedForaging()
    total = [play_episode(env, HeuristicTeammate("LBF", "H3"), HeuristicTeammate("LBF", "H3"), seed=s)
             for s in range(10)]
    assert np.mean(total) == pytest.approx(0.99)
