import numpy as np
import pytest
from scipy import stats

from conftest import relative_error
from mcsforge.envs import MATRIX_PAYOFF, EnvSpec
from mcsforge.marl import (
    Collector, DivergenceError, Population, RolloutBatch, TrainSchedule, critic_update, cross_play_matrix,
    dominant_actions, matrix_game_returns, metrics_from_csv, metrics_to_csv, policy_update, ppo_logit_grad,
    sample_pair, train_population,
)

MATRIX = EnvSpec("RepeatedMatrix")


def _bandit_batch(n, actions_a, actions_b, reward, pair=(0, 0), logp=None):
    obs = np.zeros((n, 1))
    logp = np.log(np.full(n, 1 / 3)) if logp is None else logp
    return RolloutBatch(pair=pair, obs_a=obs, obs_b=obs, act_a=actions_a, act_b=actions_b, logp_a=logp,
                        logp_b=logp, reward=reward, done=np.ones(n, dtype=bool), next_obs_a=obs,
                        next_obs_b=obs, start_obs_a=obs[:1], start_obs_b=obs[:1])


def _pop(K=2, seed=0):
    return Population(K, 1, 3, (8,), np.random.default_rng(seed))


def test_pair_sampling_is_uniform():
    rng = np.random.default_rng(0)
    K = 3
    counts = np.zeros(K * K)
    for _ in range(9000):
        i, j = sample_pair(K, rng)
        counts[i * K + j] += 1
    assert stats.chisquare(counts).pvalue > 0.01
    assert sample_pair(1, rng) == (0, 0)


def test_critic_reaches_td_fixed_point_on_terminal_bandit():
    pop = _pop()
    n = 64
    batch = _bandit_batch(n, np.zeros(n, int), np.zeros(n, int), np.full(n, 3.0), pair=(1, 0))
    for _ in range(1500):
        critic_update(pop, batch, 0.99, target_sync=10)
    v = pop.critic(pop.critic_input(batch.obs_a, batch.obs_b, 1, 0))
    assert np.allclose(v, 3.0, atol=0.05)


def test_critic_bootstrap_fixed_point():
    # two-state chain: s0 -> s1 (r=1) -> end (r=2); V(s0) = 1 + g*2
    pop = _pop(K=1)
    obs = np.array([[0.0], [1.0]])
    nxt = np.array([[1.0], [1.0]])
    batch = RolloutBatch(pair=(0, 0), obs_a=obs, obs_b=obs, act_a=np.zeros(2, int), act_b=np.zeros(2, int),
                         logp_a=np.zeros(2), logp_b=np.zeros(2), reward=np.array([1.0, 2.0]),
                         done=np.array([False, True]), next_obs_a=nxt, next_obs_b=nxt,
                         start_obs_a=obs[:1], start_obs_b=obs[:1])
    for _ in range(3000):
        critic_update(pop, batch, 0.9, target_sync=20)
    v = pop.critic(pop.critic_input(obs, obs, 0, 0))
    assert v[0] == pytest.approx(1 + 0.9 * 2, abs=0.05)
    assert v[1] == pytest.approx(2.0, abs=0.05)


def test_zero_weight_leaves_policies_bitwise_unchanged():
    pop = _pop()
    before = {k: v.copy() for k, v in pop.tensors().items()}
    rng = np.random.default_rng(1)
    n = 32
    batch = _bandit_batch(n, rng.integers(3, size=n), rng.integers(3, size=n), rng.normal(size=n), pair=(1, 0))
    policy_update(pop, batch, 0.0, 0.0, TrainSchedule(), rng)
    after = pop.tensors()
    for k in before:
        if k.startswith(("aht", "tm")):
            assert after[k].tobytes() == before[k].tobytes(), k


@pytest.mark.parametrize("weight,direction", [(1.0, 1), (-1.0, -1)])
def test_weight_sign_sets_update_direction(weight, direction):
    pop = _pop()
    n = 40
    acts = np.zeros(n, int)
    batch = _bandit_batch(n, acts, acts, np.zeros(n))
    p0 = pop.aht[0](np.zeros(1))[0]
    adv = np.ones(n)
    policy_update(pop, batch, weight, 0.0, TrainSchedule(epochs=1, n_minibatches=1), np.random.default_rng(0), adv=adv)
    p1 = pop.aht[0](np.zeros(1))[0]
    assert np.sign(p1 - p0) == direction


def test_bandit_policy_finds_best_arm():
    pop = Population(1, 1, 3, (8,), np.random.default_rng(3), lr_pi=0.01)
    rng = np.random.default_rng(4)
    payoff = np.array([1.0, 0.2, 0.5])
    sched = TrainSchedule(epochs=2, n_minibatches=1)
    obs = np.zeros((64, 1))
    for _ in range(150):
        p = pop.aht[0](obs)
        acts = (p.cumsum(1) < rng.random(64)[:, None]).sum(1)
        logp = np.log(p[np.arange(64), acts])
        batch = _bandit_batch(64, acts, acts, payoff[acts], logp=logp)
        adv = payoff[acts] - (p * payoff).sum(1)
        policy_update(pop, batch, 1.0, 0.0, sched, rng, adv=adv)
    assert pop.aht[0](np.zeros(1))[0] > 0.9


def test_ppo_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    n, A = 6, 4
    logits = rng.normal(size=(n, A))
    acts = rng.integers(A, size=n)
    logp_old = np.log(np.full(n, 0.25)) + rng.normal(scale=0.05, size=n)
    adv = rng.normal(size=n)

    def loss(L):
        p = np.exp(L - L.max(1, keepdims=True))
        p /= p.sum(1, keepdims=True)
        r = np.exp(np.log(p[np.arange(n), acts]) - logp_old)
        surr = np.minimum(r * adv, np.clip(r, 0.8, 1.2) * adv)
        H = -(p * np.log(p)).sum(1)
        return -surr.mean() - 0.1 * H.mean()

    p = np.exp(logits - logits.max(1, keepdims=True))
    p /= p.sum(1, keepdims=True)
    g = ppo_logit_grad(p, acts, logp_old, adv, 0.2, 0.1)
    eps = 1e-6
    for idx in np.ndindex(n, A):
        Lp, Lm = logits.copy(), logits.copy()
        Lp[idx] += eps
        Lm[idx] -= eps
        fd = (loss(Lp) - loss(Lm)) / (2 * eps)
        assert relative_error(g[idx], fd, floor=1e-6) < 1e-4


def test_lagrange_counter_and_determinism():
    sched = TrainSchedule(total_steps=1600, n_threads=8, t_update=5, t_lagrange=10, hidden=(8,))
    a = train_population(MATRIX, sched, 2, seed=5, method="lbrdiv", tau=1.0)
    b = train_population(MATRIX, sched, 2, seed=5, method="lbrdiv", tau=1.0)
    assert a.counters["lagrange_updates"] == sched.n_updates // 10
    # each matrix-game batch of 40 steps ends 8 episodes
    assert a.counters["lagrange_critic_evals"] == a.counters["lagrange_updates"] * 2 * 2 * 1 * 8
    assert metrics_to_csv(a.metrics, 2) == metrics_to_csv(b.metrics, 2)
    for k, v in a.population.tensors().items():
        assert v.tobytes() == b.population.tensors()[k].tobytes()


def test_baselines_never_touch_multipliers():
    sched = TrainSchedule(total_steps=800, n_threads=8, hidden=(8,))
    res = train_population(MATRIX, sched, 2, seed=0, method="brdiv", alpha=1.0)
    assert res.counters["lagrange_updates"] == 0
    assert not res.multipliers.alpha1.any()


def test_unknown_method_rejected():
    with pytest.raises(ValueError):
        train_population(MATRIX, TrainSchedule(total_steps=80), 2, 0, method="vdn")


def test_divergence_detected():
    pop = _pop()
    batch = _bandit_batch(4, np.zeros(4, int), np.zeros(4, int), np.array([np.nan, 0, 0, 0]))
    with pytest.raises(DivergenceError):
        critic_update(pop, batch, 0.99)


def test_schedule_validation():
    with pytest.raises(ValueError):
        TrainSchedule(t_update=0)
    with pytest.raises(ValueError):
        TrainSchedule(teammate_update="both")


def test_collector_step_multiple():
    c = Collector(MATRIX, 4, np.random.default_rng(0))
    with pytest.raises(ValueError):
        c.collect(_pop(), (0, 0), 6)
    batch = c.collect(_pop(), (0, 1), 20)
    assert len(batch) == 20 and batch.done.sum() == 4


def test_exact_matrix_returns_match_monte_carlo():
    pop = _pop(K=2, seed=9)
    exact = matrix_game_returns(pop, 5)
    mc = cross_play_matrix(pop, MATRIX, episodes=400, seed=1)
    assert np.all(np.abs(mc.values - exact) < 4 * mc.stderr + 1e-9)


def test_exact_matrix_returns_constant_policies():
    pop = _pop(K=3)
    for k, net in enumerate(pop.aht + pop.teammates):
        net.params[f"W{len(net.layer_dims) - 2}"][...] = 0.0
        b = np.full(3, -50.0)
        b[k % 3] = 50.0
        net.params[f"b{len(net.layer_dims) - 2}"][...] = b
    assert np.allclose(matrix_game_returns(pop, 5), 5 * MATRIX_PAYOFF)


def test_population_checkpoint_round_trip():
    pop = _pop(K=3, seed=2)
    pop2, meta = Population.from_bytes(pop.to_bytes({"seed": 2}))
    assert meta["seed"] == 2
    for k, v in pop.tensors().items():
        assert v.tobytes() == pop2.tensors()[k].tobytes()


def test_metrics_csv_round_trip():
    sched = TrainSchedule(total_steps=400, n_threads=8, hidden=(8,))
    res = train_population(MATRIX, sched, 2, seed=1)
    rows = metrics_from_csv(res.metrics_csv())
    assert len(rows) == len(res.metrics)
    assert rows[-1]["slack_min"] == res.metrics[-1]["slack_min"]
    assert set(rows[0]) >= {"alpha1_01", "alpha2_10", "entropy", "sp_return"}


def test_dominant_actions_average_over_rounds():
    pop = _pop(K=1)
    net = pop.teammates[0]
    last = len(net.layer_dims) - 2
    net.params[f"W{last}"][...] = 0.0
    net.params[f"b{last}"][...] = [0.0, 5.0, 0.0]
    assert dominant_actions(pop.teammates, 5) == [1]
