"""End-to-end acceptance checks, one test per criterion, at desk scale.

Each test prints a single PASS/FAIL line (repeated in the terminal summary).
The long-running ones train real populations and agents; expect ~45 minutes
on one core for the whole file.
"""

import json
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from conftest import central_difference, random_coordinates, record_acceptance, relative_error
from mcsforge import cli
from mcsforge.aht import (
    EvalSuite, MirrorOracleAgent, OracleMatrixAgent, evaluate_robustness, heuristic_pool, identification_gain,
    train_aht,
)
from mcsforge.approx import Mlp, RecurrentNet
from mcsforge.config import load_config
from mcsforge.diversity import LagrangeSet, brdiv_objective, constraint_slacks, lipo_objective, pair_weight
from mcsforge.envs import MATRIX_PAYOFF, WEIGHTED_REACH_PAYOFF, EnvSpec
from mcsforge.marl import (
    Population, RolloutBatch, TrainSchedule, dominant_actions, matrix_game_returns, policy_update, train_population,
)
from mcsforge.mcs_oracle import exact_return_matrix, minimal_coverage_sets, policy_universe

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
MATRIX = EnvSpec("RepeatedMatrix")
HORIZON = MATRIX.make().horizon
FIG_7B = np.array([[10, 0, 0], [0, 6, 6], [0, 6, 6]])
FIG_8B = np.array([[10, 10, 0, 0], [10, 10, 0, 0], [0, 0, 10, 10], [0, 0, 10, 10]])
SEEDS = [0, 1, 2, 3]


def _teammate_actions(pop):
    return dominant_actions(pop.teammates, HORIZON)


# 1 -------------------------------------------------------------------------


def test_criterion_1_objective_tables_exact():
    t0 = time.perf_counter()
    tables = [(MATRIX_PAYOFF, 22, 56, 22, -16), (FIG_7B, 22, 64, 22, -12),
              (WEIGHTED_REACH_PAYOFF, 36, 120, 36, -48), (FIG_8B, 40, 160, 40, -40)]
    bad = []
    for R, bc, bs, lc, ls in tables:
        exact = [[Fraction(int(x)) for x in row] for row in R]
        for a in (Fraction(1, 10), Fraction(1, 2), Fraction(1), Fraction(5)):
            if brdiv_objective(exact, a) != bc + bs * a or lipo_objective(exact, a) != lc + ls * a:
                bad.append((R.shape, a))
    secs = time.perf_counter() - t0
    ok = record_acceptance(1, not bad and secs < 1, f"32 table entries exact, {secs:.3f}s, mismatches={bad}")
    assert ok


# 2 -------------------------------------------------------------------------


def test_criterion_2_minimal_coverage_sets():
    t0 = time.perf_counter()
    U = policy_universe("RepeatedMatrix")
    matrix_sets = minimal_coverage_sets(U, exact_return_matrix(U))
    W = policy_universe(EnvSpec("WeightedCoopReach"))
    reach_sets = minimal_coverage_sets(W, exact_return_matrix(W))
    secs = time.perf_counter() - t0
    ok = matrix_sets == [(0, 1, 2)] and reach_sets == [(0, 1, 2, 3)] and secs < 10
    assert record_acceptance(2, ok, f"matrix {matrix_sets}, weighted reaching {reach_sets}, {secs:.1f}s")


# 3 -------------------------------------------------------------------------


def _max_mlp_error(hidden, in_dim, head, rng):
    out = 5 if head == "softmax_logits" else 1
    net = Mlp([in_dim, *hidden, out], head, rng=rng, out_scale=1.0)
    x = rng.normal(size=(3, in_dim))
    w = rng.normal(size=net(x).shape)
    _, tape = net.forward(x)
    grads, _ = net.backward(tape, w)
    loss = lambda: float((net(x) * w).sum())
    return max(relative_error(grads[k][i], central_difference(loss, net.params, k, i))
               for k, i in random_coordinates(net.params, 100, rng))


def _max_bptt_error(rng):
    net = RecurrentNet(6, 8, 3, rng=rng)
    xs = rng.normal(size=(6, 2, 6))
    w = rng.normal(size=net.forward_seq(xs)[0].shape)
    _, tapes = net.forward_seq(xs)
    grads, _, _ = net.backward_seq(tapes, w)
    loss = lambda: float((net.forward_seq(xs)[0] * w).sum())
    return max(relative_error(grads[k][i], central_difference(loss, net.params, k, i))
               for k, i in random_coordinates(net.params, 100, rng))


def test_criterion_3_gradients():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    envs = {"RepeatedMatrix": (32, 32), "CoopReach": (128, 256, 256, 128), "LBF": (128, 128)}
    mlp = max(_max_mlp_error(h, EnvSpec(e).make().obs_dim, head, rng)
              for e, h in envs.items() for head in ("softmax_logits", "scalar"))
    bptt = _max_bptt_error(rng)
    secs = time.perf_counter() - t0
    ok = mlp < 1e-4 and bptt < 1e-3 and secs < 60
    assert record_acceptance(3, ok, f"MLP max rel err {mlp:.2e}, BPTT {bptt:.2e}, {secs:.0f}s")


# 4 -------------------------------------------------------------------------


def test_criterion_4_lbrdiv_discovers_all_three_actions():
    t0 = time.perf_counter()
    rows = []
    for seed in SEEDS:
        res = train_population(MATRIX, TrainSchedule(total_steps=200_000), 3, seed, "lbrdiv", tau=1.0)
        perm = sorted(_teammate_actions(res.population)) == [0, 1, 2]
        alpha = max(res.multipliers.alpha1.max(), res.multipliers.alpha2.max())
        s1, s2 = constraint_slacks(matrix_game_returns(res.population, HORIZON), 1.0)
        slack = min(s1.min(), s2.min())
        rows.append((seed, perm, float(alpha), float(slack)))
    good = sum(p and a < 0.05 and s >= -0.1 for _, p, a, s in rows)
    secs = time.perf_counter() - t0
    detail = "; ".join(f"seed{s} perm={p} max_alpha={a:.3f} min_slack={m:.2f}" for s, p, a, m in rows)
    ok = good >= 3 and secs < 15 * 60
    assert record_acceptance(4, ok, f"{good}/4 seeds meet all conditions ({secs:.0f}s): {detail}")


# 5 -------------------------------------------------------------------------


def test_criterion_5_baselines_find_at_most_two_actions():
    t0 = time.perf_counter()
    identity = HORIZON * MATRIX_PAYOFF
    summary, dominance = [], True
    majority = True
    for method, alpha, objective in (("brdiv", 1.0, brdiv_objective), ("lipo", 0.5, lipo_objective)):
        narrow = 0
        for seed in SEEDS:
            res = train_population(MATRIX, TrainSchedule(total_steps=200_000), 3, seed, method, alpha=alpha)
            n_actions = len(set(_teammate_actions(res.population)))
            summary.append(f"{method}{seed}:{n_actions}")
            if n_actions <= 2:
                narrow += 1
                R = matrix_game_returns(res.population, HORIZON)
                dominance &= bool(objective(R, alpha) > objective(identity, alpha))
        majority &= narrow > len(SEEDS) / 2
    secs = time.perf_counter() - t0
    ok = majority and dominance and secs < 15 * 60
    assert record_acceptance(5, ok, f"distinct actions {' '.join(summary)}; dominance={dominance} ({secs:.0f}s)")


# 6 -------------------------------------------------------------------------


def _batch(n, rng, pair):
    obs = np.zeros((n, 1))
    acts = rng.integers(3, size=n)
    logp = np.log(np.full(n, 1 / 3))
    return RolloutBatch(pair=pair, obs_a=obs, obs_b=obs, act_a=acts, act_b=acts[::-1].copy(), logp_a=logp,
                        logp_b=logp, reward=rng.normal(size=n), done=np.ones(n, dtype=bool), next_obs_a=obs,
                        next_obs_b=obs, start_obs_a=obs[:1], start_obs_b=obs[:1])


def test_criterion_6_weighted_advantage_semantics():
    rng = np.random.default_rng(6)
    pop = Population(3, 1, 3, (8,), np.random.default_rng(0))
    zero_w = pair_weight(LagrangeSet(3), 0, 2)
    before = {k: v.tobytes() for k, v in pop.tensors().items() if k.startswith(("aht", "tm"))}
    policy_update(pop, _batch(64, rng, (0, 2)), zero_w, 0.0, TrainSchedule(), rng)
    unchanged = all(pop.tensors()[k].tobytes() == v for k, v in before.items())

    deltas = []
    for w in (1.0, -1.0):
        p = Population(1, 1, 3, (8,), np.random.default_rng(0))
        n = 32
        b = _batch(n, np.random.default_rng(1), (0, 0))
        b.act_a[:] = 0
        before0 = p.aht[0](np.zeros(1))[0]
        policy_update(p, b, w, 0.0, TrainSchedule(epochs=1, n_minibatches=1), np.random.default_rng(0),
                      adv=np.ones(n))
        deltas.append(p.aht[0](np.zeros(1))[0] - before0)
    flips = deltas[0] > 0 > deltas[1]
    ok = zero_w == 0.0 and unchanged and flips
    assert record_acceptance(6, ok, f"zero-multiplier weight={zero_w}, bitwise unchanged={unchanged}, "
                                    f"prob deltas {deltas[0]:+.2e}/{deltas[1]:+.2e}")


# 7 -------------------------------------------------------------------------


def _ceiling_ok(agent_rep, oracle_rep):
    """Agent never above the oracle beyond overlapping 95% intervals."""
    for h, (m, se, _) in agent_rep.per_heuristic.items():
        om, ose, _ = oracle_rep.per_heuristic[h]
        if m - 1.96 * se > om + 1.96 * ose:
            return False
    return True


def _gain_ok(per_episode, stderr):
    """Episode means non-decreasing in the episode index, up to sampling noise."""
    steps = np.diff(per_episode)
    noise = 2 * np.sqrt(stderr[1:] ** 2 + stderr[:-1] ** 2)
    return bool((steps >= -noise).all())


def _episode_stats(agent, pool, env, M, n, seed):
    from mcsforge.aht import run_meta_episodes

    rets = run_meta_episodes(agent, pool, env, M, np.random.default_rng(seed), n=n).episode_returns
    return rets.mean(axis=0), rets.std(axis=0, ddof=1) / np.sqrt(n)


def _train_from_config(name, seeds):
    cfg = load_config(CONFIGS / name)
    sched = cli.aht_schedule(cfg)
    env = cfg.env.spec()
    pool = heuristic_pool(env, cfg.aht.teammates)
    return cfg, env, pool, [train_aht(pool, env, sched, s).agent for s in seeds]


@pytest.fixture(scope="module")
def matrix_agents():
    t0 = time.perf_counter()
    cfg, env, pool, agents = _train_from_config("desk_matrix_aht.json", SEEDS)
    return cfg, env, pool, agents, time.perf_counter() - t0


def test_criterion_7_aht_matrix_robustness(matrix_agents):
    cfg, env, pool, agents, train_secs = matrix_agents
    t0 = time.perf_counter()
    suite = EvalSuite(env, ["H1", "H2", "H3", "H4", "H5", "H6"], episodes_per_teammate=200)
    rep = evaluate_robustness(agents, suite, [1000 + s for s in SEEDS])
    secs = train_secs + time.perf_counter() - t0
    overall, h1 = rep.per_step(), rep.per_step("H1")
    per_h = ", ".join(f"{h}={rep.per_step(h):.2f}" for h in suite.teammates)
    ok = overall >= 6.0 and h1 >= 9.0 and secs < 20 * 60
    assert record_acceptance("7a", ok, f"matrix per-step overall {overall:.3f} (CI {rep.ci[0] / HORIZON:.2f}.."
                                       f"{rep.ci[1] / HORIZON:.2f}), {per_h}; {secs:.0f}s")


def test_criterion_7_matrix_properties(matrix_agents):
    cfg, env, pool, agents, _ = matrix_agents
    gains = [_gain_ok(*_episode_stats(a, pool, env, cfg.aht.meta_episodes, 600, 77)) for a in agents]
    suite = EvalSuite(env, ["H1", "H2", "H3", "H4", "H5", "H6"], episodes_per_teammate=200)
    oracle = evaluate_robustness(OracleMatrixAgent(), suite, [5])
    ceilings = [_ceiling_ok(evaluate_robustness(a, suite, [2000 + k]), oracle) for k, a in enumerate(agents)]
    curve = identification_gain(agents[0], pool, env, cfg.aht.meta_episodes, 600, seed=77) / HORIZON
    ok = all(gains) and all(ceilings)
    assert record_acceptance("7b", ok, f"matrix identification gain per seed {gains} (seed 0 per-episode "
                                       f"{np.round(curve, 2).tolist()}), oracle ceiling {ceilings}")


def test_criterion_7_reaching_properties():
    t0 = time.perf_counter()
    cfg, env, pool, (agent,) = _train_from_config("desk_reach_aht.json", [0])
    gain_mean, gain_se = _episode_stats(agent, pool, env, cfg.aht.meta_episodes, 600, 77)
    gain = _gain_ok(gain_mean, gain_se)
    suite = EvalSuite(env, list(cfg.aht.teammates), episodes_per_teammate=100)
    rep = evaluate_robustness(agent, suite, [1000])
    oracle = evaluate_robustness(MirrorOracleAgent(env), suite, [5])
    ceiling = _ceiling_ok(rep, oracle)
    secs = time.perf_counter() - t0
    ok = gain and ceiling
    assert record_acceptance("7c", ok, f"5x5 reaching at {cfg.aht.total_steps:.0e} steps: per-episode "
                                       f"{np.round(gain_mean, 3).tolist()} gain={gain}, agent {rep.overall:.3f} "
                                       f"vs oracle {oracle.overall:.3f} ceiling={ceiling}; {secs:.0f}s")


# 8 -------------------------------------------------------------------------


def test_criterion_8_rerun_is_bitwise_identical(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    cfg = {"env": {"id": "RepeatedMatrix"}, "generation": {"total_steps": 4000},
           "aht": {"total_steps": 3000, "teammates": ["H1", "H2", "H3"]}, "runtime": {"seeds": [3]}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    codes = [cli.main(["generate", "--config", str(path), "--out", str(first)]),
             cli.main(["train-aht", "--config", str(path), "--out", str(first)])]
    gen = first / "generate" / "RepeatedMatrix-lbrdiv-seed3"
    aht = first / "train-aht" / "RepeatedMatrix-seed3"
    codes += [cli.main(["rerun", str(gen), "--out", str(second)]), cli.main(["rerun", str(aht), "--out", str(second)])]
    same = [(gen / "metrics.csv").read_bytes() == (second / gen.relative_to(first) / "metrics.csv").read_bytes(),
            (aht / "curve.csv").read_bytes() == (second / aht.relative_to(first) / "curve.csv").read_bytes()]
    ok = codes == [0, 0, 0, 0] and all(same)
    assert record_acceptance(8, ok, f"exit codes {codes}; metrics.csv identical={same[0]}, curve.csv identical={same[1]}")
