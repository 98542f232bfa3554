"""Adaptive ad hoc teamwork agent (recurrent meta-learner) and its evaluation.

A meta-episode is ``M`` consecutive episodes against one fixed teammate; the
agent's recurrent state survives episode boundaries inside it and is zeroed
when a new teammate is drawn.  Per-step agent input is
``[obs, one-hot previous own action, previous reward, episode-start flag]``.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .approx import Adam, LSTMCell, Mlp, prefixed, tensors_from_bytes, tensors_to_bytes, unprefixed
from .envs import MATRIX_HEURISTICS, MATRIX_PAYOFF, ConfigurationError, EnvId, EnvSpec, HeuristicTeammate
from .marl import DivergenceError, NetPolicy, _sample, max_return


@dataclass
class AhtSchedule:
    total_steps: int = 1_000_000
    n_threads: int = 16
    meta_episodes: int = 5  # M
    clip: float = 0.2
    epochs: int = 4
    n_minibatches: int = 4
    w_ent: float = 1e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    lr: float = 1e-4
    value_coef: float = 0.5
    max_grad_norm: float | None = 0.5
    hidden: tuple = (32, 32)
    rep_dim: int = 16  # L_rep
    bptt: int | None = None  # None: whole meta-episode
    reward_scale: float | None = None

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.meta_episodes < 1 or self.n_threads < 1:
            raise ValueError("meta_episodes and n_threads must be positive")


class AhtAgent:
    """Feed-forward trunk -> LSTM (width ``rep_dim``) -> policy and value heads."""

    def __init__(self, obs_dim, n_actions, hidden=(32, 32), rep_dim=16, rng=None, lr=1e-4, max_grad_norm=0.5,
                 reward_input_scale=1.0):
        rng = rng or np.random.default_rng(0)
        # previous reward enters the trunk at the training reward scale
        self.reward_input_scale = float(reward_input_scale)
        self.obs_dim = int(obs_dim)
        self.n_actions = int(n_actions)
        self.hidden = tuple(hidden)
        self.rep_dim = int(rep_dim)
        self.input_dim = self.obs_dim + self.n_actions + 2
        self.trunk = Mlp([self.input_dim, *self.hidden], head="features", rng=rng)
        self.cell = LSTMCell(self.hidden[-1], self.rep_dim, rng)
        self.pi = Mlp([self.rep_dim, self.n_actions], head="softmax_logits", rng=rng)
        self.v = Mlp([self.rep_dim, 1], head="scalar", rng=rng)
        self.opt = Adam(lr, max_grad_norm=max_grad_norm)

    parts = ("trunk", "cell", "pi", "v")

    @property
    def params(self) -> dict:
        out = {}
        for name in self.parts:
            out.update({f"{name}.{k}": v for k, v in getattr(self, name).params.items()})
        return out

    def _split(self, flat: dict) -> dict:
        out = {name: {} for name in self.parts}
        for k, v in flat.items():
            owner, key = k.split(".", 1)
            out[owner][key] = v
        return out

    def zero_state(self, batch):
        return self.cell.zero_state(batch)

    def make_input(self, obs, prev_action, prev_reward, boundary) -> np.ndarray:
        obs = np.atleast_2d(obs)
        B = obs.shape[0]
        onehot = np.zeros((B, self.n_actions))
        valid = prev_action >= 0
        onehot[np.flatnonzero(valid), prev_action[valid]] = 1.0
        r = np.asarray(prev_reward, float)[:, None] * self.reward_input_scale
        return np.concatenate([obs, onehot, r,
                               np.asarray(boundary, float)[:, None]], axis=1)

    def step(self, x, state):
        """One recurrent step on a batch: returns ``(probs, value, new_state)``."""
        f = self.trunk(x)
        h, c = self.cell.step(f, state)
        return self.pi(h), self.v(h), (h, c)

    def forward_seq(self, xs, h0, c0):
        T, B, D = xs.shape
        f, ttape = self.trunk.forward(xs.reshape(T * B, D))
        hs, stape = self.cell.forward_seq(f.reshape(T, B, -1), h0, c0)
        flat = hs.reshape(T * B, -1)
        probs, ptape = self.pi.forward(flat)
        vals, vtape = self.v.forward(flat)
        return probs.reshape(T, B, -1), vals.reshape(T, B), (ttape, stape, ptape, vtape)

    def backward_seq(self, tapes, dlogits, dvals) -> dict:
        ttape, stape, ptape, vtape = tapes
        T, B = dvals.shape
        gp, dh1 = self.pi.backward(ptape, dlogits.reshape(T * B, -1), wrt_logits=True)
        gv, dh2 = self.v.backward(vtape, dvals.reshape(T * B))
        gc, df, _ = self.cell.backward_seq(stape, (dh1 + dh2).reshape(T, B, -1))
        gt, _ = self.trunk.backward(ttape, df.reshape(T * B, -1))
        grads = {}
        for name, g in (("trunk", gt), ("cell", gc), ("pi", gp), ("v", gv)):
            grads.update({f"{name}.{k}": v for k, v in g.items()})
        return grads

    def apply(self, grads: dict):
        flat = self.params
        self.opt.step(flat, grads)
        for name, p in self._split(flat).items():
            getattr(self, name).params.update(p)

    # -- the evaluation protocol shared with scripted agents -----------------

    def start(self, teammate_ids):
        return self.zero_state(len(teammate_ids))

    def act(self, obs, prev_action, prev_reward, boundary, state, rng, greedy=False):
        probs, _, state = self.step(self.make_input(obs, prev_action, prev_reward, boundary), state)
        a = np.argmax(probs, axis=1) if greedy else _sample(probs, rng)
        return a, state

    # -- persistence ---------------------------------------------------------

    def meta(self) -> dict:
        return {"kind": "aht_agent", "obs_dim": self.obs_dim, "n_actions": self.n_actions,
                "hidden": list(self.hidden), "rep_dim": self.rep_dim, "cell": "lstm",
                "reward_input_scale": self.reward_input_scale}

    def to_bytes(self, extra_meta=None) -> bytes:
        meta = self.meta()
        meta.update(extra_meta or {})
        out = {}
        for name in self.parts:
            out.update(prefixed(name, getattr(self, name).params))
        return tensors_to_bytes(out, meta)

    @classmethod
    def from_bytes(cls, data: bytes):
        tensors, meta = tensors_from_bytes(data)
        agent = cls(meta["obs_dim"], meta["n_actions"], tuple(meta["hidden"]), meta["rep_dim"],
                    reward_input_scale=meta.get("reward_input_scale", 1.0))
        for name in cls.parts:
            getattr(agent, name).params = unprefixed(name, tensors)
        return agent, meta


# ---------------------------------------------------------------------------
# scripted reference agents


class OracleMatrixAgent:
    """Knows the matrix-game heuristic it faces and plays the best response."""

    def start(self, teammate_ids):
        best = []
        for h in teammate_ids:
            mix = np.asarray(MATRIX_HEURISTICS[h])
            best.append(int(np.argmax(MATRIX_PAYOFF @ mix)))
        return np.array(best)

    def act(self, obs, prev_action, prev_reward, boundary, state, rng, greedy=False):
        return state.copy(), state


class MirrorOracleAgent:
    """Plays a copy of the heuristic it faces.

    Against fixed-destination teammates (reaching H8-H11, foraging H3-H8) the
    copy heads for the same target by the shortest route, which is the best
    response.  For the other heuristics it is only a reference point.
    """

    def __init__(self, env_spec: EnvSpec):
        self.env_spec = env_spec

    def start(self, teammate_ids):
        return [HeuristicTeammate(self.env_spec.id, h, grid_dim=self.env_spec.grid_dim) for h in teammate_ids]

    def act(self, obs, prev_action, prev_reward, boundary, state, rng, greedy=False):
        acts = np.empty(len(state), dtype=int)
        for b, copy in enumerate(state):
            if boundary[b]:
                copy.reset(np.random.default_rng(rng.integers(2**63)))
            acts[b] = copy.act(obs[b])
        return acts, state


class UniformAgent:
    def __init__(self, n_actions):
        self.n_actions = n_actions

    def start(self, teammate_ids):
        return None

    def act(self, obs, prev_action, prev_reward, boundary, state, rng, greedy=False):
        return rng.integers(self.n_actions, size=np.atleast_2d(obs).shape[0]), state


def matrix_best_response_values() -> dict:
    """Per-step best-response payoff against each matrix-game heuristic."""
    return {h: float((MATRIX_PAYOFF @ np.asarray(p)).max()) for h, p in MATRIX_HEURISTICS.items()}


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class MetaBatch:
    """Time-major arrays of shape (T, B); ``mask`` marks real steps."""

    inputs: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    mask: np.ndarray
    episode_index: np.ndarray
    h_states: np.ndarray  # (T, B, H) hidden before each step
    c_states: np.ndarray
    episode_returns: np.ndarray  # (B, M)
    teammates: list = field(default_factory=list)


class TeammatePool:
    """Teammate policies addressable by index, batched where possible."""

    def __init__(self, members: list, names: list[str] | None = None):
        if not members:
            raise ConfigurationError("the training teammate set is empty")
        self.members = members
        self.names = names or [str(k) for k in range(len(members))]

    def __len__(self):
        return len(self.members)


def heuristic_pool(env_spec: EnvSpec, ids=None, seed=0) -> TeammatePool:
    from .envs import HEURISTIC_IDS

    env_id = EnvId(env_spec.id)
    ids = list(ids or HEURISTIC_IDS[env_id])
    return TeammatePool([("heuristic", h) for h in ids], ids)


def population_pool(pop, names=None) -> TeammatePool:
    return TeammatePool([("net", net) for net in pop.teammates],
                        names or [f"tm{k}" for k in range(pop.K)])


def _make_teammate(member, env_spec: EnvSpec, rng):
    kind, obj = member
    if kind == "heuristic":
        return HeuristicTeammate(env_spec.id, obj, grid_dim=env_spec.grid_dim,
                                 rng_seed=int(rng.integers(2**63)))
    if kind == "net":
        return NetPolicy(obj)
    return obj  # any object with reset/act


def run_meta_episodes(agent, pool: TeammatePool, env_spec: EnvSpec, M: int, rng: np.random.Generator,
                      teammate_idx=None, n: int | None = None, greedy=False) -> MetaBatch:
    """Play ``n`` meta-episodes in lockstep, one teammate per meta-episode."""
    if teammate_idx is None:
        teammate_idx = rng.integers(len(pool), size=n)
    teammate_idx = np.asarray(teammate_idx)
    B = len(teammate_idx)
    envs = [env_spec.make() for _ in range(B)]
    mates = [_make_teammate(pool.members[k], env_spec, rng) for k in teammate_idx]
    names = [pool.names[k] for k in teammate_idx]
    for m in mates:
        m.reset(np.random.default_rng(rng.integers(2**63)))
    obs = [e.reset(int(rng.integers(2**63))) for e in envs]
    state = agent.start(names)
    recurrent = isinstance(agent, AhtAgent)
    prev_a = np.full(B, -1)
    prev_r = np.zeros(B)
    boundary = np.ones(B)
    ep_idx = np.zeros(B, dtype=int)
    ep_ret = np.zeros((B, M))
    active = np.ones(B, dtype=bool)
    rec = {k: [] for k in ("inputs", "actions", "logp", "values", "rewards", "mask", "episode_index",
                           "h_states", "c_states")}
    while active.any():
        oa = np.stack([o.obs_a for o in obs])
        if recurrent:
            x = agent.make_input(oa, prev_a, prev_r, boundary)
            rec["h_states"].append(state[0].copy())
            rec["c_states"].append(state[1].copy())
            probs, vals, state = agent.step(x, state)
            acts = np.argmax(probs, axis=1) if greedy else _sample(probs, rng)
            rec["inputs"].append(x)
            rec["logp"].append(np.log(probs[np.arange(B), acts]))
            rec["values"].append(vals)
        else:
            acts, state = agent.act(oa, prev_a, prev_r, boundary, state, rng, greedy)
        rew = np.zeros(B)
        rec["mask"].append(active.copy())
        rec["episode_index"].append(ep_idx.copy())
        rec["actions"].append(np.asarray(acts))
        new_boundary = np.zeros(B)
        for b in np.flatnonzero(active):
            jo, r, done = envs[b].step(int(acts[b]), mates[b].act(obs[b].obs_b))
            rew[b] = r
            ep_ret[b, ep_idx[b]] += r
            if done:
                ep_idx[b] += 1
                if ep_idx[b] >= M:
                    active[b] = False
                else:
                    mates[b].reset(np.random.default_rng(rng.integers(2**63)))
                    jo = envs[b].reset(int(rng.integers(2**63)))
                    new_boundary[b] = 1.0
            obs[b] = jo
        rec["rewards"].append(rew)
        prev_a = np.asarray(acts).copy()
        prev_r = rew
        boundary = new_boundary
    if not recurrent:
        T = len(rec["mask"])
        for k in ("inputs", "logp", "values", "h_states", "c_states"):
            rec[k] = [np.zeros((B, 0))] * T
    arrs = {k: np.stack(v) for k, v in rec.items()}
    return MetaBatch(episode_returns=ep_ret, teammates=names, **arrs)


def meta_rollout(agent, teammate, env_spec: EnvSpec, M: int, seed: int = 0, greedy=False) -> MetaBatch:
    """A single meta-episode with ``teammate`` (heuristic id, network or policy object)."""
    if isinstance(teammate, str):
        member = ("heuristic", teammate)
    elif isinstance(teammate, Mlp):
        member = ("net", teammate)
    else:
        member = ("object", teammate)
    pool = TeammatePool([member], [teammate if isinstance(teammate, str) else "teammate"])
    return run_meta_episodes(agent, pool, env_spec, M, np.random.default_rng(seed), teammate_idx=[0], greedy=greedy)


# ---------------------------------------------------------------------------
# training


def _gae(rewards, values, mask, gamma, lam):
    T, B = rewards.shape
    adv = np.zeros((T, B))
    last = np.zeros(B)
    for t in reversed(range(T)):
        nxt = values[t + 1] * mask[t + 1] if t + 1 < T else np.zeros(B)
        delta = rewards[t] + gamma * nxt - values[t]
        last = delta + gamma * lam * last * (mask[t + 1] if t + 1 < T else 0.0)
        adv[t] = last * mask[t]
    return adv


def ppo_recurrent_update(agent: AhtAgent, batch: MetaBatch, sched: AhtSchedule, rng, scale: float) -> dict:
    mask = batch.mask.astype(float)
    rewards = batch.rewards * scale
    adv = _gae(rewards, batch.values, mask, sched.gamma, sched.gae_lambda)
    returns = adv + batch.values
    valid = mask > 0
    a_norm = (adv - adv[valid].mean()) / (adv[valid].std() + 1e-8) * mask
    T, B = mask.shape
    window = sched.bptt or T
    chunks = [(s, min(s + window, T)) for s in range(0, T, window)]
    groups = np.array_split(np.arange(B), min(sched.n_minibatches, B))
    stats_ = {"value_loss": 0.0}
    for _ in range(sched.epochs):
        for g in rng.permutation(len(groups)):
            cols = groups[g]
            for s, e in chunks:
                m = mask[s:e, cols]
                n = m.sum()
                if n == 0:
                    continue
                probs, vals, tapes = agent.forward_seq(batch.inputs[s:e, cols],
                                                       batch.h_states[s, cols], batch.c_states[s, cols])
                acts = batch.actions[s:e, cols]
                ti, bi = np.indices(acts.shape)
                logp = np.log(probs[ti, bi, acts])
                ratio = np.exp(logp - batch.logp[s:e, cols])
                A = a_norm[s:e, cols]
                clipped = ((A > 0) & (ratio > 1 + sched.clip)) | ((A < 0) & (ratio < 1 - sched.clip))
                coef = np.where(clipped, 0.0, A * ratio) * m / n
                onehot = np.zeros_like(probs)
                onehot[ti, bi, acts] = 1.0
                dlogits = -coef[..., None] * (onehot - probs)
                if sched.w_ent:
                    lp = np.log(probs)
                    H = -(probs * lp).sum(axis=-1, keepdims=True)
                    dlogits += sched.w_ent * probs * (lp + H) * (m / n)[..., None]
                err = (vals - returns[s:e, cols]) * m
                dvals = sched.value_coef * 2.0 * err / n
                stats_["value_loss"] = float((err ** 2).sum() / n)
                if not np.isfinite(stats_["value_loss"]):
                    raise DivergenceError("non-finite value loss in AHT training")
                agent.apply(agent.backward_seq(tapes, dlogits, dvals))
    return stats_


def default_reward_scale(env) -> float:
    """Maps the largest single reward to 1."""
    if EnvId(env.env_id) is EnvId.RepeatedMatrix:
        return 1.0 / float(MATRIX_PAYOFF.max())
    return 1.0 / max_return(env)


@dataclass
class AhtTrainResult:
    agent: AhtAgent
    curve: list  # (steps, mean episodic return during collection)
    checkpoints: list = field(default_factory=list)  # (steps, bytes)


def train_aht(pool: TeammatePool, env_spec: EnvSpec, sched: AhtSchedule, seed: int,
              checkpoint_every: int | None = None, callback=None) -> AhtTrainResult:
    if pool is None or len(pool) == 0:
        raise ConfigurationError("the training teammate set is empty")
    rng = np.random.default_rng(seed)
    env = env_spec.make()
    per_episode_max = max_return(env)
    scale = sched.reward_scale if sched.reward_scale is not None else default_reward_scale(env)
    agent = AhtAgent(env.obs_dim, env.n_actions, sched.hidden, sched.rep_dim,
                     np.random.default_rng(rng.integers(2**63)), sched.lr, sched.max_grad_norm, scale)
    limit = 10.0 * per_episode_max * sched.meta_episodes * scale / (1.0 - sched.gamma)
    steps = 0
    curve, ckpts = [], []
    next_ckpt = checkpoint_every
    while steps < sched.total_steps:
        batch = run_meta_episodes(agent, pool, env_spec, sched.meta_episodes, rng, n=sched.n_threads)
        steps += int(batch.mask.sum())
        if np.abs(batch.values).max() > limit:
            raise DivergenceError("AHT value estimates diverged")
        info = ppo_recurrent_update(agent, batch, sched, rng, scale)
        curve.append((steps, float(batch.episode_returns.mean()), info["value_loss"]))
        if next_ckpt is not None and steps >= next_ckpt:
            ckpts.append((steps, agent.to_bytes({"steps": steps})))
            next_ckpt += checkpoint_every
        if callback is not None:
            callback(steps, agent)
    return AhtTrainResult(agent, curve, ckpts)


# ---------------------------------------------------------------------------
# robustness evaluation


@dataclass
class EvalSuite:
    env: EnvSpec
    teammates: list[str]
    episodes_per_teammate: int = 20  # meta-episodes per heuristic
    meta_episodes: int = 5


@dataclass
class RobustnessReport:
    per_heuristic: dict  # id -> (mean episodic return, stderr, n)
    overall: float
    per_seed_overall: list
    ci: tuple
    horizon: int
    checkpoint_step: int | None = None
    note: str = "teammate fixed per meta-episode"

    def per_step(self, h=None) -> float:
        v = self.overall if h is None else self.per_heuristic[h][0]
        return v / self.horizon

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["heuristic_id", "mean_return", "stderr", "n"])
        for h, (m, se, n) in self.per_heuristic.items():
            w.writerow([h, repr(m), repr(se), n])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"overall_mean": self.overall, "ci_low": self.ci[0], "ci_high": self.ci[1],
                           "n_seeds": len(self.per_seed_overall), "per_seed": self.per_seed_overall,
                           "checkpoint_step": self.checkpoint_step, "sampling": self.note}, indent=2)


def t_confidence_interval(values, level=0.95) -> tuple:
    values = np.asarray(values, dtype=float)
    m = float(values.mean())
    if len(values) < 2:
        return m, m
    half = stats.t.ppf(0.5 + level / 2, len(values) - 1) * values.std(ddof=1) / np.sqrt(len(values))
    return m - half, m + half


def evaluate_robustness(agents, suite: EvalSuite, seeds, greedy=False, checkpoint_step=None) -> RobustnessReport:
    """Mean episodic return per heuristic; overall is uniform over heuristics.

    ``agents`` is one agent or one agent per training seed; ``seeds`` seed the
    evaluation rollouts of the corresponding agent.
    """
    seeds = list(seeds)
    if not isinstance(agents, (list, tuple)):
        agents = [agents] * len(seeds)
    if len(agents) != len(seeds):
        raise ValueError("need one evaluation seed per agent")
    pool = heuristic_pool(suite.env, suite.teammates)
    per_h = {h: [] for h in suite.teammates}
    per_seed = []
    for agent, seed in zip(agents, seeds):
        rng = np.random.default_rng(seed)
        idx = np.repeat(np.arange(len(pool)), suite.episodes_per_teammate)
        batch = run_meta_episodes(agent, pool, suite.env, suite.meta_episodes, rng, teammate_idx=idx, greedy=greedy)
        seed_means = []
        for k, h in enumerate(suite.teammates):
            rets = batch.episode_returns[idx == k].ravel()
            per_h[h].append(rets)
            seed_means.append(rets.mean())
        per_seed.append(float(np.mean(seed_means)))
    table = {}
    for h, chunks in per_h.items():
        r = np.concatenate(chunks)
        table[h] = (float(r.mean()), float(r.std(ddof=1) / np.sqrt(len(r))) if len(r) > 1 else 0.0, int(len(r)))
    overall = float(np.mean([v[0] for v in table.values()]))
    horizon = suite.env.make().horizon
    return RobustnessReport(table, overall, per_seed, t_confidence_interval(per_seed), horizon, checkpoint_step)


def identification_gain(agent, pool: TeammatePool, env_spec: EnvSpec, M: int, n: int, seed: int = 0) -> np.ndarray:
    """Mean return of each episode index within a meta-episode."""
    batch = run_meta_episodes(agent, pool, env_spec, M, np.random.default_rng(seed), n=n)
    return batch.episode_returns.mean(axis=0)
