"""Population training: paired rollouts, a pair-conditioned critic, weighted
clipped-surrogate policy updates and projected multiplier descent.

Pair convention: ``(i, j)`` means teammate ``i`` (seat b) plays with AHT-side
policy ``j`` (seat a).  All indices are 0-based.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import diversity
from .approx import Adam, Mlp, prefixed, tensors_from_bytes, tensors_to_bytes, unprefixed
from .diversity import LagrangeSet
from .envs import EnvId, EnvSpec, LBF_ITEM_REWARD, MATRIX_PAYOFF, WEIGHTED_REACH_PAYOFF

log = logging.getLogger(__name__)


class DivergenceError(FloatingPointError):
    """Training produced values outside any achievable range."""


@dataclass
class TrainSchedule:
    total_steps: int = 200_000
    n_threads: int = 40
    t_update: int = 2
    t_lagrange: int = 10
    clip: float = 0.2
    epochs: int = 4
    n_minibatches: int = 4
    w_ent: float = 1e-3
    gamma: float = 0.99
    lr_pi: float = 1e-3
    lr_v: float = 1e-3
    lr_alpha: float = 0.05
    target_sync: int = 200
    max_grad_norm: float | None = 0.5
    hidden: tuple = (32, 32)
    metrics_every: int = 1
    # "pair" updates the data-generating teammate; "literal" updates teammate j
    teammate_update: str = "pair"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        for name in ("total_steps", "n_threads", "t_update", "t_lagrange", "epochs", "n_minibatches", "target_sync"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.teammate_update not in ("pair", "literal"):
            raise ValueError("teammate_update must be 'pair' or 'literal'")

    @property
    def batch_size(self) -> int:
        return self.n_threads * self.t_update

    @property
    def n_updates(self) -> int:
        return max(1, self.total_steps // self.batch_size)


def max_return(env) -> float:
    env_id = EnvId(env.env_id)
    if env_id is EnvId.RepeatedMatrix:
        return float(MATRIX_PAYOFF.max() * env.horizon)
    if env_id is EnvId.CoopReach:
        return 1.0
    if env_id is EnvId.WeightedCoopReach:
        return float(WEIGHTED_REACH_PAYOFF.max())
    return LBF_ITEM_REWARD * env.n_items


# ---------------------------------------------------------------------------
# population


class Population:
    """K AHT-side policies, K teammates and one critic conditioned on the pair."""

    def __init__(self, K, obs_dim, n_actions, hidden=(32, 32), rng=None, lr_pi=1e-3, lr_v=1e-3,
                 max_grad_norm=0.5):
        rng = rng or np.random.default_rng(0)
        self.K = int(K)
        self.obs_dim = int(obs_dim)
        self.n_actions = int(n_actions)
        self.hidden = tuple(hidden)
        dims = [self.obs_dim, *self.hidden, self.n_actions]
        self.aht = [Mlp(dims, "softmax_logits", rng=rng) for _ in range(self.K)]
        self.teammates = [Mlp(dims, "softmax_logits", rng=rng) for _ in range(self.K)]
        self.critic = Mlp([2 * self.obs_dim + self.K * self.K, *self.hidden, 1], "scalar", rng=rng)
        self.target_critic = self.critic.copy()
        self.aht_opt = [Adam(lr_pi, max_grad_norm=max_grad_norm) for _ in range(self.K)]
        self.tm_opt = [Adam(lr_pi, max_grad_norm=max_grad_norm) for _ in range(self.K)]
        self.critic_opt = Adam(lr_v, max_grad_norm=max_grad_norm)
        self.critic_updates = 0

    def critic_input(self, obs_a, obs_b, i, j) -> np.ndarray:
        obs_a, obs_b = np.atleast_2d(obs_a), np.atleast_2d(obs_b)
        onehot = np.zeros((obs_a.shape[0], self.K * self.K))
        onehot[:, j * self.K + i] = 1.0
        return np.concatenate([obs_a, obs_b, onehot], axis=1)

    def all_pairs_input(self, obs_a, obs_b) -> np.ndarray:
        """Rows for every (j, i) pair at every state: shape (K*K*S, D), pair-major."""
        obs_a, obs_b = np.atleast_2d(obs_a), np.atleast_2d(obs_b)
        S = obs_a.shape[0]
        eye = np.eye(self.K * self.K)
        base = np.concatenate([obs_a, obs_b], axis=1)
        return np.concatenate([np.tile(base, (self.K * self.K, 1)), np.repeat(eye, S, axis=0)], axis=1)

    def return_estimates(self, obs_a, obs_b) -> np.ndarray:
        """Critic estimate ``R_hat[j, i]`` averaged over the given start states."""
        S = np.atleast_2d(obs_a).shape[0]
        v = self.critic(self.all_pairs_input(obs_a, obs_b)).reshape(self.K * self.K, S).mean(axis=1)
        return v.reshape(self.K, self.K)

    # -- checkpointing -----------------------------------------------------

    def tensors(self) -> dict:
        out = {}
        for k in range(self.K):
            out.update(prefixed(f"aht/{k}", self.aht[k].params))
            out.update(prefixed(f"tm/{k}", self.teammates[k].params))
        out.update(prefixed("critic", self.critic.params))
        out.update(prefixed("target_critic", self.target_critic.params))
        return out

    def meta(self) -> dict:
        return {"kind": "population", "K": self.K, "obs_dim": self.obs_dim,
                "n_actions": self.n_actions, "hidden": list(self.hidden)}

    def to_bytes(self, extra_meta: dict | None = None) -> bytes:
        meta = self.meta()
        meta.update(extra_meta or {})
        return tensors_to_bytes(self.tensors(), meta)

    @classmethod
    def from_bytes(cls, data: bytes) -> tuple["Population", dict]:
        tensors, meta = tensors_from_bytes(data)
        pop = cls(meta["K"], meta["obs_dim"], meta["n_actions"], tuple(meta["hidden"]))
        for k in range(pop.K):
            pop.aht[k].params = unprefixed(f"aht/{k}", tensors)
            pop.teammates[k].params = unprefixed(f"tm/{k}", tensors)
        pop.critic.params = unprefixed("critic", tensors)
        pop.target_critic.params = unprefixed("target_critic", tensors)
        return pop, meta


def sample_pair(K: int, rng: np.random.Generator) -> tuple[int, int]:
    if K == 1:
        return 0, 0
    k = int(rng.integers(K * K))
    return k // K, k % K


# ---------------------------------------------------------------------------
# rollouts


@dataclass
class RolloutBatch:
    pair: tuple
    obs_a: np.ndarray
    obs_b: np.ndarray
    act_a: np.ndarray
    act_b: np.ndarray
    logp_a: np.ndarray
    logp_b: np.ndarray
    reward: np.ndarray
    done: np.ndarray
    next_obs_a: np.ndarray
    next_obs_b: np.ndarray
    start_obs_a: np.ndarray
    start_obs_b: np.ndarray
    episode_returns: list = field(default_factory=list)

    def __len__(self):
        return len(self.reward)


def _sample(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random(probs.shape[0])[:, None]
    a = (probs.cumsum(axis=1) < u).sum(axis=1)
    return np.minimum(a, probs.shape[1] - 1)


class Collector:
    """N persistent environments stepped in lockstep by one worker.

    Episodes run across update boundaries; whichever pair is sampled next
    takes over the running episodes.
    """

    def __init__(self, env_spec: EnvSpec, n_envs: int, rng: np.random.Generator):
        self.spec = env_spec
        self.rng = rng
        self.envs = [env_spec.make() for _ in range(n_envs)]
        self.obs = [e.reset(int(rng.integers(2**63))) for e in self.envs]
        self.ep_return = np.zeros(n_envs)
        self.last_starts = (np.stack([o.obs_a for o in self.obs]), np.stack([o.obs_b for o in self.obs]))

    @property
    def env(self):
        return self.envs[0]

    def collect(self, pop: Population, pair, steps: int) -> RolloutBatch:
        i, j = pair
        n = len(self.envs)
        per_env = steps // n
        if per_env * n != steps:
            raise ValueError(f"steps={steps} must be a multiple of n_envs={n}")
        rows = {k: [] for k in ("obs_a", "obs_b", "act_a", "act_b", "logp_a", "logp_b",
                                "reward", "done", "next_obs_a", "next_obs_b")}
        starts_a, starts_b, ep_returns = [], [], []
        for _ in range(per_env):
            oa = np.stack([o.obs_a for o in self.obs])
            ob = np.stack([o.obs_b for o in self.obs])
            pa, pb = pop.aht[j](oa), pop.teammates[i](ob)
            aa, ab = _sample(pa, self.rng), _sample(pb, self.rng)
            next_a, next_b = np.empty_like(oa), np.empty_like(ob)
            rew, dn = np.empty(n), np.empty(n, dtype=bool)
            for k, env in enumerate(self.envs):
                jo, r, d = env.step(aa[k], ab[k])
                next_a[k], next_b[k] = jo.obs_a, jo.obs_b
                rew[k], dn[k] = r, d
                self.ep_return[k] += r
                if d:
                    ep_returns.append(self.ep_return[k])
                    self.ep_return[k] = 0.0
                    jo = env.reset(int(self.rng.integers(2**63)))
                    starts_a.append(jo.obs_a)
                    starts_b.append(jo.obs_b)
                self.obs[k] = jo
            idx = np.arange(n)
            rows["obs_a"].append(oa)
            rows["obs_b"].append(ob)
            rows["act_a"].append(aa)
            rows["act_b"].append(ab)
            rows["logp_a"].append(np.log(pa[idx, aa]))
            rows["logp_b"].append(np.log(pb[idx, ab]))
            rows["reward"].append(rew)
            rows["done"].append(dn)
            rows["next_obs_a"].append(next_a)
            rows["next_obs_b"].append(next_b)
        if starts_a:
            self.last_starts = (np.stack(starts_a), np.stack(starts_b))
        cat = {k: np.concatenate(v) if v[0].ndim == 1 else np.concatenate(v, axis=0) for k, v in rows.items()}
        return RolloutBatch(pair=(i, j), start_obs_a=self.last_starts[0], start_obs_b=self.last_starts[1],
                            episode_returns=ep_returns, **cat)


def collect(pop: Population, pair, collector: Collector, steps: int) -> RolloutBatch:
    return collector.collect(pop, pair, steps)


# ---------------------------------------------------------------------------
# updates


def _guard(x, what):
    if not np.all(np.isfinite(x)):
        raise DivergenceError(f"non-finite {what}")


def critic_update(pop: Population, batch: RolloutBatch, gamma: float, target_sync: int = 200) -> float:
    """One optimizer step on the squared TD error; returns the loss."""
    i, j = batch.pair
    x = pop.critic_input(batch.obs_a, batch.obs_b, i, j)
    xn = pop.critic_input(batch.next_obs_a, batch.next_obs_b, i, j)
    target = batch.reward + gamma * (1.0 - batch.done) * pop.target_critic(xn)
    v, tape = pop.critic.forward(x)
    err = v - target
    loss = float(np.mean(err ** 2))
    if not np.isfinite(loss):
        raise DivergenceError(f"critic loss is {loss} for pair {batch.pair}")
    grads, _ = pop.critic.backward(tape, 2.0 * err / len(err))
    pop.critic_opt.step(pop.critic.params, grads)
    pop.critic_updates += 1
    if pop.critic_updates % target_sync == 0:
        pop.target_critic = pop.critic.copy()
    return loss


def one_step_advantage(pop: Population, batch: RolloutBatch, gamma: float) -> np.ndarray:
    i, j = batch.pair
    v = pop.critic(pop.critic_input(batch.obs_a, batch.obs_b, i, j))
    vn = pop.critic(pop.critic_input(batch.next_obs_a, batch.next_obs_b, i, j))
    return batch.reward + gamma * (1.0 - batch.done) * vn - v


def ppo_logit_grad(probs, actions, logp_old, adv, clip, ent_coef):
    """d(loss)/d(logits) for the clipped surrogate with an entropy bonus.

    loss = -mean(min(r*A, clip(r)*A)) - ent_coef * mean(H).
    """
    n = len(actions)
    idx = np.arange(n)
    logp = np.log(probs[idx, actions])
    ratio = np.exp(logp - logp_old)
    clipped = ((adv > 0) & (ratio > 1 + clip)) | ((adv < 0) & (ratio < 1 - clip))
    coef = np.where(clipped, 0.0, adv * ratio)
    onehot = np.zeros_like(probs)
    onehot[idx, actions] = 1.0
    g = -(coef[:, None] * (onehot - probs)) / n
    if ent_coef:
        logp_all = np.log(probs)
        H = -(probs * logp_all).sum(axis=1, keepdims=True)
        g += ent_coef * probs * (logp_all + H) / n
    return g


def policy_update(pop: Population, batch: RolloutBatch, weight: float, ent_weight: float,
                  sched: TrainSchedule, rng: np.random.Generator, adv: np.ndarray | None = None) -> dict:
    """Clipped-surrogate update of both seats on the weighted one-step advantage."""
    i, j = batch.pair
    if adv is None:
        adv = one_step_advantage(pop, batch, sched.gamma)
    adv = weight * adv
    _guard(adv, "advantage")
    ent_coef = sched.w_ent * ent_weight
    tm_index = i if sched.teammate_update == "pair" else j
    seats = [(pop.aht[j], pop.aht_opt[j], batch.obs_a, batch.act_a, batch.logp_a),
             (pop.teammates[tm_index], pop.tm_opt[tm_index], batch.obs_b, batch.act_b, batch.logp_b)]
    n = len(batch)
    mb = max(1, n // sched.n_minibatches)
    for _ in range(sched.epochs):
        perm = rng.permutation(n)
        for start in range(0, n, mb):
            sl = perm[start:start + mb]
            for net, opt, obs, act, logp_old in seats:
                probs, tape = net.forward(obs[sl])
                g = ppo_logit_grad(probs, act[sl], logp_old[sl], adv[sl], sched.clip, ent_coef)
                grads, _ = net.backward(tape, g, wrt_logits=True)
                opt.step(net.params, grads)
    return {"adv_mean": float(adv.mean())}


def mean_entropy(pop: Population, batch: RolloutBatch) -> float:
    i, j = batch.pair
    ents = []
    for net, obs in ((pop.aht[j], batch.obs_a), (pop.teammates[i], batch.obs_b)):
        logits_p = net(obs)
        ents.append(-(logits_p * np.log(logits_p)).sum(axis=1).mean())
    return float(np.mean(ents))


# ---------------------------------------------------------------------------
# training loop


def metric_columns(K: int) -> list[str]:
    cols = ["step", "pair_i", "pair_j", "sp_return", "xp_return_mean"]
    offd = [(i, j) for i in range(K) for j in range(K) if i != j]
    cols += [f"alpha1_{i}{j}" for i, j in offd]
    cols += [f"alpha2_{i}{j}" for i, j in offd]
    cols += ["slack_min", "entropy"]
    return cols


@dataclass
class TrainResult:
    population: Population
    multipliers: LagrangeSet
    metrics: list
    method: str
    counters: dict

    def metrics_csv(self) -> str:
        return metrics_to_csv(self.metrics, self.population.K)


def metrics_to_csv(rows, K) -> str:
    buf = io.StringIO()
    cols = metric_columns(K)
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([r[c] if isinstance(r[c], (int, np.integer)) else repr(float(r[c])) for c in cols])
    return buf.getvalue()


def metrics_from_csv(text: str) -> list[dict]:
    out = []
    for r in csv.DictReader(io.StringIO(text)):
        out.append({k: (int(v) if k in ("step", "pair_i", "pair_j") else float(v)) for k, v in r.items()})
    return out


def _metrics_row(step, pair, R_hat, A: LagrangeSet, entropy) -> dict:
    K = A.K
    mask = ~np.eye(K, dtype=bool)
    s1, s2 = diversity.constraint_slacks(R_hat, A.tau)
    row = {"step": int(step), "pair_i": int(pair[0]), "pair_j": int(pair[1]),
           "sp_return": float(np.diag(R_hat).mean()),
           "xp_return_mean": float(R_hat[mask].mean()) if K > 1 else 0.0,
           "slack_min": float(min(s1[mask].min(), s2[mask].min())) if K > 1 else 0.0,
           "entropy": entropy}
    for i in range(K):
        for j in range(K):
            if i != j:
                row[f"alpha1_{i}{j}"] = float(A.alpha1[i, j])
                row[f"alpha2_{i}{j}"] = float(A.alpha2[i, j])
    return row


def train_population(env_spec: EnvSpec, sched: TrainSchedule, K: int, seed: int, method: str = "lbrdiv",
                     tau: float = 1.0, alpha: float = 1.0, callback=None) -> TrainResult:
    """Run the generation loop for ``method`` in {lbrdiv, brdiv, lipo}."""
    method = method.lower()
    if method not in ("lbrdiv", "brdiv", "lipo"):
        raise ValueError(f"unknown method {method!r}")
    rng = np.random.default_rng(seed)
    collector = Collector(env_spec, sched.n_threads, np.random.default_rng(rng.integers(2**63)))
    env = collector.env
    pop = Population(K, env.obs_dim, env.n_actions, sched.hidden, np.random.default_rng(rng.integers(2**63)),
                     sched.lr_pi, sched.lr_v, sched.max_grad_norm)
    upd_rng = np.random.default_rng(rng.integers(2**63))
    A = LagrangeSet(K, tau if method == "lbrdiv" else 0.0)
    fixed = None if method == "lbrdiv" else diversity.fixed_weights(K, alpha, method)
    limit = 10.0 * max_return(env)
    counters = {"lagrange_critic_evals": 0, "lagrange_updates": 0, "policy_updates": 0}
    metrics = []
    for update in range(1, sched.n_updates + 1):
        pair = sample_pair(K, rng)
        batch = collector.collect(pop, pair, sched.batch_size)
        for _ in range(sched.epochs):
            critic_update(pop, batch, sched.gamma, sched.target_sync)
        W = diversity.pair_weights(A) if fixed is None else fixed
        i, j = pair
        policy_update(pop, batch, W[i, j], W[i, i], sched, upd_rng)
        counters["policy_updates"] += 1
        R_hat = None
        if fixed is None and update % sched.t_lagrange == 0:
            R_hat = pop.return_estimates(batch.start_obs_a, batch.start_obs_b)
            counters["lagrange_critic_evals"] += 2 * K * (K - 1) * len(batch.start_obs_a)
            A = diversity.lagrange_update(R_hat, A, sched.lr_alpha)
            counters["lagrange_updates"] += 1
        if update % sched.metrics_every == 0 or update == sched.n_updates:
            if R_hat is None:
                R_hat = pop.return_estimates(batch.start_obs_a, batch.start_obs_b)
            if np.abs(R_hat).max() > limit:
                raise DivergenceError(f"critic estimate {np.abs(R_hat).max():.3g} exceeds {limit:.3g}")
            metrics.append(_metrics_row(update * sched.batch_size, pair, R_hat,
                                        A if fixed is None else LagrangeSet(K, 0.0), mean_entropy(pop, batch)))
        if callback is not None:
            callback(update, pop, A)
    return TrainResult(pop, A, metrics, method, counters)


def train_lbrdiv(env_spec, sched, K, tau, seed, callback=None) -> TrainResult:
    return train_population(env_spec, sched, K, seed, "lbrdiv", tau=tau, callback=callback)


def train_baseline(env_spec, sched, K, alpha, objective, seed, callback=None) -> TrainResult:
    return train_population(env_spec, sched, K, seed, objective, alpha=alpha, callback=callback)


# ---------------------------------------------------------------------------
# evaluation of a trained population


class NetPolicy:
    """Adapter so a policy network can play through ``envs.play_episode``."""

    def __init__(self, net: Mlp, greedy: bool = False):
        self.net = net
        self.greedy = greedy
        self.rng = np.random.default_rng(0)

    def reset(self, rng):
        self.rng = rng

    def act(self, obs):
        p = self.net(obs)
        if self.greedy:
            return int(np.argmax(p))
        return int(_sample(p[None, :], self.rng)[0])


def cross_play_matrix(pop: Population, env_spec: EnvSpec, episodes: int = 128, seed: int = 0,
                      greedy: bool = False) -> diversity.ReturnMatrix:
    """Monte-Carlo ``R[j, i]``: AHT policy j with teammate i, undiscounted."""
    from .envs import play_episode

    env = env_spec.make()
    K = pop.K
    vals, se = np.zeros((K, K)), np.zeros((K, K))
    rng = np.random.default_rng(seed)
    for j in range(K):
        for i in range(K):
            a, b = NetPolicy(pop.aht[j], greedy), NetPolicy(pop.teammates[i], greedy)
            rets = np.array([play_episode(env, a, b, seed=int(rng.integers(2**63)),
                                          rng=np.random.default_rng(rng.integers(2**63)))
                             for _ in range(episodes)])
            vals[j, i] = rets.mean()
            se[j, i] = rets.std(ddof=1) / np.sqrt(episodes) if episodes > 1 else 0.0
    return diversity.ReturnMatrix(vals, se, {"episodes": episodes})


def matrix_game_returns(pop: Population, horizon: int) -> np.ndarray:
    """Exact expected episodic returns in the repeated matrix game.

    Observations there are the round index only, so each policy is a fixed
    per-round mixed strategy.
    """
    ts = np.arange(horizon)[:, None] / horizon
    P = [net(ts) for net in pop.aht]
    Q = [net(ts) for net in pop.teammates]
    R = np.zeros((pop.K, pop.K))
    for j in range(pop.K):
        for i in range(pop.K):
            R[j, i] = np.einsum("ta,ab,tb->", P[j], MATRIX_PAYOFF, Q[i])
    return R


def greedy_actions(nets, obs) -> list[int]:
    return [int(np.argmax(net(obs))) for net in nets]


def dominant_actions(nets, horizon: int) -> list[int]:
    """Most likely action of each matrix-game policy, averaged over the rounds."""
    ts = np.arange(horizon)[:, None] / horizon
    return [int(np.argmax(net(ts).mean(axis=0))) for net in nets]


def schedule_dict(sched: TrainSchedule) -> dict:
    d = asdict(sched)
    d["hidden"] = list(sched.hidden)
    return d
