"""Behaviour profiles: what each policy actually does when it plays."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .envs import EnvId, EnvSpec, HeuristicTeammate, corners


@dataclass
class BehaviorProfile:
    """Row-normalized frequency table, one row per profiled policy.

    Matrix game: action frequencies.  Reaching: the corner the policy ends the
    episode on.  Foraging: the order in which items were collected.  ``counts``
    holds how many events went into each row; a row without events is uniform.
    """

    names: list[str]
    columns: list[str]
    freqs: np.ndarray
    counts: np.ndarray

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["policy", *self.columns, "n"])
        for name, row, n in zip(self.names, self.freqs, self.counts):
            w.writerow([name, *(repr(float(v)) for v in row), int(n)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "BehaviorProfile":
        rows = list(csv.reader(io.StringIO(text)))
        cols = rows[0][1:-1]
        names = [r[0] for r in rows[1:]]
        freqs = np.array([[float(v) for v in r[1:-1]] for r in rows[1:]])
        counts = np.array([int(r[-1]) for r in rows[1:]])
        return cls(names, cols, freqs, counts)


def profile_columns(env_spec: EnvSpec) -> list[str]:
    env_id = EnvId(env_spec.id)
    if env_id is EnvId.RepeatedMatrix:
        return ["a1", "a2", "a3"]
    if env_id in (EnvId.CoopReach, EnvId.WeightedCoopReach):
        return ["A", "B", "C", "D"]
    return ["".join(map(str, p)) for p in permutations(range(env_spec.n_items))]


def _episode_events(env, env_id, agent_a, agent_b, seed, rng):
    """Yield the profile events of one episode for the seat-b policy."""
    agent_a.reset(rng)
    agent_b.reset(rng)
    jo = env.reset(seed)
    events, order, done = [], [], False
    while not done:
        before = list(getattr(env, "present", []))
        a_b = agent_b.act(jo.obs_b)
        jo, _, done = env.step(agent_a.act(jo.obs_a), a_b)
        if env_id is EnvId.RepeatedMatrix:
            events.append(f"a{a_b + 1}")
        elif env_id is EnvId.LBF:
            order += [k for k, (was, now) in enumerate(zip(before, env.present)) if was and not now]
    if env_id in (EnvId.CoopReach, EnvId.WeightedCoopReach):
        cs = corners(env.grid_dim)
        if env.pos[1] in cs:
            events.append("ABCD"[cs.index(env.pos[1])])
    elif env_id is EnvId.LBF and len(order) == env.n_items:
        events.append("".join(map(str, order)))
    return events


def behavior_profile(pairs, env_spec: EnvSpec, episodes: int = 1000, seed: int = 0) -> BehaviorProfile:
    """``pairs`` is a list of ``(name, seat_a_policy, seat_b_policy)``; seat b is profiled."""
    env_id = EnvId(env_spec.id)
    env = env_spec.make()
    cols = profile_columns(env_spec)
    index = {c: k for k, c in enumerate(cols)}
    rng = np.random.default_rng(seed)
    counts = np.zeros((len(pairs), len(cols)))
    for r, (_, a, b) in enumerate(pairs):
        for _ in range(episodes):
            ep_seed = int(rng.integers(2**63))
            for ev in _episode_events(env, env_id, a, b, ep_seed, np.random.default_rng(ep_seed)):
                counts[r, index[ev]] += 1
    totals = counts.sum(axis=1)
    freqs = np.where(totals[:, None] > 0, counts / np.maximum(totals, 1)[:, None], 1.0 / len(cols))
    return BehaviorProfile([p[0] for p in pairs], cols, freqs, totals.astype(int))


def population_pairs(pop, greedy=False):
    """Each teammate profiled alongside the AHT-side policy it was trained with."""
    from .marl import NetPolicy

    return [(f"tm{k}", NetPolicy(pop.aht[k], greedy), NetPolicy(pop.teammates[k], greedy)) for k in range(pop.K)]


def heuristic_pairs(env_spec: EnvSpec, ids):
    """Each heuristic paired with a copy of itself."""
    g = env_spec.grid_dim
    return [(h, HeuristicTeammate(env_spec.id, h, grid_dim=g), HeuristicTeammate(env_spec.id, h, grid_dim=g))
            for h in ids]
