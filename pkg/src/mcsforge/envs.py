"""Two-player cooperative environments and the heuristic evaluation teammates.

Four environments share one small kernel: a joint ``step(a_i, a_neg_i)`` that
returns a shared scalar reward.  Observations are per-agent real vectors;
grid coordinates are normalised to [0, 1].
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from itertools import permutations

import numpy as np


class EnvId(str, enum.Enum):
    RepeatedMatrix = "RepeatedMatrix"
    CoopReach = "CoopReach"
    WeightedCoopReach = "WeightedCoopReach"
    LBF = "LBF"


class ContractError(RuntimeError):
    """Raised when an environment is driven outside its protocol."""


class ConfigurationError(ValueError):
    pass


# row = AHT-side action, column = teammate action
MATRIX_PAYOFF = np.array(
    [[10.0, 0.0, 4.0],
     [0.0, 6.0, 4.0],
     [4.0, 4.0, 6.0]]
)

# corners A..D clockwise from top-left
WEIGHTED_REACH_PAYOFF = np.array(
    [[10.0, 0.0, 6.0, 6.0],
     [0.0, 10.0, 6.0, 6.0],
     [6.0, 6.0, 8.0, 0.0],
     [6.0, 6.0, 0.0, 8.0]]
)

LBF_ITEM_REWARD = 0.33

# grid actions
UP, DOWN, LEFT, RIGHT, NOOP, COLLECT = range(6)
MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1), NOOP: (0, 0)}


def enumerate_actions(env_id: EnvId | str) -> list[int]:
    env_id = EnvId(env_id)
    if env_id is EnvId.RepeatedMatrix:
        return [0, 1, 2]
    if env_id is EnvId.LBF:
        return [UP, DOWN, LEFT, RIGHT, NOOP, COLLECT]
    return [UP, DOWN, LEFT, RIGHT, NOOP]


@dataclass(frozen=True)
class JointObservation:
    obs_a: np.ndarray
    obs_b: np.ndarray
    t: int

    def __eq__(self, other):
        if not isinstance(other, JointObservation):
            return NotImplemented
        return (self.t == other.t and np.array_equal(self.obs_a, other.obs_a)
                and np.array_equal(self.obs_b, other.obs_b))

    def seat(self, k: int) -> np.ndarray:
        return self.obs_a if k == 0 else self.obs_b


def corners(grid_dim: int) -> list[tuple[int, int]]:
    n = grid_dim - 1
    return [(0, 0), (0, n), (n, n), (n, 0)]


def manhattan(p, q) -> int:
    return abs(p[0] - q[0]) + abs(p[1] - q[1])


class Env:
    """Base class; subclasses fill in ``_reset`` / ``_transition`` / ``_observe``."""

    env_id: EnvId
    obs_dim: int
    n_actions: int

    def __init__(self, horizon: int, seed: int = 0):
        if horizon < 1:
            raise ConfigurationError("horizon must be positive")
        self.horizon = int(horizon)
        self.rng_seed = int(seed)
        self.t = 0
        self.done = True

    def reset(self, seed: int | None = None) -> JointObservation:
        if seed is not None:
            self.rng_seed = int(seed)
        rng = np.random.default_rng(self.rng_seed & 0xFFFFFFFFFFFFFFFF)
        self.t = 0
        self.done = False
        self._reset(rng)
        return self.observe()

    def step(self, a_i: int, a_neg_i: int) -> tuple[JointObservation, float, bool]:
        if self.done:
            raise ContractError("step() called on a finished episode; call reset()")
        for a in (a_i, a_neg_i):
            if not 0 <= int(a) < self.n_actions:
                raise IndexError(f"action {a} out of range [0, {self.n_actions})")
        reward, terminal = self._transition(int(a_i), int(a_neg_i))
        self.t += 1
        self.done = terminal or self.t >= self.horizon
        return self.observe(), float(reward), self.done

    def observe(self) -> JointObservation:
        a, b = self._observe()
        return JointObservation(a, b, self.t)

    def _reset(self, rng):  # pragma: no cover - abstract
        raise NotImplementedError

    def _transition(self, a_i, a_neg_i):  # pragma: no cover - abstract
        raise NotImplementedError

    def _observe(self):  # pragma: no cover - abstract
        raise NotImplementedError


class RepeatedMatrixGame(Env):
    """Stateless 3x3 coordination game repeated for ``horizon`` rounds.

    Agents see only the normalised round index; nothing about the partner.
    """

    env_id = EnvId.RepeatedMatrix
    obs_dim = 1
    n_actions = 3

    def __init__(self, horizon: int = 5, seed: int = 0):
        super().__init__(horizon, seed)

    def _reset(self, rng):
        pass

    def _transition(self, a_i, a_neg_i):
        return MATRIX_PAYOFF[a_i, a_neg_i], False

    def _observe(self):
        o = np.array([self.t / self.horizon])
        return o, o.copy()


class _GridEnv(Env):
    def __init__(self, grid_dim: int, horizon: int, seed: int = 0):
        super().__init__(horizon, seed)
        if grid_dim < 3:
            raise ConfigurationError("grid_dim must be at least 3")
        self.grid_dim = int(grid_dim)
        self.corners = corners(self.grid_dim)
        self.pos = [(0, 0), (0, 0)]

    def _norm(self, p) -> list[float]:
        n = self.grid_dim - 1
        return [p[0] / n, p[1] / n]

    def decode(self, x: float) -> int:
        return int(round(x * (self.grid_dim - 1)))

    def _blocked(self, cell) -> bool:
        r, c = cell
        return not (0 <= r < self.grid_dim and 0 <= c < self.grid_dim)

    def _move(self, p, a):
        dr, dc = MOVES.get(a, (0, 0))
        q = (p[0] + dr, p[1] + dc)
        return p if self._blocked(q) else q


class CoopReach(_GridEnv):
    """Both agents must stand on the same corner at the same time.

    Observation per agent: own (row, col), partner (row, col), the four corner
    coordinates and normalised time -- 13 values.
    """

    env_id = EnvId.CoopReach
    n_actions = 5

    def __init__(self, grid_dim: int = 7, horizon: int = 50, seed: int = 0):
        super().__init__(grid_dim, horizon, seed)
        self.obs_dim = 4 + 8 + 1
        self._layout = np.array([v for c in self.corners for v in self._norm(c)])

    def _reset(self, rng):
        free = [(r, c) for r in range(self.grid_dim) for c in range(self.grid_dim)
                if (r, c) not in self.corners]
        idx = rng.integers(len(free), size=2)
        self.pos = [free[idx[0]], free[idx[1]]]

    def corner_of(self, p) -> int | None:
        try:
            return self.corners.index(p)
        except ValueError:
            return None

    def _payoff(self, ca: int, cb: int) -> tuple[float, bool]:
        if ca == cb:
            return 1.0, True
        return 0.0, False

    def _transition(self, a_i, a_neg_i):
        self.pos = [self._move(self.pos[0], a_i), self._move(self.pos[1], a_neg_i)]
        ca, cb = self.corner_of(self.pos[0]), self.corner_of(self.pos[1])
        if ca is None or cb is None:
            return 0.0, False
        return self._payoff(ca, cb)

    def _observe(self):
        t = [self.t / self.horizon]
        a = np.array(self._norm(self.pos[0]) + self._norm(self.pos[1]) + list(self._layout) + t)
        b = np.array(self._norm(self.pos[1]) + self._norm(self.pos[0]) + list(self._layout) + t)
        return a, b


class WeightedCoopReach(CoopReach):
    """Episode ends when both agents are on corners; payoff depends on the pair."""

    env_id = EnvId.WeightedCoopReach

    def _payoff(self, ca, cb):
        return WEIGHTED_REACH_PAYOFF[ca, cb], True


class LevelBasedForaging(_GridEnv):
    """Cooperative foraging: an item is collected only when both agents stand
    next to it (4-neighbourhood) and both choose COLLECT in the same step.

    Items are impassable and indexed in row-major order of their cells so that
    item identities are stable across episodes.  Observation per agent: own
    pos, partner pos, per item (row, col, present), normalised time.
    """

    env_id = EnvId.LBF
    n_actions = 6

    def __init__(self, grid_dim: int = 8, horizon: int = 50, n_items: int = 3, seed: int = 0):
        super().__init__(grid_dim, horizon, seed)
        self.n_items = int(n_items)
        self.obs_dim = 4 + 3 * self.n_items + 1
        self.items: list[tuple[int, int]] = []
        self.present: list[bool] = []

    def _reset(self, rng):
        cells = [(r, c) for r in range(self.grid_dim) for c in range(self.grid_dim)]
        cells = [p for p in cells if p not in self.corners]
        items: list[tuple[int, int]] = []
        # items never touch each other, not even diagonally
        while len(items) < self.n_items:
            p = cells[rng.integers(len(cells))]
            if all(max(abs(p[0] - q[0]), abs(p[1] - q[1])) > 1 for q in items):
                items.append(p)
        self.items = sorted(items)
        self.present = [True] * self.n_items
        free = [p for p in cells if p not in self.items]
        idx = rng.integers(len(free), size=2)
        self.pos = [free[idx[0]], free[idx[1]]]

    def _blocked(self, cell):
        if super()._blocked(cell):
            return True
        return any(ok and cell == it for it, ok in zip(self.items, self.present))

    def adjacent_items(self, p) -> list[int]:
        return [k for k, (it, ok) in enumerate(zip(self.items, self.present))
                if ok and manhattan(p, it) == 1]

    def _transition(self, a_i, a_neg_i):
        reward = 0.0
        if a_i == COLLECT and a_neg_i == COLLECT:
            common = sorted(set(self.adjacent_items(self.pos[0])) & set(self.adjacent_items(self.pos[1])))
            if common:
                self.present[common[0]] = False
                reward = LBF_ITEM_REWARD
        self.pos = [self._move(self.pos[0], a_i), self._move(self.pos[1], a_neg_i)]
        return reward, not any(self.present)

    def _observe(self):
        items = []
        for it, ok in zip(self.items, self.present):
            items += self._norm(it) + [1.0 if ok else 0.0]
        t = [self.t / self.horizon]
        a = np.array(self._norm(self.pos[0]) + self._norm(self.pos[1]) + items + t)
        b = np.array(self._norm(self.pos[1]) + self._norm(self.pos[0]) + items + t)
        return a, b


@dataclass
class EnvSpec:
    """Serializable environment block of an experiment config."""

    id: str = "RepeatedMatrix"
    horizon: int | None = None
    grid_dim: int | None = None
    n_items: int = 3

    def make(self, seed: int = 0) -> Env:
        return make_env(self.id, horizon=self.horizon, grid_dim=self.grid_dim,
                        n_items=self.n_items, seed=seed)


def make_env(env_id, horizon=None, grid_dim=None, n_items=3, seed=0) -> Env:
    env_id = EnvId(env_id)
    if env_id is EnvId.RepeatedMatrix:
        return RepeatedMatrixGame(horizon=horizon or 5, seed=seed)
    if env_id is EnvId.CoopReach:
        return CoopReach(grid_dim=grid_dim or 7, horizon=horizon or 50, seed=seed)
    if env_id is EnvId.WeightedCoopReach:
        return WeightedCoopReach(grid_dim=grid_dim or 7, horizon=horizon or 50, seed=seed)
    return LevelBasedForaging(grid_dim=grid_dim or 8, horizon=horizon or 50,
                              n_items=n_items, seed=seed)


# ---------------------------------------------------------------------------
# movement helpers shared by the heuristics and the oracle's corner seekers


def greedy_step(p, target, avoid=()) -> int:
    """Move that reduces Manhattan distance to ``target``; horizontal first.

    Cells in ``avoid`` (other corners) are sidestepped via the vertical move,
    which always exists when the target is not on that cell.
    """
    dr, dc = target[0] - p[0], target[1] - p[1]
    options = []
    if dc:
        options.append(RIGHT if dc > 0 else LEFT)
    if dr:
        options.append(DOWN if dr > 0 else UP)
    for a in options:
        d = MOVES[a]
        if (p[0] + d[0], p[1] + d[1]) not in avoid:
            return a
    return options[0] if options else NOOP


def bfs_step(p, goals, blocked, grid_dim) -> int:
    """First move of a shortest path from ``p`` into ``goals`` avoiding ``blocked``.

    Neighbour expansion order is RIGHT, LEFT, DOWN, UP so that on open ground
    the path is horizontal-first like ``greedy_step``.
    """
    goals = set(goals)
    if not goals or p in goals:
        return NOOP
    order = [RIGHT, LEFT, DOWN, UP]
    first = {p: None}
    queue = deque([p])
    while queue:
        q = queue.popleft()
        for a in order:
            d = MOVES[a]
            nq = (q[0] + d[0], q[1] + d[1])
            if nq in first or nq in blocked:
                continue
            if not (0 <= nq[0] < grid_dim and 0 <= nq[1] < grid_dim):
                continue
            first[nq] = a if first[q] is None else first[q]
            if nq in goals:
                return first[nq]
            queue.append(nq)
    return NOOP


# ---------------------------------------------------------------------------
# heuristic teammates


MATRIX_HEURISTICS = {
    "H1": (1.0, 0.0, 0.0),
    "H2": (0.0, 1.0, 0.0),
    "H3": (0.0, 0.0, 1.0),
    "H4": (0.7, 0.15, 0.15),
    "H5": (0.15, 0.7, 0.15),
    "H6": (0.15, 0.15, 0.7),
}

REACH_DESTINATION_PROBS = {
    "H7": (0.25, 0.25, 0.25, 0.25),
    "H12": (0.55, 0.15, 0.15, 0.15),
    "H13": (0.15, 0.55, 0.15, 0.15),
    "H14": (0.15, 0.15, 0.55, 0.15),
    "H15": (0.15, 0.15, 0.15, 0.55),
}

LBF_ORDERS = list(permutations(range(3)))

HEURISTIC_IDS = {
    EnvId.RepeatedMatrix: [f"H{k}" for k in range(1, 7)],
    EnvId.CoopReach: [f"H{k}" for k in range(1, 16)],
    EnvId.WeightedCoopReach: [f"H{k}" for k in range(1, 16)],
    EnvId.LBF: [f"H{k}" for k in range(1, 9)],
}


@dataclass
class HeuristicTeammate:
    """A scripted partner.  Call ``reset`` at every episode start.

    The heuristic reads only its own observation vector (own position first),
    so it can sit in either seat.
    """

    env_id: EnvId
    heuristic_id: str
    rng_seed: int = 0
    grid_dim: int | None = None
    episodic_state: dict = field(default_factory=dict)

    def __post_init__(self):
        self.env_id = EnvId(self.env_id)
        if self.heuristic_id not in HEURISTIC_IDS[self.env_id]:
            raise ConfigurationError(
                f"heuristic {self.heuristic_id} is not defined for {self.env_id.value}")
        if self.grid_dim is None:
            self.grid_dim = 8 if self.env_id is EnvId.LBF else 7
        self.rng = np.random.default_rng(self.rng_seed)

    def reset(self, rng: np.random.Generator | None = None) -> None:
        if rng is not None:
            self.rng = rng
        self.episodic_state = {}

    def _decode(self, x) -> int:
        return int(round(float(x) * (self.grid_dim - 1)))

    def act(self, obs: np.ndarray) -> int:
        if self.env_id is EnvId.RepeatedMatrix:
            return int(self.rng.choice(3, p=MATRIX_HEURISTICS[self.heuristic_id]))
        if self.env_id is EnvId.LBF:
            return self._act_lbf(obs)
        return self._act_reach(obs)

    def _act_reach(self, obs) -> int:
        me = (self._decode(obs[0]), self._decode(obs[1]))
        cs = corners(self.grid_dim)
        st = self.episodic_state
        if "dest" not in st:
            st["dest"] = self._choose_corner(me, cs)
        target = cs[st["dest"]]
        if me == target:
            return NOOP
        return greedy_step(me, target, avoid=[c for c in cs if c != target])

    def _choose_corner(self, start, cs) -> int:
        k = int(self.heuristic_id[1:])
        dist = [manhattan(start, c) for c in cs]
        if k == 1:
            return int(np.argmin(dist))
        if k == 2:
            return int(np.argmax(dist))
        if 3 <= k <= 6:
            pool = (0, 1) if k in (3, 4) else (2, 3)
            sign = 1 if k in (3, 5) else -1
            return min(pool, key=lambda c: (sign * dist[c], c))
        if 8 <= k <= 11:
            return k - 8
        return int(self.rng.choice(4, p=REACH_DESTINATION_PROBS[self.heuristic_id]))

    def _act_lbf(self, obs) -> int:
        me = (self._decode(obs[0]), self._decode(obs[1]))
        items, present = [], []
        for k in range(3):
            base = 4 + 3 * k
            items.append((self._decode(obs[base]), self._decode(obs[base + 1])))
            present.append(obs[base + 2] > 0.5)
        remaining = [k for k in range(3) if present[k]]
        if not remaining:
            return NOOP
        st = self.episodic_state
        target = st.get("target")
        if target is None or not present[target]:
            target = self._next_item(me, items, remaining)
            st["target"] = target
        goal = items[target]
        if manhattan(me, goal) == 1:
            return COLLECT
        blocked = {items[k] for k in remaining}
        adj = [(goal[0] + d[0], goal[1] + d[1]) for d in ((-1, 0), (1, 0), (0, -1), (0, 1))]
        return bfs_step(me, [c for c in adj if c not in blocked], blocked, self.grid_dim)

    def _next_item(self, me, items, remaining) -> int:
        k = int(self.heuristic_id[1:])
        if k == 1:
            return min(remaining, key=lambda j: (manhattan(me, items[j]), j))
        if k == 2:
            return max(remaining, key=lambda j: (manhattan(me, items[j]), -j))
        order = LBF_ORDERS[k - 3]
        return next(j for j in order if j in remaining)


def heuristic_action(h: HeuristicTeammate, obs, env_id=None) -> int:
    if env_id is not None and EnvId(env_id) is not h.env_id:
        raise ConfigurationError(f"heuristic for {h.env_id.value} used in {EnvId(env_id).value}")
    if isinstance(obs, JointObservation):
        obs = obs.obs_b
    return h.act(np.asarray(obs))


def play_episode(env: Env, agent_a, agent_b, seed: int, rng: np.random.Generator | None = None) -> float:
    """Undiscounted return of one episode between two observation-driven policies.

    Each policy needs ``reset(rng)`` and ``act(obs) -> int``.
    """
    rng = rng if rng is not None else np.random.default_rng(seed)
    agent_a.reset(rng)
    agent_b.reset(rng)
    jo = env.reset(seed)
    total, done = 0.0, False
    while not done:
        jo, r, done = env.step(agent_a.act(jo.obs_a), agent_b.act(jo.obs_b))
        total += r
    return total
