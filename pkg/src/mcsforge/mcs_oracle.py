"""Brute-force coverage-set analysis over small finite policy universes.

A candidate set covers the universe when, for every teammate column, some
member attains that column's best return.  Minimal sets are the ones that stop
covering after removing any single member; because coverage is monotone these
are exactly the inclusion-minimal hitting sets of the per-column best-response
sets, which is how they are enumerated.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .diversity import ReturnMatrix
from .envs import EnvId, EnvSpec, HeuristicTeammate, play_episode

MAX_UNIVERSE = 20
EXACT_TOL = 1e-9
SIM_TOL = 1e-3


class CapacityError(ValueError):
    pass


@dataclass
class PolicyUniverse:
    env: EnvSpec
    names: list[str]
    heuristics: list[str]
    exact: bool = False

    def __len__(self):
        return len(self.names)

    def make(self, k: int, seed: int = 0) -> HeuristicTeammate:
        grid = self.env.grid_dim
        return HeuristicTeammate(self.env.id, self.heuristics[k], rng_seed=seed, grid_dim=grid)


def policy_universe(env: EnvSpec | str, kind: str = "default") -> PolicyUniverse:
    """Curated deterministic universes: constant actions, corner seekers, item orders."""
    if not isinstance(env, EnvSpec):
        env = EnvSpec(id=env)
    env_id = EnvId(env.id)
    if env_id is EnvId.RepeatedMatrix:
        return PolicyUniverse(env, ["a1", "a2", "a3"], ["H1", "H2", "H3"], exact=True)
    if env_id in (EnvId.CoopReach, EnvId.WeightedCoopReach):
        return PolicyUniverse(env, ["A", "B", "C", "D"], ["H8", "H9", "H10", "H11"])
    perms = ["012", "021", "102", "120", "201", "210"]
    if kind == "orders":
        return PolicyUniverse(env, perms, [f"H{k}" for k in range(3, 9)])
    return PolicyUniverse(env, ["nearest", "farthest"] + perms, [f"H{k}" for k in range(1, 9)])


def start_seeds(env: EnvSpec, n: int | None = None) -> list[int]:
    if EnvId(env.id) is EnvId.RepeatedMatrix:
        return [0]
    return list(range(256 if n is None else n))


def exact_return_matrix(universe: PolicyUniverse, episodes_per_cell: int | None = None,
                        per_step: bool = False) -> ReturnMatrix:
    """Expected undiscounted episodic return for every (AHT policy, teammate) pair.

    ``per_step`` divides by the horizon, which for the matrix game gives the
    payoff table itself.
    """
    seeds = start_seeds(universe.env, episodes_per_cell)
    env = universe.env.make()
    n = len(universe)
    vals = np.zeros((n, n))
    se = np.zeros((n, n))
    for j in range(n):
        for i in range(n):
            rets = np.array([play_episode(env, universe.make(j, s), universe.make(i, s), seed=s)
                             for s in seeds])
            vals[j, i] = rets.mean()
            se[j, i] = rets.std(ddof=1) / np.sqrt(len(rets)) if len(rets) > 1 else 0.0
    if per_step:
        vals /= env.horizon
        se /= env.horizon
    return ReturnMatrix(vals, se, {"env": universe.env.id, "policies": universe.names})


def _tol(R: ReturnMatrix | np.ndarray, tol):
    if tol is not None:
        return tol
    exact = isinstance(R, ReturnMatrix) and R.stderr is not None and not np.any(R.stderr)
    return EXACT_TOL if exact else SIM_TOL


def _values(R):
    return R.values if isinstance(R, ReturnMatrix) else np.asarray(R, dtype=np.float64)


def best_responders(R, tol=None) -> list[frozenset]:
    """Per teammate column, the set of rows within ``tol`` of the column max."""
    tol = _tol(R, tol)
    V = _values(R)
    colmax = V.max(axis=0)
    return [frozenset(np.flatnonzero(V[:, c] >= colmax[c] - tol).tolist()) for c in range(V.shape[1])]


def is_coverage_set(candidate, universe, R, tol=None) -> bool:
    candidate = set(candidate)
    n = _values(R).shape[0]
    if any(not 0 <= k < n for k in candidate):
        raise IndexError("candidate index out of range")
    if not candidate:
        return n == 0
    return all(candidate & br for br in best_responders(R, tol))


def minimal_coverage_sets(universe, R, tol=None) -> list[tuple[int, ...]]:
    n = _values(R).shape[0]
    if n > MAX_UNIVERSE:
        raise CapacityError(f"universe of {n} policies exceeds the exhaustive limit {MAX_UNIVERSE}")
    brs = best_responders(R, tol)
    # rows that best-respond to nobody can never be needed
    useful = sorted(set().union(*brs)) if brs else []
    masks = [sum(1 << k for k in br) for br in brs]
    found: list[tuple[int, ...]] = []
    found_masks: list[int] = []
    for size in range(1, len(useful) + 1):
        for combo in combinations(useful, size):
            m = sum(1 << k for k in combo)
            if any(fm & m == fm for fm in found_masks):
                continue
            if all(m & cm for cm in masks):
                found.append(combo)
                found_masks.append(m)
    # supersets of earlier finds were skipped, so every find is inclusion-minimal
    return sorted(found, key=lambda s: (len(s), s))


def feasibility_check(candidate_row: int, universe, R, tol=None):
    """Is ``candidate_row`` a best response to at least one teammate column?"""
    V = _values(R)
    if not 0 <= candidate_row < V.shape[0]:
        raise IndexError("candidate row out of range")
    for c, br in enumerate(best_responders(R, tol)):
        if candidate_row in br:
            return True, c
    return False, None


@dataclass
class CoverageReport:
    names: list[str]
    matrix: ReturnMatrix
    minimal_sets: list[tuple[int, ...]]
    best_responses: list[tuple[list[int], float]]
    feasible: list[bool]
    candidates: list[tuple[tuple[int, ...], bool]] = field(default_factory=list)

    def to_text(self) -> str:
        lines = ["coverage report", "policies: " + ", ".join(self.names), "return matrix (row = AHT policy, col = teammate):"]
        for j, row in enumerate(self.matrix.values):
            lines.append(f"  {self.names[j]:>10} " + " ".join(f"{x:8.3f}" for x in row))
        lines.append("best responses per teammate:")
        for c, (rows, val) in enumerate(self.best_responses):
            lines.append(f"  {self.names[c]}: {[self.names[r] for r in rows]} -> {val:.3f}")
        lines.append("minimal coverage sets:")
        for s in self.minimal_sets:
            lines.append("  {" + ", ".join(self.names[k] for k in s) + "}")
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["candidate", "size", "is_coverage", "is_minimal"])
        minimal = set(self.minimal_sets)
        for cand, cov in self.candidates:
            w.writerow([" ".join(self.names[k] for k in cand), len(cand), int(cov), int(cand in minimal)])
        return buf.getvalue()


def coverage_report(universe: PolicyUniverse, R: ReturnMatrix | None = None, tol=None) -> CoverageReport:
    if R is None:
        R = exact_return_matrix(universe)
    n = R.K
    brs = best_responders(R, tol)
    colmax = R.values.max(axis=0)
    candidates = []
    if n <= 10:
        for size in range(1, n + 1):
            for combo in combinations(range(n), size):
                candidates.append((combo, is_coverage_set(combo, universe, R, tol)))
    return CoverageReport(
        names=list(universe.names),
        matrix=R,
        minimal_sets=minimal_coverage_sets(universe, R, tol),
        best_responses=[(sorted(br), float(colmax[c])) for c, br in enumerate(brs)],
        feasible=[feasibility_check(k, universe, R, tol)[0] for k in range(n)],
        candidates=candidates,
    )
