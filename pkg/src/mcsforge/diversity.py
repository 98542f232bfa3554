"""Diversity objectives over a K x K cross-play return matrix.

Indexing convention everywhere: ``R[j][i]`` is the expected return of AHT-side
policy ``j`` paired with teammate ``i``; the diagonal holds self-play returns.
Pair indices in this module are 0-based.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


@dataclass
class LagrangeSet:
    """Nonnegative multipliers for the two constraint families.

    ``alpha1[i, j]`` prices ``R[i][i] - tau - R[j][i]`` (other AHT policy with
    teammate i); ``alpha2[i, j]`` prices ``R[i][i] - tau - R[i][j]`` (AHT policy
    i with another teammate).  Diagonals are unused and kept at zero.
    """

    K: int
    tau: float = 0.0
    alpha1: np.ndarray = None
    alpha2: np.ndarray = None

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be positive")
        if self.tau < 0:
            raise ValueError("tau must be nonnegative")
        for name in ("alpha1", "alpha2"):
            a = getattr(self, name)
            a = np.zeros((self.K, self.K)) if a is None else np.array(a, dtype=np.float64)
            if a.shape != (self.K, self.K):
                raise ValueError(f"{name} must be {self.K}x{self.K}")
            np.fill_diagonal(a, 0.0)
            setattr(self, name, a)

    @classmethod
    def constant(cls, K, tau, value):
        a = np.full((K, K), float(value))
        return cls(K, tau, a, a.copy())

    def copy(self) -> "LagrangeSet":
        return LagrangeSet(self.K, self.tau, self.alpha1.copy(), self.alpha2.copy())

    def off_diagonal(self):
        mask = ~np.eye(self.K, dtype=bool)
        return self.alpha1[mask], self.alpha2[mask]


def _check_index(K, *idx):
    for k in idx:
        if not 0 <= k < K:
            raise IndexError(f"pair index {k} out of range for K={K}")


def pair_weight(A: LagrangeSet, i: int, j: int) -> float:
    """Weight on the one-step advantage for data from AHT policy j with teammate i."""
    _check_index(A.K, i, j)
    if i == j:
        mask = np.arange(A.K) != j
        return float(1.0 + A.alpha1[i, mask].sum() + A.alpha2[i, mask].sum())
    return float(-(A.alpha1[i, j] + A.alpha2[j, i]))


def pair_weights(A: LagrangeSet) -> np.ndarray:
    """``W[i, j] = pair_weight(A, i, j)`` for all pairs."""
    W = -(A.alpha1 + A.alpha2.T)
    np.fill_diagonal(W, 1.0 + A.alpha1.sum(axis=1) + A.alpha2.sum(axis=1))
    return W


def fixed_weights(K: int, alpha: float, objective: str) -> np.ndarray:
    """Constant pair weights for the BRDiv / LIPO baselines."""
    objective = objective.lower()
    if objective == "brdiv":
        return pair_weights(LagrangeSet.constant(K, 0.0, alpha))
    if objective == "lipo":
        W = np.full((K, K), -float(alpha))
        np.fill_diagonal(W, 1.0)
        return W
    raise ValueError(f"unknown objective {objective!r}")


def _as_matrix(R) -> np.ndarray:
    R = np.asarray(R, dtype=object if _is_exact(R) else np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError("return matrix must be square")
    return R


def _is_exact(R) -> bool:
    arr = np.asarray(R, dtype=object)
    return any(isinstance(x, Fraction) for x in arr.ravel())


def constraint_slacks(R, tau: float):
    """``(s1, s2)`` with ``s1[i, j] = R[i][i] - tau - R[j][i]`` and
    ``s2[i, j] = R[i][i] - tau - R[i][j]``; diagonals are +inf."""
    R = np.asarray(R, dtype=np.float64)
    d = np.diag(R)[:, None]
    s1 = d - tau - R.T
    s2 = d - tau - R
    np.fill_diagonal(s1, np.inf)
    np.fill_diagonal(s2, np.inf)
    return s1, s2


def lagrange_dual_value(R, A: LagrangeSet) -> float:
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (A.K, A.K):
        raise ValueError("return matrix and multipliers disagree on K")
    s1, s2 = constraint_slacks(R, A.tau)
    mask = ~np.eye(A.K, dtype=bool)
    return float(np.trace(R) + (A.alpha1[mask] * s1[mask]).sum() + (A.alpha2[mask] * s2[mask]).sum())


def lagrange_update(R_hat, A: LagrangeSet, lr: float) -> LagrangeSet:
    """One projected gradient step minimising the dual over the multipliers."""
    if lr < 0:
        raise ValueError("learning rate must be nonnegative")
    s1, s2 = constraint_slacks(R_hat, A.tau)
    mask = ~np.eye(A.K, dtype=bool)
    a1, a2 = A.alpha1.copy(), A.alpha2.copy()
    a1[mask] = np.maximum(a1[mask] - lr * s1[mask], 0.0)
    a2[mask] = np.maximum(a2[mask] - lr * s2[mask], 0.0)
    return LagrangeSet(A.K, A.tau, a1, a2)


def brdiv_objective(R, alpha):
    """Self-play total plus alpha-weighted ordered-pair margins (exact for Fractions)."""
    R = _as_matrix(R)
    K = R.shape[0]
    total = sum(R[i][i] for i in range(K))
    margin = 0
    for i in range(K):
        for j in range(K):
            if i != j:
                margin += (R[i][i] - R[j][i]) + (R[i][i] - R[i][j])
    return total + alpha * margin


def lipo_objective(R, alpha):
    """Self-play total minus alpha times each off-diagonal entry, counted once."""
    R = _as_matrix(R)
    K = R.shape[0]
    total = sum(R[i][i] for i in range(K))
    cross = 0
    for i in range(K):
        for j in range(i + 1, K):
            cross += R[j][i] + R[i][j]
    return total - alpha * cross


def objective_coefficients(R, objective: str) -> tuple:
    """``(constant, slope)`` such that objective(R, a) == constant + slope * a."""
    f = brdiv_objective if objective == "brdiv" else lipo_objective
    c = f(R, 0)
    return c, f(R, 1) - c


# ---------------------------------------------------------------------------
# CSV round-trip


@dataclass
class ReturnMatrix:
    values: np.ndarray
    stderr: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.values.shape[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        K = self.K
        w.writerow(["row"] + [f"col{i}" for i in range(K)] + [f"se{i}" for i in range(K)])
        se = self.stderr if self.stderr is not None else np.zeros_like(self.values)
        for j in range(K):
            w.writerow([j] + [repr(float(x)) for x in self.values[j]] + [repr(float(x)) for x in se[j]])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ReturnMatrix":
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], rows[1:]
        K = sum(1 for h in header if h.startswith("col"))
        vals = np.array([[float(x) for x in r[1:1 + K]] for r in body])
        se = np.array([[float(x) for x in r[1 + K:1 + 2 * K]] for r in body])
        return cls(vals, se)


def lagrange_to_csv(A: LagrangeSet) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["family", "i", "j", "value", "tau"])
    for name, arr in (("alpha1", A.alpha1), ("alpha2", A.alpha2)):
        for i in range(A.K):
            for j in range(A.K):
                if i != j:
                    w.writerow([name, i, j, repr(float(arr[i, j])), repr(float(A.tau))])
    return buf.getvalue()


def lagrange_from_csv(text: str) -> LagrangeSet:
    rows = list(csv.DictReader(io.StringIO(text)))
    K = max(max(int(r["i"]), int(r["j"])) for r in rows) + 1
    tau = float(rows[0]["tau"])
    a = {"alpha1": np.zeros((K, K)), "alpha2": np.zeros((K, K))}
    for r in rows:
        a[r["family"]][int(r["i"]), int(r["j"])] = float(r["value"])
    return LagrangeSet(K, tau, a["alpha1"], a["alpha2"])
