"""Behavior cloning by 0-1 loss ERM over a finite policy class."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .classes import FinitePolicyClass
from .mdp import LocalSimSession, PolicyLike, Trajectory


@dataclass(frozen=True)
class CloneParams:
    eps: float
    delta: float
    horizon: int
    class_size: int
    n_bc_override: Optional[int] = None

    @property
    def n_bc(self) -> int:
        """``ceil(16 H^2 ln(|Pi| / delta) / eps)``, floored at 1."""
        if self.n_bc_override is not None:
            return int(self.n_bc_override)
        val = 16 * self.horizon ** 2 * math.log(self.class_size / self.delta) / self.eps
        return max(1, math.ceil(val))


def collect(session: LocalSimSession, expert: PolicyLike, n: int) -> List[Trajectory]:
    return [session.episode(expert) for _ in range(n)]


def mistake_counts(pclass: FinitePolicyClass, corpus: List[Trajectory]) -> np.ndarray:
    """Total disagreements of every class member with the logged actions."""
    counts = np.zeros(len(pclass), dtype=np.int64)
    H = len(pclass.actions)
    by_layer = [([], []) for _ in range(H)]
    for traj in corpus:
        for h, x, a, _ in traj.steps:
            by_layer[h - 1][0].append(x)
            by_layer[h - 1][1].append(a)
    for h, (xs, acts) in enumerate(by_layer):
        if xs:
            pred = pclass.actions[h][:, np.asarray(xs)]
            counts += (pred != np.asarray(acts)[None, :]).sum(axis=1)
    return counts


def erm(pclass: FinitePolicyClass, corpus: List[Trajectory]):
    """Smallest-id minimizer of the empirical mistake count."""
    counts = mistake_counts(pclass, corpus)
    i = int(counts.argmin())
    return i, counts


def behavior_cloning(session: LocalSimSession, pclass: FinitePolicyClass, expert: PolicyLike,
                     params: CloneParams, return_details: bool = False):
    corpus = collect(session, expert, params.n_bc)
    i, counts = erm(pclass, corpus)
    policy = pclass.policy(i)
    if return_details:
        return policy, {"index": i, "mistakes": int(counts[i]), "corpus": corpus}
    return policy
