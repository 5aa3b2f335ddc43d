"""Global optimism over a finite Q-class with simulator-estimated Bellman residuals."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .classes import FiniteQClass
from .mdp import LocalSimSession, PolicyTable, TERMINAL


class EmptyConfidenceSetError(RuntimeError):
    """Every candidate was eliminated: beta is too small or the class is not realizable."""


@dataclass(frozen=True)
class SimGolfParams:
    n_iter: int
    k: int
    beta_stat: float
    beta: float

    @classmethod
    def from_theory(cls, horizon: int, c_cov: float, eps: float, delta: float, class_size: int,
                    scale_n: float = 1.0, scale_k: float = 1.0) -> "SimGolfParams":
        """Iteration count, batch size and threshold from the accuracy target.

        ``N = ceil(scale_n H^2 C_cov beta / eps^2)`` with
        ``beta = 32 ln(2 H N |Q| / delta)``; the dependence of beta on N is
        resolved by one pass (guess N = 1, compute N, recompute beta and N).
        """
        if scale_n <= 0 or scale_k <= 0:
            raise ValueError("scales must be positive")
        H = horizon

        def beta_of(n):
            return 32.0 * math.log(2 * H * n * class_size / delta)

        n = max(1, math.ceil(scale_n * H ** 2 * c_cov * beta_of(1) / eps ** 2))
        n = max(1, math.ceil(scale_n * H ** 2 * c_cov * beta_of(n) / eps ** 2))
        beta_stat = 16.0 * math.log(2 * H * n * class_size / delta)
        k = max(1, math.ceil(scale_k * 8 * n / beta_stat))
        return cls(n, k, beta_stat, 2 * beta_stat)


@dataclass
class ConfidenceState:
    """Cumulative squared residuals per candidate and layer, plus the active set."""

    residuals: np.ndarray  # (m, H)
    beta: float
    active: np.ndarray     # bool (m,)
    optimism: np.ndarray   # (m,) running sum of max_a g_1(x_1^s, a)

    @classmethod
    def fresh(cls, m: int, H: int, beta: float) -> "ConfidenceState":
        return cls(np.zeros((m, H)), beta, np.ones(m, dtype=bool), np.zeros(m))

    @property
    def active_ids(self) -> np.ndarray:
        return np.flatnonzero(self.active)


def optimistic_select(conf: ConfidenceState) -> int:
    """Active candidate with the largest optimism score; smallest id on ties."""
    ids = conf.active_ids
    if ids.size == 0:
        raise EmptyConfidenceSetError("confidence set is empty")
    return int(ids[conf.optimism[ids].argmax()])


def record_start_state(conf: ConfidenceState, qclass: FiniteQClass, x1: int) -> None:
    conf.optimism += qclass.tables[0][:, x1, :].max(axis=1)


def confidence_update(conf: ConfidenceState, qclass: FiniteQClass, states, actions,
                      rewards: np.ndarray, next_states: np.ndarray) -> ConfidenceState:
    """Add one iteration of squared residuals for every member and shrink the active set.

    ``rewards`` and ``next_states`` are ``(H, K)`` simulator draws taken at the
    visited pairs ``(states[h-1], actions[h-1])``.
    """
    H = len(qclass.tables)
    rewards = np.asarray(rewards, dtype=float)
    next_states = np.asarray(next_states)
    if rewards.shape[0] != H or rewards.shape != next_states.shape:
        raise ValueError(f"draws must have shape (H, K); got {rewards.shape}, {next_states.shape}")
    for h in range(1, H + 1):
        x, a = states[h - 1], actions[h - 1]
        pred = qclass.tables[h - 1][:, x, a]
        if h < H:
            vmax = qclass.tables[h][:, next_states[h - 1], :].max(axis=2)  # (m, K)
            target = (rewards[h - 1][None, :] + vmax).mean(axis=1)
        else:
            target = np.full(len(qclass), rewards[h - 1].mean())
        conf.residuals[:, h - 1] += (pred - target) ** 2
    conf.active &= (conf.residuals <= conf.beta).all(axis=1)
    return conf


@dataclass
class SimGolfResult:
    policies: List[PolicyTable]
    selected: List[int]
    active_sizes: List[int]
    residual_max: List[float]
    conf: ConfidenceState
    ledger: dict = field(default_factory=dict)

    def mixture_return(self, evaluate) -> float:
        """Average of ``evaluate(policy)`` over the mixture components."""
        return float(np.mean([evaluate(p) for p in self.policies]))


def run_simgolf(session: LocalSimSession, qclass: FiniteQClass, params: SimGolfParams,
                on_iteration=None) -> SimGolfResult:
    """Run the algorithm; the output policy is the uniform mixture of ``policies``."""
    mdp = session.mdp
    H, A = mdp.H, mdp.A
    conf = ConfidenceState.fresh(len(qclass), H, params.beta)
    policies, selected, sizes, rmax = [], [], [], []
    for t in range(1, params.n_iter + 1):
        g = optimistic_select(conf)
        pi = qclass.greedy_policy(g, A)
        traj = session.episode(pi)
        states = [s[1] for s in traj.steps]
        actions = [s[2] for s in traj.steps]
        rs = np.zeros((H, params.k))
        xs = np.full((H, params.k), TERMINAL)
        for h in range(1, H + 1):
            rs[h - 1], xs[h - 1] = session.sample(h, states[h - 1], actions[h - 1], params.k)
        record_start_state(conf, qclass, states[0])
        confidence_update(conf, qclass, states, actions, rs, xs)
        policies.append(pi)
        selected.append(g)
        sizes.append(int(conf.active.sum()))
        rmax.append(float(conf.residuals[conf.active].max()) if conf.active.any() else math.nan)
        if on_iteration is not None:
            on_iteration(t, g, pi, conf)
        if not conf.active.any():
            raise EmptyConfidenceSetError(f"all candidates eliminated at iteration {t}")
    return SimGolfResult(policies, selected, sizes, rmax, conf, session.ledger.snapshot())
