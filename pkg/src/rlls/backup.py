"""Monte-Carlo Bellman backups through the local simulator."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mdp import LocalSimSession
from .oracle import round_bins


@dataclass(frozen=True)
class BackupParams:
    eps: float
    delta: float
    n_sim_override: Optional[int] = None

    def __post_init__(self):
        if not (0 < self.eps) or not (0 < self.delta < 1):
            raise ValueError("need eps > 0 and delta in (0, 1)")

    @property
    def n_sim(self) -> int:
        """``ceil(2 ln(1/delta) / eps^2)``, floored at 1."""
        if self.n_sim_override is not None:
            return int(self.n_sim_override)
        return max(1, math.ceil(2.0 * math.log(1.0 / self.delta) / self.eps ** 2))


def _mean(values: np.ndarray) -> float:
    # Exact on zero-variance samples so rounding tests see the true backup.
    if values.size and values.min() == values.max():
        return float(values[0])
    return math.fsum(values) / values.size


def phat_many(session: LocalSimSession, h: int, f_stack: Optional[np.ndarray], x: int, a: int,
              params: BackupParams) -> np.ndarray:
    """Backups of several functions from one batch of ``n_sim`` draws.

    ``f_stack`` has shape ``(m, n_{h+1})``; returns ``m`` estimates of
    ``E[r + f(x') | x, a]``.  With ``f_stack`` None (or at layer H) the
    single estimate of the mean reward is returned.
    """
    n = params.n_sim
    rs, xs = session.sample(h, x, a, n)
    if f_stack is None or h == session.mdp.H:
        m = 1 if f_stack is None else np.asarray(f_stack).shape[0]
        return np.full(m, _mean(rs))
    vals = rs[None, :] + np.asarray(f_stack)[:, xs]
    out = vals.mean(axis=1)
    const = vals.min(axis=1) == vals.max(axis=1)
    out[const] = vals[const, 0]
    return out


def phat(session: LocalSimSession, h: int, f_next: Optional[np.ndarray], x: int, a: int,
         params: BackupParams) -> float:
    """Estimate ``E[r_h + f(x_{h+1}) | x_h = x, a_h = a]`` from ``n_sim`` fresh draws."""
    n = params.n_sim
    rs, xs = session.sample(h, x, a, n)
    if f_next is None or h == session.mdp.H:
        return _mean(rs)
    return _mean(rs + np.asarray(f_next)[xs])


def backups_all_actions(session, h, f_next, x, params) -> np.ndarray:
    return np.array([phat(session, h, f_next, x, a, params) for a in range(session.mdp.A)])


def greedy_action(session: LocalSimSession, h: int, v_next: Optional[np.ndarray], x: int,
                  params: BackupParams) -> int:
    """Smallest-index argmax of the estimated backups of ``v_next``."""
    return int(backups_all_actions(session, h, v_next, x, params).argmax())


def rounded_action(session: LocalSimSession, h: int, v_next: Optional[np.ndarray], x: int,
                   params: BackupParams, zeta: float, eps_round: float) -> int:
    """Smallest-index argmax of ``ceil(Phat / eps_round + zeta)``.

    The backups are estimated at accuracy ``eps_round**2`` with the
    confidence of ``params``.
    """
    inner = BackupParams(eps_round ** 2, params.delta, params.n_sim_override)
    q = backups_all_actions(session, h, v_next, x, inner)
    return int(round_bins(q, eps_round, zeta).argmax())
