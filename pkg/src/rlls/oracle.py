"""Exact dynamic programming on tabular MDPs.

Value tables are lists indexed by ``h-1``; ``V_{H+1}`` is implicitly zero.
Argmaxes break ties toward the smallest action index.
"""
from __future__ import annotations

import math
from fractions import Fraction
from typing import List, Optional, Sequence

import numpy as np

from .mdp import PolicyTable, TabularMDP

TIE_TOL = 1e-12


def backup(mdp: TabularMDP, h: int, v_next: Optional[np.ndarray]) -> np.ndarray:
    """``P_h[v](x, a) = R_h(x, a) + E[v(x') | x, a]`` for every ``(x, a)``."""
    R = mdp.reward_means[h - 1]
    if h == mdp.H or v_next is None:
        return R.copy()
    return R + mdp.transitions[h - 1] @ v_next


def greedy(Q: np.ndarray) -> np.ndarray:
    return Q.argmax(axis=-1)


def value_iteration(mdp: TabularMDP):
    """Backward induction; returns ``(Qstar, Vstar, pistar)``."""
    H = mdp.H
    Q: List[np.ndarray] = [None] * H
    V: List[np.ndarray] = [None] * H
    v_next = None
    for h in range(H, 0, -1):
        Q[h - 1] = backup(mdp, h, v_next)
        V[h - 1] = Q[h - 1].max(axis=1)
        v_next = V[h - 1]
    pi = PolicyTable.from_actions([greedy(q) for q in Q], mdp.A)
    return Q, V, pi


def bellman_residual(mdp: TabularMDP, Q: Sequence[np.ndarray]) -> float:
    """Largest entry of ``|Q_h - T_h[Q_{h+1}]|`` over all layers."""
    worst = 0.0
    for h in range(1, mdp.H + 1):
        v_next = Q[h].max(axis=1) if h < mdp.H else None
        worst = max(worst, float(np.abs(Q[h - 1] - backup(mdp, h, v_next)).max()))
    return worst


def policy_eval(mdp: TabularMDP, policy: PolicyTable):
    Q: List[np.ndarray] = [None] * mdp.H
    V: List[np.ndarray] = [None] * mdp.H
    v_next = None
    for h in range(mdp.H, 0, -1):
        Q[h - 1] = backup(mdp, h, v_next)
        V[h - 1] = (policy.probs[h - 1] * Q[h - 1]).sum(axis=1)
        v_next = V[h - 1]
    return Q, V


def expected_return(mdp: TabularMDP, policy: PolicyTable) -> float:
    _, V = policy_eval(mdp, policy)
    return float(mdp.init_dist @ V[0])


def occupancy(mdp: TabularMDP, policy: PolicyTable) -> List[np.ndarray]:
    """State-action occupancies ``d_h(x, a)`` by forward recursion."""
    d = []
    dx = mdp.init_dist
    for h in range(1, mdp.H + 1):
        dxa = dx[:, None] * policy.probs[h - 1]
        d.append(dxa)
        if h < mdp.H:
            dx = np.einsum("xa,xay->y", dxa, mdp.transitions[h - 1])
    return d


def return_from_occupancy(mdp: TabularMDP, d: Sequence[np.ndarray]) -> float:
    return float(sum((dh * R).sum() for dh, R in zip(d, mdp.reward_means)))


def max_reachability(mdp: TabularMDP, h: int) -> np.ndarray:
    """``max_pi P^pi[x_h = x]`` for every layer-h state."""
    n = mdp.n(h)
    # w[y, x] = best probability of reaching target x from y (vectorized over targets).
    w = np.eye(n)
    for k in range(h - 1, 0, -1):
        w = np.einsum("yaz,zx->yax", mdp.transitions[k - 1], w).max(axis=1)
    return mdp.init_dist @ w


def coverability(mdp: TabularMDP):
    """Per-layer coverability and its max.

    Uses the cumulative-reachability form ``sum_{x,a} sup_pi d_h^pi(x, a)``;
    since the action at ``x`` is free, ``sup_pi d_h^pi(x, a)`` equals the
    max reachability of ``x``.
    """
    per_layer = np.array([mdp.A * max_reachability(mdp, h).sum() for h in range(1, mdp.H + 1)])
    return per_layer, float(per_layer.max())


def pushforward_coverability(mdp: TabularMDP):
    """Per-layer ``sum_{x'} max_{x,a} T_{h-1}(x' | x, a)`` and its max.

    The infimum over ``mu`` is attained by ``mu`` proportional to the column
    maxima.  Layer 1 uses the single row ``init_dist``.
    """
    per_layer = [float(mdp.init_dist.sum())]
    for T in mdp.transitions:
        per_layer.append(float(T.reshape(-1, T.shape[-1]).max(axis=0).sum()))
    per_layer = np.array(per_layer)
    return per_layer, float(per_layer.max())


def min_gap(mdp: TabularMDP, Qstar: Optional[Sequence[np.ndarray]] = None):
    """Smallest gap between the optimal and second-best action over all ``(h, x)``.

    Returns ``(gap, unique)``; ``unique`` is False when some state has a tie
    within ``TIE_TOL``.  With a single action the gap is ``inf``.
    """
    if Qstar is None:
        Qstar, _, _ = value_iteration(mdp)
    if mdp.A == 1:
        return math.inf, True
    gap = math.inf
    for Q in Qstar:
        top2 = np.sort(Q, axis=1)[:, -2:]
        gap = min(gap, float((top2[:, 1] - top2[:, 0]).min()))
    return gap, gap > TIE_TOL


def exo_marginals(init: np.ndarray, kernels: Sequence[np.ndarray]) -> List[np.ndarray]:
    m = [np.asarray(init, dtype=float)]
    for K in kernels:
        m.append(m[-1] @ K)
    return m


def weak_correlation_coeff(init: np.ndarray, kernels: Sequence[np.ndarray]) -> float:
    """Max ratio of the consecutive joint law to the product of marginals."""
    marg = exo_marginals(init, kernels)
    worst = 0.0
    for h, K in enumerate(kernels):
        joint = marg[h][:, None] * K
        prod = np.outer(marg[h], marg[h + 1])
        mask = prod > 0
        if mask.any():
            worst = max(worst, float((joint[mask] / prod[mask]).max()))
    return worst


# ---------------------------------------------------------------------------
# Rounded benchmark policy


def round_bins(q, eps: float, zeta: float) -> np.ndarray:
    """``ceil(q / eps + zeta)`` evaluated exactly on the binary values given.

    Floats are used first; entries whose argument sits within 1e-9 of an
    integer are recomputed with exact rational arithmetic.
    """
    q = np.asarray(q, dtype=float)
    z = q / eps + zeta
    out = np.ceil(z).astype(np.int64)
    close = np.abs(z - np.round(z)) < 1e-9
    if close.any():
        fe, fz = Fraction(eps), Fraction(zeta)
        flat = out.reshape(-1)
        for i in np.flatnonzero(close.reshape(-1)):
            flat[i] = math.ceil(Fraction(float(q.reshape(-1)[i])) / fe + fz)
        out = flat.reshape(q.shape)
    return out


def rounded_greedy(q: np.ndarray, eps: float, zeta: float) -> np.ndarray:
    return round_bins(q, eps, zeta).argmax(axis=-1)


def benchmark_bar_policy(mdp: TabularMDP, eps: float, zetas: Sequence[float]):
    """Deterministic benchmark policy: greedy on rounded exact backups of its own values.

    Returns ``(policy, backups)`` where ``backups[h-1]`` is ``P_h[V^pibar_{h+1}]``.
    """
    H = mdp.H
    acts: List[np.ndarray] = [None] * H
    backups: List[np.ndarray] = [None] * H
    v_next = None
    for h in range(H, 0, -1):
        q = backup(mdp, h, v_next)
        backups[h - 1] = q
        acts[h - 1] = rounded_greedy(q, eps, zetas[h - 1])
        v_next = q[np.arange(q.shape[0]), acts[h - 1]]
    return PolicyTable.from_actions(acts, mdp.A), backups


def performance_difference(mdp: TabularMDP, pi: PolicyTable, pi_hat: PolicyTable) -> float:
    """``sum_h E^pi[Q^pihat_h(x_h, pi) - Q^pihat_h(x_h, pihat)]``."""
    Qhat, Vhat = policy_eval(mdp, pi_hat)
    d = occupancy(mdp, pi)
    total = 0.0
    for h in range(mdp.H):
        dx = d[h].sum(axis=1)
        adv = (pi.probs[h] * Qhat[h]).sum(axis=1) - Vhat[h]
        total += float(dx @ adv)
    return total
