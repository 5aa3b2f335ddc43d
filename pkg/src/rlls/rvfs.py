"""Recursive value function search with core-sets and implicit confidence sets.

The recursion is driven by :class:`RvfsRunner`, which owns the session, the
value-function class and the mutable :class:`RvfsState`.  The same runner
serves the exogenous-noise variant; only the action rule, the backup
accuracy and the test threshold differ (see :mod:`rlls.rvfs_exo`).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from .backup import BackupParams, greedy_action, phat_many, rounded_action
from .classes import FinitePolicyClass, FiniteVClass
from .imitation import CloneParams, behavior_cloning
from .mdp import LocalSimSession, ROOT


class BudgetExceededError(RuntimeError):
    """A core-set outgrew its theoretical bound or the run exceeded its test budget."""


def _log(*factors) -> float:
    return sum(math.log(f) for f in factors)


@dataclass(frozen=True)
class RvfsParams:
    """Sample sizes and thresholds.

    ``n_test``, ``n_reg`` and ``n_est`` are the counts actually used.  The
    thresholds (``m``, ``delta_prime``, ``eps_reg_sq``, ``beta``) are always
    computed from the unscaled formulas.
    """

    eps: float
    delta: float
    num_actions: int
    class_size: int
    m: int
    n_test: int
    n_reg: int
    delta_prime: float
    eps_reg_sq: float
    horizon: int
    beta_scale: float = 2.0
    n_est_const: Optional[int] = None
    n_sim: Optional[int] = None
    backup_eps: Optional[float] = None
    threshold_eps: Optional[float] = None
    max_tests: Optional[int] = None

    @classmethod
    def from_theory(cls, eps: float, delta: float, c_push: float, horizon: int, num_actions: int,
                    class_size: int, scale: float = 1.0, **overrides) -> "RvfsParams":
        H, A, V = horizon, num_actions, class_size
        m = math.ceil(8 * c_push * H / eps)
        n_test = 2 ** 8 * m ** 2 * H / eps * _log(8, m ** 6, H ** 8, eps ** -2, 1 / delta)
        n_reg = 2 ** 8 * m ** 2 / eps * _log(8, V ** 2, H, m ** 2, 1 / delta)
        log_inv_dp = _log(8, m ** 7, n_test ** 2, H ** 8, V, 1 / delta)
        eps_reg_sq = (9 * m * H ** 2 * _log(8, m ** 2, H, V ** 2, 1 / delta) / n_reg
                      + 34 * m * H ** 3 * _log(8, m ** 6, n_test ** 2, H ** 8, 1 / delta) / n_test)
        p = cls(eps, delta, A, V, m, max(1, math.ceil(scale * n_test)),
                max(1, math.ceil(scale * n_reg)), math.exp(-log_inv_dp), eps_reg_sq, H)
        return replace(p, **overrides)

    @property
    def log_inv_delta_prime(self) -> float:
        return -math.log(self.delta_prime) if self.delta_prime > 0 else math.inf

    def n_est(self, k: int) -> int:
        if self.n_est_const is not None:
            return int(self.n_est_const)
        val = 2 * self.n_reg ** 2 * _log(8, self.num_actions, self.n_reg, self.horizon,
                                         max(k, 1) ** 3, 1 / self.delta)
        return max(1, math.ceil(val))

    def beta(self, t: int) -> float:
        """``sqrt(c * log_{1/delta'}(8 A M |V| t^2 / delta))`` with ``c = beta_scale``."""
        arg = _log(8, self.num_actions, self.m, self.class_size, max(t, 1) ** 2, 1 / self.delta)
        return math.sqrt(max(0.0, self.beta_scale * arg / self.log_inv_delta_prime))

    def threshold(self, t: int) -> float:
        e = self.eps if self.threshold_eps is None else self.threshold_eps
        return e + e * self.beta(t)

    @property
    def backup(self) -> BackupParams:
        e = self.eps if self.backup_eps is None else self.backup_eps
        dp = min(max(self.delta_prime, 1e-300), 0.999999)
        return BackupParams(e, dp, self.n_sim)


@dataclass
class RvfsState:
    """Everything the recursion carries between calls.

    ``v_id[h]`` indexes the class member currently used as the layer-h
    estimate (index 0 unused).  ``core[h]`` and ``data[h]`` hold the layer-h
    core-set and regression data; ``conf[h]`` is the cached confidence mask,
    a pure function of ``v_id[h]``, ``data[h]`` and ``eps_reg_sq``.
    """

    horizon: int
    v_id: List[int]
    core: List[list]
    buffers: List[list]
    data: List[list]
    conf: List[Optional[np.ndarray]]
    t: List[int]
    trace: List[tuple] = field(default_factory=list)
    tests: int = 0

    @classmethod
    def fresh(cls, horizon: int, init_id: int = 0) -> "RvfsState":
        H = horizon
        return cls(H, [init_id] * (H + 1), [[] for _ in range(H + 1)],
                   [[] for _ in range(H + 1)], [[] for _ in range(H + 1)],
                   [None] * (H + 1), [0] * (H + 1))


def confidence_losses(vclass: FiniteVClass, h: int, v_hat: np.ndarray, data: list,
                      n_reg: int) -> np.ndarray:
    """``sum_{(x,a) in C_h} (1/N_reg) sum_{x_h in D_h(x,a)} (Vhat(x_h) - f(x_h))^2`` per member."""
    if not data:
        return np.zeros(len(vclass))
    xs = np.concatenate([d[2] for d in data])
    diff = vclass.tables[h - 1][:, xs] - v_hat[xs][None, :]
    return (diff ** 2).sum(axis=1) / n_reg


def confidence_member(v_hat: np.ndarray, data: list, f: np.ndarray, eps_reg_sq: float,
                      n_reg: int) -> bool:
    """Membership of a single function; an empty dataset admits every function."""
    if not data:
        return True
    xs = np.concatenate([d[2] for d in data])
    return bool(((np.asarray(v_hat)[xs] - np.asarray(f)[xs]) ** 2).sum() / n_reg <= eps_reg_sq)


def least_squares_member(vclass: FiniteVClass, h: int, data: list) -> int:
    xs = np.concatenate([d[2] for d in data])
    ys = np.concatenate([d[3] for d in data])
    loss = ((vclass.tables[h - 1][:, xs] - ys[None, :]) ** 2).sum(axis=1)
    return int(loss.argmin())


class RvfsRunner:
    """One run of the recursion on one session."""

    def __init__(self, session: LocalSimSession, vclass: FiniteVClass, params: RvfsParams,
                 state: Optional[RvfsState] = None, zetas: Optional[Sequence[float]] = None,
                 round_eps: Optional[float] = None, record_passes: bool = True):
        self.session = session
        self.vclass = vclass
        self.params = params
        self.H = session.mdp.H
        self.A = session.mdp.A
        self.state = state or RvfsState.fresh(self.H)
        self.zetas = zetas
        self.round_eps = round_eps
        self.record_passes = record_passes

    # -- value estimates -----------------------------------------------------

    def v_hat(self, h: int) -> Optional[np.ndarray]:
        if h > self.H:
            return None
        return self.vclass.tables[h - 1][self.state.v_id[h]]

    def conf_ids(self, h: int) -> np.ndarray:
        mask = self.state.conf[h]
        return np.arange(len(self.vclass)) if mask is None else np.flatnonzero(mask)

    # -- policy --------------------------------------------------------------

    def action(self, session: LocalSimSession, h: int, x: int) -> int:
        """Backup-greedy (or rounded) action at layer h against the current estimates."""
        if h == 0:
            return 0  # every root action leads to the initial distribution
        v_next = self.v_hat(h + 1)
        if self.zetas is None:
            return greedy_action(session, h, v_next, x, self.params.backup)
        # rounded_action squares eps_round for the backup accuracy itself
        bp = BackupParams(self.round_eps, self.params.backup.delta, self.params.n_sim)
        return rounded_action(session, h, v_next, x, bp, self.zetas[h - 1], self.round_eps)

    def policy(self) -> Callable:
        """The (non-executable) policy defined by the current estimates."""
        return lambda session, h, x: self.action(session, h, x)

    def _advance(self, h: int, x: int, target: int) -> int:
        while h < target:
            a = self.action(self.session, h, x)
            x = self.session.draw_next(h, x, a)
            h += 1
        return x

    def _mc_value(self, h: int, x: int, n: int) -> float:
        s = self.session
        total = 0.0
        for _ in range(n):
            s.reset_to(h, x)
            cur = x
            for tau in range(h, self.H + 1):
                a = self.action(s, tau, cur)
                r, cur = s.step(a)
                total += r
        return total / n

    # -- events ----------------------------------------------------------------

    def _event(self, kind: str, layer: int, depth: int):
        st = self.state
        size = len(st.core[layer]) if 0 <= layer <= self.H else 0
        tl = st.t[layer] if 0 <= layer <= self.H else 0
        st.trace.append((kind, layer, size, tl, self.session.ledger.transitions_sampled, depth))

    # -- the test --------------------------------------------------------------

    def test(self, layer: int, x_prev: int, a_prev: int) -> bool:
        """Distribution-shift test at layer ``layer``; True means pass."""
        st = self.state
        st.t[layer] += 1
        st.tests += 1
        if self.params.max_tests is not None and st.tests > self.params.max_tests:
            raise BudgetExceededError(f"more than {self.params.max_tests} tests")
        ids = self.conf_ids(layer)
        stack = np.vstack([self.v_hat(layer)[None, :], self.vclass.tables[layer - 1][ids]])
        est = phat_many(self.session, layer - 1, stack, x_prev, a_prev, self.params.backup)
        gap = float(np.abs(est[1:] - est[0]).max()) if ids.size else 0.0
        return gap <= self.params.threshold(st.t[layer])

    # -- refit -----------------------------------------------------------------

    def refit(self, h: int) -> None:
        st, p = self.state, self.params
        n_est = p.n_est(len(st.core[h]))
        data = []
        for x_prev, a_prev in st.core[h]:
            xs = np.empty(p.n_reg, dtype=int)
            ys = np.empty(p.n_reg)
            for i in range(p.n_reg):
                xs[i] = self.session.draw_next(h - 1, x_prev, a_prev)
                ys[i] = self._mc_value(h, int(xs[i]), n_est)
            data.append((x_prev, a_prev, xs, ys))
        st.data[h] = data
        if not data:
            # empty core-set: every member has zero loss, keep the current estimate
            st.conf[h] = None
            return
        st.v_id[h] = least_squares_member(self.vclass, h, data)
        losses = confidence_losses(self.vclass, h, self.v_hat(h), data, p.n_reg)
        st.conf[h] = losses <= p.eps_reg_sq

    # -- recursion ---------------------------------------------------------------

    def run(self, h: int = 0, depth: int = 0) -> RvfsState:
        st, p, H = self.state, self.params, self.H
        self._event("recurse", h, depth)
        restart = True
        while restart:
            restart = False
            core = [(ROOT, 0)] if h == 0 else list(st.core[h])
            for x_prev, a_prev in core:
                for ell in range(H, h, -1):
                    for _ in range(p.n_test):
                        x_h = ROOT if h == 0 else self.session.draw_next(h - 1, x_prev, a_prev)
                        x_l1 = self._advance(h, x_h, ell - 1)
                        for a in range(self.A):
                            if self.test(ell, x_l1, a):
                                if self.record_passes:
                                    self._event("test_pass", ell, depth)
                                continue
                            st.core[ell].append((x_l1, a))
                            st.buffers[ell].append((x_l1, a, st.v_id[ell],
                                                    None if st.conf[ell] is None else st.conf[ell].copy(),
                                                    st.t[ell]))
                            self._event("test_fail", ell, depth)
                            if len(st.core[ell]) > p.m:
                                raise BudgetExceededError(
                                    f"core-set at layer {ell} exceeded M = {p.m}")
                            for tau in range(ell, h, -1):
                                self.run(tau, depth + 1)
                            restart = True
                            break
                        if restart:
                            break
                    if restart:
                        break
                if restart:
                    break
        if h > 0:
            self.refit(h)
            self._event("refit", h, depth)
        self._event("return", h, depth)
        return st


def rvfs(session: LocalSimSession, vclass: FiniteVClass, params: RvfsParams,
         state: Optional[RvfsState] = None, h: int = 0) -> RvfsRunner:
    runner = RvfsRunner(session, vclass, params, state)
    runner.run(h)
    return runner


def check_recursion_order(trace: Sequence[tuple]) -> bool:
    """Structural check on a run trace.

    Every call at level ``p`` issues its sub-calls in runs ``l, l-1, ..., p+1``,
    and its last sub-call is at level ``p+1``: once that call has returned,
    no deeper layer is revisited before the caller itself returns.
    """
    stack = []  # [level, children levels]
    for ev in trace:
        kind, layer = ev[0], ev[1]
        if kind == "recurse":
            if stack:
                stack[-1][1].append(layer)
            stack.append([layer, []])
        elif kind == "return":
            level, kids = stack.pop()
            if level != layer:
                return False
            if kids:
                if kids[-1] != level + 1:
                    return False
                # split into descending runs that each end at level + 1
                run_prev = None
                for k in kids:
                    if k <= level:
                        return False
                    if run_prev is not None and run_prev != level + 1 and k != run_prev - 1:
                        return False
                    run_prev = k
    return not stack


def visited_disagreement(mdp, policy_actions, reference_actions) -> float:
    """Probability mass, under ``policy_actions``, of states where it disagrees with the reference."""
    from .mdp import PolicyTable
    from .oracle import occupancy

    pi = PolicyTable.from_actions(policy_actions, mdp.A)
    d = occupancy(mdp, pi)
    mass = 0.0
    for h in range(mdp.H):
        dx = d[h].sum(axis=1)
        mass += float(dx[np.asarray(policy_actions[h]) != np.asarray(reference_actions[h])].sum())
    return mass


def exact_backup_greedy(mdp, v_tables) -> List[np.ndarray]:
    """Greedy actions on exact backups of ``v_tables`` (``v_tables[h-1]`` is layer h)."""
    from .oracle import backup

    out = []
    for h in range(1, mdp.H + 1):
        v_next = v_tables[h] if h < mdp.H else None
        out.append(backup(mdp, h, v_next).argmax(axis=1))
    return out


def rvfs_bc(session: LocalSimSession, pclass: FinitePolicyClass, vclass: FiniteVClass,
            eps: float, delta: float, c_push: float, scale: float = 1.0,
            clone_override: Optional[int] = None, eps_rvfs: Optional[float] = None, **overrides):
    """RVFS at level 0 followed by behavior cloning of its backup-greedy policy.

    RVFS runs at accuracy ``eps / (48 H)`` and confidence ``delta / 10``;
    cloning runs at ``(eps, delta / 2)``.  Returns ``(policy, runner, details)``.
    """
    mdp = session.mdp
    e_r = eps / (48 * mdp.H) if eps_rvfs is None else eps_rvfs
    params = RvfsParams.from_theory(e_r, delta / 10, c_push, mdp.H, mdp.A, len(vclass),
                                    scale=scale, **overrides)
    runner = rvfs(session, vclass, params)
    after_rvfs = session.ledger.snapshot()
    cp = CloneParams(eps, delta / 2, mdp.H, len(pclass), clone_override)
    policy, details = behavior_cloning(session, pclass, runner.policy(), cp, return_details=True)
    details["ledger_rvfs"] = after_rvfs
    details["ledger_total"] = session.ledger.snapshot()
    return policy, runner, details
