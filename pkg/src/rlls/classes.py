"""Finite value-function, Q-function and policy classes.

Members are stored stacked per layer so that scans over a class are
vectorized: ``tables[h-1]`` has shape ``(m, n_h)`` for V-classes,
``(m, n_h, A)`` for Q-classes and ``(m, n_h)`` (actions) for policy classes.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .mdp import PolicyTable, TabularMDP
from .oracle import policy_eval


class EmptyClassError(ValueError):
    pass


@dataclass
class _Stacked:
    tables: List[np.ndarray]
    origin: str = "hand-built"
    injected_id: Optional[int] = None

    def __post_init__(self):
        self.tables = [np.asarray(t, dtype=float) for t in self.tables]
        if not self.tables or self.tables[0].shape[0] == 0:
            raise EmptyClassError("function classes must be nonempty")
        m = self.tables[0].shape[0]
        if any(t.shape[0] != m for t in self.tables):
            raise ValueError("every layer must list the same members")
        H = len(self.tables)
        if any(np.any(t < 0) or np.any(t > H + 1e-12) for t in self.tables):
            raise ValueError("members must take values in [0, H]")

    def __len__(self) -> int:
        return self.tables[0].shape[0]

    @property
    def H(self) -> int:
        return len(self.tables)

    def member(self, i: int) -> List[np.ndarray]:
        return [t[i] for t in self.tables]

    def sup_distance(self, target: Sequence[np.ndarray]) -> np.ndarray:
        """Sup-norm distance of every member to ``target`` across all layers."""
        d = np.zeros(len(self))
        for t, g in zip(self.tables, target):
            diff = np.abs(t - np.asarray(g)[None])
            d = np.maximum(d, diff.reshape(len(self), -1).max(axis=1))
        return d

    def shuffled(self, rng: np.random.Generator):
        perm = rng.permutation(len(self))
        inj = None if self.injected_id is None else int(np.flatnonzero(perm == self.injected_id)[0])
        return type(self)([t[perm] for t in self.tables], self.origin, inj)

    def to_dict(self) -> dict:
        return {"kind": type(self).__name__, "origin": self.origin,
                "injected_id": self.injected_id,
                "tables": [t.tolist() for t in self.tables]}

    @classmethod
    def from_dict(cls, d):
        return cls([np.asarray(t, dtype=float) for t in d["tables"]], d.get("origin", "hand-built"),
                   d.get("injected_id"))

    @classmethod
    def from_members(cls, members: Sequence[Sequence[np.ndarray]], origin="hand-built",
                     injected_id=None):
        if not members:
            raise EmptyClassError("function classes must be nonempty")
        H = len(members[0])
        return cls([np.stack([np.asarray(m[h], dtype=float) for m in members]) for h in range(H)],
                   origin, injected_id)


class FiniteVClass(_Stacked):
    """State-value functions ``x -> f_h(x)``."""


class FiniteQClass(_Stacked):
    """State-action value functions ``(x, a) -> g_h(x, a)``."""

    def greedy_policy(self, i: int, A: int) -> PolicyTable:
        return PolicyTable.from_actions([t[i].argmax(axis=1) for t in self.tables], A)


@dataclass
class FinitePolicyClass:
    """Deterministic policies: ``actions[h-1][i, x]``."""

    actions: List[np.ndarray]
    num_actions: int
    origin: str = "hand-built"
    injected_id: Optional[int] = None

    def __post_init__(self):
        self.actions = [np.asarray(a, dtype=int) for a in self.actions]
        if not self.actions or self.actions[0].shape[0] == 0:
            raise EmptyClassError("policy classes must be nonempty")
        for a in self.actions:
            if a.min() < 0 or a.max() >= self.num_actions:
                raise ValueError("policy actions out of range")

    def __len__(self) -> int:
        return self.actions[0].shape[0]

    def policy(self, i: int) -> PolicyTable:
        return PolicyTable.from_actions([a[i] for a in self.actions], self.num_actions)

    @classmethod
    def from_policies(cls, policies: Sequence[PolicyTable], origin="hand-built"):
        A = policies[0].probs[0].shape[1]
        H = policies[0].H
        return cls([np.stack([p.actions()[h] for p in policies]) for h in range(H)], A, origin)

    def to_dict(self) -> dict:
        return {"kind": "FinitePolicyClass", "num_actions": self.num_actions,
                "origin": self.origin, "actions": [a.tolist() for a in self.actions]}

    @classmethod
    def from_dict(cls, d):
        return cls([np.asarray(a, dtype=int) for a in d["actions"]], d["num_actions"],
                   d.get("origin", "hand-built"))


# ---------------------------------------------------------------------------
# ExBMDP-induced classes


def _grid_levels(H: int, grid_step: float) -> np.ndarray:
    k = H / grid_step
    if grid_step <= 0 or abs(k - round(k)) > 1e-9:
        raise ValueError("grid_step must divide H into an integer number of levels")
    return np.linspace(0.0, H, int(round(k)) + 1)


def snap_to_grid(values, H: int, grid_step: float) -> np.ndarray:
    levels = _grid_levels(H, grid_step)
    idx = np.clip(np.round(np.asarray(values) / grid_step), 0, len(levels) - 1).astype(int)
    return levels[idx]


def build_exbmdp_q_class(decoders, S: int, A: int, H: int, grid_step: float, budget: int,
                         rng: np.random.Generator,
                         latent_qstar: Optional[Sequence[np.ndarray]] = None) -> FiniteQClass:
    """Members ``(x, a) -> g_h(phi_h(x), a)`` for random grid tables ``g``.

    ``budget`` tables are drawn per decoder.  When ``latent_qstar`` is given,
    the first member built on the true decoder is the grid-rounded latent Q*.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    levels = _grid_levels(H, grid_step)
    tables = [[] for _ in range(H)]
    injected = None
    for j, phi in enumerate(decoders.maps):
        for b in range(budget):
            if latent_qstar is not None and j == decoders.true_index and b == 0:
                g = [snap_to_grid(q, H, grid_step) for q in latent_qstar]
                injected = j * budget
            else:
                g = [levels[rng.integers(0, len(levels), (S, A))] for _ in range(H)]
            for h in range(H):
                tables[h].append(g[h][phi[h]])
    return FiniteQClass([np.stack(t) for t in tables], "exbmdp-induced", injected)


def build_exbmdp_v_class(decoders, S: int, H: int, grid_step: float, budget: int,
                         rng: np.random.Generator,
                         latent_v: Optional[Sequence[np.ndarray]] = None) -> FiniteVClass:
    """Members ``x -> f_h(phi_h(x))``; optionally injects the latent ``latent_v``.

    The injected member is kept exact rather than grid-rounded so that it is
    an exact realization of the value function it came from.
    """
    if budget < 1:
        raise ValueError("budget must be at least 1")
    levels = _grid_levels(H, grid_step)
    tables = [[] for _ in range(H)]
    injected = None
    for j, phi in enumerate(decoders.maps):
        for b in range(budget):
            if latent_v is not None and j == decoders.true_index and b == 0:
                f = [np.asarray(v, dtype=float) for v in latent_v]
                injected = j * budget
            else:
                f = [levels[rng.integers(0, len(levels), S)] for _ in range(H)]
            for h in range(H):
                tables[h].append(f[h][phi[h]])
    return FiniteVClass([np.stack(t) for t in tables], "exbmdp-induced", injected)


def build_exbmdp_policy_class(decoders, S: int, A: int, H: int,
                              rng: Optional[np.random.Generator] = None,
                              budget: Optional[int] = None,
                              include: Sequence[Sequence[np.ndarray]] = ()) -> FinitePolicyClass:
    """Endogenous deterministic policies ``x -> pi_h(phi_h(x))``.

    Enumerates all latent action tables when there are at most ``budget`` of
    them per decoder (or ``budget`` is None); otherwise samples ``budget``
    random tables.  Latent tables in ``include`` are added for the true decoder.
    """
    total = A ** (S * H)
    tables = [[] for _ in range(H)]

    def add(phi, lat):
        for h in range(H):
            tables[h].append(np.asarray(lat[h])[phi[h]])

    for j, phi in enumerate(decoders.maps):
        if budget is None or total <= budget:
            for combo in itertools.product(range(A), repeat=S * H):
                add(phi, np.asarray(combo).reshape(H, S))
        else:
            for _ in range(budget):
                add(phi, rng.integers(0, A, (H, S)))
        if j == decoders.true_index:
            for lat in include:
                add(phi, lat)
    return FinitePolicyClass([np.stack(t) for t in tables], A, "exbmdp-induced")


# ---------------------------------------------------------------------------
# Realizability


def check_qstar_realizable(qclass: FiniteQClass, Qstar: Sequence[np.ndarray], tol: float) -> bool:
    return bool(qclass.sup_distance(Qstar).min() <= tol)


def check_v_realizable(vclass: FiniteVClass, target: Sequence[np.ndarray], tol: float) -> bool:
    return bool(vclass.sup_distance(target).min() <= tol)


def check_vpi_realizable(vclass: FiniteVClass, mdp: TabularMDP,
                         policies: Sequence[PolicyTable], tol: float) -> bool:
    for pi in policies:
        _, V = policy_eval(mdp, pi)
        if not check_v_realizable(vclass, V, tol):
            return False
    return True
