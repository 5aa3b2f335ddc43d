"""Layered tabular MDPs and the local-simulator session.

Layers are 1-indexed in every public call (``h`` in ``1..H``).  Layer 0 is a
virtual root with a single state whose every action draws the layer-1 state
from ``init_dist`` with zero reward; it lets algorithms treat the initial
distribution as ``T_0(. | root)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np

PROB_TOL = 1e-9
TERMINAL = -1
ROOT = 0

REWARD_LAWS = ("deterministic-mean", "bernoulli-mean")


class ProtocolError(RuntimeError):
    """An algorithm asked the simulator for something the protocol forbids."""


class UnobservedStateError(ProtocolError):
    pass


class TerminalCursorError(ProtocolError):
    pass


class InvalidActionError(ProtocolError):
    pass


def _check_rows(P: np.ndarray, what: str) -> None:
    if np.any(P < 0):
        raise ValueError(f"{what}: negative probability")
    s = P.sum(axis=-1)
    if np.any(np.abs(s - 1.0) > PROB_TOL):
        raise ValueError(f"{what}: rows must sum to 1 (max error {np.abs(s - 1).max():.3g})")


@dataclass(frozen=True)
class TabularMDP:
    """Layered episodic MDP.

    ``transitions[h-1]`` has shape ``(n_h, A, n_{h+1})`` for ``h = 1..H-1`` and
    ``reward_means[h-1]`` has shape ``(n_h, A)``.
    """

    horizon: int
    states_per_layer: tuple
    num_actions: int
    init_dist: np.ndarray
    transitions: tuple
    reward_means: tuple
    reward_law: str = "bernoulli-mean"

    def __post_init__(self):
        H, A = self.horizon, self.num_actions
        n = tuple(int(k) for k in self.states_per_layer)
        object.__setattr__(self, "states_per_layer", n)
        init = np.asarray(self.init_dist, dtype=float)
        trans = tuple(np.asarray(T, dtype=float) for T in self.transitions)
        rew = tuple(np.asarray(R, dtype=float) for R in self.reward_means)
        object.__setattr__(self, "init_dist", init)
        object.__setattr__(self, "transitions", trans)
        object.__setattr__(self, "reward_means", rew)
        for arr in (init, *trans, *rew):
            arr.setflags(write=False)

        if H < 1 or A < 1:
            raise ValueError("horizon and num_actions must be positive")
        if len(n) != H or min(n) < 1:
            raise ValueError("states_per_layer must list H positive counts")
        if self.reward_law not in REWARD_LAWS:
            raise ValueError(f"unknown reward law {self.reward_law!r}")
        if init.shape != (n[0],):
            raise ValueError("init_dist shape does not match layer 1")
        _check_rows(init, "init_dist")
        if len(trans) != H - 1:
            raise ValueError("need H-1 transition tables")
        for h, T in enumerate(trans, start=1):
            if T.shape != (n[h - 1], A, n[h]):
                raise ValueError(f"transition table for layer {h} has shape {T.shape}")
            _check_rows(T, f"T_{h}")
        if len(rew) != H:
            raise ValueError("need H reward tables")
        for h, R in enumerate(rew, start=1):
            if R.shape != (n[h - 1], A):
                raise ValueError(f"reward table for layer {h} has shape {R.shape}")
            if np.any(R < 0) or np.any(R > 1):
                raise ValueError("reward means must lie in [0, 1]")

    @property
    def H(self) -> int:
        return self.horizon

    @property
    def A(self) -> int:
        return self.num_actions

    def n(self, h: int) -> int:
        """Number of states at layer ``h`` (1 for the virtual root)."""
        return 1 if h == 0 else self.states_per_layer[h - 1]

    def next_row(self, h: int, x: int, a: int) -> np.ndarray:
        """Distribution of the layer-(h+1) state; layer H returns an empty row."""
        if h == 0:
            return self.init_dist
        if h == self.horizon:
            return np.zeros(0)
        return self.transitions[h - 1][x, a]

    def reward_mean(self, h: int, x: int, a: int) -> float:
        return 0.0 if h == 0 else float(self.reward_means[h - 1][x, a])

    # -- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "horizon": self.horizon,
            "states_per_layer": list(self.states_per_layer),
            "num_actions": self.num_actions,
            "init_dist": self.init_dist.tolist(),
            "transitions": [T.tolist() for T in self.transitions],
            "reward_means": [R.tolist() for R in self.reward_means],
            "reward_law": self.reward_law,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TabularMDP":
        # Probabilities may be given as decimal strings.
        def arr(v):
            return np.asarray(v, dtype=object).astype(float)

        return cls(
            horizon=int(d["horizon"]),
            states_per_layer=tuple(d["states_per_layer"]),
            num_actions=int(d["num_actions"]),
            init_dist=arr(d["init_dist"]),
            transitions=tuple(arr(T) for T in d["transitions"]),
            reward_means=tuple(arr(R) for R in d["reward_means"]),
            reward_law=d.get("reward_law", "bernoulli-mean"),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "TabularMDP":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def twochain(reward_law: str = "deterministic-mean") -> TabularMDP:
    """Two layers, one start state; action ``a`` leads to layer-2 state ``a``.

    Layer-2 state 1 pays 1 under both actions, everything else pays 0, so
    ``Q*_1(0, .) = (0, 1)``.
    """
    T1 = np.zeros((1, 2, 2))
    T1[0, 0, 0] = 1.0
    T1[0, 1, 1] = 1.0
    return TabularMDP(
        horizon=2,
        states_per_layer=(1, 2),
        num_actions=2,
        init_dist=np.array([1.0]),
        transitions=(T1,),
        reward_means=(np.zeros((1, 2)), np.array([[0.0, 0.0], [1.0, 1.0]])),
        reward_law=reward_law,
    )


def random_mdp(rng: np.random.Generator, H: int, n_states, A: int,
               reward_law: str = "bernoulli-mean", sparsity: float = 0.0) -> TabularMDP:
    """Random layered MDP; ``n_states`` is an int or a per-layer sequence."""
    if np.isscalar(n_states):
        n_states = [int(n_states)] * H
    n = list(n_states)
    init = rng.dirichlet(np.ones(n[0]))
    trans = []
    for h in range(H - 1):
        T = rng.dirichlet(np.ones(n[h + 1]), size=(n[h], A))
        if sparsity > 0:
            T = np.where(rng.random(T.shape) < sparsity, 0.0, T)
            T[..., 0] += (T.sum(-1) == 0)
            T = T / T.sum(-1, keepdims=True)
        trans.append(T)
    rew = [rng.random((n[h], A)) for h in range(H)]
    return TabularMDP(H, tuple(n), A, init, tuple(trans), tuple(rew), reward_law)


# ---------------------------------------------------------------------------
# Policies and trajectories


@dataclass
class PolicyTable:
    """Per-layer action distributions: ``probs[h-1]`` has shape ``(n_h, A)``."""

    probs: List[np.ndarray]
    deterministic: bool = False

    def __post_init__(self):
        self.probs = [np.asarray(p, dtype=float) for p in self.probs]
        for p in self.probs:
            _check_rows(p, "policy row")
        if self.deterministic:
            for p in self.probs:
                if not np.all(np.isclose(p.max(axis=1), 1.0)):
                    raise ValueError("deterministic policy rows must be one-hot")

    @classmethod
    def from_actions(cls, actions: Sequence[Sequence[int]], A: int) -> "PolicyTable":
        probs = []
        for acts in actions:
            acts = np.asarray(acts, dtype=int)
            p = np.zeros((len(acts), A))
            p[np.arange(len(acts)), acts] = 1.0
            probs.append(p)
        return cls(probs, deterministic=True)

    @classmethod
    def uniform(cls, mdp: TabularMDP) -> "PolicyTable":
        return cls([np.full((k, mdp.A), 1.0 / mdp.A) for k in mdp.states_per_layer])

    @classmethod
    def constant(cls, mdp: TabularMDP, action: int) -> "PolicyTable":
        return cls.from_actions([[action] * k for k in mdp.states_per_layer], mdp.A)

    @property
    def H(self) -> int:
        return len(self.probs)

    def actions(self) -> List[np.ndarray]:
        """Greedy action per state (the action itself for deterministic tables)."""
        return [p.argmax(axis=1) for p in self.probs]

    def act(self, h: int, x: int, rng: Optional[np.random.Generator] = None) -> int:
        row = self.probs[h - 1][x]
        if self.deterministic or rng is None:
            return int(row.argmax())
        return int(rng.choice(len(row), p=row))


# A callback policy: (session, h, x) -> action.  It may itself draw from the
# simulator (non-executable policies).
PolicyLike = Union[PolicyTable, Callable[["LocalSimSession", int, int], int]]


@dataclass
class Trajectory:
    steps: List[tuple] = field(default_factory=list)  # (h, x, a, r)

    @property
    def rewards(self) -> List[float]:
        return [s[3] for s in self.steps]

    @property
    def total(self) -> float:
        return float(sum(self.rewards))

    def to_list(self) -> list:
        return [list(s) for s in self.steps]

    @classmethod
    def from_list(cls, data) -> "Trajectory":
        return cls([(int(h), int(x), int(a), float(r)) for h, x, a, r in data])


# ---------------------------------------------------------------------------
# Local simulator session


@dataclass
class SampleLedger:
    episodes_started: int = 0
    transitions_sampled: int = 0
    resets: int = 0

    def snapshot(self) -> dict:
        return {"episodes_started": self.episodes_started,
                "transitions_sampled": self.transitions_sampled,
                "resets": self.resets}


def make_rng(seed) -> np.random.Generator:
    """Counter-based Philox stream; portable across platforms for a given seed.

    ``seed`` is an int or a sequence of ints (a keyed sub-stream).
    """
    if isinstance(seed, (list, tuple)):
        return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(s) for s in seed])))
    return np.random.Generator(np.random.Philox(int(seed)))


class LocalSimSession:
    """Online access to an MDP with resets to previously observed states.

    Every draw of a (reward, next state) pair goes through :meth:`step` or
    :meth:`sample` and is counted in :attr:`ledger`.  Resets are only allowed
    to states this session has produced.
    """

    def __init__(self, mdp: TabularMDP, seed: int = 0):
        self.mdp = mdp
        self.rng = make_rng(seed)
        self.observed = [np.zeros(k, dtype=bool) for k in mdp.states_per_layer]
        self.cursor: Optional[tuple] = None
        self.ledger = SampleLedger()

    # -- protocol primitives ------------------------------------------------

    def is_observed(self, h: int, x: int) -> bool:
        if h == 0:
            return x == ROOT
        return 0 <= x < self.mdp.n(h) and bool(self.observed[h - 1][x])

    def start_episode(self) -> int:
        x = int(self.rng.choice(self.mdp.n(1), p=self.mdp.init_dist))
        self.observed[0][x] = True
        self.cursor = (1, x)
        self.ledger.episodes_started += 1
        return x

    def _draw_rewards(self, mean: float, size: int) -> np.ndarray:
        if self.mdp.reward_law == "deterministic-mean":
            return np.full(size, mean)
        return (self.rng.random(size) < mean).astype(float)

    def step(self, action: int):
        if self.cursor is None:
            raise TerminalCursorError("no active episode")
        if not 0 <= action < self.mdp.A:
            raise InvalidActionError(f"action {action} out of range")
        h, x = self.cursor
        r = float(self._draw_rewards(self.mdp.reward_mean(h, x, action), 1)[0])
        self.ledger.transitions_sampled += 1
        if h == self.mdp.H:
            self.cursor = None
            return r, None
        x2 = int(self.rng.choice(self.mdp.n(h + 1), p=self.mdp.next_row(h, x, action)))
        self.observed[h][x2] = True
        self.cursor = (h + 1, x2)
        return r, x2

    def reset_to(self, h: int, x: int) -> None:
        if not (1 <= h <= self.mdp.H) or not self.is_observed(h, x):
            raise UnobservedStateError(f"state {x} at layer {h} has not been observed")
        self.cursor = (h, x)
        self.ledger.resets += 1

    def sample(self, h: int, x: int, a: int, n: int):
        """``n`` independent (reward, next state) draws from ``(h, x, a)``.

        Equivalent to ``n`` rounds of ``reset_to(h, x); step(a)`` and charged
        as such.  At the root (``h == 0``) each draw is a fresh episode start.
        At layer H the next states are ``TERMINAL``.  The episode cursor is not
        moved.
        """
        if not 0 <= a < self.mdp.A:
            raise InvalidActionError(f"action {a} out of range")
        if h == 0:
            if x != ROOT:
                raise UnobservedStateError("the root has a single state")
            xs = self.rng.choice(self.mdp.n(1), size=n, p=self.mdp.init_dist)
            self.observed[0][xs] = True
            self.ledger.episodes_started += n
            return np.zeros(n), xs
        if not self.is_observed(h, x):
            raise UnobservedStateError(f"state {x} at layer {h} has not been observed")
        self.ledger.resets += n
        self.ledger.transitions_sampled += n
        rs = self._draw_rewards(self.mdp.reward_mean(h, x, a), n)
        if h == self.mdp.H:
            return rs, np.full(n, TERMINAL)
        xs = self.rng.choice(self.mdp.n(h + 1), size=n, p=self.mdp.next_row(h, x, a))
        self.observed[h][xs] = True
        return rs, xs

    def draw_next(self, h: int, x: int, a: int) -> int:
        """One next-state draw from ``(h, x, a)`` that leaves the cursor there."""
        if h == 0:
            return self.start_episode()
        self.reset_to(h, x)
        _, x2 = self.step(a)
        return x2

    # -- rollouts -------------------------------------------------------------

    def rollout(self, policy: PolicyLike, from_layer: Optional[int] = None,
                until_layer: Optional[int] = None) -> Trajectory:
        """Run ``policy`` from the cursor until terminal (or ``until_layer``).

        A callback policy may draw from the simulator while choosing its
        action; the cursor is restored (one charged reset) before stepping.
        """
        if self.cursor is None:
            raise TerminalCursorError("no active episode")
        if from_layer is not None and self.cursor[0] != from_layer:
            raise ProtocolError(f"cursor is at layer {self.cursor[0]}, not {from_layer}")
        stop = self.mdp.H if until_layer is None else until_layer
        traj = Trajectory()
        while self.cursor is not None and self.cursor[0] <= stop:
            h, x = self.cursor
            if isinstance(policy, PolicyTable):
                a = policy.act(h, x, self.rng)
            else:
                before = self.ledger.transitions_sampled + self.ledger.episodes_started
                a = int(policy(self, h, x))
                if self.ledger.transitions_sampled + self.ledger.episodes_started != before \
                        or self.cursor != (h, x):
                    self.reset_to(h, x)
            r, _ = self.step(a)
            traj.steps.append((h, x, a, r))
        return traj

    def episode(self, policy: PolicyLike) -> Trajectory:
        self.start_episode()
        return self.rollout(policy, from_layer=1)

    def run_episodes(self, policy: PolicyTable, n: int) -> np.ndarray:
        """Returns of ``n`` on-policy episodes, sampled in a batch."""
        mdp = self.mdp
        xs = self.rng.choice(mdp.n(1), size=n, p=mdp.init_dist)
        self.observed[0][xs] = True
        self.ledger.episodes_started += n
        totals = np.zeros(n)
        for h in range(1, mdp.H + 1):
            P = policy.probs[h - 1][xs]
            if policy.deterministic:
                acts = P.argmax(axis=1)
            else:
                acts = (self.rng.random((n, 1)) > np.cumsum(P, axis=1)).sum(axis=1)
                acts = np.minimum(acts, mdp.A - 1)
            means = mdp.reward_means[h - 1][xs, acts]
            if mdp.reward_law == "deterministic-mean":
                totals += means
            else:
                totals += self.rng.random(n) < means
            self.ledger.transitions_sampled += n
            if h < mdp.H:
                rows = mdp.transitions[h - 1][xs, acts]
                u = self.rng.random((n, 1))
                xs = (u > np.cumsum(rows, axis=1)).sum(axis=1)
                xs = np.minimum(xs, mdp.n(h + 1) - 1)
                self.observed[h][xs] = True
        self.cursor = None
        return totals
