"""Exogenous Block MDP instances.

Observations are the injective pairing ``x = s * Xi + xi`` of an endogenous
state ``s`` and an exogenous state ``xi``; the true decoder is ``x // Xi``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .mdp import TabularMDP, make_rng

FLATTEN_BUDGET = 4096


class InfeasibleGapError(ValueError):
    pass


@dataclass
class DecoderClass:
    """Candidate decoders; ``maps[i][h-1][x]`` is the latent id of observation ``x``."""

    maps: List[List[np.ndarray]]
    true_index: int = 0

    def __len__(self):
        return len(self.maps)

    def __getitem__(self, i):
        return self.maps[i]

    @property
    def true(self) -> List[np.ndarray]:
        return self.maps[self.true_index]

    def to_dict(self) -> dict:
        return {"true_index": self.true_index,
                "maps": [[m.tolist() for m in phi] for phi in self.maps]}

    @classmethod
    def from_dict(cls, d) -> "DecoderClass":
        return cls([[np.asarray(m, dtype=int) for m in phi] for phi in d["maps"]],
                   int(d["true_index"]))


@dataclass
class ExBMDPSpec:
    S: int
    Xi: int
    A: int
    H: int
    endo_init: np.ndarray          # (S,)
    T_endo: List[np.ndarray]       # H-1 arrays (S, A, S)
    exo_init: np.ndarray           # (Xi,)
    T_exo: List[np.ndarray]        # H-1 arrays (Xi, Xi)
    rewards: List[np.ndarray]      # H arrays (S, A)
    reward_law: str = "deterministic-mean"
    lam: float = 0.0
    target_gap: Optional[float] = None

    @property
    def n_obs(self) -> int:
        return self.S * self.Xi

    def emit(self, s, xi):
        return s * self.Xi + xi

    def decode(self, x):
        return x // self.Xi

    def phi_star(self) -> List[np.ndarray]:
        return [np.arange(self.n_obs) // self.Xi for _ in range(self.H)]

    def latent_mdp(self) -> TabularMDP:
        """The endogenous chain alone (rewards depend only on it)."""
        return TabularMDP(self.H, (self.S,) * self.H, self.A, self.endo_init,
                          tuple(self.T_endo), tuple(self.rewards), self.reward_law)

    def to_dict(self) -> dict:
        return {
            "S": self.S, "Xi": self.Xi, "A": self.A, "H": self.H,
            "endo_init": self.endo_init.tolist(),
            "T_endo": [T.tolist() for T in self.T_endo],
            "exo_init": self.exo_init.tolist(),
            "T_exo": [T.tolist() for T in self.T_exo],
            "rewards": [R.tolist() for R in self.rewards],
            "reward_law": self.reward_law, "lam": self.lam, "target_gap": self.target_gap,
        }

    @classmethod
    def from_dict(cls, d) -> "ExBMDPSpec":
        a = np.asarray
        return cls(d["S"], d["Xi"], d["A"], d["H"], a(d["endo_init"], float),
                   [a(T, float) for T in d["T_endo"]], a(d["exo_init"], float),
                   [a(T, float) for T in d["T_exo"]], [a(R, float) for R in d["rewards"]],
                   d.get("reward_law", "deterministic-mean"), d.get("lam", 0.0),
                   d.get("target_gap"))


def _gap_rewards(rng, T_endo, S, A, H, gap):
    """Latent rewards whose optimal Q-table has every action gap at least ``gap``.

    Built backward: the optimal action at ``(h, s)`` is drawn among those whose
    continuation value is within ``1 - gap`` of the best, it gets the largest
    reward, and the others are pushed at least ``gap`` below it.
    """
    rewards = [None] * H
    v_next = np.zeros(S)
    for h in range(H, 0, -1):
        cont = T_endo[h - 1] @ v_next if h < H else np.zeros((S, A))
        R = np.zeros((S, A))
        for s in range(S):
            c = cont[s]
            feasible = np.flatnonzero(c >= c.max() - (1.0 - gap))
            star = int(rng.choice(feasible))
            slack = 1.0 + c[star] - c - gap  # R(s, a) <= R(s, star) - 1 + slack
            slack[star] = np.inf
            r_star = 1.0 - rng.uniform(0, min(1.0, slack.min()) * 0.5) if A > 1 else rng.random()
            for a in range(A):
                if a == star:
                    R[s, a] = r_star
                else:
                    hi = r_star + c[star] - c[a] - gap
                    R[s, a] = rng.uniform(0, 1) * min(hi, 1.0)
        rewards[h - 1] = R
        v_next = (R + cont).max(axis=1)
    return rewards


def generate_exbmdp(seed: int, S: int, Xi: int, A: int, H: int, lam: float = 0.0,
                    gap: Optional[float] = None, n_distractors: int = 2,
                    reward_law: str = "deterministic-mean",
                    deterministic_endo: bool = False):
    """Random ExBMDP and a decoder class containing the true decoder at index 0.

    The exogenous kernel at each layer is ``lam * P + (1 - lam) * uniform`` for
    a random permutation ``P``; ``lam = 0`` gives i.i.d. noise.
    """
    if gap is not None and gap > 1:
        raise InfeasibleGapError("a reward gap above 1 cannot be built from rewards in [0, 1]")
    if gap is not None and gap > 0 and S == 1:
        raise InfeasibleGapError("a single latent state makes every policy optimal")
    if min(S, Xi, A, H) < 1 or not 0 <= lam <= 1:
        raise ValueError("targets must be positive and lam in [0, 1]")
    rng = make_rng(seed)

    endo_init = rng.dirichlet(np.ones(S))
    if deterministic_endo:
        T_endo = []
        for _ in range(H - 1):
            T = np.zeros((S, A, S))
            T[np.arange(S)[:, None], np.arange(A)[None, :], rng.integers(0, S, (S, A))] = 1.0
            T_endo.append(T)
        endo_init = np.zeros(S)
        endo_init[rng.integers(S)] = 1.0
    else:
        T_endo = [rng.dirichlet(np.ones(S), size=(S, A)) for _ in range(H - 1)]

    exo_init = np.full(Xi, 1.0 / Xi)
    T_exo = []
    for _ in range(H - 1):
        P = np.eye(Xi)[rng.permutation(Xi)]
        T_exo.append(lam * P + (1.0 - lam) / Xi)

    if S == 1:
        # degenerate latent: rewards ignore the action, so every policy is optimal
        rewards = [np.repeat(rng.random((1, 1)), A, axis=1) for _ in range(H)]
    elif gap is not None:
        rewards = _gap_rewards(rng, T_endo, S, A, H, gap)
    else:
        rewards = [rng.random((S, A)) for _ in range(H)]

    spec = ExBMDPSpec(S, Xi, A, H, endo_init, T_endo, exo_init, T_exo, rewards,
                      reward_law, lam, gap)
    decoders = DecoderClass([spec.phi_star()] + [
        _distractor(rng, spec) for _ in range(n_distractors)], true_index=0)
    return spec, decoders


def _distractor(rng, spec: ExBMDPSpec) -> List[np.ndarray]:
    """Random surjection onto latents disagreeing with the true decoder on >= 25% of observations."""
    n, S = spec.n_obs, spec.S
    truth = np.arange(n) // spec.Xi
    maps = []
    for _ in range(spec.H):
        for _ in range(1000):
            m = rng.integers(0, S, n)
            m[rng.permutation(n)[:S]] = np.arange(S)
            if (m != truth).mean() >= 0.25 or S == 1:
                break
        maps.append(m)
    return maps


def flatten(spec: ExBMDPSpec, budget: int = FLATTEN_BUDGET) -> TabularMDP:
    """Observation-level tabular MDP of the product chain."""
    if spec.n_obs > budget:
        raise ValueError(f"{spec.n_obs} observations per layer exceeds the budget {budget}")
    S, Xi, A = spec.S, spec.Xi, spec.A
    init = np.kron(spec.endo_init, spec.exo_init)
    trans = []
    for Te, Tx in zip(spec.T_endo, spec.T_exo):
        # T[(s, xi), a, (s', xi')] = Te[s, a, s'] * Tx[xi, xi']
        T = np.einsum("sat,xy->sxaty", Te, Tx).reshape(S * Xi, A, S * Xi)
        trans.append(T)
    rew = [np.repeat(R, Xi, axis=0) for R in spec.rewards]
    return TabularMDP(spec.H, (S * Xi,) * spec.H, A, init, tuple(trans), tuple(rew),
                      spec.reward_law)


class ExBMDPSampler:
    """Samples trajectories from the latent generative process directly."""

    def __init__(self, spec: ExBMDPSpec, seed: int = 0):
        self.spec = spec
        self.rng = make_rng(seed)

    def episode_returns(self, actions_of_obs, n: int) -> np.ndarray:
        """Returns of ``n`` episodes under ``actions_of_obs[h-1][x]`` (deterministic)."""
        sp, rng = self.spec, self.rng
        s = rng.choice(sp.S, size=n, p=sp.endo_init)
        xi = rng.choice(sp.Xi, size=n, p=sp.exo_init)
        total = np.zeros(n)
        for h in range(1, sp.H + 1):
            x = sp.emit(s, xi)
            a = np.asarray(actions_of_obs[h - 1])[x]
            mean = sp.rewards[h - 1][s, a]
            total += mean if sp.reward_law == "deterministic-mean" else (rng.random(n) < mean)
            if h < sp.H:
                u = rng.random((n, 1))
                s = np.minimum((u > np.cumsum(sp.T_endo[h - 1][s, a], axis=1)).sum(1), sp.S - 1)
                u = rng.random((n, 1))
                xi = np.minimum((u > np.cumsum(sp.T_exo[h - 1][xi], axis=1)).sum(1), sp.Xi - 1)
        return total

    def latent_trajectory(self, actions_of_obs):
        """One episode as a list of ``(h, s, xi, x)``."""
        sp, rng = self.spec, self.rng
        s = int(rng.choice(sp.S, p=sp.endo_init))
        xi = int(rng.choice(sp.Xi, p=sp.exo_init))
        out = []
        for h in range(1, sp.H + 1):
            x = int(sp.emit(s, xi))
            out.append((h, s, xi, x))
            a = int(actions_of_obs[h - 1][x])
            if h < sp.H:
                s = int(rng.choice(sp.S, p=sp.T_endo[h - 1][s, a]))
                xi = int(rng.choice(sp.Xi, p=sp.T_exo[h - 1][xi]))
        return out
