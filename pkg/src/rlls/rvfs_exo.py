"""RVFS for exogenous block MDPs: randomized rounding, snapping checks and boosting.

The recursion itself is :class:`rlls.rvfs.RvfsRunner`; this module supplies
the exogenous parameter forms (accuracy ``eps**2`` for backups, threshold
``eps**2 (1 + beta)``), the rounded action rule and the wrapper that repeats
the search over fresh rounding offsets and keeps the best cloned policy.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import List, Optional, Sequence

import numpy as np

from .classes import FinitePolicyClass, FiniteVClass
from .imitation import CloneParams, behavior_cloning
from .mdp import LocalSimSession, TabularMDP
from .oracle import benchmark_bar_policy, expected_return
from .rvfs import RvfsParams, RvfsRunner, RvfsState, _log


class ConfigError(ValueError):
    pass


def exo_params(eps: float, delta: float, c_exo: float, S: int, A: int, H: int, class_size: int,
               scale: float = 1.0, **overrides) -> RvfsParams:
    """Parameters of the exogenous variant as an :class:`RvfsParams`.

    ``M = ceil(8 eps^-2 C_exo S A H)``; tests and backups run at accuracy
    ``eps^2`` and the confidence width uses ``beta(t) = sqrt(log_{1/delta'}(...))``.
    """
    V = class_size
    m = math.ceil(8 * c_exo * S * A * H / eps ** 2)
    n_test = 2 ** 8 * m ** 2 * H / eps ** 2 * _log(8, m ** 6, H ** 8, eps ** -2, 1 / delta)
    n_reg = 2 ** 8 * m ** 2 / eps ** 2 * _log(8, V, H, m ** 2, 1 / delta)
    log_inv_dp = _log(4, m ** 7, n_test ** 2, H ** 8, V, 1 / delta)
    eps_reg_sq = (9 * m * H ** 2 * _log(8, m ** 2, H, V, 1 / delta) / n_reg
                  + 34 * m * H ** 3 * _log(8, m ** 6, n_test ** 2, H ** 8, 1 / delta) / n_test)
    p = RvfsParams(eps, delta, A, V, m, max(1, math.ceil(scale * n_test)),
                   max(1, math.ceil(scale * n_reg)), math.exp(-log_inv_dp), eps_reg_sq, H,
                   beta_scale=1.0, backup_eps=eps ** 2, threshold_eps=eps ** 2)
    return replace(p, **overrides)


def rvfs_exo(session: LocalSimSession, vclass: FiniteVClass, params: RvfsParams,
             zetas: Sequence[float], state: Optional[RvfsState] = None, h: int = 0,
             record_passes: bool = True) -> RvfsRunner:
    """Run the recursion with rounded-greedy policies at rounding width ``params.eps``."""
    if len(zetas) != session.mdp.H or any(not 0 <= z <= 0.5 for z in zetas):
        raise ValueError("need one offset in [0, 1/2] per layer")
    runner = RvfsRunner(session, vclass, params, state, zetas=list(zetas), round_eps=params.eps,
                        record_passes=record_passes)
    runner.run(h)
    return runner


# ---------------------------------------------------------------------------
# Snapping


def snap_check(mdp: TabularMDP, eps: float, zetas: Sequence[float]) -> dict:
    """Check the per-(h, x, a) snapping conditions on the exact backups of the benchmark.

    ``violating`` lists the triples inside the union-bound event (the
    offset falls within ``4 eps`` of a bin edge, or ``zeta_h <= 4 eps``).
    Outside it, perturbations of size ``4 eps^2`` never change a bin.
    ``exact_violations`` lists the triples where the sharper interval
    condition itself fails; it is always a subset.
    """
    _, backups = benchmark_bar_policy(mdp, eps, zetas)
    nu = 4 * eps
    violating, exact = [], []
    for h, (g, z) in enumerate(zip(backups, zetas), start=1):
        y = g / eps
        c = np.ceil(y - 1e-12)  # ceil of g / eps, tolerant to representation error
        near_edge = (c - nu <= y + z) & (y + z <= c + nu)
        bad = near_edge | (z <= nu)
        yz = y + z
        cz = np.ceil(yz - 1e-12)
        fails = ~((yz + nu <= cz) & (yz - nu > cz - 1))
        violating += [(h, int(x), int(a)) for x, a in zip(*np.nonzero(bad))]
        exact += [(h, int(x), int(a)) for x, a in zip(*np.nonzero(fails))]
    return {"snapped": not violating, "violating": violating, "exact_violations": exact}


def snap_failure_bound(S: int, A: int, H: int, eps: float) -> float:
    return 24 * S * A * H * eps


# ---------------------------------------------------------------------------
# Boosting wrapper


@dataclass
class BoostConfig:
    n_boost: int
    n_eval: int
    n_bc: int
    i_opt: int = 1
    j_max: float = 0.0
    history: List[dict] = field(default_factory=list)

    @classmethod
    def from_theory(cls, eps: float, delta: float, eps_rvfs: float, S: int, A: int, H: int,
                    class_size: int, n_boost: Optional[int] = None, n_eval: Optional[int] = None,
                    n_bc: Optional[int] = None) -> "BoostConfig":
        """Repetition, evaluation and cloning counts.

        ``N_boost = ceil(ln(1/delta) / ln(1/p))`` with ``p = 24 S A H eps_rvfs``,
        the per-run snapping failure bound; requires ``p < 1``.
        """
        p = snap_failure_bound(S, A, H, eps_rvfs)
        if not p < 1:
            raise ConfigError(f"24 S A H eps = {p:.3g} must be below 1")
        nb = n_boost if n_boost is not None else max(1, math.ceil(math.log(1 / delta) / -math.log(p)))
        ne = n_eval if n_eval is not None else math.ceil(16 ** 2 / eps ** 2 * math.log(2 * nb / delta))
        nbc = n_bc if n_bc is not None else math.ceil(8 * H ** 2 * math.log(4 * H * class_size / delta) / eps)
        return cls(max(1, nb), max(1, ne), max(1, nbc))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, default=float)


def rvfs_exo_bc(session: LocalSimSession, vclass: FiniteVClass, pclass: FinitePolicyClass,
                eps: float, delta: float, S: int, c_exo: float, rng: np.random.Generator,
                scale: float = 1.0, boost: Optional[BoostConfig] = None,
                eps_rvfs: Optional[float] = None, oracle_mdp: Optional[TabularMDP] = None,
                zetas_override: Optional[Sequence[Sequence[float]]] = None, **overrides):
    """Boosted search-then-clone; returns ``(policy, boost_config)``.

    Each repetition draws fresh offsets ``zeta ~ Unif[0, 1/2]^H``, runs the
    exogenous search from scratch, clones its rounded-greedy policy at
    confidence ``delta / (2 N_boost)`` and scores the clone with ``N_eval``
    on-policy episodes.  When ``oracle_mdp`` is given, the report also holds
    the exact return and snapping status of every repetition.
    """
    mdp = session.mdp
    H, A = mdp.H, mdp.A
    e_r = eps / (48 * H) if eps_rvfs is None else eps_rvfs
    cfg = boost or BoostConfig.from_theory(eps, delta, e_r, S, A, H, len(pclass))
    params = exo_params(e_r, delta / (10 * cfg.n_boost), c_exo, S, A, H, len(vclass),
                        scale=scale, **overrides)
    best = None
    for i in range(1, cfg.n_boost + 1):
        zetas = (list(zetas_override[i - 1]) if zetas_override is not None
                 else rng.uniform(0.0, 0.5, H).tolist())
        runner = rvfs_exo(session, vclass, params, zetas, record_passes=False)
        cp = CloneParams(eps, delta / (2 * cfg.n_boost), H, len(pclass), cfg.n_bc)
        policy = behavior_cloning(session, pclass, runner.policy(), cp)
        j_hat = float(session.run_episodes(policy, cfg.n_eval).mean())
        entry = {"i": i, "zeta": zetas, "J_hat": j_hat, "ledger": session.ledger.snapshot(),
                 "core_sizes": [len(c) for c in runner.state.core]}
        if oracle_mdp is not None:
            entry["J_exact"] = expected_return(oracle_mdp, policy)
            entry["snapped"] = snap_check(oracle_mdp, e_r, zetas)["snapped"]
        cfg.history.append(entry)
        if best is None or j_hat > cfg.j_max:
            best, cfg.i_opt, cfg.j_max = policy, i, j_hat
    return best, cfg
