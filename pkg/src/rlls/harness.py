"""Experiment configuration, orchestration and metric emission.

A run builds an instance and its function classes from a config, executes one
algorithm through a fresh :class:`LocalSimSession`, and evaluates the output
exactly.  Reports serialize to pretty JSON or to a pair of fixed-schema CSV
files (``<name>.csv`` for diagnostics rows, ``<name>.summary.csv`` for the
scalar fields); both round-trip through :func:`load_metrics`.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .classes import (FinitePolicyClass, FiniteQClass, FiniteVClass, build_exbmdp_policy_class,
                      build_exbmdp_q_class, build_exbmdp_v_class)
from .exbmdp import ExBMDPSpec, flatten, generate_exbmdp
from .imitation import CloneParams, behavior_cloning, mistake_counts
from .mdp import LocalSimSession, PolicyTable, TabularMDP, make_rng, random_mdp, twochain
from .oracle import (coverability, expected_return, pushforward_coverability, value_iteration,
                     weak_correlation_coeff, min_gap)
from .rvfs import rvfs_bc
from .rvfs_exo import BoostConfig, ConfigError, rvfs_exo_bc, snap_failure_bound
from .simgolf import SimGolfParams, run_simgolf

ALGORITHMS = ("simgolf", "rvfs_bc", "rvfs_exo_bc", "behavior_cloning")
SOURCES = ("twochain", "random", "exbmdp", "file")
FORMATS = ("csv", "json")


@dataclass
class ExperimentConfig:
    algorithm: str = "simgolf"
    seeds: List[int] = field(default_factory=lambda: [0])
    instance: Dict[str, Any] = field(default_factory=lambda: {"source": "twochain"})
    eps: float = 0.25
    delta: float = 0.1
    scale: float = 1.0
    overrides: Dict[str, Any] = field(default_factory=dict)
    class_budget: int = 4
    grid_step: float = 0.5
    out: Optional[str] = None
    format: str = "json"

    def validate(self) -> "ExperimentConfig":
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}")
        if self.instance.get("source") not in SOURCES:
            raise ConfigError(f"instance source must be one of {SOURCES}")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if not 0 < self.eps or not 0 < self.delta < 1:
            raise ConfigError("need eps > 0 and delta in (0, 1)")
        if not 0 < self.scale <= 1:
            raise ConfigError("scale must lie in (0, 1]")
        if self.class_budget < 1:
            raise ConfigError("class_budget must be at least 1")
        if self.algorithm == "rvfs_exo_bc":
            if self.instance["source"] != "exbmdp":
                raise ConfigError("rvfs_exo_bc needs an exbmdp instance")
            inst = self.instance
            H = inst.get("H", 3)
            e_r = self.overrides.get("eps_rvfs", self.eps / (48 * H))
            p = snap_failure_bound(inst.get("S", 3), inst.get("A", 2), H, e_r)
            if not p < 1:
                raise ConfigError(f"24 S A H eps = {p:.3g} must be below 1")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        d = dict(d)
        if "seed" in d:
            raise ConfigError("use 'seeds'")
        return cls(**d).validate()

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class RunReport:
    algorithm: str
    seed: int
    j_star: float
    j_output: float
    suboptimality: float
    ledger: Dict[str, int]
    diagnostics_columns: List[str]
    diagnostics: List[list]
    extra: Dict[str, Any]
    config: Dict[str, Any]
    wall_time: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        return cls(**d)


# ---------------------------------------------------------------------------
# Instances and classes


@dataclass
class Instance:
    mdp: TabularMDP
    spec: Optional[ExBMDPSpec] = None
    decoders: Any = None


def build_instance(cfg: ExperimentConfig, seed: int) -> Instance:
    inst = cfg.instance
    src = inst["source"]
    law = inst.get("reward_law", "deterministic-mean")
    if src == "twochain":
        return Instance(twochain(law))
    if src == "file":
        return Instance(TabularMDP.load(inst["path"]))
    if src == "random":
        rng = make_rng(inst.get("instance_seed", seed))
        return Instance(random_mdp(rng, inst.get("H", 3), inst.get("n_states", 3), inst.get("A", 2),
                                   law, inst.get("sparsity", 0.0)))
    spec, dec = generate_exbmdp(inst.get("instance_seed", seed), inst.get("S", 3), inst.get("Xi", 2),
                                inst.get("A", 2), inst.get("H", 3), inst.get("lam", 0.0),
                                inst.get("gap"), inst.get("n_distractors", 2), law,
                                inst.get("deterministic_endo", False))
    return Instance(flatten(spec), spec, dec)


def _random_tables(rng, shapes, H, grid_step):
    levels = np.arange(0.0, H + 1e-12, grid_step)
    return [levels[rng.integers(0, len(levels), s)] for s in shapes]


def tabular_q_class(mdp: TabularMDP, Qstar, budget: int, grid_step: float, rng) -> FiniteQClass:
    """``Q*`` (index 0) plus ``budget - 1`` random grid tables."""
    shapes = [(mdp.n(h), mdp.A) for h in range(1, mdp.H + 1)]
    members = [list(Qstar)] + [_random_tables(rng, shapes, mdp.H, grid_step) for _ in range(budget - 1)]
    return FiniteQClass.from_members(members, "tabular", injected_id=0)


def tabular_v_class(mdp: TabularMDP, Vstar, budget: int, grid_step: float, rng) -> FiniteVClass:
    shapes = [(mdp.n(h),) for h in range(1, mdp.H + 1)]
    members = [list(Vstar)] + [_random_tables(rng, shapes, mdp.H, grid_step) for _ in range(budget - 1)]
    return FiniteVClass.from_members(members, "tabular", injected_id=0)


def tabular_policy_class(mdp: TabularMDP, pistar: PolicyTable, budget: int, rng) -> FinitePolicyClass:
    acts = [pistar.actions()]
    for _ in range(budget - 1):
        acts.append([rng.integers(0, mdp.A, mdp.n(h)) for h in range(1, mdp.H + 1)])
    return FinitePolicyClass([np.stack([a[h] for a in acts]) for h in range(mdp.H)], mdp.A, "tabular", 0)


# ---------------------------------------------------------------------------
# Runs


def _ov(cfg: ExperimentConfig, *names) -> dict:
    return {k: cfg.overrides[k] for k in names if k in cfg.overrides}


def run_experiment(cfg: ExperimentConfig, seed: Optional[int] = None) -> RunReport:
    cfg.validate()
    seed = cfg.seeds[0] if seed is None else int(seed)
    t0 = time.perf_counter()
    inst = build_instance(cfg, seed)
    mdp = inst.mdp
    Qstar, Vstar, pistar = value_iteration(mdp)
    j_star = expected_return(mdp, pistar)
    rng = make_rng([seed, 1])
    session = LocalSimSession(mdp, seed)
    cols: List[str] = []
    rows: List[list] = []
    extra: Dict[str, Any] = {}

    if cfg.algorithm == "simgolf":
        if inst.spec is not None:
            lat_q, _, _ = value_iteration(inst.spec.latent_mdp())
            qclass = build_exbmdp_q_class(inst.decoders, inst.spec.S, mdp.A, mdp.H, cfg.grid_step,
                                          cfg.class_budget, rng, latent_qstar=lat_q)
        else:
            qclass = tabular_q_class(mdp, Qstar, cfg.class_budget, cfg.grid_step, rng)
        _, c_cov = coverability(mdp)
        params = SimGolfParams.from_theory(mdp.H, c_cov, cfg.eps, cfg.delta, len(qclass),
                                           scale_n=cfg.overrides.get("scale_n", cfg.scale),
                                           scale_k=cfg.overrides.get("scale_k", cfg.scale))
        res = run_simgolf(session, qclass, params)
        js = [expected_return(mdp, p) for p in res.policies]
        j_out = float(np.mean(js))
        cols = ["t", "selected", "active_set_size", "J_pi_t_exact", "residual_max"]
        rows = [[t + 1, res.selected[t], res.active_sizes[t], js[t], res.residual_max[t]]
                for t in range(len(js))]
        extra = {"n_iter": params.n_iter, "k": params.k, "beta": params.beta, "c_cov": c_cov,
                 "class_size": len(qclass), "final_active": res.conf.active_ids.tolist()}

    elif cfg.algorithm in ("rvfs_bc", "behavior_cloning"):
        if inst.spec is not None:
            _, lat_v, lat_pi = value_iteration(inst.spec.latent_mdp())
            vclass = build_exbmdp_v_class(inst.decoders, inst.spec.S, mdp.H, cfg.grid_step,
                                          cfg.class_budget, rng, latent_v=lat_v)
            pclass = build_exbmdp_policy_class(inst.decoders, inst.spec.S, mdp.A, mdp.H, rng,
                                               budget=cfg.class_budget,
                                               include=[lat_pi.actions()])
        else:
            vclass = tabular_v_class(mdp, Vstar, cfg.class_budget, cfg.grid_step, rng)
            pclass = tabular_policy_class(mdp, pistar, cfg.class_budget, rng)
        if cfg.algorithm == "behavior_cloning":
            cp = CloneParams(cfg.eps, cfg.delta, mdp.H, len(pclass), cfg.overrides.get("n_bc"))
            policy, det = behavior_cloning(session, pclass, pistar, cp, return_details=True)
            extra = {"n_bc": cp.n_bc, "index": det["index"], "mistakes": det["mistakes"],
                     "class_size": len(pclass)}
            cols = ["policy_id", "mistakes"]
            counts = mistake_counts(pclass, det["corpus"])
            rows = [[i, int(c)] for i, c in enumerate(counts)]
        else:
            _, c_push = pushforward_coverability(mdp)
            ov = _ov(cfg, "n_test", "n_reg", "n_est_const", "n_sim", "max_tests")
            policy, runner, det = rvfs_bc(session, pclass, vclass, cfg.eps, cfg.delta, c_push,
                                          scale=cfg.scale, clone_override=cfg.overrides.get("n_bc"),
                                          eps_rvfs=cfg.overrides.get("eps_rvfs"), **ov)
            cols = ["event", "layer", "core_size", "t_layer", "transitions", "depth"]
            rows = [list(e) for e in runner.state.trace]
            extra = {"c_push": c_push, "m": runner.params.m, "n_test": runner.params.n_test,
                     "n_reg": runner.params.n_reg, "core_sizes": [len(c) for c in runner.state.core],
                     "clone_index": det["index"], "clone_mistakes": det["mistakes"],
                     "ledger_rvfs": det["ledger_rvfs"]}
        j_out = expected_return(mdp, policy)

    else:  # rvfs_exo_bc
        spec = inst.spec
        _, lat_v, lat_pi = value_iteration(spec.latent_mdp())
        vclass = build_exbmdp_v_class(inst.decoders, spec.S, mdp.H, cfg.grid_step,
                                      cfg.class_budget, rng, latent_v=lat_v)
        pclass = build_exbmdp_policy_class(inst.decoders, spec.S, mdp.A, mdp.H, rng,
                                           budget=cfg.overrides.get("policy_budget"),
                                           include=[lat_pi.actions()])
        c_exo = weak_correlation_coeff(spec.exo_init, spec.T_exo)
        e_r = cfg.overrides.get("eps_rvfs", cfg.eps / (48 * mdp.H))
        boost = BoostConfig.from_theory(cfg.eps, cfg.delta, e_r, spec.S, mdp.A, mdp.H, len(pclass),
                                        **_ov(cfg, "n_boost", "n_eval", "n_bc"))
        ov = _ov(cfg, "n_test", "n_reg", "n_est_const", "n_sim", "max_tests")
        policy, boost = rvfs_exo_bc(session, vclass, pclass, cfg.eps, cfg.delta, spec.S, c_exo, rng,
                                    scale=cfg.scale, boost=boost, eps_rvfs=e_r, oracle_mdp=mdp, **ov)
        j_out = expected_return(mdp, policy)
        cols = ["i", "zeta", "J_hat", "J_exact", "snapped", "transitions"]
        rows = [[e["i"], e["zeta"], e["J_hat"], e["J_exact"], e["snapped"],
                 e["ledger"]["transitions_sampled"]] for e in boost.history]
        extra = {"c_exo": c_exo, "n_boost": boost.n_boost, "n_eval": boost.n_eval,
                 "n_bc": boost.n_bc, "i_opt": boost.i_opt, "J_max": boost.j_max}

    extra = json.loads(json.dumps(extra, default=_jsonable))
    rows = json.loads(json.dumps(rows, default=_jsonable))
    return RunReport(cfg.algorithm, seed, float(j_star), float(j_out), float(j_star - j_out),
                     session.ledger.snapshot(), cols, rows, extra, cfg.to_dict(),
                     time.perf_counter() - t0)


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o))


def run_sweep(cfg: ExperimentConfig, eps_values: Sequence[float]) -> List[RunReport]:
    """Every (eps, seed) pair, in that order."""
    out = []
    for e in eps_values:
        sub = ExperimentConfig.from_dict({**cfg.to_dict(), "eps": float(e)})
        for s in cfg.seeds:
            out.append(run_experiment(sub, s))
    return out


def median_suboptimality(reports: Sequence[RunReport]) -> Dict[float, float]:
    by_eps: Dict[float, list] = {}
    for r in reports:
        by_eps.setdefault(r.config["eps"], []).append(r.suboptimality)
    return {e: float(np.median(v)) for e, v in by_eps.items()}


# ---------------------------------------------------------------------------
# Emission

SUMMARY_COLUMNS = ("algorithm", "seed", "j_star", "j_output", "suboptimality",
                   "episodes_started", "transitions_sampled", "resets", "wall_time",
                   "diagnostics_columns", "extra", "config")


def _cell(v) -> str:
    if isinstance(v, str):
        return v
    return json.dumps(v, default=_jsonable)


def _parse(s: str):
    try:
        return json.loads(s)
    except json.JSONDecodeError:
        return s


def summary_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".summary.csv")


def emit_metrics(report: RunReport, path, fmt: str = "json") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path.write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True, default=_jsonable) + "\n")
        return
    if fmt != "csv":
        raise ValueError(f"unknown format {fmt!r}")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(report.diagnostics_columns)
        for row in report.diagnostics:
            w.writerow([_cell(v) for v in row])
    d = report.to_dict()
    d.update(report.ledger)
    with open(summary_path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        w.writerow([_cell(d[c]) for c in SUMMARY_COLUMNS])


def load_metrics(path, fmt: str = "json") -> RunReport:
    path = Path(path)
    if fmt == "json":
        return RunReport.from_dict(json.loads(path.read_text()))
    with open(summary_path(path), newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        vals = dict(zip(header, next(r)))
    parsed = {k: (v if k == "algorithm" else _parse(v)) for k, v in vals.items()}
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        cols = next(r, [])
        rows = [[_parse(v) for v in row] for row in r]
    ledger = {k: parsed.pop(k) for k in ("episodes_started", "transitions_sampled", "resets")}
    return RunReport(parsed["algorithm"], parsed["seed"], parsed["j_star"], parsed["j_output"],
                     parsed["suboptimality"], ledger, cols, rows, parsed["extra"],
                     parsed["config"], parsed["wall_time"])


def oracle_summary(mdp: TabularMDP) -> dict:
    _, V, pi = value_iteration(mdp)
    cov_l, cov = coverability(mdp)
    push_l, push = pushforward_coverability(mdp)
    gap, unique = min_gap(mdp)
    return {"J_star": float(V[0] @ mdp.init_dist), "c_cov": float(cov),
            "c_cov_layers": np.asarray(cov_l).tolist(), "c_push": float(push),
            "c_push_layers": np.asarray(push_l).tolist(),
            "min_gap": None if not math.isfinite(gap) else float(gap), "unique_optimal": bool(unique),
            "pi_star": [a.tolist() for a in pi.actions()]}
