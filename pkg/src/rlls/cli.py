"""Command line entry point: ``rlls gen | oracle | run | sweep``."""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .exbmdp import flatten, generate_exbmdp
from .harness import (ExperimentConfig, emit_metrics, median_suboptimality, oracle_summary,
                      run_experiment, run_sweep)
from .mdp import TabularMDP


def _config(args) -> ExperimentConfig:
    d = json.loads(Path(args.config).read_text()) if args.config else {}
    d.pop("sweep", None)
    if args.seed is not None:
        d["seeds"] = [args.seed]
    if args.scale is not None:
        d["scale"] = args.scale
    if args.format is not None:
        d["format"] = args.format
    if args.out is not None:
        d["out"] = args.out
    return ExperimentConfig.from_dict(d)


def cmd_gen(args) -> int:
    spec, dec = generate_exbmdp(args.seed or 0, args.S, args.Xi, args.A, args.H, args.lam, args.gap,
                                args.n_distractors)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "spec.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n")
    (out / "decoders.json").write_text(json.dumps(dec.to_dict(), indent=2) + "\n")
    flatten(spec).save(out / "flat.json")
    print(f"wrote {out / 'spec.json'}, {out / 'decoders.json'}, {out / 'flat.json'}")
    return 0


def cmd_oracle(args) -> int:
    if args.instance:
        mdp = TabularMDP.load(args.instance)
    else:
        from .harness import build_instance
        cfg = _config(args)
        mdp = build_instance(cfg, cfg.seeds[0]).mdp
    summary = oracle_summary(mdp)
    text = json.dumps(summary, indent=2)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "oracle.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out or ".")
    for seed in cfg.seeds:
        rep = run_experiment(cfg, seed)
        path = out / f"{cfg.algorithm}_seed{seed}.{cfg.format}"
        emit_metrics(rep, path, cfg.format)
        print(f"seed {seed}: J* = {rep.j_star:.4f}  J(out) = {rep.j_output:.4f}  "
              f"subopt = {rep.suboptimality:.4f}  -> {path}")
    return 0


def cmd_sweep(args) -> int:
    raw = json.loads(Path(args.config).read_text()) if args.config else {}
    eps_values = raw.get("sweep", {}).get("eps", [0.5, 0.25, 0.1])
    cfg = _config(args)
    reports = run_sweep(cfg, eps_values)
    out = Path(cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    for rep in reports:
        emit_metrics(rep, out / f"{cfg.algorithm}_eps{rep.config['eps']}_seed{rep.seed}.{cfg.format}",
                     cfg.format)
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["eps", "seed", "suboptimality", "transitions_sampled"])
        for rep in reports:
            w.writerow([rep.config["eps"], rep.seed, repr(rep.suboptimality),
                        rep.ledger["transitions_sampled"]])
    for e, med in median_suboptimality(reports).items():
        print(f"eps = {e}: median suboptimality {med:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rlls", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--seed", type=int, help="overrides the config seeds with one seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--format", choices=("csv", "json"))
        sp.add_argument("--scale", type=float, help="multiplier on theory sample sizes, in (0, 1]")

    g = sub.add_parser("gen", help="generate an exogenous block MDP bundle")
    common(g)
    g.add_argument("--S", type=int, default=3)
    g.add_argument("--Xi", type=int, default=2)
    g.add_argument("--A", type=int, default=2)
    g.add_argument("--H", type=int, default=3)
    g.add_argument("--lam", type=float, default=0.0)
    g.add_argument("--gap", type=float, default=None)
    g.add_argument("--n-distractors", type=int, default=2)
    g.set_defaults(func=cmd_gen)

    o = sub.add_parser("oracle", help="exact values and coefficients of an instance")
    common(o)
    o.add_argument("--instance", help="tabular MDP JSON file")
    o.set_defaults(func=cmd_oracle)

    r = sub.add_parser("run", help="run one algorithm per seed and write reports")
    common(r)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("sweep", help="run over the config's sweep.eps values and seeds")
    common(s)
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
