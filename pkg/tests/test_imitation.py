import json
import math

import numpy as np

from rlls.classes import FinitePolicyClass
from rlls.imitation import CloneParams, behavior_cloning, collect, erm, mistake_counts
from rlls.mdp import LocalSimSession, PolicyTable, Trajectory, make_rng, random_mdp
from rlls.oracle import expected_return, value_iteration


def test_n_bc_formula():
    p = CloneParams(0.2, 0.1, 3, 32)
    assert p.n_bc == math.ceil(16 * 9 * math.log(320) / 0.2)
    assert CloneParams(0.2, 0.1, 3, 32, n_bc_override=4).n_bc == 4


def test_singleton_zero_mistakes(chain):
    _, _, pistar = value_iteration(chain)
    pc = FinitePolicyClass.from_policies([pistar])
    pol, det = behavior_cloning(LocalSimSession(chain, 0), pc, pistar, CloneParams(0.5, 0.1, 2, 1, 3),
                                return_details=True)
    assert det["mistakes"] == 0


def test_anti_policy_rejected_after_one(chain):
    _, _, pistar = value_iteration(chain)
    anti = PolicyTable.from_actions([1 - a for a in pistar.actions()], 2)
    pc = FinitePolicyClass.from_policies([anti, pistar])
    pol = behavior_cloning(LocalSimSession(chain, 0), pc, pistar, CloneParams(0.5, 0.1, 2, 2, 1))
    assert [a.tolist() for a in pol.actions()] == [a.tolist() for a in pistar.actions()]


def test_clone_quality_realizable():
    eps, delta, H = 0.5, 0.1, 3
    good = 0
    for seed in range(100):
        rng = make_rng([seed, 1])
        mdp = random_mdp(rng, H, 2, 2)
        _, _, pistar = value_iteration(mdp)
        tables = [pistar.actions()] + [[rng.integers(0, 2, 2) for _ in range(H)] for _ in range(7)]
        pc = FinitePolicyClass([np.stack([t[h] for t in tables]) for h in range(H)], 2)
        clone, det = behavior_cloning(LocalSimSession(mdp, seed), pc, pistar,
                                      CloneParams(eps, delta, H, len(pc)), return_details=True)
        assert det["mistakes"] == 0
        good += expected_return(mdp, pistar) - expected_return(mdp, clone) <= eps / 2
    assert good >= 90


def test_non_executable_expert_is_charged():
    mdp = random_mdp(make_rng(2), 2, 2, 2)
    _, _, pistar = value_iteration(mdp)
    calls = []

    def expert(session, h, x):
        session.sample(h, x, 0, 2)
        calls.append(1)
        return int(pistar.actions()[h - 1][x])

    s = LocalSimSession(mdp, 0)
    collect(s, expert, 5)
    assert s.ledger.transitions_sampled == 5 * 2 * (1 + 2)


def test_erm_monotone_on_growing_corpus():
    mdp = random_mdp(make_rng(3), 3, 3, 2)
    rng = make_rng(4)
    pc = FinitePolicyClass([rng.integers(0, 2, (16, 3)) for _ in range(3)], 2)
    expert = pc.policy(5)
    s = LocalSimSession(mdp, 0)
    corpus = collect(s, expert, 4)
    i_old, c_old = erm(pc, corpus)
    more = corpus + collect(s, expert, 4)
    i_new, c_new = erm(pc, more)
    beaten = np.flatnonzero(c_old > c_old[i_old])
    assert np.all(c_new[i_new] <= c_new[beaten])
    assert c_new[i_new] == 0


def test_corpus_replay_roundtrip():
    mdp = random_mdp(make_rng(5), 3, 3, 2)
    rng = make_rng(6)
    pc = FinitePolicyClass([rng.integers(0, 2, (8, 3)) for _ in range(3)], 2)
    corpus = collect(LocalSimSession(mdp, 0), pc.policy(2), 6)
    blob = json.dumps([t.to_list() for t in corpus])
    replay = [Trajectory.from_list(t) for t in json.loads(blob)]
    assert np.array_equal(mistake_counts(pc, corpus), mistake_counts(pc, replay))
