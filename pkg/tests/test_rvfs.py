import numpy as np
import pytest

from rlls.classes import FinitePolicyClass, FiniteVClass
from rlls.mdp import LocalSimSession, TabularMDP, make_rng, random_mdp
from rlls.oracle import expected_return, pushforward_coverability, value_iteration
from rlls.rvfs import (BudgetExceededError, RvfsParams, RvfsRunner, RvfsState, check_recursion_order,
                       confidence_losses, confidence_member, exact_backup_greedy,
                       least_squares_member, rvfs, rvfs_bc, visited_disagreement)

DESK = dict(n_test=3, n_reg=6, n_est_const=3, n_sim=12)


def desk_params(mdp, vc, **kw):
    _, c_push = pushforward_coverability(mdp)
    return RvfsParams.from_theory(0.25, 0.1, c_push, mdp.H, mdp.A, len(vc), **{**DESK, **kw})


def chain_class(chain, corrupted=True):
    _, V, _ = value_iteration(chain)
    members = [list(V)]
    if corrupted:
        members.append([V[0], V[1][::-1].copy()])
    return FiniteVClass.from_members(members, "tabular", injected_id=0)


def test_theory_formulas():
    p = RvfsParams.from_theory(0.1, 0.1, 2.0, 3, 2, 10)
    assert p.m == int(np.ceil(8 * 2.0 * 3 / 0.1))
    assert p.n_test > p.n_reg > 0
    assert 0 < p.delta_prime < 0.1
    q = RvfsParams.from_theory(0.1, 0.1, 2.0, 3, 2, 10, scale=1e-6)
    assert q.m == p.m and q.delta_prime == p.delta_prime and q.eps_reg_sq == p.eps_reg_sq
    assert q.n_test < p.n_test
    assert p.beta(2) > p.beta(1) > 0
    assert p.threshold(1) == pytest.approx(0.1 * (1 + p.beta(1)))


def test_confidence_member_examples():
    v = np.array([0.0, 1.0, 2.0])
    assert confidence_member(v, [], v + 100, 0.0, 4)
    data = [(0, 0, np.array([0, 1, 1, 2]), np.zeros(4))]
    assert confidence_member(v, data, v, 0.0, 4)
    f = v + np.array([0.5, 0.0, 1.0])
    ref = (0.25 + 0 + 0 + 1.0) / 4
    assert confidence_member(v, data, f, ref, 4)
    assert not confidence_member(v, data, f, ref - 1e-9, 4)


def test_confidence_losses_match_member():
    rng = make_rng(0)
    vc = FiniteVClass([rng.uniform(0, 1, (6, 4))])
    data = [(0, 0, rng.integers(0, 4, 5), np.zeros(5)), (0, 1, rng.integers(0, 4, 5), np.zeros(5))]
    v_hat = vc.tables[0][2]
    losses = confidence_losses(vc, 1, v_hat, data, 5)
    for i in range(6):
        assert confidence_member(v_hat, data, vc.tables[0][i], losses[i] + 1e-12, 5)
        if losses[i] > 0:
            assert not confidence_member(v_hat, data, vc.tables[0][i], losses[i] - 1e-9, 5)


def test_least_squares_matches_scan():
    rng = make_rng(1)
    vc = FiniteVClass([rng.uniform(0, 1, (9, 5))])
    data = [(0, 0, rng.integers(0, 5, 7), rng.uniform(0, 2, 7)) for _ in range(3)]
    best, best_loss = None, np.inf
    for i in range(9):
        loss = sum(((vc.tables[0][i][xs] - ys) ** 2).sum() for _, _, xs, ys in data)
        if loss < best_loss:
            best, best_loss = i, loss
    assert least_squares_member(vc, 1, data) == best


def test_test_pass_singleton_and_counter(chain):
    vc = chain_class(chain, corrupted=False)
    s = LocalSimSession(chain, 0)
    s.start_episode()
    runner = RvfsRunner(s, vc, desk_params(chain, vc))
    assert runner.test(2, 0, 1)
    assert runner.test(2, 0, 0)
    assert runner.state.t[2] == 2 and runner.state.tests == 2


def test_test_fails_on_planted_disagreement(chain):
    vc = chain_class(chain)
    s = LocalSimSession(chain, 0)
    s.start_episode()
    runner = RvfsRunner(s, vc, desk_params(chain, vc))
    # V* and its mirror differ by 1 after action 1 from the layer-1 state
    assert not runner.test(2, 0, 1)


def test_refit_dataset_sizes(chain):
    vc = chain_class(chain)
    s = LocalSimSession(chain, 0)
    s.start_episode()
    p = desk_params(chain, vc)
    runner = RvfsRunner(s, vc, p)
    runner.state.core[2] = [(0, 0), (0, 1)]
    runner.refit(2)
    assert sum(len(d[2]) for d in runner.state.data[2]) == 2 * p.n_reg
    assert runner.state.v_id[2] == 0


def test_refit_empty_core_keeps_estimate(chain):
    vc = chain_class(chain)
    s = LocalSimSession(chain, 0)
    runner = RvfsRunner(s, vc, desk_params(chain, vc), RvfsState.fresh(2, init_id=1))
    runner.refit(2)
    assert runner.state.v_id[2] == 1 and runner.state.conf[2] is None


def test_twochain_recovers_optimal(chain):
    vc = chain_class(chain)
    _, _, pistar = value_iteration(chain)
    good = 0
    for seed in range(50):
        runner = rvfs(LocalSimSession(chain, seed), vc, desk_params(chain, vc))
        acts = exact_backup_greedy(chain, [vc.tables[h][runner.state.v_id[h + 1]] for h in range(2)])
        good += visited_disagreement(chain, acts, pistar.actions()) == 0
        assert check_recursion_order(runner.state.trace)
    assert good == 50


def test_horizon_one_singleton():
    mdp = TabularMDP(1, (2,), 2, np.array([0.5, 0.5]), (), (np.array([[0.1, 0.9], [0.8, 0.2]]),),
                     "deterministic-mean")
    vc = FiniteVClass.from_members([[np.array([0.9, 0.8])]])
    runner = rvfs(LocalSimSession(mdp, 0), vc, desk_params(mdp, vc))
    assert all(len(c) == 0 for c in runner.state.core)
    kinds = [e[0] for e in runner.state.trace]
    assert kinds.count("recurse") == 1 and "refit" not in kinds and kinds[-1] == "return"


def test_refit_selects_exact_member_zero_loss(chain):
    vc = chain_class(chain)
    s = LocalSimSession(chain, 0)
    s.start_episode()
    runner = RvfsRunner(s, vc, desk_params(chain, vc))
    runner.state.core[2] = [(0, 1)]
    runner.refit(2)
    data = runner.state.data[2]
    assert runner.state.v_id[2] == 0
    assert sum(((vc.tables[1][0][xs] - ys) ** 2).sum() for _, _, xs, ys in data) == 0


def test_rvfs_bc_twochain_rate(chain):
    vc = chain_class(chain)
    rng = make_rng(7)
    good = 0
    for seed in range(50):
        pc = FinitePolicyClass([rng.integers(0, 2, (6, 1)), rng.integers(0, 2, (6, 2))], 2)
        _, _, pistar = value_iteration(chain)
        pc = FinitePolicyClass([np.vstack([pistar.actions()[h][None], pc.actions[h]]) for h in range(2)], 2)
        policy, _, _ = rvfs_bc(LocalSimSession(chain, seed), pc, vc, 0.25, 0.1, 2.0, **DESK)
        good += expected_return(chain, pistar) - expected_return(chain, policy) <= 0.5
    assert good >= 45


def test_horizon_one():
    mdp = TabularMDP(1, (2,), 2, np.array([0.5, 0.5]), (), (np.array([[0.1, 0.9], [0.8, 0.2]]),),
                     "deterministic-mean")
    vc = FiniteVClass.from_members([[np.array([0.9, 0.8])], [np.array([0.0, 0.0])]])
    runner = rvfs(LocalSimSession(mdp, 0), vc, desk_params(mdp, vc))
    assert [a.tolist() for a in exact_backup_greedy(mdp, [vc.tables[0][0]])] == [[1, 0]]
    assert runner.state.trace[-1][0] == "return"


def test_core_sets_bounded_random_instances():
    for seed in range(100):
        rng = make_rng([seed, 3])
        mdp = random_mdp(rng, 3, 2, 2, "bernoulli-mean")
        _, V, _ = value_iteration(mdp)
        members = [list(V)] + [[rng.uniform(0, 3, 2) for _ in range(3)] for _ in range(3)]
        vc = FiniteVClass.from_members(members)
        p = desk_params(mdp, vc, n_test=2, n_reg=3, n_est_const=2, n_sim=6)
        runner = rvfs(LocalSimSession(mdp, seed), vc, p)
        assert all(len(c) <= p.m for c in runner.state.core)
        assert check_recursion_order(runner.state.trace)


def test_budget_guards(chain):
    vc = chain_class(chain)
    with pytest.raises(BudgetExceededError):
        rvfs(LocalSimSession(chain, 0), vc, desk_params(chain, vc, max_tests=1))


def test_recursion_order_checker():
    ok = [("recurse", 0, 0, 0, 0, 0), ("recurse", 2, 0, 0, 0, 1), ("return", 2, 0, 0, 0, 1),
          ("recurse", 1, 0, 0, 0, 1), ("return", 1, 0, 0, 0, 1), ("return", 0, 0, 0, 0, 0)]
    assert check_recursion_order(ok)
    bad = ok[:1] + ok[3:5] + ok[1:3] + ok[5:]
    assert not check_recursion_order(bad)
    assert not check_recursion_order(ok[:-1])


def test_rvfs_bc_ledger(chain):
    vc = chain_class(chain)
    _, _, pistar = value_iteration(chain)
    pc = FinitePolicyClass.from_policies([pistar])
    s = LocalSimSession(chain, 0)
    policy, runner, det = rvfs_bc(s, pc, vc, 0.5, 0.1, 2.0, clone_override=5, **DESK)
    r, t = det["ledger_rvfs"], det["ledger_total"]
    assert t == s.ledger.snapshot()
    assert all(t[k] >= r[k] for k in r)
    assert t["episodes_started"] - r["episodes_started"] == 5
    assert [a.tolist() for a in policy.actions()] == [a.tolist() for a in pistar.actions()]
