import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rlls.mdp import LocalSimSession, PolicyTable, TabularMDP, make_rng, random_mdp
from rlls.oracle import (bellman_residual, benchmark_bar_policy, coverability, expected_return,
                         max_reachability, min_gap, occupancy, performance_difference, policy_eval,
                         pushforward_coverability, return_from_occupancy, round_bins,
                         value_iteration, weak_correlation_coeff)


def test_twochain_values(chain):
    Q, V, pi = value_iteration(chain)
    assert np.array_equal(Q[0][0], [0.0, 1.0])
    assert V[0][0] == 1.0
    assert pi.actions()[0][0] == 1


def test_zero_rewards_tie_break():
    mdp = random_mdp(make_rng(0), 3, 2, 3)
    zero = TabularMDP(3, mdp.states_per_layer, 3, mdp.init_dist, mdp.transitions,
                      tuple(np.zeros_like(r) for r in mdp.reward_means))
    Q, _, pi = value_iteration(zero)
    assert all(np.all(q == 0) for q in Q)
    assert all(np.all(a == 0) for a in pi.actions())


def test_value_iteration_brute_force():
    # every deterministic policy of a tiny instance
    mdp = random_mdp(make_rng(4), 4, [2, 1, 1, 1], 3)
    _, V, pi = value_iteration(mdp)
    jstar = expected_return(mdp, pi)
    sizes = mdp.states_per_layer
    best = -1.0
    for combo in itertools.product(range(mdp.A), repeat=sum(sizes)):
        acts, i = [], 0
        for k in sizes:
            acts.append(list(combo[i:i + k]))
            i += k
        best = max(best, expected_return(mdp, PolicyTable.from_actions(acts, mdp.A)))
    assert abs(best - jstar) <= 1e-12


def test_policy_eval_twochain(chain):
    _, V, pi = value_iteration(chain)
    _, Vp = policy_eval(chain, pi)
    assert all(np.allclose(a, b) for a, b in zip(V, Vp))
    assert expected_return(chain, PolicyTable.uniform(chain)) == pytest.approx(0.5)
    s = LocalSimSession(chain, 0)
    assert abs(s.run_episodes(PolicyTable.uniform(chain), 20000).mean() - 0.5) < 0.02


def test_occupancy_conservation():
    for seed in range(20):
        rng = make_rng(seed)
        mdp = random_mdp(rng, 4, 3, 2)
        pi = PolicyTable([rng.dirichlet(np.ones(2), size=3) for _ in range(4)])
        d = occupancy(mdp, pi)
        assert all(abs(x.sum() - 1) <= 1e-9 for x in d)
        assert abs(return_from_occupancy(mdp, d) - expected_return(mdp, pi)) <= 1e-9


def test_coverability_twochain(chain):
    per, c = coverability(chain)
    assert per[1] == 4.0 and c == 4.0


def test_coverability_pointwise_bound():
    for seed in range(10):
        mdp = random_mdp(make_rng(seed), 3, [2, 3, 4], 2)
        _, c = coverability(mdp)
        assert c <= max(k * mdp.A for k in mdp.states_per_layer) + 1e-12


def test_max_reachability_brute_force():
    # sup over deterministic policies attains the max reachability
    mdp = random_mdp(make_rng(8), 3, [1, 2, 3], 2)
    reach = max_reachability(mdp, 3)
    best = np.zeros(3)
    for combo in itertools.product(range(2), repeat=3):
        pi = PolicyTable.from_actions([[combo[0]], list(combo[1:3]), [0, 0, 0]], 2)
        best = np.maximum(best, occupancy(mdp, pi)[2].sum(axis=1))
    assert np.allclose(reach, best)


def test_pushforward_examples(chain):
    assert pushforward_coverability(chain)[1] == 2.0
    n = 4
    T = np.zeros((n, 1, n))
    T[np.arange(n), 0, np.arange(n)] = 1
    ident = TabularMDP(2, (n, n), 1, np.full(n, 1 / n), (T,), (np.zeros((n, 1)), np.zeros((n, 1))))
    assert pushforward_coverability(ident)[1] == n


def test_min_gap_examples(chain):
    # twochain has exact ties at layer 2, so its global gap is 0 and not unique
    gap, unique = min_gap(chain)
    assert gap == 0.0 and not unique
    Q, _, _ = value_iteration(chain)
    assert Q[0][0, 1] - Q[0][0, 0] == 1.0
    sym = TabularMDP(1, (1,), 2, np.array([1.0]), (), (np.array([[0.5, 0.5]]),))
    assert not min_gap(sym)[1]


def test_weak_correlation_examples():
    m = 4
    uni = np.full(m, 1 / m)
    assert weak_correlation_coeff(uni, [np.full((m, m), 1 / m)]) == pytest.approx(1.0)
    assert weak_correlation_coeff(uni, [np.eye(m)]) == pytest.approx(m)
    lam = 0.5
    K = lam * np.eye(m) + (1 - lam) / m
    # direct tabulation of joint / product
    joint = uni[:, None] * K
    ratio = max(joint[i, j] / (uni[i] * (uni @ K)[j]) for i in range(m) for j in range(m))
    assert weak_correlation_coeff(uni, [K]) == pytest.approx(ratio)


def test_benchmark_examples(chain):
    pibar, _ = benchmark_bar_policy(chain, 0.2, [0.25, 0.25])
    assert pibar.actions()[0][0] == 1
    mdp = random_mdp(make_rng(2), 3, 3, 3)
    pibar, _ = benchmark_bar_policy(mdp, 10.0, [0.1, 0.2, 0.3])
    assert all(np.all(a == 0) for a in pibar.actions())


def test_round_bins_exact_on_boundaries():
    # 0.3 / 0.1 is 2.9999999999999996 in floats; the exact ceiling of 3 + 0 is 3
    assert round_bins(np.array([0.3]), 0.1, 0.0)[0] == 3
    assert round_bins(np.array([0.3, 0.7]), 0.2, 0.25).tolist() == [2, 4]


def test_performance_difference_examples(chain):
    _, _, pistar = value_iteration(chain)
    zero = PolicyTable.constant(chain, 0)
    assert performance_difference(chain, pistar, zero) == pytest.approx(1.0)
    assert performance_difference(chain, pistar, pistar) == pytest.approx(0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_fixed_point_and_greedy_property(seed):
    mdp = random_mdp(make_rng(seed), 3, 3, 3)
    Q, V, pi = value_iteration(mdp)
    assert bellman_residual(mdp, Q) <= 1e-12
    assert all(np.array_equal(q.argmax(axis=1), a) for q, a in zip(Q, pi.actions()))
    per_cov, c_cov = coverability(mdp)
    _, c_push = pushforward_coverability(mdp)
    assert c_cov <= c_push * mdp.A + 1e-9
