import numpy as np
import pytest

from rlls.classes import (EmptyClassError, FinitePolicyClass, FiniteQClass, FiniteVClass,
                          build_exbmdp_policy_class, build_exbmdp_q_class, build_exbmdp_v_class,
                          check_qstar_realizable, check_v_realizable, check_vpi_realizable)
from rlls.exbmdp import DecoderClass, flatten, generate_exbmdp
from rlls.mdp import make_rng
from rlls.oracle import benchmark_bar_policy, policy_eval, value_iteration


@pytest.fixture
def inst():
    spec, dec = generate_exbmdp(3, 3, 2, 2, 3, lam=0.4)
    Q, V, pi = value_iteration(spec.latent_mdp())
    return spec, dec, Q, V


def test_q_class_realizes_exact_latent(inst):
    spec, dec, Q, _ = inst
    only_true = DecoderClass([dec.true], 0)
    qc = build_exbmdp_q_class(only_true, spec.S, spec.A, spec.H, 0.5, 3, make_rng(0), latent_qstar=Q)
    flat_q, _, _ = value_iteration(flatten(spec))
    assert check_qstar_realizable(qc, flat_q, 0.25 + 1e-12)
    exact = build_exbmdp_q_class(only_true, spec.S, spec.A, spec.H, 1e-3 * 3 / 3, 1, make_rng(0),
                                 latent_qstar=[np.round(q, 3) for q in Q])
    assert check_qstar_realizable(exact, [np.round(q, 3)[dec.true[h]] for h, q in enumerate(Q)], 1e-12)


def test_q_class_two_levels(inst):
    spec, dec, _, _ = inst
    qc = build_exbmdp_q_class(dec, spec.S, spec.A, spec.H, float(spec.H), 5, make_rng(1))
    assert len(qc) == len(dec) * 5
    assert all(set(np.unique(t)) <= {0.0, float(spec.H)} for t in qc.tables)


def test_q_class_grid_distance(inst):
    spec, dec, Q, _ = inst
    qc = build_exbmdp_q_class(dec, spec.S, spec.A, spec.H, 0.25, 4, make_rng(2), latent_qstar=Q)
    flat_q, _, _ = value_iteration(flatten(spec))
    assert qc.sup_distance(flat_q).min() <= 0.125 + 1e-12


def test_budget_zero_rejected(inst):
    spec, dec, _, _ = inst
    with pytest.raises(ValueError):
        build_exbmdp_q_class(dec, spec.S, spec.A, spec.H, 0.5, 0, make_rng(0))
    with pytest.raises(ValueError):
        build_exbmdp_q_class(dec, spec.S, spec.A, spec.H, 0.7, 1, make_rng(0))


def test_v_class_injection_and_measurability(inst):
    spec, dec, _, V = inst
    vc = build_exbmdp_v_class(DecoderClass([dec.true], 0), spec.S, spec.H, 0.5, 4, make_rng(3),
                              latent_v=V)
    target = [v[dec.true[h]] for h, v in enumerate(V)]
    assert check_v_realizable(vc, target, 0.0)
    full = build_exbmdp_v_class(dec, spec.S, spec.H, 0.5, 4, make_rng(3), latent_v=V)
    for j, phi in enumerate(dec.maps):
        for b in range(4):
            i = j * 4 + b
            for h in range(spec.H):
                for s in range(spec.S):
                    assert len(set(full.tables[h][i][phi[h] == s].tolist())) <= 1


def test_injected_member_survives_shuffle(inst):
    spec, dec, _, V = inst
    vc = build_exbmdp_v_class(dec, spec.S, spec.H, 0.5, 4, make_rng(4), latent_v=V)
    sh = vc.shuffled(make_rng(5))
    target = [v[dec.true[h]] for h, v in enumerate(V)]
    assert sh.sup_distance(target)[sh.injected_id] == 0.0


def test_benchmark_value_realizable(inst):
    spec, dec, _, _ = inst
    flat = flatten(spec)
    pibar, _ = benchmark_bar_policy(flat, 0.1, [0.2, 0.3, 0.4])
    _, Vbar = policy_eval(flat, pibar)
    latent = [v[::spec.Xi] for v in Vbar]
    vc = build_exbmdp_v_class(dec, spec.S, spec.H, 0.5, 2, make_rng(6), latent_v=latent)
    assert check_vpi_realizable(vc, flat, [pibar], 1e-12)


def test_checker_examples(chain):
    Q, _, _ = value_iteration(chain)
    assert check_qstar_realizable(FiniteQClass.from_members([Q]), Q, 0.0)
    zero = FiniteQClass.from_members([[np.zeros_like(q) for q in Q]])
    assert not check_qstar_realizable(zero, Q, 0.5)


def test_checker_monotone_in_tol(chain):
    Q, _, _ = value_iteration(chain)
    qc = FiniteQClass.from_members([[q * 0.7 for q in Q]])
    results = [check_qstar_realizable(qc, Q, t) for t in np.linspace(0, 1, 21)]
    assert results == sorted(results)


def test_class_invariants():
    with pytest.raises(EmptyClassError):
        FiniteVClass([np.zeros((0, 2))])
    with pytest.raises(ValueError):
        FiniteVClass([np.full((1, 2), 5.0)])
    with pytest.raises(EmptyClassError):
        FinitePolicyClass([np.zeros((0, 2), dtype=int)], 2)


def test_serialization_roundtrip(inst):
    spec, dec, _, V = inst
    vc = build_exbmdp_v_class(dec, spec.S, spec.H, 0.5, 2, make_rng(7), latent_v=V)
    back = FiniteVClass.from_dict(vc.to_dict())
    assert all(np.array_equal(a, b) for a, b in zip(vc.tables, back.tables))
    pc = build_exbmdp_policy_class(dec, spec.S, spec.A, spec.H, make_rng(8), budget=10)
    back = FinitePolicyClass.from_dict(pc.to_dict())
    assert all(np.array_equal(a, b) for a, b in zip(pc.actions, back.actions))


def test_policy_class_enumeration_small():
    spec, dec = generate_exbmdp(1, 2, 2, 2, 2)
    pc = build_exbmdp_policy_class(DecoderClass([dec.true], 0), 2, 2, 2)
    assert len(pc) == 2 ** (2 * 2)
