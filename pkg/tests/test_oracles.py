from pathlib import Path

import numpy as np
import pytest

from reinead.oracles import (
    BudgetExceeded,
    DiscretePOMDP,
    accumulative_optimal,
    bayes_update,
    conditional_mi,
    enumerate_posterior,
    gap_trend,
    greedy_rollout,
    infonce_lhs,
    observation_probs,
    posterior_entropy,
    random_joint,
    random_pomdp,
    verify_efficacy_inequality,
    verify_infonce_bound,
)

FIXTURE = Path(__file__).parent / "fixtures" / "strict_gap_pomdp.json"


def _uniform_prior(S, Y, s0=0):
    prior = np.zeros((S, Y))
    prior[s0] = 1.0 / Y
    return prior


def trap_pomdp():
    """The first step's informative action leads to a dead end; the quiet one unlocks a revealing state."""
    # states: 0 start, 1 shallow (80% reliable), 2 gate, 3 revealing, 4 dead end
    T = np.array([[1, 2], [4, 4], [3, 3], [3, 3], [4, 4]])
    Z = np.full((5, 2, 2), 0.5)
    Z[1] = [[0.8, 0.2], [0.2, 0.8]]
    Z[3] = [[1.0, 0.0], [0.0, 1.0]]
    return DiscretePOMDP(T, Z, _uniform_prior(5, 2), horizon=2)


def _binary_entropy(p):
    return -(p * np.log(p) + (1 - p) * np.log(1 - p))


def test_bayes_update_matches_path_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(200):
        m = random_pomdp(rng)
        b = m.prior
        acts, obs = [], []
        for _ in range(m.horizon):
            a = int(rng.integers(m.T.shape[1]))
            o = int(rng.choice(m.Z.shape[2], p=observation_probs(m, b, a)))
            b = bayes_update(m, b, a, o)
            acts.append(a)
            obs.append(o)
            assert abs(b.sum() - 1) < 1e-12
        np.testing.assert_allclose(b, enumerate_posterior(m, acts, obs), atol=1e-12)


def test_uninformative_and_revealing_observations():
    m = trap_pomdp()
    b = bayes_update(m, m.prior, 1, 0)  # to the gate, which says nothing
    np.testing.assert_allclose(b.sum(0), [0.5, 0.5])
    b = bayes_update(m, b, 0, 1)  # to the revealing state
    assert posterior_entropy(b) == 0.0
    with pytest.raises(ValueError):
        bayes_update(m, b, 0, 0)  # y is now known, so the opposite reading is impossible


def test_entropy_values():
    assert abs(posterior_entropy(np.full((1, 4), 0.25)) - np.log(4)) < 1e-15
    assert posterior_entropy(np.array([[0.0, 1.0], [0.0, 0.0]])) == 0.0
    assert abs(posterior_entropy(np.array([0.8, 0.2])) - _binary_entropy(0.8)) < 1e-15


def test_trap_instance_has_strict_gap():
    m = trap_pomdp()
    tree, g = greedy_rollout(m)
    opt_tree, o = accumulative_optimal(m)
    assert tree["action"] == 0 and opt_tree["action"] == 1
    assert abs(g - (np.log(2) - _binary_entropy(0.8))) < 1e-12
    assert abs(o - np.log(2)) < 1e-12


def test_greedy_never_beats_optimal_and_gains_are_bounded():
    rng = np.random.default_rng(1)
    for _ in range(150):
        m = random_pomdp(rng)
        _, g = greedy_rollout(m)
        _, o = accumulative_optimal(m)
        h0 = posterior_entropy(m.prior)
        assert o >= g - 1e-9
        for gain in (g, o):
            assert -1e-12 <= gain <= h0 + 1e-12


def test_single_step_greedy_is_optimal():
    rng = np.random.default_rng(2)
    for _ in range(100):
        m = random_pomdp(rng, max_h=1)
        assert abs(greedy_rollout(m)[1] - accumulative_optimal(m)[1]) < 1e-12


def test_single_action_gives_equality():
    rng = np.random.default_rng(3)
    for _ in range(100):
        m = random_pomdp(rng, max_a=1)
        assert abs(greedy_rollout(m)[1] - accumulative_optimal(m)[1]) < 1e-12


def test_budget_rejection():
    T = np.zeros((2, 3), dtype=int)
    Z = np.full((2, 2, 6), 1 / 6)
    m = DiscretePOMDP(T, Z, np.full((2, 2), 0.25), horizon=5)
    with pytest.raises(BudgetExceeded):
        accumulative_optimal(m)
    accumulative_optimal(DiscretePOMDP(T, Z, np.full((2, 2), 0.25), horizon=3))


def test_pomdp_validation_and_text_round_trip():
    m = trap_pomdp()
    again = DiscretePOMDP.from_text(m.to_text())
    np.testing.assert_array_equal(again.Z, m.Z)
    np.testing.assert_array_equal(again.T, m.T)
    with pytest.raises(ValueError):
        DiscretePOMDP(m.T, m.Z * 2, m.prior, 2)
    with pytest.raises(ValueError):
        DiscretePOMDP(m.T + 10, m.Z, m.prior, 2)
    with pytest.raises(ValueError):
        DiscretePOMDP(m.T, m.Z, m.prior, 0)


def test_frozen_strict_gap_fixture():
    m = DiscretePOMDP.from_text(FIXTURE.read_text())
    _, g = greedy_rollout(m)
    _, o = accumulative_optimal(m)
    assert abs(g - 0.2902638384842445) < 1e-12
    assert abs(o - 0.5238263300040625) < 1e-12
    assert o - g > 1e-3


def test_efficacy_report_is_deterministic():
    a = verify_efficacy_inequality(40, seed=7)
    b = verify_efficacy_inequality(40, seed=7)
    assert a == b and a.ok
    assert a.max_gap >= 0


# contrastive bound


def test_conditional_mi_closed_forms():
    indep = np.einsum("b,bo,by->boy", [0.3, 0.7], [[0.5, 0.5], [0.1, 0.9]], [[0.2, 0.8], [0.6, 0.4]])
    assert abs(conditional_mi(indep)) < 1e-12
    copy = np.zeros((1, 2, 2))
    copy[0, 0, 0] = copy[0, 1, 1] = 0.5
    assert abs(conditional_mi(copy) - np.log(2)) < 1e-12


def test_independent_joint_sits_at_zero():
    # with uniform y every term is exactly log 1, above I - log(K)/K = -log(K)/K
    p = np.full((2, 3, 4), 1 / 24)
    r = verify_infonce_bound(p, K=8, n_batches=50, seed=0)
    assert r.mutual_info == pytest.approx(0, abs=1e-12)
    assert abs(r.lhs_mean) < 1e-12 and r.mi_ok and not r.stated_ok


def test_perfect_copy_binary_k2_enumeration():
    copy = np.zeros((1, 2, 2))
    copy[0, 0, 0] = copy[0, 1, 1] = 0.5
    # half the batches draw two different labels (each term log 2), the rest give log 1
    exact = 0.5 * np.log(2)
    vals = infonce_lhs(copy, 2, 4000, np.random.default_rng(1))
    assert set(np.round(vals, 12)) <= {0.0, round(np.log(2), 12)}
    r = verify_infonce_bound(copy, K=2, n_batches=4000, seed=1)
    assert abs(r.lhs_mean - exact) < 4 * r.lhs_se
    assert r.stated_bound == pytest.approx(exact)  # the stated bound is met with equality here
    assert r.stated_ok and r.mi_ok


def test_estimate_never_exceeds_mutual_information():
    rng = np.random.default_rng(2)
    for _ in range(10):
        p = random_joint(rng)
        assert verify_infonce_bound(p, K=8, n_batches=300, seed=3).mi_ok
        # negatives drawn across beliefs bound I((b, o); y) instead
        vals = infonce_lhs(p, 8, 300, np.random.default_rng(3), sampling="joint")
        full = conditional_mi(p.reshape(1, -1, p.shape[2]))
        assert vals.mean() <= full + 3 * vals.std(ddof=1) / np.sqrt(len(vals))


def test_gap_shrinks_with_batch_size():
    p = random_joint(np.random.default_rng(4))
    reports = gap_trend(p, Ks=(2, 8, 32), n_batches=1500, seed=0)
    gaps = [r.gap for r in reports]
    assert gaps[0] > gaps[1] > gaps[2] > -3 * reports[2].lhs_se


def test_infonce_rejects_small_batch_and_bad_sampling():
    p = random_joint(np.random.default_rng(5))
    with pytest.raises(ValueError):
        infonce_lhs(p, 1, 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        infonce_lhs(p, 4, 10, np.random.default_rng(0), sampling="pairs")
