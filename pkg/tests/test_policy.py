import numpy as np
import pytest

from reinead.autodiff import Tensor, precision
from reinead.policy import ActionDistribution, PolicyValue, log_prob, policy_forward, sample_action, value

CAPS = (0.175, 0.125)


@pytest.fixture
def pv():
    return PolicyValue(8, CAPS, np.random.default_rng(0))


def test_zero_final_layer_gives_zero_mean_and_value(pv):
    pv.pi2.weight.data[:] = 0
    pv.v2.weight.data[:] = 0
    b = Tensor(np.random.default_rng(1).normal(size=(4, 8)))
    np.testing.assert_array_equal(policy_forward(pv, b).mean.data, 0)
    np.testing.assert_array_equal(value(pv, b).data, 0)


def test_mean_within_caps_and_deterministic(pv):
    pv.pi2.weight.data *= 1e4
    b = Tensor(np.random.default_rng(2).normal(size=(64, 8)))
    m = policy_forward(pv, b).mean.data
    assert np.all(np.abs(m) <= np.array(CAPS) + 1e-7)
    np.testing.assert_array_equal(m, policy_forward(pv, b).mean.data)
    np.testing.assert_array_equal(value(pv, b).data, value(pv, b).data)


def test_std_is_fraction_of_caps(pv):
    np.testing.assert_allclose(pv.std, 0.1 * np.array(CAPS))
    with pytest.raises(ValueError):
        ActionDistribution(Tensor(np.zeros((1, 2))), np.array([0.0, 0.1]))


def test_sampling_seeded_and_clamped():
    dist = ActionDistribution(Tensor(np.array([[0.17, -0.1]])), np.array([0.05, 0.05]))
    a1, r1 = sample_action(dist, np.random.default_rng(5), CAPS)
    a2, r2 = sample_action(dist, np.random.default_rng(5), CAPS)
    np.testing.assert_array_equal(r1, r2)
    assert np.all(np.abs(a1) <= CAPS)
    tiny = ActionDistribution(Tensor(np.array([[0.05, -0.02]])), np.array([1e-12, 1e-12]))
    np.testing.assert_allclose(sample_action(tiny, np.random.default_rng(0), CAPS)[0], [[0.05, -0.02]], atol=1e-10)


def test_sample_mean_monte_carlo():
    mean = np.array([[0.03, -0.02]])
    std = np.array([0.0175, 0.0125])
    dist = ActionDistribution(Tensor(mean, dtype=np.float64), std)
    n = 100_000
    rng = np.random.default_rng(11)
    dist_batch = ActionDistribution(Tensor(np.repeat(mean, n, 0), dtype=np.float64), std)
    _, raw = sample_action(dist_batch, rng, (1.0, 1.0))
    assert np.all(np.abs(raw.mean(0) - mean[0]) < 3 * std / np.sqrt(n))
    assert dist.mean.shape == (1, 2)


def test_log_prob_formula():
    with precision(np.float64):
        std = np.array([0.02, 0.01])
        mean = np.array([[0.05, -0.03]])
        dist = ActionDistribution(Tensor(mean), std)
        at_mean = log_prob(dist, mean).item()
        assert abs(at_mean + np.sum(np.log(std * np.sqrt(2 * np.pi)))) < 1e-12
        d = np.array([[0.013, -0.004]])
        assert abs(log_prob(dist, mean + d).item() - log_prob(dist, mean - d).item()) < 1e-12
        rng = np.random.default_rng(3)
        for _ in range(50):
            x = mean + rng.normal(0, 0.03, (1, 2))
            ref = np.sum(-0.5 * ((x - mean) / std) ** 2 - np.log(std) - 0.5 * np.log(2 * np.pi))
            assert abs(log_prob(dist, x).item() - ref) < 1e-9


def test_ratio_one_at_identical_params(pv):
    b = Tensor(np.random.default_rng(4).normal(size=(16, 8)))
    d = policy_forward(pv, b)
    _, raw = sample_action(d, np.random.default_rng(0), CAPS)
    lp_old = log_prob(d, raw).data
    lp_new = log_prob(policy_forward(pv, b), raw).data
    np.testing.assert_array_equal(np.exp(lp_new - lp_old), 1.0)
