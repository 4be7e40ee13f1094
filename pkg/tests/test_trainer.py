import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reinead.attacks import PatchBank
from reinead.autodiff import SGD, Tensor, ops, precision
from reinead.env import CardEnv, make_scene_dataset
from reinead.perception import PerceptionSpec
from reinead.policy import PolicyValue
from reinead.trainer import (
    Agent,
    PolicyBatch,
    TrainConfig,
    TrainingDiverged,
    clip_objective,
    compute_rewards,
    discounted_sum,
    estimate_advantages,
    normalize_advantages,
    offline_pretrain,
    online_train,
    perception_objective,
    percep_update,
    read_metrics,
    rollout,
)
from reinead.trainer.loops import _DivergenceGuard

SPEC = PerceptionSpec(n_classes=3, resolution=16, d_e=8, d_b=8, d_z=4, channels=(2, 3, 4))


def test_reward_example_and_telescoping():
    r = compute_rewards("uncertainty_shaped", 0.5, losses=[1.0, 0.6, 0.2])
    np.testing.assert_allclose(r, [0.7, 0.5])
    assert abs(discounted_sum(r, 0.5) - 0.95) < 1e-12
    assert abs(discounted_sum(r, 0.5) - (1.0 - 0.25 * 0.2)) < 1e-12


@settings(deadline=None)
@given(st.lists(st.floats(0, 10), min_size=2, max_size=17), st.sampled_from([0.5, 0.9, 0.95, 1.0]))
def test_telescoping_property(losses, gamma):
    r = compute_rewards("uncertainty_shaped", gamma, losses=losses)
    H = len(losses) - 1
    assert abs(discounted_sum(r, gamma) - (losses[0] - gamma ** H * losses[-1])) < 1e-6


def test_constant_losses_and_other_modes():
    r = compute_rewards("uncertainty_shaped", 0.9, losses=[2.0, 2.0, 2.0])
    np.testing.assert_allclose(r, 0.1 * 2.0)
    np.testing.assert_allclose(compute_rewards("uncertainty_shaped", 1.0, losses=[2.0] * 4), 0.0)
    np.testing.assert_allclose(compute_rewards("binary_outcome", 0.95, true_probs=[0.99] * 5), 1.0)
    assert compute_rewards("binary_outcome", 0.95, true_probs=[0.99, 0.5, 0.96]).tolist() == [0.0, 1.0]
    np.testing.assert_allclose(compute_rewards("entropy_deduction", 0.5, entropies=[1.0, 0.4]), [0.8])
    with pytest.raises(ValueError):
        compute_rewards("entropy_deduction", 0.5, losses=[1.0, 0.4])
    with pytest.raises(ValueError):
        compute_rewards("binary_outcome", 0.5, true_probs=[0.2, 0.3], kappa=1.0)
    with pytest.raises(ValueError):
        compute_rewards("nonsense", 0.5, losses=[1.0, 0.4])


def _gae_bruteforce(r, v, gamma, lam):
    H = len(r)
    nxt = [v[t + 1] if t + 1 < H else 0.0 for t in range(H)]
    delta = [r[t] + gamma * nxt[t] - v[t] for t in range(H)]
    return np.array([sum((gamma * lam) ** k * delta[t + k] for k in range(H - t)) for t in range(H)])


def test_gae_matches_bruteforce_and_limits():
    rng = np.random.default_rng(0)
    for _ in range(50):
        H = int(rng.integers(1, 10))
        r, v = rng.normal(size=H), rng.normal(size=H + 1)
        g, lam = rng.uniform(0.5, 1), rng.uniform(0, 1)
        adv, ret = estimate_advantages(r, v, g, lam)
        np.testing.assert_allclose(adv, _gae_bruteforce(r, v, g, lam), atol=1e-6)
        np.testing.assert_allclose(ret, adv + v[:-1])
    r, v = rng.normal(size=5), rng.normal(size=6)
    one_step, _ = estimate_advantages(r, v, 0.9, 0.0)
    nxt = np.append(v[1:-1], 0.0)
    np.testing.assert_allclose(one_step, r + 0.9 * nxt - v[:-1])
    mc, _ = estimate_advantages(r, np.zeros(6), 0.9, 1.0)
    np.testing.assert_allclose(mc, [sum(0.9 ** k * r[t + k] for k in range(5 - t)) for t in range(5)])


def test_advantage_normalization():
    a = normalize_advantages(np.random.default_rng(0).normal(3, 5, 200))
    assert abs(a.mean()) < 1e-6 and abs(a.std() - 1) < 1e-3


def _policy_batch(pv, rng, n=32):
    from reinead.policy import log_prob, policy_forward, sample_action

    b = rng.normal(size=(n, 8))
    d = policy_forward(pv, Tensor(b))
    _, raw = sample_action(d, rng, pv.caps)
    return PolicyBatch(b, raw, log_prob(d, raw).data.astype(np.float64), rng.normal(size=n), rng.normal(size=n))


def test_clip_objective_anchor():
    with precision(np.float64):
        pv = PolicyValue(8, (0.175, 0.125), np.random.default_rng(0))
        batch = _policy_batch(pv, np.random.default_rng(1))
        obj, ratios, dropped = clip_objective(pv, batch, 0.2)
        np.testing.assert_array_equal(ratios, 1.0)
        assert abs(obj.item() - batch.advantages.mean()) < 1e-6 and dropped == 0


def _policy_grad(pv, batch, eps):
    pv.zero_grad()
    obj, _, _ = clip_objective(pv, batch, eps)
    obj.backward()
    return np.concatenate([p.grad.ravel() for p in pv.policy_parameters()])


def test_clip_saturation_gives_zero_gradient():
    with precision(np.float64):
        pv = PolicyValue(8, (0.175, 0.125), np.random.default_rng(0))
        rng = np.random.default_rng(2)
        batch = _policy_batch(pv, rng, 1)
        batch.advantages[:] = 1.0
        batch.old_log_probs[:] -= 1.0  # ratio = e > 1 + eps
        assert np.abs(_policy_grad(pv, batch, 0.2)).max() == 0.0
        batch.advantages[:] = -1.0  # negative advantage is not clipped from above
        assert np.abs(_policy_grad(pv, batch, 0.2)).max() > 0.0


def test_clip_objective_matches_scalar_formula():
    with precision(np.float64):
        pv = PolicyValue(8, (0.175, 0.125), np.random.default_rng(0))
        rng = np.random.default_rng(3)
        batch = _policy_batch(pv, rng)
        batch.old_log_probs += rng.normal(0, 0.3, batch.old_log_probs.shape)
        obj, ratios, _ = clip_objective(pv, batch, 0.2)
        ref = np.mean([min(r * a, np.clip(r, 0.8, 1.2) * a) for r, a in zip(ratios, batch.advantages)])
        assert abs(obj.item() - ref) < 1e-6


def test_ratio_one_gradient_equals_unclipped_policy_gradient():
    with precision(np.float64):
        pv = PolicyValue(8, (0.175, 0.125), np.random.default_rng(0))
        batch = _policy_batch(pv, np.random.default_rng(4))
        g_clip = _policy_grad(pv, batch, 0.2)
        from reinead.policy import log_prob, policy_forward

        pv.zero_grad()
        lp = log_prob(policy_forward(pv, Tensor(batch.beliefs)), batch.raw_actions)
        ops.mean(ops.mul(lp, batch.advantages)).backward()
        g_pg = np.concatenate([p.grad.ravel() for p in pv.policy_parameters()])
        np.testing.assert_allclose(g_clip, g_pg, rtol=1e-8, atol=1e-12)


def test_non_finite_ratio_is_dropped():
    with precision(np.float64):
        pv = PolicyValue(8, (0.175, 0.125), np.random.default_rng(0))
        batch = _policy_batch(pv, np.random.default_rng(5), 4)
        batch.old_log_probs[1] = -np.inf
        obj, _, dropped = clip_objective(pv, batch, 0.2)
        assert dropped == 1 and np.isfinite(obj.item())


@pytest.fixture(scope="module")
def small_world():
    scenes = make_scene_dataset(3, 2, seed=0, texture_size=16)
    from reinead.env import Intrinsics

    env = CardEnv(intrinsics=Intrinsics.square(16, 17.5))
    return scenes, env


def test_rollout_bookkeeping_and_determinism(small_world):
    scenes, env = small_world
    agent = Agent(SPEC, env.caps, seed=0)
    a = rollout(agent, env, scenes[:2], [None, np.full(scenes[1].patch_shape, 0.3)], [1, 2], 1)
    assert a[0].observations.shape[0] == 2 and a[0].actions.shape == (1, 2)
    assert a[1].patch_id == -1 and a[0].patch_id is None
    b = rollout(agent, env, scenes[:2], [None, np.full(scenes[1].patch_shape, 0.3)], [1, 2], 1)
    np.testing.assert_array_equal(a[1].observations, b[1].observations)
    c = rollout(agent, env, scenes[:2], [None, None], [1, 2], 3, deterministic=True)
    d = rollout(agent, env, scenes[:2], [None, None], [1, 2], 3, deterministic=True)
    np.testing.assert_array_equal(c[0].states, d[0].states)
    with pytest.raises(ValueError):
        rollout(agent, env, scenes[:1], [None], [0], 17)
    for t in c:
        assert np.all(t.losses >= 0)


def test_percep_objective_degenerate_cases(small_world):
    scenes, env = small_world
    agent = Agent(SPEC, env.caps, seed=0)
    trajs = rollout(agent, env, scenes, [None] * len(scenes), list(range(len(scenes))), 1)
    obs = np.stack([t.observations for t in trajs])[:, :1]  # single observation
    labels = [t.label for t in trajs]
    m1 = Agent(SPEC, env.caps, seed=0).perception
    m2 = Agent(SPEC, env.caps, seed=0).perception
    percep_update(m1, SGD(m1.parameters(), 0.01), obs, labels, 0.0)
    opt = SGD(m2.parameters(), 0.01)
    opt.zero_grad()
    _, logits = m2.step(m2.initial_belief(len(labels)), Tensor(obs[:, 0]))
    ops.div(ops.sum(ops.cross_entropy(logits, labels)), float(len(labels))).backward()
    opt.step()
    for (n, p), (_, q) in zip(m1.named_parameters(), m2.named_parameters()):
        np.testing.assert_array_equal(p.data, q.data, err_msg=n)


def test_large_lambda_gradient_follows_entropy(small_world):
    scenes, env = small_world
    with precision(np.float64):
        agent = Agent(SPEC, env.caps, seed=0)
        trajs = rollout(agent, env, scenes, [None] * len(scenes), list(range(len(scenes))), 2)
        obs = np.stack([t.observations for t in trajs]).astype(np.float64)
        labels = [t.label for t in trajs]
        m = agent.perception

        def grad(fn):
            m.zero_grad()
            fn().backward()
            return np.concatenate([p.grad.ravel() for p in m.parameters() if p.grad is not None])

        g_big = grad(lambda: perception_objective(m, obs, labels, 1e6)[0])

        def ent_only():
            _, logits = m.unroll(Tensor(obs))
            total = ops.sum(ops.entropy(logits[0]))
            for lg in logits[1:]:
                total = ops.add(total, ops.sum(ops.entropy(lg)))
            return total

        g_ent = grad(ent_only)
        cos = g_big @ g_ent / (np.linalg.norm(g_big) * np.linalg.norm(g_ent))
        assert cos > 0.99


def test_divergence_guard():
    g = _DivergenceGuard("x")
    g.check(1.0)
    g.check(11.0)
    g.check(12.0)
    with pytest.raises(TrainingDiverged, match="consecutive"):
        g.check(13.0)
    with pytest.raises(TrainingDiverged):
        _DivergenceGuard("y").check(float("nan"))


def test_zero_epochs_and_iterations_leave_params(small_world, tmp_path):
    scenes, env = small_world
    agent = Agent(SPEC, env.caps, seed=0)
    before = agent.state_arrays()
    cfg = TrainConfig(offline_epochs=0, iterations=0)
    offline_pretrain(agent, env, scenes, PatchBank(), cfg)
    online_train(agent, env, scenes, PatchBank(), cfg)
    for k, v in agent.state_arrays().items():
        np.testing.assert_array_equal(v, before[k])


def test_online_requires_pretraining(small_world):
    scenes, env = small_world
    agent = Agent(SPEC, env.caps, seed=0)
    with pytest.raises(RuntimeError, match="pretraining"):
        online_train(agent, env, scenes, PatchBank(), TrainConfig(iterations=1))


def test_short_training_run_is_reproducible(small_world, tmp_path):
    scenes, env = small_world
    cfg = TrainConfig(horizon=2, iterations=2, batch_episodes=4, minibatch=2, offline_epochs=1,
                      offline_batches=2, checkpoint_every=1)
    outs = []
    for run in range(2):
        agent = Agent(SPEC, env.caps, seed=0)
        history = offline_pretrain(agent, env, scenes, PatchBank(), cfg)
        online_train(agent, env, scenes, PatchBank(), cfg, out_dir=tmp_path / str(run))
        rows = read_metrics(tmp_path / str(run) / "metrics.csv")
        outs.append(((tmp_path / str(run) / "metrics.csv").read_bytes(), history, agent.state_arrays()))
        assert "wallclock_s" not in rows[0]
        assert len(read_metrics(tmp_path / str(run) / "timing.csv")) == len(rows)
        assert (tmp_path / str(run) / "agent_it1.ckpt").exists()
        assert all(np.isfinite(float(r["mean_final_loss"])) for r in rows)
    assert outs[0][0] == outs[1][0] and outs[0][1] == outs[1][1]
    for k in outs[0][2]:
        np.testing.assert_array_equal(outs[0][2][k], outs[1][2][k])


def test_agent_checkpoint_round_trip(small_world, tmp_path):
    scenes, env = small_world
    agent = Agent(SPEC, env.caps, seed=3)
    agent.pretrained = True
    agent.save(tmp_path / "a.ckpt", "abc")
    back = Agent.load(tmp_path / "a.ckpt", "abc")
    assert back.pretrained
    back.save(tmp_path / "b.ckpt", "abc")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    with pytest.warns(UserWarning, match="config hash"):
        Agent.load(tmp_path / "a.ckpt", "different")
    t1 = rollout(agent, env, scenes, [None] * 6, list(range(6)), 2)
    t2 = rollout(back, env, scenes, [None] * 6, list(range(6)), 2)
    for x, y in zip(t1, t2):
        np.testing.assert_array_equal(x.logits, y.logits)
