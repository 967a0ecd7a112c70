import json

import numpy as np
import pytest

from rncover import agent as rn
from rncover import trainer as T
from rncover.gradcheck import check_network, random_buffer, reference_loss
from rncover.geometry import Box, SceneBounds
from rncover.observation import FrameHistory, RelationSet
from rncover.sim import ConfigError, EnvConfig, EnvState, EpisodeParams, Sensor, SimObject

TINY_ENV = EnvConfig(n_sensors=(2, 2), n_objects=(3, 6), horizon=(30, 40))


def brute_returns(r, gamma, v):
    k = len(r)
    return [sum(gamma ** i * r[t + i] for i in range(k - t)) + gamma ** (k - t) * v for t in range(k)]


def test_returns_example():
    np.testing.assert_allclose(T.discounted_returns([1, 0, 0], 0.5, 0.0), [1.0, 0.0, 0.0])
    np.testing.assert_allclose(T.discounted_returns([0, 0, 1], 0.5, 0.0), [0.25, 0.5, 1.0])
    np.testing.assert_allclose(T.discounted_returns([0, 0], 0.9, 10.0), [8.1, 9.0])
    assert T.discounted_returns([], 0.9, 3.0).shape == (0,)


def test_returns_random_oracle():
    rng = np.random.default_rng(0)
    for _ in range(200):
        k = int(rng.integers(1, 21))
        r = rng.integers(0, 3, k).astype(float)
        g, v = float(rng.uniform(0.01, 1.0)), float(rng.normal())
        np.testing.assert_allclose(T.discounted_returns(r, g, v), brute_returns(r, g, v),
                                   rtol=0, atol=1e-12)


def test_zero_advantage_zero_policy_gradient():
    buf = random_buffer(np.random.default_rng(0))
    p = rn.init_params(0)
    T.compute_targets(buf, 0.9)
    buf.advantages = np.zeros(len(buf))
    g0, m = T.loss_and_grads(buf, p, beta=0.0, value_loss_weight=1e-300, train_mode=False)
    assert m.policy_loss == 0.0
    assert max(float(np.abs(v).max()) for v in g0.values()) < 1e-200


def test_loss_matches_reference():
    rng = np.random.default_rng(5)
    buf = random_buffer(rng)
    p = rn.init_params(5)
    T.compute_targets(buf, 0.95)
    tape_loss, pg, vloss, _ = T.policy_loss_graph(p, buf, 0.01, 0.5, None, False, None)
    ref, _ = reference_loss(p, buf, 0.01, 0.5, "sum")
    assert float(tape_loss.data) == pytest.approx(ref, rel=1e-12)


@pytest.mark.parametrize("seed", [0, 1])
def test_network_gradients(seed):
    res = check_network(seed, coords_per_tensor=3)
    assert res.max_rel_error < 1e-4, res.worst


def test_entropy():
    assert T.entropy(np.full(5, 0.2)) == pytest.approx(np.log(5))
    assert T.entropy([1, 0, 0, 0, 0]) == 0.0


def test_rollout_uses_main_agent_and_pools_rewards():
    w = T.Worker(0, TINY_ENV, seed=1)
    p = rn.init_params(0)
    ended = False
    while not ended:
        buf = w.rollout(p, 5)
        assert 1 <= len(buf) <= 5
        for t in buf.transitions:
            assert t.relations.controlled == 0
        ended = buf.episode_ended
    assert buf.bootstrap == 0.0
    assert w.episodes == 1 and len(w.completed) == 1


def test_episode_reward_equals_captures():
    w = T.Worker(0, TINY_ENV, seed=2)
    p = rn.init_params(0)
    rewards = 0.0
    state = w.state
    while True:
        buf = w.rollout(p, 7)
        rewards += buf.rewards.sum()
        if buf.episode_ended:
            break
        state = w.state
    assert rewards == len(state.captured_ids)


def test_train_serial_deterministic(tmp_path):
    cfg = T.TrainerConfig(n_workers=2, t_max=5, total_env_steps=60, backend="serial", lr=1e-3)
    log = tmp_path / "log.jsonl"
    a = T.train(cfg, TINY_ENV, log_path=log)
    b = T.train(cfg, TINY_ENV)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    assert a.env_steps >= 60
    lines = [json.loads(x) for x in log.read_text().splitlines()]
    assert len(lines) == a.updates
    for key in ("update", "env_steps", "capture_pct", "policy_loss", "value_loss", "entropy",
                "lr", "beta", "gamma"):
        assert key in lines[-1]
    assert not all(np.array_equal(a.params[k], rn.init_params(0)[k]) for k in a.params)


def test_train_threaded_runs():
    cfg = T.TrainerConfig(n_workers=3, t_max=4, total_env_steps=50, backend="thread")
    res = T.train(cfg, TINY_ENV)
    assert res.env_steps >= 50
    for v in res.params.values():
        assert np.all(np.isfinite(v))


@pytest.mark.parametrize("kw, key", [({"gamma": 0.0}, "trainer.gamma"), ({"lr": -1}, "trainer.lr"),
                                     ({"n_workers": 0}, "trainer.n_workers"),
                                     ({"t_max": 0}, "trainer.t_max")])
def test_config_errors(kw, key):
    with pytest.raises(ConfigError, match=key):
        T.TrainerConfig(**kw).validate()


def test_draw_hyperparameters_in_range():
    spec = T.SearchSpec()
    rng = np.random.default_rng(0)
    for _ in range(200):
        lr, beta, gamma = T.draw_hyperparameters(spec, rng)
        assert 1e-5 <= lr <= 1e-3 and 1e-3 <= beta <= 5e-2 and gamma in spec.gamma


def test_search_ranks():
    spec = T.SearchSpec(agents=2)
    cfg = T.TrainerConfig(n_workers=1, t_max=5, total_env_steps=20, backend="serial")
    env = EnvConfig(n_sensors=(1, 1), n_objects=(2, 3), horizon=(15, 15))
    res = T.hyperparameter_search(spec, cfg, env, eval_episodes=2)
    assert [r.rank for r in res] == [1, 2]
    assert res[0].capture_pct >= res[1].capture_pct


def test_target_examples():
    buf = T.RolloutBuffer([T.Transition(None, 0, 0.0, 0.5), T.Transition(None, 0, 1.0, 0.25)],
                          bootstrap=2.0)
    T.compute_targets(buf, 0.9)
    np.testing.assert_allclose(buf.returns, [2.52, 2.8], rtol=1e-15)
    np.testing.assert_allclose(buf.advantages, [2.02, 2.55], rtol=1e-15)
    zero = T.compute_targets(T.RolloutBuffer([T.Transition(None, 0, 0.0, 0.7)]), 0.5)
    assert zero.advantages.tolist() == [-0.7]


def test_single_transition_policy_objective():
    # logits chosen so pi(action 1) = 0.5
    p = rn.init_params(0)
    for k in p:
        p[k][:] = 0.0
    p["policy.bias"][:] = np.log([1, 4, 1, 1, 1])
    rel = RelationSet(np.zeros((0, 60)), [], np.zeros(20))
    buf = T.RolloutBuffer([T.Transition(rel, 1, 0.0, 0.0)])
    T.compute_targets(buf, 0.9)
    buf.advantages = np.array([2.0])
    _, m = T.loss_and_grads(buf, p, beta=0.0, value_loss_weight=0.5, train_mode=False)
    assert -m.policy_loss == pytest.approx(2 * np.log(0.5), rel=1e-14)


def test_three_sensor_reward_credit():
    cfg = EnvConfig(p_toggle=0.0, spawn_rate=0.0)
    sensors = [Sensor(0, Box(0.2, 0.2, 0.1, 0.1), 0.0), Sensor(1, Box(0.5, 0.2, 0.1, 0.1), 0.0),
               Sensor(2, Box(0.8, 0.8, 0.3, 0.3), 0.0)]
    objs = [SimObject(0, Box(0.8, 0.8, 0.04, 0.04), 0.0, 0.0, False)]
    w = T.Worker(0, cfg, seed=0)
    w.state = EnvState(EpisodeParams(SceneBounds(), 3, 1, 1.0, 5, 0.0), objs, sensors,
                       np.random.default_rng(0), cfg)
    w.state.next_id = 1
    w.histories = {i: FrameHistory() for i in range(3)}
    w.current = None
    buf = w.rollout(rn.init_params(0), 3)
    assert buf.rewards.tolist() == [1.0, 0.0, 0.0]
