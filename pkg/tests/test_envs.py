import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from omarlab.envs import EnvConfig, EnvState, observe, observe_all, reset, rewards, step


def make_state(cfg, agents, landmarks):
    d = cfg.space_dim
    a = np.asarray(agents, dtype=float).reshape(cfg.n_agents, d)
    lm = np.asarray(landmarks, dtype=float).reshape(cfg.n_agents, d)
    return EnvState(cfg, a, lm, np.zeros_like(a), 0)


@pytest.mark.parametrize("variant", ["spread1d_coop", "spread1d_independent", "coopnav2d"])
def test_reset_is_deterministic(variant):
    cfg = EnvConfig(variant=variant, n_agents=3)
    s1, o1 = reset(cfg, 42)
    s2, o2 = reset(cfg, 42)
    assert np.array_equal(s1.agents, s2.agents) and np.array_equal(s1.landmarks, s2.landmarks)
    assert np.array_equal(o1, o2) and s1.t == 0


def test_single_agent_cardinality():
    s, obs = reset(EnvConfig(n_agents=1), 0)
    assert s.agents.shape == (1, 1) and s.landmarks.shape == (1, 1) and obs.shape == (1, 2)


@pytest.mark.parametrize("variant", ["spread1d_coop", "coopnav2d"])
def test_resets_stay_in_box(variant):
    cfg = EnvConfig(variant=variant, n_agents=3)
    for seed in range(1000):
        s, _ = reset(cfg, seed)
        assert np.all(np.abs(s.agents) <= 1.0) and np.all(np.abs(s.landmarks) <= 1.0)


def test_zero_reward_on_covered_landmarks():
    cfg = EnvConfig(n_agents=3)
    s = make_state(cfg, [-0.5, 0.0, 0.5], [0.5, -0.5, 0.0])
    s2, res = step(s, np.zeros((3, 1)))
    assert np.all(res.rewards == 0.0)


def test_hand_evaluated_step():
    cfg = EnvConfig(n_agents=1)
    assert cfg.dt * cfg.max_speed == pytest.approx(0.1)
    s = make_state(cfg, [0.0], [0.5])
    s2, res = step(s, np.array([[1.0]]))
    assert s2.agents[0, 0] == pytest.approx(0.1)
    assert res.rewards[0] == pytest.approx(-0.4)
    assert s.agents[0, 0] == 0.0  # input state untouched


def test_collision_counted_once_per_pair():
    cfg = EnvConfig(n_agents=2, collision_penalty=1.0)
    s = make_state(cfg, [0.3, 0.3], [0.3, 0.3])
    assert rewards(s)[0] == pytest.approx(-1.0)
    s = make_state(cfg, [0.3, 0.3], [0.3, 0.8])
    assert rewards(s)[0] == pytest.approx(-0.5 - 1.0)


def test_independent_variant_uses_own_landmark_without_collisions():
    cfg = EnvConfig(variant="spread1d_independent", n_agents=2)
    s = make_state(cfg, [0.3, 0.3], [0.5, -0.2])
    np.testing.assert_allclose(rewards(s), [-0.2, -0.5])


def test_observation_layout():
    cfg = EnvConfig(n_agents=3)
    s = make_state(cfg, [0.0, 0.4, -0.6], [0.2, -0.3, 0.9])
    o = observe(s, 0)
    assert len(o) == 1 + 3 + 2 == cfg.obs_dim
    np.testing.assert_allclose(o[1:4], s.landmarks[:, 0])  # agent at origin
    np.testing.assert_allclose(o[4:], [0.4, -0.6])
    cfg2 = EnvConfig(variant="coopnav2d", n_agents=3)
    assert observe(reset(cfg2, 0)[0], 1).shape == (cfg2.obs_dim,) == (4 + 6 + 4,)


def test_relative_components_translation_invariant():
    cfg = EnvConfig(variant="coopnav2d", n_agents=3, world_halfwidth=5.0)
    s, _ = reset(cfg, 3)
    shifted = make_state(cfg, s.agents + [0.7, -0.4], s.landmarks + [0.7, -0.4])
    for i in range(3):
        np.testing.assert_allclose(observe(s, i)[4:], observe(shifted, i)[4:], atol=1e-12)


def test_actions_clamped_or_rejected():
    cfg = EnvConfig(n_agents=1)
    s = make_state(cfg, [0.0], [0.5])
    s2, _ = step(s, np.array([[5.0]]))
    assert s2.agents[0, 0] == pytest.approx(0.1)
    strict = EnvConfig(n_agents=1, strict_actions=True)
    with pytest.raises(ValueError):
        step(make_state(strict, [0.0], [0.5]), np.array([[1.5]]))


@pytest.mark.parametrize("variant", ["spread1d_coop", "spread1d_independent", "coopnav2d"])
def test_episode_terminates_exactly_at_length(variant):
    cfg = EnvConfig(variant=variant, n_agents=2, episode_len=7)
    s, _ = reset(cfg, 0)
    rng = np.random.default_rng(0)
    for t in range(7):
        s, res = step(s, rng.uniform(-1, 1, size=(2, cfg.act_dim)))
        assert res.done == (t == 6)
    with pytest.raises(RuntimeError):
        step(s, np.zeros((2, cfg.act_dim)))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(1, 5),
       variant=st.sampled_from(["spread1d_coop", "coopnav2d"]))
def test_cooperative_reward_shared_and_nonpositive(seed, n, variant):
    cfg = EnvConfig(variant=variant, n_agents=n)
    s, _ = reset(cfg, seed)
    rng = np.random.default_rng(seed)
    for _ in range(5):
        s, res = step(s, rng.uniform(-1, 1, size=(n, cfg.act_dim)))
        assert np.max(np.abs(res.rewards - res.rewards[0])) == 0.0
        assert res.rewards[0] <= 0.0
        assert np.all(np.abs(s.agents) <= cfg.world_halfwidth)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(2, 5))
def test_permutation_equivariance(seed, n):
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    acts = rng.uniform(-1, 1, size=(n, 1))
    # independent: permute agents together with their target landmarks
    ind = EnvConfig(variant="spread1d_independent", n_agents=n)
    s, _ = reset(ind, seed)
    sp = make_state(ind, s.agents[perm], s.landmarks[perm])
    _, r = step(s, acts)
    _, rp = step(sp, acts[perm])
    np.testing.assert_allclose(rp.rewards, r.rewards[perm], atol=1e-12)
    np.testing.assert_allclose(rp.observations[:, 0], r.observations[perm, 0], atol=1e-12)
    # cooperative: permuting agents only leaves the shared reward unchanged
    coop = EnvConfig(variant="spread1d_coop", n_agents=n)
    s, _ = reset(coop, seed)
    sp = make_state(coop, s.agents[perm], s.landmarks)
    _, r = step(s, acts)
    _, rp = step(sp, acts[perm])
    assert rp.rewards[0] == pytest.approx(r.rewards[0], abs=1e-12)


def test_reward_zero_only_when_covered():
    cfg = EnvConfig(n_agents=2)
    s = make_state(cfg, [0.1, 0.5], [0.1, 0.55])
    assert rewards(s)[0] < 0
    assert observe_all(s).shape == (2, cfg.obs_dim)
