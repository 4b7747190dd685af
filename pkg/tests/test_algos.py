import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from oracles import brute_gae, brute_td_lambda

from fopgnav.algos import (AnchorFitError, FopgTrainer, GaussianPolicy, HandAnchor, NetAnchor,
                           PpoConfig, PpoTrainer, ShacConfig, TrainerAbort, ValueNet,
                           anchor_deviation, bptt_iteration, gae, rpl_compose, shac_iteration,
                           td_lambda_targets, train_anchor)
from fopgnav.algos.fopg import window_loss
from fopgnav.algos.ppo import clipped_surrogate, linear_decay
from fopgnav.diffcore import Adam, Mlp, Tape, Tensor, backward, clip_grad_norm, ops
from fopgnav.dynamics import ActionCmd
from fopgnav.navenv import OBS_DEPTH, OBS_DIM, NavConfig, NavEnv, RunningNorm

EMPTY = NavConfig(obstacle_count=(0, 0))


def frozen_norm(seed=0):
    n = RunningNorm(OBS_DIM)
    rng = np.random.default_rng(seed)
    n.update(rng.normal(0.3, 0.7, size=(64, OBS_DIM)))
    n.frozen = True
    return n


# ---------------------------------------------------------------- estimators

@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 3), elements=st.floats(-2, 2)),
       arrays(np.float64, (5, 3), elements=st.floats(-2, 2)),
       arrays(np.bool_, (5, 3)), st.floats(0, 1), st.floats(0, 1))
def test_td_lambda_matches_brute_force(r, nv, d, gamma, lam):
    ours = td_lambda_targets(r, nv, d, gamma, lam)
    assert np.allclose(ours, brute_td_lambda(r, nv, d, gamma, lam), rtol=0, atol=1e-12)


def test_td_lambda_one_is_discounted_return_to_bootstrap():
    r = np.array([[1.0], [2.0], [3.0], [4.0], [5.0]])
    nv = np.array([[9.0], [9.0], [9.0], [9.0], [10.0]])
    d = np.zeros((5, 1), dtype=bool)
    g = td_lambda_targets(r, nv, d, 0.9, 1.0)
    expect = sum(0.9 ** k * r[k, 0] for k in range(5)) + 0.9 ** 5 * 10.0
    assert g[0, 0] == pytest.approx(expect, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (4, 2), elements=st.floats(-2, 2)),
       arrays(np.float64, (4, 2), elements=st.floats(-2, 2)),
       arrays(np.float64, (4, 2), elements=st.floats(-2, 2)),
       arrays(np.bool_, (4, 2)), st.floats(0, 1), st.floats(0, 1))
def test_gae_matches_brute_force(r, v, nv, d, gamma, lam):
    ours = gae(r, v, nv, d, gamma, lam)
    assert np.allclose(ours, brute_gae(r, v, nv, d, gamma, lam), rtol=0, atol=1e-12)


def test_gae_hand_built_trajectory():
    r = np.array([1.0, 0.0, -1.0, 2.0])[:, None]
    v = np.array([0.5, 0.2, 0.1, 0.3])[:, None]
    nv = np.array([0.2, 0.1, 0.3, 0.0])[:, None]
    d = np.array([False, False, False, True])[:, None]
    g, l = 0.9, 0.8
    delta = r[:, 0] + g * nv[:, 0] - v[:, 0]
    a0 = delta[0] + (g * l) * delta[1] + (g * l) ** 2 * delta[2] + (g * l) ** 3 * delta[3]
    assert gae(r, v, nv, d, g, l)[0, 0] == pytest.approx(a0, abs=1e-12)


def test_gae_with_zero_discount():
    rng = np.random.default_rng(0)
    r, v, nv = rng.normal(size=(3, 6, 4))
    d = rng.random((6, 4)) < 0.3
    assert np.array_equal(gae(r, v, nv, d, 0.0, 0.95), r - v)


# ---------------------------------------------------------------- residual composition

def test_rpl_compose_examples():
    a = ActionCmd(Tensor(np.array([1.0])), Tensor(np.array([0.0])))
    d = ActionCmd(Tensor(np.array([0.0])), Tensor(np.array([0.3])))
    out = rpl_compose(a, d)
    assert out.forward_velocity.data[0] == 1.0 and out.yaw_rate.data[0] == 0.3
    z = ActionCmd(Tensor(np.zeros(1)), Tensor(np.zeros(1)))
    same = rpl_compose(a, z)
    assert same.forward_velocity.data[0] == 1.0 and same.yaw_rate.data[0] == 0.0


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (5, OBS_DIM), elements=st.floats(-5, 5)))
def test_fresh_residual_policy_acts_like_anchor(obs):
    for anchor in (HandAnchor(1.0), NetAnchor(Mlp([2, 8, 2], "tanh", False, 0.5, seed=3))):
        pol = GaussianPolicy(hidden=(16,), anchor=anchor, seed=1)
        assert np.array_equal(pol.mean(obs, obs).data, anchor(obs).data)


def test_residual_std_is_scaled():
    base = GaussianPolicy(init_log_std=-0.5)
    rpl = GaussianPolicy(init_log_std=-0.5, anchor=HandAnchor(), variance_scale=0.1)
    assert np.allclose(rpl.std().data, 0.1 * base.std().data, rtol=1e-15)


def test_residual_policy_needs_raw_observations():
    pol = GaussianPolicy(anchor=HandAnchor())
    with pytest.raises(ValueError):
        pol.mean(np.zeros((1, OBS_DIM)))


def _deterministic_states(actor, steps=120):
    cfg = NavConfig()
    env = NavEnv(cfg, 8, seed=5, obs_norm=frozen_norm())
    out = []
    for _ in range(steps):
        env.step(actor(env.obs, env.raw_obs_t))
        out.append(env.state.numpy())
    return np.array(out)


def test_fresh_rpl_trajectory_bit_identical_to_anchor():
    anchor = HandAnchor(1.0)
    pol = GaussianPolicy(anchor=anchor, variance_scale=0.1, seed=7)
    a = _deterministic_states(lambda o, r: anchor(r))
    b = _deterministic_states(lambda o, r: pol.mean(o, r))
    assert np.array_equal(a, b)


def test_log_prob_and_entropy_closed_form():
    pol = GaussianPolicy(init_log_std=-0.3, seed=2)
    obs = np.random.default_rng(1).normal(size=(4, OBS_DIM))
    act = np.random.default_rng(2).normal(size=(4, 2))
    mu = pol.mean(obs).data
    s = np.exp(-0.3)
    expect = (-0.5 * ((act - mu) / s) ** 2 - np.log(s) - 0.5 * np.log(2 * np.pi)).sum(-1)
    assert np.allclose(pol.log_prob(Tensor(obs), None, act).data, expect, atol=1e-12)
    assert pol.entropy().data == pytest.approx(2 * (np.log(s) + 0.5 * (np.log(2 * np.pi) + 1)))


def test_value_net_finite_on_extreme_inputs():
    v = ValueNet(seed=0)
    x = np.random.default_rng(0).normal(scale=1e3, size=(16, OBS_DIM))
    assert np.isfinite(v.predict(x)).all() and v.predict(x).shape == (16,)


# ---------------------------------------------------------------- first-order gradients

def _flat(params, keys):
    return np.concatenate([params[k].reshape(-1) for k in keys])


def _unflat(params, keys, vec):
    i = 0
    for k in keys:
        n = params[k].size
        params[k] = vec[i:i + n].reshape(params[k].shape).copy()
        i += n


def _fd_check(h, value=None, gamma=0.99, n_envs=2):
    norm = frozen_norm()
    pol = GaussianPolicy(seed=4)
    keys = [k for k in pol.params if not k.endswith("log_std")]

    def loss_at(vec, tape=None):
        _unflat(pol.params, keys, vec)
        env = NavEnv(EMPTY, n_envs, seed=9, obs_norm=norm)
        # a moving start exercises the velocity features
        env.step(np.tile([[0.6, 0.4]], (n_envs, 1)))
        env.detach()
        return window_loss(env, pol, h, gamma, tape, value=value, deterministic=True)[0]

    theta = _flat(pol.params, keys)
    tape = Tape()
    loss = loss_at(theta.copy(), tape)
    g = backward(tape, loss)
    g_rev = _flat({k: g[k] for k in keys}, keys)
    eps = 1e-6
    g_num = np.zeros_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += eps
        tm[i] -= eps
        g_num[i] = (loss_at(tp).data - loss_at(tm).data) / (2 * eps)
    live = np.abs(g_num) > 1e-7
    assert live.sum() > 10
    err = np.abs(g_rev - g_num) / np.maximum(np.maximum(np.abs(g_rev), np.abs(g_num)), 1e-5)
    return err.max(), np.linalg.norm(g_rev - g_num) / np.linalg.norm(g_num)


def test_bptt_gradient_h8_matches_differences():
    worst, normwise = _fd_check(8)
    assert worst < 1e-4 and normwise < 1e-6


def test_shac_gradient_h16_matches_differences():
    v = ValueNet(hidden=(16,), seed=1)
    worst, normwise = _fd_check(16, value=v)
    assert worst < 1e-4 and normwise < 1e-6


def test_h1_constant_reward_gives_zero_gradient():
    cfg = EMPTY.replace(w_track=0.0, w_collide=0.0, w_effort=0.0, w_heading_rate=0.0)
    env = NavEnv(cfg, 4, seed=0)
    pol = GaussianPolicy(seed=0)
    tape = Tape()
    loss, _ = window_loss(env, pol, 1, 0.99, tape, np.random.default_rng(0))
    g = backward(tape, loss)
    assert all(np.all(g[k] == 0.0) for k in pol.params)


def test_shac_discount_zero_is_one_step_loss():
    pol, v = GaussianPolicy(seed=0), ValueNet(seed=0)
    losses = []
    for h, val in ((8, v), (1, None)):
        env = NavEnv(NavConfig(), 4, seed=2, obs_norm=frozen_norm())
        tape = Tape()
        loss, _ = window_loss(env, pol, h, 0.0, tape, value=val, deterministic=True)
        g = backward(tape, loss)
        losses.append((float(loss.data), {k: g[k] for k in pol.params}))
    assert losses[0][0] == losses[1][0]
    for k in pol.params:
        assert np.allclose(losses[0][1][k], losses[1][1][k], rtol=0, atol=1e-14)


def test_shac_with_zero_value_equals_bptt_update():
    sc = ShacConfig(env_count=4, horizon=8)
    zero_v = ValueNet(hidden=(8,), seed=0)
    zero_v.params["value/w1"][:] = 0.0
    results = []
    for value in (zero_v, None):
        pol = GaussianPolicy(seed=3)
        env = NavEnv(NavConfig(), sc.env_count, seed=1)
        FopgTrainer(env, pol, sc, value, seed=5).step()
        results.append(pol.params)
    for k in results[0]:
        assert np.array_equal(results[0][k], results[1][k])


def test_iteration_helpers_check_trainer_kind():
    env = NavEnv(EMPTY, 2)
    sc = ShacConfig(env_count=2, horizon=2)
    with pytest.raises(ValueError):
        bptt_iteration(FopgTrainer(env, GaussianPolicy(), sc, ValueNet()))
    with pytest.raises(ValueError):
        shac_iteration(FopgTrainer(env, GaussianPolicy(), sc, None))


def test_fixed_start_loss_decreases_monotonically():
    sc = ShacConfig()
    pol = GaussianPolicy(seed=0)
    opt = Adam(pol.params, lr=sc.policy_lr)
    losses = []
    for _ in range(50):
        env = NavEnv(EMPTY, 16, seed=0)
        tape = Tape()
        loss, _ = window_loss(env, pol, sc.horizon, sc.gamma, tape, deterministic=True)
        g = backward(tape, loss)
        g, _ = clip_grad_norm({k: g[k] for k in pol.params}, sc.grad_clip)
        opt.step(g)
        losses.append(float(loss.data))
    assert np.all(np.diff(losses) < 0)


def test_windows_are_detached():
    sc = ShacConfig(env_count=4, horizon=4)
    env = NavEnv(NavConfig(), sc.env_count, seed=0, render_grad="full")
    tr = FopgTrainer(env, GaussianPolicy(seed=0), sc, ValueNet(hidden=(8,)), seed=0)
    for _ in range(3):
        tr.step()
        carried = [env.state.x, env.state.y, env.state.heading, env.state.v, env.state.omega,
                   env.ema.y, env.prev_action.forward_velocity, env.prev_action.yaw_rate,
                   env.obs, env.raw_obs_t]
        assert all(t.tape is None for t in carried)


def test_trainer_metrics_and_determinism():
    sc = ShacConfig(env_count=4, horizon=4)
    runs = []
    for _ in range(2):
        env = NavEnv(NavConfig(), sc.env_count, seed=0)
        tr = FopgTrainer(env, GaussianPolicy(seed=0), sc, ValueNet(hidden=(8,)), seed=0)
        runs.append([tr.step() for _ in range(3)])
    m = runs[0][-1]
    assert m["iteration"] == 3 and m["env_steps"] == 3 * 4 * 4
    strip = [[{k: v for k, v in r.items() if k != "wall_clock"} for r in run] for run in runs]
    assert repr(strip[0]) == repr(strip[1])


def test_nonfinite_forward_aborts():
    sc = ShacConfig(env_count=2, horizon=2)
    pol = GaussianPolicy(seed=0)
    pol.params["policy/w0"][:] = 1e306
    env = NavEnv(NavConfig(), 2, seed=0, obs_norm=frozen_norm())
    with pytest.raises(TrainerAbort, match="window 0"), np.errstate(all="ignore"):
        FopgTrainer(env, pol, sc).step()


def test_value_divergence_aborts():
    sc = ShacConfig(env_count=2, horizon=2, value_divergence=1e-12)
    env = NavEnv(NavConfig(), 2, seed=0)
    with pytest.raises(TrainerAbort, match="diverged"):
        FopgTrainer(env, GaussianPolicy(), sc, ValueNet(hidden=(8,))).step()


# ---------------------------------------------------------------- anchor and frozenness

@pytest.fixture(scope="module")
def net_anchor():
    return train_anchor(HandAnchor(1.0), NavConfig(), seed=0)


def test_trained_anchor_imitates_reference(net_anchor):
    # 1000 observations from perturbed anchor rollouts in fresh scenes
    env = NavEnv(NavConfig(), 25, seed=77)
    rng = np.random.default_rng(1)
    obs = []
    for _ in range(40):
        obs.append(env.raw_obs.copy())
        env.step(net_anchor(env.raw_obs).data + 0.3 * rng.standard_normal((25, 2)))
    obs = np.concatenate(obs)
    assert obs.shape[0] == 1000
    assert anchor_deviation(net_anchor, HandAnchor(1.0), obs) < 0.05


def test_trained_anchor_tracks_speed(net_anchor):
    env = NavEnv(EMPTY, 8, seed=1)
    for _ in range(EMPTY.episode_length - 1):
        env.step(net_anchor(env.raw_obs))
    assert np.all(np.abs(env.state.v.data - 1.0) < 0.05)


def test_self_imitation_is_a_fixed_point(net_anchor):
    again = train_anchor(net_anchor, NavConfig(), max_iterations=5, seed=1)
    for k in net_anchor.params:
        assert np.array_equal(again.params[k], net_anchor.params[k])


def test_anchor_budget_exhaustion_raises():
    with pytest.raises(AnchorFitError):
        train_anchor(HandAnchor(1.0), NavConfig(), max_iterations=2, tolerance=1e-9)


def test_anchor_frozen_through_residual_training(net_anchor):
    before = net_anchor.checksum()
    pol = GaussianPolicy(anchor=net_anchor, variance_scale=0.1, seed=0)
    sc = ShacConfig(env_count=4, horizon=4)
    tr = FopgTrainer(NavEnv(NavConfig(), 4, seed=0), pol, sc, ValueNet(hidden=(8,)), seed=0)
    for _ in range(100):
        tr.step()
    assert net_anchor.checksum() == before
    assert not any(k.startswith("anchor") for k in tr.opt.params)


# ---------------------------------------------------------------- PPO

def test_ppo_config_validation():
    with pytest.raises(ValueError):
        PpoConfig(lr_start=1e-4, lr_end=3e-4)
    with pytest.raises(ValueError):
        PpoConfig(minibatches=0)
    assert PpoConfig(discount=0.0).discount == 0.0


def test_linear_decay_monotone():
    lrs = [linear_decay(3e-4, 1e-4, i, 10) for i in range(12)]
    assert lrs[0] == 3e-4 and lrs[9] == pytest.approx(1e-4) and lrs[11] == lrs[9]
    assert np.all(np.diff(lrs) <= 0)


def test_on_policy_surrogate_equals_unclipped():
    rng = np.random.default_rng(0)
    pol = GaussianPolicy(seed=0)
    obs, act = rng.normal(size=(32, OBS_DIM)), rng.normal(size=(32, 2))
    adv = rng.normal(size=32)
    grads = []
    for clipped in (True, False):
        tape = Tape()
        lp = pol.log_prob(Tensor(obs), None, act, tape)
        old = lp.data.copy()
        if clipped:
            loss = clipped_surrogate(lp, old, adv, 0.2)
        else:
            loss = -ops.mean(ops.exp(lp - old) * adv)
        grads.append(backward(tape, loss))
    for k in pol.params:
        assert np.array_equal(grads[0][k], grads[1][k])


def test_ppo_gradient_sign_matches_score_function():
    """One-step bandit: reward -|a - c|^2; the expected-reward gradient is analytic."""
    rng = np.random.default_rng(0)
    pol = GaussianPolicy(seed=1, init_log_std=-0.5)
    n = 100_000
    obs = np.zeros((n, OBS_DIM))
    obs[:, :4] = rng.normal(size=(n, 4))
    mu = pol.mean(obs).data
    std = pol.std().data
    act = mu + std * rng.standard_normal(mu.shape)
    c = np.array([0.7, -0.4])
    r = -((act - c) ** 2).sum(-1)
    tape = Tape()
    lp = pol.log_prob(Tensor(obs), None, act, tape)
    loss = clipped_surrogate(lp, lp.data.copy(), r - r.mean(), 0.2)
    g = backward(tape, loss)
    # ascent direction of the surrogate vs the analytic gradient of E[r]
    dmu = -2.0 * (mu - c)
    analytic = {"policy/w0": obs.T @ dmu / n, "policy/b0": dmu.mean(0),
                "policy/log_std": -2.0 * std ** 2}
    checked = 0
    for k, a in analytic.items():
        est = -g[k]
        big = np.abs(a) > 0.05 * np.abs(a).max()
        assert np.array_equal(np.sign(est[big]), np.sign(a[big])), k
        checked += int(big.sum())
    assert checked >= 10


def _ppo(seed=0, **kw):
    cfg = PpoConfig(env_count=4, batch_size=4, minibatches=2, unroll_length=5,
                    updates_per_batch=2, value_hidden=(8,), **kw)
    env = NavEnv(NavConfig(), cfg.env_count, seed=seed)
    return PpoTrainer(env, GaussianPolicy(seed=seed), ValueNet(hidden=(8,), seed=seed), cfg, 10,
                      seed=seed)


def test_ppo_advantages_discount_zero():
    tr = _ppo(discount=0.0)
    b = tr.collect()
    adv, ret = tr.advantages(b)
    v = tr.value.predict(b["obs"].reshape(-1, OBS_DIM)).reshape(adv.shape)
    assert np.allclose(adv, b["rew"] - v, atol=1e-12)
    assert np.allclose(ret, b["rew"], atol=1e-12)


def test_ppo_step_metrics_and_determinism():
    out = []
    for _ in range(2):
        tr = _ppo()
        out.append([tr.step() for _ in range(2)])
    m = out[0][-1]
    assert m["env_steps"] == 2 * tr.cfg.steps_per_iteration
    assert np.isfinite(m["loss"]) and np.isfinite(m["value_loss"])
    strip = [[{k: v for k, v in r.items() if k != "wall_clock"} for r in run] for run in out]
    assert repr(strip[0]) == repr(strip[1])


def test_ppo_nonfinite_aborts():
    tr = _ppo()
    tr.policy.params["policy/w0"][:] = 1e306
    with pytest.raises(TrainerAbort), np.errstate(all="ignore"):
        tr.step()


def test_ppo_env_count_must_match():
    env = NavEnv(NavConfig(), 3)
    with pytest.raises(ValueError):
        PpoTrainer(env, GaussianPolicy(), ValueNet(), PpoConfig(env_count=4), 1)
