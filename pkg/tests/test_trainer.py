import logging
import math

import numpy as np
import pytest
from scipy.stats import chisquare

from ris_lab.controllers import build_controller
from ris_lab.errors import DivergenceException, PolicyException
from ris_lab.environment import IndoorEnvironment, compute_rate, initial_state
from ris_lab.models import (
    ArrayGeometry, BeamCodebook, ControllerKind, DynamicsParams, OccupancyGrid, ToyGameSpec, TrainConfig,
)
from ris_lab.oracle import (
    ToyEnvironment, controller_policy, enumerate_trajectories, exact_gradient, optimal_policy, policy_rmse,
)
from ris_lab.policy import Mode
from ris_lab.steps import EVALUATION_STREAM
from ris_lab.trainer import (
    ACTION_STREAM, SCORE_TOLERANCE, ReplayStore, collect_episode, collect_random_episode, decomposition_harness,
    estimate_gradient, joint_score_gradient, nash_check, nash_check_controller, seed_dataset, stream, train,
)

from conftest import make_scenario


def _controller(spec, kind=ControllerKind.DISTRIBUTED, seed=0, history_length=4, dropout=0.0):
    return build_controller(
        kind, spec.action_sizes, history_length, np.random.default_rng(seed), dropout_lstm=dropout, dropout_dense=dropout,
    )


def _samples(spec, controller, count, seed=0):
    env = ToyEnvironment(spec, seed)
    rngs = [stream(seed, ACTION_STREAM, m) for m in range(controller.n_agents)]
    out = []
    for _ in range(count):
        env.reset()
        out.append(collect_episode(env, controller, controller.new_history(), spec.horizon, rngs))
    return out


def _greedy(controller, spec):
    history = controller.new_history()
    actions = []
    for _ in range(spec.horizon):
        joint = [int(np.argmax(d)) for d in controller.distributions(history)]
        history.push(joint, spec.rewards[0][spec.joint_index(joint)])
        actions.append(tuple(joint))
    return actions


def _exact_moments(spec, controller):
    trajectories = enumerate_trajectories(spec, controller_policy(controller), controller.history_length)
    p = np.array([t.probability for t in trajectories])
    R = np.array([t.episodic_return for t in trajectories])
    mean = p @ R
    return mean, p @ (R * R) - mean * mean


def test_collect_episode_records_every_slot(frozen_game):
    controller = _controller(frozen_game)
    history = controller.new_history()
    sample = _samples(frozen_game, controller, 1)[0]
    record = sample.record
    assert record.horizon == 2
    assert len(sample.inputs) == 2 and len(sample.inputs[0]) == 2
    assert record.episodic_return == pytest.approx(sum(record.rates))
    for actions, rate in zip(record.actions, record.rates):
        assert rate == frozen_game.rewards[0][frozen_game.joint_index(actions)]
    assert all(lp < 0 for slot in record.log_probs for lp in slot)

    env = ToyEnvironment(frozen_game.copy(update={'horizon': 1}))
    one = collect_episode(env, controller, history, 1, [np.random.default_rng(0)] * 2)
    assert one.record.horizon == 1
    assert one.record.episodic_return == one.record.rates[0]
    assert len(history) == 1


def test_sample_inputs_are_read_only(frozen_game):
    sample = _samples(frozen_game, _controller(frozen_game), 1)[0]
    with pytest.raises(ValueError):
        sample.inputs[0][0][0, 0] = 1.0


def test_collect_random_episode(frozen_game):
    controller = _controller(frozen_game)
    env = ToyEnvironment(frozen_game)
    sample = collect_random_episode(env, controller, controller.new_history(), 2, np.random.default_rng(1))
    assert sample.record.horizon == 2
    assert sample.record.log_probs[0] == pytest.approx([np.log(0.5)] * 2)


def test_modes_sample_the_same_factored_policy(frozen_game):
    runs = []
    for kind in ControllerKind:
        controller = _controller(frozen_game, kind)
        controller.vector[:] = 0.0
        runs.append([s.record.actions for s in _samples(frozen_game, controller, 6, seed=3)])
    assert runs[0] == runs[1]


def test_estimate_gradient_is_reinforce_at_zero_mu(frozen_game):
    controller = _controller(frozen_game)
    sample = _samples(frozen_game, controller, 1)[0]
    R = sample.record.episodic_return
    expected = np.zeros(controller.n_params)
    for x, actions in zip(sample.inputs, sample.record.actions):
        _, caches = controller.forward(list(x))
        expected += controller.grad_log_prob(caches, actions, R)
    np.testing.assert_allclose(estimate_gradient([sample], controller, 0.0), expected, rtol=1e-12, atol=1e-15)
    np.testing.assert_allclose(
        estimate_gradient([sample] * 5, controller, 0.6), estimate_gradient([sample], controller, 0.6),
        rtol=1e-12, atol=1e-15,
    )


def test_estimate_gradient_per_network_slice(frozen_game):
    controller = _controller(frozen_game)
    batch = _samples(frozen_game, controller, 4)
    joint = estimate_gradient(batch, controller, 0.5)
    for net, (start, stop) in enumerate(controller.bounds):
        np.testing.assert_array_equal(estimate_gradient(batch, controller, 0.5, net=net), joint[start:stop])


def test_estimate_gradient_rejects_empty_batch(frozen_game):
    with pytest.raises(PolicyException):
        estimate_gradient([], _controller(frozen_game), 0.0)


def test_replay_store_capacity(frozen_game):
    samples = _samples(frozen_game, _controller(frozen_game), 5)
    store = ReplayStore(np.random.default_rng(0), capacity=3)
    store.extend(samples)
    assert len(store) == 3
    assert all(any(s is t for t in samples[2:]) for s in store.sample(10))
    with pytest.raises(PolicyException):
        ReplayStore(np.random.default_rng(0)).sample(1)


def test_replay_sampling_is_uniform(frozen_game):
    store = ReplayStore(np.random.default_rng(11))
    store.extend(_samples(frozen_game, _controller(frozen_game), 10))
    counts = np.zeros(10)
    for _ in range(20000):
        indices = store.sample_indices(3)
        assert len(set(indices.tolist())) == 3
        counts[indices] += 1
    assert chisquare(counts).pvalue > 0.01


def _config(**kw):
    base = dict(
        mode=ControllerKind.DISTRIBUTED, horizon=2, history_length=4, learning_rate=0.1, batch_size=8,
        offline_epochs=1, max_updates=5, dropout_lstm=0.2, dropout_dense=0.4, seed=3,
    )
    return TrainConfig(**{**base, **kw})


def test_zero_learning_rate_keeps_parameters(frozen_game):
    config = _config(learning_rate=0.0)
    controller = _controller(frozen_game)
    before = controller.vector.copy()
    env = ToyEnvironment(frozen_game)
    result = train(config, env, controller, seed_dataset(env, controller, config, 8))
    assert result.updates == 6
    np.testing.assert_array_equal(controller.vector, before)


def test_training_is_reproducible(frozen_game):
    def run():
        config = _config()
        controller = _controller(frozen_game)
        env = ToyEnvironment(frozen_game, 1)
        result = train(config, env, controller, seed_dataset(env, controller, config, 8))
        return [p.dict() for p in result.curves], controller.vector

    curves_a, vector_a = run()
    curves_b, vector_b = run()
    assert curves_a == curves_b
    np.testing.assert_array_equal(vector_a, vector_b)
    assert [p['update'] for p in curves_a] == list(range(6))


def test_divergence_guard(frozen_game):
    config = _config(divergence_limit=1e-3)
    with pytest.raises(DivergenceException):
        train(config, ToyEnvironment(frozen_game), _controller(frozen_game))


def test_clipping_is_logged(frozen_game, caplog):
    config = _config(clip_norm=1e-9, max_updates=2)
    with caplog.at_level(logging.WARNING, logger='ris_lab.trainer'):
        result = train(config, ToyEnvironment(frozen_game), _controller(frozen_game))
    assert any('Clipping' in r.message for r in caplog.records)
    assert all(p.grad_norm > 1e-9 for p in result.curves)


def test_convergence_stops_early(frozen_game):
    config = _config(learning_rate=0.0, max_updates=50, convergence_window=3, convergence_tolerance=10.0)
    result = train(config, ToyEnvironment(frozen_game), _controller(frozen_game))
    assert result.converged
    assert result.updates == 6


@pytest.fixture
def three_agent_game():
    rewards = np.random.default_rng(5).uniform(0, 2, 8).round(3).tolist()
    return ToyGameSpec(n_beams=2, n_phases=2, n_ris=2, horizon=2, rewards=[rewards])


def test_decomposition_gives_identical_updates(three_agent_game):
    config = _config(learning_rate=0.2, episodes_per_update=2, mu=0.5)
    report = decomposition_harness(config, lambda: ToyEnvironment(three_agent_game, 2), updates=10)
    assert report.max_divergence == 0.0
    assert report.factorization_error <= 1e-12
    assert report.score_error <= SCORE_TOLERANCE
    assert report.factorized


@pytest.mark.slow
def test_decomposition_over_long_runs(three_agent_game):
    config = _config(learning_rate=0.2, mu=0.8)
    report = decomposition_harness(config, lambda: ToyEnvironment(three_agent_game, 2), updates=100)
    assert report.max_divergence == 0.0
    assert report.factorization_error <= 1e-12


def test_decomposition_flags_wrong_network_gradient(three_agent_game):
    config = _config(learning_rate=0.2, episodes_per_update=2, mu=0.5)

    def offset(batch, controller, net, rngs):
        mode = Mode.EVAL if rngs is None else Mode.TRAIN
        return estimate_gradient(batch, controller, 0.5, mode=mode, rngs=rngs, net=net) + 0.05

    report = decomposition_harness(
        config, lambda: ToyEnvironment(three_agent_game, 2), updates=3, net_gradient=offset,
    )
    assert report.max_divergence > 0.0
    assert report.factorization_error > 1e-6
    assert report.score_error > 1e-3
    assert not report.factorized


def test_joint_score_gradient_matches_backward_pass(frozen_game):
    controller = _controller(frozen_game, seed=2)
    batch = _samples(frozen_game, controller, 4)
    reference = joint_score_gradient(batch, controller, 0.5)
    analytic = estimate_gradient(batch, controller, 0.5)
    assert np.max(np.abs(reference - analytic)) <= SCORE_TOLERANCE * max(1.0, np.max(np.abs(analytic)))


def test_train_config_carries_risk_settings(frozen_game):
    config = _config(mu=0.3, horizon=2)
    assert config.risk.mu == 0.3 and config.risk.horizon == 2
    controller = _controller(frozen_game)
    batch = _samples(frozen_game, controller, 8)
    with pytest.raises(PolicyException):
        train(_config(horizon=1, offline_epochs=1, max_updates=0), ToyEnvironment(frozen_game), controller, batch)


def test_decomposition_detects_perturbed_agent(three_agent_game):
    config = _config(learning_rate=0.2, episodes_per_update=2)
    report = decomposition_harness(config, lambda: ToyEnvironment(three_agent_game, 2), updates=10, perturb_agent=1)
    assert report.max_divergence > 0.0


def test_decomposition_needs_distributed_mode(three_agent_game):
    with pytest.raises(PolicyException):
        decomposition_harness(_config(mode=ControllerKind.CENTRALIZED), lambda: ToyEnvironment(three_agent_game), 1)


def _biased(spec, preferred, strength=12.0):
    controller = _controller(spec)
    controller.vector[:] = 0.0
    for params, a in zip(controller.params, preferred):
        params.view('dense2.b')[a] = strength
    return controller


def test_nash_check_at_single_agent_optimum():
    spec = ToyGameSpec(n_beams=3, n_phases=1, n_ris=0, horizon=1, rewards=[[0.1, 0.5, 0.3]])
    optimum = optimal_policy(spec, 0.0)
    report = nash_check(spec, optimum.policy(), 0.0, history_length=4)
    assert report.value == pytest.approx(0.5)
    assert report.improvements == [0.0]
    assert report.is_equilibrium


def test_nash_check_converged_profile(frozen_game):
    report = nash_check_controller(frozen_game, _biased(frozen_game, [1, 1]), 0.0)
    assert report.histories[0] == 5
    assert report.max_improvement <= 1e-3 * report.value
    assert report.is_equilibrium


def test_nash_check_detects_perturbed_profile(frozen_game):
    report = nash_check_controller(frozen_game, _biased(frozen_game, [1, 0]), 0.0)
    assert report.improvements[1] > 0.1
    assert not report.is_equilibrium


@pytest.mark.slow
def test_estimator_is_unbiased_at_zero_mu(frozen_game):
    controller = _controller(frozen_game, seed=4)
    controller.vector += np.random.default_rng(1).normal(0, 0.3, controller.n_params)
    exact = exact_gradient(frozen_game, controller, 0.0)
    grads = np.array([estimate_gradient([s], controller, 0.0) for s in _samples(frozen_game, controller, 4000)])
    mean = grads.mean(axis=0)
    sigma = grads.std(axis=0) / np.sqrt(len(grads))
    checked = sigma > 1e-9
    assert (np.abs(mean - exact)[checked] <= 4 * sigma[checked] + 1e-9).mean() > 0.99
    assert np.abs(mean - exact)[~checked].max(initial=0.0) < 1e-9


@pytest.mark.slow
def test_training_reaches_the_optimum(frozen_game):
    config = _config(
        learning_rate=0.3, episodes_per_update=16, batch_size=16, replay_capacity=16, max_updates=400,
        offline_epochs=0, dropout_lstm=0.0, dropout_dense=0.0, clip_norm=None, convergence_tolerance=0.0,
    )
    controller = _controller(frozen_game, seed=1)
    train(config, ToyEnvironment(frozen_game, 1), controller)
    optimum = optimal_policy(frozen_game, 0.0)
    assert _greedy(controller, frozen_game) == optimum.actions == [(1, 1), (1, 1)]
    rmse = policy_rmse(controller.distributions, optimum.distributions, optimum.histories(4))
    assert rmse <= 5.0


@pytest.mark.slow
def test_risk_knob_lowers_return_variance():
    # risky arm pays 0 or 2, safe arm 0.7; the safe arm wins once mu > 0.6
    spec = ToyGameSpec(
        n_beams=2, n_phases=1, n_ris=0, horizon=1,
        rewards=[[0.0, 0.7], [2.0, 0.7]], transitions=[[0.5, 0.5], [0.5, 0.5]],
    )
    reduced, lower_mean = 0, 0
    for seed in range(10):
        moments = {}
        for mu in (0.0, 0.8):
            config = _config(
                mu=mu, horizon=1, learning_rate=0.5, episodes_per_update=16, batch_size=16, replay_capacity=16,
                max_updates=400, offline_epochs=0, dropout_lstm=0.0, dropout_dense=0.0, clip_norm=None,
                convergence_tolerance=0.0, seed=seed,
            )
            controller = _controller(spec, seed=seed)
            train(config, ToyEnvironment(spec, seed), controller)
            moments[mu] = _exact_moments(spec, controller)
        reduced += moments[0.8][1] <= 0.6 * moments[0.0][1]
        lower_mean += moments[0.8][0] < moments[0.0][0]
    assert reduced >= 9
    assert lower_mean >= 9


def test_train_mode_estimate_uses_dropout_streams(frozen_game):
    controller = _controller(frozen_game, dropout=0.5)
    batch = _samples(frozen_game, controller, 3)
    rngs = lambda: [np.random.default_rng([7, i]) for i in range(2)]
    a = estimate_gradient(batch, controller, 0.2, mode=Mode.TRAIN, rngs=rngs())
    b = estimate_gradient(batch, controller, 0.2, mode=Mode.TRAIN, rngs=rngs())
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, estimate_gradient(batch, controller, 0.2))


def _two_cell_scenario():
    # the UE hops between (1, 2) and (1, 3); beam 0 hits (1, 2) only, beam 1 sits between the cells
    presence = np.zeros((4, 2))
    presence[2:, 1] = 1.0
    grid = OccupancyGrid(width=2, height=4, obstacles=np.zeros((4, 2), dtype=bool), presence=presence, ap=(0, 2))
    scenario = make_scenario(grid=grid, n_rays=1, geometry=ArrayGeometry(n_ap=8, n_ue=1, ris_h=1, ris_v=1))
    return scenario.copy(update={
        'beams': BeamCodebook(angles=[0.0, math.acos(0.837)]),
        'budget': scenario.budget.copy(update={'bandwidth': 1e6}),
        'dynamics': DynamicsParams(p_block=0.0, p_unblock=1.0),
    })


def _indoor_returns(scenario, controller, seed, episodes, rate_scale):
    env = IndoorEnvironment(scenario, seed)
    rngs = [stream(seed, EVALUATION_STREAM, m) for m in range(controller.n_agents)]
    history = controller.new_history(rate_scale)
    return np.array([
        collect_episode(env, controller, history, 1, rngs).record.episodic_return for _ in range(episodes)
    ])


@pytest.mark.slow
def test_risk_knob_lowers_indoor_return_variance():
    scenario = _two_cell_scenario()
    states = [initial_state(scenario, np.random.default_rng(0), cell) for cell in [(1, 2), (1, 3)]]
    rates = np.array([[compute_rate(scenario, state, [beam]) / 1e6 for beam in (0, 1)] for state in states])
    risky, safe = rates[:, 0], rates[:, 1]
    assert risky.mean() > safe.mean() > 0.75 * risky.mean()
    assert safe.mean() - 0.4 * safe.var() > risky.mean() - 0.4 * risky.var()

    reduced, close = 0, 0
    for seed in range(5):
        moments = {}
        for mu in (0.0, 0.8):
            config = _config(
                mu=mu, horizon=1, learning_rate=0.3, episodes_per_update=16, batch_size=16, replay_capacity=16,
                max_updates=400, offline_epochs=0, dropout_lstm=0.0, dropout_dense=0.0, clip_norm=None,
                convergence_tolerance=0.0, seed=seed,
            )
            controller = build_controller(
                ControllerKind.DISTRIBUTED, [2], 4, np.random.default_rng(seed), dropout_lstm=0.0, dropout_dense=0.0,
            )
            train(config, IndoorEnvironment(scenario, seed), controller)
            returns = _indoor_returns(scenario, controller, seed, 2000, config.rate_scale)
            moments[mu] = returns.mean(), returns.var()
        reduced += moments[0.8][1] < moments[0.0][1]
        close += moments[0.8][0] >= 0.75 * moments[0.0][0]
    assert reduced >= 4
    assert close >= 4
