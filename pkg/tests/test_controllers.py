import numpy as np
import pytest

from ris_lab.controllers import Controller, build_controller
from ris_lab.errors import PolicyException
from ris_lab.models import ControllerKind
from ris_lab.policy import Mode, init_params


@pytest.fixture
def history():
    def make(controller):
        h = controller.new_history()
        rng = np.random.default_rng(0)
        for _ in range(5):
            h.push([int(rng.integers(n)) for n in controller.action_sizes], float(rng.uniform(0, 20)))
        return h

    return make


@pytest.mark.parametrize("kind,nets", [(ControllerKind.CENTRALIZED, 1), (ControllerKind.DISTRIBUTED, 3)])
def test_build_controller(kind, nets):
    c = build_controller(kind, [4, 3, 3], 8, np.random.default_rng(0))
    assert c.kind == kind
    assert len(c.params) == nets
    assert c.action_sizes == [4, 3, 3]
    assert c.n_agents == 3
    assert c.history_length == 8
    assert c.n_params == sum(p.size for p in c.params)


def test_network_vectors_are_views():
    c = build_controller(ControllerKind.DISTRIBUTED, [2, 2], 4, np.random.default_rng(0))
    c.vector[:] = 0.0
    assert not c.params[1].vector.any()
    start, stop = c.bounds[1]
    c.params[1].vector += 1.0
    assert (c.vector[start:stop] == 1.0).all()
    assert not c.vector[:start].any()


def test_copy_is_independent():
    c = build_controller(ControllerKind.CENTRALIZED, [2, 2], 4, np.random.default_rng(0))
    d = c.copy()
    d.vector += 1.0
    assert not np.array_equal(c.vector, d.vector)
    np.testing.assert_array_equal(d.params[0].vector, d.vector)


def test_controller_rejects_mixed_networks():
    rng = np.random.default_rng(0)
    central = build_controller(ControllerKind.CENTRALIZED, [2, 2], 4, rng)
    distributed = build_controller(ControllerKind.DISTRIBUTED, [2, 2], 4, rng)
    with pytest.raises(PolicyException):
        Controller(ControllerKind.CENTRALIZED, central.params + central.params)
    with pytest.raises(PolicyException):
        Controller(ControllerKind.DISTRIBUTED, central.params)
    with pytest.raises(PolicyException):
        Controller(ControllerKind.DISTRIBUTED, [])
    assert Controller('distributed', distributed.params).kind == ControllerKind.DISTRIBUTED


@pytest.mark.parametrize("kind", list(ControllerKind))
def test_distributions_per_agent(kind, history):
    c = build_controller(kind, [4, 3, 3], 8, np.random.default_rng(1))
    distributions = c.distributions(history(c))
    assert [d.size for d in distributions] == [4, 3, 3]
    assert all(d.sum() == pytest.approx(1.0) for d in distributions)


def test_distributed_agent_sees_only_its_history(history):
    c = build_controller(ControllerKind.DISTRIBUTED, [4, 3], 8, np.random.default_rng(1))
    inputs = c.net_inputs(history(c))
    assert [x.shape for x in inputs] == [(8, 5), (8, 4)]


@pytest.mark.parametrize("kind", list(ControllerKind))
def test_joint_gradient_concatenates_network_gradients(kind, history):
    c = build_controller(kind, [3, 2, 2], 8, np.random.default_rng(2), dropout_lstm=0.0, dropout_dense=0.0)
    _, caches = c.forward(c.net_inputs(history(c)), Mode.EVAL)
    actions = [2, 0, 1]
    joint = c.grad_log_prob(caches, actions, 0.5)
    parts = [c.net_gradient(i, cache, actions, 0.5) for i, cache in enumerate(caches)]
    np.testing.assert_array_equal(joint, np.concatenate(parts))


def test_net_actions():
    c = build_controller(ControllerKind.DISTRIBUTED, [3, 2, 2], 4, np.random.default_rng(0))
    assert c.net_actions(2, [2, 0, 1]) == [1]
    central = build_controller(ControllerKind.CENTRALIZED, [3, 2, 2], 4, np.random.default_rng(0))
    assert central.net_actions(0, [2, 0, 1]) == [2, 0, 1]


def test_zero_parameters_give_uniform_policies(history):
    for kind in ControllerKind:
        c = build_controller(kind, [4, 2], 4, np.random.default_rng(0))
        c.vector[:] = 0.0
        for d in c.distributions(history(c)):
            np.testing.assert_allclose(d, np.full(d.size, 1 / d.size))


def test_single_agent_kinds_nearly_coincide():
    central = build_controller(ControllerKind.CENTRALIZED, [4], 8, np.random.default_rng(0))
    distributed = build_controller(ControllerKind.DISTRIBUTED, [4], 8, np.random.default_rng(0))
    assert central.archs[0].input_size == distributed.archs[0].input_size
    assert abs(central.n_params - distributed.n_params) < 0.25 * central.n_params


def test_init_params_shared_rng_is_reproducible():
    a = build_controller(ControllerKind.DISTRIBUTED, [2, 3], 4, np.random.default_rng(9))
    b = build_controller(ControllerKind.DISTRIBUTED, [2, 3], 4, np.random.default_rng(9))
    np.testing.assert_array_equal(a.vector, b.vector)
    assert init_params(a.archs[0], np.random.default_rng(9)).size == a.params[0].size
