import itertools
import logging
import math
from collections import deque
from typing import Callable, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from ris_lab.controllers import Controller, build_controller
from ris_lab.environment import IEnvironment
from ris_lab.errors import DivergenceException, EnumerationBoundException, PolicyException
from ris_lab.history import HistoryBuffer
from ris_lab.models import ControllerKind, CurvePoint, EpisodeRecord, ToyGameSpec, TrainConfig
from ris_lab.oracle import (
    PolicyFn, controller_policy, enumerate_trajectories, exact_objective, finite_difference_gradient,
)
from ris_lab.policy import ClampCounter, Mode, forward, log_prob, sample_action
from ris_lab.risk import gradient_weight, surrogate_return

_logger = logging.getLogger(__name__)

# independent random streams derived from the experiment seed
ACTION_STREAM = 0
DROPOUT_STREAM = 1
REPLAY_STREAM = 2


def stream(seed: int, kind: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, kind, index])


class TrainingSample(BaseModel):
    """
    One episode plus the network inputs seen at each slot (one array per network).
    """
    inputs: tuple[tuple[np.ndarray, ...], ...]
    record: EpisodeRecord

    class Config:
        arbitrary_types_allowed = True
        allow_mutation = False


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def collect_episode(
        env: IEnvironment,
        controller: Controller,
        history: HistoryBuffer,
        horizon: int,
        rngs: Sequence[np.random.Generator],
        clamps: Optional[ClampCounter] = None,
) -> TrainingSample:
    """
    Roll the controller for `horizon` slots, pushing every shared rate into history.
    Actions are drawn per agent from rngs[m].
    """
    inputs, actions, rates, log_probs = [], [], [], []
    for _ in range(horizon):
        x = tuple(_frozen(a) for a in controller.net_inputs(history))
        distributions, _ = controller.forward(list(x))
        chosen = [sample_action(d, rngs[m]) for m, d in enumerate(distributions)]
        log_probs.append([log_prob(d, a, clamps) for d, a in zip(distributions, chosen)])
        rate = env.step(chosen)
        history.push(chosen, rate)
        inputs.append(x)
        actions.append(chosen)
        rates.append(rate)
    return TrainingSample(inputs=tuple(inputs), record=EpisodeRecord.from_steps(actions, rates, log_probs))


def collect_random_episode(
        env: IEnvironment,
        controller: Controller,
        history: HistoryBuffer,
        horizon: int,
        rng: np.random.Generator,
) -> TrainingSample:
    """
    Uniformly random actions; the seed dataset for offline training.
    """
    inputs, actions, rates, log_probs = [], [], [], []
    sizes = controller.action_sizes
    for _ in range(horizon):
        inputs.append(tuple(_frozen(a) for a in controller.net_inputs(history)))
        chosen = [int(rng.integers(n)) for n in sizes]
        rate = env.step(chosen)
        history.push(chosen, rate)
        actions.append(chosen)
        rates.append(rate)
        log_probs.append([-math.log(n) for n in sizes])
    return TrainingSample(inputs=tuple(inputs), record=EpisodeRecord.from_steps(actions, rates, log_probs))


def seed_dataset(
        env: IEnvironment, controller: Controller, config: TrainConfig, n_samples: int,
) -> list[TrainingSample]:
    rng = stream(config.seed, REPLAY_STREAM, 2)
    history = controller.new_history(config.rate_scale)
    env.reset()
    samples = []
    for _ in range(n_samples):
        if env.episodic:
            env.reset()
            history = controller.new_history(config.rate_scale)
        samples.append(collect_random_episode(env, controller, history, config.horizon, rng))
    _logger.info("Collected %d random episodes", n_samples)
    return samples


class ReplayStore:
    """
    Append-only episode store; the oldest samples drop out once capacity is reached.
    """

    def __init__(self, rng: np.random.Generator, capacity: Optional[int] = None):
        self._rng = rng
        self._samples: deque[TrainingSample] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._samples)

    def add(self, sample: TrainingSample):
        self._samples.append(sample)

    def extend(self, samples: Sequence[TrainingSample]):
        self._samples.extend(samples)

    def sample_indices(self, n: int) -> np.ndarray:
        if not self._samples:
            raise PolicyException("Replay store is empty")
        return self._rng.choice(len(self._samples), size=min(n, len(self._samples)), replace=False)

    def sample(self, n: int) -> list[TrainingSample]:
        return [self._samples[i] for i in self.sample_indices(n)]


def estimate_gradient(
        samples: Sequence[TrainingSample],
        controller: Controller,
        mu: float,
        flipped_weight: bool = False,
        mode: Mode = Mode.EVAL,
        rngs: Optional[Sequence[np.random.Generator]] = None,
        net: Optional[int] = None,
) -> np.ndarray:
    """
    Minibatch estimate of the risk-sensitive policy gradient, with the batch mean as R_bar.
    With `net` set only that network's slice is computed, from that network's forward
    passes alone.
    """
    if not samples:
        raise PolicyException("Cannot estimate a gradient from an empty batch")
    returns = [s.record.episodic_return for s in samples]
    mean = math.fsum(returns) / len(returns)
    grad = np.zeros(controller.n_params if net is None else controller.params[net].size)
    for sample, R in zip(samples, returns):
        weight = gradient_weight(R, mean, mu, flipped_weight)
        for x, actions in zip(sample.inputs, sample.record.actions):
            if net is None:
                _, caches = controller.forward(list(x), mode, rngs)
                grad += controller.grad_log_prob(caches, actions, weight)
            else:
                _, cache = forward(controller.params[net], x[net], mode, rngs[net] if rngs is not None else None)
                grad += controller.net_gradient(net, cache, actions, weight)
    return grad / len(samples)


class TrainResult(BaseModel):
    controller: Controller
    curves: list[CurvePoint]
    converged: bool
    updates: int

    class Config:
        arbitrary_types_allowed = True


def _check_divergence(controller: Controller, limit: float, update: int):
    peak = float(np.max(np.abs(controller.vector)))
    if not math.isfinite(peak) or peak > limit:
        raise DivergenceException(f"Parameters diverged at update {update} (max |theta| = {peak:.3g})")


def _ascent_step(
        config: TrainConfig,
        controller: Controller,
        batch: Sequence[TrainingSample],
        rngs: Sequence[np.random.Generator],
        update: int,
        clamps: int,
) -> CurvePoint:
    risk = config.risk
    if any(s.record.horizon != risk.horizon for s in batch):
        raise PolicyException(f"Minibatch episodes do not all span the {risk.horizon}-slot horizon")
    returns = [s.record.episodic_return for s in batch]
    grad = estimate_gradient(batch, controller, risk.mu, config.flipped_weight, Mode.TRAIN, rngs)
    norm = float(np.linalg.norm(grad))
    if config.clip_norm is not None and norm > config.clip_norm:
        _logger.warning("Clipping gradient norm %.3g to %.3g at update %d", norm, config.clip_norm, update)
        grad *= config.clip_norm / norm
    controller.vector += config.learning_rate * grad
    _check_divergence(controller, config.divergence_limit, update)
    return CurvePoint(
        update=update,
        J_estimate=surrogate_return(returns, risk.mu),
        mean_rate=float(np.mean([r for s in batch for r in s.record.rates])),
        rate_variance=float(np.var(returns)),
        grad_norm=norm,
        clamps=clamps,
    )


def _converged(values: list[float], window: int, tolerance: float) -> bool:
    if len(values) < 2 * window:
        return False
    previous = np.mean(values[-2 * window:-window])
    latest = np.mean(values[-window:])
    return abs(latest - previous) <= tolerance * max(abs(previous), 1e-12)


def train(
        config: TrainConfig,
        env: IEnvironment,
        controller: Controller,
        dataset: Optional[Sequence[TrainingSample]] = None,
) -> TrainResult:
    """
    Offline epochs over the seed dataset, then online episodes feeding a replay store,
    one gradient ascent step per minibatch.
    """
    seed = config.seed
    action_rngs = [stream(seed, ACTION_STREAM, m) for m in range(controller.n_agents)]
    dropout_rngs = [stream(seed, DROPOUT_STREAM, i) for i in range(len(controller.params))]
    replay = ReplayStore(stream(seed, REPLAY_STREAM, 0), config.replay_capacity)
    clamps = ClampCounter()
    curves: list[CurvePoint] = []
    update = 0
    reported = 0

    if dataset:
        replay.extend(dataset)
        order_rng = stream(seed, REPLAY_STREAM, 1)
        for epoch in range(config.offline_epochs):
            order = order_rng.permutation(len(dataset))
            for start in range(0, len(order), config.batch_size):
                batch = [dataset[i] for i in order[start:start + config.batch_size]]
                curves.append(_ascent_step(config, controller, batch, dropout_rngs, update, 0))
                update += 1
            _logger.debug("Offline epoch %d: J=%.4f", epoch, curves[-1].J_estimate)
        _logger.info("Finished %d offline epochs over %d samples", config.offline_epochs, len(dataset))

    env.reset()
    history = controller.new_history(config.rate_scale)
    objective = []
    converged = False
    for _ in range(config.max_updates):
        for _ in range(config.episodes_per_update):
            if env.episodic:
                env.reset()
                history = controller.new_history(config.rate_scale)
            replay.add(collect_episode(env, controller, history, config.horizon, action_rngs, clamps))
        point = _ascent_step(
            config, controller, replay.sample(config.batch_size), dropout_rngs, update, clamps.count - reported,
        )
        reported = clamps.count
        curves.append(point)
        objective.append(point.J_estimate)
        update += 1
        if _converged(objective, config.convergence_window, config.convergence_tolerance):
            converged = True
            _logger.info("Converged after %d updates (J=%.4f)", update, point.J_estimate)
            break
    if not converged:
        _logger.info("Stopped after %d updates without converging", update)
    return TrainResult(controller=controller, curves=curves, converged=converged, updates=update)


# (batch, controller, network index, train-mode dropout generators or None) -> gradient of that slice
NetGradientFn = Callable[
    [Sequence[TrainingSample], Controller, int, Optional[Sequence[np.random.Generator]]], np.ndarray,
]

SCORE_TOLERANCE = 1e-6


class DecompositionReport(BaseModel):
    max_divergence: float  # over all updates, centralized server vs per-agent learners
    factorization_error: float  # joint backward pass vs concatenated per-network ones
    score_error: float  # concatenated per-network gradients vs finite differences, relative
    updates: int

    @property
    def factorized(self) -> bool:
        return self.factorization_error <= 1e-12 and self.score_error <= SCORE_TOLERANCE


def joint_score_gradient(
        samples: Sequence[TrainingSample],
        controller: Controller,
        mu: float,
        flipped_weight: bool = False,
        step: float = 1e-6,
) -> np.ndarray:
    """
    Central differences of the weighted joint log-likelihood of the batch over the
    whole parameter vector, eval mode, weights fixed by the batch returns. Uses
    forward passes only.
    """
    returns = [s.record.episodic_return for s in samples]
    mean = math.fsum(returns) / len(returns)
    weights = [gradient_weight(R, mean, mu, flipped_weight) for R in returns]

    def objective() -> float:
        terms = []
        for sample, weight in zip(samples, weights):
            for x, actions in zip(sample.inputs, sample.record.actions):
                distributions, _ = controller.forward(list(x))
                terms.extend(weight * math.log(float(d[a])) for d, a in zip(distributions, actions))
        return math.fsum(terms) / len(samples)

    return finite_difference_gradient(objective, controller.vector, step)


def decomposition_harness(
        config: TrainConfig,
        make_env: Callable[[], IEnvironment],
        updates: int,
        perturb_agent: Optional[int] = None,
        net_gradient: Optional[NetGradientFn] = None,
) -> DecompositionReport:
    """
    Run one distributed controller two ways from identical seeds: a single learner
    stepping the joint vector, and independent learners each stepping only its own
    network with `net_gradient`. Clipping is off in both. With `perturb_agent` that
    agent's action stream in the second run is reseeded, which makes the runs drift apart.

    The final minibatch is then checked twice: the joint backward pass against the
    concatenated per-network gradients, and those against finite differences of the
    joint log-likelihood.
    """
    if config.mode != ControllerKind.DISTRIBUTED:
        raise PolicyException("The decomposition check needs a distributed controller")
    risk = config.risk
    if net_gradient is None:
        def net_gradient(batch, controller, net, rngs):
            mode = Mode.EVAL if rngs is None else Mode.TRAIN
            return estimate_gradient(batch, controller, risk.mu, config.flipped_weight, mode, rngs, net=net)

    env_a, env_b = make_env(), make_env()
    server = build_controller(
        ControllerKind.DISTRIBUTED, env_a.action_sizes, config.history_length, np.random.default_rng(config.seed),
        config.dropout_lstm, config.dropout_dense, config.dense_units,
    )
    agents = server.copy()
    seed = config.seed
    n_agents, n_nets = server.n_agents, len(server.params)

    acts_a = [stream(seed, ACTION_STREAM, m) for m in range(n_agents)]
    acts_b = [stream(seed + (m == perturb_agent), ACTION_STREAM, m) for m in range(n_agents)]
    drop_a = [stream(seed, DROPOUT_STREAM, i) for i in range(n_nets)]
    drop_b = [stream(seed, DROPOUT_STREAM, i) for i in range(n_nets)]
    store_a = ReplayStore(stream(seed, REPLAY_STREAM, 0), config.replay_capacity)
    store_b = ReplayStore(stream(seed, REPLAY_STREAM, 0), config.replay_capacity)
    hist_a = server.new_history(config.rate_scale)
    hist_b = agents.new_history(config.rate_scale)
    env_a.reset()
    env_b.reset()

    divergence = 0.0
    batch = []
    for _ in range(updates):
        for _ in range(config.episodes_per_update):
            if env_a.episodic:
                env_a.reset()
                env_b.reset()
                hist_a = server.new_history(config.rate_scale)
                hist_b = agents.new_history(config.rate_scale)
            store_a.add(collect_episode(env_a, server, hist_a, risk.horizon, acts_a))
            store_b.add(collect_episode(env_b, agents, hist_b, risk.horizon, acts_b))

        batch = store_a.sample(config.batch_size)
        grad = estimate_gradient(batch, server, risk.mu, config.flipped_weight, Mode.TRAIN, drop_a)
        server.vector += config.learning_rate * grad

        batch_b = store_b.sample(config.batch_size)
        for net in range(n_nets):
            agents.params[net].vector += config.learning_rate * net_gradient(batch_b, agents, net, drop_b)
        divergence = max(divergence, float(np.max(np.abs(server.vector - agents.vector))))

    factorization, score = 0.0, 0.0
    if batch:
        split = np.concatenate([net_gradient(batch, server, net, None) for net in range(n_nets)])
        joint = estimate_gradient(batch, server, risk.mu, config.flipped_weight)
        reference = joint_score_gradient(batch, server, risk.mu, config.flipped_weight)
        factorization = float(np.max(np.abs(joint - split)))
        score = float(np.max(np.abs(reference - split))) / max(1.0, float(np.max(np.abs(reference))))
    _logger.info(
        "Decomposition check: divergence %.3g, factorization error %.3g, score error %.3g",
        divergence, factorization, score,
    )
    return DecompositionReport(
        max_divergence=divergence, factorization_error=factorization, score_error=score, updates=updates,
    )


class NashReport(BaseModel):
    value: float
    improvements: list[float]  # best unilateral gain per agent
    histories: list[int]  # own-history count per agent
    epsilon: float

    @property
    def max_improvement(self) -> float:
        return max(self.improvements)

    @property
    def is_equilibrium(self) -> bool:
        return self.max_improvement <= self.epsilon * max(abs(self.value), 1e-12)


def _onehot(n: int, a: int) -> np.ndarray:
    return np.eye(n)[a]


def nash_check(
        spec: ToyGameSpec,
        policy: PolicyFn,
        mu: float,
        history_length: int,
        rate_scale: float = 20.0,
        epsilon: float = 1e-3,
        max_deviations: int = 10 ** 5,
) -> NashReport:
    """
    Best unilateral deviation of each agent among deterministic maps from its own
    history (own actions and shared rates) to an action, everyone else held fixed.
    """
    def value(p: PolicyFn) -> float:
        return exact_objective(enumerate_trajectories(spec, p, history_length, rate_scale), mu)

    base = value(policy)
    improvements, counts = [], []
    for m, n in enumerate(spec.action_sizes):
        keys = set()

        def explore(history, m=m, n=n, keys=keys):
            keys.add(history.agent_window(m))
            distributions, extra = policy(history)
            distributions = list(distributions)
            distributions[m] = np.full(n, 1.0 / n)
            return distributions, extra

        value(explore)
        keys = sorted(keys)
        if n ** len(keys) > max_deviations:
            raise EnumerationBoundException(
                f"Agent {m} has {n}^{len(keys)} deterministic deviations, limit {max_deviations}"
            )
        best = -math.inf
        for choice in itertools.product(range(n), repeat=len(keys)):
            table = dict(zip(keys, choice))

            def deviate(history, m=m, n=n, table=table):
                distributions, extra = policy(history)
                distributions = list(distributions)
                distributions[m] = _onehot(n, table[history.agent_window(m)])
                return distributions, extra

            best = max(best, value(deviate))
        improvements.append(max(best - base, 0.0))
        counts.append(len(keys))
        _logger.info("Agent %d: %d own histories, best deviation gain %.3g", m, len(keys), improvements[-1])
    return NashReport(value=base, improvements=improvements, histories=counts, epsilon=epsilon)


def nash_check_controller(
        spec: ToyGameSpec, controller: Controller, mu: float, rate_scale: float = 20.0, epsilon: float = 1e-3,
) -> NashReport:
    return nash_check(spec, controller_policy(controller), mu, controller.history_length, rate_scale, epsilon)
