import itertools
import logging
import math
import time
from typing import Any, Callable, Optional, Sequence

import numpy as np
from pydantic import BaseModel

from ris_lab.controllers import Controller, build_controller
from ris_lab.environment import Actions, IEnvironment, compute_rate
from ris_lab.errors import EnumerationBoundException, PolicyException
from ris_lab.history import HistoryBuffer
from ris_lab.models import ControllerKind, EnvState, Scenario, ToyGameSpec
from ris_lab.risk import gradient_weight

_logger = logging.getLogger(__name__)

ENUMERATION_LIMIT = 10 ** 7
POLICY_LIMIT = 10 ** 6

# history -> (per-agent distributions, anything backward needs later)
PolicyFn = Callable[[HistoryBuffer], tuple[list[np.ndarray], Any]]


class ToyEnvironment(IEnvironment):
    """
    Episodic game over a reward table; the hidden state follows the transition table.
    """
    episodic = True

    def __init__(self, spec: ToyGameSpec, seed: int = 0):
        self.spec = spec
        self._rng = np.random.default_rng(seed)
        self.state = 0
        self.reset()

    @property
    def action_sizes(self) -> list[int]:
        return self.spec.action_sizes

    def reset(self):
        initial = self.spec.initial_distribution()
        self.state = int(self._rng.choice(len(initial), p=initial)) if len(initial) > 1 else 0

    def step(self, actions: Actions) -> float:
        actions = actions.as_list() if hasattr(actions, 'as_list') else list(actions)
        reward = self.spec.rewards[self.state][self.spec.joint_index(actions)]
        if not self.spec.frozen:
            row = self.spec.transitions[self.state]
            self.state = int(self._rng.choice(len(row), p=row))
        return reward


def build_toy_game(scenario: Scenario, state: EnvState, horizon: int) -> ToyGameSpec:
    """
    Freeze the indoor game at one state and tabulate the spectral efficiency of every joint action.
    """
    # itertools.product enumerates in mixed radix with the AP beam most significant
    rewards = [
        compute_rate(scenario, state, list(actions)) / scenario.budget.bandwidth
        for actions in itertools.product(*(range(n) for n in scenario.action_sizes))
    ]
    return ToyGameSpec(
        n_beams=scenario.beams.size, n_phases=scenario.phases.size, n_ris=scenario.n_ris,
        horizon=horizon, rewards=[rewards],
    )


def check_enumerable(spec: ToyGameSpec):
    if spec.enumeration_size > ENUMERATION_LIMIT:
        raise EnumerationBoundException(
            f"{spec.enumeration_size} trajectories exceed the enumeration limit of {ENUMERATION_LIMIT}"
        )


class Trajectory(BaseModel):
    probability: float
    episodic_return: float
    steps: tuple  # (policy extra, joint action) per slot


def controller_policy(controller: Controller) -> PolicyFn:
    def policy(history: HistoryBuffer):
        return controller.forward(controller.net_inputs(history))

    return policy


def _branches(spec: ToyGameSpec, weights: dict[int, float], joint: int, scale: float) -> dict[float, dict[int, float]]:
    """
    Split state weights by the reward the joint action observes, then move each state on.
    """
    groups: dict[float, dict[int, float]] = {}
    for s, w in weights.items():
        child = groups.setdefault(spec.rewards[s][joint], {})
        if spec.frozen:
            child[s] = child.get(s, 0.0) + w * scale
            continue
        for s2, p in enumerate(spec.transitions[s]):
            if p > 0:
                child[s2] = child.get(s2, 0.0) + w * scale * p
    return groups


def _initial_weights(spec: ToyGameSpec) -> dict[int, float]:
    return {s: p for s, p in enumerate(spec.initial_distribution()) if p > 0}


def enumerate_trajectories(
        spec: ToyGameSpec, policy: PolicyFn, history_length: int, rate_scale: float = 20.0,
) -> list[Trajectory]:
    """
    Every observable trajectory (joint actions and rates) with its probability under the policy.
    """
    check_enumerable(spec)
    out: list[Trajectory] = []

    def walk(history, weights, t, acc, steps):
        if t == spec.horizon:
            out.append(Trajectory(probability=math.fsum(weights.values()), episodic_return=acc, steps=tuple(steps)))
            return
        distributions, extra = policy(history)
        for j in range(spec.n_joint):
            actions = spec.joint_actions(j)
            p = math.prod(float(d[a]) for d, a in zip(distributions, actions))
            if p == 0:
                continue
            for r, child in _branches(spec, weights, j, p).items():
                h = history.copy()
                h.push(actions, r)
                walk(h, child, t + 1, acc + r, steps + [(extra, actions)])

    walk(HistoryBuffer(spec.action_sizes, history_length, rate_scale), _initial_weights(spec), 0, 0.0, [])
    return out


def exact_objective(trajectories: Sequence[Trajectory], mu: float) -> float:
    p = np.array([t.probability for t in trajectories])
    R = np.array([t.episodic_return for t in trajectories])
    mean = float(p @ R)
    return mean - mu / 2 * (float(p @ (R * R)) - mean * mean)


def enumerate_exact_J(spec: ToyGameSpec, controller: Controller, mu: float, rate_scale: float = 20.0) -> float:
    trajectories = enumerate_trajectories(spec, controller_policy(controller), controller.history_length, rate_scale)
    return exact_objective(trajectories, mu)


def exact_gradient(
        spec: ToyGameSpec, controller: Controller, mu: float, flipped_weight: bool = False, rate_scale: float = 20.0,
) -> np.ndarray:
    """
    Exact expectation of the weighted score-function estimator, batch mean replaced by the true mean.
    """
    trajectories = enumerate_trajectories(spec, controller_policy(controller), controller.history_length, rate_scale)
    mean = math.fsum(t.probability * t.episodic_return for t in trajectories)
    grad = np.zeros(controller.n_params)
    for t in trajectories:
        weight = t.probability * gradient_weight(t.episodic_return, mean, mu, flipped_weight)
        for caches, actions in t.steps:
            grad += controller.grad_log_prob(caches, actions, weight)
    return grad


def exact_ascent(
        spec: ToyGameSpec, controller: Controller, mu: float, learning_rate: float, steps: int, rate_scale: float = 20.0,
) -> list[float]:
    """
    Gradient ascent on the exact objective; returns J before every step and after the last.
    """
    values = [enumerate_exact_J(spec, controller, mu, rate_scale)]
    for _ in range(steps):
        controller.vector += learning_rate * exact_gradient(spec, controller, mu, rate_scale=rate_scale)
        values.append(enumerate_exact_J(spec, controller, mu, rate_scale))
    return values


def finite_difference_gradient(
        evaluate: Callable[[], float],
        params: np.ndarray,
        step: float,
        indices: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    Central differences of evaluate() w.r.t. params, perturbed in place and restored exactly.
    Coordinates outside `indices` are left at zero.
    """
    if step <= 0:
        raise ValueError(f"Finite-difference step must be positive, got {step}")
    grad = np.zeros(params.size)
    for i in range(params.size) if indices is None else indices:
        original = params[i]
        params[i] = original + step
        up = evaluate()
        params[i] = original - step
        down = evaluate()
        params[i] = original
        grad[i] = (up - down) / (2 * step)
    return grad


HistoryKey = tuple[tuple[tuple[int, ...], float], ...]


class OptimalPolicy:
    """
    Deterministic joint policy keyed by the observed history since reset.
    """

    def __init__(self, spec: ToyGameSpec, decisions: dict[HistoryKey, int], value: float):
        self.spec = spec
        self.decisions = decisions
        self.value = value

    def joint_action(self, history: HistoryBuffer) -> tuple[int, ...]:
        try:
            return self.spec.joint_actions(self.decisions[history.window()])
        except KeyError as e:
            raise PolicyException(f"History {history.window()} is not covered by the optimal policy") from e

    def distributions(self, history: HistoryBuffer) -> list[np.ndarray]:
        return [np.eye(n)[a] for n, a in zip(self.spec.action_sizes, self.joint_action(history))]

    def policy(self) -> PolicyFn:
        return lambda history: (self.distributions(history), None)

    @property
    def actions(self) -> list[tuple[int, ...]]:
        """
        Joint actions along the first branch; the whole policy for a frozen game.
        """
        sequence, key = [], ()
        while key in self.decisions:
            joint = self.decisions[key]
            sequence.append(self.spec.joint_actions(joint))
            key = next((k for k in self.decisions if len(k) == len(key) + 1 and k[:len(key)] == key), None)
        return sequence

    def histories(self, history_length: int, rate_scale: float = 20.0) -> list[HistoryBuffer]:
        buffers = []
        for key in self.decisions:
            h = HistoryBuffer(self.spec.action_sizes, history_length, rate_scale)
            for actions, rate in key:
                h.push(actions, rate)
            buffers.append(h)
        return buffers


def optimal_policy(spec: ToyGameSpec, mu: float) -> OptimalPolicy:
    """
    Exhaustive search over deterministic history-conditioned policies (open-loop sequences
    when the game is frozen). The first maximizer in lexicographic order wins.
    """
    check_enumerable(spec)
    counter = itertools.count(1)

    def candidates(weights, t, acc, trace):
        if t == spec.horizon:
            return [((), [(math.fsum(weights.values()), acc)])]
        result = []
        for j in range(spec.n_joint):
            actions = spec.joint_actions(j)
            options = [
                candidates(child, t + 1, acc + r, trace + ((actions, r),))
                for r, child in _branches(spec, weights, j, 1.0).items()
            ]
            for combo in itertools.product(*options):
                if next(counter) > POLICY_LIMIT:
                    raise EnumerationBoundException(f"More than {POLICY_LIMIT} deterministic policies")
                decisions = ((trace, j),) + tuple(d for c in combo for d in c[0])
                result.append((decisions, [o for c in combo for o in c[1]]))
        return result

    best_value, best = -math.inf, None
    for decisions, outcomes in candidates(_initial_weights(spec), 0, 0.0, ()):
        p = np.array([o[0] for o in outcomes])
        R = np.array([o[1] for o in outcomes])
        mean = float(p @ R)
        value = mean - mu / 2 * (float(p @ (R * R)) - mean * mean)
        if value > best_value + 1e-12:
            best_value, best = value, decisions
    _logger.info("Optimal value %.6f over %d-slot horizon", best_value, spec.horizon)
    return OptimalPolicy(spec, dict(best), best_value)


def policy_rmse(
        policy_a: Callable[[HistoryBuffer], list[np.ndarray]],
        policy_b: Callable[[HistoryBuffer], list[np.ndarray]],
        histories: Sequence[HistoryBuffer],
) -> float:
    """
    Root-mean-square difference of the two policies' probabilities over the histories, in percent.
    """
    deltas = []
    for history in histories:
        a, b = policy_a(history), policy_b(history)
        if len(a) != len(b) or any(x.shape != y.shape for x, y in zip(a, b)):
            raise PolicyException("Policies disagree on the action-space shape")
        deltas.extend(np.concatenate(a) - np.concatenate(b))
    if not deltas:
        return 0.0
    return 100.0 * float(np.sqrt(np.mean(np.square(deltas))))


class BenchRow(BaseModel):
    parameter: str
    value: int
    mode: str
    seconds: float
    macs: int


class BenchExponent(BaseModel):
    parameter: str
    mode: str
    measured: float
    macs: float
    claim: str


COMPLEXITY_CLAIMS = {
    ControllerKind.CENTRALIZED: 'O(H(H+MBT))',
    ControllerKind.DISTRIBUTED: 'O(H(H+MB+BT))',
}


def forward_macs(controller: Controller, decisions: int) -> int:
    """
    Multiply-accumulates of `decisions` consecutive forward passes.
    """
    total = 0
    for arch in controller.archs:
        n_in = arch.input_size
        for n in arch.lstm_sizes:
            total += arch.history_length * (n_in + n) * 4 * n
            n_in = n
        total += sum(a * b for a, b in arch.dense_sizes)
    return total * decisions


def _time_decisions(controller: Controller, decisions: int, repeats: int) -> float:
    inputs = controller.net_inputs(controller.new_history())
    best = math.inf
    for _ in range(repeats):
        start = time.perf_counter()
        for _ in range(decisions):
            controller.forward(inputs)
        best = min(best, time.perf_counter() - start)
    return best


def _slope(x: Sequence[float], y: Sequence[float]) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def complexity_bench(
        sweep: dict[str, Sequence[int]],
        base: Optional[dict[str, int]] = None,
        repeats: int = 3,
        seed: int = 0,
        measure: bool = True,
) -> tuple[list[BenchRow], list[BenchExponent]]:
    """
    Forward cost of T decisions for both controller kinds while one of H, M, B, T varies.
    """
    base = {'H': 8, 'M': 2, 'B': 4, 'T': 2, **(base or {})}
    rows, exponents = [], []
    for parameter, values in sweep.items():
        if parameter not in base:
            raise ValueError(f"Unknown sweep parameter {parameter}")
        for kind in ControllerKind:
            times, macs = [], []
            for value in values:
                point = {**base, parameter: value}
                controller = build_controller(
                    kind, [point['B']] * point['M'], point['H'], np.random.default_rng(seed),
                )
                seconds = _time_decisions(controller, point['T'], repeats) if measure else 0.0
                count = forward_macs(controller, point['T'])
                rows.append(BenchRow(parameter=parameter, value=int(value), mode=kind.value, seconds=seconds, macs=count))
                times.append(seconds)
                macs.append(count)
            measured = _slope(values, times) if measure and len(values) > 1 else math.nan
            mac_slope = _slope(values, macs) if len(values) > 1 else math.nan
            exponents.append(BenchExponent(
                parameter=parameter, mode=kind.value, measured=measured, macs=mac_slope, claim=COMPLEXITY_CLAIMS[kind],
            ))
            _logger.info("%s %s: measured exponent %.2f, MAC exponent %.2f", kind.value, parameter, measured, mac_slope)
    return rows, exponents
