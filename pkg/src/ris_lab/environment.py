import logging
import math
from abc import ABC, abstractmethod
from typing import Optional, Sequence, Union

import numpy as np

from ris_lab.channel import (
    achievable_rate, beam_gain, cascaded_channel, channel_ap_to_ris, channel_ap_to_ue, channel_ris_to_ue,
)
from ris_lab.codebooks import wrap_phase
from ris_lab.errors import EnvironmentException
from ris_lab.grid import mobility_step, sample_position, segment_blocked
from ris_lab.models import ActionProfile, CascadedChannel, EnvState, Ray, Scenario

_logger = logging.getLogger(__name__)

Actions = Union[ActionProfile, Sequence[int]]


class IEnvironment(ABC):
    """
    Interface for a game the controllers play: one joint action in, one shared reward out.
    """
    # episodic games restart from their initial distribution before every rollout
    episodic: bool = False

    @property
    @abstractmethod
    def action_sizes(self) -> list[int]:
        """
        Head sizes in agent order: AP beams first, then one phase codebook per surface.
        """
        raise NotImplementedError

    @abstractmethod
    def reset(self):
        raise NotImplementedError

    @abstractmethod
    def step(self, actions: Actions) -> float:
        """
        Apply a joint action and return the reward in bits/s/Hz.
        """
        raise NotImplementedError


def _as_list(actions: Actions) -> list[int]:
    if isinstance(actions, ActionProfile):
        return actions.as_list()
    return [int(a) for a in actions]


def _angle(src: np.ndarray, dst: np.ndarray) -> float:
    d = dst - src
    return math.atan2(d[1], d[0])


def _distance(src: np.ndarray, dst: np.ndarray, floor: float) -> float:
    return max(float(np.linalg.norm(dst - src)), floor)


def draw_scattered_rays(rng: np.random.Generator, count: int, variance: float) -> list[Ray]:
    """
    NLoS rays: circularly symmetric gains, random angles, always on the NLoS exponent.
    """
    rays = []
    for _ in range(count):
        gain = complex(rng.normal(), rng.normal()) * math.sqrt(variance / 2)
        aod, aoa = rng.uniform(-math.pi, math.pi, size=2)
        el_d, el_a = rng.uniform(math.pi / 4, 3 * math.pi / 4, size=2)
        rays.append(Ray(gain=gain, aod=aod, aoa=aoa, aod_elevation=el_d, aoa_elevation=el_a, blocked=True))
    return rays


def static_blockage(scenario: Scenario, position: tuple[int, int]) -> list[bool]:
    """
    Geometric LoS blockage of the AP -> UE link and each RIS -> UE link.
    """
    obstacles = scenario.grid.obstacles
    return [segment_blocked(obstacles, scenario.grid.ap, position)] + [
        segment_blocked(obstacles, ris, position) for ris in scenario.grid.ris
    ]


def step_self_blockage(
        blocked: np.ndarray, p_block: float, p_unblock: float, rng: np.random.Generator,
) -> np.ndarray:
    """
    One transition of independent two-state Markov chains.
    """
    blocked = np.asarray(blocked, dtype=bool)
    u = rng.random(blocked.shape)
    return np.where(blocked, u >= p_unblock, u < p_block)


def blockage_step(state: EnvState, scenario: Scenario, rng: np.random.Generator) -> tuple[list[bool], list[bool]]:
    """
    Advance self-blockage and combine it with the static blockage at the state's position.
    Returns (self_blocked, los_blocked).
    """
    dynamics = scenario.dynamics
    self_blocked = step_self_blockage(np.array(state.self_blocked), dynamics.p_block, dynamics.p_unblock, rng)
    static = np.array(static_blockage(scenario, state.position))
    return self_blocked.tolist(), (static | self_blocked).tolist()


def initial_state(
        scenario: Scenario, rng: np.random.Generator, position: Optional[tuple[int, int]] = None,
) -> EnvState:
    """
    Episode reset: position, orientation, geometric blockage and the scattered rays.
    Scattered rays are drawn here once per episode and kept by env_step; only the LoS paths
    follow the UE from step to step.
    """
    if position is None:
        position = sample_position(scenario.grid, rng)
    elif not scenario.grid.is_free(position):
        raise EnvironmentException(f"Initial position {position} is not a free cell")
    orientation = float(rng.uniform(-math.pi, math.pi))
    channel = scenario.channel
    n_scatter = channel.n_rays - 1
    n_links = 1 + scenario.n_ris
    return EnvState(
        position=position,
        orientation=orientation,
        self_blocked=[False] * n_links,
        los_blocked=static_blockage(scenario, position),
        scatter_direct=draw_scattered_rays(rng, n_scatter, channel.scatter_variance),
        scatter_ap_ris=[draw_scattered_rays(rng, n_scatter, channel.scatter_variance) for _ in scenario.grid.ris],
        scatter_ris_ue=[draw_scattered_rays(rng, n_scatter, channel.scatter_variance) for _ in scenario.grid.ris],
    )


def _check_actions(scenario: Scenario, actions: list[int]):
    sizes = scenario.action_sizes
    if len(actions) != len(sizes):
        raise EnvironmentException(f"Expected {len(sizes)} actions, got {len(actions)}")
    for m, (a, n) in enumerate(zip(actions, sizes)):
        if not 0 <= a < n:
            raise EnvironmentException(f"Action {a} of agent {m} outside codebook of size {n}")


def _beamformed(rays: list[Ray], beam: float, n_ap: int) -> list[Ray]:
    return [r.copy(update={'gain': r.gain * beam_gain(beam, r.aod, n_ap)}) for r in rays]


def assemble_channel(scenario: Scenario, state: EnvState, actions: Actions) -> CascadedChannel:
    """
    Cascaded channel of the state under a joint action. The AP beam weighs every
    ray leaving the AP by its normalized array factor.
    """
    actions = _as_list(actions)
    _check_actions(scenario, actions)
    grid, geometry, channel = scenario.grid, scenario.geometry, scenario.channel
    floor = grid.cell_size / 2
    beam = scenario.beams.angles[actions[0]]
    ap, ue = grid.center(grid.ap), grid.center(state.position)

    los = Ray(
        gain=channel.los_gain, aod=_angle(ap, ue), aoa=wrap_phase(_angle(ue, ap) - state.orientation),
        blocked=state.los_blocked[0],
    )
    direct = channel_ap_to_ue(
        _beamformed([los, *state.scatter_direct], beam, geometry.n_ap),
        channel.profile(_distance(ap, ue, floor)),
        geometry,
    )
    per_ris = []
    for g, cell in enumerate(grid.ris):
        ris = grid.center(cell)
        incident = Ray(gain=channel.los_gain, aod=_angle(ap, ris), aoa=_angle(ris, ap))
        ap_ris = channel_ap_to_ris(
            _beamformed([incident, *state.scatter_ap_ris[g]], beam, geometry.n_ap),
            channel.profile(_distance(ap, ris, floor)),
            geometry,
        )
        reflected = Ray(
            gain=channel.los_gain, aod=_angle(ris, ue), aoa=wrap_phase(_angle(ue, ris) - state.orientation),
            blocked=state.los_blocked[g + 1],
        )
        ris_ue = channel_ris_to_ue(
            [reflected, *state.scatter_ris_ue[g]],
            channel.profile(_distance(ris, ue, floor)),
            geometry,
        )
        per_ris.append((ap_ris, scenario.phases.diagonal(actions[g + 1]), ris_ue))
    return cascaded_channel(direct, per_ris)


def compute_rate(scenario: Scenario, state: EnvState, actions: Actions) -> float:
    """
    Reward of a joint action in bits per second.
    """
    return achievable_rate(assemble_channel(scenario, state, actions), scenario.budget)


def env_step(
        scenario: Scenario,
        state: EnvState,
        actions: Actions,
        rng: np.random.Generator,
        next_position: Optional[tuple[int, int]] = None,
) -> tuple[float, EnvState]:
    """
    Reward of the current state, then the transition: move, jitter orientation, resample blockage.
    The scattered rays of the state are carried over unchanged.
    A replayed trajectory supplies next_position instead of the random walk.
    """
    reward = compute_rate(scenario, state, actions)
    if scenario.dynamics.frozen:
        return reward, state
    if next_position is None:
        next_position = mobility_step(scenario.grid, state.position, rng)
    jitter = scenario.dynamics.orientation_jitter
    orientation = float(wrap_phase(state.orientation + rng.uniform(-jitter, jitter)))
    moved = state.copy(update={'position': tuple(next_position), 'orientation': orientation})
    self_blocked, los_blocked = blockage_step(moved, scenario, rng)
    return reward, moved.copy(update={'self_blocked': self_blocked, 'los_blocked': los_blocked})


class IndoorEnvironment(IEnvironment):
    """
    The indoor game over a scenario, driven by the random walk or by replayed trajectories.
    """

    def __init__(self, scenario: Scenario, seed: int = 0, trajectories=None):
        self.scenario = scenario
        self._rng = np.random.default_rng(seed)
        self._trajectories = trajectories
        self._trajectory_ids = trajectories.trajectory_ids() if trajectories is not None else []
        self._trajectory = 0
        self._slot = 0
        self.state = None
        self.reset()

    @property
    def action_sizes(self) -> list[int]:
        return self.scenario.action_sizes

    def _replay_cells(self) -> list[tuple[int, int]]:
        return self._trajectories.cells(self._trajectory_ids[self._trajectory])

    def reset(self):
        position = None
        if self._trajectories is not None:
            self._slot = 0
            position = self._replay_cells()[0]
        self.state = initial_state(self.scenario, self._rng, position)

    def _next_position(self) -> Optional[tuple[int, int]]:
        if self._trajectories is None:
            return None
        cells = self._replay_cells()
        self._slot += 1
        if self._slot >= len(cells):
            self._trajectory = (self._trajectory + 1) % len(self._trajectory_ids)
            self._slot = 0
            cells = self._replay_cells()
        return cells[self._slot]

    def step(self, actions: Actions) -> float:
        reward, self.state = env_step(self.scenario, self.state, actions, self._rng, self._next_position())
        _logger.debug("Position %s, rate %.3f bit/s/Hz", self.state.position, reward)
        return reward / self.scenario.budget.bandwidth
