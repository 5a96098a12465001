import math
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, confloat, conint, root_validator, validator

# tolerance for grid/bounds checks on stored radians
_ANGLE_TOL = 1e-9


class ArrayGeometry(BaseModel):
    n_ap: conint(ge=1)  # N_a, ULA
    n_ue: conint(ge=1)  # N_u, ULA
    ris_h: conint(ge=1)  # N_gh
    ris_v: conint(ge=1)  # N_gv

    @property
    def n_ris(self) -> int:
        return self.ris_h * self.ris_v


class Ray(BaseModel):
    """
    One propagation ray of a link. Elevations only matter at surface ends (UPA).
    """
    gain: complex
    aod: float
    aoa: float
    aod_elevation: float = math.pi / 2
    aoa_elevation: float = math.pi / 2
    blocked: bool = False

    class Config:
        arbitrary_types_allowed = True

    @validator('gain', pre=True)
    def _to_complex(cls, v):
        v = complex(v)
        if not (math.isfinite(v.real) and math.isfinite(v.imag)):
            raise ValueError('ray gain must be finite')
        return v


class PathGainProfile(BaseModel):
    distance: float  # meters, checked by path_gain
    carrier_freq: confloat(gt=0)
    exponent_los: confloat(gt=0) = 2.0
    exponent_nlos: confloat(gt=0) = 4.0


class LinkBudget(BaseModel):
    tx_power: confloat(gt=0)  # W
    bandwidth: confloat(gt=0)  # Hz
    noise_density: confloat(gt=0)  # W/Hz


class BeamCodebook(BaseModel):
    angles: list[float]

    @validator('angles')
    def _check_angles(cls, v):
        if len(v) < 2:
            raise ValueError('a beam codebook needs at least two angles')
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError('beam angles must be strictly increasing')
        if any(abs(a) > math.pi + _ANGLE_TOL for a in v):
            raise ValueError('beam angles must lie within [-pi, pi]')
        return v

    @property
    def size(self) -> int:
        return len(self.angles)


class PhaseCodebook(BaseModel):
    entries: list[list[float]]  # one row of N_g surface phases per entry
    quantization_step: confloat(gt=0)
    phase_range: tuple[float, float]
    directions: list[float] = []

    @root_validator(skip_on_failure=True)
    def _check_grid(cls, values):
        entries = values['entries']
        step = values['quantization_step']
        lo, hi = values['phase_range']
        if lo >= hi:
            raise ValueError('phase range must satisfy lo < hi')
        if not entries:
            raise ValueError('a phase codebook needs at least one entry')
        if len({len(e) for e in entries}) != 1:
            raise ValueError('all codebook entries must cover the same surface count')
        phases = np.asarray(entries, dtype=float)
        if np.any(phases < lo - _ANGLE_TOL) or np.any(phases > hi + _ANGLE_TOL):
            raise ValueError('codebook phases must lie within the phase range')
        k = (phases - lo) / step
        if np.any(np.abs(k - np.round(k)) > 1e-6):
            raise ValueError('codebook phases must sit on the quantization grid')
        return values

    @property
    def size(self) -> int:
        return len(self.entries)

    def diagonal(self, index: int) -> np.ndarray:
        """
        Unit-modulus diagonal of the phase matrix for one entry.
        """
        return np.exp(1j * np.asarray(self.entries[index], dtype=float))

    def matrix(self, index: int) -> np.ndarray:
        return np.diag(self.diagonal(index))


class CascadedChannel(BaseModel):
    h: np.ndarray  # N_a x N_u
    direct: np.ndarray
    reflected: list[np.ndarray] = []

    class Config:
        arbitrary_types_allowed = True


class ActionProfile(BaseModel):
    """
    Joint action, 0-based: AP beam index plus one codebook index per surface.
    """
    ap_beam: conint(ge=0)
    ris_phases: list[conint(ge=0)] = []

    def as_list(self) -> list[int]:
        return [self.ap_beam, *self.ris_phases]


class EpisodeRecord(BaseModel):
    actions: list[list[int]]  # T x M
    rates: list[float]  # T, bits/s/Hz
    log_probs: list[list[float]]  # T x M
    episodic_return: float

    @root_validator(skip_on_failure=True)
    def _check_lengths(cls, values):
        n = len(values['rates'])
        if n < 1 or len(values['actions']) != n or len(values['log_probs']) != n:
            raise ValueError('actions, rates and log-probabilities must cover the same slots')
        if not math.isclose(values['episodic_return'], math.fsum(values['rates']), rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError('episodic return must equal the sum of rates')
        return values

    @classmethod
    def from_steps(cls, actions, rates, log_probs) -> 'EpisodeRecord':
        return cls(
            actions=[list(a) for a in actions],
            rates=list(rates),
            log_probs=[list(lp) for lp in log_probs],
            episodic_return=math.fsum(rates),
        )

    @property
    def horizon(self) -> int:
        return len(self.rates)


class RiskConfig(BaseModel):
    mu: confloat(ge=0, lt=1) = 0.0
    horizon: conint(ge=1) = 2


class ControllerKind(str, Enum):
    CENTRALIZED = 'centralized'
    DISTRIBUTED = 'distributed'


class NetworkArchitecture(BaseModel):
    kind: ControllerKind
    history_length: conint(ge=4)
    head_sizes: list[conint(ge=1)]
    dropout_lstm: confloat(ge=0, lt=1) = 0.2
    dropout_dense: confloat(ge=0, lt=1) = 0.4
    dense_units: Optional[conint(ge=1)] = None

    @root_validator(skip_on_failure=True)
    def _check_shape(cls, values):
        if values['history_length'] % 4:
            raise ValueError('history length must be divisible by 4')
        if not values['head_sizes']:
            raise ValueError('at least one action head is required')
        if values['kind'] == ControllerKind.DISTRIBUTED and len(values['head_sizes']) != 1:
            raise ValueError('a distributed controller drives exactly one agent')
        return values

    @property
    def lstm_sizes(self) -> list[int]:
        h = self.history_length
        if self.kind == ControllerKind.CENTRALIZED:
            return [h, h // 2, h // 4]
        return [h, h // 4]

    @property
    def input_size(self) -> int:
        # one-hot blocks of the observed agents plus the normalized rate
        return sum(self.head_sizes) + 1

    @property
    def hidden_units(self) -> int:
        return self.dense_units or self.history_length

    @property
    def dense_sizes(self) -> list[tuple[int, int]]:
        d = self.hidden_units
        return [(self.lstm_sizes[-1], d), (d, d), (d, sum(self.head_sizes))]


class TrainConfig(BaseModel):
    mode: ControllerKind = ControllerKind.DISTRIBUTED
    mu: confloat(ge=0, lt=1) = 0.0
    horizon: conint(ge=1) = 2
    history_length: conint(ge=4) = 16
    learning_rate: confloat(ge=0) = 0.01
    batch_size: conint(ge=1) = 32
    offline_epochs: conint(ge=0) = 20
    max_updates: conint(ge=0) = 500
    episodes_per_update: conint(ge=1) = 1
    replay_capacity: Optional[conint(ge=1)] = None
    flipped_weight: bool = False
    convergence_window: conint(ge=1) = 50
    convergence_tolerance: confloat(ge=0) = 1e-3
    clip_norm: Optional[confloat(gt=0)] = 10.0
    divergence_limit: confloat(gt=0) = 1e6
    rate_scale: confloat(gt=0) = 20.0
    dropout_lstm: confloat(ge=0, lt=1) = 0.2
    dropout_dense: confloat(ge=0, lt=1) = 0.4
    dense_units: Optional[conint(ge=1)] = None
    seed: int = 0

    @root_validator(skip_on_failure=True)
    def _check_replay(cls, values):
        capacity = values.get('replay_capacity')
        if capacity is not None and capacity < values['batch_size']:
            raise ValueError('replay capacity must hold at least one minibatch')
        return values

    @property
    def risk(self) -> RiskConfig:
        return RiskConfig(mu=self.mu, horizon=self.horizon)


class CurvePoint(BaseModel):
    update: int
    J_estimate: float
    mean_rate: float
    rate_variance: float
    grad_norm: float
    clamps: int


class ToyGameSpec(BaseModel):
    """
    Enumerable game: rewards[state][joint action] with joint actions in
    mixed radix (AP beam most significant). No transitions means frozen.
    """
    n_beams: conint(ge=1)
    n_phases: conint(ge=1)
    n_ris: conint(ge=0)
    horizon: conint(ge=1)
    rewards: list[list[float]]
    transitions: Optional[list[list[float]]] = None
    initial: Optional[list[float]] = None

    @root_validator(skip_on_failure=True)
    def _check_tables(cls, values):
        n_joint = values['n_beams'] * values['n_phases'] ** values['n_ris']
        rewards = values['rewards']
        if not rewards or any(len(row) != n_joint for row in rewards):
            raise ValueError(f'every reward row must list {n_joint} joint actions')
        n_states = len(rewards)
        transitions = values.get('transitions')
        if transitions is not None:
            if len(transitions) != n_states or any(len(row) != n_states for row in transitions):
                raise ValueError('transition table must be square over the state set')
            if any(abs(math.fsum(row) - 1.0) > 1e-9 or min(row) < 0 for row in transitions):
                raise ValueError('transition rows must be probability vectors')
        elif n_states != 1:
            raise ValueError('a frozen game has exactly one state')
        initial = values.get('initial')
        if initial is not None and (len(initial) != n_states or abs(math.fsum(initial) - 1.0) > 1e-9):
            raise ValueError('initial distribution must cover the state set and sum to 1')
        return values

    @property
    def frozen(self) -> bool:
        return self.transitions is None

    @property
    def n_states(self) -> int:
        return len(self.rewards)

    @property
    def action_sizes(self) -> list[int]:
        return [self.n_beams] + [self.n_phases] * self.n_ris

    @property
    def n_joint(self) -> int:
        return self.n_beams * self.n_phases ** self.n_ris

    @property
    def enumeration_size(self) -> int:
        return self.n_beams ** self.horizon * self.n_phases ** (self.n_ris * self.horizon) * self.n_states

    def initial_distribution(self) -> list[float]:
        if self.initial is not None:
            return list(self.initial)
        return [1.0 / self.n_states] * self.n_states

    def joint_index(self, actions) -> int:
        index = 0
        for a, n in zip(actions, self.action_sizes):
            index = index * n + int(a)
        return index

    def joint_actions(self, index: int) -> tuple[int, ...]:
        actions = []
        for n in reversed(self.action_sizes):
            index, a = divmod(index, n)
            actions.append(a)
        return tuple(reversed(actions))


class OccupancyGrid(BaseModel):
    """
    Indoor floor plan. Arrays are indexed [y, x]; positions are (x, y) cells.
    """
    width: conint(ge=1)
    height: conint(ge=1)
    cell_size: confloat(gt=0) = 1.0
    obstacles: np.ndarray
    presence: np.ndarray  # normalized over free cells on construction
    ap: tuple[int, int]
    ris: list[tuple[int, int]] = []

    class Config:
        arbitrary_types_allowed = True

    @validator('obstacles', pre=True)
    def _to_mask(cls, v):
        return np.asarray(v, dtype=bool)

    @validator('presence', pre=True)
    def _to_weights(cls, v):
        return np.asarray(v, dtype=float)

    @root_validator(skip_on_failure=True)
    def _check_layout(cls, values):
        shape = (values['height'], values['width'])
        obstacles, presence = values['obstacles'], values['presence']
        if obstacles.shape != shape or presence.shape != shape:
            raise ValueError(f'obstacle mask and presence must both have shape {shape}')
        if np.any(presence < 0) or not np.all(np.isfinite(presence)):
            raise ValueError('presence weights must be finite and nonnegative')
        presence = np.where(obstacles, 0.0, presence)
        total = presence.sum()
        if total <= 0:
            raise ValueError('presence weights vanish on every free cell')
        values['presence'] = presence / total
        for name, cell in [('AP', values['ap'])] + [(f'RIS {g}', c) for g, c in enumerate(values['ris'])]:
            x, y = cell
            if not (0 <= x < shape[1] and 0 <= y < shape[0]):
                raise ValueError(f'{name} position {cell} lies outside the grid')
            if obstacles[y, x]:
                raise ValueError(f'{name} position {cell} sits on an obstacle')
        return values

    def is_free(self, cell: tuple[int, int]) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height and not self.obstacles[y, x]

    def center(self, cell: tuple[int, int]) -> np.ndarray:
        return (np.asarray(cell, dtype=float) + 0.5) * self.cell_size


class ChannelParams(BaseModel):
    carrier_freq: confloat(gt=0) = 73e9
    exponent_los: confloat(gt=0) = 2.0
    exponent_nlos: confloat(gt=0) = 4.0
    n_rays: conint(ge=1) = 3  # one LoS-capable ray plus scattered ones
    scatter_variance: confloat(ge=0) = 0.1
    los_gain: complex = 1.0

    class Config:
        arbitrary_types_allowed = True

    @validator('los_gain', pre=True)
    def _to_complex(cls, v):
        return complex(v)

    def profile(self, distance: float) -> PathGainProfile:
        return PathGainProfile(
            distance=distance,
            carrier_freq=self.carrier_freq,
            exponent_los=self.exponent_los,
            exponent_nlos=self.exponent_nlos,
        )


class DynamicsParams(BaseModel):
    p_block: confloat(ge=0, le=1) = 0.1
    p_unblock: confloat(ge=0, le=1) = 0.4
    orientation_jitter: confloat(ge=0) = math.pi / 12
    frozen: bool = False


class Scenario(BaseModel):
    grid: OccupancyGrid
    geometry: ArrayGeometry
    budget: LinkBudget
    beams: BeamCodebook
    phases: PhaseCodebook
    channel: ChannelParams = ChannelParams()
    dynamics: DynamicsParams = DynamicsParams()

    @root_validator(skip_on_failure=True)
    def _check_surfaces(cls, values):
        n_ris = values['geometry'].n_ris
        if len(values['phases'].entries[0]) != n_ris:
            raise ValueError(f'phase codebook entries must cover {n_ris} surface elements')
        return values

    @property
    def n_ris(self) -> int:
        return len(self.grid.ris)

    @property
    def action_sizes(self) -> list[int]:
        return [self.beams.size] + [self.phases.size] * self.n_ris


class EnvState(BaseModel):
    """
    Hidden state of the indoor game. Link order in the blockage lists is
    AP -> UE first, then RIS g -> UE.
    """
    position: tuple[int, int]
    orientation: float
    self_blocked: list[bool]
    los_blocked: list[bool]
    scatter_direct: list[Ray] = []
    scatter_ap_ris: list[list[Ray]] = []
    scatter_ris_ue: list[list[Ray]] = []
