import math
from enum import Enum
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseSettings, ValidationError, confloat, conint, root_validator

from ris_lab.errors import ConfigException
from ris_lab.models import ControllerKind, TrainConfig


class Profile(str, Enum):
    DESK = 'desk'
    FULL = 'full'
    TOY = 'toy'


class Game(str, Enum):
    INDOOR = 'indoor'
    TOY = 'toy'  # indoor scenario frozen at one state and tabulated


class ExperimentSettings(BaseSettings):
    """
    Every knob of an experiment. Defaults are the desk profile.
    """
    # scenario
    scenario: Optional[Path] = None
    surfaces: Optional[conint(ge=0)] = None  # keep only the first N surfaces of the grid
    game: Game = Game.INDOOR
    carrier_freq: confloat(gt=0) = 73e9
    bandwidth: confloat(gt=0) = 1e9
    tx_power_dbm: float = 46.0
    noise_dbm_hz: float = -88.0
    n_ap: conint(ge=1) = 8
    n_ue: conint(ge=1) = 4
    ris_h: conint(ge=1) = 4
    ris_v: conint(ge=1) = 4
    n_rays: conint(ge=1) = 3
    exponent_los: confloat(gt=0) = 2.0
    exponent_nlos: confloat(gt=0) = 4.0
    scatter_variance: confloat(ge=0) = 0.1
    p_block: confloat(ge=0, le=1) = 0.1
    p_unblock: confloat(ge=0, le=1) = 0.4
    orientation_jitter: confloat(ge=0) = math.pi / 12
    frozen: bool = False

    # codebooks
    n_beams: conint(ge=2) = 8
    beam_min: float = -math.pi
    beam_max: float = math.pi
    n_phases: conint(ge=1) = 11
    phase_step: confloat(gt=0) = math.pi / 5
    phase_min: float = -math.pi / 2
    phase_max: float = math.pi / 2

    # datasets
    dataset: Optional[Path] = None
    n_trajectories: conint(ge=1) = 40
    trajectory_length: conint(ge=1) = 56
    offline_samples: conint(ge=0) = 64

    # training
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

    # sweeps and evaluation
    mu_values: list[confloat(ge=0, lt=1)] = [0.0, 0.8]
    horizon_values: list[conint(ge=1)] = [1, 2, 3, 4]
    obstacle_counts: list[conint(ge=0)] = [0, 1, 2, 3]
    eval_episodes: conint(ge=0) = 50
    robustness_seeds: conint(ge=1) = 5
    bench_history: list[conint(ge=4)] = [4, 8, 16]
    bench_agents: list[conint(ge=1)] = [1, 2, 4]
    bench_beams: list[conint(ge=1)] = [2, 4, 8]
    bench_horizon: list[conint(ge=1)] = [1, 2, 4]
    bench_repeats: conint(ge=1) = 3

    out: Path = Path('runs')
    seed: int = 0

    class Config:
        env_prefix = 'ris_'
        env_file = '.env'
        case_sensitive = False
        extra = 'forbid'

        @classmethod
        def customise_sources(cls, init_settings, env_settings, file_secret_settings):
            return init_settings, env_settings, file_secret_settings

    @root_validator(skip_on_failure=True)
    def _check_ranges(cls, values):
        if values['beam_min'] >= values['beam_max']:
            raise ValueError('beam_min must be below beam_max')
        if values['phase_min'] >= values['phase_max']:
            raise ValueError('phase_min must be below phase_max')
        capacity = values.get('replay_capacity')
        if capacity is not None and capacity < values['batch_size']:
            raise ValueError('replay_capacity must hold at least one minibatch')
        for key in ('scenario', 'dataset'):
            path = values.get(key)
            if path is not None and not path.is_file():
                raise ValueError(f'{key} file {path} does not exist')
        return values

    def train_config(self, mu: Optional[float] = None, horizon: Optional[int] = None) -> TrainConfig:
        return TrainConfig(
            mode=self.mode,
            mu=self.mu if mu is None else mu,
            horizon=self.horizon if horizon is None else horizon,
            history_length=self.history_length,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            offline_epochs=self.offline_epochs,
            max_updates=self.max_updates,
            episodes_per_update=self.episodes_per_update,
            replay_capacity=self.replay_capacity,
            flipped_weight=self.flipped_weight,
            convergence_window=self.convergence_window,
            convergence_tolerance=self.convergence_tolerance,
            clip_norm=self.clip_norm,
            divergence_limit=self.divergence_limit,
            rate_scale=self.rate_scale,
            dropout_lstm=self.dropout_lstm,
            dropout_dense=self.dropout_dense,
            dense_units=self.dense_units,
            seed=self.seed,
        )


PROFILES: dict[Profile, dict[str, Any]] = {
    Profile.DESK: {},
    Profile.FULL: {
        'n_ap': 128, 'n_ue': 64, 'ris_h': 8, 'ris_v': 8,
        'history_length': 32, 'horizon': 2,
    },
    Profile.TOY: {
        'game': Game.TOY, 'surfaces': 1, 'frozen': True,
        'n_ap': 2, 'n_ue': 1, 'ris_h': 1, 'ris_v': 2,
        'n_beams': 2, 'beam_min': 0.0, 'beam_max': math.pi / 2, 'n_phases': 2,
        'history_length': 4, 'horizon': 2,
        'dropout_lstm': 0.0, 'dropout_dense': 0.0,
        'learning_rate': 0.3, 'episodes_per_update': 16, 'max_updates': 400,
        'offline_samples': 0, 'clip_norm': None,
    },
}


def load_settings(
        profile: Profile = Profile.DESK,
        file_values: Optional[dict[str, Any]] = None,
        file_lines: Optional[dict[str, int]] = None,
        overrides: Optional[dict[str, Any]] = None,
) -> ExperimentSettings:
    """
    Resolve settings: command-line overrides, then the config file, then the
    environment (RIS_*), then profile defaults.
    """
    file_values = file_values or {}
    try:
        from_env = ExperimentSettings()
    except ValidationError as e:
        raise ConfigException(f"Invalid environment settings: {e}") from e
    env_values = {k: getattr(from_env, k) for k in from_env.__fields_set__}
    values = {**PROFILES[Profile(profile)], **env_values, **file_values, **(overrides or {})}
    try:
        return ExperimentSettings(**values)
    except ValidationError as e:
        error = e.errors()[0]
        key = str(error['loc'][0]) if error['loc'] else None
        line = (file_lines or {}).get(key) if key in file_values else None
        raise ConfigException(f"{key}: {error['msg']}" if key else error['msg'], line) from e
