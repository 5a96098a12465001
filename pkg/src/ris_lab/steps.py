import hashlib
import logging
import statistics
from typing import Optional

import numpy as np
import pandas as pd

from ris_lab.channel import dbm_to_watts
from ris_lab.checkpoints import decode_checkpoint, encode_checkpoint
from ris_lab.codebooks import build_beam_codebook, build_phase_codebook, default_directions
from ris_lab.config_parsers import read_scenario
from ris_lab.controllers import Controller, build_controller
from ris_lab.datasets import TRAJECTORY_COLUMNS, TrajectoryTable, generate_trajectories, ingest_dataset
from ris_lab.environment import IEnvironment, IndoorEnvironment, initial_state
from ris_lab.errors import ConfigException, PolicyException
from ris_lab.grid import add_random_obstacles, default_grid, robustness_grid
from ris_lab.models import (
    ArrayGeometry, ChannelParams, DynamicsParams, LinkBudget, OccupancyGrid, Scenario, ToyGameSpec,
)
from ris_lab.oracle import (
    ToyEnvironment, build_toy_game, complexity_bench, enumerate_exact_J, optimal_policy, policy_rmse,
)
from ris_lab.output import (
    COMPARE_PLOTS, EVALUATION_PLOTS, format_bench_exponent, format_comparison, format_evaluation,
    format_generated, format_train_result, gnuplot_script,
)
from ris_lab.repo import DirectoryRunRepo, IRunRepo, config_hash, manifest_line
from ris_lab.settings import ExperimentSettings, Game
from ris_lab.trainer import TrainResult, TrainingSample, collect_episode, seed_dataset, stream, train

_logger = logging.getLogger(__name__)

CONTROLLER_STREAM = 3
EVALUATION_STREAM = 4
ROBUSTNESS_STREAM = 5

CURVE_COLUMNS = ['update', 'J_estimate', 'mean_rate', 'rate_variance', 'grad_norm', 'clamps']
EPISODE_COLUMNS = ['mu', 'episode', 'R_T', 'mean_rate']
VARIANCE_COLUMNS = ['mu', 'mean_R_T', 'variance_R_T', 'variance_reduction_pct']
HISTOGRAM_COLUMNS = ['mu', 'agent', 'action', 'setting', 'count']
ROBUSTNESS_COLUMNS = ['obstacles', 'seed', 'mean_rate', 'deviation_pct']
COMPARE_COLUMNS = ['mu', 'J_policy', 'J_optimal', 'gap_pct', 'rmse_pct']
HORIZON_COLUMNS = ['T', 'mean_R_T', 'variance_R_T', 'mean_rate']
HORIZON_COMPARE_COLUMNS = ['T', 'J_policy', 'J_optimal', 'gap_pct', 'rmse_pct']
BENCH_COLUMNS = ['parameter', 'value', 'mode', 'seconds', 'macs']
EXPONENT_COLUMNS = ['parameter', 'mode', 'measured', 'macs', 'claim']


def open_run(settings: ExperimentSettings) -> DirectoryRunRepo:
    return DirectoryRunRepo(settings.out, manifest_line(config_hash(settings.dict()), settings.seed))


def _with_surfaces(grid: OccupancyGrid, surfaces: Optional[int]) -> OccupancyGrid:
    if surfaces is None:
        return grid
    if surfaces > len(grid.ris):
        raise ConfigException(f"surfaces = {surfaces}, but the grid holds {len(grid.ris)}")
    return grid.copy(update={'ris': grid.ris[:surfaces]})


def build_scenario(settings: ExperimentSettings, grid: Optional[OccupancyGrid] = None) -> Scenario:
    if grid is None:
        grid = read_scenario(settings.scenario) if settings.scenario is not None else default_grid()
    grid = _with_surfaces(grid, settings.surfaces)
    geometry = ArrayGeometry(n_ap=settings.n_ap, n_ue=settings.n_ue, ris_h=settings.ris_h, ris_v=settings.ris_v)
    return Scenario(
        grid=grid,
        geometry=geometry,
        budget=LinkBudget(
            tx_power=dbm_to_watts(settings.tx_power_dbm),
            bandwidth=settings.bandwidth,
            noise_density=dbm_to_watts(settings.noise_dbm_hz),
        ),
        beams=build_beam_codebook(settings.n_beams, settings.beam_min, settings.beam_max),
        phases=build_phase_codebook(
            geometry, settings.phase_step, (settings.phase_min, settings.phase_max),
            default_directions(settings.n_phases),
        ),
        channel=ChannelParams(
            carrier_freq=settings.carrier_freq,
            exponent_los=settings.exponent_los,
            exponent_nlos=settings.exponent_nlos,
            n_rays=settings.n_rays,
            scatter_variance=settings.scatter_variance,
        ),
        dynamics=DynamicsParams(
            p_block=settings.p_block,
            p_unblock=settings.p_unblock,
            orientation_jitter=settings.orientation_jitter,
            frozen=settings.frozen,
        ),
    )


def build_toy_spec(settings: ExperimentSettings, scenario: Scenario) -> ToyGameSpec:
    """
    The indoor game frozen at the seed's initial state.
    """
    state = initial_state(scenario, np.random.default_rng(settings.seed))
    return build_toy_game(scenario, state, settings.horizon)


def build_environment(
        settings: ExperimentSettings,
        scenario: Scenario,
        seed: int,
        trajectories: Optional[TrajectoryTable] = None,
) -> IEnvironment:
    if settings.game == Game.TOY:
        return ToyEnvironment(build_toy_spec(settings, scenario), seed)
    return IndoorEnvironment(scenario, seed, trajectories)


def run_dir(mu: float) -> str:
    return f"mu_{mu:g}"


def horizon_dir(horizon: int) -> str:
    return f"T_{horizon}"


def at_horizon(settings: ExperimentSettings, horizon: int) -> ExperimentSettings:
    return settings.copy(update={'horizon': horizon})


def save_controller(repo: IRunRepo, directory: str, controller: Controller, seed: int):
    for i, params in enumerate(controller.params):
        repo.write_bytes(f"{directory}/policy_{i}.ckpt", encode_checkpoint(params, seed, repo.manifest))


def load_controller(repo: IRunRepo, directory: str, settings: ExperimentSettings, scenario: Scenario) -> Controller:
    names = repo.list(f"{directory}/policy_*.ckpt")
    if not names:
        raise ConfigException(f"No checkpoints under {repo.path(directory)}")
    names.sort(key=lambda n: int(n.rsplit('_', 1)[1].split('.')[0]))
    params = [decode_checkpoint(repo.read_bytes(n))[0] for n in names]
    try:
        controller = Controller(params[0].arch.kind, params)
    except PolicyException as e:
        raise ConfigException(f"Checkpoints under {directory} do not form a controller: {e}") from e
    if controller.action_sizes != scenario.action_sizes or controller.history_length != settings.history_length:
        raise ConfigException(
            f"Checkpoint architecture (heads {controller.action_sizes}, H={controller.history_length}) does not "
            f"match the config (heads {scenario.action_sizes}, H={settings.history_length})"
        )
    return controller


def grid_hash(grid: OccupancyGrid) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(grid.obstacles, dtype=np.uint8).tobytes())
    h.update(np.ascontiguousarray(grid.presence, dtype='<f8').tobytes())
    h.update(repr((grid.width, grid.height, grid.cell_size, grid.ap, grid.ris)).encode('utf-8'))
    return h.hexdigest()[:16]


def cmd_generate(settings: ExperimentSettings, repo: IRunRepo):
    """
    Random-walk trajectories over the scenario grid, written as traj_id,t,x,y.
    """
    scenario = build_scenario(settings)
    frame = generate_trajectories(
        scenario.grid, settings.n_trajectories, settings.trajectory_length, np.random.default_rng(settings.seed),
    )
    repo.write_table('trajectories.csv', frame[TRAJECTORY_COLUMNS])
    digest = config_hash(settings.dict())
    repo.write_text(
        'manifest.txt',
        f"{manifest_line(digest, settings.seed)}\ngrid_hash={grid_hash(scenario.grid)}\n",
    )
    _logger.info("Generated %d trajectories of %d slots", settings.n_trajectories, settings.trajectory_length)
    print(format_generated(str(repo.path('trajectories.csv')), settings.n_trajectories, len(frame)))


def curves_frame(result: TrainResult) -> pd.DataFrame:
    return pd.DataFrame([p.dict() for p in result.curves], columns=CURVE_COLUMNS)


def _train_into(
        settings: ExperimentSettings,
        repo: IRunRepo,
        directory: str,
        scenario: Scenario,
        trajectories: Optional[TrajectoryTable],
        mu: float,
) -> TrainResult:
    config = settings.train_config(mu=mu)
    env = build_environment(settings, scenario, settings.seed, trajectories)
    controller = build_controller(
        config.mode, env.action_sizes, config.history_length, stream(settings.seed, CONTROLLER_STREAM),
        config.dropout_lstm, config.dropout_dense, config.dense_units,
    )
    dataset = seed_dataset(env, controller, config, settings.offline_samples) if settings.offline_samples else None
    _logger.info("Training %s controller with mu=%g, T=%d", config.mode.value, mu, config.horizon)
    result = train(config, env, controller, dataset)
    repo.write_table(f"{directory}/curves.csv", curves_frame(result))
    save_controller(repo, directory, result.controller, settings.seed)
    return result


def cmd_train(settings: ExperimentSettings, repo: IRunRepo) -> dict[float, TrainResult]:
    """
    Train one controller per mu in the sweep into mu_<mu>/, then one per horizon
    in horizon_values (at the configured mu) into T_<T>/.
    """
    scenario = build_scenario(settings)
    trajectories = ingest_dataset(settings.dataset, scenario.grid) if settings.dataset is not None else None
    results = {}
    for mu in settings.mu_values:
        results[mu] = _train_into(settings, repo, run_dir(mu), scenario, trajectories, mu)
        print(format_train_result(f"mu={mu:g}", results[mu]))
    for horizon in settings.horizon_values:
        result = _train_into(
            at_horizon(settings, horizon), repo, horizon_dir(horizon), scenario, trajectories, settings.mu,
        )
        print(format_train_result(f"T={horizon}", result))
    return results


def rollout(
        env: IEnvironment, controller: Controller, settings: ExperimentSettings, episodes: int, seed: int,
) -> list[TrainingSample]:
    """
    Consecutive horizon-long episodes of the eval-mode policy.
    """
    rngs = [stream(seed, EVALUATION_STREAM, m) for m in range(controller.n_agents)]
    history = controller.new_history(settings.rate_scale)
    env.reset()
    samples = []
    for _ in range(episodes):
        if env.episodic:
            env.reset()
            history = controller.new_history(settings.rate_scale)
        samples.append(collect_episode(env, controller, history, settings.horizon, rngs))
    return samples


def _settings_of(scenario: Scenario, agent: int) -> list[float]:
    if agent == 0:
        return scenario.beams.angles
    if scenario.phases.directions:
        return scenario.phases.directions
    return [float(i) for i in range(scenario.phases.size)]


def action_histogram(mu: float, samples: list[TrainingSample], scenario: Scenario) -> list[dict]:
    rows = []
    sizes = scenario.action_sizes
    for agent, n in enumerate(sizes):
        counts = np.zeros(n, dtype=int)
        for s in samples:
            for actions in s.record.actions:
                counts[actions[agent]] += 1
        values = _settings_of(scenario, agent)
        rows.extend(
            {'mu': mu, 'agent': agent, 'action': a, 'setting': values[a], 'count': int(counts[a])} for a in range(n)
        )
    return rows


def robustness_rows(
        settings: ExperimentSettings, scenario: Scenario, controller: Controller,
) -> list[dict]:
    """
    Mean rate on the 12 x 12 grid with random 3 x 3 obstacles, against the same seed without them.
    """
    rows = []
    if settings.eval_episodes == 0:
        return rows
    base = _with_surfaces(robustness_grid(), len(scenario.grid.ris))
    for seed in range(settings.robustness_seeds):

        def mean_rate(count: int) -> float:
            grid = add_random_obstacles(base, count, stream(settings.seed, ROBUSTNESS_STREAM, seed)) if count else base
            env = IndoorEnvironment(scenario.copy(update={'grid': grid}), settings.seed + seed)
            samples = rollout(env, controller, settings, settings.eval_episodes, settings.seed + seed)
            return statistics.fmean(r for s in samples for r in s.record.rates)

        reference = mean_rate(0)
        for count in settings.obstacle_counts:
            value = reference if count == 0 else mean_rate(count)
            deviation = abs(value - reference) / reference * 100 if reference > 0 else 0.0
            rows.append({'obstacles': count, 'seed': seed, 'mean_rate': value, 'deviation_pct': deviation})
    return rows


def horizon_rows(settings: ExperimentSettings, scenario: Scenario, checkpoints: IRunRepo) -> list[dict]:
    """
    Return statistics of the T_<T> controllers, each rolled out at its own horizon.
    """
    rows = []
    for horizon in settings.horizon_values:
        at_t = at_horizon(settings, horizon)
        controller = load_controller(checkpoints, horizon_dir(horizon), at_t, scenario)
        env = build_environment(at_t, scenario, settings.seed)
        returns = [
            s.record.episodic_return for s in rollout(env, controller, at_t, settings.eval_episodes, settings.seed)
        ]
        if not returns:
            continue
        mean = statistics.fmean(returns)
        rows.append({
            'T': horizon, 'mean_R_T': mean, 'variance_R_T': statistics.pvariance(returns), 'mean_rate': mean / horizon,
        })
        print(format_evaluation(f"T={horizon}", mean, rows[-1]['variance_R_T'], len(returns)))
    return rows


def cmd_evaluate(settings: ExperimentSettings, repo: IRunRepo, checkpoints: Optional[IRunRepo] = None):
    """
    Roll out every trained controller of the mu and horizon sweeps and write the plot data.
    """
    checkpoints = checkpoints or repo
    scenario = build_scenario(settings)
    episodes, variances, histogram, robustness = [], [], [], []
    reference_variance = None
    for i, mu in enumerate(settings.mu_values):
        controller = load_controller(checkpoints, run_dir(mu), settings, scenario)
        env = build_environment(settings, scenario, settings.seed)
        samples = rollout(env, controller, settings, settings.eval_episodes, settings.seed)
        returns = [s.record.episodic_return for s in samples]
        episodes.extend(
            {'mu': mu, 'episode': e, 'R_T': R, 'mean_rate': R / settings.horizon} for e, R in enumerate(returns)
        )
        histogram.extend(action_histogram(mu, samples, scenario))
        if returns:
            mean, variance = statistics.fmean(returns), statistics.pvariance(returns)
            if reference_variance is None:
                reference_variance = variance
            reduction = (1 - variance / reference_variance) * 100 if reference_variance > 0 else 0.0
            variances.append({'mu': mu, 'mean_R_T': mean, 'variance_R_T': variance, 'variance_reduction_pct': reduction})
            print(format_evaluation(f"mu={mu:g}", mean, variance, len(returns)))
        if i == 0:
            robustness = robustness_rows(settings, scenario, controller)

    repo.write_table('episodes.csv', pd.DataFrame(episodes, columns=EPISODE_COLUMNS))
    repo.write_table('risk_variance.csv', pd.DataFrame(variances, columns=VARIANCE_COLUMNS))
    repo.write_table('policy_histogram.csv', pd.DataFrame(histogram, columns=HISTOGRAM_COLUMNS))
    repo.write_table('robustness.csv', pd.DataFrame(robustness, columns=ROBUSTNESS_COLUMNS))
    sweep = horizon_rows(settings, scenario, checkpoints)
    repo.write_table('horizon_sweep.csv', pd.DataFrame(sweep, columns=HORIZON_COLUMNS))
    for name, args in EVALUATION_PLOTS.items():
        repo.write_script(name, gnuplot_script(*args))


def compare_row(settings: ExperimentSettings, spec: ToyGameSpec, controller: Controller, mu: float) -> dict:
    optimum = optimal_policy(spec, mu)
    value = enumerate_exact_J(spec, controller, mu, settings.rate_scale)
    gap = (optimum.value - value) / abs(optimum.value) * 100 if optimum.value else 0.0
    rmse = policy_rmse(
        controller.distributions, optimum.distributions,
        optimum.histories(controller.history_length, settings.rate_scale),
    )
    return {'mu': mu, 'J_policy': value, 'J_optimal': optimum.value, 'gap_pct': gap, 'rmse_pct': rmse}


def cmd_compare(settings: ExperimentSettings, repo: IRunRepo, checkpoints: Optional[IRunRepo] = None):
    """
    Trained policies against the brute-force optimum of the frozen toy game, per mu
    and per horizon of the horizon sweep.
    """
    checkpoints = checkpoints or repo
    if max([settings.horizon, *settings.horizon_values]) > settings.history_length:
        raise ConfigException("Comparison needs history_length >= horizon")
    scenario = build_scenario(settings)
    spec = build_toy_spec(settings, scenario)
    rows = []
    for mu in settings.mu_values:
        controller = load_controller(checkpoints, run_dir(mu), settings, scenario)
        row = compare_row(settings, spec, controller, mu)
        rows.append(row)
        print(format_comparison(f"mu={mu:g}", row['J_policy'], row['J_optimal'], row['gap_pct'], row['rmse_pct']))
    repo.write_table('compare.csv', pd.DataFrame(rows, columns=COMPARE_COLUMNS))

    rows = []
    for horizon in settings.horizon_values:
        at_t = at_horizon(settings, horizon)
        controller = load_controller(checkpoints, horizon_dir(horizon), at_t, scenario)
        row = compare_row(at_t, build_toy_spec(at_t, scenario), controller, settings.mu)
        rows.append({'T': horizon, **row})
        print(format_comparison(f"T={horizon}", row['J_policy'], row['J_optimal'], row['gap_pct'], row['rmse_pct']))
    repo.write_table('compare_horizon.csv', pd.DataFrame(rows, columns=HORIZON_COMPARE_COLUMNS))
    for name, args in COMPARE_PLOTS.items():
        repo.write_script(name, gnuplot_script(*args))


def cmd_bench(settings: ExperimentSettings, repo: IRunRepo):
    sweep = {
        'H': settings.bench_history, 'M': settings.bench_agents,
        'B': settings.bench_beams, 'T': settings.bench_horizon,
    }
    rows, exponents = complexity_bench(sweep, repeats=settings.bench_repeats, seed=settings.seed)
    repo.write_table('bench.csv', pd.DataFrame([r.dict() for r in rows], columns=BENCH_COLUMNS))
    repo.write_table('bench_exponents.csv', pd.DataFrame([e.dict() for e in exponents], columns=EXPONENT_COLUMNS))
    for e in exponents:
        print(format_bench_exponent(e))
