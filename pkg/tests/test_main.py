from unittest.mock import patch

import pytest

from ris_lab.__main__ import EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO, EXIT_OK, build_parser, main, run
from ris_lab.errors import (
    ChannelException, DatasetException, DivergenceException, EnvironmentException, RiskException,
)
from ris_lab.models import ControllerKind
from ris_lab.settings import Profile


@pytest.fixture
def workdir(monkeypatch, tmp_path):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def _config(path, *lines):
    path.write_text("\n".join(["version = 1", *lines]) + "\n")
    return str(path)


def test_parser_defaults():
    args = build_parser().parse_args(['train'])
    assert args.profile == Profile.DESK
    assert args.config is None and args.seed is None and args.mode is None
    args = build_parser().parse_args(['compare', '--profile', 'toy', '--mode', 'centralized', '--seed', '3'])
    assert args.profile == Profile.TOY
    assert args.mode == ControllerKind.CENTRALIZED
    assert args.seed == 3


def test_unknown_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args(['deploy'])


def test_train_evaluate_compare(workdir):
    config = _config(workdir / 'toy.cfg', 'max_updates = 2', 'mu_values = 0', 'eval_episodes = 2', 'robustness_seeds = 1')
    common = ['--profile', 'toy', '--config', config, '--out', 'run']
    assert run(['train', *common]) == EXIT_OK
    assert (workdir / 'run' / 'mu_0' / 'policy_1.ckpt').is_file()
    assert run(['evaluate', *common, '--out', 'eval', '--checkpoint', 'run']) == EXIT_OK
    assert (workdir / 'eval' / 'episodes.csv').is_file()
    assert run(['compare', *common]) == EXIT_OK
    assert (workdir / 'run' / 'compare.csv').is_file()
    assert (workdir / 'run' / 'T_4' / 'policy_0.ckpt').is_file()
    assert (workdir / 'eval' / 'horizon_sweep.csv').is_file()
    assert (workdir / 'run' / 'compare_horizon.csv').is_file()


def test_generate(workdir):
    config = _config(workdir / 'gen.cfg', 'n_trajectories = 2', 'trajectory_length = 3')
    assert run(['generate', '--config', config, '--out', 'data', '--seed', '5']) == EXIT_OK
    assert (workdir / 'data' / 'trajectories.csv').read_text().startswith('# config_hash=')
    assert 'seed=5' in (workdir / 'data' / 'manifest.txt').read_text()


@pytest.mark.parametrize("lines", [['bogus = 1'], ['mu = 2'], ['scenario = missing.txt']])
def test_config_errors(workdir, lines):
    assert run(['train', '--config', _config(workdir / 'bad.cfg', *lines)]) == EXIT_CONFIG


def test_missing_config_file(workdir):
    assert run(['train', '--config', str(workdir / 'none.cfg')]) == EXIT_CONFIG


def test_divergence_exit_code(workdir):
    config = _config(workdir / 'div.cfg', 'max_updates = 2', 'mu_values = 0', 'divergence_limit = 1e-6')
    assert run(['train', '--profile', 'toy', '--config', config, '--out', 'run']) == EXIT_DIVERGENCE


def test_corrupt_checkpoint_exit_code(workdir):
    (workdir / 'run' / 'mu_0').mkdir(parents=True)
    (workdir / 'run' / 'mu_0' / 'policy_0.ckpt').write_bytes(b'not a checkpoint')
    config = _config(workdir / 'eval.cfg', 'mu_values = 0')
    assert run(['evaluate', '--profile', 'toy', '--config', config, '--out', 'run']) == EXIT_IO


def test_unwritable_output_exit_code(workdir):
    (workdir / 'taken').write_text('')
    config = _config(workdir / 'gen.cfg', 'n_trajectories = 1', 'trajectory_length = 2')
    assert run(['generate', '--config', config, '--out', 'taken']) == EXIT_IO


def test_main_exits_with_run_code():
    with patch("ris_lab.__main__.run", return_value=EXIT_DIVERGENCE):
        with pytest.raises(SystemExit) as e:
            main()
    assert e.value.code == EXIT_DIVERGENCE


@pytest.mark.parametrize("error,code", [
    (ChannelException("antenna count"), EXIT_CONFIG),
    (EnvironmentException("action outside codebook"), EXIT_CONFIG),
    (RiskException("mu"), EXIT_CONFIG),
    (DivergenceException("blow-up"), EXIT_DIVERGENCE),
    (DatasetException("schema"), EXIT_IO),
])
def test_errors_map_to_exit_codes(workdir, error, code):
    with patch("ris_lab.__main__.cmd_train", side_effect=error):
        assert run(['train', '--out', 'run']) == code
