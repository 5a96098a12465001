import logging
import sys
from argparse import ArgumentParser
from pathlib import Path
from typing import Optional, Sequence

from pydantic import ValidationError

from ris_lab.config_parsers import ConfigFile, read_config
from ris_lab.errors import (
    ChannelException, ConfigException, DatasetException, DivergenceException, EnumerationBoundException,
    EnvironmentException, PolicyException, RepoException, RiskException,
)
from ris_lab.models import ControllerKind
from ris_lab.repo import DirectoryRunRepo
from ris_lab.settings import ExperimentSettings, Profile, load_settings
from ris_lab.steps import cmd_bench, cmd_compare, cmd_evaluate, cmd_generate, cmd_train, open_run

logging.basicConfig(level=logging.WARNING)
_logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog='ris-lab', description='RIS-assisted indoor mmWave control experiments.')
    parser.add_argument('command', choices=['generate', 'train', 'evaluate', 'compare', 'bench'])
    parser.add_argument('--profile', type=Profile, choices=list(Profile), default=Profile.DESK,
                        help='Parameter profile the config file and environment override.')
    parser.add_argument('--config', type=Path, help='Versioned key = value config file.')
    parser.add_argument('--seed', type=int, help='Experiment seed.')
    parser.add_argument('--out', type=Path, help='Output directory of the run.')
    parser.add_argument('--mode', type=ControllerKind, choices=list(ControllerKind),
                        help='Centralized or distributed controllers.')
    parser.add_argument('--checkpoint', type=Path,
                        help='Run directory holding mu_*/policy_*.ckpt (evaluate, compare); defaults to --out.')
    parser.add_argument('--verbose', action='store_true', help='Log progress at INFO level.')
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.INFO)
    try:
        config = read_config(args.config, ExperimentSettings.__fields__) if args.config else ConfigFile()
        overrides = {k: getattr(args, k) for k in ('seed', 'out', 'mode') if getattr(args, k) is not None}
        settings = load_settings(args.profile, config.values, config.lines, overrides)
        repo = open_run(settings)
        checkpoints = DirectoryRunRepo(args.checkpoint, '') if args.checkpoint else None
        if args.command == 'generate':
            cmd_generate(settings, repo)
        elif args.command == 'train':
            cmd_train(settings, repo)
        elif args.command == 'evaluate':
            cmd_evaluate(settings, repo, checkpoints)
        elif args.command == 'compare':
            cmd_compare(settings, repo, checkpoints)
        else:
            cmd_bench(settings, repo)
    except (
            ConfigException, ValidationError, EnumerationBoundException, ChannelException, EnvironmentException,
            RiskException,
    ) as e:
        _logger.error("Configuration error: %s", e)
        return EXIT_CONFIG
    except DivergenceException as e:
        _logger.error("Training diverged: %s", e)
        return EXIT_DIVERGENCE
    except (RepoException, DatasetException, PolicyException) as e:
        _logger.error("I/O error: %s", e)
        return EXIT_IO
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == '__main__':
    main()
