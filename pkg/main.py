"""
Точка входа CLI ActiveGAN: train | generate | evaluate | sweep
"""
import argparse
import json
import sys
from typing import List, Optional

from src.services.base import ActiveGANError, ConfigurationError, DivergenceError, NumericError, ValidationError
from src.services.config_manager import ConfigManager
from src.services.constants import EXIT_CODES
from src.services.logger_config import get_logger, setup_logging
from src.services.report_service import ReportService


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='activegan', description='ActiveGAN training and evaluation')
    commands = parser.add_subparsers(dest='command', required=True)

    def common(sub: argparse.ArgumentParser, needs_config: bool = True) -> None:
        if needs_config:
            sub.add_argument('--config', required=True, help='JSON run configuration')
        sub.add_argument('--seed', type=int, default=None, help='Unsigned 64-bit seed override')
        sub.add_argument('--jobs', type=int, default=1, help='Parallel sweep rows')
        sub.add_argument('--out', default=None, help='Output directory override')

    common(commands.add_parser('train', help='Train ActiveGAN and write checkpoints, trace and samples'))
    generate = commands.add_parser('generate', help='Sample from a saved checkpoint')
    common(generate, needs_config=False)
    generate.add_argument('--checkpoint', required=True, help='Parameter container written by train')
    generate.add_argument('--count', type=int, default=500)
    generate.add_argument('--class', dest='label', type=int, default=None, help='Generate only this class')
    evaluate = commands.add_parser('evaluate', help='Compare baseline, ActiveGAN, AC-GAN and AC-GAN+F')
    common(evaluate)
    evaluate.add_argument('--html', action='store_true', help='Also render report.html')
    common(commands.add_parser('sweep', help='Evaluate over a grid of one hyperparameter'))
    return parser


def exit_code_for(error: Exception) -> int:
    """Код завершения по классу ошибки"""
    if isinstance(error, (ConfigurationError, ValidationError)):
        return EXIT_CODES['validation']
    if isinstance(error, (DivergenceError, NumericError)):
        return EXIT_CODES['divergence']
    # FormatError и ошибки ввода-вывода
    return EXIT_CODES['io']


def run(args: argparse.Namespace) -> dict:
    if args.jobs < 1:
        raise ConfigurationError(f"--jobs must be positive, got {args.jobs}", fields=['--jobs'])
    if args.command == 'generate':
        if args.seed is not None and args.seed < 0:
            raise ConfigurationError("Seed override must be non-negative", fields=['--seed'])
        return ReportService().cmd_generate(args.checkpoint, args.count, args.out or 'runs/generate',
                                            seed=args.seed or 0, label=args.label)

    config_manager = ConfigManager(args.config, {'seed': args.seed, 'output_dir': args.out})
    service = ReportService(config_manager, jobs=args.jobs)
    if args.command == 'train':
        return service.cmd_train()
    if args.command == 'evaluate':
        return service.cmd_evaluate(html=args.html)
    return service.cmd_sweep()


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    logger = get_logger('CLI')
    try:
        result = run(args)
    except (ActiveGANError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return exit_code_for(e)
    print(json.dumps(result, indent=2, ensure_ascii=False, default=str))
    return EXIT_CODES['success']


if __name__ == "__main__":
    sys.exit(main())
