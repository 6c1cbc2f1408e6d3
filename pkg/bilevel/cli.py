"""Command line entry point: bilevel {run,gradcheck,report} --config PATH"""

import argparse
import os
import sys
from typing import List, Optional

from bilevel import log as bilevel_log
from bilevel.harness import cmd_gradcheck, cmd_report, cmd_run
from bilevel.optimizers import BilevelRunner

COMMANDS = ('run', 'gradcheck', 'report')


def build_parser() -> argparse.ArgumentParser:
    """Builds the argument parser."""
    default_config = os.getenv('BILEVEL_CONFIG')
    parser = argparse.ArgumentParser(
        prog='bilevel',
        usage='%(prog)s [options] command',
        description='Run bilevel optimization experiments',
        epilog=('You can specify the default config file using the ' +
                'BILEVEL_CONFIG environment variable.'))
    parser.add_argument('command', choices=COMMANDS, help='What to do: ' + ', '.join(COMMANDS))
    default_config_help = ''
    if default_config:
        default_config_help = f" (default '{default_config}')"
    parser.add_argument('-c',
                        '--config',
                        dest='config',
                        help=f'Experiment config file (JSON or YAML){default_config_help}',
                        default=default_config)
    parser.add_argument('-o',
                        '--out',
                        dest='out',
                        help='Output directory (overrides output_dir in the config)',
                        default=None)
    parser.add_argument('--parallel',
                        dest='parallel',
                        type=int,
                        help='Number of run blocks to execute concurrently (default = 1)',
                        default=1)
    parser.add_argument('--seed',
                        dest='seed',
                        type=int,
                        help='Override the problem and run seeds',
                        default=None)
    parser.add_argument('-v',
                        '--verbose',
                        dest='verbose',
                        action='store_true',
                        help='Log one line per outer iteration',
                        default=False)
    parser.add_argument('-q',
                        '--quiet',
                        dest='quiet',
                        action='store_true',
                        help='Suppress all log output',
                        default=False)
    parser.add_argument('--show-vectors',
                        dest='show_vectors',
                        action='store_true',
                        help='Dump the iterate and estimate every outer iteration',
                        default=False)
    parser.add_argument('--show-diagnostics',
                        dest='show_diagnostics',
                        action='store_true',
                        help='Show inner solver diagnostics and counters',
                        default=False)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Parses argv (sys.argv[1:] by default) and runs the command."""
    parser = build_parser()
    args = parser.parse_args(sys.argv[1:] if argv is None else argv)
    if args.config is None:
        parser.error('no config given (use --config or BILEVEL_CONFIG)')
    if args.parallel < 1:
        parser.error('--parallel must be at least 1')

    show = BilevelRunner.SHOW_NONE
    if args.verbose:
        show |= BilevelRunner.SHOW_ITERATIONS
    if args.show_vectors:
        show |= BilevelRunner.SHOW_VECTORS
    if args.show_diagnostics:
        show |= BilevelRunner.SHOW_DIAGNOSTICS
    if args.quiet:
        bilevel_log.log_to_none()
    else:
        bilevel_log.log_to_print()

    if args.command == 'run':
        return cmd_run(args.config, args.out, args.parallel, args.seed, show)
    if args.command == 'gradcheck':
        return cmd_gradcheck(args.config, args.out, args.seed)
    return cmd_report(args.config, args.out, args.seed)


if __name__ == '__main__':
    sys.exit(main())
