#!/usr/bin/env python3
'''
Contains functions for interacting with the CLI.
'''

import argparse
import os
import sys
from typing import Any, Optional


C_BLUE   = '\033[94m'
C_GREEN  = '\033[92m'
C_ORANGE = '\033[93m'
C_RED    = '\033[91m'
C_END    = '\033[0m'
C_BOLD   = '\033[1m'
COLOR_OUTPUT = True
COLORS = [C_BLUE, C_GREEN, C_ORANGE, C_RED, C_END, C_BOLD]
HELP_DESCRIPTION = """
Anytime lower and upper bounds on the L0 maximum safe radius of small neural
network classifiers, with L0 attacks, neuron-coverage test generation and
saliency maps.
"""
HELP_EPILOG = """
subcommands:
  evaluate     bound the maximum safe radius of every dataset input
  attack       search a sparse class-changing perturbation per input
  testgen      generate inputs that cover the hidden neurons left uncovered
  saliency     map the single-pixel sensitivity of an input
  query-bound  print the worst-case query count of an exhaustive search
"""
SUPPRESS_OUTPUT = False


def fcolor(instring: str, color: Optional[str] = C_BLUE) -> str:
    '''
    Colorizes the specified string.
    '''
    if COLOR_OUTPUT and not color is None:
        return color + instring + C_END
    return instring


def fstep(instring: str, color: Optional[str] = C_BLUE) -> str:
    '''
    Formats the specified string as a "step".
    '''
    return fcolor('::', color) + ' ' + fcolor(instring, C_BOLD)


def fsubstep(instring: str, color: Optional[str] = C_BLUE) -> str:
    '''
    Formats the specified string as a "sub-step".
    '''
    return '  ' + fcolor('-->', color) + ' ' + instring


def fsubsubstep(instring: str, color: Optional[str] = None) -> str:
    '''
    Formats the specified string as a "sub-sub-step".
    '''
    return '      ' + fcolor(instring, color)


def _formatter(prog: str) -> argparse.HelpFormatter:
    return argparse.RawDescriptionHelpFormatter(prog, max_help_position=45, width=100)


def _common_parser() -> argparse.ArgumentParser:
    '''
    Options shared by every subcommand.
    '''
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        '-h',
        '--help',
        action = 'help',
        help = 'Displays help and usage information.'
    )
    common.add_argument(
        '-f',
        '--log-file',
        default = os.getenv('SAFERAD_LOG_FILE', ''),
        dest = 'log_file',
        help = '[env: SAFERAD_LOG_FILE] Specifies a log file to write to. Logging is disabled without one.',
        metavar = 'FILE'
    )
    common.add_argument(
        '-l',
        '--log-level',
        choices = ['info', 'debug'],
        default = os.getenv('SAFERAD_LOG_LEVEL', 'info'),
        dest = 'log_level',
        help = '[env: SAFERAD_LOG_LEVEL] Specifies the log level, being either "info" or "debug". Defaults to "info".',
        metavar = 'LVL'
    )
    common.add_argument(
        '-m',
        '--log-mode',
        choices = ['append', 'overwrite'],
        default = os.getenv('SAFERAD_LOG_MODE', 'append'),
        dest = 'log_mode',
        help = '[env: SAFERAD_LOG_MODE] Specifies whether to "append" or "overwrite" the log file. Defaults to "append".',
        metavar = 'MODE'
    )
    common.add_argument(
        '--no-color',
        action = 'store_false',
        dest = 'color_output',
        help = 'Disables color output to stderr.'
    )
    common.add_argument(
        '-q',
        '--quiet',
        action = 'store_true',
        dest = 'quiet',
        help = 'Suppresses progress output on stderr.'
    )
    return common


def _run_parser() -> argparse.ArgumentParser:
    '''
    Options of the subcommands that load a model and a dataset. Defaults are
    left unset so that run configuration files and the environment apply.
    '''
    run = argparse.ArgumentParser(add_help=False)
    run.add_argument('-c', '--config', dest='config', metavar='FILE',
        help = '[env: SAFERAD_CONFIG] Specifies a YAML run configuration file.',
        default = os.getenv('SAFERAD_CONFIG') or None)
    run.add_argument('--model', dest='model', metavar='FILE',
        help = '[env: SAFERAD_MODEL] Specifies the JSON model file.')
    run.add_argument('--data', dest='data', metavar='FILE',
        help = '[env: SAFERAD_DATA] Specifies the CSV dataset file.')
    run.add_argument('-e', '--epsilon', dest='epsilon', metavar='EPS',
        help = '[env: SAFERAD_EPSILON] Specifies the grid tolerance in (0,1]. Defaults to 0.25.')
    run.add_argument('-t', '--t-max', dest='t_max', metavar='T',
        help = '[env: SAFERAD_T_MAX] Specifies the largest subspace dimension. Defaults to 2.')
    run.add_argument('--cap', dest='cap', metavar='N',
        help = '[env: SAFERAD_CAP] Specifies the largest number of subspaces per input. Defaults to 1000000.')
    run.add_argument('--sampling', dest='sampling', choices=['exhaustive', 'sampled'],
        help = '[env: SAFERAD_SAMPLING] Specifies whether subspaces are enumerated or sampled. Defaults to "exhaustive".')
    run.add_argument('--seed', dest='seed', metavar='N',
        help = '[env: SAFERAD_SEED] Specifies the subspace sampling seed. Defaults to 0.')
    run.add_argument('--mode', dest='mode', choices=['strict', 'paper'],
        help = '[env: SAFERAD_MODE] Specifies the lower-bound check, "strict" or "paper". Defaults to "strict".')
    run.add_argument('--chunk', dest='chunk', metavar='ROWS',
        help = '[env: SAFERAD_CHUNK] Specifies the largest number of candidate rows per model call. Defaults to 65536.')
    run.add_argument('-w', '--workers', dest='workers', metavar='N',
        help = '[env: SAFERAD_WORKERS] Specifies the number of worker threads. Defaults to 1.')
    run.add_argument('--threshold', dest='threshold', metavar='V',
        help = '[env: SAFERAD_THRESHOLD] Specifies the neuron activation threshold. Defaults to 0.')
    run.add_argument('--budget', dest='budget', metavar='N',
        help = '[env: SAFERAD_BUDGET] Limits the accumulated prefixes (attack, evaluate) or the subspace dimension per neuron (testgen).')
    run.add_argument('-i', '--index', dest='index', metavar='I',
        help = 'Restricts the run to the dataset input at 0-based position I.')
    run.add_argument('--neuron', dest='neuron', metavar='LAYER:OFFSET',
        help = 'Computes the saliency map of a hidden neuron instead of the predicted class.')
    run.add_argument('--timing', dest='timing', action='store_const', const=True, default=None,
        help = '[env: SAFERAD_TIMING] Records wall-clock time in reports.')
    run.add_argument('-o', '--out', dest='out', metavar='PATH',
        help = '[env: SAFERAD_OUT] Specifies the report directory (evaluate), adversarial CSV (attack) or coverage report (testgen).')
    run.add_argument('--saliency-out', dest='saliency_out', metavar='FILE',
        help = '[env: SAFERAD_SALIENCY_OUT] Specifies the PGM graymap to write (saliency).')
    run.add_argument('--tests-out', dest='tests_out', metavar='FILE',
        help = '[env: SAFERAD_TESTS_OUT] Specifies the CSV file generated tests are appended to (testgen).')
    return run


def parse_arguments(argv: Optional[list[str]] = None) -> Any:
    '''
    Parses the command-line arguments passed to the script, returning the
    result.
    '''
    if not os.getenv('SAFERAD_LOG_LEVEL', 'info') in ['info', 'debug']:
        sys.exit('Invalid value set for environment variable "SAFERAD_LOG_LEVEL".')
    if not os.getenv('SAFERAD_LOG_MODE', 'append') in ['append', 'overwrite']:
        sys.exit('Invalid value set for environment variable "SAFERAD_LOG_MODE".')
    common = _common_parser()
    run = _run_parser()
    argparser = argparse.ArgumentParser(
        prog = 'saferad',
        description = HELP_DESCRIPTION,
        epilog = HELP_EPILOG,
        usage = 'saferad COMMAND [...]',
        add_help = False,
        formatter_class = _formatter
    )
    argparser.add_argument(
        '-h',
        '--help',
        action = 'help',
        help = 'Displays help and usage information.'
    )
    commands = argparser.add_subparsers(dest='command', metavar='COMMAND', required=True)
    for (name, text) in [('evaluate', 'Bounds the maximum safe radius of every input.'),
                         ('attack', 'Searches a sparse class-changing perturbation of every input.'),
                         ('testgen', 'Generates inputs covering the hidden neurons left uncovered.'),
                         ('saliency', 'Maps the single-pixel sensitivity of every input.')]:
        commands.add_parser(name, add_help=False, help=text, description=text, parents=[common, run], formatter_class=_formatter)
    bound = commands.add_parser(
        'query-bound',
        add_help = False,
        help = 'Prints the worst-case query count of an exhaustive grid search.',
        parents = [common],
        formatter_class = _formatter
    )
    bound.add_argument('n', type=int, help='Specifies the number of pixels.')
    bound.add_argument('bound_epsilon', type=float, metavar='epsilon', help='Specifies the grid tolerance in (0,1].')
    return argparser.parse_args(argv)


def progress(instring: str):
    '''
    Prints a progress message to STDERR unless output is suppressed.
    '''
    if not SUPPRESS_OUTPUT: sys.stderr.write(instring + '\n')


def stderr(instring: str):
    '''
    Prints the specified message to STDERR.
    '''
    sys.stderr.write(instring + '\n')


def stdout(instring: str):
    '''
    Prints the specified message to STDOUT.
    '''
    sys.stdout.write(instring + '\n')
