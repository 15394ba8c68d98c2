#!/usr/bin/env python3
'''
saferad

Anytime lower and upper bounds on the L0 maximum safe radius of small neural
network classifiers.
'''

import logging
import os
import signal
import sys
from typing import Any, Optional

from . import attack
from . import bounds
from . import cli
from . import config
from . import coverage
from . import modelio
from . import render
from . import saliency
from . import utils
from .errors import RangeError, SaferadError
from .subspace import NeuronObjective


def bail(msg: str, ec: int):
    '''
    A handy function for reporting a critical issue.
    '''
    cli.stderr(cli.fcolor(f'ERROR: {msg}', cli.C_RED))
    logging.critical(msg)
    sys.exit(ec)


def terminate(signum: int, frame: Any):
    '''
    Handles SIGTERM. Reports are replaced atomically, so the files on disk stay
    complete.
    '''
    logging.warning('Received SIGTERM, exiting.')
    sys.exit(143)


def main(argv: Optional[list[str]] = None):
    '''
    The entrypoint of the program.
    '''
    # Parse command-line arguments.
    args = cli.parse_arguments(argv)

    # Setup logging module.
    utils.setup_logging(args)

    # Log CLI arguments at debug level.
    logging.debug('---------- CLI Arguments ----------')
    dargs = vars(args)
    for a in dargs:
        logging.debug(a + ' : ' + str(dargs[a]))
    logging.debug('-----------------------------------')

    # Set module global variables.
    cli.COLOR_OUTPUT = args.color_output
    cli.SUPPRESS_OUTPUT = args.quiet

    logging.info('Starting process...')

    try:
        previous = signal.signal(signal.SIGTERM, terminate)
    except ValueError:
        previous = None
    try:
        if args.command == 'query-bound':
            run_query_bound(args)
        else:
            run = load_run(args)
            (model, dataset) = load_inputs(run)
            COMMANDS[args.command](run, model, dataset)
    finally:
        if previous is not None:
            signal.signal(signal.SIGTERM, previous)

    logging.info('Process complete.')
    sys.exit(0)


def load_run(args: Any) -> config.RunConfig:
    '''
    Resolves the run configuration of a subcommand.
    '''
    try:
        conf = config.parse(args.config) if args.config else {}
        config.validate(conf)
        run = config.resolve(args, conf)
    except SaferadError as e:
        bail(f'Unable to resolve run configuration - {e}', 2)
    if not run.model or not run.data:
        bail('A model ("--model") and a dataset ("--data") are required.', 2)
    return run


def load_inputs(run: config.RunConfig) -> tuple:
    '''
    Loads the model and the dataset, restricted to one input with "--index".
    '''
    cli.progress(cli.fstep('Loading model and dataset...'))
    try:
        model = modelio.load_model(run.model)
        dataset = modelio.load_dataset(run.data, model.input_shape)
        dataset.check_labels(model.n_classes)
        if run.index is not None:
            if run.index >= len(dataset):
                raise RangeError(f'input index {run.index} is outside of the {len(dataset)} dataset inputs')
            dataset = dataset.subset([run.index])
    except SaferadError as e:
        bail(f'Unable to load inputs - {e}', 1)
    cli.progress(cli.fsubstep(f'{model.name}: {model.n_pixels} pixels, {model.n_classes} classes, {len(dataset)} inputs'))
    return (model, dataset)


def run_evaluate(run: config.RunConfig, model: Any, dataset: Any):
    '''
    Runs the anytime loop, writing and printing a report after every iteration.
    '''
    cli.progress(cli.fstep(f'Evaluating bounds up to t={run.t_max}...'))
    try:
        for (report, _) in bounds.iterate(model, dataset, run.grid, run.t_max, source=run.source, mode=run.mode,
                                          chunk=run.chunk, workers=run.workers, budget=run.budget, timing=run.timing):
            if run.out:
                modelio.write_report(os.path.join(run.out, f'report-t{report.iteration}.json'), report)
            cli.stdout(render.render('evaluate.txt.j2', report=report.to_dict()).rstrip('\n'))
            cli.progress(cli.fsubstep(f't={report.iteration}: {report.converged}/{report.evaluated} converged after {report.queries} queries'))
    except SaferadError as e:
        bail(f'Unable to evaluate bounds - {e}', 1)


def run_attack(run: config.RunConfig, model: Any, dataset: Any):
    '''
    Attacks every input and writes the adversarial rows found.
    '''
    cli.progress(cli.fstep(f'Attacking {len(dataset)} inputs...'))
    (results, found) = ([], [])
    try:
        for (input_id, x) in zip(dataset.ids, dataset.inputs):
            result = attack.attack(model, x, run.grid, run.budget, run.chunk, run.workers, input_id)
            if result is None:
                results.append({'id': input_id, 'distance': None})
                continue
            results.append(result.to_dict())
            found.append(result)
        if run.out:
            modelio.write_adversarial(run.out, [r.adversarial for r in found], [r.label for r in found])
    except SaferadError as e:
        bail(f'Unable to attack inputs - {e}', 1)
    cli.progress(cli.fsubstep(f'{len(found)} of {len(results)} inputs attacked successfully'))
    cli.stdout(render.render('attack.txt.j2', results=results).rstrip('\n'))


def run_testgen(run: config.RunConfig, model: Any, dataset: Any):
    '''
    Generates coverage tests from the dataset.
    '''
    cli.progress(cli.fstep('Generating neuron-coverage tests...'))
    try:
        report = coverage.testgen(model, dataset, run.grid, run.threshold, run.budget or 1,
                                  source=run.source, mode=run.mode, chunk=run.chunk, workers=run.workers)
        if run.out:
            modelio.write_coverage(run.out, report)
        if run.tests_out:
            modelio.write_tests(run.tests_out, report.tests)
    except SaferadError as e:
        bail(f'Unable to generate tests - {e}', 1)
    cli.progress(cli.fsubstep(f'coverage {report.baseline_fraction:.6f} -> {report.fraction:.6f}'))
    cli.stdout(render.render('testgen.txt.j2', report=report.to_dict()).rstrip('\n'))


def saliency_path(path: str, input_id: str, count: int) -> str:
    '''
    Returns the graymap path of one input; several inputs get their id
    appended to the file stem.
    '''
    if count == 1:
        return path
    (stem, ext) = os.path.splitext(path)
    return f'{stem}-{input_id}{ext}'


def run_saliency(run: config.RunConfig, model: Any, dataset: Any):
    '''
    Prints (and optionally writes) the saliency map of every input.
    '''
    cli.progress(cli.fstep(f'Computing saliency maps of {len(dataset)} inputs...'))
    objective = NeuronObjective(run.neuron[0], run.neuron[1], run.threshold) if run.neuron else None
    try:
        for (input_id, x) in zip(dataset.ids, dataset.inputs):
            smap = saliency.saliency(model, x, run.grid, objective, run.chunk, run.workers, input_id)
            cli.stdout(render.render('saliency.txt.j2', id=smap.id, peak=smap.peak, rows=smap.rows()).rstrip('\n'))
            if run.saliency_out:
                modelio.write_saliency(saliency_path(run.saliency_out, input_id, len(dataset)), smap)
    except SaferadError as e:
        bail(f'Unable to compute saliency maps - {e}', 1)


def run_query_bound(args: Any):
    '''
    Prints the worst-case query count of an exhaustive search.
    '''
    try:
        cli.stdout(str(bounds.worst_case_queries(args.n, args.bound_epsilon)))
    except SaferadError as e:
        bail(f'Unable to compute query bound - {e}', 2)


COMMANDS = {
    'attack':   run_attack,
    'evaluate': run_evaluate,
    'saliency': run_saliency,
    'testgen':  run_testgen
}
