#!/usr/bin/env python3
'''
Contains neuron-coverage test generation.

A hidden neuron is covered once some suite input drives its activation above
the threshold. Every uncovered neuron gets a search, seeded from the suite
input with the largest pre-activation of that neuron, for the lightest
perturbation that activates it.
'''

import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .bounds import search
from .errors import PreconditionError
from .modelio import Dataset
from .nn import Model, NeuronId, neuron_values
from .subspace import NeuronObjective, GridConfig


@dataclass
class GeneratedTest:
    input: np.ndarray
    neuron: NeuronId
    seed: str
    distance: int
    positions: list[int]
    covers: list[NeuronId] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            'neuron':    list(self.neuron),
            'seed':      self.seed,
            'distance':  self.distance,
            'positions': list(self.positions),
            'covers':    [list(n) for n in self.covers]
        }


@dataclass
class CoverageReport:
    '''
    Suite coverage before and after test generation.
    '''
    total: int
    covered: list[NeuronId]
    baseline_fraction: float
    threshold: float
    tests: list[GeneratedTest] = field(default_factory=list)

    @property
    def fraction(self) -> float:
        return len(self.covered) / self.total if self.total else 1.0

    def to_dict(self) -> dict:
        return {
            'total':             self.total,
            'covered':           [list(n) for n in self.covered],
            'fraction':          self.fraction,
            'baseline_fraction': self.baseline_fraction,
            'threshold':         self.threshold,
            'tests':             [t.to_dict() for t in self.tests]
        }


def coverage_table(model: Model, inputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    '''
    Returns the `(pre, post)` activations of every hidden neuron for every input.
    '''
    return neuron_values(model, model.trace(inputs), inputs)


def testgen(model: Model, dataset: Dataset, grid: GridConfig, threshold: float = 0.0,
            budget: int = 1, **kwargs: Any) -> CoverageReport:
    '''
    Generates inputs that activate the neurons `dataset` leaves uncovered,
    trying subspaces of up to `budget` pixels per neuron. Extra keyword
    arguments are passed to the bounds search.
    '''
    dataset = dataset.bind(model.input_shape)
    if len(dataset) == 0:
        raise PreconditionError('unable to generate tests - the seed suite is empty')
    ids = model.neurons()
    (pre, post) = coverage_table(model, dataset.inputs)
    covered = np.any(post > threshold, axis=0)
    baseline = float(covered.mean()) if ids else 1.0
    logging.info(f'Baseline coverage {int(covered.sum())}/{len(ids)} at threshold {threshold}.')
    tests = []
    for (j, neuron) in enumerate(ids):
        if covered[j]:
            continue
        seed = int(np.argmax(pre[:, j]))
        objective = NeuronObjective(neuron[0], neuron[1], threshold)
        entry = search(model, dataset.inputs[seed], objective, grid, budget, input_id=dataset.ids[seed], **kwargs)
        found: Optional[Any] = entry.best_adversarial
        if found is None:
            logging.debug(f'Neuron {neuron}: no activating input within {budget} pixels of seed {dataset.ids[seed]}.')
            continue
        x = found.apply(dataset.inputs[seed])
        active = coverage_table(model, x[None])[1][0] > threshold
        newly = [ids[k] for k in np.flatnonzero(active & ~covered)]
        covered |= active
        tests.append(GeneratedTest(x, neuron, dataset.ids[seed], found.weight, found.positions, newly))
        logging.info(f'Neuron {neuron}: test at distance {found.weight} from seed {dataset.ids[seed]} covers {len(newly)} neurons.')
    return CoverageReport(
        total             = len(ids),
        covered           = [ids[k] for k in np.flatnonzero(covered)],
        baseline_fraction = baseline,
        threshold         = float(threshold),
        tests             = tests
    )
