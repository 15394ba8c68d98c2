#!/usr/bin/env python3
'''
Contains the single-pass L0 attack: rank single-pixel subspaces, accumulate
their best perturbations until the class changes, then tighten.
'''

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .bounds import initial_state, upper_bound_step
from .modelio import Dataset
from .nn import Model, forward_batch
from .subspace import DEFAULT_CHUNK, GridConfig, SubspaceSource, compute_sensitivity
from .tensor import SparsePerturbation


@dataclass
class AttackResult:
    id: str
    adversarial: np.ndarray
    perturbation: SparsePerturbation
    distance: int
    label: int
    adversarial_label: int
    queries: int

    def to_dict(self) -> dict:
        return {
            'id':                self.id,
            'distance':          self.distance,
            'label':             self.label,
            'adversarial_label': self.adversarial_label,
            'positions':         self.perturbation.positions,
            'queries':           self.queries
        }


def attack(model: Model, x0: np.ndarray, grid: GridConfig, budget: Optional[int] = None,
           chunk: int = DEFAULT_CHUNK, workers: int = 1, input_id: str = '1') -> Optional[AttackResult]:
    '''
    Searches a class-changing perturbation of `x0` from the t=1 sensitivities
    only. `budget` limits the number of accumulated prefixes. Returns None
    when no prefix changes the class.
    '''
    x0 = np.asarray(x0, dtype=np.float64)
    dataset = Dataset(x0[None], ids=[input_id])
    state = initial_state(model, dataset, chunk=chunk)
    source = SubspaceSource(cap=model.n_pixels)
    sens = compute_sensitivity(model, dataset, 1, grid, source, state.objective, chunk, workers)
    state.queries += sens.queries
    upper_bound_step(state, sens, 1, budget)
    entry = state.entries[0]
    if entry.best_adversarial is None:
        logging.info(f'Attack on input {input_id} found nothing after {state.queries} queries.')
        return None
    adversarial = entry.best_adversarial.apply(x0)
    state.queries += 1
    result = AttackResult(
        id                = input_id,
        adversarial       = adversarial,
        perturbation      = entry.best_adversarial,
        distance          = entry.best_adversarial.weight,
        label             = entry.predicted,
        adversarial_label = forward_batch(model, adversarial[None])[0].label,
        queries           = state.queries
    )
    logging.info(f'Attack on input {input_id}: distance {result.distance}, class {result.label} -> {result.adversarial_label}.')
    return result
