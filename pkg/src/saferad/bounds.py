#!/usr/bin/env python3
'''
Contains the anytime bounds engine: per-input lower and upper bounds on the
L0 maximum safe radius, tightened one subspace dimension at a time.

The lower bound is a certified-safe radius `l`: no perturbation of at most `l`
pixels (on the grid) changes the objective. The upper bound `u` is the weight
of the best witnessed perturbation, so the radius lies in `[l, u-1]` and the
input has converged once `u == l + 1`.
'''

import functools
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Iterator, Optional

import numpy as np

from .errors import PreconditionError, RangeError, UnsupportedLayerError
from .modelio import Dataset
from .nn import Model, forward_batch, lipschitz_upper_bound
from .subspace import (
    DEFAULT_CHUNK, ClassObjective, GridConfig, SensitivityBatch, SubspaceSource,
    compute_sensitivity, grid_density, measure_rows, reaches
)
from .tensor import SparsePerturbation, sparse_remove, sparse_union

MODES = ('strict', 'paper')


@dataclass
class InputBounds:
    '''
    The running bounds of one input.
    '''
    id: str
    label: Optional[int]
    predicted: int
    lower: int = 0
    upper: Optional[int] = None
    best_adversarial: Optional[SparsePerturbation] = None
    converged: bool = False
    skipped: bool = False

    @property
    def active(self) -> bool:
        return not (self.converged or self.skipped)

    def upper_safe(self, n: int) -> int:
        '''
        The largest radius not yet refuted: `upper - 1`, or `n` without a witness.
        '''
        return self.upper - 1 if self.upper is not None else n

    def centre(self, n: int) -> float:
        return (self.lower + self.upper_safe(n)) / 2

    def radius(self, n: int) -> float:
        return (self.upper_safe(n) - self.lower) / 2

    def to_dict(self, n: int) -> dict:
        adv = self.best_adversarial
        return {
            'id':                  self.id,
            'label':               self.label,
            'predicted':           self.predicted,
            'lower':               self.lower,
            'upper':               self.upper,
            'upper_safe':          self.upper_safe(n),
            'u_c':                 None if self.skipped else self.centre(n),
            'u_r':                 None if self.skipped else self.radius(n),
            'converged':           self.converged,
            'skipped':             self.skipped,
            'adversarial_distance': adv.weight if adv is not None else None,
            'perturbed_positions': adv.positions if adv is not None else None
        }


@dataclass
class BoundsState:
    '''
    The bounds of a whole run together with the model, the original inputs
    and the objective shared by every step.
    '''
    model: Model
    inputs: np.ndarray
    entries: list[InputBounds]
    objective: Any
    chunk: int = DEFAULT_CHUNK
    queries: int = 0
    t: int = 0
    _index: dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {e.id: i for (i, e) in enumerate(self.entries)}

    @property
    def n(self) -> int:
        return self.model.n_pixels

    def position(self, input_id: str) -> int:
        return self._index[input_id]

    def active(self) -> list[int]:
        return [i for (i, e) in enumerate(self.entries) if e.active]


@dataclass
class AnytimeReport:
    '''
    A snapshot of the bounds after one iteration.
    '''
    iteration: int
    epsilon: float
    mode: str
    sampling: str
    inputs: list[dict]
    mean_lower: Optional[float]
    mean_upper: Optional[float]
    global_u_c: Optional[float]
    global_u_r: Optional[float]
    queries: int
    wall_time: Optional[float]
    lipschitz_slack: Optional[float]
    evaluated: int
    skipped: int
    converged: int

    def to_dict(self) -> dict:
        return {
            'iteration': self.iteration,
            'epsilon':   self.epsilon,
            'mode':      self.mode,
            'sampling':  self.sampling,
            'inputs':    [dict(d) for d in self.inputs],
            'aggregate': {
                'mean_lower':      self.mean_lower,
                'mean_upper':      self.mean_upper,
                'global_u_c':      self.global_u_c,
                'global_u_r':      self.global_u_r,
                'queries':         self.queries,
                'wall_time':       self.wall_time,
                'lipschitz_slack': self.lipschitz_slack,
                'evaluated':       self.evaluated,
                'skipped':         self.skipped,
                'converged':       self.converged
            }
        }


def worst_case_queries(n: int, epsilon: float) -> int:
    '''
    Returns the number of model queries an exhaustive grid search over `n`
    pixels needs in the worst case, `(1 + ceil(1/epsilon))^n - 1`.
    '''
    if n < 1:
        raise RangeError(f'unable to bound queries - pixel count {n} is below one')
    return (1 + grid_density(epsilon)) ** n - 1


def initial_state(model: Model, dataset: Dataset, objective: Any = None, chunk: int = DEFAULT_CHUNK) -> BoundsState:
    '''
    Classifies every input and builds the starting bounds. Labelled inputs
    that are misclassified are skipped. Without an explicit objective each
    input keeps its predicted class.
    '''
    dataset = dataset.bind(model.input_shape)
    dataset.check_labels(model.n_classes)
    predictions = forward_batch(model, dataset.inputs) if len(dataset) else []
    entries = []
    for (input_id, label, p) in zip(dataset.ids, dataset.labels, predictions):
        skipped = label is not None and label != p.label
        if skipped:
            logging.info(f'Skipping input {input_id}: predicted {p.label}, labelled {label}.')
        entries.append(InputBounds(id=input_id, label=label, predicted=p.label, skipped=skipped))
    if objective is None:
        return BoundsState(model, dataset.inputs, entries, ClassObjective([p.label for p in predictions]),
                           chunk=chunk, queries=len(predictions))
    state = BoundsState(model, dataset.inputs, entries, objective, chunk=chunk, queries=2 * len(predictions))
    if len(dataset):
        (_, reached, _) = measure_rows(model, objective, dataset.inputs, np.arange(len(dataset)), chunk)
        for (entry, hit) in zip(entries, reached):
            if hit and not entry.skipped:
                logging.info(f'Skipping input {entry.id}: the objective already holds.')
                entry.skipped = True
    return state


def _settle(entry: InputBounds, n: int):
    '''
    Restores `lower < upper` and marks convergence.
    '''
    if entry.upper is not None and entry.upper <= entry.lower:
        logging.warning(f'Input {entry.id}: witness of weight {entry.upper} refutes lower bound {entry.lower}; revising.')
        entry.lower = entry.upper - 1
    if entry.upper is not None and entry.upper == entry.lower + 1:
        entry.converged = True
    elif entry.upper is None and entry.lower >= n:
        entry.lower = n
        entry.converged = True


def _offer(entry: InputBounds, perturbation: SparsePerturbation) -> bool:
    '''
    Records `perturbation` as the best witness when it is strictly lighter.
    '''
    if entry.upper is None or perturbation.weight < entry.upper:
        entry.upper = perturbation.weight
        entry.best_adversarial = perturbation
        return True
    return False


def _tighten(model: Model, x0: np.ndarray, adv: SparsePerturbation, objective: Any) -> tuple[SparsePerturbation, int]:
    '''
    Reverts positions one at a time (ascending) for as long as the objective
    still holds, repeating passes until none can be reverted. Returns the
    result and the number of queries spent.
    '''
    if not reaches(model, objective, adv.apply(x0)):
        raise PreconditionError('unable to tighten perturbation - it does not change the outcome')
    (current, queries, changed) = (adv, 1, True)
    while changed:
        changed = False
        for pos in adv.positions:
            if pos not in current:
                continue
            trial = sparse_remove(current, SparsePerturbation({pos: current.entries[pos]}))
            queries += 1
            if reaches(model, objective, trial.apply(x0)):
                current = trial
                changed = True
    return (current, queries)


def tighten(model: Model, x0: np.ndarray, adv: SparsePerturbation, objective: Any = None) -> SparsePerturbation:
    '''
    Returns a 1-minimal sub-perturbation of `adv` that still changes the
    classification of `x0` (or still reaches `objective`): reverting any single
    remaining position undoes it.
    '''
    x0 = np.asarray(x0, dtype=np.float64)
    if objective is None:
        objective = ClassObjective([forward_batch(model, x0[None])[0].label])
    return _tighten(model, x0, adv, objective)[0]


def lower_bound_step(state: BoundsState, sens: SensitivityBatch, t: int, mode: str = 'strict'):
    '''
    Advances the lower bound of every input covered by `sens` to `t` unless a
    candidate of dimension `t` reaches the objective.

    Strict mode inspects every candidate of every subspace; any witness also
    offers its (tightened) perturbation as an upper bound. Paper mode only
    inspects the minimising candidate of the top-ranked subspace. Sampled
    subspace lists that miss some position sets certify nothing: the lower
    bound stays where it is and witnesses still count.
    '''
    if mode not in MODES:
        raise RangeError(f'unable to update bounds - unknown mode "{mode}"')
    for (i, input_id) in enumerate(sens.ids):
        idx = state.position(input_id)
        entry = state.entries[idx]
        if not entry.active:
            continue
        objective = state.objective.subset([idx])
        witness = None
        if mode == 'paper':
            top = int(sens.order[i][0]) if sens.order.shape[1] else None
            if top is not None and sens.best_reached[i, top]:
                witness = sens.best(i, top)
        else:
            found = [w for w in (sens.witness(i, k) for k in range(sens.dims.shape[1])) if w is not None]
            if found:
                witness = min(found, key=lambda w: w.weight)
        if witness is None:
            if sens.complete:
                entry.lower = max(entry.lower, t)
        else:
            (witness, queries) = _tighten(state.model, state.inputs[idx], witness, objective)
            state.queries += queries
            _offer(entry, witness)
        _settle(entry, state.n)


def upper_bound_step(state: BoundsState, sens: SensitivityBatch, t: int, budget: Optional[int] = None):
    '''
    Composes the ranked minimising perturbations of each input into growing
    prefixes, takes the first prefix that reaches the objective, tightens it
    and records it when it improves the upper bound. `budget` limits the
    number of prefixes examined.
    '''
    for (i, input_id) in enumerate(sens.ids):
        idx = state.position(input_id)
        entry = state.entries[idx]
        if not entry.active:
            continue
        x0 = state.inputs[idx]
        ranked = sens.ranked(i, budget)
        if not ranked:
            continue
        (images, x) = ([], x0)
        for p in ranked:
            x = p.apply(x)
            images.append(x)
        objective = state.objective.subset([idx])
        batch = np.stack(images)
        (_, reached, _) = measure_rows(state.model, objective, batch, np.zeros(len(batch), dtype=np.int64), state.chunk)
        state.queries += len(batch)
        hits = np.flatnonzero(reached)
        if not hits.size:
            logging.debug(f'Input {input_id}: no prefix of {len(ranked)} ranked perturbations changes the outcome at t={t}.')
            continue
        accumulated = functools.reduce(sparse_union, ranked[:hits[0] + 1], SparsePerturbation())
        (tightened, queries) = _tighten(state.model, x0, accumulated, objective)
        state.queries += queries
        if _offer(entry, tightened):
            logging.debug(f'Input {input_id}: upper bound {entry.upper} from {accumulated.weight} accumulated positions.')
        _settle(entry, state.n)


def _mean(values: list[float]) -> Optional[float]:
    return math.fsum(values) / len(values) if values else None


def build_report(state: BoundsState, t: int, grid: GridConfig, mode: str, sampling: str,
                 slack: Optional[float], wall_time: Optional[float]) -> AnytimeReport:
    '''
    Snapshots `state` into a report.
    '''
    n = state.n
    counted = [e for e in state.entries if not e.skipped]
    return AnytimeReport(
        iteration       = t,
        epsilon         = grid.epsilon,
        mode            = mode,
        sampling        = sampling,
        inputs          = [e.to_dict(n) for e in state.entries],
        mean_lower      = _mean([e.lower for e in counted]),
        mean_upper      = _mean([e.upper_safe(n) for e in counted]),
        global_u_c      = _mean([e.centre(n) for e in counted]),
        global_u_r      = _mean([e.radius(n) for e in counted]),
        queries         = state.queries,
        wall_time       = wall_time,
        lipschitz_slack = slack,
        evaluated       = len(counted),
        skipped         = len(state.entries) - len(counted),
        converged       = sum(1 for e in counted if e.converged)
    )


def lipschitz_slack(model: Model, grid: GridConfig) -> Optional[float]:
    '''
    Returns `K * epsilon / 2`, the largest score change the grid can miss, or
    None when some layer has no bound.
    '''
    try:
        return lipschitz_upper_bound(model) * grid.epsilon / 2
    except UnsupportedLayerError as e:
        logging.warning(f'No Lipschitz slack for "{model.name}" - {e}')
        return None


def iterate(model: Model, dataset: Dataset, grid: GridConfig, t_max: int,
            source: Optional[SubspaceSource] = None, mode: str = 'strict', objective: Any = None,
            chunk: int = DEFAULT_CHUNK, workers: int = 1, budget: Optional[int] = None,
            timing: bool = False) -> Iterator[tuple[AnytimeReport, BoundsState]]:
    '''
    Runs the anytime loop for `t = 1..t_max`, yielding a report (and the live
    state) after every iteration. The loop ends early once every evaluated
    input has converged.
    '''
    if t_max < 1:
        raise RangeError(f'unable to evaluate bounds - t_max {t_max} is below one')
    if mode not in MODES:
        raise RangeError(f'unable to evaluate bounds - unknown mode "{mode}"')
    source = source or SubspaceSource()
    start = time.perf_counter()
    dataset = dataset.bind(model.input_shape)
    state = initial_state(model, dataset, objective, chunk)
    slack = lipschitz_slack(model, grid)
    for t in range(1, t_max + 1):
        active = state.active()
        if active and t <= state.n:
            logging.info(f'Iteration t={t}: {len(active)} active inputs.')
            sens = compute_sensitivity(model, dataset.subset(active), t, grid, source,
                                       state.objective.subset(active), chunk, workers)
            state.queries += sens.queries
            lower_bound_step(state, sens, t, mode)
            upper_bound_step(state, sens, t, budget)
        state.t = t
        wall_time = time.perf_counter() - start if timing else None
        yield (build_report(state, t, grid, mode, source.sampling, slack, wall_time), state)
        counted = [e for e in state.entries if not e.skipped]
        if counted and all(e.converged for e in counted):
            logging.info(f'Every input converged at t={t}.')
            break


def evaluate(model: Model, dataset: Dataset, grid: GridConfig, t_max: int, **kwargs) -> tuple[list[AnytimeReport], BoundsState]:
    '''
    Runs `iterate` to completion and returns every report with the final
    state.
    '''
    reports = []
    state = None
    for (report, state) in iterate(model, dataset, grid, t_max, **kwargs):
        reports.append(report)
    if state is None:
        raise PreconditionError('unable to evaluate bounds - no iteration ran')
    return (reports, state)


def search(model: Model, x0: np.ndarray, objective: Any, grid: GridConfig, t_max: int,
           input_id: str = 'seed', **kwargs) -> InputBounds:
    '''
    Runs the anytime loop for a single input against an arbitrary objective
    and returns its final bounds.
    '''
    x0 = np.asarray(x0, dtype=np.float64)
    dataset = Dataset(x0[None], ids=[input_id])
    t_max = min(t_max, model.n_pixels)
    (_, state) = evaluate(model, dataset, grid, t_max, objective=objective, **kwargs)
    return state.entries[0]
