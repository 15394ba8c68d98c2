#!/usr/bin/env python3
'''
Contains the subspace enumeration, candidate grids and the batched subspace
sensitivity computation.

For every input and every subspace (a set of `t` pixel positions) the
candidates are the input with those positions replaced by every combination
of grid values and the original value. All candidates of a block of subspaces
are stacked into one tensor of shape `(candidates, inputs, subspaces, features)`,
unfolded into a matrix of model inputs, evaluated in a single pass, folded back
and reduced along the candidate axis.
'''

import itertools
import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from .errors import BudgetError, PreconditionError, RangeError
from .modelio import Dataset
from .nn import Model, ReLU, Softmax, forward_batch, softmax
from .tensor import SparsePerturbation, fold, min_along_first_axis, pixel_view, unfold_mode_n

DEFAULT_CHUNK = 65536


def grid_density(epsilon: float) -> int:
    '''
    Returns the number of grid steps per dimension, `ceil(1/epsilon)`.
    '''
    if not 0.0 < epsilon <= 1.0:
        raise RangeError(f'grid tolerance {epsilon} is outside (0,1]')
    return math.ceil(round(1.0 / epsilon, 9))


@dataclass(frozen=True)
class GridConfig:
    '''
    Evenly spaced grid `{k/delta : k = 0..delta}` with `delta = ceil(1/epsilon)`.
    '''
    epsilon: float
    delta: int
    values: tuple[float, ...]

    @classmethod
    def from_epsilon(cls, epsilon: float) -> 'GridConfig':
        delta = grid_density(epsilon)
        return cls(float(epsilon), delta, tuple(k / delta for k in range(delta + 1)))


@dataclass(frozen=True, order=True)
class SubspaceIndex:
    '''
    A strictly increasing tuple of pixel positions.
    '''
    dims: tuple[int, ...]

    @property
    def t(self) -> int:
        return len(self.dims)


def enumerate_subspaces(n: int, t: int, cap: int, mode: str = 'exhaustive', seed: Any = 0) -> list[SubspaceIndex]:
    '''
    Returns the subspaces of `t` positions out of `n`, in lexicographic order.

    Exhaustive mode yields all C(n,t) subsets and refuses to exceed `cap`.
    Sampled mode yields `cap` distinct subsets drawn from a generator seeded by
    `seed` (all of them when C(n,t) <= cap).
    '''
    if not 1 <= t <= n:
        raise RangeError(f'unable to enumerate subspaces - t={t} is outside [1, {n}]')
    if cap < 1:
        raise RangeError(f'unable to enumerate subspaces - cap {cap} is below one')
    total = math.comb(n, t)
    if mode == 'exhaustive':
        if total > cap:
            raise BudgetError(f'unable to enumerate subspaces - C({n},{t}) = {total} exceeds the cap of {cap}')
        return [SubspaceIndex(d) for d in itertools.combinations(range(n), t)]
    if mode != 'sampled':
        raise RangeError(f'unable to enumerate subspaces - unknown mode "{mode}"')
    if total <= cap:
        return [SubspaceIndex(d) for d in itertools.combinations(range(n), t)]
    rng = np.random.default_rng(seed)
    if total <= 4 * cap and total <= 1_000_000:
        everything = list(itertools.combinations(range(n), t))
        picked = rng.choice(total, size=cap, replace=False)
        return [SubspaceIndex(everything[i]) for i in sorted(int(p) for p in picked)]
    chosen: set[tuple[int, ...]] = set()
    while len(chosen) < cap:
        chosen.add(tuple(sorted(int(p) for p in rng.choice(n, size=t, replace=False))))
    return [SubspaceIndex(d) for d in sorted(chosen)]


@dataclass(frozen=True)
class SubspaceSource:
    '''
    Produces the subspace list of each input. Sampled lists are seeded from
    the run seed, the dimension and the input id.
    '''
    cap: int = 1_000_000
    sampling: str = 'exhaustive'
    seed: int = 0

    def subspaces(self, n: int, t: int, input_id: str = '') -> list[SubspaceIndex]:
        seed = [int(self.seed), int(t), zlib.crc32(input_id.encode())]
        return enumerate_subspaces(n, t, self.cap, self.sampling, seed)


def position_values(original: np.ndarray, grid: GridConfig) -> list[np.ndarray]:
    '''
    Returns the candidate channel vectors of one position: the original vector
    first, then every grid value (applied to all channels) that differs from it.
    '''
    out = [original]
    for v in grid.values:
        if not np.all(original == v):
            out.append(np.full_like(original, v))
    return out


def build_candidates(x0: np.ndarray, sub: SubspaceIndex, grid: GridConfig) -> np.ndarray:
    '''
    Returns every candidate of the subspace, original input first, stacked on a
    new leading axis.
    '''
    x0 = np.asarray(x0, dtype=np.float64)
    view = pixel_view(x0)
    choices = [position_values(view[p], grid) for p in sub.dims]
    out = []
    for combo in itertools.product(*choices):
        x = x0.copy()
        xv = pixel_view(x)
        for (p, val) in zip(sub.dims, combo):
            xv[p] = val
        out.append(x)
    return np.stack(out)


# ----- Objectives -----

class ClassObjective:
    '''
    Minimises the confidence of each input's reference class; the objective is
    reached once the predicted class differs from it.
    '''

    def __init__(self, labels: Sequence[int]):
        self.labels = np.asarray(labels, dtype=np.int64).reshape(-1)

    def subset(self, indices: Sequence[int]) -> 'ClassObjective':
        return ClassObjective(self.labels[list(indices)])

    def measure(self, model: Model, batch: np.ndarray, owners: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        conf = model.confidences(batch)
        ref = self.labels[owners]
        scores = conf[np.arange(conf.shape[0]), ref]
        return (scores, np.argmax(conf, axis=1) != ref, conf)


class NeuronObjective:
    '''
    Raises the pre-activation of one hidden neuron; the objective is reached
    once its activation exceeds `threshold`.
    '''

    def __init__(self, layer: int, offset: int, threshold: float = 0.0):
        self.layer = int(layer)
        self.offset = int(offset)
        self.threshold = float(threshold)

    @property
    def neuron(self) -> tuple[int, int]:
        return (self.layer, self.offset)

    def subset(self, indices: Sequence[int]) -> 'NeuronObjective':
        return self

    def measure(self, model: Model, batch: np.ndarray, owners: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not 0 <= self.layer < len(model.layers) or not isinstance(model.layers[self.layer], ReLU):
            raise PreconditionError(f'unable to target neuron {self.layer}:{self.offset} - layer {self.layer} is not a relu layer')
        if self.offset >= math.prod(model.shapes[self.layer]):
            raise RangeError(f'unable to target neuron {self.layer}:{self.offset} - layer {self.layer} has {math.prod(model.shapes[self.layer])} outputs')
        trace = model.trace(batch)
        size = batch.shape[0]
        source = trace[self.layer - 1] if self.layer > 0 else model.check_batch(batch)
        pre = source.reshape(size, -1)[:, self.offset]
        post = trace[self.layer].reshape(size, -1)[:, self.offset]
        conf = trace[-1] if isinstance(model.layers[-1], Softmax) else softmax(trace[-1])
        return (-pre, post > self.threshold, conf)


def measure_rows(model: Model, objective: Any, batch: np.ndarray, owners: np.ndarray,
                 chunk: int = DEFAULT_CHUNK) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    '''
    Evaluates the objective over `batch` in slices of at most `chunk` rows.
    Slicing never changes the per-row results.
    '''
    if batch.shape[0] <= chunk:
        return objective.measure(model, batch, owners)
    parts = [objective.measure(model, batch[a:a + chunk], owners[a:a + chunk]) for a in range(0, batch.shape[0], chunk)]
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


def reaches(model: Model, objective: Any, x: np.ndarray) -> bool:
    '''
    Returns whether a single input reaches the objective.
    '''
    return bool(objective.measure(model, np.asarray(x)[None], np.zeros(1, dtype=np.int64))[1][0])


# ----- Sensitivity -----

@dataclass
class SensitivityBatch:
    '''
    Per-input, per-subspace sensitivities together with what is needed to
    decode the minimising candidate and the first objective-reaching candidate
    of every subspace. `complete` is false when sampling left out some of the
    subspaces of dimension `t`.
    '''
    t: int
    ids: list[str]
    inputs: np.ndarray
    dims: np.ndarray
    table: np.ndarray
    sensitivity: np.ndarray
    choice: np.ndarray
    best_reached: np.ndarray
    best_confidences: np.ndarray
    witness_choice: np.ndarray
    order: np.ndarray
    queries: int = 0
    complete: bool = True
    objective: Any = field(default=None, repr=False)

    def subspace(self, i: int, k: int) -> SubspaceIndex:
        return SubspaceIndex(tuple(int(p) for p in self.dims[i, k]))

    def candidate(self, i: int, k: int, m: int) -> SparsePerturbation:
        '''
        Decodes candidate `m` of subspace `k` of input `i` into the positions it
        actually changes.
        '''
        width = self.table.shape[3]
        digits = np.unravel_index(int(m), (width,) * self.t)
        view = pixel_view(self.inputs[i])
        entries = {}
        for d in range(self.t):
            pos = int(self.dims[i, k, d])
            val = self.table[i, k, d, digits[d]]
            if np.any(val != view[pos]):
                entries[pos] = float(val[0])
        return SparsePerturbation(entries)

    def best(self, i: int, k: int) -> SparsePerturbation:
        return self.candidate(i, k, self.choice[i, k])

    def witness(self, i: int, k: int) -> Optional[SparsePerturbation]:
        if self.witness_choice[i, k] < 0:
            return None
        return self.candidate(i, k, self.witness_choice[i, k])

    def ranked(self, i: int, limit: Optional[int] = None) -> list[SparsePerturbation]:
        '''
        Returns the minimising perturbations of input `i` by descending
        sensitivity.
        '''
        return [self.best(i, int(k)) for k in self.order[i][:limit]]


def value_table(views: np.ndarray, dims: np.ndarray, grid: GridConfig) -> np.ndarray:
    '''
    Returns the candidate channel vectors of every (input, subspace, position)
    as an array `(N, s, t, delta+2, channels)`. Slot 0 holds the original value,
    then the differing grid values ascending; unused trailing slots repeat the
    original value.
    '''
    (count, s, t) = dims.shape
    width = grid.delta + 2
    original = views[np.arange(count)[:, None, None], dims]
    table = np.repeat(original[:, :, :, None, :], width, axis=3)
    values = np.asarray(grid.values)
    same = np.all(original[:, :, :, None, :] == values[None, None, None, :, None], axis=-1)
    shift = np.cumsum(same, axis=-1) - same
    for g in range(values.size):
        idx = np.nonzero(~same[..., g])
        table[idx + (1 + g - shift[..., g][idx],)] = values[g]
    return table


def _sensitivity_block(model: Model, objective: Any, views: np.ndarray, dims: np.ndarray,
                       table: np.ndarray, chunk: int) -> dict:
    '''
    Computes one block of subspaces: assemble the candidate tensor, unfold it
    into a batch, evaluate, fold the scores back and reduce along the
    candidate axis.
    '''
    (count, s, t) = dims.shape
    (n, channels) = views.shape[1:]
    width = table.shape[3]
    size = width ** t
    digits = np.array(list(itertools.product(range(width), repeat=t)), dtype=np.int64)
    cand = np.broadcast_to(views[None, :, None], (size, count, s, n, channels)).copy()
    (mi, ii, ki) = (np.arange(size)[:, None, None], np.arange(count)[None, :, None], np.arange(s)[None, None, :])
    for d in range(t):
        chosen = table[:, :, d][:, :, digits[:, d]].transpose(2, 0, 1, 3)
        cand[mi, ii, ki, dims[None, :, :, d]] = chosen
    # Padded slots repeat the original value; candidates using one are skipped.
    slots = 1 + np.any(table[:, :, :, 1:] != table[:, :, :, :1], axis=-1).sum(axis=-1)
    valid = np.all(digits.T[:, :, None, None] < slots.transpose(2, 0, 1)[:, None], axis=0)
    keep = valid.ravel()
    cand = cand.reshape(size, count, s, n * channels)
    batch = unfold_mode_n(cand, 3).T.reshape((size * count * s,) + model.input_shape)[keep]
    owners = np.broadcast_to(np.arange(count)[None, :, None], (size, count, s)).ravel()[keep]
    (scores, hits, probs) = measure_rows(model, objective, batch, owners, chunk)
    full = np.full(size * count * s, np.inf)
    full[keep] = scores
    y = fold(full.reshape(size, count * s), (size, count, s), 0)
    reached = np.zeros(size * count * s, dtype=bool)
    reached[keep] = hits
    reached = reached.reshape(size, count, s)
    conf = np.zeros((size * count * s, probs.shape[1]))
    conf[keep] = probs
    conf = conf.reshape(size, count, s, -1)
    (v_min, choice) = min_along_first_axis(y)
    any_reached = reached.any(axis=0)
    return {
        'sensitivity':      y[0] - v_min,
        'choice':           choice,
        'best_reached':     np.take_along_axis(reached, choice[None], axis=0)[0],
        'best_confidences': np.take_along_axis(conf, choice[None, :, :, None], axis=0)[0],
        'witness_choice':   np.where(any_reached, reached.argmax(axis=0), -1),
        'queries':          int(batch.shape[0])
    }


def compute_sensitivity(model: Model, dataset: Dataset, t: int, grid: GridConfig,
                        source: Optional[SubspaceSource] = None, objective: Any = None,
                        chunk: int = DEFAULT_CHUNK, workers: int = 1) -> SensitivityBatch:
    '''
    Computes the subspace sensitivity of every input and every subspace of
    dimension `t`: the largest decrease of the objective score over the grid
    candidates of the subspace. Without an objective the score is the
    confidence of each input's predicted class.

    Subspaces are processed in blocks holding at most `chunk` candidate rows;
    blocks may run on `workers` threads and are joined in block order, so the
    result does not depend on either setting.
    '''
    dataset = dataset.bind(model.input_shape)
    source = source or SubspaceSource()
    if chunk < 1:
        raise RangeError(f'unable to compute sensitivity - chunk {chunk} is below one')
    count = len(dataset)
    n = model.n_pixels
    queries = 0
    if objective is None:
        objective = ClassObjective([p.label for p in forward_batch(model, dataset.inputs)])
        queries += count
    per_input = [source.subspaces(n, t, i) for i in dataset.ids]
    complete = all(len(subs) == math.comb(n, t) for subs in per_input)
    s = len(per_input[0]) if per_input else 0
    dims = np.array([[sub.dims for sub in subs] for subs in per_input], dtype=np.int64).reshape(count, s, t)
    views = dataset.inputs.reshape(count, n, model.channels)
    table = value_table(views, dims, grid)
    size = table.shape[3] ** t
    block = max(1, chunk // max(1, size * count))
    blocks = [(a, min(a + block, s)) for a in range(0, s, block)]
    if size * count > chunk:
        logging.info(f'Subspace candidates of {count} inputs need {size * count} rows per subspace; evaluating in {math.ceil(size * count / chunk)} chunks each.')
    logging.debug(f'Sensitivity at t={t}: {count} inputs, {s} subspaces, {size} candidates each, {len(blocks)} blocks on {workers} workers.')
    parts = Parallel(n_jobs=workers, prefer='threads')(
        delayed(_sensitivity_block)(model, objective, views, dims[:, a:b], table[:, a:b], chunk) for (a, b) in blocks
    )
    join = lambda key, shape: np.concatenate([p[key] for p in parts], axis=1) if parts else np.zeros(shape)
    sensitivity = join('sensitivity', (count, s))
    order = np.array([np.argsort(-row, kind='stable') for row in sensitivity], dtype=np.int64).reshape(count, s)
    return SensitivityBatch(
        t                = t,
        ids              = list(dataset.ids),
        inputs           = dataset.inputs,
        dims             = dims,
        table            = table,
        sensitivity      = sensitivity,
        choice           = join('choice', (count, s)).astype(np.int64),
        best_reached     = join('best_reached', (count, s)).astype(bool),
        best_confidences = join('best_confidences', (count, s, model.n_classes)),
        witness_choice   = join('witness_choice', (count, s)).astype(np.int64),
        order            = order,
        queries          = queries + sum(p['queries'] for p in parts),
        complete         = complete,
        objective        = objective
    )
