'''
Module Unit Tests

For the most part this file just contains common resources leveraged by other
test files: toy model builders and brute-force oracles.
'''

import itertools
import os

import numpy as np
import pytest

import saferad
from saferad.nn import Dense, Model, ReLU, Softmax, forward_batch

EXAMPLE_DIR = os.path.normpath(os.path.join(os.path.dirname(__file__), '..', '..', 'example'))


def example(name: str) -> str:
    '''
    Returns the path of a shipped fixture.
    '''
    return os.path.join(EXAMPLE_DIR, name)


def dense_model(name, n, layers):
    '''
    Builds a flat-input model from `(weights, bias)` pairs and layer objects.
    '''
    built = []
    for layer in layers:
        if isinstance(layer, tuple):
            built.append(Dense(np.asarray(layer[0], dtype=float), np.asarray(layer[1], dtype=float)))
        else:
            built.append(layer)
    return Model(name, [n], built)


def constant_model(n=4):
    return dense_model('constant', n, [(np.zeros((2, n)), [0, 0])])


def logit_model():
    '''
    One pixel, logits `(x, 0)`.
    '''
    return dense_model('logit', 1, [([[1], [0]], [0, 0])])


def single_threshold_model():
    '''
    One pixel, logits `(0, 10(x - 0.5))`: class 1 iff x > 0.5.
    '''
    return dense_model('single', 1, [([[0], [10]], [0, -5]), Softmax()])


def threshold_model():
    '''
    Two pixels, class 1 iff x0 + x1 > 1.5.
    '''
    return dense_model('threshold', 2, [([[0, 0], [10, 10]], [0, -15]), Softmax()])


def majority_model():
    '''
    Three pixels, class 0 iff the pixel sum reaches 1.5.
    '''
    return dense_model('majority', 3, [([[10, 10, 10], [0, 0, 0]], [-15, 0]), Softmax()])


def reader_model(n=3, pixel=0):
    '''
    A model whose logits only depend on one pixel.
    '''
    w = np.zeros((2, n))
    w[1, pixel] = 10.0
    return dense_model('reader', n, [(w, [0, -5])])


def random_model(seed, n, hidden=(6, 5), classes=3):
    '''
    A seeded random model with two relu hidden layers.
    '''
    rng = np.random.default_rng(seed)
    layers = []
    width = n
    for h in hidden:
        layers.append((rng.normal(size=(h, width)), rng.normal(scale=0.5, size=h)))
        layers.append(ReLU())
        width = h
    layers.append((rng.normal(size=(classes, width)), rng.normal(scale=0.5, size=classes)))
    return dense_model(f'random-{seed}', n, layers)


def random_input(seed, n):
    return np.random.default_rng(seed + 1000).integers(0, 5, size=n) / 4.0


def other_values(value, grid):
    return [v for v in grid.values if v != value]


def grid_perturbations(x0, grid, weight):
    '''
    Yields every input that differs from flat `x0` in exactly `weight`
    positions, each changed position taking a grid value.
    '''
    for positions in itertools.combinations(range(x0.size), weight):
        for values in itertools.product(*[other_values(x0[p], grid) for p in positions]):
            x = x0.copy()
            x[list(positions)] = values
            yield (positions, x)


def flips(model, x0, xs):
    '''
    Returns which of `xs` are classified differently from `x0`.
    '''
    if not len(xs):
        return np.zeros(0, dtype=bool)
    label = forward_batch(model, x0[None])[0].label
    return np.asarray([p.label != label for p in forward_batch(model, np.stack(xs))])


def oracle_radius(model, x0, grid):
    '''
    The maximum safe radius on the grid by exhaustive enumeration.
    '''
    n = x0.size
    for k in range(1, n + 1):
        xs = [x for (_, x) in grid_perturbations(x0, grid, k)]
        if flips(model, x0, xs).any():
            return k - 1
    return n


def naive_sensitivity(model, x0, dims, grid):
    '''
    Evaluates every candidate of a subspace one at a time; returns the
    sensitivity and the minimising perturbation as `{position: value}`.
    '''
    label = forward_batch(model, x0[None])[0].label
    choices = [[x0[p]] + other_values(x0[p], grid) for p in dims]
    (best, best_value) = (None, None)
    for combo in itertools.product(*choices):
        x = x0.copy()
        x[list(dims)] = combo
        score = model.confidences(x[None])[0, label]
        if best_value is None or score < best_value:
            (best, best_value) = (combo, score)
    base = model.confidences(x0[None])[0, label]
    return (base - best_value, {p: v for (p, v) in zip(dims, best) if v != x0[p]})


# ----- Module-Wide Tests -----
def test_module_name():
    '''
    Tests the name of the module.
    '''
    assert saferad.__name__ == 'saferad'
