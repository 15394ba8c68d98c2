'''
Tests subspace enumeration and batched sensitivity.
'''

import math
import tracemalloc

import numpy as np
import pytest

from saferad import subspace
from saferad.errors import BudgetError, PreconditionError, RangeError
from saferad.modelio import Dataset
from saferad.nn import Dense, Model, ReLU, Softmax
from saferad.subspace import ClassObjective, GridConfig, NeuronObjective, SubspaceIndex, SubspaceSource
from saferad.tensor import SparsePerturbation

from . import constant_model, dense_model, logit_model, naive_sensitivity, random_input, random_model, reader_model


def test_grid_config():
    '''
    Tests subspace.GridConfig.from_epsilon()
    '''
    assert GridConfig.from_epsilon(1.0).values  == (0.0, 1.0)
    assert GridConfig.from_epsilon(0.5).values  == (0.0, 0.5, 1.0)
    assert GridConfig.from_epsilon(0.25).delta  == 4
    assert GridConfig.from_epsilon(0.3).delta   == 4
    assert GridConfig.from_epsilon(0.1).delta   == 10
    with pytest.raises(RangeError):
        GridConfig.from_epsilon(0.0)
    with pytest.raises(RangeError):
        GridConfig.from_epsilon(1.5)


def test_enumerate_subspaces():
    '''
    Tests subspace.enumerate_subspaces()
    '''
    dims = lambda subs: [s.dims for s in subs]
    assert dims(subspace.enumerate_subspaces(3, 1, 10)) == [(0,), (1,), (2,)]
    assert dims(subspace.enumerate_subspaces(4, 2, 10)) == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    assert dims(subspace.enumerate_subspaces(4, 4, 1))  == [(0, 1, 2, 3)]
    with pytest.raises(BudgetError):
        subspace.enumerate_subspaces(4, 2, 5)
    with pytest.raises(RangeError):
        subspace.enumerate_subspaces(3, 4, 10)
    with pytest.raises(RangeError):
        subspace.enumerate_subspaces(3, 0, 10)
    with pytest.raises(RangeError):
        subspace.enumerate_subspaces(3, 1, 0)


def test_enumerate_subspaces_sampled():
    '''
    Tests subspace.enumerate_subspaces() in sampled mode
    '''
    a = subspace.enumerate_subspaces(10, 3, 7, 'sampled', [1, 3, 0])
    b = subspace.enumerate_subspaces(10, 3, 7, 'sampled', [1, 3, 0])
    assert a                   == b
    assert len(set(a))         == 7
    assert a                   == sorted(a)
    assert all(s.t == 3 and list(s.dims) == sorted(s.dims) for s in a)
    large = subspace.enumerate_subspaces(40, 5, 20, 'sampled', 9)
    assert len(set(large))     == 20
    assert subspace.enumerate_subspaces(4, 2, 10, 'sampled', 0) == subspace.enumerate_subspaces(4, 2, 10)


def test_subspace_source():
    '''
    Tests subspace.SubspaceSource.subspaces()
    '''
    source = SubspaceSource(cap=5, sampling='sampled', seed=3)
    assert source.subspaces(12, 2, '7') == source.subspaces(12, 2, '7')
    assert len(source.subspaces(12, 2, '8')) == 5
    assert len(SubspaceSource().subspaces(12, 2, '7')) == math.comb(12, 2)


def test_build_candidates():
    '''
    Tests subspace.build_candidates()
    '''
    half = GridConfig.from_epsilon(0.5)
    c = subspace.build_candidates(np.array([0.5]), SubspaceIndex((0,)), half)
    assert c[:, 0].tolist()    == [0.5, 0.0, 1.0]
    c = subspace.build_candidates(np.array([0.3]), SubspaceIndex((0,)), half)
    assert c[:, 0].tolist()    == [0.3, 0.0, 0.5, 1.0]
    c = subspace.build_candidates(np.array([0.3, 0.7]), SubspaceIndex((0, 1)), GridConfig.from_epsilon(1.0))
    assert c.shape             == (9, 2)
    assert c[0].tolist()       == [0.3, 0.7]
    assert len({tuple(r) for r in c.tolist()}) == 9
    image = np.full((2, 2, 3), 0.25)
    c = subspace.build_candidates(image, SubspaceIndex((2,)), GridConfig.from_epsilon(1.0))
    assert c.shape             == (3, 2, 2, 3)
    assert c[1, 1, 0].tolist() == [0.0, 0.0, 0.0]
    assert c[2, 1, 0].tolist() == [1.0, 1.0, 1.0]
    assert c[2, 0, 0].tolist() == [0.25, 0.25, 0.25]


def test_compute_sensitivity_constant():
    '''
    Tests subspace.compute_sensitivity() on a constant model
    '''
    sens = subspace.compute_sensitivity(constant_model(), Dataset(np.array([[0.1, 0.2, 0.3, 0.4]])), 2, GridConfig.from_epsilon(0.5))
    assert sens.sensitivity.shape == (1, 6)
    assert np.all(sens.sensitivity == 0.0)
    assert all(sens.best(0, k) == SparsePerturbation() for k in range(6))
    assert np.all(sens.witness_choice == -1)
    assert sens.order[0].tolist() == list(range(6))


def test_compute_sensitivity_logit():
    '''
    Tests subspace.compute_sensitivity() on the one-pixel logit model
    '''
    sens = subspace.compute_sensitivity(logit_model(), Dataset(np.array([[1.0]])), 1, GridConfig.from_epsilon(0.5))
    assert sens.sensitivity[0, 0]   == pytest.approx(math.e / (1 + math.e) - 0.5)
    assert sens.sensitivity[0, 0]   == pytest.approx(0.2311, abs=1e-4)
    assert sens.best(0, 0)          == SparsePerturbation({0: 0.0})
    assert sens.best_reached[0, 0]  == False
    assert sens.best_confidences[0, 0].tolist() == [0.5, 0.5]
    assert sens.queries             == 1 + 3


def test_compute_sensitivity_matches_naive():
    '''
    Tests subspace.compute_sensitivity() against a one-candidate-at-a-time oracle
    '''
    for seed in range(20):
        n = 3 + seed % 6
        model = random_model(seed, n)
        x0 = random_input(seed, n)
        for t in (1, 2):
            for eps in (1.0, 0.5):
                grid = GridConfig.from_epsilon(eps)
                sens = subspace.compute_sensitivity(model, Dataset(x0[None]), t, grid)
                naive = []
                for k in range(sens.dims.shape[1]):
                    dims = tuple(int(d) for d in sens.dims[0, k])
                    (s, best) = naive_sensitivity(model, x0, dims, grid)
                    naive.append(s)
                    assert abs(sens.sensitivity[0, k] - s) <= 1e-9
                    assert sens.best(0, k).entries == best
                expected = sorted(range(len(naive)), key=lambda k: (-sens.sensitivity[0, k], k))
                assert sens.order[0].tolist() == expected
                assert np.all(sens.sensitivity >= 0)


def test_compute_sensitivity_full_subspace():
    '''
    Tests subspace.compute_sensitivity() with every pixel free
    '''
    model = random_model(31, 4)
    x0 = random_input(31, 4)
    grid = GridConfig.from_epsilon(1.0)
    sens = subspace.compute_sensitivity(model, Dataset(x0[None]), 4, grid)
    (s, _) = naive_sensitivity(model, x0, (0, 1, 2, 3), grid)
    assert sens.dims.shape          == (1, 1, 4)
    assert abs(sens.sensitivity[0, 0] - s) <= 1e-9


def test_sensitivity_monotone_in_subspace():
    '''
    Tests that growing a subspace never lowers its sensitivity
    '''
    grid = GridConfig.from_epsilon(0.5)
    for seed in range(5):
        model = random_model(seed + 50, 5)
        x0 = random_input(seed + 50, 5)
        one = subspace.compute_sensitivity(model, Dataset(x0[None]), 1, grid)
        two = subspace.compute_sensitivity(model, Dataset(x0[None]), 2, grid)
        for k in range(two.dims.shape[1]):
            for p in two.dims[0, k]:
                assert one.sensitivity[0, p] <= two.sensitivity[0, k] + 1e-12


def test_compute_sensitivity_chunking():
    '''
    Tests that chunk size and worker count leave subspace.compute_sensitivity() unchanged
    '''
    model = random_model(5, 6)
    inputs = np.stack([random_input(s, 6) for s in range(3)])
    grid = GridConfig.from_epsilon(0.5)
    base = subspace.compute_sensitivity(model, Dataset(inputs), 2, grid)
    for (chunk, workers) in [(7, 1), (50, 3), (1, 2)]:
        other = subspace.compute_sensitivity(model, Dataset(inputs), 2, grid, chunk=chunk, workers=workers)
        assert np.array_equal(other.sensitivity, base.sensitivity)
        assert np.array_equal(other.choice, base.choice)
        assert np.array_equal(other.order, base.order)
        assert np.array_equal(other.witness_choice, base.witness_choice)
        assert other.queries == base.queries
    with pytest.raises(RangeError):
        subspace.compute_sensitivity(model, Dataset(inputs), 1, grid, chunk=0)


def test_compute_sensitivity_queries():
    '''
    Tests that subspace.compute_sensitivity() evaluates every distinct candidate once
    '''
    grid = GridConfig.from_epsilon(0.25)
    sens = subspace.compute_sensitivity(reader_model(4, 0), Dataset(np.ones((1, 4))), 2, grid)
    assert sens.queries == 1 + 6 * 25
    x0 = np.array([0.3, 1.0, 0.3])
    sens = subspace.compute_sensitivity(reader_model(3, 0), Dataset(x0[None]), 1, GridConfig.from_epsilon(0.5))
    assert sens.queries == 1 + 4 + 3 + 4
    for seed in range(5):
        x0 = random_input(seed, 5)
        x0[seed % 5] = 0.3
        sens = subspace.compute_sensitivity(random_model(seed, 5), Dataset(x0[None]), 2, grid, chunk=40, workers=2)
        distinct = sum(len(subspace.build_candidates(x0, sub, grid)) for sub in subspace.enumerate_subspaces(5, 2, 100))
        assert sens.queries == 1 + distinct


def test_compute_sensitivity_complete():
    '''
    Tests that subspace.compute_sensitivity() flags subspace lists left incomplete by sampling
    '''
    dataset = Dataset(np.ones((2, 6)))
    grid = GridConfig.from_epsilon(1.0)
    sampled = SubspaceSource(cap=2, sampling='sampled', seed=1)
    assert subspace.compute_sensitivity(reader_model(6, 5), dataset, 1, grid).complete                    == True
    assert subspace.compute_sensitivity(reader_model(6, 5), dataset, 1, grid, sampled).complete           == False
    assert subspace.compute_sensitivity(reader_model(6, 5), dataset, 6, grid, sampled).complete           == True


def test_compute_sensitivity_memory():
    '''
    Tests that subspace.compute_sensitivity() keeps the memory of a wide dense layer bounded
    '''
    rng = np.random.default_rng(11)
    model = Model('wide', [784], [
        Dense(rng.normal(size=(64, 784)), rng.normal(size=64)),
        ReLU(),
        Dense(rng.normal(size=(10, 64)), rng.normal(size=10)),
        Softmax()
    ])
    x0 = rng.integers(0, 5, size=784) / 4.0
    tracemalloc.start()
    try:
        sens = subspace.compute_sensitivity(model, Dataset(x0[None]), 1, GridConfig.from_epsilon(0.25))
        peak = tracemalloc.get_traced_memory()[1]
    finally:
        tracemalloc.stop()
    assert sens.queries == 1 + 784 * 5
    assert peak         <  256 * 2**20


def test_compute_sensitivity_multichannel():
    '''
    Tests subspace.compute_sensitivity() on three-channel inputs
    '''
    from saferad.nn import Dense, Flatten
    w = np.zeros((2, 12))
    w[1, 3:6] = 1.0
    model = Model('rgb', [2, 2, 3], [Flatten(), Dense(w, np.zeros(2))])
    x0 = np.zeros((2, 2, 3))
    x0[0, 1] = 1.0
    sens = subspace.compute_sensitivity(model, Dataset(x0[None]), 1, GridConfig.from_epsilon(1.0))
    assert sens.sensitivity[0, 1]   > 0
    assert sens.sensitivity[0, [0, 2, 3]].tolist() == [0.0, 0.0, 0.0]
    assert sens.best(0, 1)          == SparsePerturbation({1: 0.0})
    assert sens.order[0, 0]         == 1


def test_neuron_objective():
    '''
    Tests subspace.NeuronObjective.measure()
    '''
    from saferad.nn import ReLU
    model = dense_model('n', 2, [([[1, 0], [0, -1]], [-0.5, 0.2]), ReLU(), ([[1, 1], [0, 0]], [0, 0])])
    batch = np.array([[0.0, 1.0], [1.0, 0.0]])
    (scores, reached, conf) = NeuronObjective(1, 0).measure(model, batch, np.zeros(2, dtype=int))
    assert scores.tolist()       == [0.5, -0.5]
    assert reached.tolist()      == [False, True]
    assert conf.shape            == (2, 2)
    with pytest.raises(PreconditionError):
        NeuronObjective(0, 0).measure(model, batch, np.zeros(2, dtype=int))
    with pytest.raises(RangeError):
        NeuronObjective(1, 5).measure(model, batch, np.zeros(2, dtype=int))
    (scores, reached, _) = ClassObjective([0, 1]).measure(model, batch, np.array([0, 1]))
    assert reached.tolist()      == [False, True]


def test_grid_search_slack():
    '''
    Tests that the grid minimum of a single-pixel subspace stays within
    K * epsilon / 2 of a dense sampling of that pixel
    '''
    from saferad import bounds, nn
    for seed in range(5):
        model = random_model(seed + 70, 4, hidden=(6,))
        x0 = random_input(seed + 70, 4)
        k = nn.lipschitz_upper_bound(model)
        label = int(np.argmax(model.confidences(x0[None])[0]))
        for eps in (1.0, 0.5, 0.25):
            grid = GridConfig.from_epsilon(eps)
            sens = subspace.compute_sensitivity(model, Dataset(x0[None]), 1, grid)
            base = model.confidences(x0[None])[0, label]
            assert bounds.lipschitz_slack(model, grid) == pytest.approx(k * eps / 2)
            for p in range(4):
                values = np.concatenate([np.arange(0.0, 1.0, eps / 50), [1.0, x0[p]], grid.values])
                batch = np.repeat(x0[None], values.size, axis=0)
                batch[:, p] = values
                dense = model.confidences(batch)[:, label].min()
                gap = (base - sens.sensitivity[0, p]) - dense
                assert -1e-9 <= gap <= k * eps / 2 + 1e-9
