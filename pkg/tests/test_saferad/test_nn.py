'''
Tests batched inference.
'''

import math

import numpy as np
import pytest

from saferad import nn
from saferad.errors import RangeError, ShapeError, UnsupportedLayerError
from saferad.nn import BatchNorm, Conv2D, Dense, Dropout, Flatten, MaxPool, Model, ReLU, Softmax

from . import dense_model, logit_model, random_model


def test_forward_batch():
    '''
    Tests nn.forward_batch()
    '''
    identity = dense_model('identity', 2, [(np.eye(2), [0, 0]), Softmax()])
    [p] = nn.forward_batch(identity, np.zeros((1, 2)))
    assert p.confidences.tolist() == [0.5, 0.5]
    assert p.label                == 0
    [q] = nn.forward_batch(logit_model(), np.ones((1, 1)))
    assert q.label                == 0
    assert q.confidences[0]       == pytest.approx(math.e / (1 + math.e))
    assert q.confidences[1]       == pytest.approx(1 / (1 + math.e))


def test_forward_batch_errors():
    '''
    Tests nn.forward_batch() input validation
    '''
    model = logit_model()
    with pytest.raises(ShapeError):
        nn.forward_batch(model, np.zeros((1, 2)))
    with pytest.raises(RangeError):
        nn.forward_batch(model, np.array([[np.nan]]))


def test_batch_invariance():
    '''
    Tests that nn.Model.confidences() does not depend on batch composition
    '''
    model = random_model(7, 6)
    batch = np.random.default_rng(0).random((40, 6))
    whole = model.confidences(batch)
    for i in (0, 13, 39):
        assert np.array_equal(model.confidences(batch[i:i + 1])[0], whole[i])
    assert np.array_equal(np.concatenate([model.confidences(batch[:17]), model.confidences(batch[17:])]), whole)
    assert np.allclose(whole.sum(axis=1), 1.0, atol=1e-5)
    assert np.all(whole > 0)


def test_contract(monkeypatch):
    '''
    Tests that nn.contract() gives identical results under any product budget
    '''
    rng = np.random.default_rng(4)
    (x, w) = (rng.normal(size=(9, 2, 7)), rng.normal(size=(5, 7)))
    whole = nn.contract(x, w)
    assert whole.shape == (9, 2, 5)
    assert np.allclose(whole, x @ w.T)
    model = random_model(8, 6)
    batch = rng.random((30, 6))
    kernels = rng.normal(size=(2, 2, 3, 4))
    conv = Conv2D(kernels, np.zeros(4))
    image = rng.random((3, 4, 4, 3))
    expected = (model.confidences(batch), conv.forward(image))
    for budget in (1, 6, 50):
        monkeypatch.setattr(nn, 'PRODUCT_BUDGET', budget)
        assert np.array_equal(nn.contract(x, w), whole)
        assert np.array_equal(model.confidences(batch), expected[0])
        assert np.array_equal(conv.forward(image), expected[1])


def test_maxpool():
    '''
    Tests nn.MaxPool.forward()
    '''
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 2, 2, 1)
    assert MaxPool((2, 2)).forward(x).ravel().tolist() == [4.0]
    assert MaxPool((2, 2)).output_shape((5, 4, 3))      == (2, 2, 3)
    with pytest.raises(ShapeError):
        MaxPool((3, 3)).output_shape((2, 2, 1))


def test_conv2d():
    '''
    Tests nn.Conv2D.forward()
    '''
    kernels = np.zeros((2, 2, 1, 2))
    kernels[:, :, 0, 0] = 1.0
    kernels[0, 0, 0, 1] = 2.0
    conv = Conv2D(kernels, np.array([0.0, 1.0]))
    x = np.arange(9, dtype=float).reshape(1, 3, 3, 1)
    y = conv.forward(x)
    assert conv.output_shape((3, 3, 1)) == (2, 2, 2)
    assert y.shape                      == (1, 2, 2, 2)
    assert y[0, :, :, 0].tolist()       == [[8.0, 12.0], [20.0, 24.0]]
    assert y[0, :, :, 1].tolist()       == [[1.0, 3.0], [7.0, 9.0]]
    strided = Conv2D(kernels, np.zeros(2), stride=2)
    assert strided.output_shape((5, 5, 1)) == (2, 2, 2)
    assert conv.lipschitz()                == 4.0


def test_batchnorm():
    '''
    Tests nn.BatchNorm.forward()
    '''
    bn = BatchNorm(np.array([1.0]), np.array([3.0]), np.array([2.0]), np.array([0.5]), eps=1.0)
    assert bn.forward(np.array([[3.0]])).tolist() == [[2.5]]
    assert bn.lipschitz()                        == pytest.approx(1.0)
    with pytest.raises(RangeError):
        BatchNorm(np.array([0.0]), np.array([-1.0]), np.array([1.0]), np.array([0.0]))


def test_model_validation():
    '''
    Tests nn.Model construction errors
    '''
    with pytest.raises(ShapeError, match='layer 1'):
        Model('bad', [2], [Dense(np.eye(2), np.zeros(2)), Dense(np.eye(3), np.zeros(3))])
    with pytest.raises(ShapeError, match='softmax'):
        Model('bad', [2], [Softmax(), Dense(np.eye(2), np.zeros(2))])
    with pytest.raises(ShapeError):
        Model('bad', [2], [Dense(np.ones((1, 2)), np.zeros(1))])
    with pytest.raises(ShapeError):
        Model('bad', [2, 2], [Flatten()])


def test_image_model():
    '''
    Tests an image model with every layer type
    '''
    kernels = np.full((2, 2, 3, 2), 0.1)
    model = Model('image', [4, 4, 3], [
        Conv2D(kernels, np.zeros(2)),
        BatchNorm(np.zeros(2), np.ones(2), np.ones(2), np.zeros(2)),
        ReLU(),
        MaxPool((2, 2)),
        Flatten(),
        Dropout(0.5),
        Dense(np.ones((3, 2)), np.zeros(3)),
        Softmax()
    ])
    assert model.n_pixels      == 16
    assert model.channels      == 3
    assert model.spatial_shape == (4, 4)
    assert model.n_classes     == 3
    assert len(model.neurons()) == 3 * 3 * 2
    conf = model.confidences(np.random.default_rng(1).random((5, 4, 4, 3)))
    assert conf.shape          == (5, 3)


def test_record_activations():
    '''
    Tests nn.record_activations() and nn.record_preactivations()
    '''
    model = dense_model('hidden', 2, [([[1, 0], [0, 1]], [-1, 0]), ReLU(), ([[1, 1], [0, 0]], [0, 0])])
    x = np.array([0.0, 1.0])
    assert nn.record_activations(model, x)    == [((1, 0), 0.0), ((1, 1), 1.0)]
    assert nn.record_preactivations(model, x) == [((1, 0), -1.0), ((1, 1), 1.0)]
    zero = dense_model('zero', 2, [(np.zeros((3, 2)), np.zeros(3)), ReLU(), (np.zeros((2, 3)), np.zeros(2))])
    assert all(v == 0.0 for (_, v) in nn.record_activations(zero, x))
    assert model.neurons()                    == [(1, 0), (1, 1)]


def test_lipschitz_upper_bound():
    '''
    Tests nn.lipschitz_upper_bound()
    '''
    assert nn.lipschitz_upper_bound(dense_model('k', 2, [([[2, 0], [0, 3]], [0, 0])]))          == 3.0
    assert nn.lipschitz_upper_bound(dense_model('i', 2, [(np.eye(2), [0, 0]), Softmax()]))      == 1.0
    assert nn.lipschitz_upper_bound(dense_model('r', 2, [ReLU(), (np.eye(2), [0, 0]), ReLU()])) == 1.0

    class Opaque:
        kind = 'opaque'
        def output_shape(self, shape): return shape
        def forward(self, x): return x

    with pytest.raises(UnsupportedLayerError):
        nn.lipschitz_upper_bound(Model('opaque', [2], [Opaque()]))


def test_lipschitz_property():
    '''
    Tests that nn.lipschitz_upper_bound() bounds the change of the logits
    '''
    rng = np.random.default_rng(11)
    for seed in range(3):
        model = random_model(seed, 5)
        k = nn.lipschitz_upper_bound(model)
        (x, y) = (rng.random((1000, 5)), rng.random((1000, 5)))
        change = np.abs(model.logits(x) - model.logits(y)).max(axis=1)
        assert np.all(change <= k * np.abs(x - y).max(axis=1) + 1e-9)
