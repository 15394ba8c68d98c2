#!/usr/bin/env python3
'''
Contains the layered feed-forward classifier and its batched inference.

Every layer consumes and produces batches whose first axis is the batch axis.
Reductions (dense rows, convolution windows, softmax sums) always run over the
contiguous last axis of an explicitly materialised array, so the arithmetic
performed for one input does not depend on how many other inputs share its
batch.
'''

import logging
import math
from dataclasses import dataclass, field
from typing import Any, ClassVar, Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import RangeError, ShapeError, UnsupportedLayerError

NeuronId = tuple[int, int]

# Largest product, in elements, a dense or convolution layer materialises at once.
PRODUCT_BUDGET = 1 << 22


def contract(x: np.ndarray, weights: np.ndarray) -> np.ndarray:
    '''
    Returns `(x[..., None, :] * weights).sum(axis=-1)` for `x` of shape
    `(..., k)` and `weights` of shape `(m, k)`.

    Leading rows and outputs are sliced so that no product exceeds
    PRODUCT_BUDGET elements. Each output is still summed over the contiguous
    last axis of its own product, so slicing never changes a result.
    '''
    (m, k) = weights.shape
    rows = x.reshape(-1, k)
    out = np.empty((rows.shape[0], m))
    step_m = max(1, min(m, PRODUCT_BUDGET // max(1, k)))
    step_r = max(1, PRODUCT_BUDGET // max(1, step_m * k))
    for a in range(0, rows.shape[0], step_r):
        for c in range(0, m, step_m):
            out[a:a + step_r, c:c + step_m] = (rows[a:a + step_r, None, :] * weights[None, c:c + step_m, :]).sum(axis=-1)
    return out.reshape(x.shape[:-1] + (m,))


@dataclass(frozen=True, eq=False)
class Dense:
    '''
    Fully-connected layer computing `W x + b` with `W` of shape m_out x m_in.
    '''
    weights: np.ndarray
    bias: np.ndarray
    kind: ClassVar[str] = 'dense'

    def __post_init__(self):
        if self.weights.ndim != 2:
            raise ShapeError('weights must be a matrix')
        if self.bias.shape != (self.weights.shape[0],):
            raise ShapeError(f'bias length {self.bias.size} does not match {self.weights.shape[0]} weight rows')

    def output_shape(self, shape: tuple) -> tuple:
        if shape != (self.weights.shape[1],):
            raise ShapeError(f'expects a flat input of {self.weights.shape[1]} values, got shape {list(shape)}')
        return (self.weights.shape[0],)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return contract(x, self.weights) + self.bias

    def lipschitz(self) -> float:
        return float(np.abs(self.weights).sum(axis=1).max())


@dataclass(frozen=True, eq=False)
class Conv2D:
    '''
    Valid-padding convolution over `[h, w, c]` inputs with kernels laid out as
    `[kh, kw, c_in, c_out]`.
    '''
    kernels: np.ndarray
    bias: np.ndarray
    stride: int = 1
    kind: ClassVar[str] = 'conv2d'

    def __post_init__(self):
        if self.kernels.ndim != 4:
            raise ShapeError('kernels must be laid out as [kh][kw][c_in][c_out]')
        if self.bias.shape != (self.kernels.shape[3],):
            raise ShapeError(f'bias length {self.bias.size} does not match {self.kernels.shape[3]} output channels')
        if self.stride < 1:
            raise RangeError(f'stride {self.stride} is below one')

    def output_shape(self, shape: tuple) -> tuple:
        (kh, kw, cin, cout) = self.kernels.shape
        if len(shape) != 3 or shape[2] != cin:
            raise ShapeError(f'expects [h, w, {cin}] inputs, got shape {list(shape)}')
        if shape[0] < kh or shape[1] < kw:
            raise ShapeError(f'kernel {kh}x{kw} does not fit input {shape[0]}x{shape[1]}')
        return ((shape[0] - kh) // self.stride + 1, (shape[1] - kw) // self.stride + 1, cout)

    def forward(self, x: np.ndarray) -> np.ndarray:
        (kh, kw, cin, cout) = self.kernels.shape
        windows = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::self.stride, ::self.stride]
        (b, ho, wo) = windows.shape[:3]
        patches = windows.transpose(0, 1, 2, 4, 5, 3).reshape(b, ho, wo, kh * kw * cin)
        return contract(patches, self.kernels.reshape(kh * kw * cin, cout).T) + self.bias

    def lipschitz(self) -> float:
        return float(np.abs(self.kernels).sum(axis=(0, 1, 2)).max())


@dataclass(frozen=True, eq=False)
class ReLU:
    kind: ClassVar[str] = 'relu'

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        return np.maximum(x, 0.0)

    def lipschitz(self) -> float:
        return 1.0


@dataclass(frozen=True, eq=False)
class BatchNorm:
    '''
    Inference-time batch normalisation over the last (channel) axis.
    '''
    mean: np.ndarray
    variance: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-3
    kind: ClassVar[str] = 'batchnorm'

    def __post_init__(self):
        size = self.mean.shape
        if len(size) != 1 or any(a.shape != size for a in (self.variance, self.gamma, self.beta)):
            raise ShapeError('mean, variance, gamma and beta must be vectors of one length')
        if np.any(self.variance + self.eps <= 0):
            raise RangeError('variance + eps must be positive')

    def output_shape(self, shape: tuple) -> tuple:
        if shape[-1] != self.mean.size:
            raise ShapeError(f'expects {self.mean.size} channels on the last axis, got shape {list(shape)}')
        return shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / np.sqrt(self.variance + self.eps) * self.gamma + self.beta

    def lipschitz(self) -> float:
        return float(np.max(np.abs(self.gamma) / np.sqrt(self.variance + self.eps)))


@dataclass(frozen=True, eq=False)
class MaxPool:
    '''
    Non-overlapping max pooling over `[h, w, c]` inputs; ragged borders are
    dropped.
    '''
    window: tuple[int, int]
    kind: ClassVar[str] = 'maxpool'

    def __post_init__(self):
        if len(self.window) != 2 or min(self.window) < 1:
            raise RangeError(f'window {list(self.window)} must hold two positive extents')

    def output_shape(self, shape: tuple) -> tuple:
        (ph, pw) = self.window
        if len(shape) != 3 or shape[0] < ph or shape[1] < pw:
            raise ShapeError(f'window {ph}x{pw} does not fit input shape {list(shape)}')
        return (shape[0] // ph, shape[1] // pw, shape[2])

    def forward(self, x: np.ndarray) -> np.ndarray:
        (ph, pw) = self.window
        (b, h, w, c) = x.shape
        (ho, wo) = (h // ph, w // pw)
        return x[:, :ho * ph, :wo * pw].reshape(b, ho, ph, wo, pw, c).max(axis=(2, 4))

    def lipschitz(self) -> float:
        return 1.0


@dataclass(frozen=True, eq=False)
class Flatten:
    kind: ClassVar[str] = 'flatten'

    def output_shape(self, shape: tuple) -> tuple:
        return (math.prod(shape),)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(x.shape[0], -1)

    def lipschitz(self) -> float:
        return 1.0


@dataclass(frozen=True, eq=False)
class Dropout:
    '''
    Identity at inference time; the rate is only kept for round-trips.
    '''
    rate: float = 0.0
    kind: ClassVar[str] = 'dropout'

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise RangeError(f'rate {self.rate} is outside [0,1)')

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        return x

    def lipschitz(self) -> float:
        return 1.0


@dataclass(frozen=True, eq=False)
class Softmax:
    kind: ClassVar[str] = 'softmax'

    def output_shape(self, shape: tuple) -> tuple:
        if len(shape) != 1:
            raise ShapeError(f'expects a flat input, got shape {list(shape)}')
        return shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        return softmax(x)


LAYER_TYPES = {
    cls.kind: cls for cls in (Dense, Conv2D, ReLU, BatchNorm, MaxPool, Flatten, Dropout, Softmax)
}


def softmax(z: np.ndarray) -> np.ndarray:
    '''
    Row-wise softmax over the last axis.
    '''
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True)
class Prediction:
    '''
    Post-softmax confidences of one input and the smallest index attaining
    their maximum.
    '''
    confidences: np.ndarray = field(compare=False)
    label: int


class Model:
    '''
    A layered feed-forward classifier. Instances are validated on construction
    and never mutated afterwards, so they may be shared between threads.
    '''

    def __init__(self, name: str, input_shape: list[int], layers: list[Any]):
        self.name = name
        self.input_shape = tuple(int(s) for s in input_shape)
        self.layers = tuple(layers)
        if len(self.input_shape) not in (1, 3) or min(self.input_shape, default=0) < 1:
            raise ShapeError(f'unable to build model "{name}" - input shape {list(self.input_shape)} must be [n] or [h, w, c]')
        shapes = []
        shape = self.input_shape
        for (i, layer) in enumerate(self.layers):
            if not hasattr(layer, 'forward') or not hasattr(layer, 'output_shape'):
                raise UnsupportedLayerError(f'unable to build model "{name}" - layer {i} is not a supported layer')
            if isinstance(layer, Softmax) and i != len(self.layers) - 1:
                raise ShapeError(f'unable to build model "{name}" - layer {i} (softmax) must be the final layer')
            try:
                shape = layer.output_shape(shape)
            except ShapeError as e:
                raise ShapeError(f'unable to build model "{name}" - layer {i} ({layer.kind}) {e}')
            shapes.append(shape)
        if len(shape) != 1 or shape[0] < 2:
            raise ShapeError(f'unable to build model "{name}" - final output shape {list(shape)} is not a vector of at least two class scores')
        self.shapes = tuple(shapes)
        self.n_classes = shape[0]
        logging.debug(f'Built model "{name}" with layer output shapes {[list(s) for s in shapes]}.')

    @property
    def n_pixels(self) -> int:
        '''
        The number of spatial positions; one L0 unit each.
        '''
        if len(self.input_shape) == 1:
            return self.input_shape[0]
        return self.input_shape[0] * self.input_shape[1]

    @property
    def channels(self) -> int:
        return 1 if len(self.input_shape) == 1 else self.input_shape[2]

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return self.input_shape[:2] if len(self.input_shape) == 3 else self.input_shape

    @property
    def body(self) -> tuple:
        '''
        The layers up to (excluding) a final softmax.
        '''
        if self.layers and isinstance(self.layers[-1], Softmax):
            return self.layers[:-1]
        return self.layers

    def check_batch(self, batch: np.ndarray) -> np.ndarray:
        batch = np.asarray(batch, dtype=np.float64)
        if batch.shape[1:] != self.input_shape:
            raise ShapeError(
                f'unable to evaluate model "{self.name}" - batch shape {list(batch.shape)} does not match input shape {list(self.input_shape)}'
            )
        if not np.all(np.isfinite(batch)):
            raise RangeError(f'unable to evaluate model "{self.name}" - batch contains non-finite values')
        return batch

    def trace(self, batch: np.ndarray) -> list[np.ndarray]:
        '''
        Returns the batched output of every layer, in layer order.
        '''
        x = self.check_batch(batch)
        outputs = []
        for layer in self.layers:
            x = layer.forward(x)
            outputs.append(x)
        return outputs

    def logits(self, batch: np.ndarray) -> np.ndarray:
        x = self.check_batch(batch)
        for layer in self.body:
            x = layer.forward(x)
        return x

    def confidences(self, batch: np.ndarray) -> np.ndarray:
        return softmax(self.logits(batch))

    def neurons(self) -> list[NeuronId]:
        '''
        Returns the ids of every hidden neuron: the outputs of relu layers.
        '''
        ids = []
        for (i, layer) in enumerate(self.layers):
            if isinstance(layer, ReLU):
                ids.extend((i, off) for off in range(math.prod(self.shapes[i])))
        return ids


def forward_batch(model: Model, batch: np.ndarray) -> list[Prediction]:
    '''
    Classifies every input of `batch` (first axis = batch axis).
    '''
    conf = model.confidences(batch)
    return [Prediction(confidences=c, label=int(np.argmax(c))) for c in conf]


def neuron_values(model: Model, trace: list[np.ndarray], batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    '''
    Returns the `(pre, post)` activation tables of every hidden neuron, shaped
    `(batch, neurons)` and ordered as `model.neurons()`.
    '''
    size = batch.shape[0]
    (pre, post) = ([], [])
    for (i, layer) in enumerate(model.layers):
        if isinstance(layer, ReLU):
            source = trace[i - 1] if i > 0 else batch
            pre.append(source.reshape(size, -1))
            post.append(trace[i].reshape(size, -1))
    if not pre:
        return (np.zeros((size, 0)), np.zeros((size, 0)))
    return (np.concatenate(pre, axis=1), np.concatenate(post, axis=1))


def record_activations(model: Model, x: np.ndarray) -> list[tuple[NeuronId, float]]:
    '''
    Returns `((layer, offset), value)` for every hidden neuron of a single
    input, using post-activation values.
    '''
    batch = model.check_batch(np.asarray(x)[None])
    (_, post) = neuron_values(model, model.trace(batch), batch)
    return list(zip(model.neurons(), (float(v) for v in post[0])))


def record_preactivations(model: Model, x: np.ndarray) -> list[tuple[NeuronId, float]]:
    '''
    Like `record_activations`, but returns the values entering each relu.
    '''
    batch = model.check_batch(np.asarray(x)[None])
    (pre, _) = neuron_values(model, model.trace(batch), batch)
    return list(zip(model.neurons(), (float(v) for v in pre[0])))


def lipschitz_upper_bound(model: Model) -> float:
    '''
    Returns an upper bound on the infinity-norm Lipschitz constant of the
    pre-softmax map: the product of per-layer operator-norm bounds.
    '''
    k = 1.0
    for (i, layer) in enumerate(model.body):
        bound: Optional[Any] = getattr(layer, 'lipschitz', None)
        if bound is None:
            raise UnsupportedLayerError(f'unable to bound layer {i} - no operator-norm bound for "{getattr(layer, "kind", type(layer).__name__)}"')
        k *= bound()
    logging.debug(f'Lipschitz upper bound of "{model.name}": {k}')
    return k
