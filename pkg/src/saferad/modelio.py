#!/usr/bin/env python3
'''
Contains code pertaining to reading models and datasets and to writing
reports, adversarial examples and saliency graymaps.
'''

import contextlib
import csv
import json
import logging
import math
import os
from typing import Any, Optional

import numpy as np

from . import render
from .errors import ParseError, PreconditionError, RangeError, SaferadError, ShapeError, UnsupportedLayerError
from .nn import LAYER_TYPES, Model


# ----- Models -----

def _array(spec: dict, key: str, ndim: int) -> np.ndarray:
    '''
    Fetches a numeric array of the given rank from a layer specification.
    '''
    if not key in spec:
        raise ParseError(f'missing "{key}"')
    try:
        arr = np.asarray(spec[key], dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise ParseError(f'"{key}" is not a rectangular numeric array - {e}')
    if arr.ndim != ndim:
        raise ShapeError(f'"{key}" has rank {arr.ndim}, expected {ndim}')
    return arr


def layer_from_dict(spec: dict) -> Any:
    '''
    Builds one layer from its model-file specification.
    '''
    if not isinstance(spec, dict) or not 'type' in spec:
        raise ParseError('layer specification is not a dictionary with a "type" key')
    kind = spec['type']
    if kind == 'dense':
        return LAYER_TYPES[kind](weights=_array(spec, 'weights', 2), bias=_array(spec, 'bias', 1))
    if kind == 'conv2d':
        return LAYER_TYPES[kind](
            kernels = _array(spec, 'kernels', 4),
            bias    = _array(spec, 'bias', 1),
            stride  = int(spec.get('stride', 1))
        )
    if kind == 'batchnorm':
        return LAYER_TYPES[kind](
            mean     = _array(spec, 'mean', 1),
            variance = _array(spec, 'variance', 1),
            gamma    = _array(spec, 'gamma', 1),
            beta     = _array(spec, 'beta', 1),
            eps      = float(spec.get('eps', 1e-3))
        )
    if kind == 'maxpool':
        window = spec.get('window')
        if not isinstance(window, list) or len(window) != 2:
            raise ParseError('"window" is not a list of two extents')
        return LAYER_TYPES[kind](window=(int(window[0]), int(window[1])))
    if kind == 'dropout':
        return LAYER_TYPES[kind](rate=float(spec.get('rate', 0.0)))
    if kind in ('relu', 'flatten', 'softmax'):
        return LAYER_TYPES[kind]()
    raise UnsupportedLayerError(f'layer type "{kind}" is not supported')


def layer_to_dict(layer: Any) -> dict:
    '''
    Inverse of `layer_from_dict`.
    '''
    spec: dict[str, Any] = {'type': layer.kind}
    if layer.kind == 'dense':
        spec.update(weights=layer.weights.tolist(), bias=layer.bias.tolist())
    elif layer.kind == 'conv2d':
        spec.update(kernels=layer.kernels.tolist(), bias=layer.bias.tolist(), stride=layer.stride)
    elif layer.kind == 'batchnorm':
        spec.update(
            mean     = layer.mean.tolist(),
            variance = layer.variance.tolist(),
            gamma    = layer.gamma.tolist(),
            beta     = layer.beta.tolist(),
            eps      = layer.eps
        )
    elif layer.kind == 'maxpool':
        spec['window'] = list(layer.window)
    elif layer.kind == 'dropout':
        spec['rate'] = layer.rate
    return spec


def model_from_dict(doc: Any, source: str = '<memory>') -> Model:
    '''
    Builds and validates a model from a parsed model document.
    '''
    if not isinstance(doc, dict):
        raise ParseError(f'unable to load model "{source}" - document is not a dictionary')
    if not isinstance(doc.get('input_shape'), list) or not isinstance(doc.get('layers'), list):
        raise ParseError(f'unable to load model "{source}" - "input_shape" and "layers" must be lists')
    layers = []
    for (i, spec) in enumerate(doc['layers']):
        kind = spec.get('type', '?') if isinstance(spec, dict) else '?'
        try:
            layers.append(layer_from_dict(spec))
        except SaferadError as e:
            raise type(e)(f'unable to load model "{source}" - layer {i} ({kind}) {e}')
        except (TypeError, ValueError) as e:
            raise ParseError(f'unable to load model "{source}" - layer {i} ({kind}) {e}')
    name = doc.get('name') or os.path.splitext(os.path.basename(source))[0]
    return Model(name, doc['input_shape'], layers)


def model_to_dict(model: Model) -> dict:
    return {
        'name':        model.name,
        'input_shape': list(model.input_shape),
        'layers':      [layer_to_dict(l) for l in model.layers]
    }


def load_model(path: str) -> Model:
    '''
    Reads a JSON model file and returns the validated model.
    '''
    if not os.path.isfile(path):
        raise ParseError(f'model file "{path}" does not exist')
    logging.debug(f'Reading model file "{path}"...')
    try:
        with open(path, 'r') as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f'unable to parse model file "{path}" - {e}')
    except OSError as e:
        raise ParseError(f'unable to open model file "{path}" - {e}')
    model = model_from_dict(doc, path)
    logging.info(f'Loaded model "{model.name}" with {len(model.layers)} layers from "{path}".')
    return model


def save_model(path: str, model: Model):
    '''
    Writes `model` as a JSON model file.
    '''
    _write_text(path, json.dumps(model_to_dict(model), indent=2) + '\n')


# ----- Datasets -----

class Dataset:
    '''
    A list of inputs in [0,1]^n with optional labels and stable ids.

    A dataset loaded without an input shape keeps its raw rows until `bind`
    reshapes them; whether a row carries a label is only known at that point.
    '''

    def __init__(self, inputs: Optional[np.ndarray] = None, labels: Optional[list[Optional[int]]] = None,
                 ids: Optional[list[str]] = None, rows: Optional[list[tuple[int, list[float]]]] = None,
                 source: str = '<memory>'):
        self.source = source
        self._rows = rows
        if inputs is None:
            self.inputs = None
            self.labels = None
            self.ids = [str(r) for (r, _) in (rows or [])]
            return
        self.inputs = np.ascontiguousarray(np.asarray(inputs, dtype=np.float64))
        count = self.inputs.shape[0]
        self.labels = list(labels) if labels is not None else [None] * count
        self.ids = list(ids) if ids is not None else [str(i + 1) for i in range(count)]
        if len(self.labels) != count or len(self.ids) != count:
            raise ShapeError('unable to build dataset - inputs, labels and ids differ in length')

    @property
    def bound(self) -> bool:
        return self.inputs is not None

    def __len__(self) -> int:
        return len(self.ids)

    def bind(self, input_shape: tuple[int, ...]) -> 'Dataset':
        '''
        Returns the dataset reshaped to `input_shape`, validating row lengths
        and value ranges.
        '''
        input_shape = tuple(input_shape)
        if self.bound:
            if self.inputs.shape[1:] != input_shape:
                raise ShapeError(
                    f'unable to bind dataset "{self.source}" - inputs of shape {list(self.inputs.shape[1:])} do not match {list(input_shape)}'
                )
            return self
        n = math.prod(input_shape)
        (inputs, labels) = ([], [])
        for (row_number, values) in self._rows or []:
            if len(values) == n + 1:
                label = values[0]
                if not float(label).is_integer() or label < 0:
                    raise ParseError(f'unable to parse dataset "{self.source}" - row {row_number}: label {label} is not a class index')
                labels.append(int(label))
                pixels = values[1:]
            elif len(values) == n:
                labels.append(None)
                pixels = values
            else:
                raise ShapeError(
                    f'unable to parse dataset "{self.source}" - row {row_number}: {len(values)} values do not match {n} pixels'
                )
            for v in pixels:
                if not 0.0 <= v <= 1.0:
                    raise RangeError(f'unable to parse dataset "{self.source}" - row {row_number}: value {v} is outside [0,1]')
            inputs.append(pixels)
        arr = np.asarray(inputs, dtype=np.float64).reshape((len(inputs),) + input_shape)
        return Dataset(arr, labels, self.ids, source=self.source)

    def check_labels(self, n_classes: int):
        '''
        Verifies that every label names one of `n_classes` classes.
        '''
        for (i, label) in zip(self.ids, self.labels or []):
            if label is not None and label >= n_classes:
                raise RangeError(f'unable to use dataset "{self.source}" - input {i}: label {label} is not below {n_classes}')

    def subset(self, indices: list[int]) -> 'Dataset':
        if not self.bound:
            raise PreconditionError('unable to subset dataset - bind it to an input shape first')
        return Dataset(
            self.inputs[list(indices)],
            [self.labels[i] for i in indices],
            [self.ids[i] for i in indices],
            source=self.source
        )


def load_dataset(path: str, input_shape: Optional[tuple[int, ...]] = None) -> Dataset:
    '''
    Reads a CSV dataset with rows `label,p1,...,pn` or `p1,...,pn`. Blank lines
    are ignored and an empty file yields an empty dataset.
    '''
    if not os.path.isfile(path):
        raise ParseError(f'dataset file "{path}" does not exist')
    logging.debug(f'Reading dataset file "{path}"...')
    rows = []
    try:
        with open(path, 'r', newline='') as f:
            for (row_number, record) in enumerate(csv.reader(f), start=1):
                if not record or all(not c.strip() for c in record):
                    continue
                try:
                    rows.append((row_number, [float(c) for c in record]))
                except ValueError as e:
                    raise ParseError(f'unable to parse dataset "{path}" - row {row_number}: {e}')
    except OSError as e:
        raise ParseError(f'unable to open dataset file "{path}" - {e}')
    dataset = Dataset(rows=rows, source=path)
    logging.info(f'Loaded {len(rows)} rows from "{path}".')
    if input_shape is not None:
        return dataset.bind(input_shape)
    return dataset


# ----- Writers -----

def _write_text(path: str, text: str):
    '''
    Writes `text` to `path` through a temporary file so readers never observe
    a partially written document.
    '''
    parent = os.path.dirname(path)
    tmp = f'{path}.tmp'
    try:
        if parent and not os.path.isdir(parent):
            os.makedirs(parent)
        with open(tmp, 'w') as f:
            f.write(text)
        os.replace(tmp, path)
    except OSError as e:
        raise SaferadError(f'unable to write "{path}" - {e}')
    finally:
        if os.path.exists(tmp):
            with contextlib.suppress(OSError):
                os.remove(tmp)


def _number(value: Any, nullable: bool = False) -> bool:
    if value is None:
        return nullable
    return isinstance(value, (int, float)) and not isinstance(value, bool)


REPORT_INPUT_FIELDS = {
    'id':                   lambda v: isinstance(v, str),
    'label':                lambda v: v is None or (isinstance(v, int) and not isinstance(v, bool)),
    'predicted':            lambda v: isinstance(v, int) and not isinstance(v, bool),
    'lower':                lambda v: isinstance(v, int) and not isinstance(v, bool),
    'upper':                lambda v: v is None or (isinstance(v, int) and not isinstance(v, bool)),
    'upper_safe':           lambda v: isinstance(v, int) and not isinstance(v, bool),
    'converged':            lambda v: isinstance(v, bool),
    'skipped':              lambda v: isinstance(v, bool),
    'u_c':                  lambda v: _number(v, nullable=True),
    'u_r':                  lambda v: _number(v, nullable=True),
    'adversarial_distance': lambda v: v is None or (isinstance(v, int) and not isinstance(v, bool)),
    'perturbed_positions':  lambda v: v is None or (isinstance(v, list) and all(isinstance(p, int) for p in v))
}
REPORT_AGGREGATE_FIELDS = {
    'mean_lower':      lambda v: _number(v, nullable=True),
    'mean_upper':      lambda v: _number(v, nullable=True),
    'global_u_c':      lambda v: _number(v, nullable=True),
    'global_u_r':      lambda v: _number(v, nullable=True),
    'queries':         lambda v: isinstance(v, int) and not isinstance(v, bool),
    'wall_time':       lambda v: _number(v, nullable=True),
    'lipschitz_slack': lambda v: _number(v, nullable=True),
    'evaluated':       lambda v: isinstance(v, int) and not isinstance(v, bool),
    'skipped':         lambda v: isinstance(v, int) and not isinstance(v, bool),
    'converged':       lambda v: isinstance(v, int) and not isinstance(v, bool)
}
REPORT_FIELDS = {
    'iteration': lambda v: isinstance(v, int) and not isinstance(v, bool),
    'epsilon':   lambda v: _number(v),
    'mode':      lambda v: v in ('strict', 'paper'),
    'sampling':  lambda v: v in ('exhaustive', 'sampled'),
    'inputs':    lambda v: isinstance(v, list),
    'aggregate': lambda v: isinstance(v, dict)
}


def validate_report(doc: Any):
    '''
    Checks a report document against the report schema, raising a `ParseError`
    that names the first offending field.
    '''
    if not isinstance(doc, dict):
        raise ParseError('report document is not a dictionary')
    for (fields, section, where) in [(REPORT_FIELDS, doc, 'report')] + \
            [(REPORT_INPUT_FIELDS, e, f'inputs[{i}]') for (i, e) in enumerate(doc.get('inputs') or [])] + \
            [(REPORT_AGGREGATE_FIELDS, doc.get('aggregate'), 'aggregate')]:
        if not isinstance(section, dict):
            raise ParseError(f'report field "{where}" is not a dictionary')
        for (key, check) in fields.items():
            if not key in section:
                raise ParseError(f'report field "{where}.{key}" is missing')
            if not check(section[key]):
                raise ParseError(f'report field "{where}.{key}" has invalid value {section[key]!r}')


def write_report(path: str, report: Any):
    '''
    Validates and writes an anytime report document.
    '''
    doc = report.to_dict() if hasattr(report, 'to_dict') else report
    validate_report(doc)
    logging.debug(f'Writing report "{path}"...')
    _write_text(path, json.dumps(doc, indent=2) + '\n')


def write_coverage(path: str, report: Any):
    '''
    Writes a coverage report document.
    '''
    doc = report.to_dict() if hasattr(report, 'to_dict') else report
    logging.debug(f'Writing coverage report "{path}"...')
    _write_text(path, json.dumps(doc, indent=2) + '\n')


def write_saliency(path: str, saliency_map: Any):
    '''
    Writes a saliency map as an ASCII PGM graymap, scaled linearly so that the
    largest value maps to 255.
    '''
    values = np.asarray(getattr(saliency_map, 'values', saliency_map), dtype=np.float64)
    rows = values.reshape(1, -1) if values.ndim == 1 else values
    if rows.ndim != 2:
        raise ShapeError(f'unable to write saliency map - shape {list(values.shape)} is not one or two dimensional')
    text = render.render(
        'saliency.pgm.j2',
        width  = rows.shape[1],
        height = rows.shape[0],
        rows   = rows.tolist(),
        peak   = float(rows.max()) if rows.size else 0.0
    )
    _write_text(path, text)


def dataset_rows(inputs: list[np.ndarray], labels: Optional[list[Optional[int]]] = None) -> list[list[str]]:
    '''
    Formats inputs as dataset rows; values use the shortest exact float text.
    '''
    labels = labels if labels is not None else [None] * len(inputs)
    rows = []
    for (x, label) in zip(inputs, labels):
        row = [repr(float(v)) for v in np.asarray(x, dtype=np.float64).ravel()]
        rows.append(row if label is None else [str(int(label))] + row)
    return rows


def write_adversarial(path: str, x: Any, label: Optional[int] = None, append: bool = False):
    '''
    Writes one input (or a list of inputs) as dataset rows.
    '''
    inputs = x if isinstance(x, list) else [x]
    labels = label if isinstance(label, list) else [label] * len(inputs)
    parent = os.path.dirname(path)
    try:
        if parent and not os.path.isdir(parent):
            os.makedirs(parent)
        with open(path, 'a' if append else 'w', newline='') as f:
            csv.writer(f, lineterminator='\n').writerows(dataset_rows(inputs, labels))
    except OSError as e:
        raise SaferadError(f'unable to write "{path}" - {e}')


def write_tests(path: str, tests: list[Any]):
    '''
    Appends generated test inputs to a dataset file.
    '''
    if tests:
        write_adversarial(path, [t.input for t in tests], append=True)
