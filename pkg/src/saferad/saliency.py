#!/usr/bin/env python3
'''
Contains saliency maps built from single-pixel subspace sensitivities.
'''

from dataclasses import dataclass
from typing import Any

import numpy as np

from .modelio import Dataset
from .nn import Model
from .subspace import DEFAULT_CHUNK, GridConfig, SubspaceSource, compute_sensitivity


@dataclass
class SaliencyMap:
    id: str
    values: np.ndarray

    @property
    def peak(self) -> float:
        return float(self.values.max()) if self.values.size else 0.0

    def rows(self) -> list[list[float]]:
        '''
        The map as a list of rows; a flat map is one row.
        '''
        grid = self.values if self.values.ndim == 2 else self.values.reshape(1, -1)
        return [[float(v) for v in row] for row in grid]


def saliency(model: Model, x0: np.ndarray, grid: GridConfig, objective: Any = None,
             chunk: int = DEFAULT_CHUNK, workers: int = 1, input_id: str = '1') -> SaliencyMap:
    '''
    Returns the t=1 subspace sensitivity of every pixel of `x0`, shaped like
    the spatial input. With a neuron objective the map measures how far one
    pixel can raise that neuron's pre-activation.
    '''
    x0 = np.asarray(x0, dtype=np.float64)
    sens = compute_sensitivity(model, Dataset(x0[None], ids=[input_id]), 1, grid,
                               SubspaceSource(cap=model.n_pixels), objective, chunk, workers)
    return SaliencyMap(input_id, sens.sensitivity[0].reshape(model.spatial_shape))
