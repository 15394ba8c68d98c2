#!/usr/bin/env python3
'''
Contains the dense tensor helpers and the sparse perturbation algebra.

Dense tensors are row-major `numpy.ndarray` objects of `float64`. Sparse
perturbations map a spatial pixel position (0-based, row-major over the
spatial axes) to the value every channel of that position is set to.
'''

import math
from typing import Iterator, Mapping, Optional

import numpy as np

from .errors import RangeError, ShapeError


def as_tensor(data, shape: Optional[list[int]] = None) -> np.ndarray:
    '''
    Returns `data` as a contiguous `float64` tensor, optionally reshaped to
    `shape`. Every extent must be at least one and the element count must
    match the requested shape.
    '''
    arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
    if shape is not None:
        shape = [int(s) for s in shape]
        if any(s < 1 for s in shape):
            raise ShapeError(f'unable to build tensor - shape {shape} has an extent below one')
        if arr.size != math.prod(shape):
            raise ShapeError(f'unable to build tensor - {arr.size} elements do not fill shape {shape}')
        arr = arr.reshape(shape)
    if arr.ndim == 0 or any(s < 1 for s in arr.shape):
        raise ShapeError(f'unable to build tensor - shape {list(arr.shape)} has an extent below one')
    return arr


def unfold_mode_n(t: np.ndarray, n: int) -> np.ndarray:
    '''
    Returns the mode-n unfolding of `t`: element (i_0, ..., i_{N-1}) lands in
    row i_n, at the column given by the row-major rank of the remaining indices
    in their original axis order.
    '''
    if not 0 <= n < t.ndim:
        raise ShapeError(f'unable to unfold tensor - axis {n} out of range for rank {t.ndim}')
    return np.ascontiguousarray(np.moveaxis(t, n, 0).reshape(t.shape[n], -1))


def fold(m: np.ndarray, target_shape: list[int], n: int) -> np.ndarray:
    '''
    Inverse of `unfold_mode_n`: folds matrix `m` back into `target_shape`
    along axis `n`.
    '''
    target_shape = tuple(int(s) for s in target_shape)
    if not 0 <= n < len(target_shape):
        raise ShapeError(f'unable to fold matrix - axis {n} out of range for rank {len(target_shape)}')
    m = np.asarray(m)
    if m.ndim != 2 or m.size != math.prod(target_shape) or m.shape[0] != target_shape[n]:
        raise ShapeError(
            f'unable to fold matrix - shape {list(m.shape)} does not unfold {list(target_shape)} along axis {n}'
        )
    rest = target_shape[:n] + target_shape[n + 1:]
    return np.ascontiguousarray(np.moveaxis(m.reshape((target_shape[n],) + rest), 0, n))


def min_along_first_axis(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    '''
    Returns the minimum over the first axis together with the index that
    attains it. Ties resolve to the smallest index.
    '''
    if t.ndim < 1:
        raise ShapeError('unable to reduce tensor - rank must be at least one')
    return (np.min(t, axis=0), np.argmin(t, axis=0))


def pixel_view(x: np.ndarray) -> np.ndarray:
    '''
    Returns the `(positions, channels)` view of a single input. Flat inputs
    have one channel per position; `[h, w, c]` inputs have `h*w` positions.
    '''
    if x.ndim == 1:
        return x.reshape(-1, 1)
    return x.reshape(-1, x.shape[-1])


class SparsePerturbation:
    '''
    An immutable assignment of replacement values to pixel positions. Its L0
    weight is the number of positions it touches.
    '''

    __slots__ = ('_entries',)

    def __init__(self, entries: Optional[Mapping[int, float]] = None):
        items = {}
        for (pos, val) in (entries or {}).items():
            pos = int(pos)
            val = float(val)
            if pos < 0:
                raise RangeError(f'unable to create perturbation - position {pos} is negative')
            if not 0.0 <= val <= 1.0:
                raise RangeError(f'unable to create perturbation - value {val} at position {pos} is outside [0,1]')
            items[pos] = val
        self._entries = dict(sorted(items.items()))

    @classmethod
    def from_difference(cls, x0: np.ndarray, x: np.ndarray) -> 'SparsePerturbation':
        '''
        Returns the perturbation that turns `x0` into `x`, assuming every
        changed position received one value across all of its channels.
        '''
        (v0, v) = (pixel_view(np.asarray(x0)), pixel_view(np.asarray(x)))
        if v0.shape != v.shape:
            raise ShapeError(f'unable to compare inputs - shapes {list(v0.shape)} and {list(v.shape)} differ')
        changed = np.flatnonzero(np.any(v0 != v, axis=1))
        return cls({int(p): float(v[p, 0]) for p in changed})

    @property
    def entries(self) -> dict[int, float]:
        return dict(self._entries)

    @property
    def positions(self) -> list[int]:
        return list(self._entries)

    @property
    def weight(self) -> int:
        return len(self._entries)

    def apply(self, x0: np.ndarray) -> np.ndarray:
        '''
        Returns a copy of `x0` with every listed position overwritten.
        '''
        x = np.array(x0, dtype=np.float64, copy=True)
        view = pixel_view(x)
        if self._entries and self.positions[-1] >= view.shape[0]:
            raise RangeError(
                f'unable to apply perturbation - position {self.positions[-1]} exceeds pixel count {view.shape[0]}'
            )
        for (pos, val) in self._entries.items():
            view[pos, :] = val
        return x

    def remove(self, other: 'SparsePerturbation') -> 'SparsePerturbation':
        return sparse_remove(self, other)

    def intersect(self, other: 'SparsePerturbation') -> 'SparsePerturbation':
        return sparse_intersect(self, other)

    def union(self, other: 'SparsePerturbation') -> 'SparsePerturbation':
        return sparse_union(self, other)

    def __contains__(self, pos: object) -> bool:
        return pos in self._entries

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SparsePerturbation):
            return NotImplemented
        return self._entries == other._entries

    def __hash__(self) -> int:
        return hash(tuple(self._entries.items()))

    def __iter__(self) -> Iterator[tuple[int, float]]:
        return iter(self._entries.items())

    def __len__(self) -> int:
        return len(self._entries)

    def __repr__(self) -> str:
        return f'SparsePerturbation({self._entries})'


def sparse_remove(a: SparsePerturbation, b: SparsePerturbation) -> SparsePerturbation:
    '''
    Returns the entries of `a` whose positions are absent from `b`.
    '''
    return SparsePerturbation({p: v for (p, v) in a if p not in b})


def sparse_intersect(a: SparsePerturbation, b: SparsePerturbation) -> SparsePerturbation:
    '''
    Returns the entries present in both operands with equal values.
    '''
    eb = b.entries
    return SparsePerturbation({p: v for (p, v) in a if p in eb and eb[p] == v})


def sparse_union(a: SparsePerturbation, b: SparsePerturbation) -> SparsePerturbation:
    '''
    Returns the merge of both operands. `b` wins on a shared position.
    '''
    merged = a.entries
    merged.update(b.entries)
    return SparsePerturbation(merged)
