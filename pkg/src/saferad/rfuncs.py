#!/usr/bin/env python3
'''
Contains the set of Jinja2 functions available to `saferad` templates.
'''

import math
from typing import Any, Iterable, Optional


def t_fixed(value: Optional[float]) -> str:
    '''
    Formats a number with six decimals, or `null` when absent.
    '''
    if value is None:
        return 'null'
    return f'{float(value):.6f}'


def t_flags(entry: dict) -> str:
    '''
    Returns the status words of a per-input report entry, space-prefixed.
    '''
    words = [w for w in ('skipped', 'converged') if entry.get(w)]
    return ''.join(f' {w}' for w in words)


def t_nullable(value: Any) -> str:
    '''
    Returns `null` for a missing value and the plain string otherwise.
    '''
    return 'null' if value is None else str(value)


def t_positions(positions: Optional[Iterable[int]]) -> str:
    '''
    Formats a list of pixel positions as a comma-separated string.
    '''
    if not positions:
        return '-'
    return ','.join(str(p) for p in positions)


def t_scale255(row: Iterable[float], peak: float) -> list[int]:
    '''
    Linearly scales nonnegative values so that `peak` maps to 255. An all-zero
    map (peak 0) stays all zero.
    '''
    if peak <= 0:
        return [0 for _ in row]
    return [int(math.floor(float(v) / peak * 255.0 + 0.5)) for v in row]
