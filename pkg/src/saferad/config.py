#!/usr/bin/env python3
'''
Contains code pertaining to run configurations.

A value is taken from the first source that sets it: command-line flag, run
configuration file, `SAFERAD_*` environment variable, built-in default.
'''

import logging
import os
from dataclasses import asdict, dataclass
from typing import Any, Callable, Optional

import yaml

from . import utils
from .errors import SaferadError
from .subspace import GridConfig, SubspaceSource


@dataclass(frozen=True)
class RunConfig:
    model: Optional[str] = None
    data: Optional[str] = None
    epsilon: float = 0.25
    t_max: int = 2
    cap: int = 1_000_000
    sampling: str = 'exhaustive'
    seed: int = 0
    mode: str = 'strict'
    chunk: int = 65536
    workers: int = 1
    threshold: float = 0.0
    budget: Optional[int] = None
    index: Optional[int] = None
    neuron: Optional[tuple[int, int]] = None
    timing: bool = False
    out: Optional[str] = None
    saliency_out: Optional[str] = None
    tests_out: Optional[str] = None

    @property
    def grid(self) -> GridConfig:
        return GridConfig.from_epsilon(self.epsilon)

    @property
    def source(self) -> SubspaceSource:
        return SubspaceSource(cap=self.cap, sampling=self.sampling, seed=self.seed)


def _integer(value: Any) -> int:
    if isinstance(value, bool):
        raise ValueError(f'{value!r} is not an integer')
    if isinstance(value, str):
        value = float(value) if any(c in value for c in '.eE') else int(value)
    if isinstance(value, float):
        if not value.is_integer():
            raise ValueError(f'{value!r} is not an integer')
        value = int(value)
    if not isinstance(value, int):
        raise ValueError(f'{value!r} is not an integer')
    return value


def _number(value: Any) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ValueError(f'{value!r} is not a number')
    return float(value)


def _string(value: Any) -> str:
    if not isinstance(value, str):
        raise ValueError(f'{value!r} is not a string')
    return os.path.expanduser(value)


def _flag(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ('1', 'true', 'yes', 'on', '0', 'false', 'no', 'off'):
        return value.lower() in ('1', 'true', 'yes', 'on')
    raise ValueError(f'{value!r} is not a boolean')


def _neuron(value: Any) -> tuple[int, int]:
    '''
    Accepts `LAYER:OFFSET` or a two-element list.
    '''
    parts = value.split(':') if isinstance(value, str) else value
    if not isinstance(parts, (list, tuple)) or len(parts) != 2:
        raise ValueError(f'{value!r} is not of the form LAYER:OFFSET')
    (layer, offset) = (_integer(parts[0]), _integer(parts[1]))
    if layer < 0 or offset < 0:
        raise ValueError(f'{value!r} names a negative layer or offset')
    return (layer, offset)


def _choice(*options: str) -> Callable[[Any], str]:
    def convert(value: Any) -> str:
        if value not in options:
            raise ValueError(f'{value!r} is not one of {", ".join(options)}')
        return value
    return convert


def _at_least(convert: Callable[[Any], Any], low: float) -> Callable[[Any], Any]:
    def check(value: Any) -> Any:
        value = convert(value)
        if value < low:
            raise ValueError(f'{value!r} is below {low}')
        return value
    return check


def _epsilon(value: Any) -> float:
    value = _number(value)
    if not 0.0 < value <= 1.0:
        raise ValueError(f'{value!r} is outside (0,1]')
    return value


# key -> (converter, environment variable)
FIELDS: dict[str, tuple[Callable[[Any], Any], Optional[str]]] = {
    'model':        (_string,                          'SAFERAD_MODEL'),
    'data':         (_string,                          'SAFERAD_DATA'),
    'epsilon':      (_epsilon,                         'SAFERAD_EPSILON'),
    't_max':        (_at_least(_integer, 1),           'SAFERAD_T_MAX'),
    'cap':          (_at_least(_integer, 1),           'SAFERAD_CAP'),
    'sampling':     (_choice('exhaustive', 'sampled'), 'SAFERAD_SAMPLING'),
    'seed':         (_at_least(_integer, 0),           'SAFERAD_SEED'),
    'mode':         (_choice('strict', 'paper'),       'SAFERAD_MODE'),
    'chunk':        (_at_least(_integer, 1),           'SAFERAD_CHUNK'),
    'workers':      (_at_least(_integer, 1),           'SAFERAD_WORKERS'),
    'threshold':    (_number,                          'SAFERAD_THRESHOLD'),
    'budget':       (_at_least(_integer, 1),           'SAFERAD_BUDGET'),
    'index':        (_at_least(_integer, 0),           None),
    'neuron':       (_neuron,                          None),
    'timing':       (_flag,                            'SAFERAD_TIMING'),
    'out':          (_string,                          'SAFERAD_OUT'),
    'saliency_out': (_string,                          'SAFERAD_SALIENCY_OUT'),
    'tests_out':    (_string,                          'SAFERAD_TESTS_OUT')
}


def convert(key: str, value: Any) -> Any:
    '''
    Converts and checks a single configuration value.
    '''
    if value is None:
        return None
    try:
        return FIELDS[key][0](value)
    except (TypeError, ValueError) as e:
        raise SaferadError(f'invalid value for "{key}" - {e}')


def parse(path: str) -> dict:
    '''
    Recursively parses a run configuration file, merging the files named in its
    `include` list (paths relative to the including file).
    '''
    if not os.path.isfile(path):
        raise SaferadError(f'run configuration file "{path}" does not exist')
    logging.debug(f'Reading run configuration file "{path}"...')
    try:
        with open(path, 'r') as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise SaferadError(f'unable to open run configuration file "{path}" - {e}')
    except yaml.YAMLError as e:
        raise SaferadError(f'unable to parse run configuration file "{path}" - {e}')
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise SaferadError(f'run configuration file "{path}" does not resolve to a dictionary')
    path_dir = os.path.dirname(path)
    for key in ('model', 'data', 'out', 'saliency_out', 'tests_out'):
        if isinstance(data.get(key), str):
            data[key] = utils.get_path(data[key], path_dir)
    includes = data.pop('include', [])
    if not isinstance(includes, list) or any(not isinstance(i, str) for i in includes):
        raise SaferadError(f'run configuration file "{path}" include specification is not a list of paths')
    for i in includes:
        logging.debug(f'Including run configuration file "{i}" from "{path}"...')
        data = utils.merge_yaml_data(data, parse(utils.get_path(i, path_dir)))
    return data


def validate(conf: dict):
    '''
    Checks that a parsed run configuration only holds known keys with valid
    values.
    '''
    logging.debug('Validating run configuration data...')
    for (key, value) in conf.items():
        if key not in FIELDS:
            raise SaferadError(f'unknown run configuration key "{key}"')
        convert(key, value)


def resolve(args: Any, conf: Optional[dict] = None) -> RunConfig:
    '''
    Builds the run configuration from parsed arguments, a run configuration
    dictionary and the environment.
    '''
    conf = conf or {}
    values = {}
    for (key, (_, env)) in FIELDS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = convert(key, flag)
        elif conf.get(key) is not None:
            values[key] = convert(key, conf[key])
        elif env and os.getenv(env):
            values[key] = convert(key, os.getenv(env))
    run = RunConfig(**values)
    logging.debug('---------- Run Configuration ----------')
    for (key, value) in asdict(run).items():
        logging.debug(f'{key} : {value}')
    logging.debug('---------------------------------------')
    return run
