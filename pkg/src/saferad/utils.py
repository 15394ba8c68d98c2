#!/usr/bin/env python3
'''
Contains common utilities: logging set-up, path resolution and YAML merging.
'''

import logging
import os
import sys
from typing import Any


def get_path(path: str, base_path: str = '') -> str:
    '''
    Returns the full path to a file referenced from a run configuration file,
    resolving relative paths against `base_path`.
    '''
    if path.startswith('/'):
        return path
    if path.startswith('~'):
        return os.path.expanduser(path)
    if base_path and '../' in base_path:
        return os.path.abspath(os.path.join(base_path, path))
    return os.path.normpath(os.path.join(base_path, path))


def merge_yaml_data(data1: Any, data2: Any) -> Any:
    '''
    Returns the recursively-merged version of both YAML data objects.
    The second object has priority on conflicts.
    '''
    if isinstance(data1, list) and isinstance(data2, list):
        return data1 + data2
    if isinstance(data1, dict) and isinstance(data2, dict):
        merged = data1.copy()
        for (key, val) in data2.items():
            merged[key] = merge_yaml_data(merged[key], val) if key in merged else val
        return merged
    return data2


def setup_logging(args: Any):
    '''
    Sets-up logging. Without a log file the root logger stays disabled.
    '''
    logger = logging.getLogger()
    if not getattr(args, 'log_file', None):
        logger.disabled = True
        return
    logger.disabled = False
    try:
        logging.basicConfig(
            datefmt  = '%m/%d/%Y %I:%M:%S %p',
            filemode = 'a' if args.log_mode == 'append' else 'w',
            filename = args.log_file,
            force    = True,
            format   = '[%(levelname)s] [%(asctime)s] [%(process)d] [%(module)s.%(funcName)s] %(message)s',
            level    = logging.INFO if args.log_level == 'info' else logging.DEBUG
        )
        for (level, name) in [(logging.CRITICAL, 'CRI'), (logging.ERROR, 'ERR'), (logging.WARNING, 'WAR'), (logging.INFO, 'INF'), (logging.DEBUG, 'DEB')]:
            logging.addLevelName(level, name)
    except Exception as e:
        sys.exit(f'Unable to initialize logging system - {e}.')
