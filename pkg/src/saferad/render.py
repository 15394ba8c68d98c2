#!/usr/bin/env python3
'''
Contains code pertaining to creating the Jinja2 engine that renders every
human-readable artifact (CLI summaries and graymaps).
'''

import functools
import inspect
import jinja2
import logging

from . import rfuncs
from .errors import SaferadError


def setup() -> jinja2.Environment:
    '''
    Creates a new Jinja2 engine bound to the templates shipped with the package.
    '''
    logging.debug('Initializing Jinja2 package loader...')
    try:
        loader = jinja2.PackageLoader('saferad', 'templates')
    except Exception as e:
        raise SaferadError(f'unable to initialize jinja2 package loader - {e}')
    logging.debug('Initializing Jinja2 engine...')
    jinja_engine = jinja2.Environment(
        autoescape            = False,
        keep_trailing_newline = True,
        loader                = loader,
        lstrip_blocks         = True,
        trim_blocks           = True,
        undefined             = jinja2.StrictUndefined
    )
    logging.debug('Importing rendering functions...')
    for f in inspect.getmembers(rfuncs, inspect.isfunction):
        if f[0].startswith('t_'):
            jname = f[0].split('_', 1)[1]
            logging.debug(f'Importing rendering function "{f[0]}" as "{jname}"...')
            jinja_engine.globals[jname] = f[1]
            jinja_engine.filters[jname] = f[1]
    return jinja_engine


@functools.lru_cache(maxsize=None)
def engine() -> jinja2.Environment:
    '''
    Returns the shared engine, creating it on first use.
    '''
    return setup()


def render(template_name: str, **context) -> str:
    '''
    Renders the named package template with the given context.
    '''
    try:
        template = engine().get_template(template_name)
    except jinja2.TemplateSyntaxError as e:
        raise SaferadError(f'unable to load template "{template_name}" - syntax error on line {e.lineno} - {e}')
    except jinja2.TemplateNotFound as e:
        raise SaferadError(f'unable to load template "{template_name}" - {e}')
    try:
        return template.render(**context)
    except Exception as e:
        raise SaferadError(f'unable to render template "{template_name}" - {e}')
