#!/usr/bin/env python3
'''
Contains the exception types raised by `saferad`.
'''


class SaferadError(Exception):
    '''
    Base class of every error raised on purpose by this package.
    '''


class ShapeError(SaferadError):
    '''
    Raised when array, layer or input shapes do not line up.
    '''


class ParseError(SaferadError):
    '''
    Raised when a model, dataset or report document cannot be understood.
    '''


class RangeError(SaferadError):
    '''
    Raised when a value falls outside of its admissible range.
    '''


class BudgetError(SaferadError):
    '''
    Raised when an enumeration would exceed the configured subspace cap.
    '''


class PreconditionError(SaferadError):
    '''
    Raised when an operation is called on inputs that violate its contract.
    '''


class UnsupportedLayerError(SaferadError):
    '''
    Raised for layer types outside of the supported vocabulary.
    '''
