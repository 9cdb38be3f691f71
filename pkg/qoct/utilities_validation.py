# utilities_validation.py
# Error types, logging setup and argument checks shared by every stage

import datetime
import logging
import os

import numpy as np

from qoct.config import threads_environment_variable

log = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'
LOG_DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


def current_timestamp():
    """
    Gets the current timestamp for logging purposes.

    Returns:
        str: Current timestamp in 'YYYY-MM-DD HH:MM:SS' format.
    """
    return datetime.datetime.now().strftime(LOG_DATE_FORMAT)


def configure_logging(verbose=False):
    """
    Configures the root logger with the timestamped line format used by the CLI.

    Parameters:
    ----------
    verbose : bool
        DEBUG level when True, INFO otherwise.
    """
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(format=LOG_FORMAT, datefmt=LOG_DATE_FORMAT, level=level, force=True)


class QOCTError(ValueError):
    """Base class of every error raised by the toolkit."""


class InvalidArgumentError(QOCTError):
    """A precondition of an operation is violated."""


class OutOfWindowError(QOCTError):
    """An arrival time falls outside the calibrated range of a fibre."""


class EmptyFrameError(QOCTError):
    """A frame crop selected no histogram bins."""


class FormatError(QOCTError):
    """A joint-spectrum or event file does not match its declared layout."""


class ConfigError(QOCTError):
    """
    A configuration document failed to parse or validate.

    Parameters:
    ----------
    message : str
        Human readable description.
    line : int, optional
        Line of the parse error.
    field : str, optional
        Dotted path of the offending field.
    """

    def __init__(self, message, line=None, field=None):
        super().__init__(message)
        self.line = line
        self.field = field


class StageError(QOCTError):
    """An error raised while a pipeline stage was running, tagged with the stage name."""

    def __init__(self, stage, cause):
        super().__init__(f"Stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


def fail(error_class, error_message, **fields):
    """
    Logs an error message with the module logger and raises it.

    Parameters:
    ----------
    error_class : type
        Subclass of QOCTError to raise.
    error_message : str
        Message for both the log line and the exception.
    **fields
        Extra keyword arguments for the exception constructor.
    """
    log.error(error_message)
    raise error_class(error_message, **fields)


def require_positive(value, name):
    """Raises InvalidArgumentError unless value is a finite number > 0."""
    if value is None or not np.isfinite(value) or value <= 0:
        fail(InvalidArgumentError, f"'{name}' must be positive, got {value}.")
    return float(value)


def require_non_negative(value, name):
    """Raises InvalidArgumentError unless value is a finite number >= 0."""
    if value is None or not np.isfinite(value) or value < 0:
        fail(InvalidArgumentError, f"'{name}' must be non-negative, got {value}.")
    return float(value)


def thread_count():
    """
    Reads the worker count for thread pools from the environment.

    Returns:
    -------
    int
        At least 1. Invalid settings fall back to 1 with a warning.
    """
    raw = os.environ.get(threads_environment_variable)
    if raw is None:
        return 1
    try:
        threads = int(raw)
    except ValueError:
        log.warning("Ignoring %s=%r, expected an integer.", threads_environment_variable, raw)
        return 1
    return max(threads, 1)
