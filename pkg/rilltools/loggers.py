import logging
import os
import sys

DEBUG = bool(os.environ.get('RILLTOOLS_DEBUG'))

# Training, sweep and diagnostic progress
logger = logging.getLogger('rilltools')
log_handler = logging.StreamHandler(sys.stdout)
log_formatter = logging.Formatter('[%(name)s][%(levelname)s] %(asctime)s - %(message)s')
log_handler.setFormatter(log_formatter)
logger.addHandler(log_handler)

if DEBUG is True:
    logger.setLevel(logging.DEBUG)
else:
    logger.setLevel(logging.WARNING)


def set_verbose(verbose: bool) -> None:
    """Raises the package logger to INFO (unless DEBUG is already on)."""
    if verbose and not DEBUG:
        logger.setLevel(logging.INFO)
