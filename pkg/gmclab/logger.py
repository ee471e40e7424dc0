import logging
import os
from os.path import abspath, dirname

LOG_FORMAT = "%(asctime)s (%(name)s:%(lineno)d) %(levelname)s: %(message)s"


def verbosity_level(verbose):
    """Logging level of a ``verbose`` setting: >= 100 debug, > 0 info, else warning"""
    if verbose >= 100:
        return logging.DEBUG
    if verbose > 0:
        return logging.INFO
    return logging.WARNING


def getLogger(verbose=None, filename=None, name="gmclab"):
    """Get a gmclab logger

    Library modules call ``getLogger(name=__name__)`` and leave the level
    alone; applications pass ``config.verbose`` to set it for the package.
    Console output is left to hydra's colorlog handlers.

    Args:
        verbose (int): verbosity, None to keep the current level
        filename (str): optional log file, its directory is created. A file
            is attached to a logger at most once.
        name (str): logger name

    Returns:
        logging.Logger: logger
    """
    logger = logging.getLogger(name)
    if verbose is not None:
        logger.setLevel(verbosity_level(verbose))

    if filename is not None:
        path = abspath(filename)
        attached = any(
            isinstance(h, logging.FileHandler) and h.baseFilename == path
            for h in logger.handlers
        )
        if not attached:
            os.makedirs(dirname(path), exist_ok=True)
            handler = logging.FileHandler(filename=path)
            handler.setFormatter(logging.Formatter(LOG_FORMAT))
            logger.addHandler(handler)

    return logger
