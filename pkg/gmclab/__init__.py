from . import atoms, bridge, extremes, field, gmc, harness, kernel, util
from .version import version as __version__

__all__ = [
    "__version__",
    "atoms",
    "bridge",
    "extremes",
    "field",
    "gmc",
    "harness",
    "kernel",
    "util",
]
