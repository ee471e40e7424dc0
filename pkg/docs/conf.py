"""Sphinx configuration for the gmclab documentation"""
from importlib.machinery import SourceFileLoader
from os.path import abspath, dirname, join

_root = dirname(dirname(abspath(__file__)))
release = SourceFileLoader("gmclab.version", join(_root, "gmclab", "version.py")).load_module().version
version = ".".join(release.split(".")[:2])

project = "gmclab"
author = "gmclab developers"
copyright = f"2024, {author}"

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.autosummary",
    "sphinx.ext.doctest",
    "sphinx.ext.intersphinx",
    "sphinx.ext.mathjax",
    "sphinx.ext.viewcode",
    "sphinx.ext.napoleon",
]

# docstrings use the Google style of the package ("Args:", "Returns:")
napoleon_google_docstring = True
napoleon_numpy_docstring = False
autodoc_member_order = "bysource"
autodoc_typehints = "none"
autosummary_generate = True

# numpy and scipy are enough to import the library modules; hydra is only
# needed by gmclab.bin, which the reference does not document
autodoc_mock_imports = ["hydra", "hydra_colorlog"]

doctest_global_setup = """
import numpy as np
np.set_printoptions(precision=4, suppress=True)
"""

exclude_patterns = ["_build", "generated/*.bak"]
pygments_style = "default"
html_theme = "sphinx_rtd_theme"
html_title = f"gmclab {release}"

intersphinx_mapping = {
    "python": ("https://docs.python.org/3", None),
    "numpy": ("https://numpy.org/doc/stable", None),
    "scipy": ("https://docs.scipy.org/doc/scipy", None),
}
