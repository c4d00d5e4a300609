# Sphinx configuration for the cctkit documentation.

import os
import sys

sys.path.insert(0, os.path.abspath(".."))  # isort:skip

from cctkit import __version__  # noqa: E402

project = "cctkit"
copyright = "2026, cctkit developers"
author = "cctkit developers"
release = __version__

extensions = [
    "sphinx.ext.autodoc",
    "sphinx_rtd_theme",
    "sphinx.ext.napoleon",
    "sphinx.ext.mathjax",
]
autodoc_member_order = "bysource"
napoleon_numpy_docstring = True
napoleon_google_docstring = False

templates_path = ["_templates"]
exclude_patterns = ["_build", "build", "Thumbs.db", ".DS_Store", "api"]

html_theme = "sphinx_rtd_theme"
html_static_path = []
