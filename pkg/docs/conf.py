#!/usr/bin/env python
# -*- coding: utf-8 -*-
#
# cellfree-fl documentation build configuration file.

import sphinx_rtd_theme  # noqa: F401

import cellfree_fl  # noqa: E402

# -- General configuration ---------------------------------------------

extensions = [
    "sphinx.ext.autosummary",
    "sphinx.ext.autodoc",
    "sphinx.ext.viewcode",
    "sphinx.ext.doctest",
    "sphinx.ext.napoleon",
    "sphinx.ext.mathjax",
    "sphinx_rtd_theme",
    "m2r",
]

# numpy style docstrings throughout
napoleon_google_docstring = False
napoleon_include_init_with_doc = True
napoleon_use_ivar = True
napoleon_use_param = False

autoclass_content = "both"  # include init doc with class
autodoc_member_order = "bysource"

source_suffix = {
    ".rst": "restructuredtext",
    ".md": "markdown",
}
master_doc = "index"

project = "cellfree-fl"
copyright = "2026, cellfree-fl developers"
author = "cellfree-fl developers"

version = cellfree_fl.__version__
release = cellfree_fl.__version__

exclude_patterns = ["_build", "Thumbs.db", ".DS_Store"]
pygments_style = "sphinx"

# -- Options for HTML output -------------------------------------------

html_theme = "sphinx_rtd_theme"
html_theme_options = {"collapse_navigation": False, "prev_next_buttons_location": "top"}
htmlhelp_basename = "cellfree_fldoc"
