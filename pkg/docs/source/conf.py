#!/usr/bin/env python3
# -*- coding: utf-8 -*-
#
# rilltools documentation build configuration file.
#
# This file is execfile()d with the current directory set to its
# containing dir. Only the values that differ from the Sphinx defaults
# are set here.

import os
import sys
sys.path.insert(0, os.path.abspath('../..'))
import rilltools

# -- General configuration ------------------------------------------------

autodoc_default_options = {
    'members': True,
    # 'undoc-members': True,
}

# cli.py needs the cli extras; the docs build should not
autodoc_mock_imports = ['click', 'tabulate']

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.coverage',
    'sphinx.ext.viewcode',
]

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

# General information about the project.
project = 'rilltools'
copyright = '2017, Roy Enjoy'
author = 'Roy Enjoy'

# The short X.Y version and the full version.
version = rilltools.__version__
release = rilltools.__version__

exclude_patterns = []
pygments_style = 'sphinx'
todo_include_todos = False


# -- Options for HTML output ----------------------------------------------

html_theme = 'classic'
htmlhelp_basename = 'rilltoolsdoc'


# -- Options for LaTeX output ---------------------------------------------

latex_elements = {}

latex_documents = [
    (master_doc, 'rilltools.tex', 'rilltools documentation',
     author, 'manual'),
]


# -- Options for manual page output ---------------------------------------

man_pages = [
    (master_doc, 'rilltools', 'rilltools documentation',
     [author], 1)
]


# -- Options for Texinfo output -------------------------------------------

texinfo_documents = [
    (master_doc, 'rilltools', 'rilltools documentation',
     author, 'rilltools',
     'Differentiable fuzzy logic losses with reduced implication bias.',
     'Miscellaneous'),
]
