# -*- coding: utf-8 -*-
#
# VDEARec documentation build configuration file.

import sys
import os

sys.path.insert(0, os.path.abspath('..'))

extensions = [
    'sphinx.ext.autodoc',
    'sphinx.ext.viewcode',
    'sphinx.ext.napoleon',
]

templates_path = ['_templates']
source_suffix = '.rst'
master_doc = 'index'

project = u'VDEARec'
copyright = u'2026, the VDEARec developers'

version = '2026.10'
release = '2026.10.1'

exclude_patterns = ['_build']
pygments_style = 'sphinx'

html_theme = 'default'
html_static_path = []
htmlhelp_basename = 'VDEARecdoc'

autodoc_mock_imports = ['mpi4py', 'matplotlib']
