from __future__ import print_function, division, absolute_import

__version__ = "2026.10.1"

from VDEARec.VDEARec import *
