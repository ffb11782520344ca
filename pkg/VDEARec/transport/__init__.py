from .wasserstein import *
from .gromov import *
from .base import (available_variants, default_variants, get_variant, AlignmentVariant,
                   VARIANTS, __default__)
