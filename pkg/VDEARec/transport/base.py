#!/usr/bin/env python
# -*- coding: utf-8 -*-

from ..base import ContractError

__all__ = ["full", "base", "local", "global", "moment"]

__default__ = ["full", "base", "local", "global"]


def available_variants():
    """Print the available alignment variants
    """
    print("Available alignment variants:\n\n%s" % ("\n".join(
        "%-8s %s" % (name, VARIANTS[name].description) for name in __all__)))


def default_variants():
    """Print the variants of the standard ablation
    """
    print("Default alignment variants:\n\n%s" % ("\n".join(__default__)))


class AlignmentVariant(object):
    """Which alignment terms enter the total training loss

    Parameters
    ----------
    name: str
    local: bool
        whether the overlapped-user term is weighted in
    global_term: str
        None, "gdot" (cluster coupling loss) or "moment" (batch moment loss)
    description: str
    """

    def __init__(self, name, local=False, global_term=None, description=""):
        if global_term not in (None, "gdot", "moment"):
            raise ContractError("unknown global term %r" % (global_term,))
        self.name = name
        self.local = local
        self.global_term = global_term
        self.description = description

    @property
    def uses_gdot(self):
        return self.global_term == "gdot"

    def __repr__(self):
        return "AlignmentVariant(%r)" % self.name

    def combine(self, l_vr, l_va, l_vg, lambda_vl, lambda_vg):
        """Weighted sum of the loss terms active in this variant
        """
        total = l_vr
        if self.local:
            total = total + lambda_vl * l_va
        if self.global_term is not None:
            total = total + lambda_vg * l_vg
        return total


VARIANTS = {
    "full": AlignmentVariant("full", True, "gdot", "reconstruction + local + GDOT global"),
    "base": AlignmentVariant("base", False, None, "reconstruction only"),
    "local": AlignmentVariant("local", True, None, "reconstruction + local"),
    "global": AlignmentVariant("global", True, "gdot",
                               "reconstruction + local + GDOT global (non-adversarial)"),
    "moment": AlignmentVariant("moment", True, "moment",
                               "reconstruction + local + batch moment matching"),
}


def get_variant(name):
    """Look up an AlignmentVariant by name
    """
    try:
        return VARIANTS[name]
    except KeyError:
        raise ContractError("unknown variant %r, choose from %s" % (name, ", ".join(__all__)))
