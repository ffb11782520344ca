#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Squared 2-Wasserstein distances between axis-aligned Gaussians and the
embedding alignment losses built from them.
"""

from __future__ import division, print_function, absolute_import

import numpy as np

from .. import autodiff as ad
from ..base import ContractError

__all__ = ["gaussian_w2", "pairwise_w2", "local_alignment_loss", "moment_alignment_loss"]


def gaussian_w2(mu1, sigma1, mu2, sigma2):
    """Squared 2-Wasserstein distance of two diagonal Gaussians

    Parameters
    ----------
    mu1, mu2: array_like
        D-dimensional means
    sigma1, sigma2: array_like
        D-dimensional standard deviations, strictly positive

    Returns
    -------
    d: float
        ||mu1 - mu2||^2 + ||sigma1 - sigma2||^2
    """
    mu1, sigma1, mu2, sigma2 = (np.atleast_1d(np.asarray(x, dtype=np.float64))
                                for x in (mu1, sigma1, mu2, sigma2))
    if not (mu1.shape == mu2.shape == sigma1.shape == sigma2.shape):
        raise ContractError("gaussian_w2: shapes %s, %s, %s, %s differ" % (
            mu1.shape, sigma1.shape, mu2.shape, sigma2.shape))
    if np.any(sigma1 <= 0) or np.any(sigma2 <= 0):
        raise ContractError("gaussian_w2: standard deviations must be positive")
    return float(np.sum((mu1 - mu2) ** 2) + np.sum((sigma1 - sigma2) ** 2))


def pairwise_w2(means, stds):
    """K x K matrix of squared W2 distances between the rows of one mixture
    """
    means = np.asarray(means, dtype=np.float64)
    stds = np.asarray(stds, dtype=np.float64)
    dm = means[:, None, :] - means[None, :, :]
    ds = stds[:, None, :] - stds[None, :, :]
    return np.sum(dm * dm, axis=2) + np.sum(ds * ds, axis=2)


def local_alignment_loss(emb_s, emb_t, mask):
    """Sum of W2 distances between the posteriors of aligned rows

    Parameters
    ----------
    emb_s, emb_t: GaussianEmbedding
        N-row posteriors of the source and target blocks
    mask: array_like of bool
        True where row i of both blocks is the same user

    Returns
    -------
    loss: Tensor
    """
    mask = np.asarray(mask, dtype=bool)
    if len(mask) != len(emb_s) or len(emb_s) != len(emb_t):
        raise ContractError("local alignment: %d source rows, %d target rows, mask of %d" % (
            len(emb_s), len(emb_t), len(mask)))
    rows = np.flatnonzero(mask)
    if not len(rows):
        return ad.Tensor(0.0)
    dm = ad.take(emb_s.mu, rows) - ad.take(emb_t.mu, rows)
    ds = ad.take(emb_s.std(), rows) - ad.take(emb_t.std(), rows)
    return ad.tsum(ad.square(dm)) + ad.tsum(ad.square(ds))


def _batch_moments(Z):
    m = ad.mean(Z, axis=0)
    var = ad.mean(ad.square(Z - ad.reshape(m, (1, -1))), axis=0)
    return m, ad.sqrt(var + ad.EPS)


def moment_alignment_loss(Z_s, Z_t):
    """W2 distance between the per-dimension moments of two latent batches

    Each batch is summarized by the mean and standard deviation of every
    latent coordinate, pooled over all its users.
    """
    if Z_s.shape[1] != Z_t.shape[1]:
        raise ContractError("moment alignment: latent widths %d and %d differ" % (
            Z_s.shape[1], Z_t.shape[1]))
    m_s, s_s = _batch_moments(Z_s)
    m_t, s_t = _batch_moments(Z_t)
    return ad.tsum(ad.square(m_s - m_t)) + ad.tsum(ad.square(s_s - s_t))
