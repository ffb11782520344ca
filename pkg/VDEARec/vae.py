#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Dual variational autoencoders with Mixture-of-Gaussian latent priors.

Each domain owns an encoder (items -> hidden -> [mu, logvar]), a decoder
(latent -> hidden -> item probabilities) and a diagonal Gaussian mixture
prior. The variational rating reconstruction loss combines the binary
cross-entropy of both domains with the exact mean-field KL divergence to the
mixture prior.
"""

from __future__ import division, print_function, absolute_import

import warnings

import numpy as np
from scipy import special
from sklearn.cluster import kmeans_plusplus

from . import autodiff as ad
from .autodiff import Tensor
from .base import ContractError, NumericError, VDEAWarning

LOGVAR_BOUNDS = (-10.0, 10.0)
LOG_2PI = np.log(2.0 * np.pi)


def _glorot(rng, n_in, n_out):
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


def _check_finite(tensor, layer):
    if not np.all(np.isfinite(tensor.values)):
        raise NumericError("non-finite activations in layer %s" % layer)
    return tensor


class EncoderParams(object):
    """Two-layer perceptron mapping item rows to Gaussian posteriors

    Parameters
    ----------
    n_items: int
        input width (item count of the domain)
    latent_dim: int
        D; the output layer has width 2 * D
    hidden_dim: int
        width of the tanh hidden layer
    rng: numpy.random.Generator
        source of the initial weights
    prefix: str
        name prefix of the parameter tensors
    """

    def __init__(self, n_items, latent_dim, hidden_dim=600, rng=None, prefix="encoder"):
        rng = np.random.default_rng() if rng is None else rng
        self.prefix = prefix
        self.W1 = Tensor(_glorot(rng, n_items, hidden_dim), True, prefix + ".W1")
        self.b1 = Tensor(np.zeros(hidden_dim), True, prefix + ".b1")
        self.W2 = Tensor(_glorot(rng, hidden_dim, 2 * latent_dim), True, prefix + ".W2")
        self.b2 = Tensor(np.zeros(2 * latent_dim), True, prefix + ".b2")

    @property
    def input_dim(self):
        return self.W1.shape[0]

    @property
    def latent_dim(self):
        return self.W2.shape[1] // 2

    def parameters(self):
        return {t.name: t for t in (self.W1, self.b1, self.W2, self.b2)}


class DecoderParams(object):
    """Two-layer perceptron mapping latent codes to item probabilities

    Parameters
    ----------
    latent_dim: int
    n_items: int
        output width
    hidden_dim: int
    rng: numpy.random.Generator
    prefix: str
    """

    def __init__(self, latent_dim, n_items, hidden_dim=600, rng=None, prefix="decoder"):
        rng = np.random.default_rng() if rng is None else rng
        self.prefix = prefix
        self.W1 = Tensor(_glorot(rng, latent_dim, hidden_dim), True, prefix + ".W1")
        self.b1 = Tensor(np.zeros(hidden_dim), True, prefix + ".b1")
        self.W2 = Tensor(_glorot(rng, hidden_dim, n_items), True, prefix + ".W2")
        self.b2 = Tensor(np.zeros(n_items), True, prefix + ".b2")

    @property
    def latent_dim(self):
        return self.W1.shape[0]

    @property
    def n_items(self):
        return self.W2.shape[1]

    def parameters(self):
        return {t.name: t for t in (self.W1, self.b1, self.W2, self.b2)}


class GaussianEmbedding(object):
    """Diagonal Gaussian posterior per user

    Parameters
    ----------
    mu: Tensor
        N x D means
    logvar: Tensor
        N x D log-variances
    """

    def __init__(self, mu, logvar):
        self.mu = mu
        self.logvar = logvar

    def __len__(self):
        return self.mu.shape[0]

    def std(self):
        """Standard deviations exp(logvar / 2) as a Tensor
        """
        return ad.exp(0.5 * self.logvar)


class MoGPrior(object):
    """Diagonal Gaussian mixture prior over the latent space

    The mixing weights are parameterized by unconstrained logits and the
    component variances by log-variances floored at ``floor**2``.

    Parameters
    ----------
    logits: array_like
        K unnormalized log weights
    means: array_like
        K x D component means
    log_vars: array_like
        K x D component log-variances
    floor: float
        smallest component standard deviation
    prefix: str
    """

    def __init__(self, logits, means, log_vars, floor=1e-3, prefix="prior"):
        self.prefix = prefix
        self.floor = floor
        self.logits = Tensor(np.reshape(logits, -1), True, prefix + ".logits")
        self.means = Tensor(np.atleast_2d(means), True, prefix + ".means")
        self.log_vars = Tensor(np.atleast_2d(log_vars), True, prefix + ".log_vars")
        K, D = self.means.shape
        if self.logits.shape != (K,) or self.log_vars.shape != (K, D):
            raise ContractError("prior shapes disagree: logits %s, means %s, log_vars %s" % (
                self.logits.shape, self.means.shape, self.log_vars.shape))

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def latent_dim(self):
        return self.means.shape[1]

    def parameters(self):
        return {t.name: t for t in (self.logits, self.means, self.log_vars)}

    def effective_log_vars(self):
        return ad.clip(self.log_vars, lower=2.0 * np.log(self.floor))

    def log_weights(self):
        return ad.log_softmax(self.logits, axis=0)

    def weights(self):
        return special.softmax(self.logits.values)

    def std(self):
        return ad.exp(0.5 * self.effective_log_vars())

    def std_values(self):
        return np.maximum(np.exp(0.5 * self.log_vars.values), self.floor)


def encode(encoder, X):
    """Posterior parameters of the rows ``X``

    Returns
    -------
    embedding: GaussianEmbedding
    """
    X = ad.as_tensor(X)
    if X.ndim != 2 or X.shape[1] != encoder.input_dim:
        raise ContractError("encoder %s expects rows of width %d, got shape %s" % (
            encoder.prefix, encoder.input_dim, X.shape))
    D = encoder.latent_dim
    h = _check_finite(ad.tanh(X @ encoder.W1 + encoder.b1), encoder.prefix + ".hidden")
    out = _check_finite(h @ encoder.W2 + encoder.b2, encoder.prefix + ".head")
    mu = out[:, :D]
    logvar = ad.clip(out[:, D:], *LOGVAR_BOUNDS)
    return GaussianEmbedding(mu, logvar)


def encode_reparameterize(encoder, X, noise=None):
    """Encode ``X`` and draw Z = mu + eps * sigma

    Parameters
    ----------
    encoder: EncoderParams
    X: array_like
        N x items batch rows
    noise: int, numpy.random.Generator or array_like
        seed or generator for eps ~ N(0, I), or eps itself (N x D)

    Returns
    -------
    embedding: GaussianEmbedding
    Z: Tensor
        N x D; gradients reach mu and logvar but not eps
    """
    emb = encode(encoder, X)
    shape = emb.mu.shape
    if isinstance(noise, np.ndarray) or isinstance(noise, (list, tuple)):
        eps = np.asarray(noise, dtype=np.float64)
        if eps.shape != shape:
            raise ContractError("noise shape %s, expected %s" % (eps.shape, shape))
    else:
        rng = noise if isinstance(noise, np.random.Generator) else np.random.default_rng(noise)
        eps = rng.standard_normal(shape)
    Z = emb.mu + eps * emb.std()
    return emb, _check_finite(Z, encoder.prefix + ".reparameterize")


def encode_mean(encoder, X):
    """Posterior means as a numpy array, without recording
    """
    with ad.no_grad():
        return encode(encoder, X).mu.values.copy()


def decode(decoder, Z):
    """Item probabilities in (0, 1) for latent codes ``Z``
    """
    Z = ad.as_tensor(Z)
    if Z.ndim != 2 or Z.shape[1] != decoder.latent_dim:
        raise ContractError("decoder %s expects codes of width %d, got shape %s" % (
            decoder.prefix, decoder.latent_dim, Z.shape))
    h = _check_finite(ad.tanh(Z @ decoder.W1 + decoder.b1), decoder.prefix + ".hidden")
    logits = _check_finite(h @ decoder.W2 + decoder.b2, decoder.prefix + ".output")
    return ad.sigmoid(logits)


def _component_log_density(Z, prior):
    """N x K log N(Z_i | mean_c, var_c) via 3-D broadcasting
    """
    N, D = Z.shape
    K = prior.n_components
    lv = prior.effective_log_vars()
    diff = ad.reshape(Z, (N, 1, D)) - ad.reshape(prior.means, (1, K, D))
    quad = ad.square(diff) * ad.reshape(ad.exp(-1.0 * lv), (1, K, D))
    return -0.5 * (ad.tsum(quad, axis=2) + ad.reshape(ad.tsum(lv, axis=1), (1, K)) + D * LOG_2PI)


def cluster_responsibilities(Z, prior):
    """Posterior cluster probabilities gamma (N x K) of the codes ``Z``

    Computed in log-space; rows sum to one.
    """
    Z = ad.as_tensor(Z)
    if Z.ndim != 2 or Z.shape[1] != prior.latent_dim:
        raise ContractError("codes of shape %s do not match a prior of dimension %d" % (
            Z.shape, prior.latent_dim))
    log_joint = _component_log_density(Z, prior) + ad.reshape(prior.log_weights(), (1, -1))
    return ad.softmax(log_joint, axis=1)


def hard_assignments(Z, prior):
    """Most responsible cluster of each code
    """
    with ad.no_grad():
        return np.argmax(cluster_responsibilities(Z, prior).values, axis=1)


def reconstruction_loss(X, X_hat):
    """Binary cross-entropy summed over items, averaged over rows
    """
    X = ad.as_tensor(X)
    if X.shape != X_hat.shape:
        raise ContractError("targets %s and reconstructions %s differ in shape" % (
            X.shape, X_hat.shape))
    ll = X * ad.log(X_hat, eps=ad.EPS) + (1.0 - X) * ad.log(1.0 - X_hat, eps=ad.EPS)
    return -1.0 * ad.mean(ad.tsum(ll, axis=1))


def kl_divergence(embedding, gamma, prior):
    """Mean over users of KL(q(z, c | x) || p(z, c))

    q factorizes as N(mu, sigma^2) times Categorical(gamma); p is the
    mixture prior.
    """
    mu, logvar = embedding.mu, embedding.logvar
    N, D = mu.shape
    K = prior.n_components
    lv = ad.reshape(prior.effective_log_vars(), (1, K, D))
    inv = ad.exp(-1.0 * lv)
    var = ad.reshape(ad.exp(logvar), (N, 1, D))
    diff = ad.reshape(mu, (N, 1, D)) - ad.reshape(prior.means, (1, K, D))
    gauss = 0.5 * ad.tsum(lv + var * inv + ad.square(diff) * inv, axis=2)
    log_ratio = ad.log(gamma, eps=ad.EPS) - ad.reshape(prior.log_weights(), (1, K))
    per_user = ad.tsum(gamma * (gauss + log_ratio), axis=1) - 0.5 * ad.tsum(1.0 + logvar, axis=1)
    return ad.mean(per_user)


def vr_loss(X_s, X_hat_s, emb_s, gamma_s, X_t, X_hat_t, emb_t, gamma_t, prior_s, prior_t, beta):
    """Variational rating reconstruction loss of both domains

    Parameters
    ----------
    X_s, X_t: array_like
        binary batch rows of each domain
    X_hat_s, X_hat_t: Tensor
        decoder outputs
    emb_s, emb_t: GaussianEmbedding
    gamma_s, gamma_t: Tensor
        responsibilities of the sampled codes
    prior_s, prior_t: MoGPrior
    beta: float
        KL weight, >= 0

    Returns
    -------
    loss: Tensor
        scalar
    """
    if beta < 0:
        raise ContractError("KL weight beta must be >= 0, got %g" % beta)
    loss = reconstruction_loss(X_s, X_hat_s) + reconstruction_loss(X_t, X_hat_t)
    if beta == 0:
        return loss
    kl = kl_divergence(emb_s, gamma_s, prior_s) + kl_divergence(emb_t, gamma_t, prior_t)
    return loss + beta * kl


class MixtureFit(object):
    """Result of a diagonal Gaussian mixture fit

    Attributes
    ----------
    weights: numpy.ndarray
    means: numpy.ndarray
    variances: numpy.ndarray
    log_likelihood: list of float
        mean log-likelihood per EM iteration since the last re-seed
    n_iter: int
    reseeds: int
    converged: bool
    """

    def __init__(self, weights, means, variances, log_likelihood, n_iter, reseeds, converged):
        self.weights = weights
        self.means = means
        self.variances = variances
        self.log_likelihood = log_likelihood
        self.n_iter = n_iter
        self.reseeds = reseeds
        self.converged = converged


def _mixture_log_joint(X, weights, means, variances):
    diff = X[:, None, :] - means[None, :, :]
    quad = np.sum(diff * diff / variances[None], axis=2)
    return (np.log(weights)[None, :]
            - 0.5 * (quad + np.sum(np.log(variances), axis=1)[None, :] + X.shape[1] * LOG_2PI))


def fit_diagonal_mixture(X, K, floor=1e-3, max_iter=100, tol=1e-6, seed=None, max_reseeds=5):
    """Expectation-maximization for a diagonal Gaussian mixture

    Seeds the means with k-means++; a component that loses all its mass is
    moved to the point farthest from its nearest mean, at most
    ``max_reseeds`` times.

    Parameters
    ----------
    X: numpy.ndarray
        M x D points, M >= K
    K: int
    floor: float
        smallest standard deviation per dimension
    max_iter: int
    tol: float
        stop when the mean log-likelihood changes by less than this
    seed: int

    Returns
    -------
    fit: MixtureFit
    """
    X = np.asarray(X, dtype=np.float64)
    M, D = X.shape
    if K < 1 or M < K:
        raise ContractError("need at least K=%d points, got %d" % (K, M))
    var_floor = floor * floor
    spread = np.maximum(X.var(axis=0), var_floor)

    if K == 1:
        variances = np.maximum(X.var(axis=0), var_floor)[None, :]
        means = X.mean(axis=0, keepdims=True)
        ll = special.logsumexp(_mixture_log_joint(X, np.ones(1), means, variances), axis=1)
        return MixtureFit(np.ones(1), means, variances, [float(ll.mean())], 1, 0, True)

    rng = np.random.default_rng(seed)
    means, _ = kmeans_plusplus(X, K, random_state=int(rng.integers(2 ** 31)))
    means = means.astype(np.float64)
    variances = np.tile(spread, (K, 1))
    weights = np.full(K, 1.0 / K)

    history = []
    reseeds = 0
    converged = False
    n_iter = 0
    while n_iter < max_iter:
        n_iter += 1
        log_joint = _mixture_log_joint(X, weights, means, variances)
        log_norm = special.logsumexp(log_joint, axis=1)
        resp = np.exp(log_joint - log_norm[:, None])
        mass = resp.sum(axis=0)

        empty = np.flatnonzero(mass < 1e-10)
        if len(empty):
            reseeds += 1
            if reseeds > max_reseeds:
                raise NumericError("EM: component %d stayed empty after %d re-seeds" % (
                    empty[0], max_reseeds))
            warnings.warn("EM: re-seeding %d empty component(s)" % len(empty), VDEAWarning)
            nearest = np.min(np.sum((X[:, None, :] - means[None]) ** 2, axis=2), axis=1)
            for c in empty:
                far = int(np.argmax(nearest))
                means[c] = X[far]
                variances[c] = spread
                nearest[far] = 0.0
            weights = np.full(K, 1.0 / K)
            history = []
            continue

        ll = float(log_norm.mean())
        history.append(ll)
        weights = mass / M
        means = resp.T @ X / mass[:, None]
        sq = resp.T @ (X * X) / mass[:, None] - means * means
        variances = np.maximum(sq, var_floor)
        if len(history) > 1 and abs(history[-1] - history[-2]) < tol:
            converged = True
            break

    return MixtureFit(weights, means, variances, history, n_iter, reseeds, converged)


def init_prior_from_latents(latents, K, floor=1e-3, seed=None, prefix="prior",
                            posterior_variances=None, **kwargs):
    """Fit a mixture to the latent means of all users and wrap it as a prior

    With ``posterior_variances`` each component variance also receives the
    responsibility-weighted mean of the users' posterior variances, so that
    a component covers the spread of the posteriors it explains and not
    only that of their means. Users with identical rows share one latent
    mean, which otherwise leaves a component at the variance floor.

    Parameters
    ----------
    latents: numpy.ndarray
        M x D latent means
    K: int
        number of components
    floor: float
        smallest component standard deviation
    seed: int
    posterior_variances: numpy.ndarray
        M x D posterior variances matching ``latents``
    **kwargs:
        passed to ``fit_diagonal_mixture``

    Returns
    -------
    prior: MoGPrior
        with the EM fit attached as ``prior.fit``
    """
    latents = np.asarray(latents, dtype=np.float64)
    fit = fit_diagonal_mixture(latents, K, floor=floor, seed=seed, **kwargs)
    variances = fit.variances
    if posterior_variances is not None:
        posterior_variances = np.asarray(posterior_variances, dtype=np.float64)
        if posterior_variances.shape != latents.shape:
            raise ContractError("posterior variances of shape %s do not match latents %s" % (
                posterior_variances.shape, latents.shape))
        log_joint = _mixture_log_joint(latents, fit.weights, fit.means, fit.variances)
        resp = np.exp(log_joint - special.logsumexp(log_joint, axis=1)[:, None])
        mass = np.maximum(resp.sum(axis=0), 1e-12)
        variances = variances + resp.T @ posterior_variances / mass[:, None]
    prior = MoGPrior(np.log(fit.weights), fit.means, np.log(variances), floor=floor,
                     prefix=prefix)
    prior.fit = fit
    return prior
