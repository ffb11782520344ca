#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Gromov-Wasserstein coupling of two Gaussian mixtures.

The cost between cluster pairs (i, j) and (i', j') is the squared difference
of the within-domain W2 distances d_S(i, i') and d_T(j, j'). The coupling is
found by alternating a linearization of the quadratic cost with entropic
Sinkhorn scaling, all in the log domain.
"""

from __future__ import division, print_function, absolute_import

import warnings

import numpy as np
from scipy import special

from .. import autodiff as ad
from ..base import ContractError, ConvergenceWarning
from .wasserstein import pairwise_w2

__all__ = ["CostTensor", "CouplingMatrix", "build_cost_tensor", "gdot_sinkhorn",
           "gw_objective", "global_alignment_loss", "write_coupling"]


class CostTensor(object):
    """K x K x K x K pairwise-distance discrepancy, held as two K x K factors

    Parameters
    ----------
    source_dist: numpy.ndarray
        symmetric K x K within-source distances
    target_dist: numpy.ndarray
        symmetric K x K within-target distances
    """

    def __init__(self, source_dist, target_dist):
        self.source_dist = np.asarray(source_dist, dtype=np.float64)
        self.target_dist = np.asarray(target_dist, dtype=np.float64)
        if self.source_dist.shape != self.target_dist.shape or self.source_dist.ndim != 2:
            raise ContractError("cost factors of shapes %s and %s do not conform" % (
                self.source_dist.shape, self.target_dist.shape))

    @property
    def n_clusters(self):
        return self.source_dist.shape[0]

    def dense(self):
        """M[i, j, i', j'] = (d_S[i, i'] - d_T[j, j'])^2
        """
        diff = self.source_dist[:, None, :, None] - self.target_dist[None, :, None, :]
        return diff * diff

    def contract(self, psi):
        """[M (x) psi]_ij = sum_{i', j'} M[i, j, i', j'] psi[i', j']
        """
        psi = np.asarray(psi, dtype=np.float64)
        dS, dT = self.source_dist, self.target_dist
        rows = psi.sum(axis=1)
        cols = psi.sum(axis=0)
        const = (dS * dS) @ rows
        const = const[:, None] + ((dT * dT) @ cols)[None, :]
        return const - 2.0 * dS @ psi @ dT.T


class CouplingMatrix(object):
    """Transport plan between the clusters of two domains

    Attributes
    ----------
    psi: numpy.ndarray
        K x K plan
    pi_s, pi_t: numpy.ndarray
        prescribed row and column marginals
    traces: list of list of float
        L1 row-marginal violation after every inner iteration, per outer round
    n_outer: int
        outer rounds performed
    converged: bool
        whether the returned plan meets the marginal tolerance
    """

    def __init__(self, psi, pi_s, pi_t, traces=None, n_outer=0, converged=True):
        self.psi = psi
        self.pi_s = pi_s
        self.pi_t = pi_t
        self.traces = traces or []
        self.n_outer = n_outer
        self.converged = converged

    @property
    def shape(self):
        return self.psi.shape

    def violation(self):
        """Largest marginal deviation (infinity norm over rows and columns)
        """
        return max(np.max(np.abs(self.psi.sum(axis=1) - self.pi_s)),
                   np.max(np.abs(self.psi.sum(axis=0) - self.pi_t)))


def build_cost_tensor(prior_s, prior_t):
    """Cost tensor of two mixture priors with the same component count

    Parameters
    ----------
    prior_s, prior_t: MoGPrior

    Returns
    -------
    cost: CostTensor
    """
    if prior_s.n_components != prior_t.n_components:
        raise ContractError("priors have %d and %d components" % (
            prior_s.n_components, prior_t.n_components))
    dS = pairwise_w2(prior_s.means.values, prior_s.std_values())
    dT = pairwise_w2(prior_t.means.values, prior_t.std_values())
    return CostTensor(dS, dT)


def _check_marginal(p, K, label):
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if p.shape != (K,):
        raise ContractError("%s has length %d, expected %d" % (label, len(p), K))
    if np.any(p <= 0) or abs(p.sum() - 1.0) > 1e-8:
        raise ContractError("%s must be a strictly positive simplex vector (sum %r)" % (
            label, p.sum()))
    return p


def _sinkhorn(cost, log_a, log_b, epsilon, n_iter, tol, g, trace=None):
    """Sinkhorn iterations on the dual potentials of exp((f_i + g_j - C_ij) / epsilon)

    Parameters
    ----------
    cost: numpy.ndarray
        K x K linear cost C
    log_a, log_b: numpy.ndarray
        log row and column marginals
    g: numpy.ndarray
        starting column potential
    trace: list
        if given, the L1 row violation after each iteration is appended

    Returns
    -------
    f, g: numpy.ndarray
        row and column potentials; the plan meets the column marginals exactly
    converged: bool
        whether the rows met ``tol``
    """
    a = np.exp(log_a)
    f = np.zeros_like(log_a)
    err = np.inf
    for _ in range(n_iter):
        f = epsilon * (log_a - special.logsumexp((g[None, :] - cost) / epsilon, axis=1))
        g = epsilon * (log_b - special.logsumexp((f[:, None] - cost) / epsilon, axis=0))
        rows = np.exp(special.logsumexp((f[:, None] + g[None, :] - cost) / epsilon, axis=1))
        err = np.abs(rows - a)
        if trace is not None:
            trace.append(float(err.sum()))
        if err.max() <= tol:
            break
    return f, g, bool(np.max(err) <= tol)


def _plan(cost, f, g, epsilon):
    return np.exp((f[:, None] + g[None, :] - cost) / epsilon)


def _epsilon_ladder(cost, epsilon, factor=0.5):
    """Regularization levels from the cost range down to (excluding) ``epsilon``
    """
    level = max(float(np.ptp(cost)), epsilon)
    ladder = []
    while level > epsilon:
        ladder.append(level)
        level *= factor
    return ladder


def gdot_sinkhorn(cost, pi_s, pi_t, epsilon=0.1, outer_iter=10, inner_iter=50, tol=1e-6,
                  seed=None, outer_tol=1e-7, max_projection=10000, verbose=False):
    """Entropic Gromov-Wasserstein coupling by alternating Sinkhorn rounds

    Each round linearizes the quadratic cost at the current plan and solves
    the entropic problem for it, starting from the dual potentials of the
    previous round. When those do not reach ``tol`` within ``inner_iter``
    steps, the solve restarts at regularization levels halving from the
    range of the linear cost, each warm-starting the next, and finishes at
    ``epsilon``. Only the last run of iterations at ``epsilon`` is traced.

    Parameters
    ----------
    cost: CostTensor
    pi_s, pi_t: array_like
        strictly positive cluster weights of the two domains
    epsilon: float
        entropic regularization, > 0
    outer_iter: int
        linearization rounds
    inner_iter: int
        Sinkhorn iterations per round and per warm-up level
    tol: float
        infinity-norm marginal tolerance
    seed: int
        seed of the multiplicative jitter of the initial plan
    outer_tol: float
        stop when no plan entry moves by more than this
    max_projection: int
        iteration cap of the final feasibility projection, used only when
        the last round ends outside ``tol``

    Returns
    -------
    coupling: CouplingMatrix
    """
    K = cost.n_clusters
    pi_s = _check_marginal(pi_s, K, "source marginal")
    pi_t = _check_marginal(pi_t, K, "target marginal")
    if not epsilon > 0:
        raise ContractError("epsilon must be positive, got %r" % (epsilon,))
    if outer_iter < 1 or inner_iter < 1:
        raise ContractError("outer_iter and inner_iter must be positive")
    log_a, log_b = np.log(pi_s), np.log(pi_t)

    rng = np.random.default_rng(seed)
    start = -np.log(np.outer(pi_s, pi_t) * rng.uniform(0.99, 1.01, size=(K, K)))
    f, g, _ = _sinkhorn(start, log_a, log_b, 1.0, max_projection, tol, np.zeros(K))
    psi = _plan(start, f, g, 1.0)

    traces = []
    g = np.zeros(K)
    linear = start
    n_outer = 0
    for n_outer in range(1, outer_iter + 1):
        linear = cost.contract(psi)
        trace = []
        f, warm, done = _sinkhorn(linear, log_a, log_b, epsilon, inner_iter, tol, g, trace)
        if not done:
            for level in _epsilon_ladder(linear, epsilon):
                f, g, _ = _sinkhorn(linear, log_a, log_b, level, inner_iter, tol, g)
            trace = []
            f, warm, _ = _sinkhorn(linear, log_a, log_b, epsilon, inner_iter, tol, g, trace)
        g = warm
        traces.append(trace)
        new = _plan(linear, f, g, epsilon)
        delta = np.max(np.abs(new - psi))
        psi = new
        if verbose:
            print("GDOT round %d: max change %g, row violation %g" % (n_outer, delta, trace[-1]))
        if delta <= outer_tol:
            break

    coupling = CouplingMatrix(psi, pi_s, pi_t, traces, n_outer)
    if coupling.violation() > tol:
        f, g, _ = _sinkhorn(linear, log_a, log_b, epsilon, max_projection, tol, g, traces[-1])
        coupling.psi = _plan(linear, f, g, epsilon)
    if coupling.violation() > tol:
        coupling.converged = False
        warnings.warn("GDOT: marginal violation %g above %g after %d projection steps" % (
            coupling.violation(), tol, max_projection), ConvergenceWarning)
    return coupling


def gw_objective(psi, cost):
    """Quadratic transport cost <M (x) psi, psi> without entropy

    Parameters
    ----------
    psi: array_like or CouplingMatrix
    cost: CostTensor or numpy.ndarray
        factored cost or dense K x K x K x K array
    """
    psi = np.asarray(getattr(psi, "psi", psi), dtype=np.float64)
    if isinstance(cost, CostTensor):
        return float(np.sum(cost.contract(psi) * psi))
    cost = np.asarray(cost, dtype=np.float64)
    if cost.shape != psi.shape * 2:
        raise ContractError("cost of shape %s does not match plan %s" % (cost.shape, psi.shape))
    return float(np.einsum("ijkl,kl,ij->", cost, psi, psi))


def global_alignment_loss(psi, prior_s, prior_t):
    """Coupling-weighted W2 distance between source and target components

    The plan is a constant; gradients reach the means and log-variances of
    both priors.

    Returns
    -------
    loss: Tensor
    """
    psi = np.asarray(getattr(psi, "psi", psi), dtype=np.float64)
    K, D = prior_s.n_components, prior_s.latent_dim
    if psi.shape != (K, prior_t.n_components) or prior_t.latent_dim != D:
        raise ContractError("plan %s does not match priors with %d and %d components" % (
            psi.shape, K, prior_t.n_components))
    dm = ad.reshape(prior_s.means, (K, 1, D)) - ad.reshape(prior_t.means, (1, -1, D))
    ds = ad.reshape(prior_s.std(), (K, 1, D)) - ad.reshape(prior_t.std(), (1, -1, D))
    w2 = ad.tsum(ad.square(dm) + ad.square(ds), axis=2)
    return ad.tsum(psi * w2)


def write_coupling(coupling, path):
    """Write a plan as TSV, one row per source cluster
    """
    psi = np.asarray(getattr(coupling, "psi", coupling), dtype=np.float64)
    np.savetxt(path, psi, delimiter="\t", fmt="%.17g")
