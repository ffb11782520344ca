#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Top-k ranking metrics, proxy A-distance and embedding export.

Models are duck-typed: anything with ``score(domain, rows)`` returning item
probabilities can be ranked, and ``embed(domain, rows)`` /
``assign(domain, rows)`` are used for export and clustering reports.
"""

from __future__ import division, print_function, absolute_import

import numpy as np
import pandas as pd
from scipy import special
from sklearn.metrics import adjusted_rand_score
from sklearn.model_selection import train_test_split

from .base import ContractError, InsufficientDataError
from .data import DOMAINS

_DOMAIN_CODE = {"source": 0, "target": 1}


class RankingProtocol(object):
    """How held-out positives are ranked

    Parameters
    ----------
    k: int
        cutoff of HR@k and NDCG@k
    n_negatives: int
        sampled unobserved items ranked against each positive
    seed: int
        negative-sampling seed
    full_catalog: bool
        rank against every unobserved item instead of a sample
    """

    def __init__(self, k=5, n_negatives=99, seed=0, full_catalog=False):
        self.k = int(k)
        self.n_negatives = int(n_negatives)
        self.seed = int(seed)
        self.full_catalog = bool(full_catalog)
        if self.k < 1:
            raise ContractError("k must be >= 1, got %d" % self.k)
        if not self.full_catalog and self.n_negatives < self.k:
            raise ContractError("need at least k=%d negatives, got %d" % (
                self.k, self.n_negatives))

    def to_dict(self):
        return {"k": self.k, "n_negatives": self.n_negatives, "seed": self.seed,
                "full_catalog": self.full_catalog}

    def negatives(self, domain, user, item, excluded, n_items):
        """Candidate negatives of one (user, positive item) pair

        Sampling is seeded by (seed, domain, user, item) so the draw does not
        depend on the order in which pairs are visited.

        Returns
        -------
        items: numpy.ndarray
            empty when the user has no unobserved item
        """
        pool = np.setdiff1d(np.arange(n_items), excluded, assume_unique=True)
        if self.full_catalog or len(pool) <= self.n_negatives:
            return pool
        rng = np.random.default_rng([self.seed, _DOMAIN_CODE[domain], int(user), int(item)])
        return np.sort(rng.choice(pool, size=self.n_negatives, replace=False))


def rank_of(positive_score, positive_item, scores, items):
    """1-based rank of the positive among the candidates

    Ties are broken by item index, lower first.
    """
    above = np.sum(scores > positive_score)
    tied = np.sum((scores == positive_score) & (items < positive_item))
    return int(1 + above + tied)


def hit_and_gain(rank, k):
    """HR@k and NDCG@k contributions of a positive at ``rank``
    """
    if rank <= k:
        return 1.0, 1.0 / np.log2(rank + 1.0)
    return 0.0, 0.0


class MetricsReport(object):
    """HR@k and NDCG@k per domain for one split

    Parameters
    ----------
    split: str
    protocol: RankingProtocol
    results: dict
        ``results[domain]`` holds ``hr``, ``ndcg``, ``pairs`` and ``skipped``
    """

    def __init__(self, split, protocol, results):
        self.split = split
        self.protocol = protocol
        self.results = results

    def hr(self, domain):
        return self.results[domain]["hr"]

    def ndcg(self, domain):
        return self.results[domain]["ndcg"]

    def pairs(self, domain):
        return self.results[domain]["pairs"]

    def skipped(self, domain):
        return self.results[domain]["skipped"]

    def to_frame(self):
        rows = [{"split": self.split, "domain": d, "k": self.protocol.k,
                 "hr": self.results[d]["hr"], "ndcg": self.results[d]["ndcg"],
                 "pairs": self.results[d]["pairs"]} for d in DOMAINS if d in self.results]
        return pd.DataFrame(rows, columns=["split", "domain", "k", "hr", "ndcg", "pairs"])

    def save(self, outfile):
        """Save the report as CSV with columns split,domain,k,hr,ndcg,pairs
        """
        self.to_frame().to_csv(outfile, index=False, float_format="%.17g")


def evaluate_topk(model, dataset, split, protocol=None, domains=DOMAINS):
    """Rank every held-out positive of ``split`` against its candidates

    Users are represented by their training rows; scores come from
    ``model.score(domain, rows)``.

    Parameters
    ----------
    model: object
        provides ``score(domain, rows) -> (n_rows, n_items) array``
    dataset: PocdrDataset
    split: str
        "val" or "test" (or "train")
    protocol: RankingProtocol

    Returns
    -------
    report: MetricsReport
    """
    protocol = RankingProtocol() if protocol is None else protocol
    results = {}
    for domain in domains:
        matrix = dataset.matrix(domain)
        users, items = dataset.split_pairs(domain, split)
        hits, gains, skipped = [], [], 0
        if len(users):
            unique = np.unique(users)
            rows = dataset.train_matrix(domain)[unique].toarray()
            scores = np.asarray(model.score(domain, rows), dtype=np.float64)
            if scores.shape != (len(unique), matrix.n_items):
                raise ContractError("model returned scores of shape %s, expected %s" % (
                    scores.shape, (len(unique), matrix.n_items)))
            where = np.searchsorted(unique, users)
            csr = matrix.matrix
            for user, item, pos in zip(users, items, where):
                excluded = csr.indices[csr.indptr[user]:csr.indptr[user + 1]]
                candidates = protocol.negatives(domain, user, item, excluded, matrix.n_items)
                if not len(candidates):
                    skipped += 1
                    continue
                rank = rank_of(scores[pos, item], item, scores[pos, candidates], candidates)
                hit, gain = hit_and_gain(rank, protocol.k)
                hits.append(hit)
                gains.append(gain)
        results[domain] = {"hr": float(np.mean(hits)) if hits else 0.0,
                           "ndcg": float(np.mean(gains)) if gains else 0.0,
                           "pairs": len(hits), "skipped": skipped}
    return MetricsReport(split, protocol, results)


class DiscrepancyReport(object):
    """Proxy A-distance between two embedding sets

    Attributes
    ----------
    d_a: float
        2 (1 - 2 test_error)
    train_error, test_error: float
        domain classifier errors
    n_source, n_target: int
    """

    def __init__(self, d_a, train_error, test_error, n_source, n_target):
        self.d_a = d_a
        self.train_error = train_error
        self.test_error = test_error
        self.n_source = n_source
        self.n_target = n_target

    def to_dict(self):
        return {"d_a": self.d_a, "train_error": self.train_error,
                "test_error": self.test_error, "n_source": self.n_source,
                "n_target": self.n_target}


def proxy_a_distance(source, target, seed=0, steps=500, learning_rate=0.1, l2=1e-4,
                     min_samples=10):
    """Domain discrepancy from the held-out error of a linear domain classifier

    Parameters
    ----------
    source, target: numpy.ndarray
        M x D and M' x D embeddings, labelled 0 and 1
    seed: int
        seed of the stratified 50/50 split
    steps: int
        full-batch gradient descent steps of the logistic classifier
    learning_rate: float
    l2: float
        weight decay of the classifier weights

    Returns
    -------
    report: DiscrepancyReport
    """
    source = np.atleast_2d(np.asarray(source, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if len(source) < min_samples or len(target) < min_samples:
        raise InsufficientDataError("need %d samples per domain, got %d and %d" % (
            min_samples, len(source), len(target)))
    if source.shape[1] != target.shape[1]:
        raise ContractError("embedding widths %d and %d differ" % (
            source.shape[1], target.shape[1]))

    X = np.vstack([source, target])
    y = np.concatenate([np.zeros(len(source)), np.ones(len(target))])
    X_tr, X_te, y_tr, y_te = train_test_split(X, y, test_size=0.5, stratify=y,
                                              random_state=seed)
    center = X_tr.mean(axis=0)
    scale = X_tr.std(axis=0)
    scale[scale == 0] = 1.0
    X_tr = (X_tr - center) / scale
    X_te = (X_te - center) / scale

    w = np.zeros(X.shape[1])
    b = 0.0
    for _ in range(steps):
        residual = special.expit(X_tr @ w + b) - y_tr
        w -= learning_rate * (X_tr.T @ residual / len(y_tr) + l2 * w)
        b -= learning_rate * residual.mean()

    train_error = float(np.mean((X_tr @ w + b > 0) != y_tr))
    test_error = float(np.mean((X_te @ w + b > 0) != y_te))
    return DiscrepancyReport(2.0 * (1.0 - 2.0 * test_error), train_error, test_error,
                             len(source), len(target))


def user_embeddings(model, dataset, domain):
    """Posterior means of all users of ``domain`` from their training rows
    """
    return np.asarray(model.embed(domain, dataset.train_matrix(domain).toarray()))


def domain_discrepancy(model, dataset, seed=0):
    """Proxy A-distance between the source and target user embeddings
    """
    return proxy_a_distance(user_embeddings(model, dataset, "source"),
                            user_embeddings(model, dataset, "target"), seed=seed)


def cluster_agreement(model, dataset):
    """Adjusted Rand index of argmax-responsibility clusters vs planted labels

    Returns
    -------
    ari: dict
        per domain
    """
    if dataset.labels is None:
        raise ContractError("dataset carries no ground-truth cluster labels")
    out = {}
    for domain in DOMAINS:
        assigned = model.assign(domain, dataset.train_matrix(domain).toarray())
        out[domain] = float(adjusted_rand_score(dataset.labels[domain], assigned))
    return out


def export_embeddings(model, dataset, path):
    """Write posterior means of all users as TSV

    Columns: domain, user, overlapped, mu_0 ... mu_{D-1}
    """
    frames = []
    for domain in DOMAINS:
        mu = user_embeddings(model, dataset, domain)
        frame = pd.DataFrame(mu, columns=["mu_%d" % d for d in range(mu.shape[1])])
        frame.insert(0, "overlapped", dataset.overlapped(domain).astype(int))
        frame.insert(0, "user", np.arange(len(mu)))
        frame.insert(0, "domain", domain)
        frames.append(frame)
    table = pd.concat(frames, ignore_index=True)
    table.to_csv(path, sep="\t", index=False, float_format="%.17g")
    return table
