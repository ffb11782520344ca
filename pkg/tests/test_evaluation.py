import os
import shutil
import tempfile

import pytest
import numpy as np
import pandas as pd

from VDEARec import data
from VDEARec import evaluation as ev
from VDEARec.base import ContractError, InsufficientDataError


class ConstantModel(object):
    """Scores every item the same, embeds users by their row sums"""

    def score(self, domain, rows):
        return np.zeros(rows.shape)

    def embed(self, domain, rows):
        return np.column_stack([rows.sum(axis=1), rows[:, :2].sum(axis=1)])


class RandomModel(object):
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def score(self, domain, rows):
        return self.rng.random(rows.shape)


class LabelModel(object):
    def __init__(self, dataset):
        self.dataset = dataset

    def assign(self, domain, rows):
        return (np.asarray(self.dataset.labels[domain]) + 1) % 3


class TestRanking(object):
    """Test rank computation and metric contributions
    """
    def test_contributions(self):
        assert ev.hit_and_gain(1, 5) == (1.0, 1.0)
        hit, gain = ev.hit_and_gain(2, 5)
        assert hit == 1.0 and gain == pytest.approx(1.0 / np.log2(3))
        assert ev.hit_and_gain(5, 5)[0] == 1.0
        assert ev.hit_and_gain(6, 5) == (0.0, 0.0)

    def test_tie_break_by_item_index(self):
        """Test that equal scores rank lower item indices first
        """
        items = np.array([0, 1, 2, 5])
        scores = np.zeros(4)
        assert ev.rank_of(0.0, 3, scores, items) == 4
        assert ev.rank_of(0.0, 0, scores, np.array([1, 2])) == 1
        assert ev.rank_of(0.5, 9, np.array([0.9, 0.1, 0.5]), np.array([1, 2, 3])) == 3

    def test_protocol_errors(self):
        with pytest.raises(ContractError):
            ev.RankingProtocol(k=0)
        with pytest.raises(ContractError):
            ev.RankingProtocol(k=5, n_negatives=4)
        assert ev.RankingProtocol(k=5, n_negatives=0, full_catalog=True).full_catalog

    def test_negatives_independent_of_visit_order(self):
        """Test that each pair draws the same negatives whenever it is visited
        """
        protocol = ev.RankingProtocol(n_negatives=10, seed=3)
        excluded = np.array([1, 4, 7])
        first = [protocol.negatives("source", u, 7, excluded, 50) for u in range(5)]
        second = [protocol.negatives("source", u, 7, excluded, 50) for u in reversed(range(5))]
        for a, b in zip(first, reversed(second)):
            np.testing.assert_array_equal(a, b)
            assert len(a) == 10
            assert not np.intersect1d(a, excluded).size
        other = protocol.negatives("target", 0, 7, excluded, 50)
        assert not np.array_equal(other, first[0])

    def test_small_pool(self):
        """Test that users with few unobserved items rank against all of them
        """
        protocol = ev.RankingProtocol(n_negatives=99)
        pool = protocol.negatives("source", 0, 1, np.array([0, 1]), 10)
        np.testing.assert_array_equal(pool, np.arange(2, 10))


class TestEvaluate(object):
    """Test top-k evaluation over a dataset
    """
    def setup_method(self):
        self.dataset = data.generate_synthetic(3, 60, 40, 0.5, 0.1, seed=2, density=0.3)
        self.tmpdir = tempfile.mkdtemp()

    def teardown_method(self):
        shutil.rmtree(self.tmpdir)

    def test_constant_scores_full_catalog(self):
        """Test against ranks counted by hand when every score ties
        """
        protocol = ev.RankingProtocol(k=5, full_catalog=True)
        report = ev.evaluate_topk(ConstantModel(), self.dataset, "test", protocol)
        for domain in data.DOMAINS:
            dense = self.dataset.matrix(domain).matrix.toarray()
            hits, gains = [], []
            for u, i in zip(*self.dataset.split_pairs(domain, "test")):
                rank = 1 + int(np.sum(dense[u, :i] == 0))
                hits.append(1.0 if rank <= 5 else 0.0)
                gains.append(1.0 / np.log2(rank + 1) if rank <= 5 else 0.0)
            assert report.hr(domain) == pytest.approx(np.mean(hits), abs=1e-12)
            assert report.ndcg(domain) == pytest.approx(np.mean(gains), abs=1e-12)
            assert report.pairs(domain) == len(hits)

    def test_random_scorer(self):
        """Test that random scores hit about k / (negatives + 1) of the time
        """
        dataset = data.generate_synthetic(4, 600, 200, 0.3, 0.1, seed=0)
        report = ev.evaluate_topk(RandomModel(1), dataset, "test")
        hr = np.mean([report.hr(d) for d in data.DOMAINS])
        assert 0.03 <= hr <= 0.07
        assert report.ndcg("source") <= report.hr("source")

    def test_deterministic(self):
        a = ev.evaluate_topk(ConstantModel(), self.dataset, "val", ev.RankingProtocol(seed=4))
        b = ev.evaluate_topk(ConstantModel(), self.dataset, "val", ev.RankingProtocol(seed=4))
        assert a.results == b.results

    def test_save_report(self):
        """Test the metrics CSV layout
        """
        report = ev.evaluate_topk(ConstantModel(), self.dataset, "test")
        path = os.path.join(self.tmpdir, "metrics.csv")
        report.save(path)
        table = pd.read_csv(path)
        assert list(table.columns) == ["split", "domain", "k", "hr", "ndcg", "pairs"]
        assert list(table["domain"]) == ["source", "target"]
        assert table["hr"][0] == report.hr("source")

    def test_bad_score_shape(self):
        class Broken(object):
            def score(self, domain, rows):
                return np.zeros((1, 1))

        with pytest.raises(ContractError):
            ev.evaluate_topk(Broken(), self.dataset, "test")

    def test_export(self):
        """Test one row per user with the overlap flag set for revealed users
        """
        path = os.path.join(self.tmpdir, "emb.tsv")
        ev.export_embeddings(ConstantModel(), self.dataset, path)
        table = pd.read_csv(path, sep="\t")
        assert list(table.columns) == ["domain", "user", "overlapped", "mu_0", "mu_1"]
        assert len(table) == self.dataset.n_users("source") + self.dataset.n_users("target")
        for domain in data.DOMAINS:
            part = table[table["domain"] == domain]
            flagged = np.flatnonzero(part["overlapped"].to_numpy())
            np.testing.assert_array_equal(flagged, np.sort(self.dataset.overlap.index(domain)))

    def test_cluster_agreement(self):
        """Test that a relabeled clustering scores ARI 1
        """
        ari = ev.cluster_agreement(LabelModel(self.dataset), self.dataset)
        assert ari == {"source": pytest.approx(1.0), "target": pytest.approx(1.0)}
        unlabeled = data.PocdrDataset(self.dataset.source, self.dataset.target,
                                      self.dataset.overlap, self.dataset.splits)
        with pytest.raises(ContractError):
            ev.cluster_agreement(LabelModel(self.dataset), unlabeled)


class TestProxyADistance(object):
    """Test the domain discrepancy estimate
    """
    def setup_method(self):
        self.rng = np.random.default_rng(8)

    def test_same_distribution(self):
        X = self.rng.standard_normal((400, 3))
        Y = self.rng.standard_normal((400, 3))
        report = ev.proxy_a_distance(X, Y, seed=0)
        assert abs(report.d_a) < 0.5
        assert report.n_source == report.n_target == 400

    def test_separated_distributions(self):
        X = self.rng.standard_normal((200, 3))
        Y = self.rng.standard_normal((200, 3)) + 10.0
        report = ev.proxy_a_distance(X, Y, seed=0)
        assert report.test_error == 0.0
        assert report.d_a == 2.0
        assert set(report.to_dict()) == {"d_a", "train_error", "test_error", "n_source",
                                         "n_target"}

    def test_insufficient_samples(self):
        with pytest.raises(InsufficientDataError):
            ev.proxy_a_distance(np.ones((3, 2)), np.ones((30, 2)))

    def test_domain_discrepancy_uses_embeddings(self):
        dataset = data.generate_synthetic(3, 60, 40, 0.5, 0.1, seed=2, density=0.3)
        report = ev.domain_discrepancy(ConstantModel(), dataset)
        assert report.n_source == 60 and -2.0 <= report.d_a <= 2.0
