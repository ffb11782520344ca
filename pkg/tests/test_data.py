import io
import os
import shutil
import tempfile

import pytest
import numpy as np
import scipy.sparse as sp

from VDEARec import data
from VDEARec.base import (ContractError, ParseError, EmptyDatasetError, NoOverlapError,
                          FormatError, CorruptionError, RegenerationWarning)


def _ratings(rows):
    return io.StringIO("user_id,item_id,rating\n" + "".join("%s,%s,%s\n" % r for r in rows))


def _block(users, items, rating=5, prefix=""):
    return [(prefix + "u%d" % u, "i%d" % i, rating) for u in users for i in items]


def _matrix(n_users, n_items, rng, density=0.3, user_prefix="u"):
    dense = rng.random((n_users, n_items)) < density
    dense[np.arange(n_users), rng.integers(n_items, size=n_users)] = True
    return data.InteractionMatrix(["%s%d" % (user_prefix, u) for u in range(n_users)],
                                  ["i%d" % i for i in range(n_items)], sp.csr_matrix(dense))


class TestIngest(object):
    """Test parsing, binarization and iterative filtering
    """
    def test_threshold(self):
        """Test that ratings >= 4 become positives and others are dropped
        """
        rows = _block(range(5), range(5), rating=4) + [("u0", "i9", 3)]
        src, tgt = data.ingest_and_preprocess(_ratings(rows), _ratings(rows))
        assert src.nnz == 25
        assert "i9" not in src.item_ids
        assert set(src.matrix.data) == {1.0}

    def test_user_with_four_positives_removed(self):
        """Test that a user with fewer than 5 positives is removed
        """
        rows = _block(range(5), range(5)) + _block([9], range(4))
        src, _ = data.ingest_and_preprocess(_ratings(rows), _ratings(rows))
        assert "u9" not in src.user_ids
        assert src.n_users == 5

    def test_filtering_reaches_fixpoint(self):
        """Test that removals cascading over users and items are applied
        """
        # i5 falls below the item threshold, which must not take u0-u2 below theirs
        rows = _block(range(5), range(5)) + _block([5], range(6)) + _block(range(3), [5])
        src, _ = data.ingest_and_preprocess(_ratings(rows), _ratings(rows))
        assert np.all(src.user_counts() >= 5)
        assert np.all(src.item_counts() >= 5)
        assert "i5" not in src.item_ids

    def test_duplicates_keep_last(self):
        """Test that the last rating of a duplicated pair wins
        """
        rows = _block(range(5), range(5)) + [("u0", "i0", 1)]
        src, _ = data.ingest_and_preprocess(_ratings(rows), _ratings(rows), min_interactions=1)
        assert src.matrix[src.user_index["u0"], src.item_ids.index("i0")] == 0

    def test_index_maps_follow_first_appearance(self):
        """Test that user indices follow the input order
        """
        rows = _block([7, 3, 5, 1, 2], range(5))
        src, _ = data.ingest_and_preprocess(_ratings(rows), _ratings(rows))
        assert src.user_ids == ["u7", "u3", "u5", "u1", "u2"]

    def test_malformed_rows(self):
        """Test that malformed rows raise with the line number
        """
        rows = _block(range(5), range(5))
        bad = _ratings(rows[:3] + [("u1", "i1", "x")])
        with pytest.raises(ParseError) as err:
            data.ingest_and_preprocess(bad, _ratings(rows))
        assert err.value.line == 5
        with pytest.raises(ParseError):
            data.ingest_and_preprocess(_ratings(rows[:2] + [("u1", "i2", 7)]), _ratings(rows))
        with pytest.raises(ParseError):
            data.ingest_and_preprocess(io.StringIO("a,b\n1,2\n"), _ratings(rows))

    def test_invalid_utf8(self):
        """Test that undecodable bytes raise ParseError with the line number
        """
        tmpdir = tempfile.mkdtemp()
        try:
            path = os.path.join(tmpdir, "bad.csv")
            with open(path, "wb") as fout:
                fout.write(b"user_id,item_id,rating\nu1,i1,5\nu\xff\xfe,i1,5\n")
            with pytest.raises(ParseError) as err:
                data.read_ratings(path)
            assert err.value.line == 3
        finally:
            shutil.rmtree(tmpdir)
        with pytest.raises(ParseError):
            data.read_ratings(io.BytesIO(b"user_id,item_id,rating\nu\xff\xfe,i1,5\n"))

    def test_empty_after_filtering(self):
        """Test that filtering everything away raises
        """
        rows = _block(range(3), range(3))
        with pytest.raises(EmptyDatasetError):
            data.ingest_and_preprocess(_ratings(rows), _ratings(rows))


class TestBuild(object):
    """Test overlap sampling and splitting
    """
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.src = _matrix(100, 40, rng)
        self.tgt = _matrix(100, 30, rng)

    def test_overlap_count(self):
        """Test round(K_u * pool) overlapped users for several ratios
        """
        for ku, expected in ((0.9, 90), (0.3, 30), (0.55, 55)):
            dataset = data.build_pocdr_dataset(self.src, self.tgt, ku, seed=3)
            assert len(dataset.overlap) == expected
            names_s = [self.src.user_ids[k] for k in dataset.overlap.source_index]
            names_t = [self.tgt.user_ids[k] for k in dataset.overlap.target_index]
            assert names_s == names_t

    def test_split_partition(self):
        """Test that the splits partition the positives 8:1:1
        """
        dataset = data.build_pocdr_dataset(self.src, self.tgt, 0.5, seed=1)
        for domain in data.DOMAINS:
            nnz = dataset.matrix(domain).nnz
            parts = [dataset.splits[domain][s] for s in data.SPLITS]
            assert sum(len(p) for p in parts) == nnz
            assert len(np.unique(np.concatenate(parts))) == nnz
            assert len(parts[1]) == int(np.floor(0.1 * nnz + 0.5))
            assert len(parts[2]) == int(np.floor(0.1 * nnz + 0.5))

    def test_1000_positives(self):
        """Test the 800/100/100 split of 1000 positives
        """
        split = data.split_positives(1000, np.random.default_rng(0))
        assert [len(split[s]) for s in data.SPLITS] == [800, 100, 100]

    def test_train_matrix_excludes_held_out(self):
        """Test that validation and test positives are absent from training rows
        """
        dataset = data.build_pocdr_dataset(self.src, self.tgt, 0.5, seed=1)
        train = dataset.train_matrix("source")
        users, items = dataset.split_pairs("source", "test")
        assert np.all(np.asarray(train[users, items]).ravel() == 0)
        assert train.nnz == len(dataset.splits["source"]["train"])

    def test_errors(self):
        """Test the K_u range and empty pool errors
        """
        with pytest.raises(ContractError):
            data.build_pocdr_dataset(self.src, self.tgt, 1.0, seed=0)
        with pytest.raises(ContractError):
            data.build_pocdr_dataset(self.src, self.tgt, 0.0, seed=0)
        other = _matrix(20, 30, np.random.default_rng(1), user_prefix="x")
        with pytest.raises(NoOverlapError):
            data.build_pocdr_dataset(self.src, other, 0.5, seed=0)

    def test_rebuild(self):
        """Test that rebuild only redraws overlap and split
        """
        dataset = data.build_pocdr_dataset(self.src, self.tgt, 0.3, seed=1)
        again = dataset.rebuild(0.9, 1)
        assert len(again.overlap) == 90
        assert again.source is dataset.source


class TestBatches(object):
    """Test paired batch construction
    """
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.src = _matrix(50, 20, rng)
        self.tgt = _matrix(60, 25, rng)
        self.dataset = data.build_pocdr_dataset(self.src, self.tgt, 0.4, seed=2)

    def test_alignment_and_coverage(self):
        """Test that masked rows are the same user and all users appear
        """
        batches = data.make_batches(self.dataset, 16, seed=[0, 1])
        seen = {"source": set(), "target": set()}
        pairs = set(zip(self.dataset.overlap.source_index, self.dataset.overlap.target_index))
        for batch in batches:
            assert len(batch) == 16
            for s, t in zip(batch.source_users[batch.mask], batch.target_users[batch.mask]):
                assert (s, t) in pairs
            seen["source"].update(batch.source_users)
            seen["target"].update(batch.target_users)
            np.testing.assert_array_equal(
                batch.source_block,
                self.dataset.train_matrix("source")[batch.source_users].toarray())
        assert seen["source"] == set(range(50))
        assert seen["target"] == set(range(60))
        assert sum(b.mask.sum() for b in batches) == len(self.dataset.overlap)

    def test_determinism(self):
        """Test that a fixed seed reproduces the batch sequence
        """
        first = data.make_batches(self.dataset, 16, seed=7)
        second = data.make_batches(self.dataset, 16, seed=7)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.source_users, b.source_users)
            np.testing.assert_array_equal(a.target_users, b.target_users)
            np.testing.assert_array_equal(a.mask, b.mask)

    def test_no_overlap(self):
        """Test that an empty overlap gives all-false masks
        """
        empty = data.PocdrDataset(self.src, self.tgt, data.OverlapMap([], []),
                                  self.dataset.splits)
        for batch in data.make_batches(empty, 10, seed=0):
            assert not batch.mask.any()

    def test_full_overlap(self):
        """Test that full overlap with N = users masks every row
        """
        full = data.PocdrDataset(self.src, self.src, data.OverlapMap(range(50), range(50)),
                                 {"source": self.dataset.splits["source"],
                                  "target": self.dataset.splits["source"]})
        batches = data.make_batches(full, 50, seed=0)
        assert len(batches) == 1
        assert batches[0].mask.all()
        np.testing.assert_array_equal(batches[0].source_users, batches[0].target_users)

    def test_batch_too_large(self):
        """Test that N above the user count is rejected
        """
        with pytest.raises(ContractError):
            data.make_batches(self.dataset, 51, seed=0)


class TestSynthetic(object):
    """Test synthetic dataset generation
    """
    def test_counts_and_labels(self):
        """Test 180 overlapped users out of 600 at K_u = 0.3
        """
        dataset = data.generate_synthetic(4, 600, 200, 0.3, 0.1, seed=0)
        assert len(dataset.overlap) == 180
        assert dataset.n_users("source") == dataset.n_users("target") == 600
        assert set(np.unique(dataset.labels["source"])) == set(range(4))
        for matrix in (dataset.source, dataset.target):
            assert np.all(matrix.user_counts() >= 5)
            assert np.all(matrix.item_counts() >= 5)

    def test_every_item_has_positives_at_low_density(self):
        """Test that sparse draws keep at least 5 positives per item
        """
        for seed in range(3):
            dataset = data.generate_synthetic(4, 200, 120, 0.3, 0.0, seed=seed, density=0.05)
            for matrix in (dataset.source, dataset.target):
                assert matrix.item_counts().min() >= 5
                assert matrix.user_counts().min() >= 5

    def test_determinism(self):
        """Test that the same seed gives the same dataset bit for bit
        """
        a = data.generate_synthetic(3, 120, 60, 0.5, 0.2, seed=11, density=0.3)
        b = data.generate_synthetic(3, 120, 60, 0.5, 0.2, seed=11, density=0.3)
        assert a.checksum() == b.checksum()
        assert (a.source.matrix != b.source.matrix).nnz == 0

    def test_noise_free_rows_follow_prototype(self):
        """Test that users sharing a prototype have identical rows without noise
        """
        dataset = data.generate_synthetic(3, 90, 80, 0.5, 0.0, seed=4, density=0.2)
        dense = dataset.source.matrix.toarray()
        labels = dataset.labels["source"]
        for c in range(3):
            rows = dense[labels == c]
            assert np.all(rows == rows[0])

    def test_regeneration_failure(self):
        """Test that draws which cannot reach 5 positives per user warn and finally fail
        """
        with pytest.warns(RegenerationWarning):
            with pytest.raises(EmptyDatasetError):
                data.generate_synthetic(2, 20, 4, 0.5, 0.0, seed=0, max_attempts=3)

    def test_bad_parameters(self):
        """Test the cluster count precondition
        """
        with pytest.raises(ContractError):
            data.generate_synthetic(1, 20, 10, 0.5, 0.0, seed=0)


class TestArtifacts(object):
    """Test the dataset artifact directory
    """
    def setup_method(self):
        self.tmpdir = tempfile.mkdtemp()
        self.dataset = data.generate_synthetic(3, 60, 40, 0.5, 0.1, seed=2, density=0.3)

    def teardown_method(self):
        shutil.rmtree(self.tmpdir)

    def test_write_and_read(self):
        """Test that a written dataset reads back identical
        """
        data.write_dataset(self.dataset, self.tmpdir)
        for name in ("meta.json", "source.npzlike", "target.npzlike", "overlap.tsv",
                     "splits.json", "labels.json"):
            assert os.path.isfile(os.path.join(self.tmpdir, name))
        loaded = data.read_dataset(self.tmpdir)
        assert loaded.checksum() == self.dataset.checksum()
        assert loaded.source.user_ids == self.dataset.source.user_ids
        np.testing.assert_array_equal(loaded.labels["target"], self.dataset.labels["target"])

    def test_pods_header(self):
        """Test the documented PODS layout
        """
        path = os.path.join(self.tmpdir, "m.npzlike")
        data.write_interactions(path, self.dataset.source)
        with open(path, "rb") as fin:
            blob = fin.read()
        assert blob[:4] == b"PODS"
        rows, cols, nnz = np.frombuffer(blob, "<u8", count=3, offset=8)
        assert (rows, cols, nnz) == (60, 40, self.dataset.source.nnz)
        assert len(blob) == 32 + 8 * nnz

    def test_bad_files(self):
        """Test magic, version and truncation errors
        """
        path = os.path.join(self.tmpdir, "m.npzlike")
        data.write_interactions(path, self.dataset.source)
        with open(path, "rb") as fin:
            blob = fin.read()
        with open(path, "wb") as fout:
            fout.write(blob[:-3])
        with pytest.raises(CorruptionError):
            data.read_interactions(path)
        with open(path, "wb") as fout:
            fout.write(b"XXXX" + blob[4:])
        with pytest.raises(FormatError):
            data.read_interactions(path)
        with open(path, "wb") as fout:
            fout.write(blob[:4] + np.array([9], "<u4").tobytes() + blob[8:])
        with pytest.raises(FormatError):
            data.read_interactions(path)

    def test_matrices_only(self):
        """Test that an ingest directory is not taken for a built dataset
        """
        data.write_matrices(self.tmpdir, self.dataset.source, self.dataset.target)
        src, _ = data.read_matrices(self.tmpdir)
        assert src.nnz == self.dataset.source.nnz
        with pytest.raises(FormatError):
            data.read_dataset(self.tmpdir)
