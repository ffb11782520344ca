#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Rating ingestion, partially overlapped dual-domain datasets, paired batching
and synthetic ground-truth data.
"""

from __future__ import division, print_function, absolute_import

import hashlib
import json
import os
import re
import warnings

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy import special

from .base import (ContractError, ParseError, EmptyDatasetError, NoOverlapError,
                   FormatError, CorruptionError, RegenerationWarning)

DOMAINS = ("source", "target")
SPLITS = ("train", "val", "test")
FORMAT_VERSION = 1
PODS_MAGIC = b"PODS"
_PAIR = np.dtype([("row", "<u4"), ("col", "<u4")])


def _round_half_up(x):
    return int(np.floor(x + 0.5))


class InteractionMatrix(object):
    """Binary user x item implicit-feedback matrix of one domain

    Parameters
    ----------
    user_ids: list of str
        identifier of each row
    item_ids: list of str
        identifier of each column
    matrix: scipy.sparse matrix
        nonzero entries mark positive interactions
    """

    def __init__(self, user_ids, item_ids, matrix):
        self.user_ids = [str(u) for u in user_ids]
        self.item_ids = [str(i) for i in item_ids]
        matrix = sp.csr_matrix(matrix, dtype=np.float64)
        matrix.sum_duplicates()
        matrix.eliminate_zeros()
        matrix.data[:] = 1.0
        matrix.sort_indices()
        if matrix.shape != (len(self.user_ids), len(self.item_ids)):
            raise ContractError("matrix shape %s does not match %d users x %d items" % (
                matrix.shape, len(self.user_ids), len(self.item_ids)))
        self.matrix = matrix
        self.user_index = {u: k for k, u in enumerate(self.user_ids)}

    @property
    def n_users(self):
        return self.matrix.shape[0]

    @property
    def n_items(self):
        return self.matrix.shape[1]

    @property
    def nnz(self):
        return self.matrix.nnz

    def positives(self):
        """Return the (row, col) arrays of all positives in CSR order
        """
        coo = self.matrix.tocoo()
        return coo.row.astype(np.int64), coo.col.astype(np.int64)

    def user_counts(self):
        return np.diff(self.matrix.indptr)

    def item_counts(self):
        return np.bincount(self.matrix.indices, minlength=self.n_items)


def _undecodable_line(path):
    """Return the 1-based number of the first line of ``path`` that is not UTF-8
    """
    with open(path, "rb") as fin:
        for number, raw in enumerate(fin, 1):
            try:
                raw.decode("utf-8")
            except UnicodeDecodeError:
                return number
    return None


def read_ratings(stream):
    """Read one domain's ratings CSV (header ``user_id,item_id,rating``)

    Parameters
    ----------
    stream: str or file-like
        path or open text stream

    Returns
    -------
    ratings: pandas.DataFrame
        columns user_id, item_id (str) and rating (float), duplicates of
        (user_id, item_id) resolved by keeping the last record
    """
    try:
        frame = pd.read_csv(stream, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise ParseError("empty input, expected header user_id,item_id,rating", line=1)
    except pd.errors.ParserError as err:
        found = re.search(r"line (\d+)", str(err))
        raise ParseError(str(err).strip(), line=int(found.group(1)) if found else None)
    except UnicodeDecodeError as err:
        line = _undecodable_line(stream) if isinstance(stream, str) else None
        raise ParseError("input is not UTF-8 (%s)" % err.reason, line=line)

    if list(frame.columns) != ["user_id", "item_id", "rating"]:
        raise ParseError("header must be user_id,item_id,rating, got %s" % ",".join(
            frame.columns), line=1)

    rating = pd.to_numeric(frame["rating"], errors="coerce")
    bad = (rating.isna() | (rating < 1) | (rating > 5)
           | (frame["user_id"] == "") | (frame["item_id"] == ""))
    if bad.any():
        first = int(np.flatnonzero(bad.to_numpy())[0])
        raise ParseError("malformed row %r" % (tuple(frame.iloc[first]),), line=first + 2)

    frame = frame.assign(rating=rating.astype(np.float64))
    return frame.drop_duplicates(["user_id", "item_id"], keep="last").reset_index(drop=True)


def binarize_and_filter(ratings, threshold=4, min_interactions=5):
    """Keep ratings >= threshold and drop sparse users/items until stable

    Parameters
    ----------
    ratings: pandas.DataFrame
        output of ``read_ratings``
    threshold: float
        smallest rating counted as a positive
    min_interactions: int
        users and items with fewer positives are removed

    Returns
    -------
    matrix: InteractionMatrix
    """
    positives = ratings.loc[ratings["rating"] >= threshold, ["user_id", "item_id"]]
    while len(positives):
        per_user = positives["user_id"].map(positives["user_id"].value_counts())
        per_item = positives["item_id"].map(positives["item_id"].value_counts())
        keep = (per_user >= min_interactions) & (per_item >= min_interactions)
        if keep.all():
            break
        positives = positives[keep]

    if not len(positives):
        raise EmptyDatasetError(
            "no interactions left after binarizing at %g and filtering at %d" % (
                threshold, min_interactions))

    users = pd.unique(positives["user_id"])
    items = pd.unique(positives["item_id"])
    rows = pd.Index(users).get_indexer(positives["user_id"])
    cols = pd.Index(items).get_indexer(positives["item_id"])
    matrix = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(len(users), len(items)))
    return InteractionMatrix(users, items, matrix)


def ingest_and_preprocess(source_stream, target_stream, threshold=4, min_interactions=5):
    """Parse both domains' rating files and apply binarization and filtering

    Parameters
    ----------
    source_stream, target_stream: str or file-like
        ratings CSV of each domain
    threshold: float
        ratings at or above it become positives (default 4)
    min_interactions: int
        minimum positives per user and per item (default 5)

    Returns
    -------
    source, target: InteractionMatrix
    """
    out = []
    for stream in (source_stream, target_stream):
        out.append(binarize_and_filter(read_ratings(stream), threshold, min_interactions))
    return tuple(out)


class OverlapMap(object):
    """Partial one-to-one correspondence between source and target users

    Parameters
    ----------
    source_index: array_like of int
        source row of each overlapped user
    target_index: array_like of int
        target row of the same user
    ku: float
        the overlapped user ratio the map was drawn with
    """

    def __init__(self, source_index, target_index, ku=None):
        self.source_index = np.asarray(source_index, dtype=np.int64).reshape(-1)
        self.target_index = np.asarray(target_index, dtype=np.int64).reshape(-1)
        self.ku = ku
        if self.source_index.shape != self.target_index.shape:
            raise ContractError("overlap index arrays differ in length")
        if (len(np.unique(self.source_index)) != len(self.source_index)
                or len(np.unique(self.target_index)) != len(self.target_index)):
            raise ContractError("overlap map is not one-to-one")

    def __len__(self):
        return len(self.source_index)

    def index(self, domain):
        return self.source_index if domain == "source" else self.target_index

    def mask(self, domain, n_users):
        """Boolean flag per user of ``domain``: True for overlapped users
        """
        flags = np.zeros(n_users, dtype=bool)
        flags[self.index(domain)] = True
        return flags


class PocdrDataset(object):
    """Two domains, their overlapped users and the 8:1:1 positive splits

    Parameters
    ----------
    source, target: InteractionMatrix
    overlap: OverlapMap
    splits: dict
        ``splits[domain][split]`` holds sorted indices into the domain's
        positives (CSR order)
    labels: dict
        optional ground-truth cluster label per user, keyed by domain
    seed: int
        the seed the overlap and split were drawn with
    """

    def __init__(self, source, target, overlap, splits, labels=None, seed=None):
        self.source = source
        self.target = target
        self.overlap = overlap
        self.splits = splits
        self.labels = labels
        self.seed = seed
        self._train = {}
        self._check_splits()

    def _check_splits(self):
        for domain in DOMAINS:
            nnz = self.matrix(domain).nnz
            parts = [np.asarray(self.splits[domain][s], dtype=np.int64) for s in SPLITS]
            joined = np.concatenate(parts)
            if len(joined) != nnz or not np.array_equal(np.sort(joined), np.arange(nnz)):
                raise ContractError("%s splits do not partition its %d positives" % (
                    domain, nnz))
            self.splits[domain] = dict(zip(SPLITS, parts))

    @property
    def ku(self):
        return self.overlap.ku

    def matrix(self, domain):
        if domain not in DOMAINS:
            raise ContractError("unknown domain %r" % (domain,))
        return self.source if domain == "source" else self.target

    def n_users(self, domain):
        return self.matrix(domain).n_users

    def n_items(self, domain):
        return self.matrix(domain).n_items

    def split_pairs(self, domain, split):
        """Return the (user, item) arrays of the positives in ``split``
        """
        if split not in SPLITS:
            raise ContractError("unknown split %r" % (split,))
        rows, cols = self.matrix(domain).positives()
        idx = self.splits[domain][split]
        return rows[idx], cols[idx]

    def train_matrix(self, domain):
        """Return the CSR matrix of training positives only
        """
        if domain not in self._train:
            users, items = self.split_pairs(domain, "train")
            shape = (self.n_users(domain), self.n_items(domain))
            self._train[domain] = sp.csr_matrix(
                (np.ones(len(users)), (users, items)), shape=shape)
        return self._train[domain]

    def overlapped(self, domain):
        return self.overlap.mask(domain, self.n_users(domain))

    def rebuild(self, ku, seed):
        """Redraw overlap and split from the same matrices
        """
        return build_pocdr_dataset(self.source, self.target, ku, seed, labels=self.labels)

    def checksum(self):
        """SHA-256 over matrices, overlap and splits
        """
        digest = hashlib.sha256()
        for domain in DOMAINS:
            rows, cols = self.matrix(domain).positives()
            digest.update(np.asarray(self.matrix(domain).matrix.shape, "<u8").tobytes())
            digest.update(rows.astype("<u4").tobytes())
            digest.update(cols.astype("<u4").tobytes())
            for split in SPLITS:
                digest.update(self.splits[domain][split].astype("<u8").tobytes())
        digest.update(self.overlap.source_index.astype("<u8").tobytes())
        digest.update(self.overlap.target_index.astype("<u8").tobytes())
        return digest.hexdigest()


def split_positives(nnz, rng, ratios=(0.8, 0.1, 0.1)):
    """Uniformly split ``nnz`` positive indices into train/val/test
    """
    order = rng.permutation(nnz)
    n_val = _round_half_up(ratios[1] * nnz)
    n_test = _round_half_up(ratios[2] * nnz)
    test = np.sort(order[:n_test])
    val = np.sort(order[n_test:n_test + n_val])
    train = np.sort(order[n_test + n_val:])
    return {"train": train, "val": val, "test": test}


def build_pocdr_dataset(source, target, ku, seed, labels=None):
    """Reveal the identity of a K_u fraction of shared users and split positives

    Parameters
    ----------
    source, target: InteractionMatrix
        matrices sharing a user-identity namespace
    ku: float
        overlapped user ratio, 0 < ku < 1
    seed: int
        seed of the overlap draw and the split
    labels: dict
        optional ground-truth labels carried into the dataset

    Returns
    -------
    dataset: PocdrDataset
    """
    if not 0.0 < ku < 1.0:
        raise ContractError("K_u must lie in (0, 1), got %r" % (ku,))

    shared = [u for u in source.user_ids if u in target.user_index]
    if not shared:
        raise NoOverlapError("source and target share no user identity")

    rng = np.random.default_rng(seed)
    n_overlap = _round_half_up(ku * len(shared))
    chosen = np.sort(rng.choice(len(shared), size=n_overlap, replace=False))
    overlap = OverlapMap(
        [source.user_index[shared[k]] for k in chosen],
        [target.user_index[shared[k]] for k in chosen], ku=ku)

    splits = {domain: split_positives(m.nnz, rng) for domain, m in zip(DOMAINS, (source, target))}
    return PocdrDataset(source, target, overlap, splits, labels=labels, seed=seed)


class PairedBatch(object):
    """N source rows and N target rows, aligned where the mask is set

    Parameters
    ----------
    source_users, target_users: numpy.ndarray
        row indices into each domain
    mask: numpy.ndarray of bool
        True where both rows belong to the same overlapped user
    source_block, target_block: numpy.ndarray
        dense training rows of the selected users
    """

    def __init__(self, source_users, target_users, mask, source_block, target_block):
        self.source_users = source_users
        self.target_users = target_users
        self.mask = mask
        self.source_block = source_block
        self.target_block = target_block

    def __len__(self):
        return len(self.mask)

    def users(self, domain):
        return self.source_users if domain == "source" else self.target_users

    def block(self, domain):
        return self.source_block if domain == "source" else self.target_block


def _fill_order(rng, pool, needed):
    """Concatenate fresh permutations of ``pool`` until ``needed`` entries
    """
    if needed <= 0:
        return np.zeros(0, dtype=np.int64)
    parts = []
    total = 0
    while total < needed:
        parts.append(rng.permutation(pool))
        total += len(pool)
    return np.concatenate(parts)[:needed]


def make_batches(dataset, batch_size, seed):
    """Shuffle users into paired batches for one epoch

    Overlapped users are spread over the batches at identical row positions
    in both blocks; remaining rows are filled with non-overlapped users of
    each domain independently.

    Parameters
    ----------
    dataset: PocdrDataset
    batch_size: int
        rows per block, at most the user count of either domain
    seed: int or sequence of int
        epoch seed

    Returns
    -------
    batches: list of PairedBatch
    """
    n_src, n_tgt = dataset.n_users("source"), dataset.n_users("target")
    if batch_size < 1 or batch_size > min(n_src, n_tgt):
        raise ContractError("batch size %d must lie in [1, %d]" % (
            batch_size, min(n_src, n_tgt)))

    rng = np.random.default_rng(seed)
    n_batches = -(-max(n_src, n_tgt) // batch_size)
    overlap = dataset.overlap
    chunks = np.array_split(rng.permutation(len(overlap)), n_batches)
    needed = n_batches * batch_size - len(overlap)

    fill = {}
    for domain, n_users in (("source", n_src), ("target", n_tgt)):
        pool = np.flatnonzero(~dataset.overlapped(domain))
        if not len(pool):
            pool = np.arange(n_users)
        fill[domain] = _fill_order(rng, pool, needed)

    train = {d: dataset.train_matrix(d) for d in DOMAINS}
    batches = []
    cursor = 0
    for chunk in chunks:
        k = len(chunk)
        free = batch_size - k
        src = np.concatenate([overlap.source_index[chunk], fill["source"][cursor:cursor + free]])
        tgt = np.concatenate([overlap.target_index[chunk], fill["target"][cursor:cursor + free]])
        cursor += free
        mask = np.arange(batch_size) < k
        order = rng.permutation(batch_size)
        src, tgt, mask = src[order], tgt[order], mask[order]
        batches.append(PairedBatch(
            src, tgt, mask,
            train["source"][src].toarray(), train["target"][tgt].toarray()))
    return batches


def _prototypes(rng, n_clusters, latent_dim, separation):
    if n_clusters <= latent_dim:
        q, _ = np.linalg.qr(rng.standard_normal((latent_dim, n_clusters)))
        return separation * q.T
    return separation * rng.standard_normal((n_clusters, latent_dim))


def generate_synthetic(n_clusters=4, n_users=600, n_items=200, ku=0.3, noise=0.1, seed=0,
                       latent_dim=8, separation=3.0, density=0.1, target_density=None,
                       gain=4.0, min_interactions=5, max_attempts=10):
    """Draw a dual-domain dataset with planted user clusters

    Every user identity exists in both domains and carries one of
    ``n_clusters`` well-separated preference prototypes. Each domain has its
    own item embeddings; a user-item pair is positive when the logistic of
    its affinity, shifted so that about ``density`` of noise-free pairs
    qualify, plus noise exceeds one half. An item no cluster would like at
    that shift gets its own smaller shift so that its best-matching cluster
    does, so every row and column holds at least ``min_interactions``
    positives or the draw is repeated.

    Parameters
    ----------
    n_clusters: int
        number of planted prototypes (>= 2)
    n_users: int
        user identities, present in both domains
    n_items: int
        items per domain
    ku: float
        overlapped user ratio of the returned dataset
    noise: float
        scale of the preference and interaction noise; 0 makes rows depend
        on the prototype only
    seed: int
    density, target_density: float
        fraction of noise-free positives per domain (target defaults to
        ``density``)

    Returns
    -------
    dataset: PocdrDataset
        with ``labels`` set for both domains
    """
    if n_clusters < 2:
        raise ContractError("need at least 2 clusters, got %d" % n_clusters)
    if min(n_users, n_items, latent_dim) < 1:
        raise ContractError("user, item and latent counts must be positive")
    if target_density is None:
        target_density = density

    rng = np.random.default_rng(seed)
    for attempt in range(max_attempts):
        labels = rng.integers(n_clusters, size=n_users)
        protos = _prototypes(rng, n_clusters, latent_dim, separation)
        clean = protos[labels]
        prefs = clean + noise * rng.standard_normal(clean.shape)

        matrices = []
        for prefix, dens in (("s", density), ("t", target_density)):
            items = rng.standard_normal((n_items, latent_dim))
            clean_affinity = clean @ items.T / np.sqrt(latent_dim)
            offset = np.quantile(clean_affinity, 1.0 - dens)
            offset = np.minimum(offset, clean_affinity.max(axis=0) - 1.0 / gain)
            affinity = prefs @ items.T / np.sqrt(latent_dim) - offset[None, :]
            score = special.expit(gain * affinity)
            score = score + noise * rng.standard_normal(score.shape)
            matrices.append((prefix, score > 0.5))

        short = [p for p, m in matrices
                 if min(m.sum(axis=1).min(), m.sum(axis=0).min()) < min_interactions]
        if not short:
            break
        warnings.warn("synthetic draw %d left users or items with fewer than %d positives; "
                      "regenerating" % (attempt, min_interactions), RegenerationWarning)
    else:
        raise EmptyDatasetError("could not draw synthetic data with >= %d positives per user "
                                "and item in %d attempts" % (min_interactions, max_attempts))

    users = ["u%05d" % k for k in range(n_users)]
    source, target = [
        InteractionMatrix(users, ["%s%05d" % (p, j) for j in range(n_items)], sp.csr_matrix(m))
        for p, m in matrices]
    split_seed = int(rng.integers(2 ** 31))
    return build_pocdr_dataset(source, target, ku, split_seed,
                               labels={"source": labels.copy(), "target": labels.copy()})


# artifact files


def write_interactions(path, matrix):
    """Write an InteractionMatrix as a PODS binary file
    """
    rows, cols = matrix.positives()
    pairs = np.empty(len(rows), dtype=_PAIR)
    pairs["row"] = rows
    pairs["col"] = cols
    with open(path, "wb") as fout:
        fout.write(PODS_MAGIC)
        fout.write(np.array([FORMAT_VERSION], dtype="<u4").tobytes())
        fout.write(np.array([matrix.n_users, matrix.n_items, len(rows)], dtype="<u8").tobytes())
        fout.write(pairs.tobytes())


def read_interactions(path, user_ids=None, item_ids=None):
    """Read a PODS binary file

    Returns
    -------
    matrix: InteractionMatrix
        identifiers default to the row/column numbers
    """
    with open(path, "rb") as fin:
        blob = fin.read()
    if blob[:4] != PODS_MAGIC:
        raise FormatError("%s: not a PODS file" % path)
    if len(blob) < 32:
        raise CorruptionError("%s: truncated header" % path)
    version = int(np.frombuffer(blob, dtype="<u4", count=1, offset=4)[0])
    if version != FORMAT_VERSION:
        raise FormatError("%s: PODS version %d, expected %d" % (path, version, FORMAT_VERSION))
    n_rows, n_cols, nnz = (int(x) for x in np.frombuffer(blob, dtype="<u8", count=3, offset=8))
    if len(blob) != 32 + nnz * _PAIR.itemsize:
        raise CorruptionError("%s: expected %d pairs, file holds %d bytes of payload" % (
            path, nnz, len(blob) - 32))
    pairs = np.frombuffer(blob, dtype=_PAIR, count=nnz, offset=32)
    if nnz and (pairs["row"].max() >= n_rows or pairs["col"].max() >= n_cols):
        raise CorruptionError("%s: entry outside the %d x %d matrix" % (path, n_rows, n_cols))
    user_ids = user_ids if user_ids is not None else [str(k) for k in range(n_rows)]
    item_ids = item_ids if item_ids is not None else [str(k) for k in range(n_cols)]
    matrix = sp.coo_matrix((np.ones(nnz), (pairs["row"].astype(np.int64),
                                           pairs["col"].astype(np.int64))),
                           shape=(n_rows, n_cols))
    return InteractionMatrix(user_ids, item_ids, matrix)


def _dump_json(obj, path):
    with open(path, "w", encoding="utf-8") as fout:
        json.dump(obj, fout, indent=1, sort_keys=True)
        fout.write("\n")


def _load_json(path):
    with open(path, encoding="utf-8") as fin:
        return json.load(fin)


def write_matrices(directory, source, target, meta=None):
    """Write both domains' matrices and identifier lists to ``directory``
    """
    if not os.path.exists(directory):
        os.makedirs(directory)
    for domain, matrix in zip(DOMAINS, (source, target)):
        write_interactions(os.path.join(directory, "%s.npzlike" % domain), matrix)
        _dump_json({"users": matrix.user_ids, "items": matrix.item_ids},
                   os.path.join(directory, "%s_index.json" % domain))
    info = {"format_version": FORMAT_VERSION}
    for domain, matrix in zip(DOMAINS, (source, target)):
        info["%s_users" % domain] = matrix.n_users
        info["%s_items" % domain] = matrix.n_items
        info["%s_positives" % domain] = matrix.nnz
    info.update(meta or {})
    _dump_json(info, os.path.join(directory, "meta.json"))


def read_matrices(directory):
    """Read the two matrices written by ``write_matrices``
    """
    out = []
    for domain in DOMAINS:
        index_path = os.path.join(directory, "%s_index.json" % domain)
        ids = _load_json(index_path) if os.path.exists(index_path) else {}
        out.append(read_interactions(os.path.join(directory, "%s.npzlike" % domain),
                                     ids.get("users"), ids.get("items")))
    return tuple(out)


def write_dataset(dataset, directory):
    """Write a PocdrDataset as an artifact directory
    """
    write_matrices(directory, dataset.source, dataset.target, meta={
        "ku": dataset.ku, "seed": dataset.seed, "overlapped": len(dataset.overlap)})
    with open(os.path.join(directory, "overlap.tsv"), "w") as fout:
        for s, t in zip(dataset.overlap.source_index, dataset.overlap.target_index):
            fout.write("%d\t%d\n" % (s, t))
    _dump_json({d: {s: dataset.splits[d][s].tolist() for s in SPLITS} for d in DOMAINS},
               os.path.join(directory, "splits.json"))
    if dataset.labels is not None:
        _dump_json({d: np.asarray(dataset.labels[d]).tolist() for d in DOMAINS},
                   os.path.join(directory, "labels.json"))


def read_labels(directory):
    """Ground-truth labels of an artifact directory, or None
    """
    path = os.path.join(directory, "labels.json")
    if not os.path.exists(path):
        return None
    raw = _load_json(path)
    return {d: np.asarray(raw[d], dtype=np.int64) for d in DOMAINS}


def read_dataset(directory):
    """Read an artifact directory written by ``write_dataset``
    """
    source, target = read_matrices(directory)
    meta = _load_json(os.path.join(directory, "meta.json"))
    if meta.get("format_version") != FORMAT_VERSION:
        raise FormatError("%s: dataset format version %s, expected %d" % (
            directory, meta.get("format_version"), FORMAT_VERSION))
    overlap_path = os.path.join(directory, "overlap.tsv")
    if not os.path.exists(overlap_path):
        raise FormatError("%s holds matrices only; run the build step first" % directory)
    pairs = np.loadtxt(overlap_path, dtype=np.int64, ndmin=2).reshape(-1, 2)
    overlap = OverlapMap(pairs[:, 0], pairs[:, 1], ku=meta.get("ku"))
    raw = _load_json(os.path.join(directory, "splits.json"))
    splits = {d: {s: np.asarray(raw[d][s], dtype=np.int64) for s in SPLITS} for d in DOMAINS}
    return PocdrDataset(source, target, overlap, splits, labels=read_labels(directory),
                        seed=meta.get("seed"))
