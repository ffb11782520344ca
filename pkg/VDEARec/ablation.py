#!/usr/bin/env python
# -*- coding: utf-8 -*-

from __future__ import division, print_function, absolute_import

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor

import pandas as pd

from .base import VDEAError, ContractError
from .evaluation import evaluate_topk, domain_discrepancy
from .VDEARec import TrainConfig, train

try:
    from mpi4py import MPI
except ImportError:
    print("Do not have mpi4py package.")
    from . import nompi4py as MPI

# sweep axis -> TrainConfig field (ku is a dataset property)
AXES = {
    "variant": "variant",
    "lambda_vl": "lambda_vl",
    "lambda_vg": "lambda_vg",
    "K": "n_clusters",
    "D": "latent_dim",
    "ku": None,
}

COLUMNS = ["axis", "value", "variant", "lambda_vl", "lambda_vg", "n_clusters", "latent_dim",
           "ku", "data_seed", "model_seed", "noise_seed", "hr_source", "ndcg_source",
           "pairs_source", "hr_target", "ndcg_target", "pairs_target", "d_a", "status", "key"]


def parse_values(axis, text):
    """Parse a comma-separated list of sweep values for ``axis``
    """
    if axis not in AXES:
        raise ContractError("unknown sweep axis %r, choose from %s" % (
            axis, ", ".join(sorted(AXES))))
    items = [v.strip() for v in str(text).split(",") if v.strip()]
    if not items:
        raise ContractError("no values given for sweep axis %s" % axis)
    try:
        if axis == "variant":
            return items
        if axis in ("K", "D"):
            return [int(v) for v in items]
        return [float(v) for v in items]
    except ValueError as err:
        raise ContractError("bad value for sweep axis %s: %s" % (axis, err))


def cell_key(config, axis, value, checksum):
    """Cache key of one sweep cell
    """
    blob = json.dumps({"config": config.to_dict(), "axis": axis, "value": value,
                       "data": checksum}, sort_keys=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def cell_config(config, axis, value):
    field = AXES[axis]
    if field is None:
        return config
    return config.replace(**{field: value})


def run_cell(config, dataset, axis, value, outDir=None):
    """Train and evaluate one sweep cell

    Returns
    -------
    row: dict
        config echo, test metrics per domain and proxy A-distance
    """
    if axis == "ku":
        dataset = dataset.rebuild(value, dataset.seed)
    params, _ = train(config, dataset, outDir=outDir)
    report = evaluate_topk(params, dataset, "test", config.protocol())
    discrepancy = domain_discrepancy(params, dataset, seed=config.eval_seed)
    return {
        "hr_source": report.hr("source"), "ndcg_source": report.ndcg("source"),
        "pairs_source": report.pairs("source"), "hr_target": report.hr("target"),
        "ndcg_target": report.ndcg("target"), "pairs_target": report.pairs("target"),
        "d_a": discrepancy.d_a, "ku": dataset.ku,
    }


def _run_cell_safely(config_dict, dataset, axis, value, cell_dir):
    config = TrainConfig.from_dict(config_dict)
    try:
        row = run_cell(config, dataset, axis, value, outDir=cell_dir)
        row["status"] = "ok"
    except (VDEAError, ArithmeticError, ValueError) as err:
        row = {"status": "failed: %s: %s" % (type(err).__name__, err)}
    return row


def _echo(config, axis, value, dataset, key):
    return {"axis": axis, "value": value, "variant": config.variant,
            "lambda_vl": config.lambda_vl, "lambda_vg": config.lambda_vg,
            "n_clusters": config.n_clusters, "latent_dim": config.latent_dim,
            "ku": value if axis == "ku" else dataset.ku, "data_seed": config.data_seed,
            "model_seed": config.model_seed, "noise_seed": config.noise_seed, "key": key}


def _load_cell(path):
    if not os.path.exists(path):
        return None
    with open(path) as fin:
        return json.load(fin)


def _store_cell(path, row):
    tmp = path + ".tmp"
    with open(tmp, "w") as fout:
        json.dump(row, fout, indent=1, sort_keys=True)
    os.replace(tmp, path)


def run_ablation(config, dataset, axis, values, outDir, jobs=1, comm=MPI.COMM_WORLD,
                 verbose=False):
    """Run one train/evaluate cell per sweep value and tabulate the results

    Completed cells are cached under ``outDir/cells`` keyed by a hash of
    their configuration and the dataset, so an interrupted sweep resumes
    where it stopped. A failing cell is recorded and the others proceed.
    Cells are striped over MPI ranks and, within a rank, run by up to
    ``jobs`` worker processes.

    Parameters
    ----------
    config: TrainConfig
        base configuration shared by all cells
    dataset: PocdrDataset
    axis: str
        one of ``AXES``
    values: list
        values of the swept field
    outDir: str
    jobs: int
        worker processes per rank
    comm: MPI communicator

    Returns
    -------
    table: pandas.DataFrame
        one row per cell (``None`` on ranks other than 0); also written to
        ``outDir/ablation.csv``
    """
    if axis not in AXES:
        raise ContractError("unknown sweep axis %r, choose from %s" % (
            axis, ", ".join(sorted(AXES))))
    rank, size = comm.Get_rank(), comm.Get_size()
    cell_root = os.path.join(outDir, "cells")
    if not os.path.exists(cell_root):
        try:
            os.makedirs(cell_root)
        except OSError:
            pass

    checksum = dataset.checksum()
    cells = []
    for value in values:
        cfg = cell_config(config, axis, value).validate()
        key = cell_key(cfg, axis, value, checksum)
        cells.append((cfg, value, key))

    todo = []
    for index, (cfg, value, key) in enumerate(cells):
        if index % size != rank:
            continue
        cached = _load_cell(os.path.join(cell_root, key + ".json"))
        if cached is not None and cached.get("status") == "ok":
            if verbose:
                print("Cell %s=%s cached (%s)" % (axis, value, key))
            continue
        todo.append((cfg, value, key))

    args = [(cfg.to_dict(), dataset, axis, value, os.path.join(cell_root, key))
            for cfg, value, key in todo]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_cell_safely, *zip(*args)))
    else:
        rows = [_run_cell_safely(*a) for a in args]

    for (cfg, value, key), row in zip(todo, rows):
        record = _echo(cfg, axis, value, dataset, key)
        record.update(row)
        _store_cell(os.path.join(cell_root, key + ".json"), record)
        if verbose:
            print("Cell %s=%s: %s" % (axis, value, record["status"]))

    comm.barrier()
    if rank != 0:
        return None
    table = pd.DataFrame([_load_cell(os.path.join(cell_root, key + ".json"))
                          for _, _, key in cells], columns=COLUMNS)
    table.to_csv(os.path.join(outDir, "ablation.csv"), index=False, float_format="%.17g")
    return table
