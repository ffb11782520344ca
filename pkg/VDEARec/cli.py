#!/usr/bin/env python
# -*- coding: utf-8 -*-
"""
Command-line entry point: ``vdearec <subcommand> ...``

Exit status is 0 on success, 2 for usage and configuration errors, 3 for
data and file-format errors and 4 for numerical failures. Errors are
reported as one ``ErrorClass: message`` line on stderr.
"""

from __future__ import division, print_function, absolute_import

import argparse
import hashlib
import json
import os
import platform
import sys

import numpy as np
import pandas as pd
import scipy
import sklearn

from . import __version__
from . import data as vdata
from . import plots
from .ablation import AXES, parse_values, run_ablation
from .base import VDEAError, ConfigError, UsageError, ContractError, NumericError
from .evaluation import (RankingProtocol, evaluate_topk, domain_discrepancy, cluster_agreement,
                         export_embeddings)
from .transport import VARIANTS
from .VDEARec import TrainConfig, VDEATrainer, checkpoint_load

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

# keys of a run configuration file besides the TrainConfig fields
RUN_DEFAULTS = {
    "data": None,
    "out": None,
    "checkpoint": None,
    "split": "test",
    "full_catalog": False,
}


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser that raises UsageError instead of exiting
    """

    def error(self, message):
        raise UsageError("%s: %s" % (self.prog, message))


class RunConfig(object):
    """Flat run configuration: TrainConfig fields plus paths and protocol

    Values are resolved with the precedence command-line flag > config
    file > built-in default.

    Parameters
    ----------
    train: TrainConfig
    run: dict
        the non-training keys of ``RUN_DEFAULTS``
    """

    def __init__(self, train, run):
        self.train = train
        self.run = run

    @classmethod
    def resolve(cls, path=None, overrides=None):
        values = {}
        if path is not None:
            try:
                with open(path, encoding="utf-8") as fin:
                    values = json.load(fin)
            except ValueError as err:
                raise ConfigError("%s: not a JSON document (%s)" % (path, err))
            if not isinstance(values, dict):
                raise ConfigError("%s: expected a flat JSON object" % path)
        values.update({k: v for k, v in (overrides or {}).items() if v is not None})
        unknown = sorted(set(values) - set(TrainConfig.DEFAULTS) - set(RUN_DEFAULTS))
        if unknown:
            raise ConfigError("unknown configuration keys: %s" % ", ".join(unknown))
        train = TrainConfig(**{k: v for k, v in values.items() if k in TrainConfig.DEFAULTS})
        run = dict(RUN_DEFAULTS)
        run.update({k: v for k, v in values.items() if k in RUN_DEFAULTS})
        return cls(train.validate(), run)

    def to_dict(self):
        out = self.train.to_dict()
        out.update(self.run)
        return out

    def protocol(self):
        return RankingProtocol(k=self.train.topk, n_negatives=self.train.n_negatives,
                               seed=self.train.eval_seed, full_catalog=self.run["full_catalog"])


def checksum(path):
    """SHA-256 of a file, or of all files below a directory in sorted order
    """
    digest = hashlib.sha256()
    if os.path.isdir(path):
        for root, dirs, files in os.walk(path):
            dirs.sort()
            for name in sorted(files):
                full = os.path.join(root, name)
                digest.update(os.path.relpath(full, path).encode("utf-8"))
                with open(full, "rb") as fin:
                    digest.update(fin.read())
    else:
        with open(path, "rb") as fin:
            digest.update(fin.read())
    return digest.hexdigest()


def _dump(obj, path):
    with open(path, "w", encoding="utf-8") as fout:
        json.dump(obj, fout, indent=1, sort_keys=True)
        fout.write("\n")


def write_manifest(outDir, command, config, inputs, echo=True):
    """Write ``manifest.json`` (and ``config.json`` when ``echo``) into ``outDir``

    Parameters
    ----------
    command: str
        subcommand name
    config: dict
        resolved configuration echo
    inputs: dict
        label -> input path, checksummed into the manifest
    """
    if not os.path.exists(outDir):
        os.makedirs(outDir)
    seeds = {k: config[k] for k in ("data_seed", "model_seed", "noise_seed", "eval_seed", "seed")
             if k in config}
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds,
        "versions": {"vdearec": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__,
                     "pandas": pd.__version__, "scikit-learn": sklearn.__version__},
        "inputs": {label: {"path": os.path.abspath(p), "sha256": checksum(p)}
                   for label, p in sorted(inputs.items())},
    }
    if echo:
        _dump(config, os.path.join(outDir, "config.json"))
    _dump(manifest, os.path.join(outDir, "manifest.json"))


def _require(path, label):
    if not os.path.exists(path):
        raise UsageError("%s %s does not exist" % (label, path))
    return path


def _out_dir(path):
    if not os.path.exists(path):
        os.makedirs(path)
    return path


def cmd_ingest(args):
    _require(args.source, "--source")
    _require(args.target, "--target")
    source, target = vdata.ingest_and_preprocess(args.source, args.target, args.min_rating,
                                                 args.min_interactions)
    meta = {"min_rating": args.min_rating, "min_interactions": args.min_interactions}
    vdata.write_matrices(_out_dir(args.out), source, target, meta=meta)
    write_manifest(args.out, "ingest", meta, {"source": args.source, "target": args.target})
    print("Ingested %d x %d source and %d x %d target interactions" % (
        source.n_users, source.n_items, target.n_users, target.n_items))


def cmd_synth(args):
    config = {"clusters": args.clusters, "users": args.users, "items": args.items,
              "ku": args.ku, "seed": args.seed, "noise": args.noise, "density": args.density,
              "target_density": args.target_density}
    dataset = vdata.generate_synthetic(args.clusters, args.users, args.items, args.ku,
                                       args.noise, args.seed, density=args.density,
                                       target_density=args.target_density)
    vdata.write_dataset(dataset, _out_dir(args.out))
    write_manifest(args.out, "synth", config, {})
    print("Synthesized %d users, %d overlapped" % (args.users, len(dataset.overlap)))


def cmd_build(args):
    _require(args.source_data, "--source-data")
    source, target = vdata.read_matrices(args.source_data)
    dataset = vdata.build_pocdr_dataset(source, target, args.ku, args.seed,
                                        labels=vdata.read_labels(args.source_data))
    vdata.write_dataset(dataset, _out_dir(args.out))
    write_manifest(args.out, "build", {"ku": args.ku, "seed": args.seed},
                   {"source_data": args.source_data})
    print("Built dataset with %d overlapped users" % len(dataset.overlap))


def _seed_overrides(args):
    return {"data_seed": args.data_seed, "model_seed": args.model_seed,
            "noise_seed": args.noise_seed}


def cmd_train(args):
    overrides = {"variant": args.variant, "data": args.data, "out": args.out}
    overrides.update(_seed_overrides(args))
    run = RunConfig.resolve(args.config, overrides)
    if run.run["data"] is None or run.run["out"] is None:
        raise UsageError("train needs --data and --out")
    _require(run.run["data"], "--data")
    dataset = vdata.read_dataset(run.run["data"])
    write_manifest(_out_dir(run.run["out"]), "train", run.to_dict(), {"data": run.run["data"]})
    trainer = VDEATrainer(run.train, dataset, outDir=run.run["out"])
    params, log = trainer.train()
    if plots.MATPLOTLIB and len(log):
        log.plot_losses().savefig(os.path.join(run.run["out"], "losses.png"))
        log.plot_metrics().savefig(os.path.join(run.run["out"], "metrics.png"))
    print("Best validation epoch %s" % log.best_epoch)


def cmd_eval(args):
    overrides = {"data": args.data, "checkpoint": args.checkpoint, "out": args.out,
                 "split": args.split, "topk": args.k, "n_negatives": args.negatives,
                 "eval_seed": args.eval_seed, "full_catalog": args.full_catalog or None}
    run = RunConfig.resolve(args.config, overrides)
    _require(run.run["data"], "--data")
    _require(run.run["checkpoint"], "--checkpoint")
    dataset = vdata.read_dataset(run.run["data"])
    params = checkpoint_load(run.run["checkpoint"], run.train if args.config else None)
    out = _out_dir(run.run["out"])
    write_manifest(out, "eval", run.to_dict(), {"data": run.run["data"],
                                                "checkpoint": run.run["checkpoint"]})
    report = evaluate_topk(params, dataset, run.run["split"], run.protocol())
    report.save(os.path.join(out, "metrics.csv"))
    _dump(domain_discrepancy(params, dataset, seed=run.train.eval_seed).to_dict(),
          os.path.join(out, "discrepancy.json"))
    if dataset.labels is not None:
        _dump(cluster_agreement(params, dataset), os.path.join(out, "clusters.json"))
    print(report.to_frame().to_string(index=False))


def cmd_ablate(args):
    overrides = {"data": args.data, "out": args.out}
    overrides.update(_seed_overrides(args))
    run = RunConfig.resolve(args.config, overrides)
    _require(run.run["data"], "--data")
    values = parse_values(args.sweep, args.values)
    dataset = vdata.read_dataset(run.run["data"])
    out = _out_dir(run.run["out"])
    config = run.to_dict()
    config.update({"sweep": args.sweep, "values": values, "jobs": args.jobs})
    write_manifest(out, "ablate", config, {"data": run.run["data"]})
    table = run_ablation(run.train, dataset, args.sweep, values, out, jobs=args.jobs,
                         verbose=run.train.verbose)
    if table is not None:
        if plots.MATPLOTLIB and args.sweep != "variant":
            plots.sweep_plot(table, "value").savefig(os.path.join(out, "sweep.png"))
        failed = int((table["status"] != "ok").sum())
        print("Ablation over %s: %d cells, %d failed" % (args.sweep, len(table), failed))


def cmd_export(args):
    _require(args.data, "--data")
    _require(args.checkpoint, "--checkpoint")
    dataset = vdata.read_dataset(args.data)
    params = checkpoint_load(args.checkpoint)
    table = export_embeddings(params, dataset, args.out)
    # leaves a run config.json in the same directory alone
    write_manifest(os.path.dirname(os.path.abspath(args.out)), "export-embeddings",
                   {"out": os.path.abspath(args.out)},
                   {"data": args.data, "checkpoint": args.checkpoint}, echo=False)
    print("Exported %d embeddings to %s" % (len(table), args.out))


def _seed_flags(parser):
    parser.add_argument("--data-seed", type=int, default=None)
    parser.add_argument("--model-seed", type=int, default=None)
    parser.add_argument("--noise-seed", type=int, default=None)


def build_parser():
    parser = ArgumentParser(prog="vdearec", description=(
        "Variational dual-embedding alignment for partially overlapped "
        "cross-domain recommendation"))
    parser.add_argument("--version", action="version", version="%(prog)s " + __version__)
    sub = parser.add_subparsers(dest="command", parser_class=ArgumentParser)

    p = sub.add_parser("ingest", help="binarize and filter two rating CSVs")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--min-rating", type=float, default=4)
    p.add_argument("--min-interactions", type=int, default=5)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic dataset with planted clusters")
    p.add_argument("--out", required=True)
    p.add_argument("--clusters", type=int, required=True)
    p.add_argument("--users", type=int, required=True)
    p.add_argument("--items", type=int, required=True)
    p.add_argument("--ku", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--density", type=float, default=0.1)
    p.add_argument("--target-density", type=float, default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build", help="draw overlapped users and the 8:1:1 split")
    p.add_argument("--source-data", required=True)
    p.add_argument("--ku", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", help="pretrain and train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--variant", choices=sorted(VARIANTS), default=None)
    p.add_argument("--out", required=True)
    _seed_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="rank held-out positives with a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", choices=["val", "test"], default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--negatives", type=int, default=None)
    p.add_argument("--full-catalog", action="store_true")
    p.add_argument("--eval-seed", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep one axis and tabulate metrics")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--sweep", choices=sorted(AXES), required=True)
    p.add_argument("--values", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    _seed_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-embeddings", help="write posterior means of all users")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)
    return parser


def exit_status(err):
    """Exit status of an exception raised by a subcommand
    """
    if isinstance(err, (ConfigError, ContractError)):
        return EXIT_USAGE
    if isinstance(err, NumericError):
        return EXIT_NUMERIC
    return EXIT_DATA


def main(argv=None):
    """Run one subcommand; returns the process exit status
    """
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("vdearec: a subcommand is required")
        args.func(args)
    except (VDEAError, OSError) as err:
        name = type(err).__name__
        if isinstance(err, OSError) and not isinstance(err, VDEAError):
            name = "IOError"
        sys.stderr.write("%s: %s\n" % (name, str(err).replace("\n", " ")))
        return exit_status(err)
    return 0


if __name__ == "__main__":
    sys.exit(main())
