#!/usr/bin/env python
# -*- coding: utf-8 -*-

from __future__ import division, print_function, absolute_import

import os
import sys
import time
import warnings

import numpy as np

from . import autodiff as ad
from . import transport
from .base import ConfigError, ContractError, NumericError, FormatError, CorruptionError
from .base import ConvergenceWarning
from .base import ShapeMismatchError
from .data import DOMAINS, make_batches
from .evaluation import RankingProtocol, evaluate_topk
from .result import TrainLog
from .vae import (EncoderParams, DecoderParams, MoGPrior, encode, encode_reparameterize,
                  decode, cluster_responsibilities, hard_assignments, reconstruction_loss,
                  vr_loss, init_prior_from_latents)

__all__ = ["TrainConfig", "ModelParams", "VDEATrainer", "beta_schedule", "total_loss",
           "batch_losses", "pretrain_and_init", "train", "checkpoint_save", "checkpoint_load"]

CHECKPOINT_MAGIC = b"VDEA"
CHECKPOINT_VERSION = 1


class TrainConfig(object):
    """Hyper-parameters and seeds of a training run

    Every field has a default; unknown keyword arguments raise a
    ``ConfigError``. See ``TrainConfig.DEFAULTS`` for the fields.
    """

    DEFAULTS = {
        "batch_size": 256,
        "latent_dim": 128,
        "n_clusters": 30,
        "epsilon": 0.1,
        "beta_max": 0.2,
        "lambda_vl": 0.7,
        "lambda_vg": 1.0,
        "learning_rate": 1e-3,
        "pretrain_epochs": 20,
        "train_epochs": 100,
        "anneal_epochs": 50,
        "data_seed": 0,
        "model_seed": 0,
        "noise_seed": 0,
        "variant": "full",
        "hidden_dim": 600,
        "patience": 10,
        "gdot_outer_iter": 10,
        "gdot_inner_iter": 50,
        "gdot_tol": 1e-6,
        "n_negatives": 99,
        "topk": 5,
        "eval_seed": 0,
        "variance_floor": 1e-3,
        "psi_dump": False,
        "verbose": False,
    }

    _POSITIVE = ["batch_size", "latent_dim", "n_clusters", "epsilon", "learning_rate",
                 "hidden_dim", "patience", "gdot_outer_iter", "gdot_inner_iter", "gdot_tol",
                 "n_negatives", "topk", "variance_floor", "train_epochs"]
    _NONNEGATIVE = ["beta_max", "lambda_vl", "lambda_vg", "pretrain_epochs", "anneal_epochs",
                    "data_seed", "model_seed", "noise_seed", "eval_seed"]

    def __init__(self, **kwargs):
        unknown = sorted(set(kwargs) - set(self.DEFAULTS))
        if unknown:
            raise ConfigError("unknown configuration keys: %s" % ", ".join(unknown))
        for key, default in self.DEFAULTS.items():
            setattr(self, key, kwargs.get(key, default))

    def validate(self):
        """Check ranges and the variant name; returns self
        """
        for key in self._POSITIVE:
            value = getattr(self, key)
            if not isinstance(value, (int, float, np.integer, np.floating)) or not value > 0:
                raise ConfigError("%s must be positive, got %r" % (key, value))
        for key in self._NONNEGATIVE:
            value = getattr(self, key)
            if not isinstance(value, (int, float, np.integer, np.floating)) or value < 0:
                raise ConfigError("%s must be non-negative, got %r" % (key, value))
        if self.variant not in transport.VARIANTS:
            raise ConfigError("unknown variant %r, choose from %s" % (
                self.variant, ", ".join(sorted(transport.VARIANTS))))
        if self.n_negatives < self.topk:
            raise ConfigError("n_negatives (%d) must be >= topk (%d)" % (
                self.n_negatives, self.topk))
        return self

    def to_dict(self):
        return {key: getattr(self, key) for key in self.DEFAULTS}

    @classmethod
    def from_dict(cls, values):
        return cls(**values)

    def replace(self, **kwargs):
        """Copy of this config with some fields changed
        """
        values = self.to_dict()
        values.update(kwargs)
        return type(self)(**values)

    def protocol(self):
        return RankingProtocol(k=self.topk, n_negatives=self.n_negatives, seed=self.eval_seed)


class ModelParams(object):
    """Encoders, decoders and mixture priors of both domains

    Parameters
    ----------
    encoders, decoders, priors: dict
        keyed by domain name
    """

    def __init__(self, encoders, decoders, priors):
        self.encoders = encoders
        self.decoders = decoders
        self.priors = priors

    @classmethod
    def initialize(cls, n_items, latent_dim, n_clusters, hidden_dim=600, seed=0,
                   floor=1e-3):
        """Randomly initialized parameters

        Parameters
        ----------
        n_items: dict
            item count per domain
        """
        rng = np.random.default_rng(seed)
        encoders, decoders, priors = {}, {}, {}
        for domain in DOMAINS:
            encoders[domain] = EncoderParams(n_items[domain], latent_dim, hidden_dim, rng,
                                             prefix=domain + ".encoder")
            decoders[domain] = DecoderParams(latent_dim, n_items[domain], hidden_dim, rng,
                                             prefix=domain + ".decoder")
            priors[domain] = MoGPrior(np.zeros(n_clusters),
                                      rng.standard_normal((n_clusters, latent_dim)),
                                      np.zeros((n_clusters, latent_dim)), floor=floor,
                                      prefix=domain + ".prior")
        return cls(encoders, decoders, priors)

    @property
    def latent_dim(self):
        return self.encoders["source"].latent_dim

    @property
    def n_clusters(self):
        return self.priors["source"].n_components

    def parameters(self, groups=("encoder", "decoder", "prior")):
        """Name -> Tensor map in a fixed order
        """
        out = {}
        for domain in DOMAINS:
            for group, store in (("encoder", self.encoders), ("decoder", self.decoders),
                                 ("prior", self.priors)):
                if group in groups:
                    out.update(store[domain].parameters())
        return out

    def values(self):
        return {name: t.values.copy() for name, t in self.parameters().items()}

    def assign_values(self, values):
        """Overwrite parameter values in place from a name -> array map
        """
        for name, tensor in self.parameters().items():
            if values[name].shape != tensor.shape:
                raise ShapeMismatchError("%s has shape %s, expected %s" % (
                    name, values[name].shape, tensor.shape))
            tensor.values[...] = values[name]

    def score(self, domain, rows):
        """Decoder probabilities at the posterior means of ``rows``
        """
        with ad.no_grad():
            mu = encode(self.encoders[domain], rows).mu
            return decode(self.decoders[domain], mu).values

    def embed(self, domain, rows):
        with ad.no_grad():
            return encode(self.encoders[domain], rows).mu.values.copy()

    def posterior(self, domain, rows):
        """Posterior means and variances of ``rows`` as arrays
        """
        with ad.no_grad():
            emb = encode(self.encoders[domain], rows)
            return emb.mu.values.copy(), np.exp(emb.logvar.values)

    def assign(self, domain, rows):
        return hard_assignments(self.embed(domain, rows), self.priors[domain])


def beta_schedule(epoch, anneal_epochs, beta_max):
    """Linear KL annealing from 0 to ``beta_max`` over ``anneal_epochs``
    """
    if epoch < 0:
        raise ContractError("epoch must be >= 0, got %r" % (epoch,))
    if anneal_epochs <= 0:
        return beta_max
    return beta_max * min(1.0, epoch / anneal_epochs)


def total_loss(l_vr, l_va, l_vg, lambda_vl, lambda_vg, variant="full"):
    """Weighted training objective of an alignment variant

    Parameters
    ----------
    l_vr, l_va, l_vg: Tensor or float
        reconstruction, local and global alignment losses
    lambda_vl, lambda_vg: float
        weights of the alignment terms
    variant: str or AlignmentVariant
    """
    if not isinstance(variant, transport.AlignmentVariant):
        variant = transport.get_variant(variant)
    return variant.combine(l_vr, l_va, l_vg, lambda_vl, lambda_vg)


def batch_losses(params, batch, beta, noise, variant="full", coupling=None, lambda_vl=0.7,
                 lambda_vg=1.0):
    """Forward pass of one paired batch

    Parameters
    ----------
    params: ModelParams
    batch: PairedBatch
    beta: float
        KL weight
    noise: int, sequence of int or numpy.random.Generator
        reparameterization noise seed
    variant: str or AlignmentVariant
    coupling: CouplingMatrix
        cluster plan, required by the GDOT variants

    Returns
    -------
    losses: dict
        Tensors ``l_vr``, ``l_va``, ``l_vg`` and ``total``
    """
    if not isinstance(variant, transport.AlignmentVariant):
        variant = transport.get_variant(variant)
    rng = noise if isinstance(noise, np.random.Generator) else np.random.default_rng(noise)

    embs, codes, recons, gammas = {}, {}, {}, {}
    for domain in DOMAINS:
        embs[domain], codes[domain] = encode_reparameterize(
            params.encoders[domain], batch.block(domain), rng)
        recons[domain] = decode(params.decoders[domain], codes[domain])
        if beta > 0:
            gammas[domain] = cluster_responsibilities(codes[domain], params.priors[domain])

    l_vr = vr_loss(batch.source_block, recons["source"], embs["source"], gammas.get("source"),
                   batch.target_block, recons["target"], embs["target"], gammas.get("target"),
                   params.priors["source"], params.priors["target"], beta)
    l_va = transport.local_alignment_loss(embs["source"], embs["target"], batch.mask)
    if variant.global_term == "gdot":
        if coupling is None:
            raise ContractError("variant %s needs a cluster coupling" % variant.name)
        l_vg = transport.global_alignment_loss(coupling, params.priors["source"],
                                               params.priors["target"])
    elif variant.global_term == "moment":
        l_vg = transport.moment_alignment_loss(codes["source"], codes["target"])
    else:
        l_vg = ad.Tensor(0.0)

    total = variant.combine(l_vr, l_va, l_vg, lambda_vl, lambda_vg)
    return {"l_vr": l_vr, "l_va": l_va, "l_vg": l_vg, "total": total}


class VDEATrainer(object):
    """
    Trainer of the dual variational autoencoders with cluster-level
    optimal-transport alignment.

    Training runs in two phases: the autoencoders are first pretrained on
    reconstruction alone and the mixture priors fitted to the resulting
    latent means; then the full objective is optimized with Adam, solving
    the cluster coupling once per epoch on the current priors and keeping
    the parameters of the best validation epoch.

    @param config: TrainConfig
    @param dataset: PocdrDataset
    @param outDir: directory for the train log, checkpoint and coupling dumps
    (default = None, nothing is written)
    @param verbose: Update current run-status to the screen (default = config.verbose)
    """

    def __init__(self, config, dataset, outDir=None, verbose=None):
        self.config = config.validate()
        self.dataset = dataset
        self.variant = transport.get_variant(config.variant)
        self.outDir = outDir
        self.verbose = config.verbose if verbose is None else verbose
        self.params = None
        self.coupling = None
        self.stale_couplings = []
        self.log = TrainLog()
        self.pretrain_history = []

        smallest = min(dataset.n_users(d) for d in DOMAINS)
        if config.batch_size > smallest:
            raise ContractError("batch size %d exceeds the %d users of the smaller domain" % (
                config.batch_size, smallest))

        if self.outDir is not None and not os.path.exists(self.outDir):
            try:
                os.makedirs(self.outDir)
            except OSError:
                pass

    def initialize(self):
        """Draw fresh parameters from the model seed
        """
        cfg = self.config
        n_items = {d: self.dataset.n_items(d) for d in DOMAINS}
        self.params = ModelParams.initialize(n_items, cfg.latent_dim, cfg.n_clusters,
                                             cfg.hidden_dim, seed=[cfg.model_seed, 0],
                                             floor=cfg.variance_floor)
        return self.params

    def reconstruction_error(self):
        """Reconstruction loss of all training rows at their posterior means
        """
        total = 0.0
        with ad.no_grad():
            for domain in DOMAINS:
                rows = self.dataset.train_matrix(domain).toarray()
                mu = encode(self.params.encoders[domain], rows).mu
                recon = decode(self.params.decoders[domain], mu)
                total += reconstruction_loss(rows, recon).item()
        return total

    def pretrain_and_init(self):
        """Pretrain both autoencoders on reconstruction and fit the priors

        Returns
        -------
        params: ModelParams
        """
        cfg = self.config
        self.initialize()
        optimizer = ad.Adam(self.params.parameters(("encoder", "decoder")),
                            learning_rate=cfg.learning_rate)
        base = transport.get_variant("base")

        if self.verbose:
            print("Pretraining autoencoders for %d epochs" % cfg.pretrain_epochs)
        for epoch in range(cfg.pretrain_epochs):
            start = self.reconstruction_error()
            batches = make_batches(self.dataset, cfg.batch_size, [cfg.data_seed, 0, epoch])
            for index, batch in enumerate(batches):
                with ad.Tape() as tape:
                    try:
                        losses = batch_losses(self.params, batch, 0.0,
                                              [cfg.noise_seed, 0, epoch, index], base)
                    except NumericError as err:
                        raise NumericError("pretraining diverged at epoch %d: %s" % (epoch, err))
                    if not np.isfinite(losses["total"].item()):
                        raise NumericError("pretraining diverged at epoch %d: loss %r" % (
                            epoch, losses["total"].item()))
                    grads = tape.backward(losses["total"], inputs=list(optimizer.params.values()))
                optimizer.step(grads)
            end = self.reconstruction_error()
            if not np.isfinite(end):
                raise NumericError("pretraining diverged at epoch %d" % epoch)
            self.pretrain_history.append({"epoch": epoch, "start": start, "end": end})
            if self.verbose:
                sys.stdout.write("\r")
                sys.stdout.write("Pretrain epoch %d/%d: reconstruction %.4f" % (
                    epoch + 1, cfg.pretrain_epochs, end))
                sys.stdout.flush()
        if self.verbose and cfg.pretrain_epochs:
            print("")

        for k, domain in enumerate(DOMAINS):
            latents, variances = self.params.posterior(
                domain, self.dataset.train_matrix(domain).toarray())
            prior = init_prior_from_latents(latents, cfg.n_clusters, floor=cfg.variance_floor,
                                            seed=[cfg.model_seed, 1, k], prefix=domain + ".prior",
                                            posterior_variances=variances)
            self.params.priors[domain] = prior
            if self.verbose:
                print("Fitted %s prior: %d EM iterations" % (domain, prior.fit.n_iter))
        return self.params

    def solve_coupling(self, epoch):
        """Cluster coupling of the current priors

        A plan that misses the marginal tolerance is not trained on: the
        previous epoch's plan is kept, and without one training stops.

        Raises
        ------
        NumericError
            when the first coupling of a run does not converge
        """
        cfg = self.config
        priors = self.params.priors
        cost = transport.build_cost_tensor(priors["source"], priors["target"])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            coupling = transport.gdot_sinkhorn(
                cost, priors["source"].weights(), priors["target"].weights(), cfg.epsilon,
                outer_iter=cfg.gdot_outer_iter, inner_iter=cfg.gdot_inner_iter,
                tol=cfg.gdot_tol, seed=[cfg.model_seed, 2, epoch])
        if not coupling.converged:
            if self.coupling is None:
                raise NumericError("epoch %d: GDOT coupling misses its marginals by %g" % (
                    epoch, coupling.violation()))
            warnings.warn("epoch %d: GDOT coupling misses its marginals by %g, keeping the "
                          "previous plan" % (epoch, coupling.violation()), ConvergenceWarning)
            self.stale_couplings.append(epoch)
            coupling = self.coupling
        self.coupling = coupling
        if cfg.psi_dump and self.outDir is not None:
            transport.write_coupling(
                self.coupling, os.path.join(self.outDir, "psi_epoch%03d.tsv" % epoch))
        return self.coupling

    def step(self, batch, epoch, index, beta, optimizer):
        """One gradient step on one paired batch

        Returns
        -------
        values: dict
            float value of every loss term
        """
        cfg = self.config
        with ad.Tape() as tape:
            try:
                losses = batch_losses(self.params, batch, beta, [cfg.noise_seed, 1, epoch, index],
                                      self.variant, self.coupling, cfg.lambda_vl, cfg.lambda_vg)
            except NumericError as err:
                raise NumericError("epoch %d, batch %d: %s" % (epoch, index, err))
            values = {key: loss.item() for key, loss in losses.items()}
            if not all(np.isfinite(v) for v in values.values()):
                raise NumericError("epoch %d, batch %d: non-finite loss (%s)" % (
                    epoch, index, ", ".join("%s=%r" % kv for kv in sorted(values.items()))))
            grads = tape.backward(losses["total"], inputs=list(optimizer.params.values()))
        optimizer.step(grads)
        return values

    def validate(self):
        return evaluate_topk(self.params, self.dataset, "val", self.config.protocol())

    def train(self):
        """Run the alternating coupling / gradient training loop

        Returns
        -------
        params: ModelParams
            parameters of the best validation epoch
        log: TrainLog
        """
        cfg = self.config
        if self.params is None:
            self.pretrain_and_init()
        optimizer = ad.Adam(self.params.parameters(), learning_rate=cfg.learning_rate)

        best_score, best_values, stale = -np.inf, self.params.values(), 0
        if self.verbose:
            print("Training variant %s for up to %d epochs" % (self.variant.name,
                                                                cfg.train_epochs))
        for epoch in range(cfg.train_epochs):
            tstart = time.time()
            beta = beta_schedule(epoch, cfg.anneal_epochs, cfg.beta_max)
            if self.variant.uses_gdot:
                self.solve_coupling(epoch)

            sums = {"l_vr": 0.0, "l_va": 0.0, "l_vg": 0.0, "total": 0.0}
            batches = make_batches(self.dataset, cfg.batch_size, [cfg.data_seed, 1, epoch])
            for index, batch in enumerate(batches):
                values = self.step(batch, epoch, index, beta, optimizer)
                for key in sums:
                    sums[key] += values[key]

            report = self.validate()
            record = {key: value / len(batches) for key, value in sums.items()}
            record.update({
                "epoch": epoch, "beta": beta,
                "hr5_src": report.hr("source"), "ndcg5_src": report.ndcg("source"),
                "hr5_tgt": report.hr("target"), "ndcg5_tgt": report.ndcg("target"),
                "seconds": time.time() - tstart})
            self.log.append(record)

            if self.verbose:
                sys.stdout.write("\r")
                sys.stdout.write(
                    "Epoch %d/%d: loss %.4f, val HR@%d %.4f / %.4f" % (
                        epoch + 1, cfg.train_epochs, record["total"], cfg.topk,
                        record["hr5_src"], record["hr5_tgt"]))
                sys.stdout.flush()

            score = 0.5 * (record["hr5_src"] + record["hr5_tgt"])
            if score > best_score:
                best_score, best_values, stale = score, self.params.values(), 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    if self.verbose:
                        print("\nNo validation improvement for %d epochs, stopping" % stale)
                    break
        if self.verbose:
            print("")

        self.params.assign_values(best_values)
        if self.outDir is not None:
            self.log.save(os.path.join(self.outDir, "trainlog.csv"))
            checkpoint_save(self.params, os.path.join(self.outDir, "checkpoint.vdea"))
        return self.params, self.log


def pretrain_and_init(config, dataset):
    """Pretrained ModelParams with fitted priors, see ``VDEATrainer``
    """
    return VDEATrainer(config, dataset).pretrain_and_init()


def train(config, dataset, outDir=None):
    """Train a model, see ``VDEATrainer.train``
    """
    return VDEATrainer(config, dataset, outDir=outDir).train()


def checkpoint_save(params, path):
    """Write all parameter tensors to a binary checkpoint

    Layout: b"VDEA", u32 version, u32 tensor count, then per tensor a u32
    name length, the UTF-8 name, u32 rank, u64 dims and float64 payload,
    all little-endian.
    """
    chunks = [CHECKPOINT_MAGIC, np.array([CHECKPOINT_VERSION], "<u4").tobytes()]
    tensors = params.parameters()
    chunks.append(np.array([len(tensors)], "<u4").tobytes())
    for name, tensor in tensors.items():
        raw = name.encode("utf-8")
        chunks.append(np.array([len(raw)], "<u4").tobytes())
        chunks.append(raw)
        chunks.append(np.array([tensor.ndim], "<u4").tobytes())
        chunks.append(np.array(tensor.shape, "<u8").tobytes())
        chunks.append(np.ascontiguousarray(tensor.values, "<f8").tobytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as fout:
        fout.write(b"".join(chunks))
    os.replace(tmp, path)


class _Reader(object):
    def __init__(self, blob, path):
        self.blob = blob
        self.path = path
        self.offset = 0

    def take(self, dtype, count):
        dtype = np.dtype(dtype)
        end = self.offset + dtype.itemsize * count
        if end > len(self.blob):
            raise CorruptionError("%s: truncated at byte %d" % (self.path, len(self.blob)))
        out = np.frombuffer(self.blob, dtype=dtype, count=count, offset=self.offset)
        self.offset = end
        return out

    def raw(self, count):
        end = self.offset + count
        if end > len(self.blob):
            raise CorruptionError("%s: truncated at byte %d" % (self.path, len(self.blob)))
        out = self.blob[self.offset:end]
        self.offset = end
        return out


def _read_checkpoint(path):
    with open(path, "rb") as fin:
        blob = fin.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError("%s: not a VDEA checkpoint" % path)
    reader = _Reader(blob, path)
    reader.raw(4)
    version = int(reader.take("<u4", 1)[0])
    if version != CHECKPOINT_VERSION:
        raise FormatError("%s: checkpoint version %d, expected %d" % (
            path, version, CHECKPOINT_VERSION))
    arrays = {}
    for _ in range(int(reader.take("<u4", 1)[0])):
        try:
            name = reader.raw(int(reader.take("<u4", 1)[0])).decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptionError("%s: tensor name is not UTF-8" % path)
        dims = tuple(int(d) for d in reader.take("<u8", int(reader.take("<u4", 1)[0])))
        arrays[name] = reader.take("<f8", int(np.prod(dims, dtype=np.int64))).reshape(
            dims).astype(np.float64)
    if reader.offset != len(blob):
        raise CorruptionError("%s: %d trailing bytes" % (path, len(blob) - reader.offset))
    return arrays


def checkpoint_load(path, config=None):
    """Read a checkpoint written by ``checkpoint_save``

    Parameters
    ----------
    path: str
    config: TrainConfig
        when given, the stored latent dimension, cluster count and hidden
        width must match it

    Returns
    -------
    params: ModelParams
    """
    arrays = _read_checkpoint(path)
    required = ["%s.%s.%s" % (d, part, p) for d in DOMAINS
                for part in ("encoder", "decoder") for p in ("W1", "b1", "W2", "b2")]
    required += ["%s.prior.%s" % (d, p) for d in DOMAINS for p in ("logits", "means", "log_vars")]
    missing = [name for name in required if name not in arrays]
    if missing:
        raise CorruptionError("%s: missing tensors %s" % (path, ", ".join(missing)))

    means = arrays["source.prior.means"]
    if means.ndim != 2:
        raise CorruptionError("%s: prior means have rank %d" % (path, means.ndim))
    K, D = means.shape
    hidden = arrays["source.encoder.W1"].shape[-1]
    if config is not None:
        for label, stored, wanted in (("latent dimension", D, config.latent_dim),
                                      ("cluster count", K, config.n_clusters),
                                      ("hidden width", hidden, config.hidden_dim)):
            if stored != wanted:
                raise ShapeMismatchError("%s: checkpoint %s %d does not match configured %d" % (
                    path, label, stored, wanted))

    n_items = {d: arrays["%s.encoder.W1" % d].shape[0] for d in DOMAINS}
    floor = config.variance_floor if config is not None else 1e-3
    params = ModelParams.initialize(n_items, D, K, hidden, seed=0, floor=floor)
    try:
        params.assign_values(arrays)
    except ShapeMismatchError as err:
        raise CorruptionError("%s: %s" % (path, err))
    return params
