"""Kurtosis-guided single-scale DSM training and score-norm anomaly scoring."""

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .errors import InvalidInputError, NumericError, StateError
from .marginal_stats import DEFAULT_BINS, FeatureStats, apply_standardization, compute_feature_stats
from .neural import (AdamState, Architecture, adam_step, ema_update, forward, init_network,
                     load_checkpoint, loss_and_grad, save_checkpoint)
from .noise_scale import NoisePlan, make_noise_plan

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 500
    batch_size: int = 128
    lr: float = 5e-4
    rule: str = "cf"
    sigma_base: float = 0.5
    c: float = 0.33
    clip_min: float = 0.1
    clip_max: float = 2.0
    tau: float = 1e-3
    bins: int = DEFAULT_BINS
    ema: bool = False
    rho: float = 0.999
    gamma: float = 80.0
    seed: int = 0
    n_blocks: int = 6
    main_width: int = 512
    hidden_width: int = 512
    dropout1: float = 0.2
    dropout2: float = 0.1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidInputError("epochs and batch_size must be >= 1")
        if not 0.0 < self.gamma < 100.0:
            raise InvalidInputError(f"gamma must lie in (0, 100), got {self.gamma}")
        if not 0.0 <= self.rho <= 1.0:
            raise InvalidInputError(f"rho must lie in [0, 1], got {self.rho}")

    @property
    def clip(self):
        return (self.clip_min, self.clip_max)

    def architecture(self, input_dim):
        return Architecture(input_dim=input_dim, n_blocks=self.n_blocks,
                            main_width=self.main_width, hidden_width=self.hidden_width,
                            dropout1=self.dropout1, dropout2=self.dropout2)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name: f.type for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class TrainedModel:
    net: object
    plan: NoisePlan
    feature_stats: list
    config: TrainConfig
    loss_history: list

    def __post_init__(self):
        d = self.net.arch.input_dim
        if self.plan.dim != d or len(self.feature_stats) != d:
            raise InvalidInputError("plan, network and feature statistics disagree on dimension")

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        save_checkpoint(self.net, directory / "checkpoint.bin")
        (directory / "noise_plan.json").write_text(self.plan.to_json())
        stats = [s.to_dict() for s in self.feature_stats]
        (directory / "feature_stats.json").write_text(json.dumps(stats, indent=2) + "\n")
        (directory / "config.json").write_text(
            json.dumps(self.config.to_dict(), indent=2, sort_keys=True) + "\n")
        with open(directory / "loss_history.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "loss"])
            for i, v in enumerate(self.loss_history, start=1):
                w.writerow([i, repr(float(v))])
        return [directory / name for name in
                ("checkpoint.bin", "noise_plan.json", "feature_stats.json", "config.json",
                 "loss_history.csv")]

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        try:
            net = load_checkpoint(directory / "checkpoint.bin")
            plan = NoisePlan.from_dict(json.loads((directory / "noise_plan.json").read_text()))
            stats = [FeatureStats.from_dict(d) for d in
                     json.loads((directory / "feature_stats.json").read_text())]
            config = TrainConfig.from_dict(json.loads((directory / "config.json").read_text()))
            with open(directory / "loss_history.csv", newline="") as fh:
                history = [float(r["loss"]) for r in csv.DictReader(fh)]
        except (OSError, KeyError, ValueError) as exc:
            raise InvalidInputError(f"cannot load model from {directory}: {exc}") from exc
        return cls(net, plan, stats, config, history)


def filter_survivors(norms, gamma):
    """Indices kept by the nearest-rank percentile filter.

    The threshold is the value at rank ``ceil(gamma * B / 100)`` of the
    sorted norms; every sample with norm <= threshold survives. Fewer than
    two survivors falls back to the whole batch.
    """
    norms = np.asarray(norms, dtype=np.float64)
    b = norms.size
    rank = min(b, max(1, math.ceil(gamma * b / 100.0)))
    threshold = np.sort(norms)[rank - 1]
    keep = np.flatnonzero(norms <= threshold)
    if keep.size < 2:
        return np.arange(b)
    return keep


def _prepare(data, cfg):
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError(f"expected an n x d training matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("training data contains NaN or Inf")
    stats = compute_feature_stats(X, cfg.bins)
    plan = make_noise_plan(stats, rule=cfg.rule, sigma_base=cfg.sigma_base, c=cfg.c,
                           clip=cfg.clip, tau=cfg.tau, bins=cfg.bins)
    return apply_standardization(X, stats), stats, plan


def _train(data, cfg, filtered, callback=None):
    Z, stats, plan = _prepare(data, cfg)
    n, d = Z.shape
    seeds = np.random.SeedSequence(cfg.seed).spawn(2)
    net = init_network(cfg.architecture(d), seeds[0])
    net.init_ema()
    rng = np.random.default_rng(seeds[1])
    adam = AdamState.zeros(net.params.size, lr=cfg.lr)
    sigma = plan.sigmas
    history = []
    step = 0
    for epoch in range(1, cfg.epochs + 1):
        perm = rng.permutation(n)
        total, count = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            x = Z[perm[start:start + cfg.batch_size]]
            norms = None
            if filtered:
                teacher_out = forward(net, x, use_ema=True)
                norms = np.sqrt(np.sum(teacher_out * teacher_out, axis=1))
                keep = filter_survivors(norms, cfg.gamma)
                x = x[keep]
            eps = rng.standard_normal(x.shape)
            loss, grad = loss_and_grad(net, x + sigma * eps, eps, train=True, rng=rng)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}", epoch=epoch)
            adam_step(adam, net.params, grad)
            if callback is not None:
                callback({"epoch": epoch, "step": step, "batch": perm[start:start + cfg.batch_size],
                          "norms": norms, "survivors": x.shape[0], "loss": loss, "net": net})
            ema_update(net, cfg.rho)
            total += loss * x.shape[0]
            count += x.shape[0]
            step += 1
        history.append(total / count)
        log.debug("epoch %d loss %.6f", epoch, history[-1])
    if not np.all(np.isfinite(net.params)):
        raise NumericError(f"parameters diverged by epoch {cfg.epochs}", epoch=cfg.epochs)
    return TrainedModel(net=net, plan=plan, feature_stats=stats, config=cfg,
                        loss_history=history)


def fit_dsm(data, cfg, callback=None):
    """Train on clean data.

    Features are standardised with statistics of ``data``; the noise plan
    comes from the rearranged kurtoses. Every epoch reshuffles, every
    minibatch draws fresh noise and takes one Adam step on the
    epsilon-prediction loss. An EMA copy is tracked (not used for training).
    ``rule="global"`` is plain single-scale DSM.
    """
    return _train(data, cfg, filtered=False, callback=callback)


def fit_kdsm_ema(data, cfg, callback=None):
    """Train with EMA-teacher batch filtering for contaminated data.

    Each minibatch is scored by the teacher (EMA weights, eval mode, clean
    inputs); samples above the gamma-th percentile of teacher norm are
    dropped before the student step, and the teacher is updated afterwards.
    ``callback``, if given, runs after the student step and before the EMA
    update with a dict describing the step.
    """
    return _train(data, cfg, filtered=True, callback=callback)


def fit(data, cfg, callback=None):
    """Dispatch on ``cfg.ema``."""
    return (fit_kdsm_ema if cfg.ema else fit_dsm)(data, cfg, callback=callback)


def _score(model, x_raw, use_ema):
    Z = apply_standardization(x_raw, model.feature_stats)
    out = forward(model.net, Z, use_ema=use_ema)
    return np.sqrt(np.sum(out * out, axis=1))


def anomaly_score(model, x_raw):
    """L2 norm of the learned score at clean, standardised inputs."""
    return _score(model, x_raw, use_ema=False)


def score_with_teacher(model, x_raw):
    """As :func:`anomaly_score` but through the EMA weights."""
    if model.net.ema_params is None:
        raise StateError("model has no EMA teacher")
    return _score(model, x_raw, use_ema=True)
