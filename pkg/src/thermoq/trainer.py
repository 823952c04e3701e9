"""Monte Carlo iterative training with a fresh quantile level per sample per epoch."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import losses as L
from .artifacts import Checkpoint, save_checkpoint
from .grid import NORM_OFFSET, NORM_SCALE, DomainSpec, RegionMasks
from .net import NetConfig, TwoStageNet, init_params
from .optim import AdamState, adam_step
from .predictor import metrics, model_input, predict_mcqr
from .stochastic import draw_tau, stream

log = logging.getLogger(__name__)

TERMS = ("tau", "laplace", "bc", "tv")
SPACINGS = ("physical", "domain", "unit")
HISTORY_KEYS = {"tau": "L_tau", "laplace": "L_LE", "bc": "L_BC", "tv": "L_TV"}


class TrainingDiverged(FloatingPointError):
    def __init__(self, epoch: int, term: str, value: float):
        super().__init__(f"loss term {term} became {value} in epoch {epoch}")
        self.epoch = epoch
        self.term = term


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 300
    lr: float = 1e-3
    lr_final: float | None = None  # cosine decay from lr to lr_final over the run; None keeps lr fixed
    batch_size: int = 16
    seed: int = 0
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    normalize: bool = True
    checkpoint_every: int = 0  # 0: only at the end
    patience: int | None = None  # early stopping on validation RMSE, off by default
    spacing: str = "domain"  # Laplacian coordinates: "physical" (m), "domain" (L = 1) or "unit" (pixels)
    laplace_edges: str = "interior"  # "mirror" also scores the adiabatic outer ring
    net: NetConfig = field(default_factory=NetConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")
        if self.lr_final is not None and not 0 < self.lr_final <= self.lr:
            raise ValueError("final learning rate must lie in (0, lr]")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint cadence must be >= 0")
        if self.patience is not None and self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.spacing not in SPACINGS:
            raise ValueError(f"unknown spacing {self.spacing!r}")
        if self.laplace_edges not in L.LAPLACE_EDGES:
            raise ValueError(f"unknown Laplacian edge mode {self.laplace_edges!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["net"] = self.net.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "weights" in d:
            d["weights"] = L.LossWeights(**d["weights"])
        if "net" in d:
            d["net"] = NetConfig.from_dict(d["net"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown training config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainResult:
    params: dict[str, np.ndarray]
    history: list[dict]
    checkpoint: Checkpoint


def epoch_taus(seed: int, epoch: int, n: int) -> np.ndarray:
    """Quantile levels for every sample of one epoch; a function of (seed, epoch) only."""
    return draw_tau(stream(seed, "tau", epoch), n)


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_final is None or cfg.epochs == 1:
        return cfg.lr
    frac = (epoch - 1) / (cfg.epochs - 1)
    return cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1 + math.cos(math.pi * frac))


def epoch_order(seed: int, epoch: int, n: int) -> np.ndarray:
    return stream(seed, "shuffle", epoch).permutation(n)


class _Scale:
    def __init__(self, normalized: bool):
        self.offset, self.scale = (NORM_OFFSET, NORM_SCALE) if normalized else (0.0, 1.0)

    def __call__(self, kelvin):
        return (np.asarray(kelvin, dtype=np.float64) - self.offset) / self.scale


def laplace_coords(domain: DomainSpec, spacing: str):
    H, W = domain.shape
    if spacing == "physical":
        return L.cell_centres(W, domain.dx), L.cell_centres(H, domain.dy)
    if spacing == "domain":
        return L.cell_centres(W, 1.0 / W), L.cell_centres(H, 1.0 / H)
    return np.arange(W, dtype=float), np.arange(H, dtype=float)


def batch_losses(net: TwoStageNet, params, mps, masks: RegionMasks, taus, domain: DomainSpec,
                 cfg: TrainConfig, training: bool = True):
    """Forward one batch; return (tape, leaves, {term: node})."""
    to_model = _Scale(cfg.normalize)
    x = model_input(mps, masks.mp, taus, net.cfg.dtype, cfg.normalize)
    pred, tape, leaves = net.forward(params, x, training=training)
    xs, ys = laplace_coords(domain, cfg.spacing)
    parts = {
        "tau": L.loss_tau(pred, np.where(masks.mp, to_model(mps), 0.0), masks.mp, taus),
        "laplace": L.loss_laplace(pred, masks.nc, xs, ys, cfg.laplace_edges, masks.bc),
        "bc": L.loss_bc(pred, masks.bc, float(to_model(domain.sink_temp))),
        "tv": L.loss_tv(pred),
    }
    return tape, leaves, parts


def train(mps: np.ndarray, masks: RegionMasks, domain: DomainSpec, cfg: TrainConfig,
          resume: Checkpoint | None = None, checkpoint_dir: str | Path | None = None,
          val: tuple[np.ndarray, np.ndarray] | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Minimize the weighted physics-informed loss over MP images ``mps`` (Kelvin).

    ``val`` is an optional (mps, truth fields) pair used for early stopping.
    Resuming from a checkpoint reproduces the remaining loss trace because the
    quantile levels and the batch order depend only on (seed, epoch).
    """
    mps = np.asarray(mps, dtype=np.float64)
    if mps.ndim != 3 or len(mps) == 0:
        raise ValueError("need a nonempty (N, H, W) stack of MP images")
    if mps.shape[1:] != domain.shape or masks.mp.shape != domain.shape:
        raise ValueError("MP images, masks and domain disagree on the grid shape")
    if cfg.patience is not None and val is None:
        raise ValueError("early stopping needs validation data")
    net = TwoStageNet(cfg.net)
    if resume is None:
        params = init_params(cfg.net, stream(cfg.seed, "init"))
        adam = AdamState()
        history: list[dict] = []
        start = 1
    else:
        if resume.net != cfg.net:
            raise ValueError("checkpoint architecture differs from the training config")
        params = dict(resume.params)
        adam = resume.adam
        net.bn_stats = resume.bn
        history = list(resume.history or [])[: resume.epoch]
        start = resume.epoch + 1
    n = len(mps)
    best, stale = math.inf, 0

    def snapshot(epoch):
        return Checkpoint(net=cfg.net, params=params, adam=adam, bn=net.bn_stats, epoch=epoch,
                          seed=cfg.seed, normalized=cfg.normalize,
                          train_config=cfg.to_dict(), history=history)

    epoch = start - 1
    for epoch in range(start, cfg.epochs + 1):
        taus = epoch_taus(cfg.seed, epoch, n)
        order = epoch_order(cfg.seed, epoch, n)
        lr = learning_rate(cfg, epoch)
        sums = dict.fromkeys(TERMS, 0.0)
        for s in range(0, n, cfg.batch_size):
            idx = order[s:s + cfg.batch_size]
            tape, leaves, parts = batch_losses(net, params, mps[idx], masks, taus[idx], domain, cfg)
            for term in TERMS:
                v = float(parts[term].value)
                if not math.isfinite(v):
                    raise TrainingDiverged(epoch, term, v)
                sums[term] += v * len(idx)
            total = L.total_loss(parts, cfg.weights)
            names = list(leaves)
            grads = tape.backward(total, wrt=[leaves[k] for k in names])
            params = adam_step(params, dict(zip(names, grads)), adam, lr)
        row = {"epoch": epoch}
        for term in TERMS:
            row[HISTORY_KEYS[term]] = sums[term] / n
        row["total"] = float(L.total_loss({t: row[HISTORY_KEYS[t]] for t in TERMS}, cfg.weights))
        history.append(row)
        log.info("epoch %d total %.6g", epoch, row["total"])
        if on_epoch is not None:
            on_epoch(row)
        if checkpoint_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_checkpoint(snapshot(epoch), Path(checkpoint_dir) / f"epoch_{epoch:06d}")
        if cfg.patience is not None:
            rmse = median_rmse(net, params, val[0], val[1], masks, cfg.normalize)
            if rmse < best:
                best, stale = rmse, 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("early stop at epoch %d (validation RMSE %.4g)", epoch, rmse)
                    break
    final = snapshot(epoch)
    if checkpoint_dir is not None:
        save_checkpoint(final, checkpoint_dir)
    return TrainResult(params=params, history=history, checkpoint=final)


def median_rmse(net, params, mps, fields, masks, normalized=True) -> float:
    """Validation RMSE of the tau = 0.5 prediction (cheap proxy for early stopping)."""
    x = model_input(mps, masks.mp, np.full(len(mps), 0.5), net.cfg.dtype, normalized)
    out = net.predict(params, x)[:, 0].astype(np.float64)
    scale = _Scale(normalized)
    pred = out * scale.scale + scale.offset
    return float(np.sqrt(((pred - fields) ** 2).mean()))


def validate(net: TwoStageNet, params, mps: np.ndarray, fields: np.ndarray, masks: RegionMasks,
             n_pre: int = 200, seed: int = 0, normalized: bool = True,
             r2_mode: str = "pooled") -> dict[str, float]:
    """Metrics of the Monte Carlo mean reconstruction against solver truth fields."""
    preds = np.stack([
        predict_mcqr(net, params, mps[i], masks, n_pre, stream(seed, "mc", i),
                     normalized=normalized).mean
        for i in range(len(mps))
    ])
    return metrics(preds, fields, r2_mode)

