"""Monte Carlo quantile prediction (mean and aleatoric sigma) and evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import NORM_SCALE, RegionMasks, denormalize, normalize
from .losses import quantile_image
from .net import TwoStageNet
from .stochastic import draw_tau

DEFAULT_N_PRE = 200


@dataclass(frozen=True)
class Reconstruction:
    mean: np.ndarray  # Kelvin
    sigma: np.ndarray  # Kelvin, population std over draws
    n_pre: int


def model_input(mp_kelvin: np.ndarray, mp_mask: np.ndarray, taus, dtype="float32",
                normalized: bool = True) -> np.ndarray:
    """Stack (normalized) MP images and quantile images into (B, 2, H, W).

    ``mp_kelvin`` is one (H, W) image or a batch (B, H, W) matching ``taus``.
    """
    taus = np.atleast_1d(np.asarray(taus, dtype=np.float64))
    mp = np.asarray(mp_kelvin, dtype=np.float64)
    if mp.ndim == 2:
        mp = np.broadcast_to(mp, (len(taus),) + mp.shape)
    if mp.shape[0] != len(taus):
        raise ValueError("one quantile level per MP image required")
    mpn = np.where(mp_mask, normalize(mp) if normalized else mp, 0.0)
    q = np.stack([quantile_image(mp_mask, t) for t in taus])
    return np.stack([mpn, q], axis=1).astype(dtype)


def sample_predictions(net: TwoStageNet, params, mp_kelvin: np.ndarray, masks: RegionMasks,
                       taus, chunk: int = 64, normalized: bool = True) -> np.ndarray:
    """Model-scale predictions (n, H, W) for one MP image and each quantile level."""
    taus = np.atleast_1d(taus)
    out = []
    for s in range(0, len(taus), chunk):
        x = model_input(mp_kelvin, masks.mp, taus[s:s + chunk], net.cfg.dtype, normalized)
        out.append(net.predict(params, x)[:, 0])
    return np.concatenate(out, axis=0)


def summarize_draws(draws: np.ndarray, n_pre: int | None = None,
                    normalized: bool = True) -> Reconstruction:
    """Mean and population std over axis 0 of draws, reported in Kelvin."""
    d = np.asarray(draws, dtype=np.float64)
    mean = d.mean(axis=0)
    sigma = np.sqrt(np.maximum(((d - mean) ** 2).mean(axis=0), 0.0))
    if normalized:
        mean, sigma = denormalize(mean), sigma * NORM_SCALE
    return Reconstruction(mean=mean, sigma=sigma, n_pre=n_pre or len(d))


def predict_mcqr(net: TwoStageNet, params, mp_kelvin: np.ndarray, masks: RegionMasks,
                 n_pre: int = DEFAULT_N_PRE, rng: np.random.Generator | None = None,
                 chunk: int = 64, normalized: bool = True) -> Reconstruction:
    """Run ``n_pre`` forward passes with fresh quantile levels; return mean and sigma."""
    if n_pre < 2:
        raise ValueError("n_pre must be >= 2")
    rng = rng if rng is not None else np.random.default_rng()
    taus = draw_tau(rng, n_pre)
    draws = sample_predictions(net, params, mp_kelvin, masks, taus, chunk, normalized)
    return summarize_draws(draws, n_pre, normalized)


# ------------------------------------------------------------------ metrics


class MetricError(ValueError):
    pass


def metrics(preds, truths, r2_mode: str = "pooled") -> dict[str, float]:
    """Average RMSE, MAE, MRE and R^2 over a test set of (H, W) fields.

    ``r2_mode='pooled'`` uses the mean predicted field over the test set as the
    R^2 baseline; ``'conventional'`` uses each truth field's own mean.
    """
    P = np.asarray(preds, dtype=np.float64)
    T = np.asarray(truths, dtype=np.float64)
    if P.ndim == 2:
        P, T = P[None], T[None]
    if P.shape != T.shape or P.shape[0] < 1:
        raise MetricError(f"shape mismatch {P.shape} vs {T.shape}")
    if np.any(T == 0):
        raise MetricError("relative error undefined for zero truth pixels")
    err = T - P
    rmse = np.sqrt((err**2).reshape(len(T), -1).mean(axis=1))
    mae = np.abs(err).reshape(len(T), -1).mean(axis=1)
    mre = (np.abs(err) / np.abs(T)).reshape(len(T), -1).mean(axis=1)
    if r2_mode == "pooled":
        base = P.mean(axis=0, keepdims=True)
    elif r2_mode == "conventional":
        base = T.reshape(len(T), -1).mean(axis=1)[:, None, None]
    else:
        raise ValueError(f"unknown r2_mode {r2_mode!r}")
    ss_res = (err**2).reshape(len(T), -1).sum(axis=1)
    ss_tot = ((T - base) ** 2).reshape(len(T), -1).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(ss_res == 0, 1.0, 1.0 - ss_res / ss_tot)
    return {"rmse": float(rmse.mean()), "mae": float(mae.mean()), "mre": float(mre.mean()),
            "r2": float(r2.mean())}
