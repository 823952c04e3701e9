"""Finite-difference gradient checks for the autodiff primitives, losses and network.

Each case builds a scalar on a fresh tape from named float64 inputs.  The
analytic gradient from ``Tape.backward`` is compared with a central
difference, per input tensor, using the norm-wise relative error
``|g_ad - g_fd| / max(|g_ad|, |g_fd|)``.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import losses as L
from .net import NetConfig, TwoStageNet, init_params

DEFAULT_STEP = 1e-5
DEFAULT_TOL = 1e-4


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_error: float
    seconds: float

    def passed(self, tol: float = DEFAULT_TOL) -> bool:
        return self.max_rel_error < tol


def _evaluate(fn, inputs):
    tape = ad.Tape()
    leaves = {k: tape.leaf(v) for k, v in inputs.items()}
    out = fn(leaves)
    return tape, leaves, out


def check(fn: Callable[[dict], ad.Node], inputs: dict[str, np.ndarray],
          h: float = DEFAULT_STEP) -> float:
    """Largest per-tensor relative error between backprop and central differences."""
    inputs = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    tape, leaves, out = _evaluate(fn, inputs)
    if np.ndim(out.value) != 0:
        raise ValueError("gradient check needs a scalar output")
    names = list(leaves)
    analytic = dict(zip(names, tape.backward(out, wrt=[leaves[k] for k in names])))
    worst = 0.0
    for name in names:
        x = inputs[name]
        numeric = np.zeros_like(x)
        flat = x.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(_evaluate(fn, inputs)[2].value)
            flat[i] = orig - h
            fm = float(_evaluate(fn, inputs)[2].value)
            flat[i] = orig
            numeric.reshape(-1)[i] = (fp - fm) / (2 * h)
        a = analytic[name]
        scale = max(np.linalg.norm(a), np.linalg.norm(numeric))
        if scale > 0:
            worst = max(worst, float(np.linalg.norm(a - numeric) / scale))
    return worst


def _project(node: ad.Node, seed: int = 99) -> ad.Node:
    # random linear functional so every output element carries a distinct weight
    w = np.random.default_rng(seed).normal(size=node.shape)
    return ad.total(node * w)


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.uniform(margin, 1.0, size=shape)
    return x * rng.choice([-1.0, 1.0], size=shape)


def _distinct(rng, shape):
    # values spaced far beyond the step so max-pool argmax never flips
    n = int(np.prod(shape))
    return (rng.permutation(n).reshape(shape) * 0.01 + 0.3).astype(np.float64)


def cases(seed: int = 0) -> dict[str, tuple[Callable, dict]]:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 4, 4))
    mask = np.zeros((4, 4), dtype=bool)
    mask[[0, 1, 3], [2, 0, 3]] = True
    c = {}
    c["add"] = (lambda p: _project(p["a"] + p["b"]), {"a": x, "b": rng.normal(size=(1, 3, 1, 1))})
    c["sub"] = (lambda p: _project(p["a"] - p["b"]), {"a": x, "b": rng.normal(size=(2, 3, 4, 4))})
    c["mul"] = (lambda p: _project(p["a"] * p["b"]), {"a": x, "b": rng.normal(size=(1, 3, 4, 4))})
    c["scale"] = (lambda p: _project(ad.scale(p["a"], -2.5)), {"a": x})
    c["abs"] = (lambda p: _project(ad.abs_(p["a"])), {"a": _away_from_zero(rng, x.shape)})
    c["square"] = (lambda p: _project(ad.square(p["a"])), {"a": x})
    c["relu"] = (lambda p: _project(ad.relu(p["a"])), {"a": _away_from_zero(rng, x.shape)})
    c["sum"] = (lambda p: ad.total(ad.square(p["a"])), {"a": x})
    c["mean"] = (lambda p: ad.mean(ad.square(p["a"])), {"a": x})
    c["masked_mean"] = (lambda p: ad.masked_mean(ad.square(p["a"]), mask), {"a": x})
    c["crop"] = (lambda p: _project(p["a"][:, :, 1:-1, :3]), {"a": x})
    c["concat"] = (lambda p: _project(ad.concat([p["a"], p["b"]])),
                   {"a": x, "b": rng.normal(size=(2, 2, 4, 4))})
    c["diagonal_flip"] = (lambda p: _project(ad.diagonal_flip(p["a"]), seed=5), {"a": x})
    c["anti_diagonal_flip"] = (lambda p: _project(ad.diagonal_flip(p["a"], "anti-transpose"), seed=6),
                               {"a": x})
    c["conv2d"] = (lambda p: _project(ad.conv2d(p["x"], p["k"])),
                   {"x": x, "k": rng.normal(size=(2, 3, 3, 3))})
    c["bias_add"] = (lambda p: _project(ad.bias_add(p["x"], p["b"])),
                     {"x": x, "b": rng.normal(size=3)})
    c["conv_transpose2x2"] = (lambda p: _project(ad.conv_transpose2x2(p["x"], p["k"])),
                              {"x": x, "k": rng.normal(size=(3, 2, 2, 2))})
    c["maxpool2x2"] = (lambda p: _project(ad.maxpool2x2(p["a"])), {"a": _distinct(rng, x.shape)})
    c["upsample2x"] = (lambda p: _project(ad.upsample2x(p["a"])), {"a": x})
    c["batch_norm"] = (lambda p: _project(ad.batch_norm(p["x"], p["g"], p["b"])[0]),
                       {"x": x, "g": rng.normal(size=3), "b": rng.normal(size=3)})
    c["affine_channels"] = (lambda p: _project(ad.affine_channels(p["a"], np.array([0.5, -1.0, 2.0]),
                                                                  np.array([0.1, 0.2, 0.3]))),
                            {"a": x})
    c.update(_loss_cases(rng))
    c["two_stage_net"] = _net_case(rng)
    return c


def _loss_cases(rng):
    pred = rng.normal(size=(2, 1, 6, 6))
    mp_mask = np.zeros((6, 6), dtype=bool)
    mp_mask[[1, 2, 4], [1, 4, 2]] = True
    mp = rng.normal(size=(2, 1, 6, 6)) * mp_mask
    # keep residuals clear of the pinball kink
    pred = np.where(mp_mask, mp + _away_from_zero(rng, pred.shape), pred)
    nc = np.ones((6, 6), dtype=bool)
    nc[2:4, 2:4] = False
    bc = np.zeros((6, 6), dtype=bool)
    bc[0, 2:4] = True
    xs = np.cumsum(rng.uniform(0.5, 1.5, size=6))
    ys = np.cumsum(rng.uniform(0.5, 1.5, size=6))
    taus = np.array([0.2, 0.7])
    return {
        "loss_tau": (lambda p: L.loss_tau(p["y"], mp, mp_mask, taus), {"y": pred}),
        "loss_laplace": (lambda p: L.loss_laplace(p["y"], nc, xs, ys), {"y": pred}),
        "loss_laplace_mirror": (lambda p: L.loss_laplace(p["y"], nc, xs, ys, "mirror", bc), {"y": pred}),
        "loss_bc": (lambda p: L.loss_bc(p["y"], bc, 0.3), {"y": pred}),
        "loss_tv": (lambda p: L.loss_tv(p["y"]), {"y": pred}),
    }


def _net_case(rng):
    cfg = NetConfig(widths=(2, 3), convs_per_level=1, dtype="float64")
    net = TwoStageNet(cfg)
    params = init_params(cfg, rng, zero_head=False)
    params = {k: v + 0.05 * rng.normal(size=v.shape) for k, v in params.items()}
    x = rng.normal(size=(2, 2, 4, 4))

    def fn(p):
        return _project(net.forward(p, x)[0])

    return fn, params


def run(seed: int = 0, h: float = DEFAULT_STEP, only: list[str] | None = None) -> list[CheckResult]:
    results = []
    for name, (fn, inputs) in cases(seed).items():
        if only and name not in only:
            continue
        t = time.perf_counter()
        err = check(fn, inputs, h)
        results.append(CheckResult(name, err, time.perf_counter() - t))
    return results
