"""Seeded random streams, moment-matched power distributions and Latin hypercube sampling."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

EULER_GAMMA = 0.5772156649015329

KINDS = ("normal", "lognormal", "gumbel", "uniform")


@dataclass(frozen=True)
class PowerDistribution:
    kind: str
    mean: float | None = None
    std: float | None = None
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if kind == "uniform":
            if self.lower is None or self.upper is None or not self.lower < self.upper:
                raise ValueError("uniform needs lower < upper")
        else:
            if self.mean is None or self.std is None or self.std <= 0:
                raise ValueError(f"{kind} needs a mean and a positive std")
            if kind == "lognormal" and self.mean <= 0:
                raise ValueError("lognormal needs a positive mean")

    @classmethod
    def from_dict(cls, d: dict) -> "PowerDistribution":
        kind = str(d["kind"]).lower()
        if kind == "uniform":
            lo = d.get("lo", d.get("lower"))
            hi = d.get("hi", d.get("upper"))
            return cls(kind, lower=float(lo), upper=float(hi))
        return cls(kind, mean=float(d["mean"]), std=float(d["std"]))

    def to_dict(self) -> dict:
        if self.kind == "uniform":
            return {"kind": "uniform", "lo": self.lower, "hi": self.upper}
        return {"kind": self.kind, "mean": self.mean, "std": self.std}

    def frozen(self):
        """scipy frozen distribution with the moment-matched parameters."""
        p = params_from_moments(self)
        if self.kind == "normal":
            return stats.norm(loc=p["loc"], scale=p["scale"])
        if self.kind == "uniform":
            return stats.uniform(loc=p["lower"], scale=p["upper"] - p["lower"])
        if self.kind == "gumbel":
            return stats.gumbel_r(loc=p["loc"], scale=p["scale"])
        return stats.lognorm(s=p["sigma"], scale=math.exp(p["mu"]))

    def ppf(self, u):
        return self.frozen().ppf(u)

    def cdf(self, x):
        return self.frozen().cdf(x)


def params_from_moments(dist: PowerDistribution) -> dict[str, float]:
    """Convert (mean, std) or (lower, upper) to the distribution's native parameters.

    Gumbel (max) : scale = std*sqrt(6)/pi, loc = mean - gamma*scale
    Lognormal    : sigma^2 = log(1 + (std/mean)^2), mu = log(mean) - sigma^2/2
    """
    if dist.kind == "normal":
        return {"loc": dist.mean, "scale": dist.std}
    if dist.kind == "uniform":
        return {"lower": dist.lower, "upper": dist.upper}
    if dist.kind == "gumbel":
        scale = dist.std * math.sqrt(6.0) / math.pi
        return {"loc": dist.mean - EULER_GAMMA * scale, "scale": scale}
    s2 = math.log1p((dist.std / dist.mean) ** 2)
    return {"mu": math.log(dist.mean) - 0.5 * s2, "sigma": math.sqrt(s2)}


# ------------------------------------------------------------------ streams


def stream(seed: int, name: str, *counters: int) -> np.random.Generator:
    """Independent generator for a named stream, keyed by (seed, name, counters).

    Streams are derived through SeedSequence spawn keys, so the same key gives
    the same sequence on every platform and no generator is shared.
    """
    key = (zlib.crc32(name.encode("utf-8")),) + tuple(int(c) for c in counters)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))


def open_uniform(rng: np.random.Generator, size=None) -> np.ndarray | float:
    """Uniform draws on the open interval (0, 1)."""
    k = rng.integers(0, 2**53, size=size, dtype=np.int64)
    return (k + 0.5) / 2.0**53


def draw_tau(rng: np.random.Generator, size=None):
    return open_uniform(rng, size)


def lhs_unit(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """n x d Latin hypercube on (0,1): one point per stratum per column."""
    if n < 1 or d < 1:
        raise ValueError("lhs needs n >= 1 and d >= 1")
    u = np.empty((n, d))
    for j in range(d):
        perm = rng.permutation(n)
        u[:, j] = (perm + open_uniform(rng, n)) / n
    return u


def lhs_sample(n: int, dists: Sequence[PowerDistribution], rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube sample of component powers, shape (n, len(dists))."""
    u = lhs_unit(n, len(dists), rng)
    out = np.empty_like(u)
    for j, dist in enumerate(dists):
        out[:, j] = dist.ppf(u[:, j])
    return out
