"""Interval temperature fields and component normal-probability intervals."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping

import numpy as np

from .predictor import Reconstruction

DEFAULT_LAMBDA = 1.0


@dataclass(frozen=True)
class IntervalField:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper fields differ in shape")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(self.lower < 0):
            raise ValueError("temperature bounds must be nonnegative")


@dataclass(frozen=True)
class ProbInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if not 0.0 <= self.lo <= self.hi <= 1.0:
            raise ValueError(f"invalid probability interval [{self.lo}, {self.hi}]")

    @property
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    def __contains__(self, p: float) -> bool:
        return self.lo <= p <= self.hi

    def __str__(self):
        return f"[{self.lo:.8g}, {self.hi:.8g}]"


class ComponentThresholds(dict):
    """Component id -> working-state temperature limit in Kelvin."""

    def __init__(self, limits: Mapping[str, float]):
        super().__init__({str(k): float(v) for k, v in limits.items()})
        bad = [k for k, v in self.items() if not v > 0]
        if bad:
            raise ValueError(f"thresholds must be positive: {bad}")


def interval_field(recon: Reconstruction, lam: float = DEFAULT_LAMBDA) -> IntervalField:
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    half = lam * np.asarray(recon.sigma, dtype=np.float64)
    mean = np.asarray(recon.mean, dtype=np.float64)
    return IntervalField(lower=np.maximum(mean - half, 0.0), upper=mean + half)


def component_interval_max(ifield: IntervalField, region: np.ndarray) -> tuple[float, float]:
    """Highest-temperature interval over a region; each bound maximized on its own."""
    region = np.asarray(region, dtype=bool)
    if not region.any():
        raise ValueError("component region is empty")
    return float(ifield.lower[region].max()), float(ifield.upper[region].max())


def count_normal(maxima: Iterable[tuple[float, float]], limit: float) -> tuple[int, int, int]:
    """(draws with upper < limit, draws with lower < limit, total draws)."""
    n_upper = n_lower = n = 0
    for lo, hi in maxima:
        n += 1
        n_upper += hi < limit
        n_lower += lo < limit
    return n_upper, n_lower, n


def normal_prob_intervals(maxima: Mapping[str, Iterable[tuple[float, float]]],
                          thresholds: Mapping[str, float],
                          exact: bool = False) -> dict[str, ProbInterval | tuple[Fraction, Fraction]]:
    """[Pr-, Pr+] per component from per-draw interval maxima.

    Pr- counts draws whose upper bound is below the limit, Pr+ those whose
    lower bound is.  Equality with the limit counts as failure.  With
    ``exact=True`` the two probabilities are returned as Fractions.
    """
    out = {}
    for cid, recs in maxima.items():
        if cid not in thresholds:
            raise KeyError(f"no threshold for component {cid!r}")
        k_minus, k_plus, n = count_normal(recs, thresholds[cid])
        if n < 1:
            raise ValueError(f"no Monte Carlo records for component {cid!r}")
        if exact:
            out[cid] = (Fraction(k_minus, n), Fraction(k_plus, n))
        else:
            out[cid] = ProbInterval(k_minus / n, k_plus / n)
    return out


def draw_maxima(recons: Iterable[Reconstruction], regions: Mapping[str, np.ndarray],
                lam: float = DEFAULT_LAMBDA) -> dict[str, list[tuple[float, float]]]:
    """Per-component interval maxima for each Monte Carlo reconstruction."""
    out: dict[str, list[tuple[float, float]]] = {cid: [] for cid in regions}
    for recon in recons:
        f = interval_field(recon, lam)
        for cid, region in regions.items():
            out[cid].append(component_interval_max(f, region))
    return out


class ECDF:
    """Right-continuous empirical CDF."""

    def __init__(self, values):
        v = np.sort(np.asarray(values, dtype=np.float64).ravel())
        if v.size == 0:
            raise ValueError("empirical CDF needs at least one value")
        self.values = v

    def __call__(self, x):
        return np.searchsorted(self.values, x, side="right") / self.values.size

    def steps(self) -> tuple[np.ndarray, np.ndarray]:
        """Distinct jump locations and the CDF value just after each."""
        xs = np.unique(self.values)
        return xs, self(xs)


def empirical_cdf(values) -> ECDF:
    return ECDF(values)
