"""Monte Carlo reconstruction chain feeding the reliability analysis.

Each draw samples component powers, solves the truth field, extracts a
(noisy) MP image and reconstructs it with the trained model.  All three
random steps use the ``mc`` stream keyed by draw index, so any draw can be
recomputed on its own.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .grid import DomainSpec, LayoutSpec, RegionMasks, build_masks
from .net import TwoStageNet
from .predictor import DEFAULT_N_PRE, Reconstruction, predict_mcqr
from .reliability import ProbInterval, draw_maxima, normal_prob_intervals
from .solver import SolverConfig, extract_mp, solve_steady, source_field
from .stochastic import open_uniform, stream


@dataclass(frozen=True)
class McDraw:
    powers: np.ndarray
    truth: np.ndarray
    recon: Reconstruction


def sample_powers(layout: LayoutSpec, seed: int, draw: int) -> np.ndarray:
    u = open_uniform(stream(seed, "mc", draw, 0), len(layout.components))
    return np.array([c.dist.ppf(ui) for c, ui in zip(layout.components, u)], dtype=np.float64)


def monte_carlo_reconstructions(net: TwoStageNet, params, domain: DomainSpec, layout: LayoutSpec,
                                n_mcs: int, n_pre: int = DEFAULT_N_PRE, seed: int = 0,
                                normalized: bool = True,
                                solver: SolverConfig = SolverConfig()) -> list[McDraw]:
    if n_mcs < 1:
        raise ValueError("n_mcs must be >= 1")
    masks = build_masks(domain, layout)
    draws = []
    for d in range(n_mcs):
        powers = sample_powers(layout, seed, d)
        truth = solve_steady(domain, masks, source_field(domain, layout, powers), solver)
        mp = extract_mp(truth, layout, stream(seed, "mc", d, 1))
        recon = predict_mcqr(net, params, mp, masks, n_pre, stream(seed, "mc", d, 2),
                             normalized=normalized)
        draws.append(McDraw(powers, truth, recon))
    return draws


@dataclass(frozen=True)
class ReliabilityReport:
    maxima: dict[str, list[tuple[float, float]]]
    intervals: dict[str, ProbInterval]


def reliability_report(draws: Sequence[McDraw | Reconstruction], masks: RegionMasks,
                       thresholds: Mapping[str, float], lam: float) -> ReliabilityReport:
    """Normal-probability intervals for every thresholded component."""
    regions = {cid: masks.component(cid) for cid in thresholds}
    recons = [d.recon if isinstance(d, McDraw) else d for d in draws]
    maxima = draw_maxima(recons, regions, lam)
    return ReliabilityReport(maxima, normal_prob_intervals(maxima, thresholds))
