from pathlib import Path

import numpy as np
import pytest

from thermoq.grid import Component, DomainSpec, LayoutSpec, NoisePlan, build_masks
from thermoq.stochastic import PowerDistribution

DATA = Path(__file__).parent / "data"


@pytest.fixture
def data_dir():
    return DATA


def small_layout(h=16, sigma=0.0):
    """16x16 board, two components, a 4x4 sensor lattice."""
    domain = DomainSpec(side_length=0.1, grid_h=h, grid_w=h, sink_width=0.025, sink_temp=298.0)
    s = h // 16
    comps = (
        Component("A", (4 * s, 2 * s, 8 * s, 6 * s), PowerDistribution("uniform", lower=2.0, upper=8.0)),
        Component("B", (9 * s, 9 * s, 13 * s, 14 * s), PowerDistribution("normal", mean=6.0, std=1.5)),
    )
    sensors = tuple((r * s, c * s) for r in (2, 6, 10, 14) for c in (2, 6, 10, 14))
    noise = NoisePlan(sensors=(0, 1), sigma=sigma) if sigma else NoisePlan()
    return domain, LayoutSpec(components=comps, sensors=sensors, noise=noise)


@pytest.fixture
def small():
    domain, layout = small_layout()
    return domain, layout, build_masks(domain, layout)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
