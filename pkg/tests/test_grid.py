import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from thermoq.grid import (Component, DomainSpec, LayoutError, LayoutSpec, ResolutionError,
                          build_masks, denormalize, layout_to_dict, load_layout, normalize)
from thermoq.stochastic import PowerDistribution

U = PowerDistribution("uniform", lower=1.0, upper=2.0)


def test_single_sensor_mask():
    d = DomainSpec(grid_h=8, grid_w=8, sink_width=0.025)
    m = build_masks(d, LayoutSpec(components=(), sensors=((3, 3),)))
    assert m.mp.sum() == 1 and m.mp[3, 3]


def test_sink_spanning_two_cells():
    # dx = 0.1 / 20 = 0.005 m, delta = 0.01 m -> 2 cells centred on the top row
    d = DomainSpec(grid_h=20, grid_w=20, sink_width=0.01)
    m = build_masks(d, LayoutSpec(components=(), sensors=()))
    assert m.bc.sum() == 2
    assert m.bc[0, 9] and m.bc[0, 10]
    assert not m.bc[1:].any()


def test_component_excluded_from_nc():
    d = DomainSpec(grid_h=8, grid_w=8, sink_width=0.025)
    m = build_masks(d, LayoutSpec(components=(Component("C", (2, 2, 4, 4), U),), sensors=()))
    assert m.component("C").sum() == 4
    assert m.nc.sum() == 64 - 4
    assert not (m.nc & m.component("C")).any()


def test_sink_too_narrow_for_grid():
    d = DomainSpec(grid_h=8, grid_w=8, sink_width=0.001)
    with pytest.raises(ResolutionError):
        build_masks(d, LayoutSpec(components=(), sensors=()))


def test_rectangle_out_of_bounds():
    d = DomainSpec(grid_h=8, grid_w=8, sink_width=0.025)
    with pytest.raises(LayoutError):
        build_masks(d, LayoutSpec(components=(Component("C", (6, 6, 9, 8), U),), sensors=()))


def test_overlap_rejected():
    d = DomainSpec(grid_h=8, grid_w=8, sink_width=0.025)
    comps = (Component("A", (0, 0, 4, 4), U), Component("B", (3, 3, 5, 5), U))
    with pytest.raises(LayoutError, match="overlap"):
        build_masks(d, LayoutSpec(components=comps, sensors=()))


def test_sensor_inside_component_allowed():
    d = DomainSpec(grid_h=8, grid_w=8, sink_width=0.025)
    m = build_masks(d, LayoutSpec(components=(Component("A", (2, 2, 5, 5), U),), sensors=((3, 3),)))
    assert m.mp[3, 3] and m.component("A")[3, 3]


@pytest.mark.parametrize("kw", [dict(grid_h=3), dict(sink_width=0.2), dict(sink_temp=0.0)])
def test_domain_invariants(kw):
    with pytest.raises(LayoutError):
        DomainSpec(**kw)


def test_masks_deterministic(small):
    domain, layout, m1 = small
    m2 = build_masks(domain, layout)
    for a, b in [(m1.mp, m2.mp), (m1.nc, m2.nc), (m1.bc, m2.bc)]:
        assert a.tobytes() == b.tobytes()


def test_normalize_values():
    assert normalize(298.0) == 0.0
    assert normalize(348.0) == 1.0
    assert denormalize(1.0) == 348.0


def test_normalize_sparse_keeps_zeros():
    mp = np.array([[0.0, 348.0], [298.0, 0.0]])
    assert np.array_equal(normalize(mp, sparse=True), [[0.0, 1.0], [0.0, 0.0]])


@given(st.lists(st.floats(1.0, 1e4), min_size=1, max_size=50))
def test_normalize_round_trip(vals):
    x = np.array(vals)
    assert np.allclose(denormalize(normalize(x)), x, rtol=0, atol=1e-12 * max(1.0, np.abs(x).max()))


@given(st.floats(-10, 10), st.floats(-500, 500))
def test_normalize_affine(a, b):
    x = np.linspace(250, 400, 7)
    assert np.allclose(normalize(a * x + b), (a * x + b - 298.0) / 50.0)


def test_layout_json_round_trip(tmp_path, data_dir):
    domain, layout = load_layout(data_dir / "desk_layout.json")
    p = tmp_path / "l.json"
    p.write_text(json.dumps(layout_to_dict(domain, layout)))
    d2, l2 = load_layout(p)
    assert d2 == domain and l2 == layout


def test_noise_region_selects_sensors(data_dir):
    _, layout = load_layout(data_dir / "desk_layout.json")
    assert all(r < 16 and c < 16 for r, c in layout.noisy_sensors)
    assert len(layout.noisy_sensors) == 4
    assert layout.noise.sigma == 0.25


def test_layout_missing_key():
    with pytest.raises(LayoutError):
        load_layout({"domain": {"L": 0.1, "H": 8, "W": 8, "delta": 0.02, "T0": 298}})


def test_masks_are_read_only(small):
    _, _, m = small
    with pytest.raises(ValueError):
        m.mp[0, 0] = True
