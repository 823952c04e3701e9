"""Domain geometry, layouts, region masks and temperature normalization.

Grid convention: zero-based, row-major, pixel (0, 0) at the top-left corner.
Row 0 is the top edge, where the heat sink sits.  Sensor and component
coordinates refer to cell centres.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .stochastic import PowerDistribution

NORM_OFFSET = 298.0
NORM_SCALE = 50.0


class LayoutError(ValueError):
    pass


class ResolutionError(ValueError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    side_length: float = 0.1
    grid_h: int = 32
    grid_w: int = 32
    sink_width: float = 0.01
    sink_temp: float = 298.0

    def __post_init__(self):
        if self.grid_h < 4 or self.grid_w < 4:
            raise LayoutError("grid must be at least 4x4")
        if not 0 < self.sink_width < self.side_length:
            raise LayoutError("sink width must lie in (0, L)")
        if self.sink_temp <= 0:
            raise LayoutError("sink temperature must be positive")

    @property
    def dx(self) -> float:
        return self.side_length / self.grid_w

    @property
    def dy(self) -> float:
        return self.side_length / self.grid_h

    @property
    def shape(self) -> tuple[int, int]:
        return (self.grid_h, self.grid_w)

    def sink_columns(self) -> range:
        n = int(round(self.sink_width / self.dx))
        if n < 1:
            raise ResolutionError(
                f"sink width {self.sink_width} m spans no cell at dx={self.dx:.3g} m"
            )
        start = (self.grid_w - n) // 2
        return range(start, start + n)

    def to_dict(self) -> dict:
        return {"L": self.side_length, "H": self.grid_h, "W": self.grid_w,
                "delta": self.sink_width, "T0": self.sink_temp}

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        return cls(side_length=float(d["L"]), grid_h=int(d["H"]), grid_w=int(d["W"]),
                   sink_width=float(d["delta"]), sink_temp=float(d["T0"]))


@dataclass(frozen=True)
class Component:
    id: str
    rect: tuple[int, int, int, int]  # (r0, c0, r1, c1), half-open
    dist: PowerDistribution

    @property
    def area_cells(self) -> int:
        r0, c0, r1, c1 = self.rect
        return (r1 - r0) * (c1 - c0)


@dataclass(frozen=True)
class NoisePlan:
    sensors: tuple[int, ...] = ()  # indices into LayoutSpec.sensors
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise LayoutError("noise sigma must be >= 0")


@dataclass(frozen=True)
class LayoutSpec:
    components: tuple[Component, ...]
    sensors: tuple[tuple[int, int], ...]
    noise: NoisePlan = field(default_factory=NoisePlan)

    def validate(self, domain: DomainSpec) -> None:
        H, W = domain.shape
        for comp in self.components:
            r0, c0, r1, c1 = comp.rect
            if not (0 <= r0 < r1 <= H and 0 <= c0 < c1 <= W):
                raise LayoutError(f"component {comp.id} rectangle {comp.rect} outside {H}x{W}")
        ids = [c.id for c in self.components]
        if len(set(ids)) != len(ids):
            raise LayoutError("duplicate component ids")
        if len(set(self.sensors)) != len(self.sensors):
            raise LayoutError("duplicate sensor coordinates")
        for r, c in self.sensors:
            if not (0 <= r < H and 0 <= c < W):
                raise LayoutError(f"sensor ({r},{c}) outside {H}x{W}")
        for i in self.noise.sensors:
            if not 0 <= i < len(self.sensors):
                raise LayoutError(f"noise plan references unknown sensor index {i}")

    @property
    def noisy_sensors(self) -> list[tuple[int, int]]:
        return [self.sensors[i] for i in self.noise.sensors]


@dataclass(frozen=True)
class RegionMasks:
    mp: np.ndarray
    nc: np.ndarray
    bc: np.ndarray
    components: tuple[tuple[str, np.ndarray], ...]

    def component(self, cid: str) -> np.ndarray:
        for k, m in self.components:
            if k == cid:
                return m
        raise KeyError(cid)

    @property
    def n_mp(self) -> int:
        return int(self.mp.sum())


def build_masks(domain: DomainSpec, layout: LayoutSpec) -> RegionMasks:
    layout.validate(domain)
    H, W = domain.shape
    occupied = np.zeros((H, W), dtype=np.int32)
    comps = []
    for comp in layout.components:
        m = np.zeros((H, W), dtype=bool)
        r0, c0, r1, c1 = comp.rect
        m[r0:r1, c0:c1] = True
        occupied += m
        comps.append((comp.id, m))
    if occupied.max(initial=0) > 1:
        raise LayoutError("component rectangles overlap")
    mp = np.zeros((H, W), dtype=bool)
    for r, c in layout.sensors:
        mp[r, c] = True
    bc = np.zeros((H, W), dtype=bool)
    bc[0, list(domain.sink_columns())] = True
    nc = occupied == 0
    if not nc.any():
        raise LayoutError("components cover the whole domain")
    for arr in [mp, nc, bc] + [m for _, m in comps]:
        arr.flags.writeable = False
    return RegionMasks(mp=mp, nc=nc, bc=bc, components=tuple(comps))


def normalize(values: np.ndarray, sparse: bool = False) -> np.ndarray:
    """Map Kelvin to the training scale (T - 298) / 50.

    With ``sparse=True`` zero pixels (no sensor) stay zero.
    """
    values = np.asarray(values, dtype=np.float64)
    out = (values - NORM_OFFSET) / NORM_SCALE
    if sparse:
        out = np.where(values != 0, out, 0.0)
    return out


def denormalize(values: np.ndarray, sparse: bool = False) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    out = values * NORM_SCALE + NORM_OFFSET
    if sparse:
        out = np.where(values != 0, out, 0.0)
    return out


# ------------------------------------------------------------------ JSON I/O


def load_layout(source: str | Path | dict) -> tuple[DomainSpec, LayoutSpec]:
    """Read ``{domain, components, sensors, noise}`` from a file or dict."""
    doc: dict[str, Any] = source if isinstance(source, dict) else json.loads(Path(source).read_text())
    for key in ("domain", "components", "sensors"):
        if key not in doc:
            raise LayoutError(f"layout document missing key {key!r}")
    domain = DomainSpec.from_dict(doc["domain"])
    comps = []
    for c in doc["components"]:
        rect = (int(c["y0"]), int(c["x0"]), int(c["y1"]), int(c["x1"]))
        comps.append(Component(id=str(c["id"]), rect=rect, dist=PowerDistribution.from_dict(c["dist"])))
    sensors = tuple((int(r), int(c)) for r, c in doc["sensors"])
    noise = _parse_noise(doc.get("noise"), sensors, domain)
    layout = LayoutSpec(components=tuple(comps), sensors=sensors, noise=noise)
    layout.validate(domain)
    return domain, layout


def _parse_noise(spec, sensors, domain) -> NoisePlan:
    if not spec:
        return NoisePlan()
    sigma = float(spec.get("sigma", 0.0))
    if "sensor_ids" in spec:
        idx = tuple(int(i) for i in spec["sensor_ids"])
    elif "region" in spec:
        r0, c0, r1, c1 = (int(v) for v in spec["region"])
        idx = tuple(i for i, (r, c) in enumerate(sensors) if r0 <= r < r1 and c0 <= c < c1)
    else:
        idx = tuple(range(len(sensors)))
    return NoisePlan(sensors=idx, sigma=sigma)


def layout_to_dict(domain: DomainSpec, layout: LayoutSpec) -> dict:
    return {
        "domain": domain.to_dict(),
        "components": [
            {"id": c.id, "y0": c.rect[0], "x0": c.rect[1], "y1": c.rect[2], "x1": c.rect[3],
             "dist": c.dist.to_dict()}
            for c in layout.components
        ],
        "sensors": [list(s) for s in layout.sensors],
        "noise": {"sensor_ids": list(layout.noise.sensors), "sigma": layout.noise.sigma},
    }
