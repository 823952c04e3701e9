"""Two-stage encoder-decoder M(T_MP, tau; theta) with a diagonal flip between stages."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class NetConfig:
    in_channels: int = 2
    widths: tuple[int, ...] = (16, 32)
    feature_channels: int = 1
    convs_per_level: int = 2
    batch_norm: bool = False
    flip: str = "transpose"
    flip_back: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 1 or min(self.widths) < 1:
            raise ValueError("widths must be a nonempty tuple of positive ints")
        if self.convs_per_level < 1:
            raise ValueError("convs_per_level must be >= 1")
        if self.flip not in ("transpose", "anti-transpose"):
            raise ValueError(f"unknown flip mode {self.flip!r}")

    @property
    def levels(self) -> int:
        return len(self.widths)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        return cls(**{**d, "widths": tuple(d.get("widths", cls.widths))})


def _stage_shapes(prefix: str, cin: int, cout: int, cfg: NetConfig) -> list[tuple[str, tuple]]:
    shapes = []
    c = cin
    for lvl, w in enumerate(cfg.widths):
        for j in range(cfg.convs_per_level):
            shapes.append((f"{prefix}.enc{lvl}.{j}.k", (w, c, 3, 3)))
            shapes.append((f"{prefix}.enc{lvl}.{j}.b", (w,)))
            if cfg.batch_norm:
                shapes.append((f"{prefix}.enc{lvl}.{j}.gamma", (w,)))
                shapes.append((f"{prefix}.enc{lvl}.{j}.beta", (w,)))
            c = w
    for lvl in range(cfg.levels - 2, -1, -1):
        w = cfg.widths[lvl]
        shapes.append((f"{prefix}.up{lvl}.k", (c, w, 2, 2)))
        shapes.append((f"{prefix}.up{lvl}.b", (w,)))
        c = 2 * w
        for j in range(cfg.convs_per_level):
            shapes.append((f"{prefix}.dec{lvl}.{j}.k", (w, c, 3, 3)))
            shapes.append((f"{prefix}.dec{lvl}.{j}.b", (w,)))
            if cfg.batch_norm:
                shapes.append((f"{prefix}.dec{lvl}.{j}.gamma", (w,)))
                shapes.append((f"{prefix}.dec{lvl}.{j}.beta", (w,)))
            c = w
    shapes.append((f"{prefix}.head.k", (cout, c, 1, 1)))
    shapes.append((f"{prefix}.head.b", (cout,)))
    return shapes


def param_shapes(cfg: NetConfig) -> list[tuple[str, tuple]]:
    return _stage_shapes("s1", cfg.in_channels, cfg.feature_channels, cfg) + _stage_shapes(
        "s2", cfg.feature_channels, 1, cfg
    )


def init_params(cfg: NetConfig, rng: np.random.Generator,
                zero_head: bool = True) -> dict[str, np.ndarray]:
    """Kaiming-uniform (fan-in) kernels, zero biases, unit BN scales.

    With ``zero_head`` the final 1x1 kernel starts at zero, so the initial
    prediction is a flat field instead of high-curvature noise.
    """
    params = {}
    for name, shape in param_shapes(cfg):
        if zero_head and name == "s2.head.k":
            params[name] = np.zeros(shape)
        elif name.endswith(".k"):
            if ".up" in name:
                fan_in = shape[0] * shape[2] * shape[3]
            else:
                fan_in = shape[1] * shape[2] * shape[3]
            bound = math.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".gamma"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return {k: v.astype(cfg.dtype) for k, v in params.items()}


@dataclass
class BNStats:
    """Running batch-norm statistics, keyed by layer prefix."""

    mean: dict[str, np.ndarray] = field(default_factory=dict)
    var: dict[str, np.ndarray] = field(default_factory=dict)
    momentum: float = 0.1


class TwoStageNet:
    def __init__(self, cfg: NetConfig):
        self.cfg = cfg
        self.bn_stats = BNStats()

    def _conv_block(self, x, p, name, training):
        x = ad.conv2d(x, p[name + ".k"])
        x = ad.bias_add(x, p[name + ".b"])
        if self.cfg.batch_norm:
            if training:
                x, mu, var = ad.batch_norm(x, p[name + ".gamma"], p[name + ".beta"])
                st = self.bn_stats
                m = st.momentum
                st.mean[name] = (1 - m) * st.mean.get(name, np.zeros_like(mu)) + m * mu
                st.var[name] = (1 - m) * st.var.get(name, np.ones_like(var)) + m * var
            else:
                mu = self.bn_stats.mean.get(name, np.zeros(x.shape[1]))
                var = self.bn_stats.var.get(name, np.ones(x.shape[1]))
                inv = 1.0 / np.sqrt(var + 1e-5)
                g, b = p[name + ".gamma"].value, p[name + ".beta"].value
                x = ad.affine_channels(x, g * inv, b - g * inv * mu)
        return ad.relu(x)

    def _stage(self, x, p, prefix, training):
        cfg = self.cfg
        skips = []
        for lvl in range(cfg.levels):
            if lvl > 0:
                x = ad.maxpool2x2(x)
            for j in range(cfg.convs_per_level):
                x = self._conv_block(x, p, f"{prefix}.enc{lvl}.{j}", training)
            skips.append(x)
        for lvl in range(cfg.levels - 2, -1, -1):
            x = ad.conv_transpose2x2(x, p[f"{prefix}.up{lvl}.k"])
            x = ad.bias_add(x, p[f"{prefix}.up{lvl}.b"])
            x = ad.concat([x, skips[lvl]], axis=1)
            for j in range(cfg.convs_per_level):
                x = self._conv_block(x, p, f"{prefix}.dec{lvl}.{j}", training)
        x = ad.conv2d(x, p[f"{prefix}.head.k"])
        return ad.bias_add(x, p[f"{prefix}.head.b"])

    def check_input(self, x: np.ndarray) -> None:
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ValueError(f"expected (B,{self.cfg.in_channels},H,W) input, got {x.shape}")
        side = x.shape[2]
        if x.shape[3] != side:
            raise ValueError("input maps must be square")
        div = 2 ** (self.cfg.levels - 1)
        if side % div:
            raise ValueError(f"spatial size {side} not divisible by {div}")

    def forward(self, params: dict[str, np.ndarray], x: np.ndarray, training: bool = False,
                tape: ad.Tape | None = None):
        """Run the model; return (prediction node, tape, parameter leaf nodes).

        ``params`` may hold arrays or nodes already on ``tape``.
        """
        self.check_input(x)
        if tape is None:
            nodes = [v for v in params.values() if isinstance(v, ad.Node)]
            tape = nodes[0].tape if nodes else ad.Tape()
        leaves = {k: v if isinstance(v, ad.Node) else tape.leaf(v) for k, v in params.items()}
        inp = tape.constant(np.asarray(x, dtype=self.cfg.dtype))
        feat = self._stage(inp, leaves, "s1", training)
        feat = ad.diagonal_flip(feat, self.cfg.flip)
        out = self._stage(feat, leaves, "s2", training)
        if self.cfg.flip_back:
            out = ad.diagonal_flip(out, self.cfg.flip)
        return out, tape, leaves

    def predict(self, params, x: np.ndarray) -> np.ndarray:
        out, _, _ = self.forward(params, x, training=False)
        return out.value


def parameter_count(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))
