"""Physics-informed loss terms on (B, 1, H, W) prediction nodes.

All terms accept either an autodiff :class:`~thermoq.autodiff.Node` or a plain
array; arrays are evaluated on a throwaway tape and a float is returned.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad

TV_BETA = 2


@dataclass(frozen=True)
class LossWeights:
    tau: float = 1e5
    laplace: float = 1e2
    bc: float = 1e2
    tv: float = 1e4

    def __post_init__(self):
        vals = (self.tau, self.laplace, self.bc, self.tv)
        if min(vals) < 0:
            raise ValueError("loss weights must be nonnegative")
        if max(vals) == 0:
            raise ValueError("at least one loss weight must be positive")

    def to_dict(self):
        return asdict(self)


def _as_node(x):
    if isinstance(x, ad.Node):
        return x, False
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, None]
    elif arr.ndim == 3:
        arr = arr[:, None]
    return ad.Tape().constant(arr), True


def _result(node, plain):
    return float(node.value) if plain else node


def quantile_image(mp_mask: np.ndarray, tau: float) -> np.ndarray:
    """tau on monitor pixels, zero elsewhere."""
    if not 0.0 < tau < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {tau}")
    return np.where(mp_mask, tau, 0.0)


def pinball(residual: np.ndarray, tau) -> np.ndarray:
    """Elementwise pinball loss of residual = truth - prediction."""
    return np.where(residual >= 0, tau * residual, (tau - 1.0) * residual)


def loss_tau(pred, mp, mp_mask: np.ndarray, taus):
    """Quantile MP temperature error averaged over samples and monitor pixels."""
    pred, plain = _as_node(pred)
    mp = np.asarray(mp, dtype=pred.value.dtype).reshape(pred.shape)
    taus = np.asarray(taus, dtype=pred.value.dtype).reshape(-1, 1, 1, 1)
    if taus.shape[0] not in (1, pred.shape[0]):
        raise ValueError("need one quantile level per sample")
    if not np.any(mp_mask):
        raise ValueError("monitor-point mask is empty")
    r = pred.tape.constant(mp) - pred
    loss = ad.relu(r) * taus + ad.relu(-r) * (1.0 - taus)
    return _result(ad.masked_mean(loss, mp_mask), plain)


def _axis_weights(coords: np.ndarray):
    # second-difference weights from point coordinates (nonuniform-safe)
    d = np.diff(np.asarray(coords, dtype=np.float64))
    d_prev, d_next = d[:-1], d[1:]
    return d_prev, d_next


def laplace_residual(pred, x_coords: np.ndarray, y_coords: np.ndarray):
    """Discrete Laplacian on the interior (rows 1..H-2, cols 1..W-2).

    Uses (dT_{j+1} dx_j - dT_j dx_{j+1}) / (dx_{j+1} dx_j^2) along each axis,
    where dT_j = T_j - T_{j-1} and dx_j = x_j - x_{j-1}.
    """
    pred, plain = _as_node(pred)
    dt = pred.value.dtype
    dxp, dxn = _axis_weights(x_coords)
    dyp, dyn = _axis_weights(y_coords)
    c = pred[:, :, 1:-1, 1:-1]
    dT_next_x = pred[:, :, 1:-1, 2:] - c
    dT_prev_x = c - pred[:, :, 1:-1, :-2]
    dT_next_y = pred[:, :, 2:, 1:-1] - c
    dT_prev_y = c - pred[:, :, :-2, 1:-1]
    wx_next = (dxp / (dxn * dxp**2)).astype(dt).reshape(1, 1, 1, -1)
    wx_prev = (dxn / (dxn * dxp**2)).astype(dt).reshape(1, 1, 1, -1)
    wy_next = (dyp / (dyn * dyp**2)).astype(dt).reshape(1, 1, -1, 1)
    wy_prev = (dyn / (dyn * dyp**2)).astype(dt).reshape(1, 1, -1, 1)
    lap = dT_next_x * wx_next - dT_prev_x * wx_prev + dT_next_y * wy_next - dT_prev_y * wy_prev
    return lap.value if plain else lap


def interior_mask(mask: np.ndarray) -> np.ndarray:
    """Restrict ``mask`` to pixels whose four neighbours lie inside the grid."""
    inner = np.zeros_like(mask, dtype=bool)
    inner[1:-1, 1:-1] = mask[1:-1, 1:-1]
    return inner


LAPLACE_EDGES = ("interior", "mirror")


def _mirror_pad(pred):
    # one ghost cell per side equal to the edge value: zero normal flux
    rows = ad.concat([pred[:, :, :1, :], pred, pred[:, :, -1:, :]], axis=2)
    return ad.concat([rows[:, :, :, :1], rows, rows[:, :, :, -1:]], axis=3)


def _extend(coords):
    c = np.asarray(coords, dtype=np.float64)
    return np.concatenate([[2 * c[0] - c[1]], c, [2 * c[-1] - c[-2]]])


def loss_laplace(pred, nc_mask: np.ndarray, x_coords: np.ndarray, y_coords: np.ndarray,
                 edges: str = "interior", bc_mask: np.ndarray | None = None):
    """Mean squared discrete Laplacian over component-free pixels.

    ``edges="interior"`` keeps only pixels whose 5-point stencil lies inside
    the grid.  ``edges="mirror"`` also scores the outer ring using mirrored
    ghost cells (adiabatic walls); sink pixels in ``bc_mask`` are skipped.
    """
    pred, plain = _as_node(pred)
    if edges not in LAPLACE_EDGES:
        raise ValueError(f"edges must be one of {LAPLACE_EDGES}")
    if edges == "interior":
        mask = interior_mask(nc_mask)[1:-1, 1:-1]
        lap_in, xs, ys = pred, x_coords, y_coords
    else:
        mask = np.asarray(nc_mask, dtype=bool)
        if bc_mask is not None:
            mask = mask & ~np.asarray(bc_mask, dtype=bool)
        lap_in, xs, ys = _mirror_pad(pred), _extend(x_coords), _extend(y_coords)
    if not mask.any():
        raise ValueError("no component-free pixels to score")
    lap = laplace_residual(lap_in, xs, ys)
    return _result(ad.masked_mean(ad.square(lap), mask), plain)


def loss_bc(pred, bc_mask: np.ndarray, t0: float):
    """Mean squared deviation from the sink temperature on sink pixels."""
    pred, plain = _as_node(pred)
    if not np.any(bc_mask):
        raise ValueError("sink mask is empty")
    return _result(ad.masked_mean(ad.square(pred - t0), bc_mask), plain)


def loss_tv(pred):
    """beta = 2 total variation: normalized squared horizontal + vertical differences."""
    pred, plain = _as_node(pred)
    B, C, H, W = pred.shape
    if H < 2 or W < 2:
        raise ValueError("TV needs at least a 2x2 field")
    gx = pred[:, :, :, 1:] - pred[:, :, :, :-1]
    gy = pred[:, :, 1:, :] - pred[:, :, :-1, :]
    lx = ad.scale(ad.total(ad.square(gx)), 1.0 / (B * C * H * (W - 1)))
    ly = ad.scale(ad.total(ad.square(gy)), 1.0 / (B * C * (H - 1) * W))
    return _result(lx + ly, plain)


def total_loss(parts: dict, weights: LossWeights):
    """Weighted sum of the four terms; ``parts`` keys: tau, laplace, bc, tv."""
    return (parts["tau"] * weights.tau + parts["laplace"] * weights.laplace
            + parts["bc"] * weights.bc + parts["tv"] * weights.tv)


def cell_centres(n: int, spacing: float) -> np.ndarray:
    return (np.arange(n) + 0.5) * spacing
