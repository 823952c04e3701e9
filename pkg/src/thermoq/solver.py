"""Finite-difference steady-state conduction solver and MP image extraction.

Discretization on the cell-centred grid::

    (T_E + T_W - 2T)/dx^2 + (T_N + T_S - 2T)/dy^2 + phi/k = 0

Sink pixels (top row, sink span) are held at T0.  Every other boundary face
is adiabatic via ghost-cell mirroring, i.e. the missing neighbour equals the
centre value.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .grid import DomainSpec, LayoutSpec, RegionMasks

log = logging.getLogger(__name__)

CONDUCTIVITY = 1.0  # W/(m K)


class ConvergenceError(RuntimeError):
    def __init__(self, msg, residual, iterations):
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True)
class SolverConfig:
    method: str = "sor"
    omega: float = 1.9
    max_iter: int = 100_000
    tol: float = 1e-8

    def __post_init__(self):
        if self.method not in ("sor", "cr"):
            raise ValueError(f"unknown solver method {self.method!r}")
        if not 1.0 <= self.omega < 2.0:
            raise ValueError("omega must lie in [1, 2)")
        if self.tol <= 0:
            raise ValueError("tolerance must be positive")


def source_field(domain: DomainSpec, layout: LayoutSpec, powers) -> np.ndarray:
    """Heat source intensity (W/m^2): component power spread over its rectangle."""
    phi = np.zeros(domain.shape)
    cell = domain.dx * domain.dy
    for comp, p in zip(layout.components, powers):
        r0, c0, r1, c1 = comp.rect
        phi[r0:r1, c0:c1] = max(float(p), 0.0) / (comp.area_cells * cell)
    return phi


def _neighbour_sums(T: np.ndarray):
    # mirrored ghost cells: missing neighbour takes the centre value
    Tp = np.pad(T, 1, mode="edge")
    ew = Tp[1:-1, 2:] + Tp[1:-1, :-2]
    ns = Tp[2:, 1:-1] + Tp[:-2, 1:-1]
    return ew, ns


def laplacian(T: np.ndarray, dx: float, dy: float) -> np.ndarray:
    ew, ns = _neighbour_sums(T)
    return (ew - 2 * T) / dx**2 + (ns - 2 * T) / dy**2


def residual(T: np.ndarray, phi: np.ndarray, masks: RegionMasks, dx: float, dy: float,
             k: float = CONDUCTIVITY) -> float:
    """Normalized max-norm residual over free (non-sink) pixels.

    Scaled by ``dx*dy`` and divided by the largest scaled source term; with no
    source the scaled residual is reported unnormalized.
    """
    r = (laplacian(T, dx, dy) + phi / k) * dx * dy
    r[masks.bc] = 0.0
    ref = float(np.max(np.abs(phi))) * dx * dy / k
    return float(np.max(np.abs(r)) / (ref if ref > 0 else 1.0))


def _solve_sor(T, phi, masks, dx, dy, k, cfg):
    """Red-black SOR; the adiabatic edges drop the mirrored neighbour from both sides."""
    ax, ay = 1.0 / dx**2, 1.0 / dy**2
    H, W = T.shape
    n_ew = np.full((H, W), 2.0)
    n_ew[:, 0] -= 1
    n_ew[:, -1] -= 1
    n_ns = np.full((H, W), 2.0)
    n_ns[0, :] -= 1
    n_ns[-1, :] -= 1
    diag = ax * n_ew + ay * n_ns
    rows, cols = np.indices(T.shape)
    colours = [((rows + cols) % 2 == c) & ~masks.bc for c in (0, 1)]
    rhs = phi / k
    res = residual(T, phi, masks, dx, dy, k)
    it = 0
    while res >= cfg.tol and it < cfg.max_iter:
        for sel in colours:
            Tp = np.pad(T, 1)
            ew = Tp[1:-1, 2:] + Tp[1:-1, :-2]
            ns = Tp[2:, 1:-1] + Tp[:-2, 1:-1]
            gs = (ax * ew + ay * ns + rhs) / diag
            T[sel] += cfg.omega * (gs[sel] - T[sel])
        it += 1
        if it % 10 == 0 or it == cfg.max_iter:
            res = residual(T, phi, masks, dx, dy, k)
    return T, res, it


def solve_steady(domain: DomainSpec, masks: RegionMasks, phi: np.ndarray,
                 cfg: SolverConfig = SolverConfig(), k: float = CONDUCTIVITY,
                 initial: np.ndarray | None = None) -> np.ndarray:
    """Solve for the steady temperature field in Kelvin."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != domain.shape:
        raise ValueError(f"source shape {phi.shape} != domain {domain.shape}")
    if np.any(phi < 0):
        raise ValueError("source intensity must be nonnegative")
    T0 = domain.sink_temp
    T = np.full(domain.shape, T0) if initial is None else np.array(initial, dtype=np.float64)
    T[masks.bc] = T0
    if cfg.method == "sor":
        T, res, it = _solve_sor(T, phi, masks, domain.dx, domain.dy, k, cfg)
    else:
        T, res, it = _solve_cr(T, phi, masks, domain.dx, domain.dy, k, cfg)
    if res >= cfg.tol:
        raise ConvergenceError(
            f"{cfg.method} did not converge in {it} iterations (residual {res:.3e})", res, it
        )
    log.debug("%s converged in %d iterations, residual %.3e", cfg.method, it, res)
    return T


def _solve_cr(T, phi, masks, dx, dy, k, cfg):
    """Conjugate residual on the SPD system -A u = b over free pixels."""
    free = ~masks.bc

    def apply(u):
        full = np.where(free, u, 0.0)
        out = -laplacian(full, dx, dy) * dx * dy
        return np.where(free, out, 0.0)

    T0 = T[masks.bc][0]
    b = np.where(free, phi / k * dx * dy, 0.0)
    # shift so the sink value is zero; the operator then acts on deviations only
    u = np.where(free, T - T0, 0.0)
    r = b - apply(u)
    p = r.copy()
    Ar = apply(r)
    Ap = Ar.copy()
    rAr = np.vdot(r, Ar)
    ref = float(np.max(np.abs(b))) or 1.0
    it = 0
    res = float(np.max(np.abs(r))) / ref
    while res >= cfg.tol and it < cfg.max_iter:
        alpha = rAr / np.vdot(Ap, Ap)
        u += alpha * p
        r -= alpha * Ap
        Ar = apply(r)
        rAr_new = np.vdot(r, Ar)
        beta = rAr_new / rAr
        rAr = rAr_new
        p = r + beta * p
        Ap = Ar + beta * Ap
        it += 1
        res = float(np.max(np.abs(r))) / ref
    T = np.where(free, u + T0, T0)
    return T, residual(T, phi, masks, dx, dy, k), it


def extract_mp(field: np.ndarray, layout: LayoutSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Sparse MP image: sensor pixels carry the field value (plus noise), zero elsewhere."""
    field = np.asarray(field, dtype=np.float64)
    mp = np.zeros_like(field)
    for r, c in layout.sensors:
        mp[r, c] = field[r, c]
    sigma = layout.noise.sigma
    if sigma > 0 and layout.noise.sensors:
        if rng is None:
            raise ValueError("noise plan needs an rng")
        noise = rng.normal(0.0, sigma, size=len(layout.noise.sensors))
        for (r, c), e in zip(layout.noisy_sensors, noise):
            mp[r, c] += e
    return mp
