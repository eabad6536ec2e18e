"""Newton potentials, Coulomb energies and multipole kernels.

All potentials come from one discrete Poisson problem per angular momentum
``l``: the Galerkin form of ``-Laplace_l W = 4 pi sigma`` on the Dirichlet
space of the radial grid, plus the exterior multipole ``q_l r^l / R^(2l+1)``.
Because the same symmetric stiffness matrix defines both the potential and
the field energy, the discrete identities

    D[rho, rho'] = D[rho', rho],
    min_Phi ( -int rho Phi + (1/8 pi) int |grad Phi|^2 ) = -D[rho, rho]

hold to rounding error, which keeps the two-field energy bookkeeping exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .grid import RadialFunction, RadialGrid, TQuadrature

__all__ = [
    "RadialPotential",
    "newton_potential",
    "newton_values",
    "sector_potential",
    "field_energy",
    "coulomb_energy",
    "multipole_kernel",
    "pair_repulsion",
    "repulsion_field",
]

_FOUR_PI = 4.0 * np.pi


@dataclass(frozen=True, eq=False)
class RadialPotential:
    """Radial potential ``Phi`` at the grid nodes and the charge that generated it."""

    grid: RadialGrid
    values: np.ndarray
    charge: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} nodal values, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    def as_function(self) -> RadialFunction:
        return RadialFunction(self.grid, self.values, 0)


def _factor(grid: RadialGrid, l: int):
    cache = grid.__dict__.setdefault("_poisson", {})
    if l not in cache:
        cache[l] = cho_factor(grid.kinetic(l))
    return cache[l]


def sector_potential(grid: RadialGrid, source: np.ndarray, l: int = 0) -> np.ndarray:
    """Potential of the sector-``l`` source ``source(r) Y_lm``.

    Solves ``-(1/r^2)(r^2 W')' + l(l+1) W / r^2 = 4 pi source`` with the
    decaying exterior solution.  ``source`` has the node index first; extra
    axes are solved column by column.  Returns values at all ``n`` nodes.
    """
    source = np.asarray(source, dtype=float)
    r, w, big_r = grid.nodes, grid.weights, grid.r_max
    shape = (...,) + (None,) * (source.ndim - 1)
    rhs = _FOUR_PI * w[shape] * source
    q = _FOUR_PI / (2 * l + 1) * np.tensordot(w * r**l, source, axes=(0, 0))
    inner = cho_solve(_factor(grid, l), rhs[:-1])
    out = np.empty_like(source)
    out[:-1] = inner
    out[-1] = 0.0
    out += (r**l / big_r ** (2 * l + 1))[shape] * q
    return out


def newton_values(grid: RadialGrid, rho: np.ndarray) -> np.ndarray:
    """``rho * |x|^-1`` for a radial density given by nodal values."""
    return sector_potential(grid, rho, 0)


def newton_potential(rho: RadialFunction) -> RadialPotential:
    """Newton potential ``Phi(r) = 4 pi [ r^-1 int_0^r rho s^2 ds + int_r^oo rho s ds ]``.

    Raises
    ------
    ValueError
        If the density has entries below ``-1e-12``.
    """
    vals = np.asarray(rho.values, dtype=float)
    if np.any(vals < -1e-12):
        raise ValueError("density must be nonnegative")
    charge = _FOUR_PI * float(np.dot(rho.grid.weights, vals))
    return RadialPotential(rho.grid, newton_values(rho.grid, vals), charge)


def field_energy(phi: RadialPotential | np.ndarray, grid: RadialGrid | None = None) -> float:
    """``(1/8 pi) int |grad Phi|^2 dx`` for a radial ``Phi``.

    Beyond ``r_max`` the potential is continued harmonically as
    ``Phi(r_max) r_max / r``.
    """
    if isinstance(phi, RadialPotential):
        grid, vals = phi.grid, phi.values
    else:
        vals = np.asarray(phi, dtype=float)
    edge = vals[-1]
    psi = vals[:-1] - edge
    a = grid._kinetic_cache(0)
    return 0.5 * (float(psi @ a @ psi) + grid.r_max * edge**2)


def coulomb_energy(rho: RadialFunction, rho2: RadialFunction) -> float:
    """``D[rho, rho'] = (1/2) int Phi_rho' rho dx``."""
    if rho.grid is not rho2.grid:
        raise ValueError("densities live on different grids")
    grid = rho.grid
    phi = newton_values(grid, rho2.values)
    return 0.5 * _FOUR_PI * float(np.dot(grid.weights * rho.values, phi))


def multipole_kernel(k: int, r, rp):
    """``r_<^k / r_>^(k+1)``, the Legendre coefficients of ``1/|x - y|``."""
    r = np.asarray(r, dtype=float)
    rp = np.asarray(rp, dtype=float)
    lo = np.minimum(r, rp)
    hi = np.maximum(r, rp)
    return (lo / hi) ** k / hi


@lru_cache(maxsize=8)
def repulsion_field(grid: RadialGrid, tquad: TQuadrature) -> np.ndarray:
    """``F[i, j, a] = sum_{k <= 2m-2} K_k(r_i, s_j) P_k(tau_a)`` on the doubled t rule.

    For u of degree < m in t, ``u^2`` has degree <= 2m - 2, so this truncated
    series reproduces ``int u^2 / |x - y| dt`` exactly, the diagonal
    ``r = s`` included.
    """
    tau, _, _ = tquad.upsampled(2)
    r = grid.nodes
    ratio = np.minimum(r[:, None], r[None, :]) / np.maximum(r[:, None], r[None, :])
    inv_hi = 1.0 / np.maximum(r[:, None], r[None, :])
    kmax = 2 * tquad.m - 2
    field = np.zeros((grid.n, grid.n, tau.size))
    # Bonnet recursion for P_k(tau), powers of the ratio accumulated alongside
    p_prev, p_cur = np.ones_like(tau), tau.copy()
    power = np.ones_like(ratio)
    field += power[:, :, None] * p_prev
    for k in range(1, kmax + 1):
        power = power * ratio
        field += power[:, :, None] * p_cur
        p_prev, p_cur = p_cur, ((2 * k + 1) * tau * p_cur - k * p_prev) / (k + 1)
    field *= inv_hi[:, :, None]
    field.setflags(write=False)
    return field


def pair_repulsion(u, U: float) -> float:
    """``8 pi^2 U int int int |u|^2 / |x - y| r^2 s^2 dt ds dr``.

    ``u`` is an :class:`~pekarlab.bipolaron.RstFunction`.  The t integral is
    carried out exactly for the degree ``< m`` interpolant of ``u`` in ``t``.
    """
    if U < 0:
        raise ValueError("repulsion coupling U must be nonnegative")
    if U == 0:
        return 0.0
    grid, tquad = u.grid, u.tquad
    _, vup, pup = tquad.upsampled(2)
    coeff = u.values @ (tquad.orthonormal * tquad.weights[:, None])
    up = coeff @ pup.T
    field = repulsion_field(grid, tquad)
    w = grid.weights
    dens = np.einsum("ija,a->ij", field * up**2, vup)
    return 8.0 * np.pi**2 * U * float(w @ dens @ w)
