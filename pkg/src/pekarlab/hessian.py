"""Second-order analysis around a rotation-invariant bipolaron minimizer.

A perturbation ``j`` of total angular momentum ``L`` (projection ``M = 0``)
is expanded in the real coupled basis

    e_c(x^, y^) = i^p sum_m <a m b -m | L 0> Y_am(x^) Y_b,-m(y^),
    c = (a, b),  p = a + b - L,

as ``j = sum_c j_c(r, s) e_c``.  For ``L = 0`` the channels are ``(l, l)``
and ``e_ll = sqrt(2l+1)/(4 pi) P_l(x^.y^)``, so the channel arrays are the
Legendre coefficients of an RstFunction.  Exchange symmetry
``j(x, y) = j(y, x)`` reads ``j_ba(r, s) = (-1)^p j_ab(s, r)``.

Internally channel arrays are scaled to ``Y_c[i, j] = sqrt(w_i w_j) j_c(r_i, s_j)``
on interior nodes; then ``(j, j') = sum_c <Y_c, Y'_c>`` and every operator
is a symmetric matrix.  For ``L = 0`` this is exactly the ``y``
representation of :mod:`pekarlab.bipolaron`.

All quadratic forms are ``eps^2`` coefficients of the energy along the
normalized ray ``(phi + eps j)/||phi + eps j||``, i.e. half of the second
derivative, so that ``E[psi] = E[phi] + (j, L j) + O(||j||^3)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.optimize import minimize
from scipy.sparse.linalg import LinearOperator, lobpcg

from .angular import one_particle_element, scalar_product_element
from .bipolaron import (BipolaronSolution, RstFunction, _check_U, minimize_rst, rst_space)
from .coulomb import multipole_kernel, sector_potential
from .errors import ConvergenceError
from .grid import RadialGrid, TQuadrature

__all__ = [
    "ChannelFunction",
    "HessianReport",
    "ExpansionReport",
    "CCurveRow",
    "ShiftedState",
    "sector_channels",
    "hessian_context",
    "lift_rst",
    "project_rst",
    "product_perturbation",
    "translation_modes",
    "apply_L",
    "apply_H",
    "apply_X",
    "hessian_form",
    "form_parts",
    "ray_energy",
    "norm_estimate",
    "min_eig_deflated",
    "quadratic_expansion_check",
    "overlap",
    "align_overlap",
    "c_curve",
]

SUPPORTED_SECTORS = (0, 1, 2)
_FOUR_PI = 4.0 * math.pi
# eigenvalue assigned to exchange-antisymmetric directions in the eigensolver
_ANTISYMMETRIC_SHIFT = 100.0


def sector_channels(L: int, l_max: int) -> tuple:
    """Admissible channels ``(a, b)`` with ``a, b <= l_max`` and ``|a-b| <= L <= a+b``."""
    if L < 0 or l_max < 0:
        raise ValueError("L and l_max must be nonnegative")
    return tuple((a, b) for a in range(l_max + 1) for b in range(l_max + 1) if abs(a - b) <= L <= a + b)


def _parity(c, L) -> int:
    return c[0] + c[1] - L


def _phase(p: int, pp: int) -> float:
    """``i^(p - p')`` for the real basis; zero when the difference is odd."""
    d = p - pp
    if d % 2:
        return 0.0
    return -1.0 if (d // 2) % 2 else 1.0


# ---------------------------------------------------------------------------
# channel functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChannelFunction:
    """``j = sum_c j_c(r, s) e_c`` in sector ``L``.

    ``values[c, i, j] = j_c(r_i, s_j)`` on all nodes; entries on the
    Dirichlet boundary ``r_max`` are set to zero.  ``m`` labels the real
    component inside the ``L`` multiplet (``0`` is the ``z`` orientation);
    every form is independent of it and components with different ``m``
    are orthogonal.
    """

    grid: RadialGrid
    L: int
    channels: tuple
    values: np.ndarray
    m: int = 0

    def __post_init__(self):
        if self.L not in SUPPORTED_SECTORS:
            raise ValueError(f"sector L={self.L} is not supported (use {SUPPORTED_SECTORS})")
        chans = tuple((int(a), int(b)) for a, b in self.channels)
        if len(set(chans)) != len(chans):
            raise ValueError("duplicate channels")
        for a, b in chans:
            if not (a >= 0 and b >= 0 and abs(a - b) <= self.L <= a + b):
                raise ValueError(f"channel {(a, b)} is not admissible for L={self.L}")
        n = self.grid.n
        v = np.array(self.values, dtype=float)
        if v.shape != (len(chans), n, n):
            raise ValueError(f"expected values of shape {(len(chans), n, n)}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("ChannelFunction has non-finite values")
        v[:, -1, :] = 0.0
        v[:, :, -1] = 0.0
        object.__setattr__(self, "channels", chans)
        object.__setattr__(self, "values", v)
        err = self.exchange_defect()
        if err > 1e-12 * max(1.0, float(np.max(np.abs(v), initial=0.0))):
            raise ValueError(f"channel function is not exchange symmetric (defect {err:.2e})")

    def exchange_defect(self) -> float:
        """``max |j_ba(r, s) - (-1)^p j_ab(s, r)|`` over channels."""
        index = {c: k for k, c in enumerate(self.channels)}
        worst = 0.0
        for k, (a, b) in enumerate(self.channels):
            sign = -1.0 if _parity((a, b), self.L) % 2 else 1.0
            partner = index.get((b, a))
            other = self.values[partner].T if partner is not None else 0.0
            worst = max(worst, float(np.max(np.abs(self.values[k] - sign * other))))
        return worst

    @classmethod
    def from_scaled(cls, grid: RadialGrid, L: int, channels, y: np.ndarray, m: int = 0) -> "ChannelFunction":
        n = grid.n
        sw = np.sqrt(grid.weights[:-1])
        vals = np.zeros((len(channels), n, n))
        vals[:, :-1, :-1] = y / np.outer(sw, sw)
        return cls(grid, L, tuple(channels), vals, m)

    def scaled(self) -> np.ndarray:
        sw = np.sqrt(self.grid.weights[:-1])
        return self.values[:, :-1, :-1] * np.outer(sw, sw)

    def norm(self) -> float:
        return float(np.linalg.norm(self.scaled()))

    def inner(self, other: "ChannelFunction") -> float:
        if self.grid is not other.grid:
            raise ValueError("channel functions live on different grids")
        if self.L != other.L or self.m != other.m:
            return 0.0
        mine = dict(zip(self.channels, self.scaled()))
        total = 0.0
        for c, y in zip(other.channels, other.scaled()):
            if c in mine:
                total += float(np.vdot(mine[c], y))
        return total

    def channel(self, c) -> np.ndarray:
        """``j_c`` at the nodes (zeros for an absent admissible channel)."""
        c = tuple(c)
        if c in self.channels:
            return self.values[self.channels.index(c)]
        return np.zeros((self.grid.n, self.grid.n))

    def __mul__(self, a: float) -> "ChannelFunction":
        return ChannelFunction(self.grid, self.L, self.channels, a * self.values, self.m)

    __rmul__ = __mul__


def lift_rst(u: RstFunction, k_max: int | None = None) -> ChannelFunction:
    """Legendre coefficients of ``u`` in ``t`` as ``L = 0`` channels ``(k, k)``.

    ``j_kk = sqrt(8 pi^2) a_k`` with ``a_k`` the coefficients of ``u`` in
    orthonormal Legendre functions.

    Raises
    ------
    ValueError
        If ``k_max`` exceeds ``m - 1`` (the coefficients would alias).
    """
    m = u.tquad.m
    k_max = m - 1 if k_max is None else int(k_max)
    if k_max > m - 1 or k_max < 0:
        raise ValueError(f"k_max={k_max} aliases on a {m}-point t rule (need 0 <= k_max <= {m - 1})")
    analysis = u.tquad.orthonormal * u.tquad.weights[:, None]
    coeff = np.tensordot(u.values, analysis[:, : k_max + 1], axes=(2, 0))
    vals = math.sqrt(8.0) * math.pi * np.moveaxis(coeff, 2, 0)
    return ChannelFunction(u.grid, 0, tuple((k, k) for k in range(k_max + 1)), vals)


def project_rst(j: ChannelFunction, tquad: TQuadrature) -> RstFunction:
    """Inverse of :func:`lift_rst` for an ``L = 0`` channel function."""
    if j.L != 0:
        raise ValueError("only L = 0 channel functions are rotation invariant")
    if max(a for a, _ in j.channels) > tquad.m - 1:
        raise ValueError("channel degree exceeds the t rule")
    vals = np.zeros((j.grid.n, j.grid.n, tquad.m))
    for (k, _), arr in zip(j.channels, j.values):
        vals += arr[:, :, None] * tquad.orthonormal[None, None, :, k]
    return RstFunction(j.grid, tquad, vals / (math.sqrt(8.0) * math.pi))


def product_perturbation(f: np.ndarray, g: np.ndarray, grid: RadialGrid, l: int) -> ChannelFunction:
    """``f (x) g Y_l0 + g Y_l0 (x) f`` for a radial ``f`` and a sector-``l`` profile ``g``.

    Profiles follow the one-particle convention (``g`` stands for
    ``g(r) sqrt(4 pi) Y_l0``).  The result lives in sector ``L = l``,
    channels ``(0, l)`` and ``(l, 0)``.
    """
    block = _FOUR_PI * np.outer(f, g)
    if l == 0:
        return ChannelFunction(grid, 0, ((0, 0),), (block + block.T)[None])
    return ChannelFunction(grid, l, ((0, l), (l, 0)), np.stack([block, block.T]))


# ---------------------------------------------------------------------------
# coupling tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Couplings:
    """Angular coefficients of one sector in the real coupled basis."""

    L: int
    channels: tuple
    parity: np.ndarray
    swap: np.ndarray
    swap_sign: np.ndarray
    rep_k: tuple
    rep_s: tuple
    kappa1: np.ndarray
    kappa2: np.ndarray
    dens_k: tuple
    dens1: tuple
    dens2: tuple


@lru_cache(maxsize=16)
def _couplings(L: int, channels: tuple) -> _Couplings:
    nc = len(channels)
    par = np.array([_parity(c, L) for c in channels])
    index = {c: k for k, c in enumerate(channels)}
    swap = np.array([index[(b, a)] for a, b in channels])
    swap_sign = np.where(par % 2, -1.0, 1.0)
    l_top = max(max(c) for c in channels)

    rep_k, rep_s = [], []
    for k in range(2 * l_top + 1):
        s = np.zeros((nc, nc))
        for i, (ap, bp) in enumerate(channels):
            for j, (a, b) in enumerate(channels):
                ph = _phase(par[j], par[i])
                if ph:
                    s[i, j] = ph * scalar_product_element(ap, bp, a, b, L, k)
        if np.any(s):
            rep_k.append(k)
            rep_s.append(s)

    yl = math.sqrt((2 * L + 1) / _FOUR_PI)
    kap1 = np.zeros(nc)
    kap2 = np.zeros(nc)
    for j, (a, b) in enumerate(channels):
        kap1[j] = yl * _phase(2 * b, par[j]) * one_particle_element(a, b, L, 0, b, b, 0, 0, L, 0, 1)
        kap2[j] = yl * _phase(2 * a, par[j]) * one_particle_element(a, b, L, 0, a, a, 0, 0, L, 0, 2)

    dens_k, dens1, dens2 = [], [], []
    for k in range(0, 2 * L + 1):
        yk = math.sqrt((2 * k + 1) / _FOUR_PI)
        g1 = np.zeros((nc, nc))
        g2 = np.zeros((nc, nc))
        for i, (ap, bp) in enumerate(channels):
            for j, (a, b) in enumerate(channels):
                ph = _phase(par[j], par[i])
                if not ph:
                    continue
                if bp == b:
                    g1[i, j] = yk * ph * one_particle_element(ap, bp, L, 0, a, b, L, 0, k, 0, 1)
                if ap == a:
                    g2[i, j] = yk * ph * one_particle_element(ap, bp, L, 0, a, b, L, 0, k, 0, 2)
        if np.any(g1) or np.any(g2):
            dens_k.append(k)
            dens1.append(g1)
            dens2.append(g2)
    return _Couplings(L, channels, par, swap, swap_sign, tuple(rep_k), tuple(rep_s), kap1, kap2,
                      tuple(dens_k), tuple(dens1), tuple(dens2))


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------


class _Sector:
    """``L_n`` and ``H_n`` of one sector in the scaled channel representation."""

    def __init__(self, ctx: "HessianContext", L: int, channels: tuple):
        self.ctx, self.L, self.channels = ctx, L, channels
        self.coup = _couplings(L, channels)
        grid = ctx.grid
        self.N = grid.n - 1
        self.shape = (len(channels), self.N, self.N)
        self.dim = int(np.prod(self.shape))
        a_idx = [a for a, _ in channels]
        b_idx = [b for _, b in channels]
        self.bl_a = np.stack([ctx.bmat(a) for a in a_idx])
        self.bl_b = np.stack([ctx.bmat(b) for b in b_idx])
        self.p_a = np.stack([ctx.phi_channel(a) for a in a_idx])
        self.p_b = np.stack([ctx.phi_channel(b) for b in b_idx])
        self.index = {c: k for k, c in enumerate(channels)}
        if L != 0 and ctx.U:
            ri = grid.nodes[:-1]
            self.kernels = [multipole_kernel(k, ri[:, None], ri[None, :]) for k in self.coup.rep_k]

    # pieces --------------------------------------------------------------
    def kinetic(self, y):
        return np.matmul(self.bl_a, y) + np.matmul(y, self.bl_b)

    def potential(self, y):
        p = self.ctx.phi_pot[:-1]
        return (p[:, None] + p[None, :]) * y

    def repulsion(self, y):
        if self.L == 0:
            return self.ctx.space.repulsion(y)
        out = np.zeros_like(y)
        flat = y.reshape(len(self.channels), -1)
        for s, kern in zip(self.coup.rep_s, self.kernels):
            out += kern * (s @ flat).reshape(y.shape)
        return out

    def cross_marginals(self, y):
        """Profiles of ``int phi j dy`` and ``int phi j dx`` along ``Y_L0``, all nodes."""
        wi = self.ctx.grid.weights[:-1]
        t = np.zeros(self.N + 1)
        s = np.zeros(self.N + 1)
        t[:-1] = np.einsum("c,cij->i", self.coup.kappa1, self.p_b * y) / wi
        s[:-1] = np.einsum("c,cij->j", self.coup.kappa2, self.p_a * y) / wi
        return t, s

    def exchange(self, y):
        """``X_phi j``."""
        t, s = self.cross_marginals(y)
        grid = self.ctx.grid
        w1 = sector_potential(grid, t, self.L)[:-1]
        w2 = sector_potential(grid, s, self.L)[:-1]
        k1 = self.coup.kappa1[:, None, None]
        k2 = self.coup.kappa2[:, None, None]
        return k1 * self.p_b * w1[None, :, None] + k2 * self.p_a * w2[None, None, :]

    def apply_L(self, y):
        ctx = self.ctx
        out = self.kinetic(y) - self.potential(y) - ctx.mu * y - 4.0 * self.exchange(y)
        if ctx.U:
            out += ctx.U * self.repulsion(y)
        return out

    def apply_H(self, y):
        out = self.apply_L(y)
        if self.L == 0:
            ctx = self.ctx
            yphi, kvec = ctx.y_phi_sector, ctx.k_sector
            a = float(np.vdot(yphi, y))
            b = float(np.vdot(kvec, y))
            out += kvec * a + yphi * (b + ctx.beta * a)
        return out

    def symmetrize(self, y):
        c = self.coup
        partner = y[c.swap].transpose(0, 2, 1) * c.swap_sign[:, None, None]
        return 0.5 * (y + partner)

    # conversions ---------------------------------------------------------
    def embed(self, j: ChannelFunction) -> np.ndarray:
        if j.grid is not self.ctx.grid:
            raise ValueError("channel function lives on a different grid than the minimizer")
        if j.L != self.L:
            raise ValueError(f"channel function has L={j.L}, sector is L={self.L}")
        y = np.zeros(self.shape)
        for c, arr in zip(j.channels, j.scaled()):
            if c not in self.index:
                raise ValueError(f"channel {c} lies outside the truncated sector (raise l_max)")
            y[self.index[c]] = arr
        return y

    def wrap(self, y: np.ndarray, m: int = 0) -> ChannelFunction:
        y = self.symmetrize(y)
        return ChannelFunction.from_scaled(self.ctx.grid, self.L, self.channels, y, m)


class HessianContext:
    """Potentials, multipliers and cached sector operators at a minimizer."""

    def __init__(self, sol: BipolaronSolution):
        self.solution = sol
        self.grid, self.tquad = sol.grid, sol.tquad
        self.U = float(sol.U)
        self.space = rst_space(self.grid, self.tquad)
        y = self.space.to_y(sol.u.values)
        y /= np.linalg.norm(y)
        parts, energy, mu, res, phi = self.space.evaluate(y, self.U)
        self.y_phi = y
        self.phi_pot = phi
        self.energy, self.mu, self.parts, self.residual = energy, mu, parts, res
        self.beta = 4.0 * (parts.T + parts.repel - 3.0 * parts.attract)
        ky = self.space.kinetic(y) - 2.0 * self.space.potential(y, phi)
        if self.U:
            ky += self.U * self.space.repulsion(y)
        self.k_vec = -2.0 * ky
        self._bmats: dict[int, np.ndarray] = {}
        self._sectors: dict[tuple, _Sector] = {}

    @property
    def y_phi_sector(self) -> np.ndarray:
        return self.y_phi

    @property
    def k_sector(self) -> np.ndarray:
        return self.k_vec

    def bmat(self, l: int) -> np.ndarray:
        if l not in self._bmats:
            sw = np.sqrt(self.grid.weights[:-1])
            self._bmats[l] = self.grid._kinetic_cache(l) / np.outer(sw, sw)
        return self._bmats[l]

    def phi_channel(self, l: int) -> np.ndarray:
        """Scaled ``L = 0`` channel ``(l, l)`` of the minimizer (zero beyond the t rule)."""
        if l < self.tquad.m:
            return self.y_phi[l]
        return np.zeros((self.grid.n - 1, self.grid.n - 1))

    def sector(self, L: int, l_max: int = 8) -> _Sector:
        if L not in SUPPORTED_SECTORS:
            raise ValueError(f"sector L={L} is not supported (use {SUPPORTED_SECTORS})")
        if L == 0:
            chans = tuple((l, l) for l in range(self.tquad.m))
        else:
            chans = sector_channels(L, int(l_max))
        key = (L, chans)
        if key not in self._sectors:
            self._sectors[key] = _Sector(self, L, chans)
        return self._sectors[key]


@lru_cache(maxsize=8)
def hessian_context(sol: BipolaronSolution) -> HessianContext:
    return HessianContext(sol)


def _context(phi: BipolaronSolution, U: float | None) -> HessianContext:
    if U is not None:
        U = _check_U(U)
        if abs(U - phi.U) > 1e-14 * max(1.0, U):
            raise ValueError(f"coupling U={U} does not match the minimizer's U={phi.U}")
    return hessian_context(phi)


def _l_max_for(j: ChannelFunction, l_max: int | None) -> int:
    top = max(max(c) for c in j.channels)
    return max(8 if l_max is None else int(l_max), top)


def apply_L(phi: BipolaronSolution, j: ChannelFunction, U: float | None = None,
            l_max: int | None = None) -> ChannelFunction:
    """``L_n j`` in the sector of ``j`` truncated at ``l_max`` (default 8).

    Raises
    ------
    ValueError
        Unsupported sector, channel outside the truncation, or ``U`` not
        matching the minimizer.
    """
    op = _context(phi, U).sector(j.L, _l_max_for(j, l_max))
    return op.wrap(op.apply_L(op.embed(j)), j.m)


def apply_H(phi: BipolaronSolution, j: ChannelFunction, U: float | None = None,
            l_max: int | None = None) -> ChannelFunction:
    """``H_n j = L_n j + k (phi, j) + phi (k, j) + beta phi (phi, j)``."""
    op = _context(phi, U).sector(j.L, _l_max_for(j, l_max))
    return op.wrap(op.apply_H(op.embed(j)), j.m)


def apply_X(phi: BipolaronSolution, j: ChannelFunction, l_max: int | None = None) -> ChannelFunction:
    """``X_phi j = phi(x, y) [W_tau(x) + W_sigma(y)]`` with the cross marginals of ``phi j``."""
    op = _context(phi, None).sector(j.L, _l_max_for(j, l_max))
    return op.wrap(op.exchange(op.embed(j)), j.m)


def hessian_form(phi: BipolaronSolution, j: ChannelFunction, U: float | None = None,
                 l_max: int | None = None) -> float:
    """``(j, H_n j)``, the ``eps^2`` coefficient of ``E_U`` along the normalized ray."""
    op = _context(phi, U).sector(j.L, _l_max_for(j, l_max))
    y = op.embed(j)
    return float(np.vdot(y, op.apply_H(y)))


def form_parts(phi: BipolaronSolution, j: ChannelFunction, U: float | None = None,
               l_max: int | None = None) -> dict:
    """Separate pieces of ``(j, L_n j)``: kinetic, repulsion, potential, ``mu_n`` and ``X``."""
    ctx = _context(phi, U)
    op = ctx.sector(j.L, _l_max_for(j, l_max))
    y = op.embed(j)
    out = {
        "kinetic": float(np.vdot(y, op.kinetic(y))),
        "repulsion": ctx.U * float(np.vdot(y, op.repulsion(y))) if ctx.U else 0.0,
        "potential": float(np.vdot(y, op.potential(y))),
        "mu": ctx.mu * float(np.vdot(y, y)),
        "X": float(np.vdot(y, op.exchange(y))),
    }
    out["L"] = out["kinetic"] + out["repulsion"] - out["potential"] - out["mu"] - 4.0 * out["X"]
    return out


# ---------------------------------------------------------------------------
# translation modes
# ---------------------------------------------------------------------------


def translation_modes(phi: BipolaronSolution, l_max: int = 8) -> tuple:
    """``(d/dx_e)(phi(x + a, y + a))`` at ``a = 0`` for ``e = x, y, z`` as ``L = 1`` functions.

    Obtained from the gradient formula

        grad_0 [g(r) Y_lm] = sum_{a = l +- 1} (g' + kappa_a g / r) <a m| C^1_0 |l m> Y_am,

    ``kappa_{l+1} = -l``, ``kappa_{l-1} = l + 1``, applied to each particle.
    The ``x`` and ``y`` modes are rotations of the ``z`` mode; in the real
    basis they carry identical channel arrays with ``m = 1`` and ``m = -1``.
    Channels beyond ``l_max`` are dropped.
    """
    ctx = hessian_context(phi)
    grid = ctx.grid
    sw = np.sqrt(grid.weights[:-1])
    chans = sector_channels(1, l_max)
    index = {c: k for k, c in enumerate(chans)}
    vals = np.zeros((len(chans), grid.n, grid.n))
    r = grid.nodes
    for l in range(min(ctx.tquad.m, l_max + 1)):
        g = np.zeros((grid.n, grid.n))
        g[:-1, :-1] = ctx.y_phi[l] / np.outer(sw, sw)
        dr = grid.derivative(g)
        ds = grid.derivative(g.T).T
        sign_l = -1.0 if l % 2 else 1.0
        for a, kap in ((l + 1, -l), (l - 1, l + 1)):
            if a < 0 or a > l_max:
                continue
            # particle 1: channel (a, l)
            c = (a, l)
            coef = sign_l * _phase(0, _parity(c, 1)) * one_particle_element(a, l, 1, 0, l, l, 0, 0, 1, 0, 1)
            vals[index[c]] += coef * (dr + kap * g / r[:, None])
            # particle 2: channel (l, a)
            c = (l, a)
            coef = sign_l * _phase(0, _parity(c, 1)) * one_particle_element(l, a, 1, 0, l, l, 0, 0, 1, 0, 2)
            vals[index[c]] += coef * (ds + kap * g / r[None, :])
    return tuple(ChannelFunction(grid, 1, chans, vals, m) for m in (1, -1, 0))


# ---------------------------------------------------------------------------
# energy along a ray
# ---------------------------------------------------------------------------


def _sector_D(grid: RadialGrid, profiles: dict) -> float:
    """``D[rho, rho]`` for ``rho = sum_k rho_k(r) Y_k0``."""
    w = grid.weights
    total = 0.0
    for k, rho in profiles.items():
        total += float(np.dot(w * rho, sector_potential(grid, rho, k)))
    return 0.5 * total


def _energy_with(ctx: HessianContext, op: _Sector, eps: float, y: np.ndarray) -> float:
    """``E_U[(phi + eps j)/||phi + eps j||]`` for ``j`` in sector ``L >= 1``."""
    space, U = ctx.space, ctx.U
    grid = ctx.grid
    yphi = ctx.y_phi
    kin = ctx.parts.T + eps**2 * float(np.vdot(y, op.kinetic(y)))
    rep = 0.0
    if U:
        rep = ctx.parts.repel + eps**2 * U * float(np.vdot(y, op.repulsion(y)))
    nrm2 = float(np.vdot(yphi, yphi)) + eps**2 * float(np.vdot(y, y))
    wi = grid.weights[:-1]
    profiles: dict[int, np.ndarray] = {}
    rho0 = math.sqrt(_FOUR_PI) * space.density(yphi)
    profiles[0] = rho0
    t, s = op.cross_marginals(y)
    profiles[op.L] = profiles.get(op.L, 0.0) + 2.0 * eps * (t + s)
    flat = y.reshape(len(op.channels), -1)
    for k, g1, g2 in zip(op.coup.dens_k, op.coup.dens1, op.coup.dens2):
        z1 = (g1 @ flat).reshape(y.shape)
        z2 = (g2 @ flat).reshape(y.shape)
        prof = np.zeros(grid.n)
        prof[:-1] = (np.einsum("cij,cij->i", y, z1) + np.einsum("cij,cij->j", y, z2)) / wi
        profiles[k] = profiles.get(k, 0.0) + eps**2 * prof
    dval = _sector_D(grid, profiles)
    return (kin + rep) / nrm2 - dval / nrm2**2


def ray_energy(phi: BipolaronSolution, j: ChannelFunction, eps, U: float | None = None,
               l_max: int | None = None) -> np.ndarray:
    """``E_U[(phi + eps j)/||phi + eps j||]`` for each ``eps``.

    Evaluated from the density multipoles of the full (not rotation
    invariant) state, with no reference to the second-order operators.
    """
    ctx = _context(phi, U)
    op = ctx.sector(j.L, _l_max_for(j, l_max))
    y = op.embed(j)
    eps = np.atleast_1d(np.asarray(eps, dtype=float))
    out = np.empty(eps.shape)
    for i, e in enumerate(eps):
        out[i] = _ray(ctx, op, float(e), y)
    return out


def _ray(ctx: HessianContext, op: _Sector, eps: float, y: np.ndarray) -> float:
    if op.L == 0:
        z = ctx.y_phi + eps * y
        return ctx.space.evaluate(z / np.linalg.norm(z), ctx.U)[1]
    return _energy_with(ctx, op, eps, y)


# ---------------------------------------------------------------------------
# eigenvalues with deflation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HessianReport:
    """Lowest deflated eigenvalues of ``H_n`` in one sector.

    ``zero_mode_residuals`` holds ``||H v||`` for the normalized zero modes
    ``phi`` and the three translation generators; ``zero_mode_forms`` the
    corresponding ``(v, H v)``; ``norm_estimate`` a power-iteration
    estimate of ``||H||`` in the sector.
    """

    U: float
    sector: int
    eigenvalues: tuple
    zero_mode_residuals: dict
    c_estimate: float
    deflation_overlaps: tuple
    iterations: int
    zero_mode_forms: dict = field(default_factory=dict, compare=False)
    norm_estimate: float = float("nan")
    residual_norms: tuple = ()

    def to_json_dict(self) -> dict:
        return {
            "U": self.U,
            "sector": self.sector,
            "eigenvalues": list(self.eigenvalues),
            "zero_mode_residuals": dict(self.zero_mode_residuals),
            "c_estimate": self.c_estimate,
            "deflation_overlaps": list(self.deflation_overlaps),
            "iterations": self.iterations,
        }

    def zero_modes_pass(self, threshold: float = 1e-5) -> bool:
        """Whether every zero-mode form is at most ``threshold * norm_estimate``."""
        bound = threshold * self.norm_estimate
        return all(abs(v) <= bound for v in self.zero_mode_forms.values())


def _zero_modes(ctx: HessianContext, op: _Sector, l_max: int) -> list:
    if op.L == 0:
        return [ctx.y_phi / np.linalg.norm(ctx.y_phi)]
    if op.L == 1:
        tz = translation_modes(ctx.solution, l_max)[2]
        y = op.embed(tz)
        return [y / np.linalg.norm(y)]
    return []


class _SectorPreconditioner:
    """Inverse of ``h_a (x) 1 + 1 (x) h_b - mu`` per channel, shifted to stay positive."""

    def __init__(self, op: _Sector, shift: float = 0.1):
        ctx = op.ctx
        p = ctx.phi_pot[:-1]
        tops = sorted({l for c in op.channels for l in c})
        eig = {}
        for l in tops:
            eig[l] = np.linalg.eigh(ctx.bmat(l) - np.diag(p))
        self.va = np.stack([eig[a][1] for a, _ in op.channels])
        self.vb = np.stack([eig[b][1] for _, b in op.channels])
        ea = np.stack([eig[a][0] for a, _ in op.channels])
        eb = np.stack([eig[b][0] for _, b in op.channels])
        denom = ea[:, :, None] + eb[:, None, :] - ctx.mu
        self.inv = 1.0 / (np.abs(denom) + shift)

    def __call__(self, y):
        z = np.matmul(np.matmul(self.va.transpose(0, 2, 1), y), self.vb)
        z *= self.inv
        return np.matmul(np.matmul(self.va, z), self.vb.transpose(0, 2, 1))


def _project(y, modes):
    for z in modes:
        y = y - z * float(np.vdot(z, y))
    return y


def norm_estimate(phi: BipolaronSolution, L: int, l_max: int = 8, iterations: int = 20,
                  seed: int = 0) -> float:
    """Power-iteration estimate of ``||H_n||`` on the symmetric part of sector ``L``."""
    op = hessian_context(phi).sector(L, l_max)
    rng = np.random.default_rng(seed)
    y = op.symmetrize(rng.standard_normal(op.shape))
    y /= np.linalg.norm(y)
    lam = 0.0
    for _ in range(iterations):
        z = op.symmetrize(op.apply_H(y))
        lam = float(np.linalg.norm(z))
        y = z / lam
    return lam


def min_eig_deflated(phi: BipolaronSolution, U: float, L_sector: int, n_eigs: int = 2, l_max: int = 8,
                     tol: float = 1e-6, maxiter: int = 400, seed: int = 0) -> HessianReport:
    """Smallest eigenvalues of ``H_n`` on exchange-symmetric functions of sector ``L``
    orthogonal to ``phi`` and the translation generators.

    The search space is projected onto the orthogonal complement of the
    zero modes at every application, and LOBPCG is additionally constrained
    to it.  Exchange-antisymmetric directions are lifted out of the way by
    a constant shift.  The preconditioner is the shifted absolute inverse
    of the separable part ``h_a + h_b - mu`` per channel.

    Raises
    ------
    ConvergenceError
        If the eigensolver residuals stay above ``10 tol``.
    """
    if n_eigs < 1:
        raise ValueError("n_eigs must be at least 1")
    ctx = _context(phi, U)
    op = ctx.sector(L_sector, l_max)
    modes = _zero_modes(ctx, op, l_max)
    dim, shape = op.dim, op.shape

    def matvec(v):
        y = _project(v.reshape(shape), modes)
        ys = op.symmetrize(y)
        out = op.symmetrize(op.apply_H(ys)) + _ANTISYMMETRIC_SHIFT * (y - ys)
        return _project(out, modes).ravel()

    pre = _SectorPreconditioner(op)

    def precond(v):
        y = _project(op.symmetrize(v.reshape(shape)), modes)
        return _project(op.symmetrize(pre(y)), modes).ravel()

    def block(fn):
        return lambda v: np.stack([fn(c) for c in v.T], axis=1) if v.ndim == 2 else fn(v)

    A = LinearOperator((dim, dim), matvec=matvec, matmat=block(matvec), dtype=float)
    M = LinearOperator((dim, dim), matvec=precond, matmat=block(precond), dtype=float)
    rng = np.random.default_rng(seed)
    k = min(n_eigs + 2, dim)
    x0 = np.stack([precond(op.symmetrize(rng.standard_normal(shape)).ravel()) for _ in range(k)], axis=1)
    cons = np.stack([z.ravel() for z in modes], axis=1) if modes else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        vals, vecs, hist = lobpcg(A, x0, M=M, Y=cons, tol=tol, maxiter=maxiter, largest=False,
                                  retResidualNormsHistory=True)
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    res = np.array([np.linalg.norm(A.matvec(vecs[:, i]) - vals[i] * vecs[:, i]) for i in range(k)])
    if np.any(res[:n_eigs] > 10 * tol):
        flat = [float(np.max(h)) for h in hist]
        raise ConvergenceError(f"sector L={L_sector} eigensolver stalled at residual {res[:n_eigs].max():.2e}",
                               float(res[:n_eigs].max()), flat)
    overlaps = tuple(float(max((abs(np.vdot(z.ravel(), vecs[:, i])) for z in modes), default=0.0))
                     for i in range(n_eigs))
    resid, forms = _zero_mode_suite(ctx, l_max)
    return HessianReport(
        U=float(ctx.U), sector=int(L_sector), eigenvalues=tuple(float(v) for v in vals[:n_eigs]),
        zero_mode_residuals=resid, c_estimate=float(vals[0]), deflation_overlaps=overlaps,
        iterations=len(hist), zero_mode_forms=forms,
        norm_estimate=norm_estimate(phi, L_sector, l_max, seed=seed),
        residual_norms=tuple(float(r) for r in res[:n_eigs]))


def _zero_mode_suite(ctx: HessianContext, l_max: int) -> tuple[dict, dict]:
    op0 = ctx.sector(0)
    yphi = ctx.y_phi / np.linalg.norm(ctx.y_phi)
    hphi = op0.apply_H(yphi)
    resid = {"phi": float(np.linalg.norm(hphi))}
    forms = {"phi": float(np.vdot(yphi, hphi))}
    op1 = ctx.sector(1, l_max)
    for name, mode in zip(("tx", "ty", "tz"), translation_modes(ctx.solution, l_max)):
        y = op1.embed(mode)
        y /= np.linalg.norm(y)
        hy = op1.apply_H(y)
        resid[name] = float(np.linalg.norm(hy))
        forms[name] = float(np.vdot(y, hy))
    return resid, forms


# ---------------------------------------------------------------------------
# second-order expansion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpansionReport:
    """``Delta E - (j_eps, L j_eps)`` along ``psi_eps = (phi + eps j)/||.||``.

    ``j_eps = psi_eps - alpha phi`` with ``alpha = (phi, psi_eps)``;
    ``h1_norm`` is ``(||j_eps||^2 + T(j_eps))^(1/2)`` and ``slope`` the
    least-squares log-log slope of ``|remainder|`` against ``h1_norm``.
    """

    eps: tuple
    delta_E: tuple
    quadratic: tuple
    remainder: tuple
    h1_norm: tuple
    slope: float


def quadratic_expansion_check(phi: BipolaronSolution, direction: ChannelFunction, U: float | None = None,
                              eps=None, l_max: int | None = None) -> ExpansionReport:
    """Second-order expansion of the energy around ``phi`` along a ray.

    The component of ``direction`` along ``phi`` is dropped (it only
    reparametrizes the ray) and the rest is rescaled to unit ``H^1`` norm.
    The trial states are ``psi_eps = (phi + eps j)/||.||`` for each ``eps``
    (default 7 points log-spaced in ``[1e-3, 1e-1]``).

    Raises
    ------
    ValueError
        If some trial state is farther than ``0.1`` from ``alpha phi`` in ``H^1``.
    """
    ctx = _context(phi, U)
    op = ctx.sector(direction.L, _l_max_for(direction, l_max))
    eps = np.logspace(-3, -1, 7) if eps is None else np.atleast_1d(np.asarray(eps, dtype=float))
    y = op.embed(direction)
    if op.L == 0:
        # phi + eps j and phi + eps' j_perp span the same ray
        y = y - float(np.vdot(ctx.y_phi, y)) * ctx.y_phi
    h1 = math.sqrt(float(np.vdot(y, y)) + float(np.vdot(y, op.kinetic(y))))
    e0 = _ray(ctx, op, 0.0, y)
    form = 0.0
    if h1 > 0.0:
        y = y / h1
        form = float(np.vdot(y, op.apply_L(y)))
    nn = float(np.vdot(y, y))
    dE, quad, rem, norms = [], [], [], []
    for e in eps:
        # j_eps = (e / nrm) y has H^1 norm e / nrm <= e
        hn = e / math.sqrt(1.0 + e**2 * nn) if h1 > 0.0 else 0.0
        if hn > 0.1 * (1.0 + 1e-12):
            raise ValueError(f"trial state at eps={e} is {hn:.3f} > 0.1 from alpha phi in H^1")
        delta = _ray(ctx, op, float(e), y) - e0
        q = hn**2 * form
        dE.append(delta)
        quad.append(q)
        rem.append(delta - q)
        norms.append(hn)
    rem_arr = np.abs(np.array(rem))
    mask = rem_arr > 0
    slope = float("nan")
    if mask.sum() >= 2:
        slope = float(np.polyfit(np.log(np.array(norms)[mask]), np.log(rem_arr[mask]), 1)[0])
    return ExpansionReport(tuple(map(float, eps)), tuple(dE), tuple(quad), tuple(rem), tuple(norms), slope)


# ---------------------------------------------------------------------------
# translation alignment
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ShiftedState:
    """The state ``psi(x, y) = u(x + a, y + a)`` for a rotation-invariant ``u``.

    With this convention ``psi(x - a, y - a) = u(x, y)``, so the overlap
    ``int int psi(x - b, y - b) phi`` of :func:`align_overlap` peaks at ``b = a``
    when ``u = phi``.
    """

    u: RstFunction
    a: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float).reshape(3)
        object.__setattr__(self, "a", a)


class _OverlapQuadrature:
    """Product rule in (r, cos theta_1) x (s, cos theta_2) x azimuth for shifts along z."""

    def __init__(self, grid: RadialGrid, r_cut: float, n_r: int = 40, n_theta: int = 16, n_phi: int = 16):
        xr, wr = np.polynomial.legendre.leggauss(n_r)
        r = 0.5 * r_cut * (xr + 1.0)
        wr = 0.5 * r_cut * wr * r**2
        c, wc = np.polynomial.legendre.leggauss(n_theta)
        self.r = np.repeat(r, n_theta)
        self.c = np.tile(c, n_r)
        self.w = np.repeat(wr, n_theta) * np.tile(wc, n_r)
        ang = 2.0 * np.pi * np.arange(n_phi) / n_phi
        self.cphi = np.cos(ang)
        self.wphi = np.full(n_phi, 2.0 * np.pi / n_phi)
        self.grid = grid

    def values(self, coeff: np.ndarray, d: float) -> np.ndarray:
        """``u(x + d z^, y + d z^)`` at the product points, shape ``(P, P, n_phi)``."""
        rz = self.r * self.c + d
        rp = self.r * np.sqrt(np.maximum(1.0 - self.c**2, 0.0))
        rad = np.hypot(rz, rp)
        safe = np.where(rad > 0, rad, 1.0)
        cos1 = np.where(rad > 0, rz / safe, 1.0)
        sin1 = np.where(rad > 0, rp / safe, 0.0)
        interp = self.grid.interpolate(np.eye(self.grid.n), rad)
        t = (cos1[:, None, None] * cos1[None, :, None]
             + sin1[:, None, None] * sin1[None, :, None] * self.cphi[None, None, :])
        t = np.clip(t, -1.0, 1.0)
        out = np.zeros(t.shape)
        p_prev, p_cur = np.ones_like(t), t.copy()
        for l in range(coeff.shape[0]):
            amp = interp @ coeff[l] @ interp.T
            pl = p_prev if l == 0 else p_cur
            out += amp[:, :, None] * (math.sqrt((2 * l + 1) / 2.0) * pl)
            if l >= 1:
                p_prev, p_cur = p_cur, ((2 * l + 1) * t * p_cur - l * p_prev) / (l + 1)
        return out

    def integrate(self, a: np.ndarray, b: np.ndarray) -> float:
        dens = np.einsum("pqk,k->pq", a * b, self.wphi)
        return 2.0 * np.pi * float(self.w @ dens @ self.w)


def _t_coefficients(u: RstFunction) -> np.ndarray:
    analysis = u.tquad.orthonormal * u.tquad.weights[:, None]
    return np.moveaxis(np.tensordot(u.values, analysis, axes=(2, 0)), 2, 0)


def _support_radius(u: RstFunction, rel: float = 1e-14) -> float:
    w = u.grid.weights
    sq = np.einsum("ijk,k->ij", u.values**2, u.tquad.weights)
    prof = sq @ w
    tail = np.cumsum((w * prof)[::-1])[::-1]
    total = tail[0]
    idx = np.nonzero(tail > rel * total)[0]
    return float(u.grid.nodes[idx[-1]]) if idx.size else float(u.grid.r_max)


@lru_cache(maxsize=8)
def _overlap_rule(grid: RadialGrid, r_cut: float) -> _OverlapQuadrature:
    return _OverlapQuadrature(grid, r_cut)


class _OverlapProfile:
    """``F(d) = int int u(x + d z^, y + d z^) phi(x, y)`` with ``phi`` sampled once."""

    def __init__(self, psi: ShiftedState, phi: RstFunction):
        if psi.u.grid is not phi.grid:
            raise ValueError("states live on different grids")
        r_cut = min(phi.grid.r_max, max(_support_radius(phi), _support_radius(psi.u)) + 2.0)
        self.rule = _overlap_rule(phi.grid, round(r_cut, 6))
        self.cu = _t_coefficients(psi.u)
        self.phi_vals = self.rule.values(_t_coefficients(phi), 0.0)
        self.a = psi.a
        self._cache = {}

    def __call__(self, d: float) -> float:
        d = abs(float(d))
        if d not in self._cache:
            self._cache[d] = self.rule.integrate(self.rule.values(self.cu, d), self.phi_vals)
        return self._cache[d]

    def slope(self, d: float, h: float) -> float:
        return (self(d + h) - self(d - h)) / (2.0 * h)


def _as_shifted(psi) -> ShiftedState:
    return ShiftedState(psi, np.zeros(3)) if isinstance(psi, RstFunction) else psi


def overlap(psi: RstFunction | ShiftedState, phi: RstFunction, b) -> float:
    """``int int psi(x - b, y - b) phi(x, y) dx dy``.

    Both underlying functions are rotation invariant, so the integral only
    depends on the length of the net shift and is evaluated with the shift
    along ``z``.
    """
    psi = _as_shifted(psi)
    prof = _OverlapProfile(psi, phi)
    return prof(np.linalg.norm(psi.a - np.asarray(b, dtype=float)))


def align_overlap(psi: RstFunction | ShiftedState, phi: RstFunction, h: float = 1e-4,
                  gtol: float = 1e-9, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Shift ``b`` maximizing :func:`overlap` by local ascent from ``b = 0``.

    Returns ``(b, gradient)``; the gradient at the maximizer equals the
    overlaps ``int int psi(x - b, y - b) e.(grad_x + grad_y) phi`` with the
    translation generators, i.e. the orthogonality residuals.

    Notes
    -----
    The overlap is a function ``F(|a - b|)`` of the net shift only, so the
    gradient is ``F'(d) (b - a)/d`` with ``F'`` from a central difference
    of step ``h``. ``F`` is even, which keeps the formula finite at ``d = 0``.

    Raises
    ------
    ConvergenceError
        If the ascent stops with a gradient above ``gtol``.
    """
    psi = _as_shifted(psi)
    prof = _OverlapProfile(psi, phi)

    def value(b):
        return -prof(np.linalg.norm(b - psi.a))

    def grad(b):
        diff = b - psi.a
        d = float(np.linalg.norm(diff))
        if d < h:
            # F'(d)/d -> F''(0) as d -> 0
            curv = (prof(h) - 2.0 * prof(0.0) + prof(h)) / h**2
            return -curv * diff
        return -prof.slope(d, h) * diff / d

    b0 = np.zeros(3)
    if np.linalg.norm(grad(b0)) <= gtol:
        return b0, -grad(b0)
    res = minimize(value, b0, jac=grad, method="BFGS", options={"gtol": gtol, "maxiter": max_iter})
    g = grad(res.x)
    if not np.isfinite(res.fun) or np.max(np.abs(g)) > max(gtol, 1e-8):
        raise ConvergenceError(f"overlap ascent stopped with gradient {np.max(np.abs(g)):.2e}",
                               float(np.max(np.abs(g))))
    return res.x, -g


# ---------------------------------------------------------------------------
# c(U) curve
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CCurveRow:
    U: float
    c_L0: float
    c_L1_deflated: float
    c_L2: float
    flag_crossing: str = ""

    FIELDS = ("U", "c_L0", "c_L1_deflated", "c_L2", "flag_crossing")


def c_curve(U_list, grid: RadialGrid, tquad: TQuadrature, l_max: int = 8, n_eigs: int = 2,
            tol: float = 1e-9, eig_tol: float = 1e-6, seed: int = 0, polaron=None,
            reports: list | None = None, on_row=None) -> list[CCurveRow]:
    """Deflated sector minima of ``H_n`` along a nondecreasing list of couplings.

    The first row at which any sector minimum is ``<= 0`` carries the names
    of the crossing sectors in ``flag_crossing``.  Reports are appended to
    ``reports`` when a list is given; ``on_row`` is called with each row.
    """
    U_list = [_check_U(U) for U in U_list]
    if any(b < a for a, b in zip(U_list, U_list[1:])):
        raise ValueError("U values must be sorted")
    rows: list[CCurveRow] = []
    warm = None
    flagged = False
    for U in U_list:
        sol = minimize_rst(U, grid, tquad, tol=tol, u0=warm, polaron=polaron)
        warm = sol.u
        cs = []
        for L in SUPPORTED_SECTORS:
            rep = min_eig_deflated(sol, U, L, n_eigs=n_eigs, l_max=l_max, tol=eig_tol, seed=seed)
            cs.append(rep.c_estimate)
            if reports is not None:
                reports.append(rep)
        flag = ""
        if not flagged and min(cs) <= 0:
            flag = "+".join(f"L{L}" for L, c in zip(SUPPORTED_SECTORS, cs) if c <= 0)
            flagged = True
        rows.append(CCurveRow(U, cs[0], cs[1], cs[2], flag))
        if on_row is not None:
            on_row(rows[-1])
    return rows
