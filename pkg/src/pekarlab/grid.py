"""Radial and angular discretizations shared by every solver.

The radial coordinate is the image of Gauss-Lobatto points on ``x in [0, 1]``
under a smooth map ``r(x)``.  The node ``x = 0`` (the origin) is dropped,
the node ``x = 1`` (``r = r_max``) is kept, so every quadrature weight is
positive and constants are integrated on the full interval.  Functions that
obey the Dirichlet condition at ``r_max`` carry a zero in the last slot.

Derivatives are taken from the polynomial interpolant of ``chi = r g`` in the
mapped variable (with ``chi(0) = 0``).  The stiffness forms built here satisfy
summation by parts exactly on the Lobatto rule, so ``M^-1 A g`` coincides with
spectral collocation of ``-Laplace g`` at interior nodes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial.legendre import leggauss, legvander
from scipy.special import roots_jacobi

__all__ = [
    "DEFAULT_R_MAX",
    "Mapping",
    "RadialGrid",
    "TQuadrature",
    "RadialFunction",
    "build_radial_grid",
    "build_t_quadrature",
    "legendre_analyze",
    "legendre_synthesize",
    "inner_radial",
    "barycentric_weights",
    "interpolation_matrix",
]


DEFAULT_R_MAX = 60.0


class Mapping(str, enum.Enum):
    UNIFORM = "uniform"
    EXPONENTIAL = "exponential"


def lobatto(npts: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Lobatto nodes and weights on [0, 1] with ``npts`` points."""
    inner, _ = roots_jacobi(npts - 2, 1.0, 1.0)
    x = np.concatenate([[-1.0], inner, [1.0]])
    p = np.polynomial.legendre.legval(x, np.eye(npts)[-1])
    w = 2.0 / (npts * (npts - 1) * p**2)
    return 0.5 * (x + 1.0), 0.5 * w


def barycentric_weights(z: np.ndarray) -> np.ndarray:
    # scaled by 4 (capacity of an interval of length 1) to avoid underflow
    diff = 4.0 * (z[:, None] - z[None, :])
    np.fill_diagonal(diff, 1.0)
    sign = np.prod(np.sign(diff), axis=1)
    logw = -np.sum(np.log(np.abs(diff)), axis=1)
    return sign * np.exp(logw - logw.max())


def _differentiation_matrix(z: np.ndarray, bw: np.ndarray) -> np.ndarray:
    dz = z[:, None] - z[None, :]
    np.fill_diagonal(dz, 1.0)
    d = (bw[None, :] / bw[:, None]) / dz
    np.fill_diagonal(d, 0.0)
    np.fill_diagonal(d, -d.sum(axis=1))
    return d


def interpolation_matrix(z: np.ndarray, bw: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Barycentric interpolation matrix from nodes ``z`` to points ``y``."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d = y[:, None] - z[None, :]
    hit = d == 0.0
    d[hit] = 1.0
    c = bw[None, :] / d
    out = c / c.sum(axis=1, keepdims=True)
    rows = hit.any(axis=1)
    out[rows] = hit[rows].astype(float)
    return out


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Nodes ``r_i`` in (0, r_max] with weights for ``int g(r) r^2 dr``.

    ``x`` are the mapped Lobatto coordinates of the nodes, ``rho`` their
    Lobatto weights on [0, 1] and ``dr_dx`` the map Jacobian.  The full
    Lobatto set (including the dropped origin) is kept for differentiation.
    """

    nodes: np.ndarray
    weights: np.ndarray
    r_max: float
    n: int
    mapping: Mapping
    sigma: float
    x: np.ndarray = field(repr=False)
    rho: np.ndarray = field(repr=False)
    dr_dx: np.ndarray = field(repr=False)

    # -- map ---------------------------------------------------------------
    def r_of_x(self, x):
        x = np.asarray(x, dtype=float)
        if self.mapping is Mapping.UNIFORM:
            return self.r_max * x
        return self.r_max * np.expm1(self.sigma * x) / np.expm1(self.sigma)

    def x_of_r(self, r):
        r = np.asarray(r, dtype=float)
        if self.mapping is Mapping.UNIFORM:
            return r / self.r_max
        return np.log1p(r * np.expm1(self.sigma) / self.r_max) / self.sigma

    @property
    def r(self) -> np.ndarray:
        return self.nodes

    @property
    def w(self) -> np.ndarray:
        return self.weights

    @cached_property
    def _z(self) -> np.ndarray:
        return np.concatenate([[0.0], self.x])

    @cached_property
    def _bw(self) -> np.ndarray:
        return barycentric_weights(self._z)

    @cached_property
    def dmat(self) -> np.ndarray:
        """d/dr of ``chi`` at the nodes from nodal ``chi`` (``chi(0)=0``)."""
        d = _differentiation_matrix(self._z, self._bw)
        return d[1:, 1:] / self.dr_dx[:, None]

    @cached_property
    def _full_dmat_x(self) -> np.ndarray:
        # d/dx on all Lobatto points including the origin, columns 1..n
        return _differentiation_matrix(self._z, self._bw)[:, 1:]

    @cached_property
    def _rho_full(self) -> np.ndarray:
        return np.concatenate([[self._rho0], self.rho])

    @cached_property
    def _rho0(self) -> float:
        _, w = lobatto(self.n + 1)
        return float(w[0])

    @cached_property
    def _drdx_full(self) -> np.ndarray:
        if self.mapping is Mapping.UNIFORM:
            d0 = self.r_max
        else:
            d0 = self.r_max * self.sigma / np.expm1(self.sigma)
        return np.concatenate([[d0], self.dr_dx])

    @cached_property
    def stiffness_chi(self) -> np.ndarray:
        """Lobatto form of ``int chi' psi' dr`` on the Dirichlet space."""
        d = self._full_dmat_x[:, :-1]
        return d.T @ ((self._rho_full / self._drdx_full)[:, None] * d)

    def kinetic(self, l: int = 0) -> np.ndarray:
        """Matrix of ``int (g' h' + l(l+1) g h / r^2) r^2 dr`` on interior nodes.

        Acts on values at the first ``n - 1`` nodes (the last node is the
        Dirichlet boundary).  Symmetric positive definite.
        """
        return self._kinetic_cache(int(l)).copy()

    def _kinetic_cache(self, l: int) -> np.ndarray:
        cache = self.__dict__.setdefault("_kin", {})
        if l not in cache:
            ri = self.nodes[:-1]
            a = ri[:, None] * self.stiffness_chi * ri[None, :]
            if l:
                a[np.diag_indices_from(a)] += l * (l + 1) * self.weights[:-1] / ri**2
            a.setflags(write=False)
            cache[l] = a
        return cache[l]

    def derivative(self, g: np.ndarray) -> np.ndarray:
        """Radial derivative of a nodal function via ``chi = r g``."""
        g = np.asarray(g, dtype=float)
        r = self.nodes
        chi_r = np.tensordot(self.dmat, r[(...,) + (None,) * (g.ndim - 1)] * g, axes=(1, 0))
        rr = r[(...,) + (None,) * (g.ndim - 1)]
        return (chi_r - g) / rr

    def interpolate(self, g: np.ndarray, r_new) -> np.ndarray:
        """Spectral interpolation of nodal ``g`` (axis 0) at radii ``r_new``."""
        r_new = np.atleast_1d(np.asarray(r_new, dtype=float))
        chi = np.concatenate([np.zeros((1,) + np.shape(g)[1:]), self.nodes[(...,) + (None,) * (np.ndim(g) - 1)] * g])
        inside = r_new <= self.r_max
        xq = self.x_of_r(np.clip(r_new, 0.0, self.r_max))
        mat = interpolation_matrix(self._z, self._bw, xq)
        out = np.tensordot(mat, chi, axes=(1, 0))
        rq = r_new[(...,) + (None,) * (np.ndim(g) - 1)]
        with np.errstate(divide="ignore", invalid="ignore"):
            val = out / rq
        if np.any(r_new == 0.0):
            # limit chi/r at the origin = chi'(0)
            dchi0 = self._full_dmat_x[0] @ chi[1:] / self._drdx_full[0]
            val[r_new == 0.0] = dchi0
        val[~inside] = 0.0
        return val

    def __repr__(self) -> str:
        return f"RadialGrid(n={self.n}, r_max={self.r_max}, mapping={self.mapping.value}, sigma={self.sigma})"


def build_radial_grid(n: int = 200, r_max: float = DEFAULT_R_MAX, mapping: str | Mapping = "uniform",
                      sigma: float = 4.0) -> RadialGrid:
    """Build a radial grid with ``n`` nodes on (0, r_max].

    The exponential map ``r = r_max (exp(sigma x) - 1)/(exp(sigma) - 1)``
    clusters nodes near the origin.  The default is the uniform map on a
    wide box: Lobatto points already cluster quadratically at ``x = 0``, and
    stronger clustering amplifies rounding in ``l >= 1`` centrifugal terms.
    """
    if int(n) != n or n < 8:
        raise ValueError(f"radial grid needs n >= 8 nodes, got {n}")
    if not r_max > 0:
        raise ValueError(f"r_max must be positive, got {r_max}")
    mapping = Mapping(mapping)
    if mapping is Mapping.EXPONENTIAL and not sigma > 0:
        raise ValueError("exponential mapping needs sigma > 0")
    n = int(n)
    xs, rho = lobatto(n + 1)
    xs, rho = xs[1:], rho[1:]
    tmp = RadialGrid(np.empty(0), np.empty(0), float(r_max), n, mapping, float(sigma),
                     xs, rho, np.empty(0))
    r = tmp.r_of_x(xs)
    if mapping is Mapping.UNIFORM:
        drdx = np.full_like(xs, float(r_max))
    else:
        drdx = r_max * sigma * np.exp(sigma * xs) / np.expm1(sigma)
    r[-1] = float(r_max)
    w = rho * drdx * r**2
    for a in (r, w, xs, rho, drdx):
        a.setflags(write=False)
    return RadialGrid(r, w, float(r_max), n, mapping, float(sigma), xs, rho, drdx)


@dataclass(frozen=True, eq=False)
class TQuadrature:
    """Gauss-Legendre rule on [-1, 1] for ``t = x.y/(|x||y|)``."""

    nodes: np.ndarray
    weights: np.ndarray
    m: int

    @cached_property
    def vandermonde(self) -> np.ndarray:
        """``P_k(t_j)`` for k = 0..m-1, shape (m, m) indexed [j, k]."""
        return legvander(self.nodes, self.m - 1)

    @cached_property
    def analysis(self) -> np.ndarray:
        """Map nodal values to the m Legendre coefficients (exact for degree < m)."""
        k = np.arange(self.m)
        return ((2 * k + 1) / 2.0)[:, None] * (self.vandermonde * self.weights[:, None]).T

    @cached_property
    def orthonormal(self) -> np.ndarray:
        """Orthonormal Legendre functions ``p_k(t_j)``, shape (m, m) indexed [j, k].

        ``sqrt(v_j) p_k(t_j)`` is an orthogonal matrix, so nodal values and
        ``p``-coefficients are related isometrically.
        """
        k = np.arange(self.m)
        return self.vandermonde * np.sqrt((2 * k + 1) / 2.0)

    def upsampled(self, factor: int = 2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Gauss rule with ``factor * m`` nodes and ``p_k`` (k < m) on it.

        Returns ``(nodes, weights, P)`` with ``P[j, k] = p_k(t_j)``.
        """
        cache = self.__dict__.setdefault("_up", {})
        if factor not in cache:
            t, v = leggauss(factor * self.m)
            k = np.arange(self.m)
            p = legvander(t, self.m - 1) * np.sqrt((2 * k + 1) / 2.0)
            for a in (t, v, p):
                a.setflags(write=False)
            cache[factor] = (t, v, p)
        return cache[factor]

    @cached_property
    def derivative_modal(self) -> np.ndarray:
        """Matrix of d/dt acting on Legendre coefficients."""
        m = self.m
        d = np.zeros((m, m))
        for k in range(m):
            # P_k' = sum_{j<k, j+k odd} (2j+1) P_j
            for j in range(k - 1, -1, -2):
                d[j, k] = 2 * j + 1
        return d


def build_t_quadrature(m: int = 32) -> TQuadrature:
    if int(m) != m or m < 4:
        raise ValueError(f"t quadrature needs order m >= 4, got {m}")
    t, v = leggauss(int(m))
    t.setflags(write=False)
    v.setflags(write=False)
    return TQuadrature(t, v, int(m))


def legendre_analyze(values: np.ndarray, tquad: TQuadrature, k_max: int | None = None) -> np.ndarray:
    """Legendre coefficients ``c_k = (2k+1)/2 sum_j v_j u(t_j) P_k(t_j)``.

    ``values`` has the t index last; coefficients replace it.
    """
    if k_max is None:
        k_max = tquad.m - 1
    if k_max >= tquad.m or k_max < 0:
        raise ValueError(f"k_max={k_max} aliases on a rule with m={tquad.m} nodes")
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != tquad.m:
        raise ValueError("last axis must hold the t nodes")
    return values @ tquad.analysis[: k_max + 1].T


def legendre_synthesize(coeffs: np.ndarray, tquad: TQuadrature) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=float)
    k = coeffs.shape[-1]
    if k > tquad.m:
        raise ValueError("more coefficients than t nodes")
    return coeffs @ tquad.vandermonde[:, :k].T


@dataclass(frozen=True, eq=False)
class RadialFunction:
    grid: RadialGrid
    values: np.ndarray
    l: int | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} nodal values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("radial function has non-finite values")
        object.__setattr__(self, "values", v)

    def norm(self) -> float:
        return float(np.sqrt(inner_radial(self, self)))

    def __mul__(self, a: float) -> "RadialFunction":
        return RadialFunction(self.grid, a * self.values, self.l)

    __rmul__ = __mul__


def inner_radial(g: RadialFunction, h: RadialFunction) -> float:
    """``sum_i w_i g_i h_i``, i.e. ``int g h r^2 dr``."""
    if g.grid is not h.grid:
        raise ValueError("radial functions live on different grids")
    return float(np.dot(g.grid.weights * g.values, h.values))
