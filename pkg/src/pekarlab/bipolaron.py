"""Rotation-invariant bipolaron in (r, s, t) coordinates.

A rotation-invariant two-body function ``psi(x, y)`` is stored as
``u(r_i, s_j, t_k)`` on the tensor product of the radial grid (for both
``r = |x|`` and ``s = |y|``) and the Gauss-Legendre rule in
``t = x.y / (|x||y|)``.  The energy is

    E_U[u] = T[u] + U R[u] - D[rho_u, rho_u],

with ``||u||^2 = 8 pi^2 int u^2 r^2 s^2 dt ds dr``.  In ``t`` the function is
the degree ``< m`` interpolant of its nodal values; every integral in ``t``
(kinetic, repulsion, density) is exact for that interpolant.

Internally the solver works with ``y[l, i, j] = sqrt(8 pi^2 w_i w_j) a_l(r_i, s_j)``
on interior nodes, where ``a_l`` are coefficients in orthonormal Legendre
functions.  There the L^2 inner product is Euclidean, the kinetic energy is
``B_l (x) 1 + 1 (x) B_l`` per mode and all operators are symmetric.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.sparse.linalg import LinearOperator, lobpcg

from .coulomb import RadialPotential, field_energy, newton_values, repulsion_field
from .errors import ConvergenceError
from .grid import RadialFunction, RadialGrid, TQuadrature, build_radial_grid, build_t_quadrature
from .polaron import PolaronSolution, solve_single_polaron

__all__ = [
    "RstFunction",
    "BipolaronSolution",
    "SweepRow",
    "EnergyParts",
    "density_rst",
    "energy_rst",
    "minimize_rst",
    "el_residual",
    "symmetrize",
    "rearrange_t",
    "zhislin_trial",
    "ZhislinRow",
    "zhislin_sweep",
    "two_field_energy",
    "sweep_U",
    "bisect_Uc_symm",
    "product_state",
    "random_rst",
    "sqrt_density_kinetic",
    "newton_bound_excess",
]

_EIGHT_PI2 = 8.0 * math.pi**2


@dataclass(frozen=True, eq=False)
class RstFunction:
    """Nodal values ``u[i, j, k] = u(r_i, s_j, t_k)``."""

    grid: RadialGrid
    tquad: TQuadrature
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        shape = (self.grid.n, self.grid.n, self.tquad.m)
        if v.shape != shape:
            raise ValueError(f"expected values of shape {shape}, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("RstFunction has non-finite values")
        object.__setattr__(self, "values", v)

    def norm(self) -> float:
        w = self.grid.weights
        sq = np.einsum("ijk,k->ij", self.values**2, self.tquad.weights)
        return math.sqrt(_EIGHT_PI2 * float(w @ sq @ w))

    def normalized(self) -> "RstFunction":
        return RstFunction(self.grid, self.tquad, self.values / self.norm())

    def asymmetry(self) -> float:
        """``max |u(r,s,t) - u(s,r,t)|``."""
        return float(np.max(np.abs(self.values - self.values.transpose(1, 0, 2))))

    def is_symmetric(self, tol: float = 1e-12) -> bool:
        scale = max(1.0, float(np.max(np.abs(self.values))))
        return self.asymmetry() <= tol * scale

    def __mul__(self, a: float) -> "RstFunction":
        return RstFunction(self.grid, self.tquad, a * self.values)

    __rmul__ = __mul__


@dataclass(frozen=True)
class EnergyParts:
    T: float
    attract: float
    repel: float

    def to_dict(self) -> dict:
        return {"T": self.T, "attract": self.attract, "repel": self.repel}


@dataclass(frozen=True, eq=False)
class BipolaronSolution:
    """Minimizer of the rotation-invariant problem at coupling ``U``.

    ``mu_n = energy - attract`` is the Euler-Lagrange multiplier.
    """

    u: RstFunction
    U: float
    energy: float
    parts: EnergyParts
    mu_n: float
    residual: float
    iterations: int
    potential: RadialPotential = field(repr=False)
    history: tuple = field(default=(), repr=False)

    @property
    def grid(self) -> RadialGrid:
        return self.u.grid

    @property
    def tquad(self) -> TQuadrature:
        return self.u.tquad

    def to_json_dict(self) -> dict:
        g = self.grid
        return {
            "U": self.U,
            "energy": self.energy,
            "parts": self.parts.to_dict(),
            "mu_n": self.mu_n,
            "residual": self.residual,
            "grid": {"n": g.n, "r_max": g.r_max, "mapping": g.mapping.value, "sigma": g.sigma,
                     "nodes": g.nodes.tolist(), "weights": g.weights.tolist()},
            "tquad": {"m": self.tquad.m, "nodes": self.tquad.nodes.tolist(),
                      "weights": self.tquad.weights.tolist()},
            "u": self.u.values.tolist(),
        }


@dataclass(frozen=True)
class SweepRow:
    U: float
    energy: float
    mu_n: float
    residual: float
    iterations: int
    e_single: float
    gap_to_e: float
    gap_to_2e: float
    status: str = "ok"

    FIELDS = ("U", "energy", "mu_n", "residual", "iterations", "e_single", "gap_to_e", "gap_to_2e")


# ---------------------------------------------------------------------------
# discrete operators
# ---------------------------------------------------------------------------


class RstSpace:
    """Operators of the two-body problem in the scaled modal representation."""

    def __init__(self, grid: RadialGrid, tquad: TQuadrature):
        self.grid, self.tquad = grid, tquad
        n, m = grid.n, tquad.m
        self.N, self.m = n - 1, m
        wi = grid.weights[:-1]
        self.wi = wi
        sw = np.sqrt(wi)
        self.scale = math.sqrt(_EIGHT_PI2) * np.outer(sw, sw)
        self.bstack = np.stack([grid._kinetic_cache(l) / np.outer(sw, sw) for l in range(m)])
        # nodal -> orthonormal coefficients, and back
        self.analysis = (tquad.orthonormal * tquad.weights[:, None]).T
        self.synthesis = tquad.orthonormal
        _, vup, pup = tquad.upsampled(2)
        self.up = np.ascontiguousarray(pup)
        self.down = np.ascontiguousarray((pup * vup[:, None]).T)
        full = repulsion_field(grid, tquad)
        self.field = np.ascontiguousarray(full[:-1, :-1, :].transpose(2, 0, 1))
        self.lval = np.arange(m)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.m, self.N, self.N)

    @property
    def dim(self) -> int:
        return self.m * self.N * self.N

    # conversions -----------------------------------------------------------
    def to_y(self, values: np.ndarray) -> np.ndarray:
        coeff = np.tensordot(self.analysis, values[:-1, :-1, :], axes=(1, 2))
        return coeff * self.scale

    def to_values(self, y: np.ndarray) -> np.ndarray:
        out = np.zeros((self.N + 1, self.N + 1, self.m))
        out[:-1, :-1, :] = np.tensordot(y / self.scale, self.synthesis, axes=(0, 1))
        return out

    # operators ---------------------------------------------------------------
    def kinetic(self, y: np.ndarray) -> np.ndarray:
        return np.matmul(self.bstack, y) + np.matmul(y, self.bstack)

    def repulsion(self, y: np.ndarray) -> np.ndarray:
        up = np.tensordot(self.up, y, axes=(1, 0))
        up *= self.field
        return np.tensordot(self.down, up, axes=(1, 0))

    def potential(self, y: np.ndarray, phi: np.ndarray) -> np.ndarray:
        p = phi[:-1]
        return (p[:, None] + p[None, :]) * y

    def hamiltonian(self, y: np.ndarray, phi: np.ndarray, U: float) -> np.ndarray:
        out = self.kinetic(y) - self.potential(y, phi)
        if U:
            out += U * self.repulsion(y)
        return out

    def density(self, y: np.ndarray) -> np.ndarray:
        """``rho`` at all nodes; sums both one-particle marginals."""
        sq = y**2
        marg = sq.sum(axis=(0, 2)) + sq.sum(axis=(0, 1))
        rho = np.zeros(self.N + 1)
        rho[:-1] = marg / (4.0 * math.pi * self.wi)
        return rho

    def evaluate(self, y: np.ndarray, U: float):
        """Energy parts, potential, multiplier and residual at ``y`` (normalized)."""
        rho = self.density(y)
        phi = newton_values(self.grid, rho)
        attract = 0.5 * 4.0 * math.pi * float(np.dot(self.grid.weights * rho, phi))
        ty = self.kinetic(y)
        t = float(np.vdot(y, ty))
        vy = self.repulsion(y) if U else np.zeros_like(y)
        rep = U * float(np.vdot(y, vy))
        energy = t + rep - attract
        mu = energy - attract
        resid = ty + U * vy - self.potential(y, phi) - mu * y
        return EnergyParts(t, attract, rep), energy, mu, float(np.linalg.norm(resid)), phi


@lru_cache(maxsize=4)
def rst_space(grid: RadialGrid, tquad: TQuadrature) -> RstSpace:
    return RstSpace(grid, tquad)


class _SeparablePreconditioner:
    """Exact inverse of ``h_l (x) 1 + 1 (x) h_l - sigma`` per Legendre mode.

    ``h_l = B_l - Phi`` is the one-body operator with the frozen potential;
    the repulsion is left out.
    """

    def __init__(self, space: RstSpace, phi: np.ndarray, sigma: float | None = None,
                 floor: float = 0.05):
        p = phi[:-1]
        mats = space.bstack - np.diag(p)[None, :, :]
        self.evals, self.evecs = np.linalg.eigh(mats)
        e0 = float(self.evals[0, 0])
        if sigma is None:
            sigma = 2 * e0 - floor
        denom = self.evals[:, :, None] + self.evals[:, None, :] - sigma
        self.inv = 1.0 / np.maximum(denom, floor)
        self.shape = space.shape

    def __call__(self, r: np.ndarray) -> np.ndarray:
        r = r.reshape(self.shape)
        z = np.matmul(np.matmul(self.evecs.transpose(0, 2, 1), r), self.evecs)
        z *= self.inv
        return np.matmul(np.matmul(self.evecs, z), self.evecs.transpose(0, 2, 1))


def _ground_state(space: RstSpace, phi: np.ndarray, U: float, y0: np.ndarray,
                  tol: float, maxiter: int) -> np.ndarray:
    dim, shape = space.dim, space.shape
    op = LinearOperator((dim, dim), matvec=lambda v: space.hamiltonian(v.reshape(shape), phi, U).ravel(),
                        matmat=lambda v: np.stack([space.hamiltonian(c.reshape(shape), phi, U).ravel()
                                                   for c in v.T], axis=1),
                        dtype=float)
    pre = _SeparablePreconditioner(space, phi)
    prec = LinearOperator((dim, dim), matvec=lambda v: pre(v).ravel(),
                          matmat=lambda v: np.stack([pre(c).ravel() for c in v.T], axis=1), dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        _, vec = lobpcg(op, y0.reshape(-1, 1), M=prec, tol=tol, maxiter=maxiter, largest=False)
    v = vec[:, 0].reshape(shape)
    return v / np.linalg.norm(v)


def _fix_sign(y: np.ndarray) -> np.ndarray:
    return -y if y[0].sum() < 0 else y


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------


def _check_U(U: float) -> float:
    U = float(U)
    if not U >= 0 or not math.isfinite(U):
        raise ValueError(f"repulsion coupling must be a finite nonnegative number, got {U}")
    return U


def density_rst(u: RstFunction) -> RadialFunction:
    """``rho(r) = 4 pi int int u(r, s, t)^2 s^2 ds dt`` for permutation-symmetric ``u``."""
    if not u.is_symmetric(1e-10):
        raise ValueError("density_rst needs a permutation-symmetric u")
    w = u.grid.weights
    sq = np.einsum("ijk,k->ij", u.values**2, u.tquad.weights)
    return RadialFunction(u.grid, 4.0 * math.pi * (sq @ w), 0)


def _full_density(u: RstFunction) -> np.ndarray:
    w = u.grid.weights
    sq = np.einsum("ijk,k->ij", u.values**2, u.tquad.weights)
    return 2.0 * math.pi * (sq @ w + w @ sq)


def energy_rst(u: RstFunction, U: float) -> tuple[float, EnergyParts]:
    """``E_U[u] = T + U R - D[rho_u, rho_u]`` without normalizing ``u``."""
    U = _check_U(U)
    space = rst_space(u.grid, u.tquad)
    y = space.to_y(u.values)
    t = float(np.vdot(y, space.kinetic(y)))
    rep = U * float(np.vdot(y, space.repulsion(y))) if U else 0.0
    rho = _full_density(u)
    phi = newton_values(u.grid, rho)
    attract = 0.5 * 4.0 * math.pi * float(np.dot(u.grid.weights * rho, phi))
    return t + rep - attract, EnergyParts(t, attract, rep)


def el_residual(u: RstFunction, U: float) -> float:
    """``||(-Lap_x - Lap_y + U/|x-y| - Phi(x) - Phi(y) - mu_n) u||`` for normalized ``u``."""
    U = _check_U(U)
    space = rst_space(u.grid, u.tquad)
    return space.evaluate(space.to_y(u.values), U)[3]


def two_field_energy(u: RstFunction, phi: RadialPotential | np.ndarray, U: float) -> float:
    """``E_U[psi, Phi]``: the energy with the field ``Phi`` held fixed.

    ``T + U R - int (Phi(x) + Phi(y)) |psi|^2 + ||psi||^2 (1/8 pi) int |grad Phi|^2``.
    """
    U = _check_U(U)
    vals = phi.values if isinstance(phi, RadialPotential) else np.asarray(phi, dtype=float)
    space = rst_space(u.grid, u.tquad)
    y = space.to_y(u.values)
    t = float(np.vdot(y, space.kinetic(y)))
    rep = U * float(np.vdot(y, space.repulsion(y))) if U else 0.0
    rho = _full_density(u)
    pot = 4.0 * math.pi * float(np.dot(u.grid.weights * rho, vals))
    nrm2 = u.norm() ** 2
    return t + rep - pot + nrm2 * field_energy(vals, u.grid)


def product_state(f: np.ndarray, grid: RadialGrid, tquad: TQuadrature, g: np.ndarray | None = None) -> RstFunction:
    """``u(r, s, t) = f(r) g(s)`` (``g = f`` by default), independent of ``t``."""
    g = f if g is None else g
    vals = np.broadcast_to((np.outer(f, g))[:, :, None], (grid.n, grid.n, tquad.m)).copy()
    return RstFunction(grid, tquad, vals)


def minimize_rst(U: float, grid: RadialGrid, tquad: TQuadrature, tol: float = 1e-8, max_iter: int = 300,
                 u0: RstFunction | None = None, polaron: PolaronSolution | None = None,
                 inner_maxiter: int = 20) -> BipolaronSolution:
    """Minimize ``E_U`` over normalized rotation-invariant ``u``.

    Alternating minimization of the two-field energy: with ``Phi`` frozen the
    best ``u`` is the ground state of a two-body Schroedinger operator
    (preconditioned LOBPCG from the current iterate); then ``Phi`` is
    replaced by the Newton potential of ``rho_u``.  Both half-steps lower
    the two-field energy, so the energy sequence is nonincreasing.

    Parameters
    ----------
    U : float
        Repulsion coupling, ``U >= 0``.
    grid, tquad : discretization
    tol : float
        Target Euler-Lagrange residual.
    u0 : RstFunction, optional
        Warm start; default is ``f (x) f`` from the single polaron.
    polaron : PolaronSolution, optional
        Reused for the default start.

    Raises
    ------
    ConvergenceError
        With the last residual and the energy history.
    """
    U = _check_U(U)
    space = rst_space(grid, tquad)
    if u0 is None:
        if polaron is None or polaron.grid is not grid:
            polaron = solve_single_polaron(grid)
        u0 = product_state(polaron.f.values, grid, tquad)
    y = space.to_y(u0.values)
    y = _fix_sign(y / np.linalg.norm(y))
    parts, energy, mu, res, phi = space.evaluate(y, U)
    hist = [energy]
    it = 0
    while res > tol and it < max_iter:
        it += 1
        inner_tol = max(0.05 * res, 0.2 * tol)
        y_new = _fix_sign(_ground_state(space, phi, U, y, inner_tol, inner_maxiter))
        trial = space.evaluate(y_new, U)
        if trial[1] > energy + 64 * np.finfo(float).eps * max(1.0, abs(energy)):
            # an inexact eigensolve must not undo the descent
            y_new = _fix_sign(_ground_state(space, phi, U, y, 0.1 * inner_tol, 4 * inner_maxiter))
            trial = space.evaluate(y_new, U)
        y = y_new
        parts, energy, mu, res, phi = trial
        hist.append(energy)
    if res > tol:
        raise ConvergenceError(f"bipolaron at U={U} did not converge: residual {res:.3e} > {tol:.1e}",
                               res, hist)
    u = RstFunction(grid, tquad, space.to_values(y))
    return BipolaronSolution(u, U, energy, parts, mu, res, it, RadialPotential(grid, phi, 2.0), tuple(hist))


def symmetrize(u: RstFunction) -> RstFunction:
    """``sqrt((|u(r,s,t)|^2 + |u(s,r,t)|^2) / 2)``."""
    v = u.values
    return RstFunction(u.grid, u.tquad, np.sqrt(0.5 * (v**2 + v.transpose(1, 0, 2) ** 2)))


def rearrange_t(u: RstFunction) -> RstFunction:
    """Weighted decreasing rearrangement of ``|u|`` in ``t`` at each ``(r, s)``.

    The nodal values are treated as a step function whose cell at ``t_k``
    has the quadrature weight ``v_k`` as its length.  The cells are laid out
    in decreasing order of value from ``t = -1`` and the result is read off
    at the cell centres of the original rule; each ``(r, s)`` slice is then
    rescaled so that ``sum_k v_k u^2`` (hence the norm and the density) is
    unchanged.  A slice that is already nonincreasing is returned as ``|u|``.
    """
    v = u.tquad.weights
    a = np.abs(u.values)
    order = np.argsort(-a, axis=-1, kind="stable")
    widths = v[order]
    right = np.cumsum(widths, axis=-1)
    centres = np.cumsum(v) - 0.5 * v
    pick = np.empty_like(order)
    flat_right = right.reshape(-1, u.tquad.m)
    flat_pick = pick.reshape(-1, u.tquad.m)
    for row in range(flat_right.shape[0]):
        flat_pick[row] = np.searchsorted(flat_right[row], centres)
    np.minimum(pick, u.tquad.m - 1, out=pick)
    src = np.take_along_axis(order, pick, axis=-1)
    out = np.take_along_axis(a, src, axis=-1)
    before = np.einsum("ijk,k->ij", a**2, v)
    after = np.einsum("ijk,k->ij", out**2, v)
    with np.errstate(divide="ignore", invalid="ignore"):
        fac = np.where(after > 0, np.sqrt(before / after), 0.0)
    return RstFunction(u.grid, u.tquad, out * fac[:, :, None])


def _c2_bump(x: np.ndarray) -> np.ndarray:
    """``C^2`` step: 1 for x <= 0, 0 for x >= 1 (quintic smoothstep)."""
    x = np.clip(x, 0.0, 1.0)
    return 1.0 - x**3 * (10.0 - 15.0 * x + 6.0 * x**2)


def zhislin_trial(f_sol: PolaronSolution, R_shell: float, U: float, grid: RadialGrid | None = None,
                  tquad: TQuadrature | None = None) -> tuple[RstFunction, float]:
    """Trial state ``[f_R (x) eta_R + eta_R (x) f_R] / sqrt 2`` and its energy.

    ``f_R`` is the one-electron minimizer ``lambda^{3/2} f(lambda x)``,
    ``lambda = 1/2``, multiplied by a C^2 cutoff equal to 1 on ``[0, R/2]``
    and 0 beyond ``R``, then normalized.  ``eta_R`` is the normalized C^2
    bump ``sin^3(pi (r - 10R)/R)`` on the shell ``[10R, 11R]``.

    Parameters
    ----------
    grid : RadialGrid, optional
        Grid for the trial; default uniform with ``r_max = 13.2 R`` and
        ``n = 300``.  Must satisfy ``11 R <= r_max``.
    """
    U = _check_U(U)
    if not R_shell > 0:
        raise ValueError("shell radius must be positive")
    if grid is None:
        grid = build_radial_grid(300, 11.0 * R_shell * 1.2, "uniform")
    if 11.0 * R_shell > grid.r_max:
        raise ValueError(f"shell [10R, 11R] with R={R_shell} exceeds r_max={grid.r_max}")
    if tquad is None:
        tquad = build_t_quadrature(4)
    r = grid.nodes
    lam = 0.5
    src = f_sol.grid
    scaled_r = lam * r
    inside = scaled_r <= src.r_max
    f = np.zeros_like(r)
    f[inside] = lam**1.5 * src.interpolate(f_sol.f.values, scaled_r[inside])
    f *= _c2_bump((r - 0.5 * R_shell) / (0.5 * R_shell))
    eta = np.where((r > 10 * R_shell) & (r < 11 * R_shell),
                   np.sin(np.pi * (r - 10 * R_shell) / R_shell) ** 3, 0.0)
    f[-1] = eta[-1] = 0.0
    f /= math.sqrt(4 * math.pi * np.dot(grid.weights, f**2))
    eta /= math.sqrt(4 * math.pi * np.dot(grid.weights, eta**2))
    vals = (np.outer(f, eta) + np.outer(eta, f)) / math.sqrt(2.0)
    u = RstFunction(grid, tquad, np.broadcast_to(vals[:, :, None], (grid.n, grid.n, tquad.m)).copy())
    u = u.normalized()
    energy, _ = energy_rst(u, U)
    return u, energy


@dataclass(frozen=True)
class ZhislinRow:
    """Trial energy of the shell construction at one radius.

    ``leading`` is ``(U - 1)/(11 R)`` and ``correction`` the measured
    remainder ``excess - leading``.
    """

    R_shell: float
    r_max: float
    energy: float
    e_single: float
    excess: float
    excess_times_11R: float
    leading: float
    correction: float

    FIELDS = ("R_shell", "r_max", "energy", "e_single", "excess", "excess_times_11R", "leading", "correction")

    @property
    def below_e(self) -> bool:
        return self.energy < self.e_single


def zhislin_sweep(f_sol: PolaronSolution, U: float, R_list, n: int = 300, mapping: str = "uniform",
                  sigma: float = 4.0) -> list[ZhislinRow]:
    """:func:`zhislin_trial` over shell radii, each on a grid with ``r_max = 13.2 R``."""
    rows = []
    e = f_sol.e
    for R in R_list:
        grid = build_radial_grid(n, 11.0 * R * 1.2, mapping, sigma)
        _, energy = zhislin_trial(f_sol, R, U, grid=grid)
        lead = (U - 1.0) / (11.0 * R)
        exc = energy - e
        rows.append(ZhislinRow(float(R), grid.r_max, energy, e, exc, 11.0 * R * exc, lead, exc - lead))
    return rows


def sweep_U(U_list, grid: RadialGrid, tquad: TQuadrature, tol: float = 1e-8, max_iter: int = 300,
            polaron: PolaronSolution | None = None, keep: list | None = None,
            on_row=None) -> list[SweepRow]:
    """Warm-started minimizations along a nondecreasing list of couplings.

    A point that fails to converge is recorded with ``status = "failed"``
    and the sweep continues.  Converged solutions are appended to ``keep``
    when a list is given; ``on_row`` is called with each row as it is done.
    """
    U_list = [_check_U(U) for U in U_list]
    if any(b < a for a, b in zip(U_list, U_list[1:])):
        raise ValueError("U values must be sorted")
    if polaron is None or polaron.grid is not grid:
        polaron = solve_single_polaron(grid)
    e = polaron.e
    rows = []
    warm = None
    for U in U_list:
        try:
            sol = minimize_rst(U, grid, tquad, tol=tol, max_iter=max_iter, u0=warm, polaron=polaron)
        except ConvergenceError as exc:
            nan = float("nan")
            last = exc.history[-1] if exc.history else nan
            rows.append(SweepRow(U, last, nan, exc.residual, max_iter, e, last - e, last - 2 * e, "failed"))
        else:
            warm = sol.u
            if keep is not None:
                keep.append(sol)
            rows.append(SweepRow(U, sol.energy, sol.mu_n, sol.residual, sol.iterations, e,
                                 sol.energy - e, sol.energy - 2 * e))
        if on_row is not None:
            on_row(rows[-1])
    return rows


def bisect_Uc_symm(lo: float, hi: float, tol_U: float, grid: RadialGrid, tquad: TQuadrature,
                   polaron: PolaronSolution | None = None, tol: float = 1e-7,
                   max_iter: int = 400) -> float:
    """Coupling where ``e_U^symm`` reaches the single-polaron energy ``e``.

    Bisects the sign of ``E(U) - e`` on ``[lo, hi]``; minimizations are warm
    started from the nearest solution already computed.

    Raises
    ------
    ValueError
        If ``E(lo) - e`` and ``E(hi) - e`` do not change sign.
    """
    lo, hi = _check_U(lo), _check_U(hi)
    if not hi > lo:
        raise ValueError("need lo < hi")
    if polaron is None or polaron.grid is not grid:
        polaron = solve_single_polaron(grid)
    e = polaron.e
    cache: dict[float, BipolaronSolution] = {}

    def gap(U: float) -> float:
        warm = None
        if cache:
            near = min(cache, key=lambda k: abs(k - U))
            warm = cache[near].u
        sol = _minimize_tolerant(U, grid, tquad, tol, max_iter, warm, polaron)
        cache[U] = sol
        return sol.energy - e

    g_lo, g_hi = gap(lo), gap(hi)
    if not (g_lo < 0 < g_hi):
        raise ValueError(f"[{lo}, {hi}] does not bracket e_U^symm = e (gaps {g_lo:.3e}, {g_hi:.3e})")
    while hi - lo > tol_U:
        mid = 0.5 * (lo + hi)
        if gap(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _minimize_tolerant(U, grid, tquad, tol, max_iter, warm, polaron) -> BipolaronSolution:
    """Minimization for sign decisions: accept a stalled run if the energy has settled."""
    try:
        return minimize_rst(U, grid, tquad, tol=tol, max_iter=max_iter, u0=warm, polaron=polaron)
    except ConvergenceError as exc:
        hist = exc.history
        if len(hist) > 10 and abs(hist[-1] - hist[-10]) < 1e-9:
            u = warm if warm is not None else product_state(polaron.f.values, grid, tquad)
            energy = hist[-1]
            parts = EnergyParts(float("nan"), float("nan"), float("nan"))
            return BipolaronSolution(u, U, energy, parts, float("nan"), exc.residual, max_iter,
                                     RadialPotential(grid, np.zeros(grid.n), 2.0), tuple(hist))
        raise


def random_rst(grid: RadialGrid, tquad: TQuadrature, rng: np.random.Generator,
               symmetric: bool = True, terms: int = 3) -> RstFunction:
    """Smooth, positive, decaying random test function, normalized."""
    r = grid.nodes
    t = tquad.nodes
    vals = np.zeros((grid.n, grid.n, tquad.m))
    for _ in range(terms):
        a, b = rng.uniform(0.3, 1.2, size=2)
        c1, c2 = rng.uniform(0.0, 3.0, size=2)
        g = np.exp(-a * (r - c1) ** 2 / 4.0 - 0.1 * r)
        h = g if symmetric else np.exp(-b * (r - c2) ** 2 / 4.0 - 0.1 * r)
        coef = rng.normal(size=4) * np.array([1.0, 0.8, 0.5, 0.3])
        ang = np.exp(np.polynomial.legendre.legval(t, coef))
        pair = np.outer(g, h)
        if symmetric:
            pair = 0.5 * (pair + pair.T)
        vals += rng.uniform(0.5, 1.5) * pair[:, :, None] * ang[None, None, :]
    vals[-1, :, :] = 0.0
    vals[:, -1, :] = 0.0
    return RstFunction(grid, tquad, vals).normalized()


def sqrt_density_kinetic(u: RstFunction) -> float:
    """``int |grad sqrt(rho_u)|^2 dx`` with the discrete kinetic form."""
    rho = np.maximum(_full_density(u), 0.0)
    s = np.sqrt(rho)[:-1]
    return 4.0 * math.pi * float(s @ u.grid._kinetic_cache(0) @ s)


def newton_bound_excess(u: RstFunction) -> float:
    """``max_i max(Phi_i - 2/r_i, -Phi_i)`` for ``Phi = rho_u * |x|^-1`` (normalized ``u``)."""
    rho = _full_density(u) / u.norm() ** 2
    phi = newton_values(u.grid, rho)
    r = u.grid.nodes
    return float(max(np.max(phi - 2.0 / r), np.max(-phi)))
