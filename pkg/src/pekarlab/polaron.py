"""Single polaron at alpha = 1/2 and the one-particle operators built on it.

The minimization problem is

    e0 = min { 2 int |grad f|^2 - 4 D[f^2, f^2] : ||f|| = 1 },   e = e0 / 8,

over radial ``f``.  A function in angular momentum sector ``l`` is stored as
its radial profile ``g``; it stands for ``g(r) sqrt(4 pi) Y_lm``, so that in
every sector the L^2(R^3) inner product is ``4 pi sum_i w_i g_i h_i`` and an
``l = 0`` profile is the radial function itself.

Internally the solvers use ``y = sqrt(4 pi w) g`` on the interior nodes, in
which the Euclidean inner product is the L^2 one and all operators are
symmetric matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh

from .coulomb import RadialPotential, newton_values, sector_potential
from .errors import ConvergenceError
from .grid import RadialFunction, RadialGrid

__all__ = [
    "PolaronSolution",
    "OneBodyOperatorContext",
    "solve_single_polaron",
    "polaron_energy",
    "operator_context",
    "inner",
    "apply_h",
    "apply_xf",
    "apply_L1",
    "build_R",
    "hessian1_form",
    "spectrum_L1",
    "spectrum_h",
    "L1_matrix",
]

_FOUR_PI = 4.0 * math.pi


def inner(g: RadialFunction | np.ndarray, h: RadialFunction | np.ndarray, grid: RadialGrid | None = None) -> float:
    """L^2(R^3) inner product ``4 pi int g h r^2 dr`` of two sector profiles."""
    if isinstance(g, RadialFunction):
        if isinstance(h, RadialFunction) and g.grid is not h.grid:
            raise ValueError("radial functions live on different grids")
        grid = g.grid
    gv = getattr(g, "values", g)
    hv = getattr(h, "values", h)
    return _FOUR_PI * float(np.dot(grid.weights * gv, hv))


def _profile(grid: RadialGrid, g) -> np.ndarray:
    if isinstance(g, RadialFunction):
        if g.grid is not grid:
            raise ValueError("radial function lives on a different grid")
        return g.values
    v = np.asarray(g, dtype=float)
    if v.shape != (grid.n,):
        raise ValueError(f"expected {grid.n} nodal values, got shape {v.shape}")
    return v


def polaron_energy(grid: RadialGrid, f: np.ndarray) -> tuple[float, float, float]:
    """``(G[f], T, D)`` with ``G = 2T - 4D`` for a profile ``f`` (last node ignored)."""
    fi = f[:-1]
    t = _FOUR_PI * float(fi @ grid._kinetic_cache(0) @ fi)
    rho = np.append(fi**2, 0.0)
    phi = newton_values(grid, rho)
    d = 0.5 * _FOUR_PI * float(np.dot(grid.weights * rho, phi))
    return 2 * t - 4 * d, t, d


@dataclass(frozen=True, eq=False)
class PolaronSolution:
    """Converged single-polaron minimizer with its energy bookkeeping.

    Attributes
    ----------
    f : RadialFunction
        Positive minimizer, ``4 pi int f^2 r^2 dr = 1``.
    e0, e, mu : float
        ``e0 = 2T - 4D``, ``e = e0/8`` and ``mu = e0 - 4D``.
    T, Dff : float
        ``int |grad f|^2`` and ``D[f^2, f^2]``.
    residual : float
        ``||(-Laplace - 2 f^2 * |x|^-1 - mu/2) f||``.
    """

    f: RadialFunction
    e0: float
    e: float
    mu: float
    T: float
    Dff: float
    residual: float
    iterations: int
    history: tuple = field(default=(), repr=False)

    @property
    def grid(self) -> RadialGrid:
        return self.f.grid

    def to_json_dict(self) -> dict:
        g = self.grid
        return {
            "grid": {"nodes": g.nodes.tolist(), "weights": g.weights.tolist()},
            "f": self.f.values.tolist(),
            "e0": self.e0,
            "e": self.e,
            "mu": self.mu,
            "T": self.T,
            "Dff": self.Dff,
            "residual": self.residual,
        }


class _Scaled:
    """Euclidean representation ``y = sqrt(4 pi w) g`` on interior nodes."""

    def __init__(self, grid: RadialGrid):
        self.grid = grid
        self.wi = grid.weights[:-1]
        self.sw = np.sqrt(_FOUR_PI * self.wi)
        self.b0 = grid._kinetic_cache(0) / np.sqrt(np.outer(self.wi, self.wi))

    def to_y(self, f):
        return self.sw * f[:-1]

    def to_f(self, y):
        return np.append(y / self.sw, 0.0)

    def potential(self, y):
        """``W = 2 f^2 * |x|^-1`` on all nodes."""
        return 2.0 * newton_values(self.grid, self.to_f(y) ** 2)

    def state(self, y):
        f = self.to_f(y)
        g_val, t, d = polaron_energy(self.grid, f)
        w = self.potential(y)[:-1]
        mu = g_val - 4 * d
        hy = self.b0 @ y - w * y
        res = float(np.linalg.norm(hy - 0.5 * mu * y))
        return g_val, t, d, mu, w, res


def _initial(grid: RadialGrid) -> np.ndarray:
    f = np.exp(-grid.nodes)
    f[-1] = 0.0
    return f / math.sqrt(inner(f, f, grid))


def solve_single_polaron(grid: RadialGrid, tol: float = 1e-9, max_iter: int = 500,
                         damping: float = 0.0, method: str = "scf",
                         f0: np.ndarray | None = None) -> PolaronSolution:
    """Minimize ``G[f] = 2 int |grad f|^2 - 4 D[f^2, f^2]`` over ``||f|| = 1``.

    Parameters
    ----------
    grid : RadialGrid
    tol : float
        Target for the Euler-Lagrange residual.
    max_iter : int
    damping : float
        SCF only: weight of the previous iterate when mixing orbitals.
        A mixed step that would raise the energy is replaced by the
        undamped step, which never does.
    method : {"scf", "flow"}
        ``"scf"`` freezes ``W = 2 f^2 * |x|^-1`` and takes the ground state;
        this is alternating minimization of the two-field energy.
        ``"flow"`` is a preconditioned projected gradient flow on the sphere
        with Barzilai-Borwein steps and an Armijo energy test.
    f0 : array, optional
        Initial profile; default ``exp(-r)`` normalized.

    Raises
    ------
    ConvergenceError
        If the residual is above ``tol`` after ``max_iter`` iterations.
    """
    if not 0.0 <= damping < 1.0:
        raise ValueError("damping must lie in [0, 1)")
    sc = _Scaled(grid)
    f_init = _initial(grid) if f0 is None else np.asarray(f0, dtype=float).copy()
    y = sc.to_y(f_init)
    y /= np.linalg.norm(y)
    if method == "scf":
        y, hist, it, st = _scf(sc, y, tol, max_iter, damping)
    elif method == "flow":
        y, hist, it, st = _flow(sc, y, tol, max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    g_val, t, d, mu, _, res = st
    if not res <= tol:
        raise ConvergenceError(f"single polaron did not converge: residual {res:.3e} > {tol:.1e}",
                               res, hist)
    f = sc.to_f(y)
    return PolaronSolution(RadialFunction(grid, f, 0), g_val, g_val / 8, mu, t, d, res, it, tuple(hist))


def _scf(sc: _Scaled, y, tol, max_iter, damping):
    st = sc.state(y)
    hist = [st[0]]
    for it in range(1, max_iter + 1):
        if st[5] <= tol:
            return y, hist, it - 1, st
        _, vec = eigh(sc.b0 - np.diag(st[4]), subset_by_index=[0, 0])
        v = vec[:, 0] * np.sign(vec[0, 0])
        if damping:
            mixed = (1 - damping) * v + damping * y
            mixed /= np.linalg.norm(mixed)
            trial = sc.state(mixed)
            if trial[0] <= st[0]:
                y, st = mixed, trial
                hist.append(st[0])
                continue
        y = v
        st = sc.state(y)
        hist.append(st[0])
    return y, hist, max_iter, st


def _flow(sc: _Scaled, y, tol, max_iter):
    prec = cho_factor(sc.b0 + np.eye(sc.b0.shape[0]))
    st = sc.state(y)
    hist = [st[0]]

    def direction(y, st):
        w, mu = st[4], st[3]
        grad = 4.0 * (sc.b0 @ y - w * y - 0.5 * mu * y)
        d = cho_solve(prec, grad)
        return d - (y @ d) * y, grad

    d, grad = direction(y, st)
    step = 0.25
    y_old = d_old = None
    for it in range(1, max_iter + 1):
        if st[5] <= tol:
            return y, hist, it - 1, st
        if y_old is not None:
            s = y - y_old
            z = d - d_old
            sz = float(s @ z)
            if sz > 0:
                step = float(s @ s) / sz
        slope = float(grad @ d)
        # energy differences below this are rounding noise in D
        noise = 64 * np.finfo(float).eps * max(1.0, abs(st[0]))
        tau = step
        for _ in range(60):
            cand = y - tau * d
            cand /= np.linalg.norm(cand)
            trial = sc.state(cand)
            if trial[0] <= st[0] - 1e-4 * tau * slope + noise:
                break
            tau *= 0.5
        else:
            break
        y_old, d_old = y, d
        y, st = cand, trial
        hist.append(st[0])
        d, grad = direction(y, st)
    return y, hist, max_iter, st


@dataclass(frozen=True, eq=False)
class OneBodyOperatorContext:
    """Potentials and constants for ``h``, ``x_f``, ``L1`` and ``H1`` at a polaron.

    Attributes
    ----------
    solution : PolaronSolution
    W : RadialPotential
        ``W_f = 2 f^2 * |x|^-1``.
    rfun : RadialFunction
        ``r = -2(-Laplace - 4 f^2 * |x|^-1) f``.
    beta : float
        ``8((f, -Laplace f) - 6 D[f^2, f^2])``.
    gamma : float
        Coefficient of ``|f><f|`` in ``H1``, equal to ``beta / 2``.
    """

    solution: PolaronSolution
    W: RadialPotential
    rfun: RadialFunction
    beta: float
    gamma: float

    @property
    def grid(self) -> RadialGrid:
        return self.solution.grid

    @property
    def f(self) -> np.ndarray:
        return self.solution.f.values

    @cached_property
    def fprime(self) -> RadialFunction:
        return RadialFunction(self.grid, self.grid.derivative(self.f), 1)


def operator_context(sol: PolaronSolution) -> OneBodyOperatorContext:
    grid = sol.grid
    f = sol.f.values
    w = 2.0 * newton_values(grid, f**2)
    lap_f = _laplacian(grid, f, 0)
    rvals = -2.0 * (lap_f - 2.0 * w * f)
    rvals[-1] = 0.0
    beta = 8.0 * (sol.T - 6.0 * sol.Dff)
    return OneBodyOperatorContext(sol, RadialPotential(grid, w, 2.0), RadialFunction(grid, rvals, 0),
                                  beta, 0.5 * beta)


def _laplacian(grid: RadialGrid, g: np.ndarray, l: int) -> np.ndarray:
    """Strong form of ``-Laplace_l g`` at interior nodes, zero at ``r_max``."""
    out = np.zeros_like(g)
    out[:-1] = (grid._kinetic_cache(l) @ g[:-1]) / grid.weights[:-1]
    return out


def apply_h(ctx: OneBodyOperatorContext, g, l: int = 0) -> RadialFunction:
    """``(-Laplace_l - W_f - mu/2) g``."""
    grid = ctx.grid
    v = _profile(grid, g)
    out = _laplacian(grid, v, l) - (ctx.W.values + 0.5 * ctx.solution.mu) * v
    out[-1] = 0.0
    return RadialFunction(grid, out, l)


def apply_xf(ctx: OneBodyOperatorContext, g, l: int = 0) -> RadialFunction:
    """``(x_f g)(x) = f(x) int f(x') g(x') |x - x'|^-1 dx'`` in sector ``l``."""
    grid = ctx.grid
    v = _profile(grid, g).copy()
    v[-1] = 0.0
    out = ctx.f * sector_potential(grid, ctx.f * v, l)
    out[-1] = 0.0
    return RadialFunction(grid, out, l)


def apply_L1(ctx: OneBodyOperatorContext, g, l: int = 0) -> RadialFunction:
    """``L1 = h - 4 x_f``."""
    a = apply_h(ctx, g, l).values - 4.0 * apply_xf(ctx, g, l).values
    return RadialFunction(ctx.grid, a, l)


def build_R(ctx: OneBodyOperatorContext) -> RadialFunction:
    """``R = 2f + r f'``, the dilation derivative of ``beta^2 f(beta x)`` at 1."""
    r = ctx.grid.nodes
    vals = 2.0 * ctx.f + r * ctx.fprime.values
    vals[-1] = 0.0
    return RadialFunction(ctx.grid, vals, 0)


def hessian1_form(ctx: OneBodyOperatorContext, j, l: int = 0) -> float:
    """``(j, H1 j)`` with ``H1 = L1 + |r><f| + |f><r| + gamma |f><f|``.

    The rank-one terms only see the ``l = 0`` sector.  ``(j, H1 j)`` is the
    ``eps^2`` coefficient of ``F[(f + eps j)/||f + eps j||]`` with
    ``F = int |grad psi|^2 - 2 D[psi^2, psi^2]``.
    """
    grid = ctx.grid
    v = _profile(grid, j).copy()
    v[-1] = 0.0
    val = inner(v, apply_L1(ctx, v, l).values, grid)
    if l == 0:
        jf = inner(v, ctx.f, grid)
        jr = inner(v, ctx.rfun.values, grid)
        val += 2.0 * jf * jr + ctx.gamma * jf**2
    return val


def L1_matrix(ctx: OneBodyOperatorContext, l: int) -> np.ndarray:
    """Symmetric matrix of ``L1`` in sector ``l`` in the ``y`` representation."""
    return _sector_matrix(ctx, l, with_x=True)


def _sector_matrix(ctx: OneBodyOperatorContext, l: int, with_x: bool) -> np.ndarray:
    grid = ctx.grid
    wi = grid.weights[:-1]
    ri = grid.nodes[:-1]
    sw = np.sqrt(wi)
    mat = grid._kinetic_cache(l) / np.outer(sw, sw)
    mat = mat - np.diag(ctx.W.values[:-1] + 0.5 * ctx.solution.mu)
    if with_x:
        cache = grid.__dict__.setdefault("_ainv", {})
        if l not in cache:
            cache[l] = np.linalg.inv(grid._kinetic_cache(l))
        big_r = grid.r_max
        green = _FOUR_PI * np.outer(sw, sw) * cache[l]
        u = sw * ri**l
        green += (_FOUR_PI / (2 * l + 1) / big_r ** (2 * l + 1)) * np.outer(u, u)
        fi = ctx.f[:-1]
        mat = mat - 4.0 * (fi[:, None] * green * fi[None, :])
    return 0.5 * (mat + mat.T)


def spectrum_L1(ctx: OneBodyOperatorContext, l: int, n_eigs: int = 4, vectors: bool = False):
    """Lowest ``n_eigs`` eigenvalues (and profiles) of ``L1`` in sector ``l``.

    The sector matrix has dimension ``n - 1``; a dense symmetric solver is
    exact and deterministic at that size.
    """
    if n_eigs < 1:
        raise ValueError("n_eigs must be at least 1")
    mat = L1_matrix(ctx, l)
    return _lowest(ctx, mat, n_eigs, vectors)


def spectrum_h(ctx: OneBodyOperatorContext, l: int, n_eigs: int = 4, vectors: bool = False):
    """Lowest eigenvalues of ``h = -Laplace - W_f - mu/2`` in sector ``l``."""
    mat = _sector_matrix(ctx, l, with_x=False)
    return _lowest(ctx, mat, n_eigs, vectors)


def _lowest(ctx, mat, n_eigs, vectors):
    n_eigs = min(n_eigs, mat.shape[0])
    vals, vecs = eigh(mat, subset_by_index=[0, n_eigs - 1])
    if not vectors:
        return vals
    grid = ctx.grid
    sw = np.sqrt(_FOUR_PI * grid.weights[:-1])
    prof = np.zeros((grid.n, n_eigs))
    prof[:-1] = vecs / sw[:, None]
    return vals, prof
