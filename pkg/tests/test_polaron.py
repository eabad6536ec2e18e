import math

import numpy as np
import pytest

from oracles import fd_polaron_energy
from pekarlab.errors import ConvergenceError
from pekarlab.grid import RadialFunction, build_radial_grid
from pekarlab.polaron import (L1_matrix, apply_h, apply_L1, build_R, hessian1_form, inner, operator_context,
                              polaron_energy, solve_single_polaron, spectrum_h, spectrum_L1)


@pytest.fixture(scope="module")
def ctx(polaron200):
    return operator_context(polaron200)


def test_energy_against_finite_differences(polaron200):
    ref = fd_polaron_energy(4000)
    assert polaron200.e == pytest.approx(ref, rel=1e-6)


def test_energy_bookkeeping(polaron200):
    s = polaron200
    assert s.e0 == pytest.approx(8 * s.e, rel=1e-15)
    assert s.mu == pytest.approx(s.e0 - 4 * s.Dff, rel=1e-14)
    # scaling f -> b^(3/2) f(b x) gives T = D at the minimum
    assert s.T == pytest.approx(s.Dff, rel=1e-8)
    assert s.e0 == pytest.approx(-2 * s.Dff, rel=1e-8)


def test_pekar_constant(polaron200):
    # in the usual units the Pekar energy is -0.108513
    assert 4 * polaron200.e == pytest.approx(-0.108513, abs=2e-6)


def test_minimizer_is_positive_and_normalized(polaron200):
    f = polaron200.f
    assert np.all(f.values[:-1] > 0)
    assert inner(f, f) == pytest.approx(1.0, rel=1e-12)
    assert polaron200.residual <= 1e-9
    g, t, d = polaron_energy(f.grid, f.values)
    assert g == pytest.approx(polaron200.e0, rel=1e-13)


def test_scf_and_flow_agree(grid48, polaron48):
    flow = solve_single_polaron(grid48, method="flow")
    assert flow.e == pytest.approx(polaron48.e, rel=1e-10)
    assert np.max(np.abs(flow.f.values - polaron48.f.values)) < 1e-6


def test_damped_scf_agrees(grid48, polaron48):
    damped = solve_single_polaron(grid48, damping=0.5)
    assert damped.e == pytest.approx(polaron48.e, rel=1e-10)


def test_solver_argument_errors(grid48):
    with pytest.raises(ValueError):
        solve_single_polaron(grid48, damping=1.0)
    with pytest.raises(ValueError):
        solve_single_polaron(grid48, method="newton")
    with pytest.raises(ConvergenceError) as info:
        solve_single_polaron(grid48, max_iter=1, tol=1e-14)
    assert info.value.residual > 1e-14
    assert len(info.value.history) >= 1


def test_f_is_ground_state_of_h(ctx):
    vals, vecs = spectrum_h(ctx, 0, 2, vectors=True)
    assert abs(vals[0]) < 1e-8
    assert vals[1] > 0.05
    v = vecs[:, 0] * np.sign(vecs[0, 0])
    f = ctx.f
    assert abs(inner(v, f, ctx.grid)) / math.sqrt(inner(v, v, ctx.grid)) == pytest.approx(1.0, abs=1e-10)
    assert np.linalg.norm(apply_h(ctx, f).values[:-20]) < 1e-6


def test_L1_on_dilation_mode(ctx):
    # differentiating the scaled Euler-Lagrange equation gives L1 R = mu f
    res = apply_L1(ctx, build_R(ctx)).values - ctx.solution.mu * ctx.f
    assert math.sqrt(inner(res, res, ctx.grid)) < 1e-6


def test_L1_spectrum_structure(ctx):
    l0 = spectrum_L1(ctx, 0, 2)
    assert l0[0] < 0 < l0[1]
    assert l0[0] == pytest.approx(-0.911, abs=2e-3)
    l1, v1 = spectrum_L1(ctx, 1, 2, vectors=True)
    assert abs(l1[0]) < 1e-7
    assert l1[1] == pytest.approx(0.2171, abs=5e-4)
    # the zero mode is the translation f'
    fp = ctx.fprime.values
    cos = inner(v1[:, 0], fp, ctx.grid) / math.sqrt(inner(v1[:, 0], v1[:, 0], ctx.grid) * inner(fp, fp, ctx.grid))
    assert abs(cos) == pytest.approx(1.0, abs=1e-6)
    for l in range(2, 6):
        assert spectrum_L1(ctx, l, 1)[0] > 0.15


def test_L1_matrix_matches_operator(ctx):
    grid = ctx.grid
    sw = np.sqrt(4 * math.pi * grid.weights[:-1])
    rng = np.random.default_rng(0)
    for l in (0, 1, 3):
        mat = L1_matrix(ctx, l)
        g = np.append(np.exp(-grid.nodes[:-1] / 3) * grid.nodes[:-1] ** l * rng.uniform(0.9, 1.1), 0.0)
        y = sw * g[:-1]
        assert y @ mat @ y == pytest.approx(inner(g, apply_L1(ctx, g, l).values, grid), rel=1e-8)


def test_hessian1_is_second_order_coefficient(ctx):
    # F[psi] = T - 2D evaluated along the normalized ray (f + eps j)/||f + eps j||
    grid = ctx.grid
    f = ctx.f
    j = np.exp(-grid.nodes / 2) * np.cos(grid.nodes / 3)
    j[-1] = 0.0

    def F(eps):
        psi = f + eps * j
        psi = psi / math.sqrt(inner(psi, psi, grid))
        return 0.5 * polaron_energy(grid, psi)[0]

    coeffs = []
    for eps in (2e-3, 1e-3):
        coeffs.append((F(eps) + F(-eps) - 2 * F(0.0)) / (2 * eps**2))
    rich = (4 * coeffs[1] - coeffs[0]) / 3
    assert hessian1_form(ctx, j) == pytest.approx(rich, rel=1e-6)


def test_profiles_on_other_grids_are_rejected(ctx):
    other = build_radial_grid(20)
    with pytest.raises(ValueError):
        apply_h(ctx, RadialFunction(other, np.ones(20)))
    with pytest.raises(ValueError):
        apply_h(ctx, np.ones(7))


def test_json_dict(polaron48):
    d = polaron48.to_json_dict()
    assert set(d) >= {"grid", "f", "e0", "e", "mu", "T", "Dff", "residual"}
    assert len(d["f"]) == len(d["grid"]["nodes"]) == 48
