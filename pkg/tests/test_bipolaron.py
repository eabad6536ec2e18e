import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pekarlab.bipolaron import (RstFunction, bisect_Uc_symm, density_rst, el_residual, energy_rst, minimize_rst,
                                newton_bound_excess, product_state, random_rst, rearrange_t, sqrt_density_kinetic,
                                sweep_U, symmetrize, two_field_energy, zhislin_sweep, zhislin_trial)
from pekarlab.coulomb import newton_values
from pekarlab.errors import ConvergenceError
from pekarlab.grid import build_radial_grid, build_t_quadrature


def test_zero_coupling_is_two_polarons_in_one_field(bip48, polaron48):
    sol = bip48[0.0]
    assert sol.energy == pytest.approx(8 * polaron48.e, rel=1e-10)


def test_product_state_energy(grid48, tq12, polaron48):
    u = product_state(polaron48.f.values, grid48, tq12)
    assert u.norm() == pytest.approx(1.0, rel=1e-12)
    assert energy_rst(u, 0.0)[0] == pytest.approx(polaron48.e0, rel=1e-12)


@pytest.mark.parametrize("U", [0.0, 0.5, 1.0])
def test_minimizer_bookkeeping(bip48, U):
    sol = bip48[U]
    assert sol.u.norm() == pytest.approx(1.0, rel=1e-10)
    assert sol.u.is_symmetric()
    assert sol.residual <= 1e-9
    assert el_residual(sol.u, U) == pytest.approx(sol.residual, rel=1e-6, abs=1e-12)
    p = sol.parts
    assert sol.energy == pytest.approx(p.T + p.repel - p.attract, rel=1e-13)
    assert sol.mu_n == pytest.approx(sol.energy - p.attract, rel=1e-13)
    # positive up to the eigensolver tolerance
    assert np.min(sol.u.values) >= -1e-7 * np.max(sol.u.values)


def test_energy_increasing_and_concave_in_U(bip48):
    e0, e5, e1 = (bip48[U].energy for U in (0.0, 0.5, 1.0))
    assert e0 < e5 < e1
    assert e5 >= 0.5 * (e0 + e1)


def test_slope_is_the_repulsion(bip48):
    # E(U) is a minimum of affine functions, so dE/dU = R[u_U] lies between the chords
    e0, e5, e1 = (bip48[U].energy for U in (0.0, 0.5, 1.0))
    slope = bip48[0.5].parts.repel / 0.5
    assert (e1 - e5) / 0.5 <= slope <= (e5 - e0) / 0.5


@pytest.mark.parametrize("U", [0.0, 0.5, 1.0])
def test_minimizer_fixed_by_rearrangement_and_symmetrization(bip48, U):
    sol = bip48[U]
    for op in (rearrange_t, symmetrize):
        w = op(sol.u)
        assert np.max(np.abs(w.values - sol.u.values)) < 1e-6 * np.max(sol.u.values)
        assert energy_rst(w, U)[0] == pytest.approx(sol.energy, abs=1e-9)


@pytest.mark.parametrize("U", [0.0, 0.5, 1.0])
def test_minimizer_newton_and_density_bounds(bip48, U):
    sol = bip48[U]
    assert newton_bound_excess(sol.u) <= 1e-10
    assert sqrt_density_kinetic(sol.u) <= sol.parts.T * (1 + 1e-10)


def test_random_states_lie_above_minimizer(bip48, grid48, tq12):
    rng = np.random.default_rng(1)
    for _ in range(5):
        u = random_rst(grid48, tq12, rng)
        for U in (0.0, 0.5, 1.0):
            assert energy_rst(u, U)[0] > bip48[U].energy


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), U=st.sampled_from([0.0, 0.5, 1.0]), scale=st.floats(0.3, 3.0))
def test_two_field_energy_dominates(grid48, tq12, seed, U, scale):
    u = random_rst(grid48, tq12, np.random.default_rng(seed))
    exact = energy_rst(u, U)[0]
    rho = density_rst(u).values
    phi = newton_values(grid48, rho)
    assert two_field_energy(u, phi, U) == pytest.approx(exact, rel=1e-12, abs=1e-14)
    other = phi * scale + 0.05 * np.exp(-grid48.nodes) * (seed % 3)
    assert two_field_energy(u, other, U) >= exact - 1e-13


def test_density_requires_symmetry(grid48, tq12):
    u = random_rst(grid48, tq12, np.random.default_rng(3), symmetric=False)
    with pytest.raises(ValueError):
        density_rst(u)
    s = symmetrize(u)
    assert s.is_symmetric()
    assert s.norm() == pytest.approx(u.norm(), rel=1e-12)


def test_rearrangement_preserves_slice_norms(grid48, tq12):
    u = random_rst(grid48, tq12, np.random.default_rng(4))
    w = rearrange_t(u)
    v = tq12.weights
    before = np.einsum("ijk,k->ij", u.values**2, v)
    after = np.einsum("ijk,k->ij", w.values**2, v)
    assert np.allclose(before, after, rtol=1e-12, atol=1e-300)
    # nonincreasing in t means values nonincreasing towards t = +1 (stored order of increasing t reversed)
    order = np.argsort(tq12.nodes)
    assert np.all(np.diff(w.values[..., order], axis=-1) <= 1e-14)
    assert np.allclose(rearrange_t(w).values, w.values, rtol=1e-12)


def test_rst_function_validation(grid48, tq12):
    with pytest.raises(ValueError):
        RstFunction(grid48, tq12, np.zeros((3, 3, 3)))
    bad = np.zeros((48, 48, 12))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        RstFunction(grid48, tq12, bad)
    with pytest.raises(ValueError):
        energy_rst(product_state(np.ones(48), grid48, tq12), -0.1)


def test_nonconvergence_reports_history(grid48, tq12, polaron48):
    with pytest.raises(ConvergenceError) as info:
        minimize_rst(0.5, grid48, tq12, tol=1e-13, max_iter=2, polaron=polaron48)
    assert len(info.value.history) == 3
    assert all(b <= a + 1e-14 for a, b in zip(info.value.history, info.value.history[1:]))


def test_sweep_rows_and_failures(grid48, tq12, polaron48):
    rows = sweep_U([0.0, 0.25], grid48, tq12, tol=1e-8, polaron=polaron48)
    assert [r.status for r in rows] == ["ok", "ok"]
    assert rows[0].energy < rows[1].energy
    assert rows[1].gap_to_e == pytest.approx(rows[1].energy - polaron48.e)
    assert rows[1].gap_to_2e == pytest.approx(rows[1].energy - 2 * polaron48.e)
    seen = []
    failed = sweep_U([0.5], grid48, tq12, tol=1e-13, max_iter=1, polaron=polaron48, on_row=seen.append)
    assert failed[0].status == "failed" and seen == failed
    with pytest.raises(ValueError):
        sweep_U([0.5, 0.25], grid48, tq12)


def test_bisection_needs_a_bracket():
    grid = build_radial_grid(24, 30.0)
    tq = build_t_quadrature(6)
    with pytest.raises(ValueError):
        bisect_Uc_symm(0.0, 0.1, 0.05, grid, tq)
    with pytest.raises(ValueError):
        bisect_Uc_symm(1.0, 0.5, 0.05, grid, tq)


def test_zhislin_trial_state(polaron200):
    u, energy = zhislin_trial(polaron200, 2.0, 0.5)
    assert u.norm() == pytest.approx(1.0, rel=1e-12)
    assert u.is_symmetric()
    assert energy == pytest.approx(energy_rst(u, 0.5)[0], rel=1e-14)
    with pytest.raises(ValueError):
        zhislin_trial(polaron200, 2.0, 0.5, grid=build_radial_grid(100, 20.0))
    with pytest.raises(ValueError):
        zhislin_trial(polaron200, 0.0, 0.5)


def test_zhislin_excess_shrinks_with_radius(polaron200):
    rows = zhislin_sweep(polaron200, 0.5, [1.0, 2.0, 4.0], n=200)
    exc = [r.excess for r in rows]
    assert exc[0] > exc[1] > exc[2] > 0
    for r in rows:
        assert r.leading == pytest.approx(-0.5 / (11 * r.R_shell))
        assert r.correction == pytest.approx(r.excess - r.leading)
        assert r.below_e == (r.energy < r.e_single)
        assert math.isfinite(r.excess_times_11R)
