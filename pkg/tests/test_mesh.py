"""Grids, window averages, difference operators, and the implicit march."""

from __future__ import annotations

import numpy as np
import pytest

from aphomlab.apfield import scalar_field_1d
from aphomlab.expressions import SineProduct
from aphomlab.errors import NonIntegerDivision, UnresolvedOscillation
from aphomlab.mesh import (NodeField, Window, build_grid, grad_values,
                           load_nodefield, manufactured_convergence,
                           resolution_check, save_nodefield, time_march,
                           window_l2_mean, window_mask, window_mean)
from tests.oracles import separated_heat_solution

TAU = 2 * np.pi


def small_grid(bc="dirichlet", h=0.125, dt=0.01, t1=0.05):
    return build_grid(lo=[0.0], hi=[1.0], h=h, t0=0.0, t1=t1, dt=dt, bc=bc)


def test_grid_node_counts():
    gd = small_grid("dirichlet")
    gp = small_grid("periodic")
    assert gd.spatial_shape == (9,)
    assert gp.spatial_shape == (8,)
    assert gd.n_steps == 5
    np.testing.assert_allclose(gd.coords(0), np.arange(9) / 8)


def test_grid_rejects_ragged_box():
    with pytest.raises(NonIntegerDivision):
        build_grid(lo=[0.0], hi=[1.0], h=0.3, t0=0.0, t1=0.1, dt=0.05)
    with pytest.raises(NonIntegerDivision):
        build_grid(lo=[0.0], hi=[1.0], h=0.25, t0=0.0, t1=0.1, dt=0.03)


def test_boundary_mask():
    gd = small_grid("dirichlet")
    mask = gd.boundary_mask()
    assert mask[0] and mask[-1] and not mask[1:-1].any()
    assert not small_grid("periodic").boundary_mask().any()


def test_window_mean_constant_exact():
    gd = small_grid()
    nf = NodeField(gd, np.full((1, 9), 3.25), times=np.array([0.0]))
    np.testing.assert_allclose(window_mean(nf), 3.25, atol=1e-14)
    np.testing.assert_allclose(window_l2_mean(nf), 3.25, atol=1e-13)


def test_window_mean_kills_resolved_oscillation():
    # mean of cos(2 pi x) over the full period is zero up to quadrature error
    g = build_grid(lo=[0.0], hi=[1.0], h=1 / 256, t0=0.0, t1=0.0, dt=1.0,
                   bc="periodic")
    x = g.coords(0)
    nf = NodeField(g, np.cos(TAU * x)[None, :], times=np.array([0.0]))
    assert abs(float(window_mean(nf))) < 1e-12


def test_window_mask_subbox():
    g = build_grid(lo=[0.0], hi=[1.0], h=0.125, t0=0.0, t1=0.0, dt=1.0)
    mask = window_mask(g, Window(lo=np.array([0.25]), hi=np.array([0.75])))
    np.testing.assert_array_equal(np.nonzero(mask)[0], [2, 3, 4, 5, 6])


def test_grad_values_linear_exact():
    g = build_grid(lo=[0.0], hi=[1.0], h=0.125, t0=0.0, t1=0.0, dt=1.0)
    u = 2.0 * g.coords(0) + 1.0
    got = grad_values(g, u, 0)
    np.testing.assert_allclose(got, 2.0, atol=1e-12)


def test_march_matches_separated_solution():
    # a(x) = a0 constant: u(x,t) = sin(pi x)(1 - exp(-a0 pi^2 t))/(a0 pi^2)
    # under F = sin(pi x), u(0) = 0; backward Euler should hit it at O(dt)
    a0 = 0.7
    f = scalar_field_1d(a0, atoms=(), mu=0.5)
    g = build_grid(lo=[0.0], hi=[1.0], h=1 / 128, t0=0.0, t1=0.125, dt=1 / 2048)
    x = g.coords(0)
    nf = time_march(f, g, rhs=lambda axes, t: np.sin(np.pi * axes[0]))
    want = separated_heat_solution(a0, x, 0.125, k=np.pi)
    err = np.max(np.abs(nf.last()[..., 0] - want))
    assert err < 5e-4


def test_march_max_principle():
    f = scalar_field_1d(1.0, atoms=[(0.5, TAU, 0.0, 0.0)], mu=0.4)
    g = build_grid(lo=[0.0], hi=[1.0], h=1 / 64, t0=0.0, t1=0.125, dt=1 / 256)
    x = g.coords(0)
    bump = np.exp(-80 * (x - 0.5) ** 2)
    bump[0] = bump[-1] = 0.0
    nf = time_march(f, g, initial=bump[:, None])
    assert nf.values.min() >= -1e-12
    assert nf.values.max() <= bump.max() + 1e-12


def test_manufactured_orders():
    f = scalar_field_1d(1.0, atoms=[(0.3, TAU, 0.0, 0.0)], mu=0.5)
    exact = SineProduct(amp=1.0, k=[np.pi], decay=1.0)
    p_space, p_time = manufactured_convergence(f, exact, T=0.1, levels=3)
    assert p_space > 1.8
    assert p_time > 0.85


def test_resolution_check():
    resolution_check(eps=0.25, h=0.25 / 16, dt=0.25 ** 2 / 16)
    with pytest.raises(UnresolvedOscillation):
        resolution_check(eps=0.25, h=0.25 / 8, dt=0.25 ** 2 / 16)
    with pytest.raises(UnresolvedOscillation):
        resolution_check(eps=0.25, h=0.25 / 16, dt=0.25 ** 2 / 8)


def test_nodefield_save_load_roundtrip(tmp_path):
    g = small_grid()
    vals = np.random.default_rng(3).standard_normal((g.n_steps + 1, 9, 1))
    nf = NodeField(g, vals)
    path = str(tmp_path / "snap.npz")
    save_nodefield(nf, path)
    back = load_nodefield(path)
    np.testing.assert_array_equal(back.values, nf.values)
    np.testing.assert_array_equal(back.times, nf.times)
    assert back.grid.bc == g.bc
    assert back.grid.spatial_shape == g.spatial_shape
