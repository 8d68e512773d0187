"""Oscillatory and effective initial-value solves, and the pole probe."""

from __future__ import annotations

import numpy as np
import pytest

from aphomlab.apfield import scalar_field_1d
from aphomlab.errors import UnresolvedOscillation
from aphomlab.expressions import SineProduct
from aphomlab.ivpsolve import (ProblemSpec, fundamental_probe,
                               max_principle_check, solve_effective, solve_eps)
from tests.oracles import (crank_nicolson_reference, harmonic_mean_quadrature,
                           separated_heat_solution)

TAU = 2 * np.pi


def sine_problem(T=0.25, eps=None):
    return ProblemSpec(lo=[0.0], hi=[1.0], T=T,
                       F=SineProduct(amp=1.0, k=[np.pi]), eps=eps)


def test_effective_matches_separated_solution():
    a0 = 0.8
    prob = sine_problem(T=0.25)
    sol = solve_effective(a0, prob, h=1 / 256, dt=0.25 / 4096)
    x = sol.grid.coords(0)
    want = separated_heat_solution(a0, x, 0.25, k=np.pi)
    assert float(np.max(np.abs(sol.u.last()[..., 0] - want))) < 2e-4


def test_solve_eps_requires_eps():
    f = scalar_field_1d(1.0, atoms=[(0.5, TAU, 0.0, 0.0)], mu=0.4)
    with pytest.raises(Exception) as exc_info:
        solve_eps(f, sine_problem(eps=None))
    assert "eps" in str(exc_info.value)


def test_solve_eps_rejects_coarse_grid():
    f = scalar_field_1d(1.0, atoms=[(0.5, TAU, 0.0, 0.0)], mu=0.4)
    prob = sine_problem(eps=1 / 8)
    with pytest.raises(UnresolvedOscillation):
        solve_eps(f, prob, h=1 / 32, dt=1 / 1024)  # h = eps/4 > eps/16


def test_solve_eps_against_dense_reference():
    # eps-oscillatory coefficient; independent Crank-Nicolson reference on a
    # finer mesh pins the trajectory
    eps = 1 / 8
    f = scalar_field_1d(1.0, atoms=[(0.5, TAU, 0.0, 0.0)], mu=0.4)
    prob = sine_problem(T=0.125, eps=eps)
    sol = solve_eps(f, prob, h=eps / 32, dt=eps ** 2 / 64)
    a_of_x = lambda x: 1.0 + 0.5 * np.cos(TAU * x / eps)
    xr, want = crank_nicolson_reference(
        a_of_x, h=eps / 64, dt=eps ** 2 / 256, T=0.125,
        forcing=lambda x, t: np.sin(np.pi * x))
    got = np.interp(xr, sol.grid.coords(0), sol.u.last()[..., 0])
    assert float(np.max(np.abs(got - want))) < 2e-3


def test_homogenization_limit_toward_harmonic_mean():
    # as eps -> 0 the oscillatory solution approaches the constant-coefficient
    # solution with the harmonic mean; errors must shrink
    f = scalar_field_1d(1.0, atoms=[(0.5, TAU, 0.0, 0.0)], mu=0.4)
    a_bar = harmonic_mean_quadrature(lambda y: 1.0 + 0.5 * np.cos(TAU * y))
    prob0 = sine_problem(T=0.125)
    ref = solve_effective(a_bar, prob0, h=1 / 512, dt=0.125 / 8192)
    xr = ref.grid.coords(0)
    uref = ref.u.last()[..., 0]
    errs = []
    for eps in (1 / 4, 1 / 16):
        prob = sine_problem(T=0.125, eps=eps)
        sol = solve_eps(f, prob, h=eps / 32, dt=eps ** 2 / 32)
        ue = np.interp(xr, sol.grid.coords(0), sol.u.last()[..., 0])
        errs.append(float(np.sqrt(np.mean((ue - uref) ** 2))))
    assert errs[1] < 0.5 * errs[0]


def test_max_principle_check_passes():
    f = scalar_field_1d(1.0, atoms=[(0.5, TAU, 0.0, 0.0)], mu=0.4)
    prob = ProblemSpec(lo=[0.0], hi=[1.0], T=0.125, F=None,
                       h0=SineProduct(amp=1.0, k=[np.pi]), eps=1 / 8)
    sol = solve_eps(f, prob, h=1 / 256, dt=1 / 4096)
    assert max_principle_check(sol, prob)["violation"] <= 1e-10


def test_fundamental_probe_recovers_heat_kernel():
    # A = 1: Gamma is the heat kernel, so the Gaussian fit must give
    # kappa = 1/4 and conserve mass
    f = scalar_field_1d(1.0, atoms=(), mu=0.9)
    rep = fundamental_probe(f, eps=1.0, pole=(0.0, 0.0), horizon=0.02)
    assert abs(rep.kappa - 0.25) <= 0.025
    assert rep.mass_err <= 1e-6


def test_fundamental_probe_oscillatory_stable():
    f = scalar_field_1d(1.0, atoms=[(0.5, TAU, 0.0, 0.0)], mu=0.4)
    reps = [fundamental_probe(f, eps=e, pole=(0.0, 0.0), horizon=0.02)
            for e in (1 / 16, 1 / 32)]
    kappas = [r.kappa for r in reps]
    assert all(np.isfinite(kappas))
    assert max(kappas) / min(kappas) <= 2.0
    assert all(r.mass_err <= 1e-6 for r in reps)


def test_problem_spec_json_roundtrip():
    obj = {"domain": {"type": "box", "params": {"lo": [0.0], "hi": [1.0]}},
           "T": 0.25,
           "F": {"kind": "sine-product", "amp": 1.0, "k": [3.141592653589793]},
           "g": 0.0, "h": 0.0, "eps": 0.125}
    prob = ProblemSpec.from_json(obj)
    assert prob.T == 0.25 and prob.eps == 0.125
    g = prob.grid(h=1 / 64, dt=1 / 512)
    assert g.spatial_shape == (65,)
