"""Approximate correctors and the windowed effective tensor."""

from __future__ import annotations

import csv
import json
import os

import numpy as np
import pytest

from aphomlab.apfield import field_from_json, scalar_field_1d
from aphomlab.corrector import (CorrectorPolicy, effective_tensor,
                                energy_identity_residual, export_corrector_set,
                                solve_corrector)
from aphomlab.mesh import window_mean
from tests.oracles import harmonic_mean_quadrature

TAU = 2 * np.pi


def cosine_field():
    return scalar_field_1d(1.0, atoms=[(0.5, TAU, 0.0, 0.0)], mu=0.4)


def test_constant_field_corrector_vanishes():
    f = scalar_field_1d(1.3, atoms=(), mu=0.9)
    cs = solve_corrector(f, S=8.0)
    assert float(np.max(np.abs(cs.chi.values))) <= 1e-9
    eff = effective_tensor(f, cs)
    np.testing.assert_allclose(eff.matrix(), [[1.3]], atol=1e-9)


def test_time_only_field_corrector_vanishes():
    # a(t) = 1 + 0.4 cos(2 pi t) has no spatial oscillation: chi = 0 and the
    # effective coefficient is the time average
    f = scalar_field_1d(1.0, atoms=[(0.4, 0.0, TAU, 0.0)], mu=0.5)
    cs = solve_corrector(f, S=8.0)
    assert float(np.max(np.abs(cs.chi.values))) <= 1e-9
    eff = effective_tensor(f, cs)
    np.testing.assert_allclose(eff.matrix(), [[1.0]], atol=1e-3)


def test_cosine_effective_matches_harmonic_mean():
    f = cosine_field()
    want = harmonic_mean_quadrature(lambda y: 1.0 + 0.5 * np.cos(TAU * y))
    cs = solve_corrector(f, S=8.0, policy=CorrectorPolicy(h=1 / 128))
    eff = effective_tensor(f, cs)
    got = float(eff.matrix()[0, 0])
    assert abs(got - want) / want < 0.05
    assert eff.ellipticity["ok"]
    np.testing.assert_allclose(eff.ellipticity["min_quotient"], got, rtol=1e-12)


def test_corrector_mean_zero_and_window():
    f = cosine_field()
    cs = solve_corrector(f, S=4.0, policy=CorrectorPolicy(h=1 / 64))
    m = window_mean(cs.chi, cs.window)
    assert float(np.max(np.abs(m))) < 1e-10
    # window sits strictly inside the computational box
    assert np.all(cs.window.lo > cs.chi.grid.lo - 1e-12)
    assert np.all(cs.window.hi < cs.chi.grid.hi + 1e-12)


def test_energy_identity_residual_small_and_h_refines():
    f = cosine_field()
    res = []
    for h in (1 / 128, 1 / 256):
        cs = solve_corrector(f, S=8.0, policy=CorrectorPolicy(h=h))
        res.append(energy_identity_residual(f, cs))
    assert res[1] <= 5e-3
    assert res[1] <= 0.75 * res[0]


def test_effective_improves_with_S():
    f = cosine_field()
    want = harmonic_mean_quadrature(lambda y: 1.0 + 0.5 * np.cos(TAU * y))
    errs = []
    for S in (4.0, 8.0, 16.0):
        cs = solve_corrector(f, S=S, policy=CorrectorPolicy(h=1 / 128))
        errs.append(abs(float(effective_tensor(f, cs).matrix()[0, 0]) - want))
    assert errs[2] <= errs[0]


def test_spacetime_field_runs_parabolic_branch():
    f = scalar_field_1d(1.0, atoms=[(0.4, TAU, TAU, 0.0)], mu=0.4)
    cs = solve_corrector(f, S=4.0, policy=CorrectorPolicy(h=1 / 64))
    assert cs.diagnostics["mode"] == "march"
    assert np.isfinite(cs.chi.values).all()
    m = window_mean(cs.chi, cs.window)
    assert float(np.max(np.abs(m))) < 1e-8


def test_export_corrector_layout(tmp_path):
    f = cosine_field()
    cs = solve_corrector(f, S=4.0, policy=CorrectorPolicy(h=1 / 32))
    files = export_corrector_set(cs, str(tmp_path), basename="probe")
    names = sorted(os.path.basename(p) for p in files)
    assert names == ["probe_chi.csv", "probe_diag.json", "probe_grid.json"]
    meta = json.load(open(tmp_path / "probe_grid.json"))
    assert meta["S"] == 4.0
    with open(tmp_path / "probe_chi.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert {"t", "x0", "chi_b0c0", "dchi_a0b0c0"} <= set(rows[0])
    n_nodes = cs.chi.grid.n_space
    assert len(rows) == cs.chi.values.shape[0] * n_nodes


def test_quasiperiodic_sup_scaling_is_tame():
    # shipped two-frequency field: sup|chi_S| stays bounded by a fixed
    # multiple of S * theta(S) across dyadic S (growth-rate sanity check)
    import aphomlab
    from aphomlab.apfield import theta_hat
    path = os.path.join(os.path.dirname(aphomlab.__file__), "fields",
                        "quasiperiodic_1d.json")
    f = field_from_json(path)
    ratios = []
    for S in (4.0, 8.0):
        cs = solve_corrector(f, S=S, policy=CorrectorPolicy(h=1 / 64))
        sup = float(np.max(np.abs(cs.chi.values)))
        ratios.append(sup / (S * theta_hat(f, S, 0.5).value))
    assert max(ratios) / min(ratios) < 3.0
