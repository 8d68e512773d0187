"""Flux corrector: divergence-free remainder potential and its decomposition."""

from __future__ import annotations

import numpy as np

from aphomlab.apfield import scalar_field_1d
from aphomlab.corrector import (CorrectorPolicy, assemble_bS, effective_tensor,
                                solve_corrector)
from aphomlab.fluxcor import (build_flux_corrector, decomposition_residual,
                              solve_flux_potential)

TAU = 2 * np.pi


def pipeline(h, S=8.0, atoms=((0.5, TAU, 0.0, 0.0),)):
    f = scalar_field_1d(1.0, atoms=list(atoms), mu=0.4)
    cs = solve_corrector(f, S=S, policy=CorrectorPolicy(h=h))
    eff = effective_tensor(f, cs)
    b = assemble_bS(f, cs, eff)
    fp = solve_flux_potential(b, S)
    fcr = build_flux_corrector(fp)
    return f, b, fp, fcr


def test_phi_skew_symmetry_exact():
    _, _, _, fcr = pipeline(h=1 / 128)
    assert fcr.skew_defect() <= 1e-12


def test_remainder_mean_is_small():
    _, b, fp, _ = pipeline(h=1 / 128)
    assert fp.window_mean_dev <= 1e-3


def test_decomposition_residual_small_and_first_order():
    res = []
    for h in (1 / 128, 1 / 256):
        _, b, fp, fcr = pipeline(h=h)
        res.append(decomposition_residual(b, fp, fcr)["rel_l2"])
    assert res[1] <= 5e-2
    # first-order in h: halving h should shrink the residual noticeably
    assert res[0] / res[1] >= 1.6


def test_constant_field_gives_zero_remainder():
    f = scalar_field_1d(1.0, atoms=(), mu=0.9)
    cs = solve_corrector(f, S=8.0)
    eff = effective_tensor(f, cs)
    b = assemble_bS(f, cs, eff)
    assert float(np.max(np.abs(b.values.values))) <= 1e-9


def test_finite_and_windowed():
    _, b, fp, fcr = pipeline(h=1 / 128)
    assert np.isfinite(fp.values.values).all()
    assert np.isfinite(fcr.phi.values).all()
    assert np.isfinite(fcr.F.values).all()
    assert fcr.sup_phi() > 0.0
