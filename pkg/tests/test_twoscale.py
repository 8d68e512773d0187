"""Smoothed two-scale expansion, rate tables, and the modulus estimator."""

from __future__ import annotations

import numpy as np
import pytest

from aphomlab.apfield import scalar_field_1d
from aphomlab.corrector import (assemble_bS, effective_tensor, solve_corrector)
from aphomlab.errors import ScaleMismatch
from aphomlab.expressions import SineProduct
from aphomlab.fluxcor import build_flux_corrector, solve_flux_potential
from aphomlab.ivpsolve import ProblemSpec, solve_effective, solve_eps
from aphomlab.twoscale import (RateReport, assemble_discrepancy, dini_integral,
                               modulus_estimate)

TAU = 2 * np.pi


def cosine_field():
    return scalar_field_1d(1.0, atoms=[(0.5, TAU, 0.0, 0.0)], mu=0.4)


@pytest.fixture(scope="module")
def discrepancy_pipeline():
    eps, T = 1 / 16, 0.25
    f = cosine_field()
    prob = ProblemSpec(lo=[0.0], hi=[1.0], T=T,
                       F=SineProduct(amp=1.0, k=[np.pi]), eps=eps)
    ue = solve_eps(f, prob, h=eps / 16, dt=eps ** 2 / 16, store_stride=8)
    cs = solve_corrector(f, 1 / eps)
    eff = effective_tensor(f, cs)
    u0 = solve_effective(eff, prob, h=1 / 256, dt=T / 4096)
    b = assemble_bS(f, cs, eff)
    fc = build_flux_corrector(solve_flux_potential(b, 1 / eps))
    return f, ue, u0, cs, fc


def test_scale_mismatch_guard(discrepancy_pipeline):
    f, ue, u0, cs, fc = discrepancy_pipeline
    wrong = solve_corrector(f, 4.0)
    with pytest.raises(ScaleMismatch):
        assemble_discrepancy(ue, u0, wrong, fc, eps=1 / 16, delta=2 / 16)


def test_discrepancy_shrinks_the_plain_error(discrepancy_pipeline):
    eps = 1 / 16
    f, ue, u0, cs, fc = discrepancy_pipeline
    dw = assemble_discrepancy(ue, u0, cs, fc, eps, delta=2 * eps)
    n = dw.norms
    assert n["corr_l2"] > 0.0
    assert n["w_l2"] < 0.9 * n["l2_err"]
    # regression anchors (backward-Euler march is deterministic)
    np.testing.assert_allclose(n["l2_err"], 3.18755686748e-4, rtol=1e-6)
    np.testing.assert_allclose(n["w_l2"], 2.66201052458e-4, rtol=1e-6)
    # stored terms reconstruct w exactly
    ue_vals = ue.u.values[..., 0]
    w = ue_vals - dw.terms["u0"] - dw.terms["chi_k"] - dw.terms["phi_dk"]
    np.testing.assert_allclose(dw.w.values[..., 0], w, atol=1e-14)


def test_rate_report_csv_roundtrip(tmp_path):
    rows = [{"eps": 0.25, "delta": 0.5, "l2_err": 1e-3, "w_l2": 5e-4,
             "w_grad_l2": 1e-2, "eta_hat": 0.5, "ratio": 2e-3},
            {"eps": 0.125, "delta": 0.25, "l2_err": 5e-4, "w_l2": 2e-4,
             "w_grad_l2": 9e-3, "eta_hat": 0.4, "ratio": 1.25e-3}]
    rep = RateReport(rows=rows, slope=1.0, sigma=0.5, meta={})
    path = rep.to_csv(str(tmp_path / "rate.csv"))
    lines = open(path).read().strip().split("\n")
    assert lines[0] == "eps,delta,l2_err,w_l2,w_grad_l2,eta_hat,ratio"
    assert len(lines) == 3
    assert float(lines[1].split(",")[0]) == 0.25


def test_modulus_estimate_regression():
    f = cosine_field()
    tg = np.geomspace(1 / 16, 1 / 4, 4)
    est = modulus_estimate(f, tg, sigma=0.5, S_max=16.0, gammas=(1.0, 2.0))
    assert est.is_nondecreasing()
    assert sorted(est.components) == ["gap", "gap_tail", "linear", "theta_pow"]
    np.testing.assert_allclose(
        est.eta, [3.0655094372, 3.14886122054, 3.26174707716, 3.3858911549],
        rtol=1e-6)
    for gamma in (1.0, 2.0):
        value, finite = est.dini[gamma]
        assert finite and np.isfinite(value)


def test_dini_integral_analytic():
    t = np.geomspace(1e-3, 1.0, 400)
    value, finite = dini_integral(t, t, gamma=1.0)
    assert finite
    np.testing.assert_allclose(value, 1.0, atol=2e-3)
    # constant modulus: the 1/t weight diverges at the origin
    _, finite_const = dini_integral(t, np.ones_like(t), gamma=1.0)
    assert not finite_const
