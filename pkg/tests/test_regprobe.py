"""Regularity probes: Holder quotients, Lipschitz profiles, boundary graphs."""

from __future__ import annotations

import numpy as np
import pytest

from aphomlab.apfield import scalar_field_1d
from aphomlab.errors import ConfigInvalid
from aphomlab.expressions import SineProduct
from aphomlab.ivpsolve import ProblemSpec
from aphomlab.mesh import NodeField, build_grid
from aphomlab.regprobe import (GraphDomain, LipschitzProfile,
                               boundary_lipschitz_profile, campanato_check,
                               holder_seminorm, interior_lipschitz_profile)

TAU = 2 * np.pi


def static_field(x_fn, h=1 / 256):
    g = build_grid(lo=[0.0], hi=[1.0], h=h, t0=0.0, t1=0.0, dt=1.0)
    return NodeField(g, x_fn(g.coords(0))[None, :], times=np.array([0.0]))


def test_constant_has_zero_seminorm():
    nf = static_field(lambda x: np.full_like(x, 1.7))
    rep = holder_seminorm(nf, alpha=0.5)
    assert rep.seminorm == 0.0


def test_sqrt_profile_saturates_half_seminorm():
    # |sqrt(x) - sqrt(y)| / |x-y|^(1/2) has sup exactly 1 (attained as y -> x
    # near 0); on a grid the near-diagonal pairs at the origin dominate
    nf = static_field(lambda x: np.sqrt(x))
    rep = holder_seminorm(nf, alpha=0.5)
    assert 0.95 <= rep.seminorm <= 1.0 + 1e-9


def test_alpha_out_of_range_rejected():
    nf = static_field(lambda x: x)
    with pytest.raises(ConfigInvalid):
        holder_seminorm(nf, alpha=1.0)


def test_linear_profile_seminorm_scales_with_span():
    # for affine u the quotient |x-y|^{1-alpha} is maximized at the largest
    # pair separation: seminorm = slope * span^(1-alpha)
    nf = static_field(lambda x: 3.0 * x, h=1 / 128)
    rep = holder_seminorm(nf, alpha=0.5, region=([0.0], [0.25]))
    np.testing.assert_allclose(rep.seminorm, 3.0 * 0.25 ** 0.5, rtol=1e-9)


def test_holder_ratio_with_forcing():
    nf = static_field(lambda x: np.sqrt(np.abs(x - 0.5)))
    rep = holder_seminorm(nf, alpha=0.5, region=([0.25], [0.75]),
                          F=SineProduct(amp=1.0, k=[np.pi]))
    assert np.isfinite(rep.rhs) and rep.rhs > 0
    np.testing.assert_allclose(rep.ratio, rep.seminorm / rep.rhs, rtol=1e-12)


def test_graph_domain_verify_and_slab():
    gd = GraphDomain(M=1.0, alpha=0.5, x0=0.0, side=+1)
    assert gd.verify()["ok"]
    lo, hi = gd.interior_interval(0.25, 0.0, 1.0)
    assert lo == 0.0 and 0 < hi <= 0.25 + 1e-12


def test_interior_profile_shape_and_csv(tmp_path):
    f = scalar_field_1d(1.0, atoms=[(0.5, TAU, 0.0, 0.0)], mu=0.4)
    prob = ProblemSpec(lo=[0.0], hi=[1.0], T=0.25,
                       F=SineProduct(amp=1.0, k=[np.pi]))
    prof = interior_lipschitz_profile(f, 1 / 16, prob, R=0.5)
    assert prof.max_ratio > 0 and np.isfinite(prof.max_ratio)
    rs = [row["r"] for row in prof.rows]
    assert rs == sorted(rs)
    assert min(rs) >= 1 / 16 - 1e-12  # profile floor at scale eps
    # sub-eps rows exist and reach below eps
    assert prof.sub_eps_rows and min(r["r"] for r in prof.sub_eps_rows) < 1 / 16
    path = str(tmp_path / "prof.csv")
    prof.to_csv(path)
    header = open(path).readline().strip()
    assert header == ",".join(LipschitzProfile.CSV_COLUMNS)


def test_campanato_on_boundary_profile():
    # affine excess is traced along the boundary chart; the one-step
    # improvement inequality must close with a finite fitted constant
    f = scalar_field_1d(1.0, atoms=[(0.5, TAU, 0.0, 0.0)], mu=0.4)
    prob = ProblemSpec(lo=[0.0], hi=[1.0], T=0.25,
                       F=SineProduct(amp=1.0, k=[np.pi]))
    gd = GraphDomain(M=1.0, alpha=0.5, x0=0.0, side=+1)
    prof = boundary_lipschitz_profile(f, 1 / 64, gd, prob, R=0.25)
    rep = campanato_check(prof, theta=0.25, delta=1 / 64)
    assert rep["rows"], "no radii admitted by the profile trace"
    assert np.isfinite(rep["C"])
    assert all(r["holds_with_C"] for r in rep["rows"])
