"""Initial-Dirichlet solves at the oscillatory and effective scales, plus
fundamental-solution probes.

The oscillatory problem marches the coefficient field sampled at
(x/eps, t/eps^2); the effective problem reuses the same stepper with a
constant tensor on a coarse grid and hands back spline interpolants so
downstream consumers can evaluate the solution and its derivatives
anywhere.  The fundamental probe starts from a nearest-node discrete
delta and least-squares fits the Gaussian envelope exponent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import mesh
from .apfield import CoefficientTensorField, ScaledField
from .errors import ConfigInvalid, PoleTooCloseToBoundary, UnresolvedOscillation
from .expressions import Expression, expression_from_json
from .mesh import NodeField, SpaceTimeGrid, grad_values, resolution_check, time_march

__all__ = [
    "ProblemSpec", "SolutionField", "solve_eps", "solve_effective",
    "fundamental_probe", "adjoint_symmetry_check", "max_principle_check",
]


@dataclass
class ProblemSpec:
    """Initial-Dirichlet problem data on a box (or interval) domain."""

    lo: np.ndarray
    hi: np.ndarray
    T: float
    F: object = None          # Expression, callable(axes, t), or None
    g: object = 0.0           # lateral Dirichlet data: Expression or scalar
    h0: object = 0.0          # initial data: Expression or scalar
    eps: float = None
    bc: str = "dirichlet"

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if self.lo.shape != self.hi.shape or np.any(self.hi <= self.lo):
            raise ConfigInvalid("domain must satisfy lo < hi componentwise")
        if self.T <= 0:
            raise ConfigInvalid("T must be positive")

    @property
    def d(self):
        return self.lo.size

    @classmethod
    def from_json(cls, obj):
        dom = obj.get("domain")
        if not isinstance(dom, dict) or "type" not in dom:
            raise ConfigInvalid("problem spec needs domain:{type, params}")
        params = dom.get("params", {})
        if dom["type"] in ("interval", "box"):
            lo, hi = params.get("lo", 0.0), params.get("hi", 1.0)
            bc = params.get("bc", "dirichlet")
        elif dom["type"] == "torus":
            lo, hi = params.get("lo", 0.0), params.get("hi", 1.0)
            bc = "periodic"
        else:
            raise ConfigInvalid(f"unknown domain type {dom['type']!r}")
        d = len(np.atleast_1d(lo))

        def expr(key, default):
            v = obj.get(key, default)
            if v is None:
                return None
            if isinstance(v, (int, float)):
                return float(v)
            return expression_from_json(v, d=d)

        return cls(lo=lo, hi=hi, T=float(obj["T"]), F=expr("F", None),
                   g=expr("g", 0.0), h0=expr("h", 0.0),
                   eps=float(obj["eps"]) if obj.get("eps") is not None else None,
                   bc=bc)

    def grid(self, h, dt, m=1):
        return SpaceTimeGrid(lo=self.lo, hi=self.hi, h=h, t0=0.0, t1=self.T,
                             dt=dt, bc=self.bc, m=m)


def _as_callable(obj, grid):
    """Expression/scalar -> callable(axes, t) -> spatial array."""
    if obj is None:
        return None
    if isinstance(obj, Expression):
        def fn(axes, t):
            mgrids = np.meshgrid(*axes, indexing="ij") if len(axes) > 1 else [np.asarray(axes[0])]
            return obj.value(tuple(mgrids), t)
        return fn
    if np.isscalar(obj):
        c = float(obj)
        return lambda axes, t: np.full(tuple(len(a) for a in axes), c)
    return obj  # already callable


@dataclass
class SolutionField:
    """Trajectory plus energy record and solver metadata."""

    u: NodeField
    energy: dict
    meta: dict
    _interp: object = dc_field(default=None, repr=False)

    @property
    def grid(self):
        return self.u.grid

    def interpolators(self):
        """Splines over (t, x): value, d_t, gradient, and Hessian entries.

        Built on first use; d=1 only (the rate studies run on intervals).
        """
        if self._interp is None:
            if self.grid.d != 1:
                raise ConfigInvalid("interpolators are provided for d=1 only")
            from scipy.interpolate import RectBivariateSpline
            x = self.grid.coords(0)
            t = self.u.times
            vals = self.u.values
            if vals.ndim == 3:
                vals = vals[..., 0]
            kx = min(3, len(t) - 1)
            sp = RectBivariateSpline(t, x, vals, kx=kx, ky=3)
            self._interp = {
                "u": lambda tt, xx: sp(tt, xx, grid=False),
                "du_dx": lambda tt, xx: sp(tt, xx, dy=1, grid=False),
                "d2u_dx2": lambda tt, xx: sp(tt, xx, dy=2, grid=False),
                "du_dt": lambda tt, xx: sp(tt, xx, dx=1, grid=False),
                "spline": sp,
            }
        return self._interp


def _energy_record(fieldobj, sol_nf, grid, data_norms):
    """Discrete energy inequality pieces: sup-t L2 and the gradient integral."""
    u = sol_nf.values
    l2 = np.sqrt(np.mean(u.reshape(u.shape[0], -1) ** 2, axis=1) * np.prod(grid.hi - grid.lo))
    sup_l2 = float(np.max(l2))
    dt = float(sol_nf.times[1] - sol_nf.times[0]) if sol_nf.times.size > 1 else 0.0
    grad_int = 0.0
    for lev in range(1, u.shape[0]):
        gsq = 0.0
        for ax in range(grid.d):
            g = grad_values(grid, u[lev], ax)
            gsq = gsq + g ** 2
        grad_int += dt * float(np.mean(gsq) * np.prod(grid.hi - grid.lo))
    lhs = sup_l2 ** 2 + grad_int
    denom = data_norms + 1e-300
    return {"sup_l2": sup_l2, "grad_l2_integral": grad_int,
            "lhs": lhs, "data_norm": data_norms,
            "bound_ratio": lhs / denom}


def _data_norm(problem, grid):
    axes = grid.axes()
    h0 = _as_callable(problem.h0, grid)
    F = _as_callable(problem.F, grid)
    vol = float(np.prod(grid.hi - grid.lo))
    n = 0.0
    if h0 is not None:
        n += float(np.mean(np.asarray(h0(axes, 0.0)) ** 2) * vol)
    if F is not None:
        acc = 0.0
        for t in np.linspace(0, problem.T, 9):
            acc += float(np.mean(np.asarray(F(axes, t)) ** 2) * vol)
        n += problem.T * acc / 9.0 * problem.T  # T * int ||F||^2 scaling
    return n


def solve_eps(fieldobj, problem, h=None, dt=None, store_stride=1, on_step=None):
    """March the eps-oscillatory problem; requires h <= eps/16, dt <= eps^2/16."""
    eps = problem.eps
    if eps is None:
        raise ConfigInvalid("problem.eps is required for solve_eps")
    h = h if h is not None else eps / 16
    dt = dt if dt is not None else eps * eps / 16
    resolution_check(eps, h, dt)
    grid = problem.grid(h, dt, m=fieldobj.m)
    scaled = ScaledField(fieldobj, eps)
    u = time_march(scaled, grid, sigma0=0.0,
                   rhs=_as_callable(problem.F, grid),
                   initial=_as_callable(problem.h0, grid),
                   dirichlet_data=_as_callable(problem.g, grid) if problem.bc == "dirichlet" else None,
                   store_stride=store_stride, on_step=on_step)
    energy = _energy_record(scaled, u, grid, _data_norm(problem, grid))
    return SolutionField(u=u, energy=energy,
                         meta={"eps": eps, "h": h, "dt": dt,
                               "n_solves": u.info.get("n_solves")})


def _const_field(a_hat, d, m, mu_hint=None):
    a = np.asarray(a_hat, dtype=float)
    if a.ndim == 0:
        T = np.zeros((d, d, m, m))
        for i in range(d):
            for al in range(m):
                T[i, i, al, al] = float(a)
        a = T
    q = np.transpose(a, (0, 2, 1, 3)).reshape(d * m, d * m)
    ev = np.linalg.eigvalsh(0.5 * (q + q.T))
    if ev[0] <= 0:
        raise ConfigInvalid(f"effective tensor not elliptic: min eigenvalue {ev[0]:.3e}")
    mu = mu_hint or min(ev[0], 1.0 / max(ev[-1], 1.0), 1.0)
    return CoefficientTensorField(d=d, m=m, mu=float(mu), constant_term=a, atoms=())


def solve_effective(a_hat, problem, h=None, dt=None, store_stride=1):
    """Constant-coefficient march on a coarse grid.

    a_hat may be an EffectiveTensor, a (d,d,m,m) array, or a scalar.
    """
    tensor = getattr(a_hat, "a_hat", a_hat)
    d = problem.d
    m = 1 if np.isscalar(tensor) else np.asarray(tensor).shape[-1]
    fld = _const_field(tensor, d, m)
    h = h if h is not None else (problem.hi - problem.lo).min() / 128
    dt = dt if dt is not None else problem.T / max(256, round(problem.T / h ** 2 / 4))
    # snap dt to divide T
    dt = problem.T / max(1, round(problem.T / dt))
    grid = problem.grid(h, dt, m=m)
    u = time_march(fld, grid, sigma0=0.0,
                   rhs=_as_callable(problem.F, grid),
                   initial=_as_callable(problem.h0, grid),
                   dirichlet_data=_as_callable(problem.g, grid) if problem.bc == "dirichlet" else None,
                   store_stride=store_stride)
    energy = _energy_record(fld, u, grid, _data_norm(problem, grid))
    return SolutionField(u=u, energy=energy,
                         meta={"h": h, "dt": dt, "n_solves": u.info.get("n_solves")})


# -- fundamental-solution probe ---------------------------------------------------


@dataclass
class ProbeReport:
    kappa: float
    C: float
    fit_residual: float
    mass_err: float
    sigma_boundary: float = None
    n_samples: int = 0
    meta: dict = None

    def as_dict(self):
        out = {"kappa": self.kappa, "C": self.C, "fit_residual": self.fit_residual,
               "mass_err": self.mass_err, "n_samples": self.n_samples}
        if self.sigma_boundary is not None:
            out["sigma_boundary"] = self.sigma_boundary
        return out


def _nearest_image_dist(x, pole, extent, periodic):
    diff = x - pole
    if periodic:
        diff = diff - extent * np.round(diff / extent)
    return diff


def fundamental_probe(fieldobj, eps, pole, horizon, box=None, h=None, dt=None,
                      bc="periodic", skip_steps=4, floor=1e-12,
                      z_range=(1.0, 12.0)):
    """Gaussian-envelope fit of the discrete fundamental solution.

    Starts a nearest-node delta (mass 1/h^d) at ``pole`` and fits
    log G + (d/2) log t  =  log C - kappa * |x-y|^2 / t
    by least squares over interior samples after ``skip_steps`` steps.
    Samples keep to the envelope regime z = |x-y|^2/t in ``z_range`` and
    radii within a quarter box (discrete-scheme tails and periodic images
    are not Gaussian).  Periodic boxes check mass conservation; Dirichlet
    boxes also fit the boundary-decay exponent sigma against the boundary
    distance.
    """
    d = fieldobj.d
    if fieldobj.m != 1:
        raise ConfigInvalid("fundamental probe is scalar-only (m=1)")
    scaled = ScaledField(fieldobj, eps) if eps else fieldobj
    side = box if box is not None else 4.0
    h = h if h is not None else (eps / 16 if eps else 1 / 128)
    if dt is None:
        dt = horizon / 512
        if eps:
            dt = min(dt, eps * eps / 16)
    dt = horizon / max(1, round(horizon / dt))
    if eps:
        resolution_check(eps, h, dt)

    lo = np.zeros(d)
    hi = np.full(d, side)
    grid = SpaceTimeGrid(lo=lo, hi=hi, h=h, t0=0.0, t1=horizon, dt=dt, bc=bc, m=1)
    pole = np.atleast_1d(np.asarray(pole, dtype=float))
    if bc == "dirichlet":
        dist_b = float(min(np.min(pole - lo), np.min(hi - pole)))
        if dist_b < 8 * h:
            raise PoleTooCloseToBoundary(f"pole at distance {dist_b} < 8h={8 * h}")

    # nearest-node discrete delta of unit mass
    axes = grid.axes()
    idx = tuple(int(np.argmin(np.abs(axes[i] - pole[i]))) for i in range(d))
    u0 = np.zeros(grid.spatial_shape)
    u0[idx] = h ** -d
    snapped = np.array([axes[i][idx[i]] for i in range(d)])

    sol = time_march(scaled, grid, sigma0=0.0, rhs=None, initial=u0,
                     dirichlet_data=0.0 if bc == "dirichlet" else None)

    vals = sol.values
    times = sol.times
    mesh_axes = np.meshgrid(*axes, indexing="ij") if d > 1 else [axes[0]]
    diff = [
        _nearest_image_dist(mesh_axes[i], snapped[i], hi[i] - lo[i], bc == "periodic")
        for i in range(d)
    ]
    r2 = sum(dd ** 2 for dd in diff)

    zs, ys = [], []
    r2flat = r2.ravel()
    vol = h ** d
    mass_err = 0.0
    for k in range(skip_steps + 1, len(times)):
        t = float(times[k])
        gv = vals[k].ravel()
        mass_err = max(mass_err, abs(vol * gv.sum() - 1.0))
        z = r2flat / t
        keep = ((gv > floor) & (r2flat > (2 * h) ** 2)
                & (z >= z_range[0]) & (z <= z_range[1])
                & (r2flat <= (0.25 * side) ** 2))
        if bc == "dirichlet":
            bdist = np.minimum.reduce([np.minimum(mesh_axes[i] - lo[i], hi[i] - mesh_axes[i])
                                       for i in range(d)]).ravel()
            keep &= bdist > 0.25 * side
        if not keep.any():
            continue
        zs.append(z[keep])
        ys.append(np.log(gv[keep]) + 0.5 * d * np.log(t))
    if not zs:
        raise ConfigInvalid("no usable probe samples; enlarge horizon or box")
    z = np.concatenate(zs)
    y = np.concatenate(ys)
    Amat = np.stack([np.ones_like(z), -z], axis=-1)
    coef, res_, *_ = np.linalg.lstsq(Amat, y, rcond=None)
    fit = Amat @ coef
    fit_residual = float(np.sqrt(np.mean((fit - y) ** 2)))
    kappa = float(coef[1])
    Cfit = float(np.exp(coef[0]))

    sigma = None
    if bc == "dirichlet":
        gv = vals[-1]
        bdist = np.minimum.reduce([np.minimum(mesh_axes[i] - lo[i], hi[i] - mesh_axes[i])
                                   for i in range(d)])
        sel = (bdist.ravel() > h / 2) & (bdist.ravel() < 0.12 * side) & (gv.ravel() > floor)
        if np.count_nonzero(sel) >= 8:
            s_coef = np.polyfit(np.log(bdist.ravel()[sel]), np.log(gv.ravel()[sel]), 1)
            sigma = float(s_coef[0])
        mass_err = float("nan")  # absorbing boundary: mass not conserved

    return ProbeReport(kappa=kappa, C=Cfit, fit_residual=fit_residual,
                       mass_err=float(mass_err), sigma_boundary=sigma,
                       n_samples=int(z.size),
                       meta={"h": h, "dt": dt, "box": side, "pole": snapped.tolist(),
                             "bc": bc, "eps": eps})


def adjoint_symmetry_check(fieldobj, eps, pole, obs, horizon, **kw):
    """Compare G_A(obs, T; pole, 0) with the adjoint run G_{A*}(pole, T; obs, 0).

    The adjoint propagator uses the transposed, time-reversed coefficients;
    agreement is up to discretization error.
    """
    rep1 = fundamental_probe(fieldobj, eps, pole, horizon, **kw)
    rev = fieldobj.transpose().time_reversed(horizon / (eps * eps) if eps else horizon)
    rep2 = fundamental_probe(rev, eps, obs, horizon, **kw)

    # point values: solve both and read off the end level at the other point
    d = fieldobj.d
    h = rep1.meta["h"]
    side = rep1.meta["box"]
    grid = SpaceTimeGrid(lo=np.zeros(d), hi=np.full(d, side), h=h, t0=0.0,
                         t1=horizon, dt=rep1.meta["dt"], bc=rep1.meta["bc"], m=1)
    axes = grid.axes()

    def end_value(base_field, src, dst):
        u0 = np.zeros(grid.spatial_shape)
        idx = tuple(int(np.argmin(np.abs(axes[i] - np.atleast_1d(src)[i]))) for i in range(d))
        u0[idx] = h ** -d
        sc = ScaledField(base_field, eps) if eps else base_field
        sol = time_march(sc, grid, sigma0=0.0, rhs=None, initial=u0,
                         dirichlet_data=0.0 if rep1.meta["bc"] == "dirichlet" else None,
                         store_stride=max(1, grid.n_steps))
        jdx = tuple(int(np.argmin(np.abs(axes[i] - np.atleast_1d(dst)[i]))) for i in range(d))
        return float(sol.values[-1][jdx])

    v1 = end_value(fieldobj, pole, obs)
    v2 = end_value(rev, obs, pole)
    rel = abs(v1 - v2) / max(abs(v1), abs(v2), 1e-300)
    return {"value": v1, "adjoint_value": v2, "rel_diff": rel,
            "kappa": rep1.kappa, "adjoint_kappa": rep2.kappa}


def max_principle_check(sol, problem):
    """Scalar maximum principle: trajectory range within data range (+tol)."""
    u = sol.u.values
    grid = sol.grid
    axes = grid.axes()
    h0 = _as_callable(problem.h0, grid)
    init = np.asarray(h0(axes, 0.0)) if h0 is not None else np.zeros(grid.spatial_shape)
    lo, hi = float(np.min(init)), float(np.max(init))
    g = _as_callable(problem.g, grid)
    if problem.bc == "dirichlet" and g is not None:
        for t in sol.u.times:
            gv = np.asarray(g(axes, float(t)))
            mask = grid.boundary_mask()
            if mask.any():
                lo = min(lo, float(np.min(gv[mask])))
                hi = max(hi, float(np.max(gv[mask])))
    viol = max(0.0, float(np.max(u)) - hi) + max(0.0, lo - float(np.min(u)))
    return {"min_data": lo, "max_data": hi,
            "min_u": float(np.min(u)), "max_u": float(np.max(u)),
            "violation": viol}
