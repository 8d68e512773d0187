"""Two-scale discrepancy assembly, convergence-rate studies, and the
convergence-rate modulus.

The discrepancy subtracts from u_eps the effective solution and the
corrector-weighted smoothed gradients,

  w = u_eps - u0 - eps chi(x/eps, t/eps^2) K_eps(du0/dx_j)
             - eps^2 phi_{(d+1) i j}(x/eps, t/eps^2) d_i K_eps(du0/dx_j),

with the corrector scale locked to S = 1/eps.  K_eps terms are evaluated
by direct kernel quadrature against splines of the coarse effective
solution, so no fine-grid trajectory of u0 is ever stored.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .apfield import theta_hat, rho_hat
from .corrector import (
    CorrectorPolicy, corrector_window, solve_corrector, effective_tensor,
    assemble_bS,
)
from .errors import ConfigInvalid, ScaleMismatch
from .fluxcor import build_flux_corrector, solve_flux_potential
from .ivpsolve import ProblemSpec, SolutionField, solve_effective, solve_eps
from .mesh import NodeField, Window, window_mean
from .smoothing import CutoffSpec, MollifierSpec

__all__ = [
    "DiscrepancyField", "RateReport", "ModulusEstimate",
    "assemble_discrepancy", "rate_study", "modulus_estimate", "dini_integral",
]


def _periodic_spline(y_nodes, vals, L):
    """Periodic cubic interpolant on [0, L); vals at nodes, no duplicate end."""
    from scipy.interpolate import CubicSpline
    yy = np.append(y_nodes, y_nodes[0] + L)
    vv = np.append(vals, vals[:1], axis=0)
    return CubicSpline(yy, vv, bc_type="periodic")


class _CellSampler:
    """Samples a stored corrector-grid quantity at (x/eps, t/eps^2).

    Steady data uses a periodic cubic spline in space; space-time data adds
    linear interpolation across the stored one-period level stack.
    """

    def __init__(self, grid, values, times):
        if grid.d != 1:
            raise ConfigInvalid("cell samplers are implemented for d=1")
        self.L = float(grid.hi[0] - grid.lo[0])
        self.y = grid.coords(0)
        self.vals = values
        self.times = times
        self.steady = values.shape[0] == 1
        if self.steady:
            self._sp = _periodic_spline(self.y, values[0], self.L)
        else:
            self.P = float(times[-1] - times[0])
            self._sps = [_periodic_spline(self.y, values[k], self.L)
                         for k in range(values.shape[0] - 1)]
            self.dt = float(times[1] - times[0])

    def __call__(self, y_pts, s):
        yy = np.mod(y_pts, self.L)
        if self.steady:
            return self._sp(yy)
        ss = math.fmod(float(s) - float(self.times[0]), self.P)
        if ss < 0:
            ss += self.P
        k = int(ss // self.dt)
        lam = ss / self.dt - k
        k2 = (k + 1) % len(self._sps)
        return (1 - lam) * self._sps[k % len(self._sps)](yy) + lam * self._sps[k2](yy)


class _KernelQuadrature:
    """Evaluates K_eps(g) rows by direct tap summation against a spline.

    g is (t, x) -> value from the coarse effective solve; the cutoffs
    eta1 eta2 multiply inside the convolution.  Quadrature lattice spacing
    is eps/8 in space and eps^2/8 in time.
    """

    def __init__(self, g_tx, problem, eps, delta, spec=None):
        spec = spec or MollifierSpec()
        self.g = g_tx
        self.lo = float(problem.lo[0])
        self.hi = float(problem.hi[0])
        self.T = float(problem.T)
        self.cut = CutoffSpec(delta)
        hq = eps / 8.0
        dq = eps * eps / 8.0
        sw, soff = spec.spatial_taps(1, hq, eps)
        tw, toff = spec.temporal_taps(dq, eps)
        self.sw, self.sy = sw, soff[:, 0] * hq
        self.tw, self.ts = tw, toff * dq
        self.delta = delta

    def _eta1(self, x):
        dist = np.minimum(x - self.lo, self.hi - x)
        return self.cut._step(dist, self.delta)

    def _eta2(self, t):
        dd = self.delta ** 2
        return float(self.cut._step(np.array([t - 0.0]), dd)[0]
                     * self.cut._step(np.array([self.T - t]), dd)[0])

    def row(self, x, t):
        """K_eps(g)(x, t) for a vector of spatial points at one time.

        All tap pairs go through one flattened spline evaluation; taps whose
        pre-image leaves the space-time cylinder contribute zero, which is
        consistent because the cutoffs vanish on the boundary collar anyway.
        """
        tt = t - self.ts                                   # (ntap_t,)
        t_ok = (tt >= 0.0) & (tt <= self.T)
        e2 = np.array([self._eta2(v) if ok else 0.0 for v, ok in zip(tt, t_ok)])
        xx = x[None, :] - self.sy[:, None]                 # (ntap_s, n)
        x_ok = (xx >= self.lo) & (xx <= self.hi)
        xc = np.clip(xx, self.lo, self.hi)
        e1 = self._eta1(xc) * x_ok

        TT = np.broadcast_to(np.clip(tt, 0.0, self.T)[:, None, None],
                             (tt.size,) + xc.shape)
        XX = np.broadcast_to(xc[None], TT.shape)
        G = self.g(TT.ravel(), XX.ravel()).reshape(TT.shape)
        return np.einsum("l,lin->n", self.tw * e2,
                         G * (self.sw[:, None] * e1)[None])


@dataclass
class DiscrepancyField:
    """w with its subtracted terms and space-time norms."""

    w: NodeField
    terms: dict               # "u0", "chi_k", "phi_dk" on the sampled levels
    norms: dict               # w_l2, w_grad_l2, l2_err, corr_l2
    eps: float
    delta: float

    def boundary_trace_max(self):
        v = self.w.values
        return float(max(np.max(np.abs(v[:, 0])), np.max(np.abs(v[:, -1]))))


def _st_l2(grid, times, vals):
    """L2(Omega x (0,T)) norm from sampled levels (trapezoid both axes)."""
    x = grid.coords(0)
    sq = np.trapezoid(vals ** 2, x, axis=1)
    if times.size == 1:
        return float(np.sqrt(sq[0]))
    return float(np.sqrt(np.trapezoid(sq, times)))


def assemble_discrepancy(u_eps, u_0, cs, fc, eps, delta, spec=None):
    """Assemble w on the stored levels of the oscillatory solve.

    u_eps: SolutionField from solve_eps; u_0: SolutionField from
    solve_effective (its interpolators supply du0/dx and its value);
    cs: CorrectorSet at S = 1/eps; fc: FluxCorrector at the same scale.
    """
    if abs(cs.S - 1.0 / eps) > 1e-12 * max(1.0, 1.0 / eps):
        raise ScaleMismatch(f"corrector scale S={cs.S} is not 1/eps={1 / eps}")
    grid = u_eps.grid
    if grid.d != 1:
        raise ConfigInvalid("discrepancy assembly is implemented for d=1")
    x = grid.coords(0)
    times = u_eps.u.times
    ue = u_eps.u.values
    if ue.ndim == 3:
        ue = ue[..., 0]

    itp = u_0.interpolators()
    prob = ProblemSpec(lo=grid.lo, hi=grid.hi, T=float(max(times[-1], u_0.u.times[-1])))
    kq = _KernelQuadrature(lambda t, xx: itp["du_dx"](t, xx), prob, eps, delta, spec)

    # samplers for chi and the temporal-row flux corrector at S = 1/eps
    chi_vals = cs.chi.values[..., 0, 0]            # (nt, n)
    chi_s = _CellSampler(cs.grid, chi_vals, cs.chi.times)
    phi_vals = fc.phi.values[..., 1, 0, 0, 0]      # row (d+1, 1): (nt, n)
    phi_s = _CellSampler(fc.phi.grid, phi_vals, fc.phi.times)

    h = grid.h
    w = np.zeros_like(ue)
    u0_t = np.zeros_like(ue)
    chi_term = np.zeros_like(ue)
    phi_term = np.zeros_like(ue)
    for k, t in enumerate(times):
        t = float(t)
        u0_row = itp["u"](t, x)
        K = kq.row(x, t)
        dK = np.zeros_like(K)
        dK[1:-1] = (K[2:] - K[:-2]) / (2 * h)
        dK[0] = (K[1] - K[0]) / h
        dK[-1] = (K[-1] - K[-2]) / h
        chi_row = chi_s(x / eps, t / eps ** 2)
        phi_row = phi_s(x / eps, t / eps ** 2)
        chi_term[k] = eps * chi_row * K
        phi_term[k] = eps ** 2 * phi_row * dK
        u0_t[k] = u0_row
        w[k] = ue[k] - u0_row - chi_term[k] - phi_term[k]

    gw = np.zeros_like(w)
    gw[:, 1:-1] = (w[:, 2:] - w[:, :-2]) / (2 * h)
    gw[:, 0] = (w[:, 1] - w[:, 0]) / h
    gw[:, -1] = (w[:, -1] - w[:, -2]) / h

    norms = {
        "w_l2": _st_l2(grid, times, w),
        "w_grad_l2": _st_l2(grid, times, gw),
        "l2_err": _st_l2(grid, times, ue - u0_t),
        "corr_l2": _st_l2(grid, times, chi_term + phi_term),
    }
    return DiscrepancyField(
        w=NodeField(grid, w[..., None], times),
        terms={"u0": u0_t, "chi_k": chi_term, "phi_dk": phi_term},
        norms=norms, eps=float(eps), delta=float(delta))


@dataclass
class RateReport:
    rows: list                # dicts: eps, delta, l2_err, w_l2, w_grad_l2, eta_hat, ratio
    slope: float
    sigma: float
    meta: dict

    CSV_COLUMNS = ("eps", "delta", "l2_err", "w_l2", "w_grad_l2", "eta_hat", "ratio")

    def to_csv(self, path):
        lines = [",".join(self.CSV_COLUMNS)]
        for r in self.rows:
            lines.append(",".join("%.12g" % r[c] for c in self.CSV_COLUMNS))
        text = "\n".join(lines) + "\n"
        import os
        tmp = str(path) + ".tmp"
        with open(tmp, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
        return path


class CorrectorCache:
    """Read-through cache of corrector sets on one shared box."""

    def __init__(self, fieldobj, policy):
        self.field = fieldobj
        self.policy = policy
        self._store = {}

    def get(self, S):
        key = float(S)
        if key not in self._store:
            self._store[key] = solve_corrector(self.field, key, self.policy)
        return self._store[key]


def _theta(fieldobj, S, sigma, sampling=None):
    return float(theta_hat(fieldobj, S, sigma, sampling).value)


def _grad_gap(cs_a, cs_b, window):
    diff = cs_a.grad_chi.values - cs_b.grad_chi.values
    d = cs_a.grid.d
    sq = (diff ** 2).reshape(diff.shape[:1 + d] + (-1,)).sum(axis=-1)
    times = cs_a.chi.times
    if sq.shape[0] != cs_b.grad_chi.values.shape[0]:
        raise ScaleMismatch("corrector level stacks differ; use one cache box")
    return float(np.sqrt(window_mean(NodeField(cs_a.grid, sq, times), window)))


def _theta_tail(fieldobj, S_max, sigma, sampling=None):
    """Power-law extrapolated integral of Theta(r)/r beyond S_max/2."""
    rs = np.array([S_max / 2, S_max, 2 * S_max])
    th = np.array([_theta(fieldobj, r, sigma, sampling) for r in rs])
    good = th > 1e-14
    if good.sum() < 2:
        return 0.0, float("nan")
    beta = -np.polyfit(np.log(rs[good]), np.log(th[good]), 1)[0]
    if beta < 0.02:
        return float("inf"), float(beta)
    return float(th[0] / beta), float(beta)


def rate_study(fieldobj, problem, eps_list, sigma=0.5, h0=None, dt0=None,
               corrector_policy=None, sampling=None, store_levels=256,
               with_discrepancy=True, osc_nodes=32):
    """Convergence-rate table over a decreasing eps list.

    One effective solution (tensor from the largest corrector scale) is
    compared against each oscillatory solve; delta follows the proof
    choice eps + gap + Theta_sigma(S) + Theta_1(S), floored at 2 eps.

    The oscillatory solves run at h = eps/osc_nodes with osc_nodes
    defaulting to the corrector grid's nodes-per-period, so both sides
    discretize the same medium; mismatched sampling densities shift the
    two discrete effective tensors apart and floor the measured rate.
    """
    eps_list = sorted(set(float(e) for e in eps_list), reverse=True)
    if problem.d != 1:
        raise ConfigInvalid("rate studies run on intervals (d=1)")
    S_list = [1.0 / e for e in eps_list]
    S_max = max(S_list)

    pol = corrector_policy or CorrectorPolicy()
    if pol.L is None:
        from .corrector import _box_side
        pol = dataclasses.replace(pol, L=_box_side(fieldobj, S_max, pol))
    cache = CorrectorCache(fieldobj, pol)

    cs_max = cache.get(S_max)
    eff = effective_tensor(fieldobj, cs_max)
    gap_win = corrector_window(cs_max.grid, S_max, pol.collar_factor)

    if dt0 is None:
        dt0 = problem.T / 16384
    u0 = solve_effective(eff, problem, h=h0, dt=dt0)

    tail, beta = _theta_tail(fieldobj, S_max, sigma, sampling)
    rows = []
    for eps in eps_list:
        S = 1.0 / eps
        cs = cache.get(S)
        th_s = _theta(fieldobj, S, sigma, sampling)
        th_1 = _theta(fieldobj, S, 1.0, sampling)
        gap = _grad_gap(cs, cs_max, gap_win)
        gap_tail = gap + (0.0 if math.isinf(tail) else tail)
        delta = max(eps + gap_tail + th_s + th_1, 2 * eps)
        eta = th_1 ** sigma + gap_tail + eps

        n_steps = round(problem.T / (eps * eps / 16))
        stride = max(1, n_steps // store_levels)
        prob_eps = ProblemSpec(lo=problem.lo, hi=problem.hi, T=problem.T,
                               F=problem.F, g=problem.g, h0=problem.h0,
                               eps=eps, bc=problem.bc)
        ue = solve_eps(fieldobj, prob_eps, h=eps / osc_nodes, store_stride=stride)

        if with_discrepancy:
            b = assemble_bS(fieldobj, cs, eff)
            fp = solve_flux_potential(b, S)
            fc = build_flux_corrector(fp)
            disc = assemble_discrepancy(ue, u0, cs, fc, eps, delta)
            nm = disc.norms
        else:
            itp = u0.interpolators()
            x = ue.grid.coords(0)
            uev = ue.u.values[..., 0]
            u0v = np.stack([itp["u"](float(t), x) for t in ue.u.times])
            nm = {"l2_err": _st_l2(ue.grid, ue.u.times, uev - u0v),
                  "w_l2": float("nan"), "w_grad_l2": float("nan")}

        rows.append({"eps": eps, "delta": delta, "l2_err": nm["l2_err"],
                     "w_l2": nm["w_l2"], "w_grad_l2": nm["w_grad_l2"],
                     "eta_hat": eta, "ratio": nm["l2_err"] / eta})

    ee = np.array([r["eps"] for r in rows])
    er = np.array([r["l2_err"] for r in rows])
    ok = er > 0
    slope = float(np.polyfit(np.log(ee[ok]), np.log(er[ok]), 1)[0]) if ok.sum() >= 2 else float("nan")
    return RateReport(rows=rows, slope=slope, sigma=sigma,
                      meta={"S_max": S_max, "theta_tail": tail,
                            "theta_tail_beta": beta,
                            "a_hat": float(eff.a_hat.ravel()[0]) if eff.a_hat.size == 1 else None})


@dataclass
class ModulusEstimate:
    t: np.ndarray
    eta: np.ndarray
    components: dict          # theta_pow, gap, gap_tail, linear
    decay_N: float
    dini: dict                # gamma -> (value, finite)
    notes: list

    def is_nondecreasing(self, tol=1e-12):
        return bool(np.all(np.diff(self.eta) >= -tol))


def modulus_estimate(fieldobj, t_grid, sigma=0.5, S_max=64.0,
                     corrector_policy=None, sampling=None, gammas=(1.0,)):
    """Assemble the convergence-rate modulus on a grid of scales.

    eta(t) = [Theta_1(1/t)]^sigma + (corrector-gradient gap + Theta tail) + t;
    the gap uses chi_{S_max} as the corrector proxy, all solves sharing one
    box.  Also fits the log-decay exponent N of rho and evaluates the Dini
    integral of eta^gamma/t numerically.
    """
    t_grid = np.sort(np.asarray(t_grid, dtype=float))
    if np.any(t_grid <= 0) or np.any(1.0 / t_grid > S_max + 1e-9):
        raise ConfigInvalid("t grid must satisfy 0 < t and 1/t <= S_max")

    pol = corrector_policy or CorrectorPolicy()
    if pol.L is None:
        from .corrector import _box_side
        pol = dataclasses.replace(pol, L=_box_side(fieldobj, S_max, pol))
    cache = CorrectorCache(fieldobj, pol)
    cs_max = cache.get(S_max)
    win = corrector_window(cs_max.grid, S_max, pol.collar_factor)

    tail, beta = _theta_tail(fieldobj, S_max, sigma, sampling)
    notes = [f"theta tail beyond S_max/2: {tail:.3e} (power fit beta={beta:.3f})"]

    th_pow = np.array([_theta(fieldobj, 1.0 / t, 1.0, sampling) ** sigma for t in t_grid])
    gaps = np.array([_grad_gap(cache.get(1.0 / t), cs_max, win) for t in t_grid])
    tail_v = 0.0 if math.isinf(tail) else tail
    eta_raw = th_pow + gaps + tail_v + t_grid
    eta = np.maximum.accumulate(eta_raw)
    if np.max(eta - eta_raw) > 1e-10 + 0.05 * np.max(eta_raw):
        notes.append("monotone envelope adjusted eta by more than 5%")

    # decay exponent N: rho(R) ~ C (log R)^(-N) on R > e
    Rs = np.geomspace(math.e * 1.2, max(4.0 * S_max, 16.0), 8)
    rho = np.array([rho_hat(fieldobj, float(R), sampling) for R in Rs])
    good = rho > 1e-13
    if good.sum() >= 2:
        N = float(-np.polyfit(np.log(np.log(Rs[good])), np.log(rho[good]), 1)[0])
    else:
        N = float("inf")

    dini = {}
    for g in gammas:
        dini[g] = dini_integral(t_grid, eta, g)

    return ModulusEstimate(t=t_grid, eta=eta,
                           components={"theta_pow": th_pow, "gap": gaps,
                                       "gap_tail": gaps + tail_v, "linear": t_grid},
                           decay_N=N, dini=dini, notes=notes)


def dini_integral(t, eta, gamma):
    """Numerical integral of eta(t)^gamma / t over (0, 1].

    Covers [t_min, min(1, t_max)] by log-grid trapezoid and extrapolates
    below t_min with the locally fitted power; returns (value, finite).
    """
    t = np.asarray(t, dtype=float)
    eta = np.asarray(eta, dtype=float)
    keep = t <= 1.0
    if keep.sum() < 2:
        return float("nan"), False
    tt, ee = t[keep], eta[keep]
    lt = np.log(tt)
    core = float(np.trapezoid(ee ** gamma, lt))

    # local power of eta near t_min from the first two samples
    if ee[0] <= 0 or ee[1] <= 0:
        return core, True
    p = (math.log(ee[1]) - math.log(ee[0])) / (lt[1] - lt[0])
    if p <= 1e-9:
        return float("inf"), False
    head = ee[0] ** gamma / (gamma * p)
    return core + head, True
