"""Regularity probes: parabolic Holder seminorms, large-scale interior
Lipschitz profiles, and boundary profiles over graph domains.

Everything here is measurement, not proof: seminorms are maxima over
sampled pairs (lower bounds of the true suprema), profiles are cylinder
averages on solver output, and the affine infima are discrete least
squares on cylinder nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import ConfigInvalid
from .ivpsolve import ProblemSpec, solve_eps
from .mesh import NodeField

__all__ = [
    "HolderReport", "LipschitzProfile", "GraphDomain",
    "holder_seminorm", "interior_lipschitz_profile",
    "boundary_lipschitz_profile", "boundary_profile_of_solution",
    "campanato_check",
]


def _halton(n, dim, skip=20):
    primes = [2, 3, 5, 7, 11, 13][:dim]
    out = np.empty((n, dim))
    for j, p in enumerate(primes):
        i = np.arange(skip, skip + n)
        f = np.zeros(n)
        denom = 1.0
        ii = i.copy()
        while np.any(ii > 0):
            denom *= p
            f += (ii % p) / denom
            ii //= p
        out[:, j] = f
    return out


@dataclass
class HolderReport:
    """Sampled parabolic Holder quotient max; a lower bound by construction."""

    alpha: float
    region: tuple                # (lo, hi) arrays of the spatial box probed
    seminorm: float
    rhs: float                   # scaled cylinder-average functional, or nan
    ratio: float
    n_pairs: int
    argmax: tuple                # ((x, t), (y, s)) of the maximizing pair


def _parabolic_dist(x, t, y, s):
    return np.sqrt(np.sum((x - y) ** 2, axis=-1)) + np.sqrt(np.abs(t - s))


def holder_seminorm(u, region=None, alpha=0.5, pair_budget=100_000, F=None):
    """Max parabolic difference quotient over near-diagonal and sampled pairs.

    u: NodeField (scalar component); region: (lo, hi) spatial sub-box, full
    grid when omitted.  With F (an expression or callable) the right-hand
    functional sup_l l^{2-alpha} (avg_{Q_l} |F|^2)^{1/2} + sup|u| is
    evaluated and the ratio reported; otherwise rhs and ratio are nan.
    """
    if not (0.0 < alpha < 1.0):
        raise ConfigInvalid("alpha must lie in (0, 1)")
    grid = u.grid
    vals = u.values
    if vals.ndim > 1 + grid.d:
        vals = vals.reshape(vals.shape[:1 + grid.d] + (-1,))[..., 0]
    times = u.times if u.times is not None else np.zeros(1)

    lo = grid.lo if region is None else np.atleast_1d(np.asarray(region[0], float))
    hi = grid.hi if region is None else np.atleast_1d(np.asarray(region[1], float))
    axes = [grid.coords(k) for k in range(grid.d)]
    keep = [np.where((ax >= lo[k] - 1e-12) & (ax <= hi[k] + 1e-12))[0]
            for k, ax in enumerate(axes)]
    if any(k.size == 0 for k in keep):
        raise ConfigInvalid("region does not intersect the grid")

    sub = vals[(slice(None),) + np.ix_(*keep)]
    subaxes = [ax[k] for ax, k in zip(axes, keep)]
    nt = sub.shape[0]
    spshape = sub.shape[1:]

    best = 0.0
    arg = None
    flat = sub.reshape(nt, -1)
    coords = np.stack(np.meshgrid(*subaxes, indexing="ij"),
                      axis=-1).reshape(-1, grid.d)

    # near-diagonal: every offset within 5 cells in each axis and time
    offs = []
    for dt_off in range(0, min(5, nt - 1) + 1):
        for sp_off in np.ndindex(*(min(5, s - 1) + 1 for s in spshape)):
            if dt_off == 0 and all(o == 0 for o in sp_off):
                continue
            offs.append((dt_off, sp_off))
    n_pairs = 0
    for dt_off, sp_off in offs:
        sl_a = (slice(0, nt - dt_off),) + tuple(
            slice(0, s - o) for s, o in zip(spshape, sp_off))
        sl_b = (slice(dt_off, nt),) + tuple(
            slice(o, s) for s, o in zip(spshape, sp_off))
        da = sub[sl_a] - sub[sl_b]
        dx = math.sqrt(sum((o * grid.h) ** 2 for o in sp_off))
        dt_val = (times[dt_off] - times[0]) if dt_off else 0.0
        dist = dx + math.sqrt(abs(dt_val))
        q = np.abs(da) / dist ** alpha
        n_pairs += q.size
        mx = float(np.max(q)) if q.size else 0.0
        if mx > best:
            best = mx
            idx = np.unravel_index(np.argmax(q), q.shape)
            ia = tuple(i for i in idx)
            ib = (ia[0] + dt_off,) + tuple(i + o for i, o in zip(ia[1:], sp_off))
            arg = (ia, ib)

    # long-range low-discrepancy pairs
    n_nodes = flat.shape[1]
    total = nt * n_nodes
    n_lr = min(pair_budget, 10 ** 5)
    hh = _halton(n_lr, 2)
    ia = np.minimum((hh[:, 0] * total).astype(int), total - 1)
    ib = np.minimum((hh[:, 1] * total).astype(int), total - 1)
    ok = ia != ib
    ia, ib = ia[ok], ib[ok]
    ta, na = divmod(ia, n_nodes)
    tb, nb = divmod(ib, n_nodes)
    dv = np.abs(flat[ta, na] - flat[tb, nb])
    dist = _parabolic_dist(coords[na], times[ta], coords[nb], times[tb])
    q = dv / dist ** alpha
    n_pairs += q.size
    if q.size and float(np.max(q)) > best:
        best = float(np.max(q))
        k = int(np.argmax(q))
        arg = ((int(ta[k]), int(na[k])), (int(tb[k]), int(nb[k])))

    rhs = float("nan")
    if F is not None:
        sup_u = float(np.max(np.abs(sub)))
        rhs = _holder_rhs(F, subaxes, times, alpha) + sup_u
    ratio = best / rhs if rhs == rhs and rhs > 0 else float("nan")
    return HolderReport(alpha=alpha, region=(lo, hi), seminorm=best, rhs=rhs,
                        ratio=ratio, n_pairs=n_pairs, argmax=arg)


def _eval_data(F, axes_pts, t):
    if hasattr(F, "value"):
        return F.value(axes_pts, t)
    if callable(F):
        return F(axes_pts, t)
    return np.full(np.broadcast_shapes(*(np.shape(a) for a in axes_pts)), float(F))


def _holder_rhs(F, subaxes, times, alpha):
    """sup over centers and scales l of l^(2-alpha) (avg_{Q_l}|F|^2)^(1/2)."""
    mesh = np.meshgrid(*subaxes, indexing="ij")
    worst = 0.0
    t_hi = float(times[-1])
    extent = min(float(ax[-1] - ax[0]) for ax in subaxes) if subaxes else 1.0
    scales = np.geomspace(max(extent / 32, 1e-3), max(extent, 1e-3), 6)
    for l in scales:
        for tc in np.linspace(min(l * l, t_hi), t_hi, 3):
            Fv = np.abs(_eval_data(F, mesh, float(tc)))
            m = float(np.sqrt(np.mean(Fv ** 2)))
            worst = max(worst, l ** (2 - alpha) * m)
    return worst


@dataclass
class GraphDomain:
    """Boundary chart: the domain lies above a C^{1,alpha} graph.

    d=1 is the operational case (psi degenerates; the boundary is the point
    x0 and the interior direction is `side`).  d=2 keeps psi as a callable
    on the tangential coordinate and verifies the norm bound on a grid.
    """

    M: float
    alpha: float
    x0: float = 0.0
    side: int = +1
    psi: object = None
    d: int = 1

    def verify(self, n=512, halfwidth=4.0):
        """Check |psi| + |psi'| + Holder(psi') <= M on a symmetric grid."""
        if self.d == 1 or self.psi is None:
            return {"norm": 0.0, "ok": True}
        y = np.linspace(-halfwidth, halfwidth, n)
        pv = np.array([float(self.psi(t)) for t in y])
        if abs(pv[n // 2]) > 1e-9:
            raise ConfigInvalid("graph function must vanish at 0")
        dp = np.gradient(pv, y)
        i, j = np.triu_indices(n, k=1)
        hold = float(np.max(np.abs(dp[i] - dp[j]) / np.abs(y[i] - y[j]) ** self.alpha))
        norm = float(np.max(np.abs(pv)) + np.max(np.abs(dp)) + hold)
        return {"norm": norm, "ok": norm <= self.M + 1e-9}

    def interior_interval(self, r, lo, hi):
        """I_r: the domain slab within distance r of the boundary point."""
        if self.side > 0:
            return (max(self.x0, lo), min(self.x0 + r, hi))
        return (max(self.x0 - r, lo), min(self.x0, hi))

    def boundary_cylinder(self, r, t0):
        """T_r: the lateral boundary patch (a point x0 across (t0-r^2, t0])."""
        return {"x0": self.x0, "t_lo": t0 - r * r, "t_hi": t0}


@dataclass
class LipschitzProfile:
    center: tuple                 # (x0, t0)
    rows: list                    # dicts r, avg_grad, rhs, ratio, psi, H, h
    sub_eps_rows: list            # same keys, r < eps: excluded from max ratio
    rhs: float
    max_ratio: float
    eps: float
    meta: dict = dc_field(default_factory=dict)

    CSV_COLUMNS = ("r", "avg_grad", "rhs", "ratio", "psi", "H", "h")

    def to_csv(self, path):
        import os
        lines = [",".join(self.CSV_COLUMNS)]
        for r in self.rows + self.sub_eps_rows:
            lines.append(",".join("%.12g" % r.get(c, float("nan"))
                                  for c in self.CSV_COLUMNS))
        tmp = str(path) + ".tmp"
        with open(tmp, "w") as fh:
            fh.write("\n".join(lines) + "\n")
        os.replace(tmp, path)
        return path


def _grad_rows(sol):
    """Centered spatial derivative of the stored trajectory (d=1)."""
    v = sol.u.values
    if v.ndim == 3:
        v = v[..., 0]
    h = sol.grid.h
    g = np.empty_like(v)
    g[:, 1:-1] = (v[:, 2:] - v[:, :-2]) / (2 * h)
    g[:, 0] = (v[:, 1] - v[:, 0]) / h
    g[:, -1] = (v[:, -1] - v[:, -2]) / h
    return v, g


def _cyl_mask(x, times, x0, t0, r, lo, hi, boundary=None):
    if boundary is None:
        xlo, xhi = max(x0 - r, lo), min(x0 + r, hi)
    else:
        xlo, xhi = boundary.interior_interval(r, lo, hi)
    mx = (x >= xlo - 1e-12) & (x <= xhi + 1e-12)
    mt = (times > t0 - r * r - 1e-14) & (times <= t0 + 1e-14)
    return mx, mt


def _cyl_mean_sq(arr, mx, mt):
    sel = arr[np.ix_(mt.nonzero()[0], mx.nonzero()[0])]
    if sel.size == 0:
        return float("nan")
    return float(np.sqrt(np.mean(sel ** 2)))


def _affine_fit(v, x, mx, mt):
    """Least-squares affine E x + beta on cylinder nodes; returns (E, beta, rms)."""
    sel = v[np.ix_(mt.nonzero()[0], mx.nonzero()[0])]
    xx = x[mx]
    if sel.size == 0 or xx.size < 2:
        return 0.0, float(np.mean(sel)) if sel.size else 0.0, 0.0
    A = np.stack([xx, np.ones_like(xx)], axis=1)
    # stack all levels: same spatial design matrix repeated
    B = np.tile(A, (sel.shape[0], 1))
    y = sel.reshape(-1)
    coef, *_ = np.linalg.lstsq(B, y, rcond=None)
    resid = y - B @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid ** 2)))


def _data_cyl_lp(F, x, times, mx, mt, p):
    if F is None:
        return 0.0
    xs = x[mx]
    ts = times[mt]
    if xs.size == 0 or ts.size == 0:
        return 0.0
    acc = [np.abs(_eval_data(F, [xs], float(t))) ** p for t in ts]
    return float(np.mean(acc) ** (1.0 / p))


def _r_grid(eps, R, per_octave=2):
    n = max(int(math.ceil(per_octave * math.log2(R / eps))) + 1, 2)
    return np.geomspace(eps, R, n)


def interior_lipschitz_profile(fieldobj, eps, problem, center=None, R=0.5,
                               p=4, h=None, dt=None, sub_eps_octaves=1):
    """Cylinder-average gradient profile against the one-scale right side.

    Solves the oscillatory problem, then reports
    (avg_{Q_r} |grad u|^2)^{1/2} for r on a geometric grid from eps to R,
    normalized by (avg_{Q_R}|grad u|^2)^{1/2} + R (avg_{Q_R}|F|^p)^{1/p}.
    Rows with r < eps are listed separately and excluded from the ratio.
    """
    if problem.d != 1:
        raise ConfigInvalid("profiles are implemented for d=1")
    if p <= problem.d + 2:
        raise ConfigInvalid("p must exceed d+2")
    if eps > R:
        raise ConfigInvalid("needs eps <= R")
    prob = ProblemSpec(lo=problem.lo, hi=problem.hi, T=problem.T, F=problem.F,
                       g=problem.g, h0=problem.h0, eps=eps, bc=problem.bc)
    n_steps = round(prob.T / (eps * eps / 16 if dt is None else dt))
    stride = max(1, n_steps // max(int(4 * prob.T / (eps * eps)), 1))
    sol = solve_eps(fieldobj, prob, h=h, dt=dt, store_stride=stride)
    v, g = _grad_rows(sol)
    x = sol.grid.coords(0)
    times = sol.u.times
    lo, hi = float(prob.lo[0]), float(prob.hi[0])
    if center is None:
        center = (0.5 * (lo + hi), float(prob.T))
    x0, t0 = center

    mxR, mtR = _cyl_mask(x, times, x0, t0, R, lo, hi)
    base = _cyl_mean_sq(g, mxR, mtR)
    rhs = base + R * _data_cyl_lp(prob.F, x, times, mxR, mtR, p)

    rows, sub = [], []
    sub_grid = np.geomspace(eps / 2 ** sub_eps_octaves, eps, sub_eps_octaves + 1)[:-1]
    for r in np.concatenate([sub_grid, _r_grid(eps, R)]):
        mx, mt = _cyl_mask(x, times, x0, t0, float(r), lo, hi)
        avg = _cyl_mean_sq(g, mx, mt)
        row = {"r": float(r), "avg_grad": avg, "rhs": rhs,
               "ratio": avg / rhs if rhs > 0 else float("nan"),
               "psi": float("nan"), "H": float("nan"), "h": float("nan")}
        (sub if r < eps - 1e-15 else rows).append(row)

    ratio = max(r["ratio"] for r in rows)
    return LipschitzProfile(center=(float(x0), float(t0)), rows=rows,
                            sub_eps_rows=sub, rhs=rhs, max_ratio=float(ratio),
                            eps=float(eps),
                            meta={"R": float(R), "p": p,
                                  "h": sol.meta.get("h"), "dt": sol.meta.get("dt")})


def _c1alpha_norm(f_bdry, x0, times, alpha):
    """Desk-scale C^{1+alpha} norm of the lateral data at the chart point."""
    ts = np.asarray(times, dtype=float)
    fv = np.array([float(np.asarray(_eval_data(f_bdry, [np.array([x0])], t)).flat[0])
                   for t in ts])
    if ts.size < 3:
        return float(np.max(np.abs(fv)))
    df = np.gradient(fv, ts)
    i, j = np.triu_indices(ts.size, k=1)
    dist = np.sqrt(np.abs(ts[i] - ts[j]))
    hold = float(np.max(np.abs(df[i] - df[j]) / dist ** alpha)) if i.size else 0.0
    return float(np.max(np.abs(fv)) + np.max(np.abs(df)) + hold)


def boundary_profile_of_solution(sol, gd, problem, R=0.25, p=4, alpha=0.5,
                                 r_min=None, eps_label=float("nan")):
    """Half-cylinder profile and affine-excess traces of a stored solution.

    Works on any trajectory (oscillatory or effective); r runs from r_min
    (default 4 grid cells) up to R.  Used directly for the Campanato
    diagnostic on the effective solution, where r may go below any eps.
    """
    v, g = _grad_rows(sol)
    x = sol.grid.coords(0)
    times = sol.u.times
    lo, hi = float(problem.lo[0]), float(problem.hi[0])
    t0 = float(problem.T)
    if r_min is None:
        r_min = 4 * sol.grid.h

    mxR, mtR = _cyl_mask(x, times, gd.x0, t0, R, lo, hi, boundary=gd)
    base = _cyl_mean_sq(g, mxR, mtR)
    fn = (_c1alpha_norm(problem.g, gd.x0, times[mtR], alpha)
          if problem.g is not None else 0.0)
    rhs = base + fn / R + R * _data_cyl_lp(problem.F, x, times, mxR, mtR, p)

    rows = []
    for r in _r_grid(r_min, R):
        mx, mt = _cyl_mask(x, times, gd.x0, t0, float(r), lo, hi, boundary=gd)
        avg = _cyl_mean_sq(g, mx, mt)
        E, beta, rms = _affine_fit(v, x, mx, mt)
        psi = rms / float(r)
        rows.append({"r": float(r), "avg_grad": avg, "rhs": rhs,
                     "ratio": avg / rhs if rhs > 0 else float("nan"),
                     "psi": psi, "H": psi, "h": abs(E)})

    ratio = max(r["ratio"] for r in rows)
    return LipschitzProfile(center=(float(gd.x0), t0), rows=rows,
                            sub_eps_rows=[], rhs=rhs, max_ratio=float(ratio),
                            eps=float(eps_label),
                            meta={"R": float(R), "p": p, "boundary": True,
                                  "f_norm": fn})


def boundary_lipschitz_profile(fieldobj, eps, gd, problem, R=0.25, p=4,
                               alpha=0.5, h=None, dt=None):
    """Boundary analogue over Omega_r half-cylinders at the chart point.

    Also traces the affine-excess functional Psi(r; u), its excess H(r)
    (identical to Psi on the solution), and the minimizer slope h(r) used
    by the Campanato iteration diagnostic.
    """
    if problem.d != 1:
        raise ConfigInvalid("profiles are implemented for d=1")
    if p <= problem.d + 2:
        raise ConfigInvalid("p must exceed d+2")
    prob = ProblemSpec(lo=problem.lo, hi=problem.hi, T=problem.T, F=problem.F,
                       g=problem.g, h0=problem.h0, eps=eps, bc=problem.bc)
    n_steps = round(prob.T / (eps * eps / 16 if dt is None else dt))
    stride = max(1, n_steps // max(int(4 * prob.T / (eps * eps)), 1))
    sol = solve_eps(fieldobj, prob, h=h, dt=dt, store_stride=stride)
    return boundary_profile_of_solution(sol, gd, prob, R=R, p=p, alpha=alpha,
                                        r_min=eps, eps_label=float(eps))


def campanato_check(profile, theta=0.125, omega=None, delta=0.0):
    """Row-by-row H(theta r) <= 1/2 H(r) + C omega(delta/r) {H(2r)+h(2r)}.

    Interpolates the traced H and h to the geometric points it needs,
    fits the single constant C by the smallest value making every row
    hold, and reports the rows.  omega defaults to the identity.
    """
    rows = [r for r in profile.rows if r["H"] == r["H"]]
    if len(rows) < 3:
        raise ConfigInvalid("profile carries no affine-excess trace")
    rr = np.array([r["r"] for r in rows])
    HH = np.array([r["H"] for r in rows])
    hh = np.array([r["h"] for r in rows])
    om = omega if omega is not None else (lambda t: t)

    out = []
    for r in rr:
        pts = (theta * r, r, 2 * r)
        if pts[0] < rr[0] - 1e-15 or pts[2] > rr[-1] + 1e-15:
            continue
        Ht = np.interp(np.log(pts), np.log(rr), HH)
        ht2 = float(np.interp(math.log(pts[2]), np.log(rr), hh))
        lhs = float(Ht[0])
        base = 0.5 * float(Ht[1])
        drive = float(om(delta / r)) * (float(Ht[2]) + ht2)
        out.append({"r": float(r), "lhs": lhs, "half_H": base, "drive": drive})
    if not out:
        raise ConfigInvalid("r grid too short for the theta/2r stencil")
    cs = [max(0.0, (o["lhs"] - o["half_H"])) / o["drive"]
          for o in out if o["drive"] > 0]
    C = max(cs) if cs else 0.0
    for o in out:
        o["holds_with_C"] = o["lhs"] <= o["half_H"] + C * o["drive"] + 1e-12
    return {"theta": theta, "C": float(C), "rows": out}
