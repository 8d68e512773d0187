"""Parabolic smoothing, collar cutoffs, and the composite interior smoother.

The smoother averages against a parabolic-scaled product kernel
theta1(y/eps) theta2(s/eps^2): spatial radius eps, temporal radius eps^2.
Profiles are polynomial bumps c (1-|z|^2)^4, discretely renormalized so
the tap sums are exactly one.  Convolution is direct summation over the
kernel footprint: periodic axes wrap, everything else zero-extends.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CollarTooThin, ConfigInvalid, KernelUnresolved
from .mesh import NodeField

__all__ = [
    "MollifierSpec", "CutoffSpec", "smooth", "k_eps",
    "weighted_bound_check", "derivative_constants",
]


def _bump(z):
    z = np.asarray(z, dtype=float)
    out = np.zeros_like(z)
    inside = np.abs(z) < 1.0
    out[inside] = (1.0 - z[inside] ** 2) ** 4
    return out


@dataclass(frozen=True)
class MollifierSpec:
    """Kernel profiles: spatial bump on the unit ball, temporal on an interval.

    temporal_side "two" uses support (-1,1); "one" uses (-1,0), which reads
    future time levels (the value at t averages f over (t, t+eps^2)).
    """

    temporal_side: str = "two"

    def __post_init__(self):
        if self.temporal_side not in ("two", "one"):
            raise ConfigInvalid(f"temporal_side must be 'two' or 'one', "
                                f"got {self.temporal_side!r}")

    def spatial_taps(self, d, h, eps):
        """Normalized tap stencil over the unit-ball footprint.

        Returns (weights, offsets) with offsets an (n, d) int array.
        """
        J = int(math.ceil(eps / h)) - 1
        rng = np.arange(-J, J + 1)
        if d == 1:
            w = _bump(rng * h / eps)
            keep = w > 0
            off = rng[keep][:, None]
            w = w[keep]
        else:
            grids = np.meshgrid(*([rng] * d), indexing="ij")
            off = np.stack([g.ravel() for g in grids], axis=-1)
            r = np.linalg.norm(off * h / eps, axis=-1)
            w = _bump(r)
            keep = w > 0
            off, w = off[keep], w[keep]
        total = w.sum()
        if total <= 0:
            raise KernelUnresolved("empty spatial kernel footprint")
        return w / total, off

    def temporal_taps(self, dt, eps):
        """Normalized taps along the level axis; negative offsets look ahead."""
        ee = eps * eps
        J = int(math.ceil(ee / dt)) - 1
        rng = np.arange(-J, J + 1)
        z = rng * dt / ee
        if self.temporal_side == "two":
            w = _bump(z)
        else:
            # support (-1, 0): bump recentred at -1/2, read at negative lags
            w = np.where(z <= 0, _bump(2 * z + 1), 0.0)
        keep = w > 0
        rng, w = rng[keep], w[keep]
        total = w.sum()
        if total <= 0:
            raise KernelUnresolved("empty temporal kernel footprint")
        return w / total, rng


def _shift_zero(arr, shift, axis):
    """arr shifted by `shift` cells along axis, zero-filled at the edge."""
    if shift == 0:
        return arr
    out = np.zeros_like(arr)
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    if shift > 0:
        dst[axis] = slice(shift, None)
        src[axis] = slice(None, -shift)
    else:
        dst[axis] = slice(None, shift)
        src[axis] = slice(-shift, None)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def _conv_time(vals, taps, offsets):
    out = np.zeros_like(vals)
    for w, o in zip(taps, offsets):
        out += w * _shift_zero(vals, int(o), 0)
    return out


def _conv_space(vals, taps, offsets, wrap, d):
    """Direct-summation convolution over spatial axes 1..d of vals."""
    out = np.zeros_like(vals)
    for w, off in zip(taps, offsets):
        shifted = vals
        for ax in range(d):
            o = int(off[ax])
            if o == 0:
                continue
            if wrap[ax]:
                shifted = np.roll(shifted, o, axis=1 + ax)
            else:
                shifted = _shift_zero(shifted, o, 1 + ax)
        out += w * shifted
    return out


def smooth(f, eps, spec=None):
    """Convolve a NodeField with the parabolic-scaled kernel.

    Raises KernelUnresolved unless h <= eps/4 and dt <= eps^2/4.  Periodic
    spatial axes wrap; time (and any dirichlet axis) zero-extends, so values
    within the kernel footprint of those edges are attenuated; the returned
    field's info records the fully covered slab.
    """
    spec = spec or MollifierSpec()
    grid = f.grid
    d = grid.d
    if grid.h > eps / 4 + 1e-12:
        raise KernelUnresolved(f"h={grid.h} exceeds eps/4={eps / 4}")
    sw, soff = spec.spatial_taps(d, grid.h, eps)

    wrap = [grid.bc[ax] == "periodic" for ax in range(d)]
    vals = _conv_space(f.values, sw, soff, wrap, d)

    nt = vals.shape[0]
    margin_t = (0, 0)
    if nt > 1:
        dt = float(f.times[1] - f.times[0])
        if dt > eps * eps / 4 + 1e-12:
            raise KernelUnresolved(f"dt={dt} exceeds eps^2/4={eps * eps / 4}")
        tw, toff = spec.temporal_taps(dt, eps)
        vals = _conv_time(vals, tw, toff)
        margin_t = (max(0, int(toff.max())), max(0, -int(toff.min())))

    out = NodeField(grid, vals, f.times.copy())
    out.info = {
        "spatial_margin_cells": int(np.max(np.abs(soff))),
        "time_margin_levels": margin_t,
        "eps": float(eps),
    }
    return out


@dataclass(frozen=True)
class CutoffSpec:
    """Collar cutoffs for a box domain on a grid with final time T.

    eta1 ramps 0 -> 1 over boundary distance [delta, 2*delta] along every
    non-periodic axis; eta2 ramps over [delta^2, 2*delta^2] after t0 and
    symmetrically before T.  Both use the smoothstep 3u^2 - 2u^3, whose
    slope stays below 1.5/width (the contract allows 4/width).
    """

    delta: float

    def _step(self, dist, width):
        u = np.clip((dist - width) / width, 0.0, 1.0)
        return u * u * (3.0 - 2.0 * u)

    def eta1(self, grid):
        d = grid.d
        out = np.ones(grid.spatial_shape)
        for ax in range(d):
            if grid.bc[ax] == "periodic":
                continue
            x = grid.coords(ax)
            dist = np.minimum(x - grid.lo[ax], grid.hi[ax] - x)
            ramp = self._step(dist, self.delta)
            shape = [1] * d
            shape[ax] = x.size
            out = out * ramp.reshape(shape)
        return out

    def eta2(self, times):
        t0, t1 = float(times[0]), float(times[-1])
        dd = self.delta ** 2
        up = self._step(times - t0, dd)
        down = self._step(t1 - times, dd)
        return up * down


def k_eps(f, eps, delta, cutoff=None, spec=None):
    """Smooth after masking with the collar cutoffs: S_eps(eta1 eta2 f).

    The product vanishes on the delta-collar; smoothing spreads support by
    at most eps (space) and eps^2 (time), so the result is exactly zero on
    the (delta - eps)-collar.
    """
    if delta <= eps:
        raise CollarTooThin(f"delta={delta} must exceed eps={eps}")
    cut = cutoff or CutoffSpec(delta)
    spec = spec or MollifierSpec()
    grid = f.grid
    e1 = cut.eta1(grid)
    e2 = cut.eta2(f.times) if f.values.shape[0] > 1 else np.ones(1)
    masked = f.values * e1.reshape((1,) + grid.spatial_shape + (1,) * len(f.comp_shape))
    shape_t = (-1,) + (1,) * (masked.ndim - 1)
    masked = masked * e2.reshape(shape_t)
    return smooth(NodeField(grid, masked, f.times), eps, spec)


def _lp_norm(vals, p):
    return float(np.mean(np.abs(vals) ** p) ** (1.0 / p))


def _grad_all(grid, vals):
    out = []
    for ax in range(grid.d):
        if grid.bc[ax] == "periodic":
            g = (np.roll(vals, -1, axis=1 + ax) - np.roll(vals, 1, axis=1 + ax)) / (2 * grid.h)
        else:
            g = np.gradient(vals, grid.h, axis=1 + ax)
        out.append(g)
    return np.stack(out, axis=-1)


def weighted_bound_check(g, f, eps, p=2, spec=None, n_probes=32, seed=0):
    """Empirical constants for the weighted smoothing bound.

    g is a callable g(axes, s) -> spatial array on unscaled coordinates;
    it is sampled at (x/eps, t/eps^2) against S_eps(f).  Returns the ratio
      ||g^eps S_eps f||_p / (sup_cyl <|g|^p>^{1/p} ||f||_p)
    and the eps-scaled gradient-variant ratio.
    """
    if p not in (2, 4):
        raise ConfigInvalid("p must be 2 or 4")
    spec = spec or MollifierSpec()
    grid = f.grid
    sf = smooth(f, eps, spec)

    axes_scaled = [grid.coords(ax) / eps for ax in range(grid.d)]
    nt = f.values.shape[0]
    gvals = np.stack([np.asarray(g(axes_scaled, float(t) / eps ** 2), dtype=float)
                      for t in (f.times if nt > 1 else [0.0])])
    shape = gvals.shape + (1,) * len(f.comp_shape)
    gs = gvals.reshape(shape)

    # sup over unit parabolic cylinders of the mean p-power, probed at
    # low-discrepancy anchors on a fixed fine sampling lattice
    from scipy.stats import qmc
    eng = qmc.Halton(d=grid.d + 1, scramble=True, seed=seed)
    anchors = eng.random(n_probes) * 16.0
    loc = np.linspace(0.0, 1.0, 17)
    tloc = np.linspace(-1.0, 0.0, 17)
    sup_cyl = 0.0
    for a in anchors:
        axes_c = [a[i] + loc for i in range(grid.d)]
        acc = 0.0
        for tt in a[-1] + tloc:
            gv = np.asarray(g(axes_c, float(tt)), dtype=float)
            acc += np.mean(np.abs(gv) ** p)
        sup_cyl = max(sup_cyl, (acc / tloc.size) ** (1.0 / p))

    fnorm = _lp_norm(f.values, p)
    num = _lp_norm(gs * sf.values, p)
    ratio = num / (sup_cyl * fnorm) if sup_cyl * fnorm > 0 else 0.0

    gsf = _grad_all(grid, sf.values)
    gnum = _lp_norm(gs[..., None] * gsf, p)
    grad_ratio = eps * gnum / (sup_cyl * fnorm) if sup_cyl * fnorm > 0 else 0.0
    return {"p": p, "ratio": float(ratio), "grad_ratio_eps_scaled": float(grad_ratio),
            "sup_cylinder": float(sup_cyl)}


def derivative_constants(f, eps_list, spec=None):
    """Fitted constants for the scaled derivative bounds of the smoother.

    Returns one row per eps with c_grad = eps ||grad S_eps f|| / ||f||,
    c_hess = eps^2 ||grad^2 S_eps f|| / ||f||, c_dt = eps^2 ||d_t S_eps f||
    / ||f|| (L2 norms over the fully covered slab).
    """
    spec = spec or MollifierSpec()
    grid = f.grid
    rows = []
    fn = _lp_norm(f.values, 2)
    for eps in eps_list:
        sf = smooth(f, eps, spec)
        past, future = sf.info["time_margin_levels"]
        sl = slice(past, sf.values.shape[0] - future if future else None)
        vals = sf.values[sl]
        g = _grad_all(grid, vals)
        h2 = np.stack([_grad_all(grid, g[..., i])[..., j]
                       for i in range(grid.d) for j in range(grid.d)], axis=-1)
        row = {"eps": float(eps),
               "c_grad": eps * _lp_norm(g, 2) / fn,
               "c_hess": eps ** 2 * _lp_norm(h2, 2) / fn}
        if f.values.shape[0] > 2:
            dt = float(f.times[1] - f.times[0])
            du = np.gradient(sf.values, dt, axis=0)[sl]
            row["c_dt"] = eps ** 2 * _lp_norm(du, 2) / fn
        rows.append(row)
    return rows
