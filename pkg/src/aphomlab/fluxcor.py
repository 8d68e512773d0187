"""Flux potentials and flux correctors from the flux discrepancy field.

The potential f solves the massive Poisson problem entrywise,

    (-Lap_{d+1} + S^-2) f = <b> - b,

periodic over the corrector box in space and, for genuinely space-time
fields, over one observation period in time.  The flux corrector is the
antisymmetrized gradient phi_{ki} = D_k f_i - D_i f_k together with the
divergence row F = sum_k D_k f_k; these reconstruct b - <b> up to the
massive term, which is the identity `decomposition_residual` certifies.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .errors import MeanNotZero, SolverDivergence
from .mesh import NodeField, Window, window_mean

__all__ = [
    "FluxPotential", "FluxCorrector", "solve_flux_potential",
    "build_flux_corrector", "decomposition_residual",
]


def _d2_periodic(n, spacing):
    """1D periodic second-difference matrix; zero for a single node."""
    if n == 1:
        return sparse.csr_matrix((1, 1))
    e = np.ones(n)
    M = sparse.diags([e[:-1], -2 * e, e[:-1]], [-1, 0, 1], format="lil")
    M[0, n - 1] += 1.0
    M[n - 1, 0] += 1.0
    return (M / spacing ** 2).tocsr()


def _laplacian(shape, spacings):
    """Kronecker-sum Laplacian, periodic along every axis."""
    terms = []
    eyes = [sparse.identity(n, format="csr") for n in shape]
    for ax, (n, sp_ax) in enumerate(zip(shape, spacings)):
        mats = list(eyes)
        mats[ax] = _d2_periodic(n, sp_ax)
        terms.append(reduce(sparse.kron, mats) if len(mats) > 1 else mats[0])
    return sum(terms).tocsc()


def _periodic_stack(bfield):
    """Level stack with the duplicate period endpoint dropped, plus spacings.

    Returns (values, stamps, taxis_spacing).  Steady data keeps its single
    level and reports no time axis.
    """
    vals = bfield.values.values
    times = bfield.values.times
    if vals.shape[0] == 1:
        return vals, times, None
    gaps = np.diff(times)
    if np.ptp(gaps) > 1e-9 * gaps[0]:
        raise SolverDivergence("stored levels are not uniformly spaced")
    return vals[:-1], times[:-1], float(gaps[0])


@dataclass
class FluxPotential:
    """Entrywise solution of the massive Poisson problem."""

    S: float
    values: NodeField            # comp (d+1, m, d*m); periodic level stack
    window: Window
    residual: float
    window_mean_dev: float       # largest |<b>_window - <b>_box| entry
    dt_obs: float = None

    @property
    def grid(self):
        return self.values.grid


def solve_flux_potential(bfield, S, mean_tol=1e-3):
    """Solve (-Lap + S^-2) f = <b> - b entrywise on the periodic box.

    The subtracted mean is the full-box average (exact for a periodized
    field); the interior-window mean must already be within ``mean_tol``
    of it, otherwise the datum is not admissible and MeanNotZero is
    raised.
    """
    grid = bfield.values.grid
    d = grid.d
    vals, stamps, dt_obs = _periodic_stack(bfield)
    nt = vals.shape[0]
    spshape = grid.spatial_shape

    axes_shape = (nt,) + spshape if dt_obs else spshape
    spacings = ((dt_obs,) + (grid.h,) * d) if dt_obs else (grid.h,) * d
    # level-stack axis order is (t, y1..yd); the operator matches it
    lap = _laplacian(axes_shape, spacings)
    A = (-lap + S ** -2 * sparse.identity(lap.shape[0], format="csc")).tocsc()
    solve = spla.factorized(A)

    box_mean = vals.mean(axis=tuple(range(vals.ndim - 3)))    # (d+1, m, ncol)
    win_mean = window_mean(bfield.values, bfield.window)
    dev = float(np.max(np.abs(win_mean - box_mean)))
    if dev > mean_tol:
        raise MeanNotZero(
            f"window mean deviates from box mean by {dev:.2e} > {mean_tol:g}")

    comp = vals.shape[-3:]
    f = np.zeros_like(vals)
    residual = 0.0
    for idx in np.ndindex(*comp):
        rhs = (box_mean[idx] - vals[(...,) + idx]).ravel()
        if not rhs.any():
            continue
        x = solve(rhs)
        res = np.linalg.norm(A @ x - rhs) / np.linalg.norm(rhs)
        residual = max(residual, float(res))
        f[(...,) + idx] = x.reshape(axes_shape)
    if residual > 1e-8:
        raise SolverDivergence(f"flux potential residual {residual:.2e} > 1e-8")

    nf = NodeField(grid, f, stamps)
    return FluxPotential(S=float(S), values=nf, window=bfield.window,
                         residual=residual, window_mean_dev=dev, dt_obs=dt_obs)


def _axis_derivative(vals, axis_id, grid, dt_obs):
    """Centered periodic derivative; axis_id in 0..d-1 is space, d is time."""
    d = grid.d
    if axis_id < d:
        ax = 1 + axis_id
        return (np.roll(vals, -1, axis=ax) - np.roll(vals, 1, axis=ax)) / (2 * grid.h)
    if dt_obs is None or vals.shape[0] == 1:
        return np.zeros_like(vals)
    return (np.roll(vals, -1, axis=0) - np.roll(vals, 1, axis=0)) / (2 * dt_obs)


@dataclass
class FluxCorrector:
    """Antisymmetrized gradient phi and divergence row F of the potential."""

    S: float
    phi: NodeField               # comp (d+1, d+1, m, d*m); exactly skew in (k,i)
    F: NodeField                 # comp (m, d*m)
    window: Window
    dt_obs: float = None

    def skew_defect(self):
        p = self.phi.values
        return float(np.max(np.abs(p + np.swapaxes(p, -4, -3))))

    def sup_phi(self):
        return float(np.max(np.abs(self.phi.values)))

    def sup_F(self):
        return float(np.max(np.abs(self.F.values)))


def build_flux_corrector(fp):
    """Differentiate the potential into (phi, F).

    phi_{ki} = D_k f_i - D_i f_k is filled for k < i and mirrored with an
    exact sign flip, so skew symmetry holds bitwise.
    """
    grid = fp.grid
    d = grid.d
    vals = fp.values.values                    # (nt, *sp, d+1, m, ncol)
    nrow = d + 1

    # derivative of every row along every axis: D[k][i] = D_k f_i
    D = [[None] * nrow for _ in range(nrow)]
    for k in range(nrow):
        for i in range(nrow):
            D[k][i] = _axis_derivative(vals[..., i, :, :], k, grid, fp.dt_obs)

    base = vals.shape[:-3] + (nrow, nrow) + vals.shape[-2:]
    phi = np.zeros(base)
    for k in range(nrow):
        for i in range(k + 1, nrow):
            blk = D[k][i] - D[i][k]
            phi[..., k, i, :, :] = blk
            phi[..., i, k, :, :] = -blk

    F = D[0][0].copy()
    for k in range(1, nrow):
        F += D[k][k]

    return FluxCorrector(S=fp.S,
                         phi=NodeField(grid, phi, fp.values.times),
                         F=NodeField(grid, F, fp.values.times),
                         window=fp.window, dt_obs=fp.dt_obs)


def decomposition_residual(bfield, fp, fc):
    """Interior relative L2 defect of the flux reconstruction identity.

    For every row i:  b_i - <b_i> = sum_k D_k phi_{ki} + D_i F - S^-2 f_i.
    The defect is the centered-vs-compact Laplacian commutator, O(h^2).
    """
    grid = fp.grid
    d = grid.d
    bvals, stamps, _ = _periodic_stack(bfield)
    f = fp.values.values
    phi = fc.phi.values
    Fv = fc.F.values
    box_mean = bvals.mean(axis=tuple(range(bvals.ndim - 3)))

    fluct = bvals - box_mean
    recon = np.zeros_like(fluct)
    for i in range(d + 1):
        acc = _axis_derivative(Fv, i, grid, fp.dt_obs)
        for k in range(d + 1):
            acc = acc + _axis_derivative(phi[..., k, i, :, :], k, grid, fp.dt_obs)
        recon[..., i, :, :] = acc - fp.S ** -2 * f[..., i, :, :]

    res = fluct - recon
    win = fp.window
    num = _window_l2(NodeField(grid, (res ** 2).sum(axis=(-3, -2, -1)), stamps), win)
    den = _window_l2(NodeField(grid, (fluct ** 2).sum(axis=(-3, -2, -1)), stamps), win)
    rel = float(np.sqrt(num / den)) if den > 0 else 0.0
    return {"rel_l2": rel, "abs_l2": float(np.sqrt(num)),
            "fluct_l2": float(np.sqrt(den))}


def _window_l2(nf, window):
    return float(window_mean(nf, window))
