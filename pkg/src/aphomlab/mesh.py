"""Space-time grids, divergence-form operators, and the implicit march.

Everything downstream runs on uniform tensor grids over a box, backward
Euler in time.  The discrete operator is the second-order centered flux
form: face coefficients are arithmetic (optionally harmonic) averages of
the tensor at the two adjacent nodes, cross terms use centered first
differences, and the massive term sigma0 = S^-2 adds to the diagonal.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    ConfigInvalid,
    NonIntegerDivision,
    SolverDivergence,
    UnresolvedOscillation,
    WindowTooSmall,
)

__all__ = [
    "SpaceTimeGrid", "NodeField", "StepOperator", "Window",
    "build_grid", "assemble_operator", "assemble_step", "time_march",
    "manufactured_convergence", "window_mean", "window_l2_mean",
    "window_mask", "grad_values", "save_nodefield", "load_nodefield",
]


def _count_steps(extent, step, what):
    n = extent / step
    if abs(n - round(n)) > 1e-9 * max(1.0, abs(n)) or round(n) < 1:
        raise NonIntegerDivision(f"{what}: extent {extent} is not an integer multiple of {step}")
    return int(round(n))


@dataclass
class SpaceTimeGrid:
    """Uniform grid on a spatial box times a time interval.

    Treat instances as immutable after construction; operators cache
    difference matrices keyed on the instance.
    """

    lo: np.ndarray
    hi: np.ndarray
    h: float
    t0: float
    t1: float
    dt: float
    bc: tuple          # per-axis: "periodic" | "dirichlet"
    m: int = 1

    def __post_init__(self):
        self.lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if self.lo.shape != self.hi.shape or np.any(self.hi <= self.lo):
            raise ConfigInvalid("grid box must be nonempty with matching lo/hi")
        if self.h <= 0 or self.dt <= 0:
            raise ConfigInvalid("grid steps must be positive")
        if isinstance(self.bc, str):
            self.bc = (self.bc,) * self.d
        self.bc = tuple(self.bc)
        if len(self.bc) != self.d or any(b not in ("periodic", "dirichlet") for b in self.bc):
            raise ConfigInvalid(f"bad bc tags {self.bc}")
        self.n_cells = tuple(_count_steps(self.hi[i] - self.lo[i], self.h, f"axis {i}")
                             for i in range(self.d))
        self.n_steps = _count_steps(self.t1 - self.t0, self.dt, "time") if self.t1 > self.t0 else 0
        self._cache = {}

    @property
    def d(self):
        return self.lo.size

    @property
    def spatial_shape(self):
        return tuple(n if b == "periodic" else n + 1
                     for n, b in zip(self.n_cells, self.bc))

    @property
    def n_space(self):
        return int(np.prod(self.spatial_shape))

    def coords(self, axis):
        n = self.spatial_shape[axis]
        return self.lo[axis] + self.h * np.arange(n)

    def axes(self):
        return tuple(self.coords(i) for i in range(self.d))

    def times(self):
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def boundary_mask(self):
        """Spatial-node mask of Dirichlet boundary nodes."""
        mask = np.zeros(self.spatial_shape, dtype=bool)
        for ax, b in enumerate(self.bc):
            if b == "dirichlet":
                idx = [slice(None)] * self.d
                idx[ax] = 0
                mask[tuple(idx)] = True
                idx[ax] = -1
                mask[tuple(idx)] = True
        return mask

    def to_json(self):
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist(), "h": self.h,
                "t0": self.t0, "t1": self.t1, "dt": self.dt,
                "bc": list(self.bc), "m": self.m}


def build_grid(spec=None, **kw):
    """Grid factory from a dict spec (or keyword arguments)."""
    obj = dict(spec or {})
    obj.update(kw)
    try:
        return SpaceTimeGrid(
            lo=obj["lo"], hi=obj["hi"], h=float(obj["h"]),
            t0=float(obj.get("t0", 0.0)), t1=float(obj.get("t1", obj.get("t0", 0.0))),
            dt=float(obj.get("dt", 1.0)), bc=obj.get("bc", "dirichlet"),
            m=int(obj.get("m", 1)))
    except KeyError as exc:
        raise ConfigInvalid(f"grid spec missing key {exc}") from None


@dataclass
class NodeField:
    """Values on grid nodes at stored time levels.

    values has shape (n_times, *spatial_shape, *comp_shape); comp_shape is
    arbitrary (scalars: (), components: (m,), corrector columns: (m, ncol)...).
    """

    grid: SpaceTimeGrid
    values: np.ndarray
    times: np.ndarray = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        d = self.grid.d
        if self.values.shape[1:1 + d] != self.grid.spatial_shape:
            raise ConfigInvalid(
                f"values spatial shape {self.values.shape[1:1 + d]} does not match "
                f"grid {self.grid.spatial_shape}")
        if self.times is None:
            self.times = self.grid.times() if self.values.shape[0] == self.grid.n_steps + 1 \
                else np.array([self.grid.t0])
        self.times = np.asarray(self.times, dtype=float)
        if self.times.size != self.values.shape[0]:
            raise ConfigInvalid("times length does not match stored levels")

    @property
    def comp_shape(self):
        return self.values.shape[1 + self.grid.d:]

    def copy(self):
        return NodeField(self.grid, self.values.copy(), self.times.copy())

    def level(self, i):
        return self.values[i]

    def last(self):
        return self.values[-1]


class Window:
    """Axis-aligned space-time averaging cylinder."""

    def __init__(self, lo=None, hi=None, ta=None, tb=None):
        self.lo = None if lo is None else np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = None if hi is None else np.atleast_1d(np.asarray(hi, dtype=float))
        self.ta = ta
        self.tb = tb


def _axis_weights(grid, axis, wlo, whi, min_nodes=8):
    """Quadrature weights along one axis restricted to [wlo, whi].

    Full periodic extent: rectangle rule (exact for periodic integrands);
    otherwise trapezoid on the selected node range.
    """
    x = grid.coords(axis)
    tol = 1e-9 * grid.h
    full = (wlo is None or wlo <= grid.lo[axis] + tol) and \
           (whi is None or whi >= grid.hi[axis] - tol)
    if full and grid.bc[axis] == "periodic":
        return np.ones(x.size), np.arange(x.size)
    lo = grid.lo[axis] if wlo is None else wlo
    hi = grid.hi[axis] if whi is None else whi
    idx = np.nonzero((x >= lo - tol) & (x <= hi + tol))[0]
    if idx.size < min_nodes:
        raise WindowTooSmall(
            f"axis {axis}: {idx.size} nodes in window [{lo}, {hi}] (need >= {min_nodes})")
    w = np.ones(idx.size)
    w[0] = 0.5
    w[-1] = 0.5
    return w, idx


def _time_weights(times, ta, tb):
    tol = 1e-12 * max(1.0, float(np.max(np.abs(times))) if times.size else 1.0)
    lo = times[0] if ta is None else ta
    hi = times[-1] if tb is None else tb
    idx = np.nonzero((times >= lo - tol) & (times <= hi + tol))[0]
    if idx.size == 0:
        raise WindowTooSmall(f"no stored levels in time window [{lo}, {hi}]")
    if idx.size == 1:
        return np.ones(1), idx
    tt = times[idx]
    w = np.zeros(idx.size)
    w[:-1] += 0.5 * np.diff(tt)
    w[1:] += 0.5 * np.diff(tt)
    return w, idx


def _window_mean_once(nf, window):
    win = window or Window()
    tw, tidx = _time_weights(nf.times, win.ta, win.tb)
    vals = nf.values[tidx]
    d = nf.grid.d
    for ax in range(d):
        wlo = None if win.lo is None else win.lo[ax]
        whi = None if win.hi is None else win.hi[ax]
        w, idx = _axis_weights(nf.grid, ax, wlo, whi)
        vals = np.take(vals, idx, axis=1 + ax)
        shape = [1] * vals.ndim
        shape[1 + ax] = -1
        vals = vals * np.reshape(w / w.sum(), shape)
    for ax in range(d):
        vals = vals.sum(axis=1)
    tshape = [1] * vals.ndim
    tshape[0] = -1
    out = (vals * np.reshape(tw / tw.sum(), tshape)).sum(axis=0)
    return out


def window_mean(nf, window=None, richardson=False):
    """Volume average over the window; returns an array of comp_shape.

    With richardson=True, combines the window with its concentric half-size
    window to cancel the leading O(1/L) averaging error: 2*m_L - m_{L/2}.
    """
    out = _window_mean_once(nf, window)
    if not richardson:
        return out
    win = window or Window()
    lo = nf.grid.lo if win.lo is None else win.lo
    hi = nf.grid.hi if win.hi is None else win.hi
    mid = 0.5 * (lo + hi)
    half = Window(lo=mid - 0.25 * (hi - lo), hi=mid + 0.25 * (hi - lo),
                  ta=win.ta, tb=win.tb)
    return 2.0 * out - _window_mean_once(nf, half)


def window_l2_mean(nf, window=None):
    """Quadratic mean sqrt( avg_window sum_comp |v|^2 )."""
    sq = NodeField(nf.grid, nf.values.reshape(nf.values.shape[:1 + nf.grid.d] + (-1,)) ** 2,
                   nf.times)
    m = _window_mean_once(sq, window)
    return float(np.sqrt(np.sum(m)))


def window_mask(grid, window=None):
    """Boolean spatial mask of nodes inside the window."""
    win = window or Window()
    mask = np.ones(grid.spatial_shape, dtype=bool)
    for ax in range(grid.d):
        x = grid.coords(ax)
        tol = 1e-9 * grid.h
        lo = grid.lo[ax] if win.lo is None else win.lo[ax]
        hi = grid.hi[ax] if win.hi is None else win.hi[ax]
        sel = (x >= lo - tol) & (x <= hi + tol)
        shape = [1] * grid.d
        shape[ax] = -1
        mask &= np.reshape(sel, shape)
    return mask


# -- difference matrices -------------------------------------------------------


def _forward_diff_1d(n_nodes, h, periodic):
    if periodic:
        rows = np.arange(n_nodes)
        cols_hi = (rows + 1) % n_nodes
        F = sp.csr_matrix(
            (np.concatenate([np.full(n_nodes, -1.0 / h), np.full(n_nodes, 1.0 / h)]),
             (np.concatenate([rows, rows]), np.concatenate([rows, cols_hi]))),
            shape=(n_nodes, n_nodes))
        return F
    n_faces = n_nodes - 1
    rows = np.arange(n_faces)
    F = sp.csr_matrix(
        (np.concatenate([np.full(n_faces, -1.0 / h), np.full(n_faces, 1.0 / h)]),
         (np.concatenate([rows, rows]), np.concatenate([rows, rows + 1]))),
        shape=(n_faces, n_nodes))
    return F


def _face_avg_1d(n_nodes, periodic):
    if periodic:
        rows = np.arange(n_nodes)
        cols_hi = (rows + 1) % n_nodes
        return sp.csr_matrix(
            (np.full(2 * n_nodes, 0.5),
             (np.concatenate([rows, rows]), np.concatenate([rows, cols_hi]))),
            shape=(n_nodes, n_nodes))
    n_faces = n_nodes - 1
    rows = np.arange(n_faces)
    return sp.csr_matrix(
        (np.full(2 * n_faces, 0.5),
         (np.concatenate([rows, rows]), np.concatenate([rows, rows + 1]))),
        shape=(n_faces, n_nodes))


def _centered_diff_1d(n_nodes, h, periodic):
    if periodic:
        rows = np.arange(n_nodes)
        up = (rows + 1) % n_nodes
        dn = (rows - 1) % n_nodes
        return sp.csr_matrix(
            (np.concatenate([np.full(n_nodes, 0.5 / h), np.full(n_nodes, -0.5 / h)]),
             (np.concatenate([rows, rows]), np.concatenate([up, dn]))),
            shape=(n_nodes, n_nodes))
    D = sp.lil_matrix((n_nodes, n_nodes))
    for i in range(1, n_nodes - 1):
        D[i, i + 1] = 0.5 / h
        D[i, i - 1] = -0.5 / h
    D[0, 0], D[0, 1] = -1.0 / h, 1.0 / h
    D[-1, -1], D[-1, -2] = 1.0 / h, -1.0 / h
    return D.tocsr()


def _kron_axis(grid, mat, axis):
    ops = []
    for i, n in enumerate(grid.spatial_shape):
        ops.append(mat if i == axis else sp.identity(n, format="csr"))
    out = ops[0]
    for op in ops[1:]:
        out = sp.kron(out, op, format="csr")
    return out


def _grid_ops(grid):
    key = "ops"
    if key not in grid._cache:
        fd, fa, cd = [], [], []
        for ax in range(grid.d):
            n = grid.spatial_shape[ax]
            per = grid.bc[ax] == "periodic"
            fd.append(_kron_axis(grid, _forward_diff_1d(n, grid.h, per), ax))
            fa.append(_kron_axis(grid, _face_avg_1d(n, per), ax))
            cd.append(_kron_axis(grid, _centered_diff_1d(n, grid.h, per), ax))
        grid._cache[key] = (fd, fa, cd)
    return grid._cache[key]


def grad_values(grid, spatial_values, axis):
    """Centered gradient along a spatial axis of (*spatial, *comp) values."""
    _, _, cd = _grid_ops(grid)
    flat = spatial_values.reshape(grid.n_space, -1)
    out = cd[axis] @ flat
    return out.reshape(spatial_values.shape)


def _face_coeff(grid, a_nodes_entry, axis, averaging):
    _, fa, _ = _grid_ops(grid)
    if averaging == "arithmetic":
        return fa[axis] @ a_nodes_entry
    if averaging == "harmonic":
        if np.any(a_nodes_entry <= 0):
            raise ConfigInvalid("harmonic averaging requires positive coefficients")
        return 1.0 / (fa[axis] @ (1.0 / a_nodes_entry))
    raise ConfigInvalid(f"unknown averaging {averaging!r}")


def assemble_operator(fieldobj, grid, t, averaging="arithmetic"):
    """Sparse matrix of -div(A grad .) on grid unknowns at time t.

    Unknown ordering: spatial node (C-order) major, component fastest.
    Dirichlet rows are NOT yet replaced; see assemble_step.
    """
    d, m = grid.d, grid.m
    a = fieldobj.eval_grid(grid.axes(), t)
    if a.shape != grid.spatial_shape + (d, d, m, m):
        raise ConfigInvalid("field evaluation shape mismatch with grid")
    a_flat = a.reshape(grid.n_space, d, d, m, m)
    fd, _, cd = _grid_ops(grid)

    blocks = None
    for al in range(m):
        for be in range(m):
            A_s = None
            for i in range(d):
                face = _face_coeff(grid, a_flat[:, i, i, al, be], i, averaging)
                term = fd[i].T @ sp.diags(face) @ fd[i]
                A_s = term if A_s is None else A_s + term
            for i in range(d):
                for j in range(d):
                    if i == j:
                        continue
                    term = -cd[i] @ sp.diags(a_flat[:, i, j, al, be]) @ cd[j]
                    A_s = A_s + term
            if m == 1:
                return A_s.tocsr()
            emb = sp.csr_matrix(
                (np.ones(1), (np.array([al]), np.array([be]))), shape=(m, m))
            term = sp.kron(A_s, emb, format="csr")
            blocks = term if blocks is None else blocks + term
    return blocks.tocsr()


class StepOperator:
    """Implicit-step matrix (1/dt) I + A_h + sigma0 I with solver state.

    dt=None builds the steady operator A_h + sigma0 I.  Solves satisfy the
    contract: relative residual <= 1e-10 or SolverDivergence; a cached
    direct factorization is the fast path, preconditioned Krylov iteration
    (CG when symmetric, TFQMR otherwise) the fallback.
    """

    rtol = 1e-10
    maxiter = 10 ** 4

    def __init__(self, matrix, grid, dirichlet_mask, sym=None):
        self.matrix = matrix.tocsr()
        self.grid = grid
        self.dirichlet_mask = dirichlet_mask
        if sym is None:
            gap = abs(self.matrix - self.matrix.T)
            sym = gap.nnz == 0 or gap.max() < 1e-12
        self.sym = bool(sym)
        self._factor = None

    def apply(self, x):
        return self.matrix @ x

    def _solve_direct(self, b):
        if self._factor is None:
            self._factor = spla.factorized(self.matrix.tocsc())
        return self._factor(b)

    def _solve_iterative(self, b, x0=None):
        diag = self.matrix.diagonal()
        if np.any(diag == 0):
            diag = np.where(diag == 0, 1.0, diag)
        M = spla.LinearOperator(self.matrix.shape, matvec=lambda v: v / diag)
        if self.sym:
            x, info = spla.cg(self.matrix, b, x0=x0, rtol=1e-12, atol=0.0,
                              maxiter=self.maxiter, M=M)
        else:
            x, info = spla.tfqmr(self.matrix, b, x0=x0, rtol=1e-12, atol=0.0,
                                 maxiter=self.maxiter, M=M)
        return x

    def solve(self, b, x0=None, method=None):
        b = np.asarray(b, dtype=float).ravel()
        bnorm = float(np.linalg.norm(b))
        if bnorm == 0.0:
            return np.zeros_like(b)
        if method == "iterative":
            x = self._solve_iterative(b, x0)
        else:
            try:
                x = self._solve_direct(b)
            except (RuntimeError, MemoryError):
                x = self._solve_iterative(b, x0)
        res = float(np.linalg.norm(self.matrix @ x - b)) / bnorm
        if res > self.rtol:
            x = self._solve_iterative(b, x0=x)
            res = float(np.linalg.norm(self.matrix @ x - b)) / bnorm
            if res > self.rtol:
                raise SolverDivergence(f"relative residual {res:.3e} > {self.rtol}")
        return x


def _expand_mask(mask_spatial, m):
    return np.repeat(mask_spatial.ravel(), m)


def assemble_step(fieldobj, grid, t_level, mass=0.0, dt=None, averaging="arithmetic"):
    """StepOperator at one implicit time level."""
    A = assemble_operator(fieldobj, grid, t_level, averaging)
    N = grid.n_space * grid.m
    shift = float(mass) + (0.0 if dt is None else 1.0 / dt)
    M = A + shift * sp.identity(N, format="csr")
    mask = _expand_mask(grid.boundary_mask(), grid.m)
    if mask.any():
        keep = sp.diags((~mask).astype(float))
        M = keep @ M @ keep + sp.diags(mask.astype(float))
    return StepOperator(M, grid, mask)


def _rhs_vector(grid, rhs, t):
    """Nodal load vector for rhs at time t.

    rhs forms: None; callable f(axes, t) -> (*spatial, m) or (*spatial,);
    ("flux", f, g) with g(axes, t) -> (*spatial, d, m) entering through the
    discrete divergence with the operator's face averaging.
    """
    N = grid.n_space * grid.m
    if rhs is None:
        return np.zeros(N)
    if isinstance(rhs, tuple) and len(rhs) == 3 and rhs[0] == "flux":
        _, fpart, gpart = rhs
        out = _rhs_vector(grid, fpart, t)
        if gpart is not None:
            g = np.asarray(gpart(grid.axes(), t), dtype=float)
            g = g.reshape(grid.spatial_shape + (grid.d, grid.m))
            fd, fa, _ = _grid_ops(grid)
            gflat = g.reshape(grid.n_space, grid.d, grid.m)
            for i in range(grid.d):
                for al in range(grid.m):
                    gi_face = fa[i] @ gflat[:, i, al]
                    out.reshape(grid.n_space, grid.m)[:, al] -= fd[i].T @ gi_face
        return out
    f = np.asarray(rhs(grid.axes(), t), dtype=float)
    if f.shape == grid.spatial_shape:
        f = f[..., None] if grid.m == 1 else np.broadcast_to(f[..., None], grid.spatial_shape + (grid.m,))
    return f.reshape(N).astype(float).copy()


def time_march(fieldobj, grid, sigma0=0.0, rhs=None, initial=None,
               dirichlet_data=None, averaging="arithmetic", store_stride=1,
               on_step=None, solver=None):
    """Backward-Euler march; returns the stored trajectory as a NodeField.

    dirichlet_data: callable (axes, t) -> (*spatial,) or (*spatial, m) array
    whose boundary-node values are imposed; scalars allowed.
    A zero state with zero loads is advanced without linear solves.
    """
    d, m, N = grid.d, grid.m, grid.n_space * grid.m
    if initial is None:
        u = np.zeros(N)
    elif isinstance(initial, NodeField):
        u = initial.values[-1].reshape(N).astype(float).copy()
    elif callable(initial):
        arr = np.asarray(initial(grid.axes(), grid.t0), dtype=float)
        u = np.broadcast_to(arr[..., None] if arr.shape == grid.spatial_shape else arr,
                            grid.spatial_shape + (m,)).reshape(N).copy()
    else:
        u = np.asarray(initial, dtype=float).reshape(N).copy()

    mask = _expand_mask(grid.boundary_mask(), m)

    def bdry_values(t):
        if dirichlet_data is None:
            return None
        if callable(dirichlet_data):
            arr = np.asarray(dirichlet_data(grid.axes(), t), dtype=float)
        else:
            arr = np.full(grid.spatial_shape + (m,), float(dirichlet_data))
        if arr.shape == grid.spatial_shape:
            arr = np.broadcast_to(arr[..., None], grid.spatial_shape + (m,))
        return arr.reshape(N)[mask]

    g0 = bdry_values(grid.t0)
    if g0 is not None:
        u[mask] = g0

    times = grid.times()
    stored = [u.reshape(grid.spatial_shape + (m,)).copy()]
    stamps = [times[0]]
    l2 = [float(np.linalg.norm(u)) * grid.h ** (d / 2.0)]

    static_field = not (hasattr(fieldobj, "is_time_dependent") and fieldobj.is_time_dependent())
    step_op = None
    n_solves = 0
    for n in range(1, grid.n_steps + 1):
        t = times[n]
        f_vec = _rhs_vector(grid, rhs, t)
        g_vec = bdry_values(t)
        if not u.any() and not f_vec.any() and (g_vec is None or not g_vec.any()):
            pass  # state stays identically zero; skip assembly and solve
        else:
            if step_op is None or not static_field:
                step_op = assemble_step(fieldobj, grid, t, mass=sigma0, dt=grid.dt,
                                        averaging=averaging)
            b = u / grid.dt + f_vec
            if mask.any():
                b[mask] = g_vec if g_vec is not None else 0.0
            u = step_op.solve(b, x0=u, method=solver)
            n_solves += 1
        if on_step is not None:
            on_step(n, t, u.reshape(grid.spatial_shape + (m,)))
        if n % store_stride == 0 or n == grid.n_steps:
            stored.append(u.reshape(grid.spatial_shape + (m,)).copy())
            stamps.append(t)
            l2.append(float(np.linalg.norm(u)) * grid.h ** (d / 2.0))

    nf = NodeField(grid, np.array(stored), np.array(stamps))
    nf.info = {"n_solves": n_solves, "l2_trajectory": l2}
    return nf


def _exact_nodes(exact, grid, t):
    xs = np.meshgrid(*grid.axes(), indexing="ij") if grid.d > 1 else (grid.coords(0),)
    return np.asarray(exact.value(xs, t), dtype=float)


def _forcing_from_exact(fieldobj, exact, sigma0=0.0):
    """Analytic forcing F = u_t - div(A grad u) + sigma0 u for scalar m=1."""
    def F(axes, t):
        xs = np.meshgrid(*axes, indexing="ij") if len(axes) > 1 else (axes[0],)
        a = fieldobj.eval_grid(axes, t)
        out = np.asarray(exact.dt(xs, t), dtype=float) + sigma0 * exact.value(xs, t)
        d = len(axes)
        for i in range(d):
            da = fieldobj.eval_grid_dspace(axes, t, i)
            for j in range(d):
                out = out - da[..., i, j, 0, 0] * exact.dx(xs, t, j) \
                          - a[..., i, j, 0, 0] * exact.dxx(xs, t, i, j)
        return out
    return F


def manufactured_convergence(fieldobj, exact, box=(0.0, 1.0), T=0.1, levels=3,
                             h0=1 / 16, dt0=None, sigma0=0.0, d=1):
    """Observed convergence orders against a closed-form exact solution.

    Spatial study refines h with dt ~ h^2 (temporal error subordinate);
    temporal study refines dt at fixed fine h.  Returns (p_space, p_time)
    least-squares slopes over the refinement levels.
    """
    lo, hi = box[0] * np.ones(d), box[1] * np.ones(d)
    F = _forcing_from_exact(fieldobj, exact, sigma0)

    def run(h, dt):
        grid = SpaceTimeGrid(lo=lo, hi=hi, h=h, t0=0.0, t1=T, dt=dt,
                             bc="dirichlet", m=1)
        nf = time_march(fieldobj, grid, sigma0=sigma0, rhs=F,
                        initial=lambda axes, t: _exact_nodes(exact, grid, 0.0),
                        dirichlet_data=lambda axes, t: _exact_nodes(exact, grid, t))
        ue = _exact_nodes(exact, grid, grid.t1)
        err = nf.last()[..., 0] - ue
        return float(np.sqrt(np.mean(err ** 2)))

    if dt0 is None:
        dt0 = T / 32
    hs, errs_h = [], []
    for lev in range(levels):
        h = h0 / 2 ** lev
        nsub = 4 ** lev
        dt = (T / round(T / dt0)) / nsub  # dt ~ h^2 keeps the time error subordinate
        hs.append(h)
        errs_h.append(run(h, dt))
    p_space = float(np.polyfit(np.log(hs), np.log(errs_h), 1)[0])

    # temporal slope at a spatial resolution fine enough that the h^2 floor
    # sits well below the coarsest dt error
    h_fine = 1 / 512 if d == 1 else 1 / 64
    dts, errs_t = [], []
    for lev in range(levels):
        dt = T / (4 * 2 ** lev)
        dts.append(dt)
        errs_t.append(run(h_fine, dt))
    p_time = float(np.polyfit(np.log(dts), np.log(errs_t), 1)[0])
    return p_space, p_time


def resolution_check(eps, h, dt):
    """Oscillation-resolution rule for eps-scaled coefficients."""
    if h > eps / 16 + 1e-12:
        raise UnresolvedOscillation(f"h={h} must be <= eps/16 = {eps / 16}")
    if dt > eps ** 2 / 16 + 1e-12:
        raise UnresolvedOscillation(f"dt={dt} must be <= eps^2/16 = {eps ** 2 / 16}")


# -- snapshot I/O --------------------------------------------------------------


def save_nodefield(nf, path):
    """Dump a NodeField: flat values + JSON sidecar describing the grid.

    Order: time-major, then lexicographic spatial, then component.  .csv
    writes one value per line (12 significant digits); any other extension
    writes raw little-endian float64.
    """
    flat = np.ascontiguousarray(nf.values, dtype=float).ravel()
    tmp = path + ".tmp"
    if path.endswith(".csv"):
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("value\n")
            fh.write("\n".join("%.12g" % v for v in flat))
            fh.write("\n")
    else:
        flat.astype("<f8").tofile(tmp)
    os.replace(tmp, path)
    sidecar = {
        "grid": nf.grid.to_json(),
        "times": nf.times.tolist(),
        "comp_shape": list(nf.comp_shape),
        "layout": "time-major, lexicographic spatial, component",
        "format": "csv" if path.endswith(".csv") else "float64-le",
    }
    tmp = path + ".json.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
    os.replace(tmp, path + ".json")


def load_nodefield(path):
    with open(path + ".json", "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    grid = build_grid(sidecar["grid"])
    times = np.asarray(sidecar["times"], dtype=float)
    shape = (times.size,) + grid.spatial_shape + tuple(sidecar["comp_shape"])
    if sidecar["format"] == "csv":
        flat = np.loadtxt(path, skiprows=1)
    else:
        flat = np.fromfile(path, dtype="<f8")
    return NodeField(grid, flat.reshape(shape), times)
