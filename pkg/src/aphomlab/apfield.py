"""Almost-periodic coefficient tensor fields and their periodicity metrics.

A coefficient field is a finite trigonometric sum

    A(y, s) = A0 + sum_a  c_a * cos(k_a . y + lambda_a s + phase_a)

with real tensor amplitudes ``c_a`` indexed ``[i][j][alpha][beta]``.  The
module quantifies how close the field is to periodic through the shift
metric ``rho_hat(R)`` (best sup-norm self-matching error under shifts of
size <= R) and the derived decay modulus ``theta_hat(S, sigma)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from typing import NamedTuple

import numpy as np
from scipy.stats import qmc

from .errors import ConfigInvalid, EllipticityViolation

TAU = 2.0 * math.pi

__all__ = [
    "FrequencyAtom", "CoefficientTensorField", "ScaledField",
    "SamplingPolicy", "ThetaResult", "AlmostPeriodicityReport",
    "verify_ellipticity", "rho_hat", "theta_hat", "mean_value",
    "almost_periodicity_report", "field_from_json", "field_to_json",
    "scalar_field_1d",
]


def _tensor(arr, d, m, name):
    out = np.asarray(arr, dtype=float)
    if out.shape == ():
        out = np.full((d, d, m, m), float(out))
    if out.shape != (d, d, m, m):
        raise ConfigInvalid(f"{name} must have shape ({d},{d},{m},{m}), got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ConfigInvalid(f"{name} contains non-finite entries")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class FrequencyAtom:
    """One real cosine summand c * cos(k.y + lambda*s + phase)."""

    k: np.ndarray          # (d,) spatial wave-vector, radians per length
    lam: float             # temporal frequency, radians per time
    amplitude: np.ndarray  # (d, d, m, m)
    phase: np.ndarray      # (d, d, m, m) offset per entry

    @staticmethod
    def make(k, lam, amplitude, phase=0.0, d=None, m=None):
        k = np.atleast_1d(np.asarray(k, dtype=float))
        if d is None:
            d = k.size
        if k.shape != (d,):
            raise ConfigInvalid(f"atom k must have shape ({d},), got {k.shape}")
        if m is None:
            amp = np.asarray(amplitude, dtype=float)
            m = 1 if amp.shape == () else amp.shape[-1]
        k = k.copy()
        k.flags.writeable = False
        return FrequencyAtom(
            k=k, lam=float(lam),
            amplitude=_tensor(amplitude, d, m, "atom amplitude"),
            phase=_tensor(phase, d, m, "atom phase"))

    @property
    def weight(self):
        """Entrywise sup of the amplitude; the triangle-inequality weight."""
        return float(np.max(np.abs(self.amplitude)))


@dataclass(frozen=True)
class CoefficientTensorField:
    """Finite trigonometric-polynomial coefficient tensor A(y, s)."""

    d: int
    m: int
    mu: float
    constant_term: np.ndarray           # (d, d, m, m)
    atoms: tuple = dc_field(default_factory=tuple)

    def __post_init__(self):
        if not (0.0 < self.mu <= 1.0):
            raise ConfigInvalid(f"mu must lie in (0, 1], got {self.mu}")
        object.__setattr__(self, "constant_term",
                           _tensor(self.constant_term, self.d, self.m, "constant_term"))
        object.__setattr__(self, "atoms", tuple(self.atoms))
        for a in self.atoms:
            if a.k.shape != (self.d,) or a.amplitude.shape != (self.d, self.d, self.m, self.m):
                raise ConfigInvalid("atom shape inconsistent with field dimensions")

    # -- evaluation ---------------------------------------------------------

    def evaluate(self, y, s=0.0):
        """A at a single point; returns shape (d, d, m, m)."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        out = self.constant_term.copy()
        for a in self.atoms:
            ph = float(np.dot(a.k, y)) + a.lam * float(s)
            out += a.amplitude * np.cos(ph + a.phase)
        return out

    def eval_grid(self, coords, t):
        """A on a tensor grid; coords is a tuple of per-axis 1-D arrays.

        Returns shape (*spatial, d, d, m, m).
        """
        shape = tuple(np.size(c) for c in coords)
        out = np.broadcast_to(self.constant_term, shape + self.constant_term.shape).copy()
        for a in self.atoms:
            ph = np.asarray(a.lam * float(t))
            for i in range(self.d):
                sh = [1] * self.d
                sh[i] = -1
                ph = ph + a.k[i] * np.reshape(np.asarray(coords[i], dtype=float), sh)
            ph = np.broadcast_to(ph, shape)
            out += a.amplitude * np.cos(ph[..., None, None, None, None] + a.phase)
        return out

    def eval_grid_dspace(self, coords, t, axis):
        """Analytic spatial derivative dA/dy_axis on a tensor grid."""
        shape = tuple(np.size(c) for c in coords)
        out = np.zeros(shape + self.constant_term.shape)
        for a in self.atoms:
            if a.k[axis] == 0.0:
                continue
            ph = np.asarray(a.lam * float(t))
            for i in range(self.d):
                sh = [1] * self.d
                sh[i] = -1
                ph = ph + a.k[i] * np.reshape(np.asarray(coords[i], dtype=float), sh)
            ph = np.broadcast_to(ph, shape)
            out -= a.amplitude * a.k[axis] * np.sin(ph[..., None, None, None, None] + a.phase)
        return out

    def eval_points(self, pts, s):
        """A at scattered points pts (N, d), times s scalar or (N,)."""
        pts = np.asarray(pts, dtype=float).reshape(-1, self.d)
        s = np.broadcast_to(np.asarray(s, dtype=float), (pts.shape[0],))
        out = np.broadcast_to(self.constant_term,
                              (pts.shape[0],) + self.constant_term.shape).copy()
        for a in self.atoms:
            ph = pts @ a.k + a.lam * s
            out += a.amplitude * np.cos(ph[:, None, None, None, None] + a.phase)
        return out

    # -- structure ----------------------------------------------------------

    @property
    def sup_deviation(self):
        """Triangle-inequality bound on sup |A - A0|: sum of atom weights."""
        return float(sum(a.weight for a in self.atoms))

    def frequency_rows(self):
        """Space-time frequency matrix, one row (k_a, lambda_a) per atom."""
        if not self.atoms:
            return np.zeros((0, self.d + 1)), np.zeros(0)
        rows = np.array([list(a.k) + [a.lam] for a in self.atoms], dtype=float)
        w = np.array([a.weight for a in self.atoms], dtype=float)
        return rows, w

    def lattice_periods(self):
        """Per-axis common periods (spatial axes then time).

        Entry 0.0 means the field does not depend on that coordinate; None
        means the frequencies along that axis are incommensurate (no common
        period).  Returns a list of length d+1.
        """
        rows, _ = self.frequency_rows()
        periods = []
        for ax in range(self.d + 1):
            vals = [v for v in rows[:, ax]] if rows.size else []
            periods.append(_common_period(vals))
        return periods

    def spatial_periods(self):
        return self.lattice_periods()[:self.d]

    def shortest_spatial_period(self):
        """Smallest single-atom period 2pi/|k_i|; None for constant fields."""
        best = None
        for a in self.atoms:
            for ki in a.k:
                if ki != 0.0:
                    p = TAU / abs(ki)
                    best = p if best is None else min(best, p)
        return best

    def longest_atom_period(self):
        """Largest single-atom spatial period; None if space-independent."""
        best = None
        for a in self.atoms:
            for ki in a.k:
                if ki != 0.0:
                    p = TAU / abs(ki)
                    best = p if best is None else max(best, p)
        return best

    def fastest_temporal_period(self):
        best = None
        for a in self.atoms:
            if a.lam != 0.0:
                p = TAU / abs(a.lam)
                best = p if best is None else min(best, p)
        return best

    def slowest_temporal_period(self):
        best = None
        for a in self.atoms:
            if a.lam != 0.0:
                p = TAU / abs(a.lam)
                best = p if best is None else max(best, p)
        return best

    def is_time_dependent(self):
        return any(a.lam != 0.0 for a in self.atoms)

    def transpose(self):
        """Field with a_{ij}^{ab} -> a_{ji}^{ba} (the adjoint coefficients)."""
        swap = lambda T: np.ascontiguousarray(np.transpose(T, (1, 0, 3, 2)))
        atoms = tuple(FrequencyAtom.make(a.k, a.lam, swap(a.amplitude), swap(a.phase))
                      for a in self.atoms)
        return CoefficientTensorField(self.d, self.m, self.mu,
                                      swap(self.constant_term), atoms)

    def time_reversed(self, t_ref):
        """Field evaluating to a(y, t_ref - s): lam -> -lam, phase += lam*t_ref."""
        atoms = tuple(FrequencyAtom.make(a.k, -a.lam, a.amplitude,
                                         a.phase + a.lam * t_ref)
                      for a in self.atoms)
        return CoefficientTensorField(self.d, self.m, self.mu,
                                      self.constant_term, atoms)


class ScaledField:
    """View of a base field at the oscillatory scaling (x/eps, t/eps^2)."""

    def __init__(self, base, eps):
        if eps <= 0:
            raise ConfigInvalid("eps must be positive")
        self.base = base
        self.eps = float(eps)
        self.d = base.d
        self.m = base.m
        self.mu = base.mu

    def evaluate(self, y, s=0.0):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return self.base.evaluate(y / self.eps, s / self.eps ** 2)

    def eval_grid(self, coords, t):
        sc = tuple(np.asarray(c, dtype=float) / self.eps for c in coords)
        return self.base.eval_grid(sc, t / self.eps ** 2)

    def eval_grid_dspace(self, coords, t, axis):
        sc = tuple(np.asarray(c, dtype=float) / self.eps for c in coords)
        return self.base.eval_grid_dspace(sc, t / self.eps ** 2, axis) / self.eps

    def shortest_spatial_period(self):
        p = self.base.shortest_spatial_period()
        return None if p is None else p * self.eps

    def fastest_temporal_period(self):
        p = self.base.fastest_temporal_period()
        return None if p is None else p * self.eps ** 2

    def is_time_dependent(self):
        return self.base.is_time_dependent()


def _common_period(vals):
    """Smallest L > 0 with v*L in 2*pi*Z for every frequency v (radians).

    Returns 0.0 when all v are zero (free axis) and None when the
    frequencies are incommensurate at desk precision.
    """
    fracs = []
    for v in vals:
        if v == 0.0:
            continue
        r = v / TAU
        fr = Fraction(r).limit_denominator(1000)
        if abs(float(fr) - r) > 1e-12 * max(1.0, abs(r)):
            return None
        fracs.append(fr)
    if not fracs:
        return 0.0
    qlcm = 1
    for fr in fracs:
        qlcm = qlcm * fr.denominator // math.gcd(qlcm, fr.denominator)
    nums = [abs(fr.numerator) * (qlcm // fr.denominator) for fr in fracs]
    g = 0
    for n in nums:
        g = math.gcd(g, n)
    return qlcm / g


# -- ellipticity --------------------------------------------------------------


def _rayleigh_extremes(tensor, d, m):
    # tensor (d,d,m,m) -> extreme Rayleigh quotients of the (dm x dm) form
    q = np.transpose(tensor, (0, 2, 1, 3)).reshape(d * m, d * m)
    sym = 0.5 * (q + q.T)
    ev = np.linalg.eigvalsh(sym)
    return float(ev[0]), float(ev[-1])


def verify_ellipticity(field, n_samples=256, seed=0, raise_on_violation=True):
    """Sample Rayleigh quotients of A over pseudo-random space-time points.

    Returns a report dict with the extreme quotients and a pass flag.
    Deterministic candidate points aligning each atom's phase with 0 and pi
    are always included, so single-atom extremes are found exactly.
    """
    if n_samples < 1:
        raise ConfigInvalid("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    span = 8.0 * max((field.longest_atom_period() or 1.0), 1.0)
    pts = rng.uniform(-span, span, size=(int(n_samples), field.d))
    ss = rng.uniform(-span, span, size=int(n_samples))

    extra_pts, extra_ss = [], []
    for a in field.atoms:
        base = float(a.phase.flat[0])
        for target in (0.0, math.pi):
            kk = float(np.dot(a.k, a.k))
            if kk > 0:
                extra_pts.append((target - base) * a.k / kk)
                extra_ss.append(0.0)
            elif a.lam != 0.0:
                extra_pts.append(np.zeros(field.d))
                extra_ss.append((target - base) / a.lam)
    if extra_pts:
        pts = np.vstack([pts, np.array(extra_pts)])
        ss = np.concatenate([ss, np.array(extra_ss)])

    tensors = field.eval_points(pts, ss)
    min_q, max_q = math.inf, -math.inf
    witness = None
    for idx in range(tensors.shape[0]):
        lo, hi = _rayleigh_extremes(tensors[idx], field.d, field.m)
        if lo < min_q:
            min_q, witness = lo, (pts[idx].copy(), float(ss[idx]))
        if hi > max_q:
            max_q = hi
    ok = (min_q >= field.mu - 1e-12) and (max_q <= 1.0 / field.mu + 1e-12)
    report = {"min_quotient": min_q, "max_quotient": max_q, "ok": bool(ok),
              "witness": witness, "n_samples": int(tensors.shape[0])}
    if not ok and raise_on_violation:
        raise EllipticityViolation(
            f"Rayleigh quotient range [{min_q:.6g}, {max_q:.6g}] leaves "
            f"[{field.mu:.6g}, {1.0 / field.mu:.6g}]", witness=witness)
    return report


# -- shift metric rho_hat ------------------------------------------------------


@dataclass(frozen=True)
class SamplingPolicy:
    """Deterministic sampling knobs for the shift metric."""

    n_shifts: int = 256
    box_factor: float = 64.0
    coarse: int = 21
    refine_top: int = 4
    refine_iters: int = 96
    seed: int = 0


def _objective(freqs, weights, w_disp):
    """Triangle-inequality shift mismatch for displacements W = Y - Z.

    freqs (n_atoms, D), weights (n_atoms,), w_disp (..., D);
    returns sum_a w_a * |e^{i freq_a . W} - 1| = sum_a w_a * 2|sin(freq_a.W/2)|.
    """
    ph = w_disp @ freqs.T
    ph = ph - TAU * np.round(ph / TAU)
    return (2.0 * np.abs(np.sin(0.5 * ph))) @ weights


def _compass_refine(freqs, weights, y_pts, z0, R, iters):
    """Batched pattern search minimizing the objective over |Z| <= R."""
    n, D = z0.shape
    dirs = np.array([v for v in np.ndindex(*([3] * D))], dtype=float) - 1.0
    dirs = dirs[np.any(dirs != 0.0, axis=1)]
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    z = z0.copy()
    best = _objective(freqs, weights, y_pts - z)
    step = np.full(n, 0.25 * R)
    for _ in range(iters):
        trial = z[:, None, :] + step[:, None, None] * dirs[None, :, :]
        nrm = np.linalg.norm(trial, axis=2)
        scale = np.minimum(1.0, R / np.maximum(nrm, 1e-300))
        trial *= scale[:, :, None]
        vals = _objective(freqs, weights, y_pts[:, None, :] - trial)
        k = np.argmin(vals, axis=1)
        vmin = vals[np.arange(n), k]
        improved = vmin < best
        z[improved] = trial[np.arange(n), k][improved]
        best = np.where(improved, vmin, best)
        step = np.where(improved, step, 0.5 * step)
        if step.max() < 1e-12 * max(R, 1.0):
            break
    return best


def rho_hat(field, R, sampling=None):
    """Surrogate shift metric: worst sampled shift Y vs best |Z| <= R match.

    Uses the atom-coefficient triangle-inequality bound
    sum_a ||c_a||_inf |e^{i(k_a.Y + lam_a Y_t)} - e^{i(k_a.Z + lam_a Z_t)}|,
    an upper bound of the sup-norm difference for each shift pair; the outer
    max is over low-discrepancy shifts, so the result is a surrogate (inner
    bound biased high, outer sample biased low), not a two-sided estimate.
    """
    if R <= 0:
        raise ConfigInvalid("R must be positive")
    pol = sampling or SamplingPolicy()
    freqs, weights = field.frequency_rows()
    if freqs.shape[0] == 0 or np.all(weights == 0.0):
        return 0.0
    D = field.d + 1

    halton = qmc.Halton(d=D, scramble=True, seed=pol.seed)
    y_pts = (halton.random(pol.n_shifts) - 0.5) * (pol.box_factor * R)

    # shared coarse grid of candidate Z inside the ball |Z| <= R
    ax = np.linspace(-R, R, pol.coarse)
    zg = np.stack(np.meshgrid(*([ax] * D), indexing="ij"), axis=-1).reshape(-1, D)
    zg = zg[np.linalg.norm(zg, axis=1) <= R + 1e-15]
    coarse_vals = _objective(freqs, weights, y_pts[:, None, :] - zg[None, :, :])

    ntop = min(pol.refine_top, zg.shape[0])
    top_idx = np.argpartition(coarse_vals, ntop - 1, axis=1)[:, :ntop]
    starts = [zg[top_idx[:, c]] for c in range(ntop)]

    # lattice nearest-image candidate when every axis has a common period
    periods = field.lattice_periods()
    if all(p is not None for p in periods):
        z_lat = y_pts.copy()
        for axi, L in enumerate(periods):
            if L and L > 0.0:
                z_lat[:, axi] = y_pts[:, axi] - L * np.round(y_pts[:, axi] / L)
        inside = np.linalg.norm(z_lat, axis=1) <= R + 1e-15
        if np.any(inside):
            # clip outside points onto the nearest coarse start instead
            z_lat[~inside] = starts[0][~inside]
            starts.append(z_lat)

    n_st = len(starts)
    y_rep = np.repeat(y_pts, n_st, axis=0)
    z0 = np.stack(starts, axis=1).reshape(-1, D)
    best = _compass_refine(freqs, weights, y_rep, z0, R, pol.refine_iters)
    per_y = best.reshape(pol.n_shifts, n_st).min(axis=1)
    return float(per_y.max())


class ThetaResult(NamedTuple):
    value: float
    R: float

    def __float__(self):
        return float(self.value)


def theta_hat(field, S, sigma, sampling=None, n_grid=32):
    """Decay modulus: min over a geometric R-grid of rho_hat(R) + (R/S)^sigma."""
    if S < 1:
        raise ConfigInvalid("S must be >= 1")
    if not (0.0 < sigma <= 1.0):
        raise ConfigInvalid("sigma must lie in (0, 1]")
    if not field.atoms:
        # rho_hat == 0 identically; the infimum over R -> 0+ is 0
        return ThetaResult(0.0, 0.0)
    # the grid floor is S-independent so the small-R sampling bias of
    # rho_hat enters every scale identically; an S-scaled floor would
    # make theta grow with S on strongly aperiodic fields
    grid = np.geomspace(min(1e-3, S), S, n_grid)
    vals = np.array([rho_hat(field, R, sampling) + (R / S) ** sigma for R in grid])
    i = int(np.argmin(vals))
    return ThetaResult(float(vals[i]), float(grid[i]))


def mean_value(obj, window=None, richardson=False):
    """Mean value: exact constant term for symbolic fields.

    Grid fields (NodeField) are averaged over the window by
    ``mesh.window_mean``; this wrapper dispatches on input type so both can
    be requested through one entry point.
    """
    if isinstance(obj, (CoefficientTensorField, ScaledField)):
        base = obj.base if isinstance(obj, ScaledField) else obj
        return base.constant_term.copy()
    from .mesh import window_mean
    return window_mean(obj, window, richardson=richardson)


@dataclass
class AlmostPeriodicityReport:
    rho_samples: list          # (R, rho_hat) after monotone envelope
    theta_samples: list        # (S, sigma, theta_hat)
    decay_fit: dict            # {N, C, n_points}
    c_sigma: float             # fitted constant in theta_sigma <= C * theta_1^sigma
    notes: tuple = ()


def decay_fit(field, R_grid, sampling=None):
    """Least-squares exponent N in rho(R) ~ C [log R]^{-N} over R_grid."""
    rows = []
    for R in R_grid:
        if R <= math.e:
            continue
        v = rho_hat(field, R, sampling)
        if v > 1e-13:
            rows.append((math.log(math.log(R)), math.log(v)))
    if len(rows) < 2:
        return {"N": math.inf, "C": 0.0, "n_points": len(rows)}
    x = np.array([r[0] for r in rows])
    y = np.array([r[1] for r in rows])
    slope, intercept = np.polyfit(x, y, 1)
    return {"N": float(-slope), "C": float(math.exp(intercept)), "n_points": len(rows)}


def almost_periodicity_report(field, R_grid=None, S_grid=None, sigma=0.5, sampling=None):
    """Survey rho_hat and theta_hat over grids, with the decay-exponent fit."""
    if R_grid is None:
        R_grid = np.geomspace(0.25, 64.0, 17)
    if S_grid is None:
        S_grid = [2.0, 4.0, 8.0, 16.0, 32.0]
    rho_raw = [rho_hat(field, float(R), sampling) for R in R_grid]
    env = np.minimum.accumulate(np.asarray(rho_raw))
    rho_samples = [(float(R), float(v)) for R, v in zip(R_grid, env)]

    theta_samples = []
    c_sigma = 0.0
    for S in S_grid:
        ts = theta_hat(field, float(S), sigma, sampling)
        t1 = theta_hat(field, float(S), 1.0, sampling)
        theta_samples.append((float(S), float(sigma), ts.value))
        if t1.value > 1e-14:
            c_sigma = max(c_sigma, ts.value / t1.value ** sigma)

    notes = (
        "rho_hat is a surrogate: the inner minimum uses the atom triangle-"
        "inequality bound (biased high), the outer sup is sampled (biased low).",
        "rho samples reported after a monotone nonincreasing envelope pass.",
    )
    return AlmostPeriodicityReport(
        rho_samples=rho_samples, theta_samples=theta_samples,
        decay_fit=decay_fit(field, R_grid, sampling), c_sigma=float(c_sigma),
        notes=notes)


# -- JSON interface ------------------------------------------------------------


def field_from_json(src):
    """Load a field from a JSON dict, JSON string, or file path."""
    if isinstance(src, (str,)) and src.lstrip().startswith("{"):
        obj = json.loads(src)
    elif isinstance(src, str):
        with open(src, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    elif isinstance(src, dict):
        obj = src
    else:
        raise ConfigInvalid("field source must be a dict, JSON string, or path")
    try:
        d = int(obj["d"])
        m = int(obj["m"])
        mu = float(obj["mu"])
        a0 = obj["constant_term"]
    except KeyError as exc:
        raise ConfigInvalid(f"field JSON missing key {exc}") from None
    atoms = []
    for entry in obj.get("atoms", []):
        try:
            atoms.append(FrequencyAtom.make(
                entry["k"], entry.get("lambda", 0.0), entry["amplitude"],
                phase=entry.get("phase", 0.0), d=d, m=m))
        except KeyError as exc:
            raise ConfigInvalid(f"atom missing key {exc}") from None
    return CoefficientTensorField(d=d, m=m, mu=mu, constant_term=a0, atoms=tuple(atoms))


def field_to_json(fieldobj):
    return {
        "d": fieldobj.d, "m": fieldobj.m, "mu": fieldobj.mu,
        "constant_term": np.asarray(fieldobj.constant_term).tolist(),
        "atoms": [
            {"k": a.k.tolist(), "lambda": a.lam,
             "phase": np.asarray(a.phase).tolist(),
             "amplitude": np.asarray(a.amplitude).tolist()}
            for a in fieldobj.atoms
        ],
    }


def scalar_field_1d(a0, atoms=(), mu=None):
    """Convenience builder for d=1, m=1 scalar fields.

    atoms: iterable of (c, k, lam, phase) tuples with scalar entries.
    """
    made = tuple(FrequencyAtom.make([k], lam, c, phase=ph, d=1, m=1)
                 for (c, k, lam, ph) in atoms)
    if mu is None:
        dev = sum(abs(float(np.asarray(a.amplitude).flat[0])) for a in made)
        lo = float(np.asarray(a0).flat[0] if np.ndim(a0) else a0) - dev
        mu = min(max(lo, 1e-6), 1.0)
    return CoefficientTensorField(d=1, m=1, mu=mu, constant_term=a0, atoms=made)
