"""Experiment orchestration: JSON configs in, CSV tables and SVG plots out.

Ten experiment kinds cover the laboratory's studies.  Each run writes its
artifacts plus a ``manifest.json`` recording the config hash, the software
version, every produced file, and a pass/fail verdict per built-in check.
Reruns with the same config and seed (single-threaded) reproduce the CSVs
byte for byte.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import __version__
from .apfield import field_from_json, field_to_json, theta_hat
from .corrector import (CorrectorPolicy, assemble_bS, effective_tensor,
                        export_corrector_set, solve_corrector)
from .errors import ConfigInvalid, LabError
from .expressions import SineProduct
from .fluxcor import build_flux_corrector, decomposition_residual, solve_flux_potential
from .ivpsolve import ProblemSpec, fundamental_probe, solve_eps
from .mesh import NodeField, build_grid
from .regprobe import (GraphDomain, boundary_lipschitz_profile, holder_seminorm,
                       interior_lipschitz_profile)
from .smoothing import CutoffSpec, k_eps, smooth
from .svgplot import line_plot
from . import twoscale

__all__ = [
    "SCHEMA_VERSION", "ExperimentConfig", "RunManifest",
    "validate_config", "config_hash", "run", "list_experiments", "main",
]

SCHEMA_VERSION = 1

# kind -> (theorem tag, summary, required params)
_CATALOG = (
    ("corrector", "Lemma 6.42",
     "approximate correctors chi_S with sup/energy diagnostics", ("S_list",)),
    ("effective", "Theorem 6.32",
     "effective tensor across regularization scales S", ("S_list",)),
    ("flux", "Theorem 7.35",
     "flux potential, skew corrector, decomposition residual", ("S",)),
    ("smoothing", "Lemmas S-1/S-2",
     "smoothing operator contraction, gradient order, support", ("eps_list",)),
    ("rate", "Theorem 1.3",
     "convergence rate of u_eps to u_0 against the modulus", ("eps_list", "sigma")),
    ("modulus", "Lemma (Lemma-decay)",
     "modulus eta(t) assembly, decay fit, Dini integral", ("sigma",)),
    ("lipschitz-interior", "Theorem 1.5",
     "interior large-scale Lipschitz profile over r in [eps, R]", ("eps_list",)),
    ("lipschitz-boundary", "Theorem 1.6",
     "boundary Lipschitz profile at a graph-domain boundary point", ("eps_list",)),
    ("fundamental", "Lemma 6.15",
     "fundamental-solution Gaussian envelope fit (kappa, C)", ("eps_list",)),
    ("holder", "Theorem (Holder)",
     "interior parabolic Holder seminorm of u_eps vs data", ("eps_list", "alpha")),
)

KINDS = tuple(k for k, _, _, _ in _CATALOG)

_PKG_FIELD_DIR = os.path.join(os.path.dirname(__file__), "fields")


# -- configs ----------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    kind: str
    field: str                   # as written in the config (name or path)
    field_path: str              # resolved absolute path
    params: dict
    seed: int = 0
    out_dir: str = None
    raw: dict = dc_field(default_factory=dict, repr=False)


def config_hash(obj):
    """sha256 over the canonical config content.

    out_dir is excluded: the hash identifies the experiment, not where its
    artifacts land.
    """
    core = {"schema": obj.get("schema"), "kind": obj.get("kind"),
            "field": obj.get("field"), "params": obj.get("params", {}),
            "seed": obj.get("seed", 0)}
    blob = json.dumps(core, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _resolve_field(name, base_dir):
    if not isinstance(name, str) or not name:
        raise ConfigInvalid("config needs a field: packaged name or JSON path")
    candidates = []
    if os.path.isabs(name):
        candidates.append(name)
    else:
        candidates.append(os.path.join(base_dir, name))
        candidates.append(name)
    if not name.endswith(".json"):
        candidates.append(os.path.join(_PKG_FIELD_DIR, name + ".json"))
    for c in candidates:
        if os.path.isfile(c):
            return os.path.abspath(c)
    shipped = sorted(p[:-5] for p in os.listdir(_PKG_FIELD_DIR) if p.endswith(".json"))
    raise ConfigInvalid(f"field {name!r} not found; shipped fields: {', '.join(shipped)}")


def _num_list(params, key):
    val = params.get(key)
    if not isinstance(val, (list, tuple)) or not val:
        raise ConfigInvalid(f"param {key!r} must be a nonempty list of numbers")
    out = []
    for v in val:
        try:
            v = float(v)
        except (TypeError, ValueError):
            raise ConfigInvalid(f"param {key!r} has a non-numeric entry {v!r}") from None
        if not (v > 0) or not math.isfinite(v):
            raise ConfigInvalid(f"param {key!r} entries must be positive, got {v}")
        out.append(v)
    return out


def validate_config(obj, base_dir="."):
    """Check schema, kind, field, and kind-specific parameters.

    Grid overrides must resolve the finest requested scale (h <= eps/8,
    dt <= eps^2/8) or the run is refused.
    """
    if not isinstance(obj, dict):
        raise ConfigInvalid("config must be a JSON object")
    if obj.get("schema") != SCHEMA_VERSION:
        raise ConfigInvalid(f"config schema must be {SCHEMA_VERSION}, got {obj.get('schema')!r}")
    kind = obj.get("kind")
    if kind not in KINDS:
        raise ConfigInvalid(f"unknown kind {kind!r}; run `aphomlab list` for the catalog")
    params = obj.get("params", {})
    if not isinstance(params, dict):
        raise ConfigInvalid("params must be an object")
    required = next(req for k, _, _, req in _CATALOG if k == kind)
    for key in required:
        if key not in params:
            raise ConfigInvalid(f"kind {kind!r} requires param {key!r}")
    for key in ("S_list", "eps_list", "h_list", "t_list", "gammas"):
        if key in params:
            _num_list(params, key)
    for key in ("S", "sigma", "alpha", "T", "R", "h", "dt", "L", "horizon"):
        if key in params:
            try:
                v = float(params[key])
            except (TypeError, ValueError):
                raise ConfigInvalid(f"param {key!r} must be a number") from None
            if not math.isfinite(v) or v <= 0:
                raise ConfigInvalid(f"param {key!r} must be positive and finite")
    if "alpha" in params and not (0.0 < float(params["alpha"]) < 1.0):
        raise ConfigInvalid("alpha must lie in (0, 1)")
    if "sigma" in params and not (0.0 < float(params["sigma"]) <= 1.0):
        raise ConfigInvalid("sigma must lie in (0, 1]")
    if "eps_list" in params:
        eps_min = min(_num_list(params, "eps_list"))
        for key in ("h", "h0"):
            if key in params and float(params[key]) > eps_min / 8 + 1e-15:
                raise ConfigInvalid(
                    f"grid override {key}={params[key]} does not resolve "
                    f"eps={eps_min} (need {key} <= eps/8)")
        for key in ("dt", "dt0"):
            if key in params and float(params[key]) > eps_min ** 2 / 8 + 1e-15:
                raise ConfigInvalid(
                    f"grid override {key}={params[key]} does not resolve "
                    f"eps={eps_min} (need {key} <= eps^2/8)")
    seed = obj.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigInvalid("seed must be a nonnegative integer")
    fpath = _resolve_field(obj.get("field"), base_dir)
    out_dir = obj.get("out_dir")
    if out_dir is not None and not isinstance(out_dir, str):
        raise ConfigInvalid("out_dir must be a string")
    return ExperimentConfig(kind=kind, field=obj.get("field"), field_path=fpath,
                            params=params, seed=seed, out_dir=out_dir, raw=obj)


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config is not valid JSON: {exc}") from None
    return validate_config(obj, base_dir=os.path.dirname(os.path.abspath(path)))


# -- manifest ---------------------------------------------------------------------


@dataclass
class RunManifest:
    kind: str
    config_hash: str
    version: str
    elapsed_s: float
    files: list                  # {name, bytes, sha256} per artifact
    checks: dict                 # name -> bool
    notes: dict
    seed: int = 0

    @property
    def passed(self):
        return all(self.checks.values())

    def to_json(self, path):
        obj = {"schema": SCHEMA_VERSION, "kind": self.kind,
               "config_hash": self.config_hash, "version": self.version,
               "seed": self.seed, "elapsed_s": round(self.elapsed_s, 3),
               "files": self.files, "checks": self.checks,
               "passed": self.passed, "notes": self.notes}
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=1, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, path)
        return path


def _sanitize(obj):
    """Strict-JSON form: non-finite floats become strings, arrays lists."""
    if isinstance(obj, dict):
        return {str(k): _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _sanitize(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, (bool, int, float, str)) or obj is None:
        return obj
    return str(obj)


def _write_csv(path, cols, rows):
    lines = [",".join(cols)]
    for row in rows:
        cells = []
        for c in cols:
            v = row[c]
            cells.append(v if isinstance(v, str) else "%.12g" % float(v))
        lines.append(",".join(cells))
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)
    return path


def _pmap(fn, items, jobs):
    if jobs and jobs > 1 and len(items) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
            return list(ex.map(fn, items))
    return [fn(it) for it in items]


def _policy_kwargs(params):
    kw = {}
    for key in ("h", "dt", "L"):
        if key in params:
            kw[key] = float(params[key])
    return kw


def _default_problem(params, d=1):
    T = float(params.get("T", 0.25))
    prob = params.get("problem")
    if isinstance(prob, dict):
        return ProblemSpec.from_json(prob)
    return ProblemSpec(lo=[0.0] * d, hi=[1.0] * d, T=T,
                       F=SineProduct(amp=1.0, k=[math.pi] * d))


def _harmonic_mean(fieldobj, cs):
    """Window mean of 1/a on the corrector grid; d=1, m=1, static only."""
    grid = cs.grid
    a = fieldobj.eval_grid(grid.axes(), 0.0)[..., 0, 0, 0, 0]
    from .mesh import window_mask
    mask = window_mask(grid, cs.window)
    return 1.0 / float(np.mean(1.0 / a[mask]))


def _is_static_scalar(fieldobj):
    return (fieldobj.d == 1 and fieldobj.m == 1
            and all(a.lam == 0.0 for a in fieldobj.atoms))


# -- kind runners -----------------------------------------------------------------
# Each returns (files, checks, notes); files are paths under out.


def _w_corrector(args):
    fd, S, polkw = args
    f = field_from_json(fd)
    pol = CorrectorPolicy(**polkw) if polkw else None
    return solve_corrector(f, S, pol)


def _kind_corrector(cfg, fieldobj, out, jobs):
    params = cfg.params
    S_list = sorted(_num_list(params, "S_list"))
    sigma = float(params.get("sigma", 0.5))
    fd = field_to_json(fieldobj)
    polkw = _policy_kwargs(params)
    sets = _pmap(_w_corrector, [(fd, S, polkw) for S in S_list], jobs)

    files, rows = [], []
    for cs in sets:
        files += export_corrector_set(cs, out, basename=f"corrector_S{cs.S:g}")
        th = theta_hat(fieldobj, cs.S, sigma).value
        d = cs.diagnostics
        rows.append({"S": cs.S, "sup_norm": d["sup_norm"], "energy": d["energy"],
                     "mass_term": d["mass_term"], "theta_sigma": th,
                     "sup_over_S_theta": d["sup_norm"] / (cs.S * th) if th > 0 else float("nan")})
    files.append(_write_csv(os.path.join(out, "corrector_summary.csv"),
                            ("S", "sup_norm", "energy", "mass_term",
                             "theta_sigma", "sup_over_S_theta"), rows))
    files.append(line_plot(os.path.join(out, "theta_vs_S.svg"),
                           [("theta_sigma", S_list, [r["theta_sigma"] for r in rows]),
                            ("sup_norm", S_list, [r["sup_norm"] for r in rows])],
                           "S", "value", title="decay modulus and corrector sup",
                           logx=True, logy=True))

    checks, notes = {}, {"sigma": sigma}
    means = [float(np.max(np.abs(np.asarray(cs.diagnostics["mean"])))) for cs in sets]
    checks["mean_zero"] = max(means) <= 1e-10
    if _is_static_scalar(fieldobj):
        cs = sets[-1]
        eff = effective_tensor(fieldobj, cs)
        hm = _harmonic_mean(fieldobj, cs)
        rel = abs(float(eff.a_hat[0, 0, 0, 0]) - hm) / hm
        checks["harmonic_mean"] = rel <= 0.05
        notes["harmonic_mean"] = {"oracle": hm, "a_hat": float(eff.a_hat[0, 0, 0, 0]),
                                  "rel_err": rel}
    return files, checks, notes


def _w_effective(args):
    fd, S, polkw, sigma = args
    f = field_from_json(fd)
    pol = CorrectorPolicy(**polkw) if polkw else None
    cs = solve_corrector(f, S, pol)
    eff = effective_tensor(f, cs)
    th = theta_hat(f, S, sigma).value
    return {"S": S, "a_hat": eff.a_hat.tolist(), "theta": th,
            "window_hm": _harmonic_mean(f, cs) if _is_static_scalar(f) else None}


def _kind_effective(cfg, fieldobj, out, jobs):
    params = cfg.params
    S_list = sorted(_num_list(params, "S_list"))
    sigma = float(params.get("sigma", 0.5))
    fd = field_to_json(fieldobj)
    polkw = _policy_kwargs(params)
    recs = _pmap(_w_effective, [(fd, S, polkw, sigma) for S in S_list], jobs)

    d, m = fieldobj.d, fieldobj.m
    cols = ["S"] + [f"a_hat_{i}{j}_{al}{be}" for i in range(d) for j in range(d)
                    for al in range(m) for be in range(m)] + ["theta_sigma"]
    rows = []
    for r in recs:
        row = {"S": r["S"], "theta_sigma": r["theta"]}
        ah = np.asarray(r["a_hat"])
        for i in range(d):
            for j in range(d):
                for al in range(m):
                    for be in range(m):
                        row[f"a_hat_{i}{j}_{al}{be}"] = float(ah[i, j, al, be])
        rows.append(row)
    files = [_write_csv(os.path.join(out, "effective.csv"), cols, rows)]

    checks, notes = {}, {"sigma": sigma}
    mats = [np.asarray(r["a_hat"]) for r in recs]
    if _is_static_scalar(fieldobj):
        hm = recs[-1]["window_hm"]
        errs = [abs(float(a[0, 0, 0, 0]) - hm) / hm for a in mats]
        checks["harmonic_mean"] = errs[-1] <= 0.05
        checks["improves"] = all(b <= a * 1.05 for a, b in zip(errs, errs[1:]))
        notes["oracle"] = {"harmonic_mean": hm, "rel_errs": errs}
        ref_errs = errs
    else:
        gaps = [float(np.max(np.abs(a - mats[-1]))) for a in mats[:-1]]
        checks["improves"] = all(b <= a * 1.05 for a, b in zip(gaps, gaps[1:]))
        notes["cauchy_gaps"] = gaps
        ref_errs = gaps + [float("nan")]
    files.append(line_plot(os.path.join(out, "effective_error_vs_S.svg"),
                           [("deviation", S_list[:len(ref_errs)], ref_errs)],
                           "S", "deviation", title="effective tensor convergence",
                           logx=True, logy=True))
    return files, checks, notes


def _w_flux(args):
    fd, S, h, polkw = args
    f = field_from_json(fd)
    kw = dict(polkw)
    kw["h"] = h
    cs = solve_corrector(f, S, CorrectorPolicy(**kw))
    eff = effective_tensor(f, cs)
    b = assemble_bS(f, cs, eff)
    fp = solve_flux_potential(b, S)
    fc = build_flux_corrector(fp)
    res = decomposition_residual(b, fp, fc)
    return {"h": h, "rel_l2": res["rel_l2"], "abs_l2": res["abs_l2"],
            "skew_defect": fc.skew_defect(), "sup_phi": fc.sup_phi()}


def _kind_flux(cfg, fieldobj, out, jobs):
    params = cfg.params
    S = float(params["S"])
    h_list = sorted(_num_list(params, "h_list"), reverse=True) if "h_list" in params \
        else [1 / 128, 1 / 256]
    fd = field_to_json(fieldobj)
    polkw = {k: v for k, v in _policy_kwargs(params).items() if k != "h"}
    recs = _pmap(_w_flux, [(fd, S, h, polkw) for h in h_list], jobs)

    files = [_write_csv(os.path.join(out, "flux_residual.csv"),
                        ("h", "rel_l2", "abs_l2", "skew_defect", "sup_phi"), recs)]
    files.append(line_plot(os.path.join(out, "flux_residual_vs_h.svg"),
                           [("rel residual", [r["h"] for r in recs],
                             [r["rel_l2"] for r in recs])],
                           "h", "relative residual", title="flux decomposition defect",
                           logx=True, logy=True))
    checks = {"residual_small": recs[-1]["rel_l2"] <= 5e-2,
              "skew_exact": max(r["skew_defect"] for r in recs) <= 1e-12}
    if len(recs) >= 2:
        checks["first_order"] = all(a["rel_l2"] / max(b["rel_l2"], 1e-300) >= 1.6
                                    for a, b in zip(recs, recs[1:]))
    return files, checks, {"S": S}


def _kind_smoothing(cfg, fieldobj, out, jobs):
    params = cfg.params
    eps_list = sorted(_num_list(params, "eps_list"), reverse=True)
    rng = np.random.default_rng(cfg.seed)
    h = float(params.get("h", min(eps_list) / 8))
    dt = float(params.get("dt", min(eps_list) ** 2 / 8))
    T = float(params.get("T", 0.25))
    # smoothing bounds on a periodic grid; the collar support check needs a
    # dirichlet grid (a torus has no boundary collar)
    grid = build_grid(lo=[0.0], hi=[1.0], h=h, t1=T, dt=dt, bc="periodic")
    gridb = build_grid(lo=[0.0], hi=[1.0], h=h, t1=T, dt=dt, bc="dirichlet")
    x = grid.coords(0)
    tt = np.arange(0.0, T + dt / 2, dt)
    smooth_vals = np.sin(2 * np.pi * x)[None, :] * np.exp(-tt)[:, None]
    f_smooth = NodeField(grid, smooth_vals, tt)
    f_rand = NodeField(grid, rng.standard_normal(smooth_vals.shape), tt)
    xb = gridb.coords(0)
    ones = NodeField(gridb, np.ones((tt.size, xb.size)), tt)

    rows, support_ok = [], True
    for eps in eps_list:
        sf = smooth(f_rand, eps, None)
        mt = sf.info["time_margin_levels"]
        sl = slice(mt[0], smooth_vals.shape[0] - mt[1] or None)
        contraction = float(np.sqrt(np.mean(sf.values[sl] ** 2))
                            / np.sqrt(np.mean(f_rand.values ** 2)))
        sg = smooth(f_smooth, eps, None)
        dsg = np.gradient(sg.values[sl], h, axis=1)
        df = np.gradient(f_smooth.values[sl], h, axis=1)
        grad_err = float(np.sqrt(np.mean((dsg - df) ** 2)))

        delta = float(params.get("delta_factor", 4.0)) * eps
        ke = k_eps(ones, eps, delta)
        dist = np.minimum(xb - gridb.lo[0], gridb.hi[0] - xb)
        collar = dist < (delta - eps) - 1e-12
        if np.any(np.abs(ke.values[:, collar]) > 0.0):
            support_ok = False
        rows.append({"eps": eps, "contraction": contraction, "grad_err": grad_err})

    files = [_write_csv(os.path.join(out, "smoothing.csv"),
                        ("eps", "contraction", "grad_err"), rows)]
    files.append(line_plot(os.path.join(out, "smoothing_grad_err_vs_eps.svg"),
                           [("grad error", [r["eps"] for r in rows],
                             [r["grad_err"] for r in rows])],
                           "eps", "L2 gradient error", title="smoothing gradient order",
                           logx=True, logy=True))
    checks = {"contraction": all(r["contraction"] <= 1 + 1e-10 for r in rows),
              "support_exact": support_ok}
    notes = {}
    if len(rows) >= 2:
        le = np.log([r["eps"] for r in rows])
        lg = np.log([max(r["grad_err"], 1e-300) for r in rows])
        slope = float(np.polyfit(le, lg, 1)[0])
        checks["gradient_order"] = slope >= 0.9
        notes["grad_slope"] = slope
    return files, checks, notes


def _kind_rate(cfg, fieldobj, out, jobs):
    params = cfg.params
    eps_list = sorted(_num_list(params, "eps_list"), reverse=True)
    sigma = float(params["sigma"])
    prob = _default_problem(params, fieldobj.d)
    rep = twoscale.rate_study(
        fieldobj, prob, eps_list, sigma=sigma,
        h0=float(params["h0"]) if "h0" in params else None,
        with_discrepancy=bool(params.get("with_discrepancy", False)),
        osc_nodes=int(params.get("osc_nodes", 32)))
    files = [rep.to_csv(os.path.join(out, "rate.csv"))]
    errs = [r["l2_err"] for r in rep.rows]
    etas = [r["eta_hat"] for r in rep.rows]
    files.append(line_plot(os.path.join(out, "rate_error_vs_eps.svg"),
                           [("l2 error", eps_list, errs), ("eta_hat", eps_list, etas)],
                           "eps", "value", title="convergence rate study",
                           logx=True, logy=True))
    floor = all(e <= 1e-4 for e in errs)
    bad = [i for i in range(len(errs) - 1) if errs[i + 1] >= errs[i]]
    decreasing = (not bad) or (len(bad) == 1 and errs[bad[0] + 1] <= 1.05 * errs[bad[0]])
    ratios = [r["ratio"] for r in rep.rows]
    finite = [r for r in ratios if math.isfinite(r) and r > 0]
    var = max(finite) / min(finite) if finite else float("inf")
    checks = {"errors_decreasing": floor or decreasing,
              "ratio_bounded": floor or var <= 3.0}
    notes = {"slope": rep.slope, "at_floor": floor, "ratio_variation": var,
             "meta": {k: (v if isinstance(v, (int, float, str)) else str(v))
                      for k, v in rep.meta.items()}}
    return files, checks, notes


def _kind_modulus(cfg, fieldobj, out, jobs):
    params = cfg.params
    sigma = float(params["sigma"])
    t_list = _num_list(params, "t_list") if "t_list" in params \
        else list(np.geomspace(1 / 64, 1 / 4, 7))
    gammas = tuple(_num_list(params, "gammas")) if "gammas" in params else (1.0,)
    est = twoscale.modulus_estimate(
        fieldobj, np.asarray(sorted(t_list)), sigma=sigma,
        S_max=float(params.get("S_max", 64.0)), gammas=gammas)
    comp_names = sorted(est.components)
    rows = []
    for i, t in enumerate(est.t):
        row = {"t": float(t), "eta": float(est.eta[i])}
        for name in comp_names:
            row[name] = float(np.asarray(est.components[name])[i])
        rows.append(row)
    files = [_write_csv(os.path.join(out, "modulus.csv"),
                        ["t", "eta"] + comp_names, rows)]
    files.append(line_plot(os.path.join(out, "modulus_eta_vs_t.svg"),
                           [("eta", [r["t"] for r in rows], [r["eta"] for r in rows])],
                           "t", "eta(t)", title="homogenization modulus",
                           logx=True, logy=True))
    checks = {"eta_nondecreasing": est.is_nondecreasing()}
    notes = {"decay_N": est.decay_N,
             "dini": {str(g): {"value": v, "finite": fin}
                      for g, (v, fin) in est.dini.items()},
             "notes": est.notes}
    return files, checks, notes


def _w_lip_interior(args):
    fd, eps, prob_kw, R = args
    f = field_from_json(fd)
    prob = ProblemSpec(lo=prob_kw["lo"], hi=prob_kw["hi"], T=prob_kw["T"],
                       F=SineProduct(amp=1.0, k=[math.pi] * len(prob_kw["lo"])))
    return interior_lipschitz_profile(f, eps, prob, R=R)


def _w_lip_boundary(args):
    fd, eps, prob_kw, R, alpha = args
    f = field_from_json(fd)
    prob = ProblemSpec(lo=prob_kw["lo"], hi=prob_kw["hi"], T=prob_kw["T"],
                       F=SineProduct(amp=1.0, k=[math.pi] * len(prob_kw["lo"])))
    gd = GraphDomain(M=1.0, alpha=alpha, x0=prob.lo[0], side=+1)
    return boundary_lipschitz_profile(f, eps, gd, prob, R=R)


def _kind_lipschitz(cfg, fieldobj, out, jobs, boundary):
    params = cfg.params
    eps_list = sorted(_num_list(params, "eps_list"), reverse=True)
    prob = _default_problem(params, fieldobj.d)
    prob_kw = {"lo": prob.lo.tolist(), "hi": prob.hi.tolist(), "T": prob.T}
    fd = field_to_json(fieldobj)
    R = float(params.get("R", 0.25 if boundary else 0.5))
    tag = "boundary" if boundary else "interior"
    if boundary:
        alpha = float(params.get("alpha", 0.5))
        profiles = _pmap(_w_lip_boundary,
                         [(fd, e, prob_kw, R, alpha) for e in eps_list], jobs)
    else:
        profiles = _pmap(_w_lip_interior,
                         [(fd, e, prob_kw, R) for e in eps_list], jobs)

    files, series = [], []
    for eps, prof in zip(eps_list, profiles):
        files.append(prof.to_csv(os.path.join(out, f"lipschitz_{tag}_eps{eps:g}.csv")))
        rr = [row["r"] for row in prof.rows]
        series.append((f"eps={eps:g}", rr, [row["ratio"] for row in prof.rows]))
    files.append(line_plot(os.path.join(out, f"lipschitz_{tag}_profile.svg"),
                           series, "r", "profile / data functional",
                           title=f"{tag} Lipschitz profile", logx=True, logy=True))
    maxes = [p.max_ratio for p in profiles]
    good = [v for v in maxes if math.isfinite(v) and v > 0]
    checks = {"profile_finite": len(good) == len(maxes)}
    if len(good) >= 2:
        checks["cross_eps_stable"] = max(good) / min(good) <= 2.0
    notes = {"max_ratios": dict(zip(map(str, eps_list), maxes)), "R": R}
    return files, checks, notes


def _w_fundamental(args):
    fd, eps, horizon = args
    f = field_from_json(fd)
    rep = fundamental_probe(f, eps, pole=(0.0, 0.0), horizon=horizon)
    return rep.as_dict()


def _kind_fundamental(cfg, fieldobj, out, jobs):
    params = cfg.params
    eps_list = sorted(_num_list(params, "eps_list"), reverse=True)
    horizon = float(params.get("horizon", 0.25))
    fd = field_to_json(fieldobj)
    recs = _pmap(_w_fundamental, [(fd, e, horizon) for e in eps_list], jobs)
    rows = [{"eps": e, "kappa": r["kappa"], "C": r["C"],
             "fit_residual": r["fit_residual"], "mass_err": r["mass_err"]}
            for e, r in zip(eps_list, recs)]
    files = [_write_csv(os.path.join(out, "fundamental.csv"),
                        ("eps", "kappa", "C", "fit_residual", "mass_err"), rows)]
    files.append(line_plot(os.path.join(out, "fundamental_kappa_vs_eps.svg"),
                           [("kappa", eps_list, [r["kappa"] for r in rows]),
                            ("C", eps_list, [r["C"] for r in rows])],
                           "eps", "fit value", title="Gaussian envelope fit",
                           logx=True))
    checks = {"mass_conserved": all(r["mass_err"] <= 1e-6 for r in rows)}
    kappas = [r["kappa"] for r in rows]
    if len(kappas) >= 2:
        checks["kappa_stable"] = max(kappas) / min(kappas) <= 2.0
    if not fieldobj.atoms:
        checks["kappa_heat_kernel"] = abs(kappas[0] - 0.25) <= 0.025
    return files, checks, {"horizon": horizon}


def _w_holder(args):
    fd, eps, prob_kw, alpha, region = args
    f = field_from_json(fd)
    prob = ProblemSpec(lo=prob_kw["lo"], hi=prob_kw["hi"], T=prob_kw["T"], eps=eps,
                       F=SineProduct(amp=1.0, k=[math.pi] * len(prob_kw["lo"])))
    sol = solve_eps(f, prob, h=eps / 16, store_stride=max(1, int(round(
        (prob.T / (eps ** 2 / 16)) / 256))))
    rep = holder_seminorm(sol.u, region=region, alpha=alpha, F=prob.F)
    return {"seminorm": rep.seminorm, "rhs": rep.rhs, "ratio": rep.ratio,
            "n_pairs": rep.n_pairs}


def _kind_holder(cfg, fieldobj, out, jobs):
    params = cfg.params
    eps_list = sorted(_num_list(params, "eps_list"), reverse=True)
    alpha = float(params["alpha"])
    prob = _default_problem(params, fieldobj.d)
    prob_kw = {"lo": prob.lo.tolist(), "hi": prob.hi.tolist(), "T": prob.T}
    region = ([0.25], [0.75])
    fd = field_to_json(fieldobj)
    recs = _pmap(_w_holder, [(fd, e, prob_kw, alpha, region) for e in eps_list], jobs)
    rows = [{"eps": e, "seminorm": r["seminorm"], "rhs": r["rhs"],
             "ratio": r["ratio"], "n_pairs": r["n_pairs"]}
            for e, r in zip(eps_list, recs)]
    files = [_write_csv(os.path.join(out, "holder.csv"),
                        ("eps", "seminorm", "rhs", "ratio", "n_pairs"), rows)]
    files.append(line_plot(os.path.join(out, "holder_seminorm_vs_eps.svg"),
                           [("seminorm", eps_list, [r["seminorm"] for r in rows])],
                           "eps", "parabolic seminorm", title="interior Holder probe",
                           logx=True, logy=True))
    ratios = [r["ratio"] for r in rows if math.isfinite(r["ratio"])]
    checks = {"ratio_finite": len(ratios) == len(rows)}
    if len(ratios) >= 2:
        checks["ratio_stable"] = max(ratios) / min(ratios) <= 3.0
    return files, checks, {"alpha": alpha}


_RUNNERS = {
    "corrector": _kind_corrector,
    "effective": _kind_effective,
    "flux": _kind_flux,
    "smoothing": _kind_smoothing,
    "rate": _kind_rate,
    "modulus": _kind_modulus,
    "lipschitz-interior": lambda c, f, o, j: _kind_lipschitz(c, f, o, j, False),
    "lipschitz-boundary": lambda c, f, o, j: _kind_lipschitz(c, f, o, j, True),
    "fundamental": _kind_fundamental,
    "holder": _kind_holder,
}


# -- entry points -----------------------------------------------------------------


def run(cfg, out_dir=None, jobs=1):
    """Execute one experiment; returns the RunManifest (also written to disk)."""
    fieldobj = field_from_json(cfg.field_path)
    chash = config_hash(cfg.raw)
    out = out_dir or cfg.out_dir or os.path.join("runs", f"{cfg.kind}-{chash[:12]}")
    os.makedirs(out, exist_ok=True)

    t0 = time.perf_counter()
    files, checks, notes = _RUNNERS[cfg.kind](cfg, fieldobj, out, jobs)
    elapsed = time.perf_counter() - t0

    entries = []
    for path in files:
        with open(path, "rb") as fh:
            blob = fh.read()
        entries.append({"name": os.path.relpath(path, out),
                        "bytes": len(blob),
                        "sha256": hashlib.sha256(blob).hexdigest()})
    manifest = RunManifest(kind=cfg.kind, config_hash=chash, version=__version__,
                           elapsed_s=elapsed, files=entries,
                           checks={k: bool(v) for k, v in checks.items()},
                           notes=_sanitize(notes), seed=cfg.seed)
    manifest.to_json(os.path.join(out, "manifest.json"))
    return manifest, out


def list_experiments():
    """Catalog of experiment kinds with the estimate each one exercises."""
    return [{"kind": k, "exercises": tag, "summary": summary,
             "required_params": list(req)}
            for k, tag, summary, req in _CATALOG]


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="aphomlab",
        description="numerical laboratory for almost-periodic parabolic homogenization")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment config")
    p_run.add_argument("config", help="path to a JSON experiment config")
    p_run.add_argument("--out", default=None, help="output directory override")
    p_run.add_argument("--jobs", type=int, default=1,
                       help="worker processes for independent rows")
    p_run.add_argument("--seed", type=int, default=None, help="seed override")

    sub.add_parser("list", help="print the experiment catalog")

    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("config", help="path to a JSON experiment config")

    args = parser.parse_args(argv)

    if args.command == "list":
        for entry in list_experiments():
            print(f"{entry['kind']:<19} -> {entry['exercises']:<20} {entry['summary']}"
                  f"  [requires: {', '.join(entry['required_params'])}]")
        return 0

    try:
        cfg = load_config(args.config)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return 2

    if args.command == "validate":
        print(f"ok: kind={cfg.kind} field={cfg.field} hash={config_hash(cfg.raw)[:12]}")
        return 0

    if args.seed is not None:
        if args.seed < 0:
            print("config error: seed must be nonnegative", file=sys.stderr)
            return 2
        cfg.seed = args.seed
        cfg.raw = dict(cfg.raw, seed=args.seed)
    if args.jobs < 1:
        print("config error: --jobs must be >= 1", file=sys.stderr)
        return 2

    try:
        manifest, out = run(cfg, out_dir=args.out, jobs=args.jobs)
    except ConfigInvalid as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except LabError as exc:
        print(f"run failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2

    for name in sorted(manifest.checks):
        verdict = "PASS" if manifest.checks[name] else "FAIL"
        print(f"[{verdict}] {name}")
    print(f"manifest: {os.path.join(out, 'manifest.json')}"
          f"  ({len(manifest.files)} artifacts, {manifest.elapsed_s:.1f}s)")
    return 0 if manifest.passed else 1


if __name__ == "__main__":
    sys.exit(main())
