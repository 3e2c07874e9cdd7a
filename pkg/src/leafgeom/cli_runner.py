"""Batch experiment driver.

Usage::

    leafgeom run spectrum --model hyperbolic_product --R 20 --out results
    leafgeom focal --model sphere_product --tmax 4
    leafgeom run --config experiment.toml

Each experiment writes ``<name>_<table>.csv`` files, ``<name>.json`` with one
pass/fail entry per check, and two-column ``.dat`` plot files.  Exit status is
0 when every check passes, 1 when a check fails and 2 on configuration or I/O
errors.  Config files are TOML; see ``README.md`` for the schema.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
import zlib
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import comparison_spectrum as cs
from . import connection_calculus as cc
from . import model_zoo as mz
from .errors import BadParameters, ConfigError, GeometryError, LeftDomain, NoConvergence, UnknownModel
from .geodesic_flow import integrate_geodesic, invert_normal_exp, normal_exp
from .jacobi_engine import bvp_profile, detect_focal, hessian_at, riccati_ratio
from .metric_core import adapted_frame, check_bundle_like, project, sample_interior

try:
    import tomllib
except ModuleNotFoundError:             # Python < 3.11
    import tomli as tomllib

EXPERIMENTS = ("check-tensors", "geodesic", "jacobi", "focal", "hessian", "laplacian-compare",
               "poincare", "spectrum", "verify-cartan")

TOP_KEYS = {"experiment", "seed", "out", "tol", "model", "options"}
MODEL_KEYS = {"id", "params"}
OPTION_KEYS = {"samples", "pairs", "t_end", "tmax", "rho", "R", "radii", "grid_n", "bumps", "nodes",
               "proof_bumps", "r_min", "r_max", "fd_samples", "fd_step", "grid_points",
               "roundtrip_samples", "directions", "separation", "grid_step", "stop_on_focal"}


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    experiment: str
    model: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    out: str = "results"
    tol: float = 1e-10
    options: dict = field(default_factory=dict)

    def option(self, key, default):
        return self.options.get(key, default)

    def rng(self):
        """Generator seeded from the top-level seed and the experiment name."""
        return np.random.default_rng(np.random.SeedSequence([self.seed, zlib.crc32(self.experiment.encode())]))

    def as_dict(self):
        return {"experiment": self.experiment, "model": {"id": self.model, "params": self.params},
                "seed": self.seed, "out": self.out, "tol": self.tol, "options": self.options}


def _check_keys(table, allowed, where):
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {', '.join(unknown)}")


def load_config(path) -> dict:
    """Parse a TOML config and reject unknown keys."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    _check_keys(data, TOP_KEYS, "config")
    if "model" in data:
        if not isinstance(data["model"], dict):
            raise ConfigError("[model] must be a table")
        _check_keys(data["model"], MODEL_KEYS, "[model]")
    if "options" in data:
        if not isinstance(data["options"], dict):
            raise ConfigError("[options] must be a table")
        _check_keys(data["options"], OPTION_KEYS, "[options]")
    return data


def resolve_config(args) -> ExperimentConfig:
    data = load_config(args.config) if args.config else {}
    model = data.get("model", {})
    experiment = args.experiment or data.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    model_id = args.model or model.get("id")
    if not model_id:
        raise ConfigError("no model given (use --model or [model] id)")
    options = dict(data.get("options", {}))
    for key in ("R", "tmax", "samples"):
        val = getattr(args, key, None)
        if val is not None:
            options[key] = val
    cfg = ExperimentConfig(
        experiment=experiment, model=model_id, params=dict(model.get("params", {})),
        seed=int(args.seed if args.seed is not None else data.get("seed", 0)),
        out=args.out or data.get("out", "results"),
        tol=float(args.tol if args.tol is not None else data.get("tol", 1e-10)),
        options=options)
    if cfg.tol <= 0:
        raise ConfigError("tol must be positive")
    return cfg


# ---------------------------------------------------------------------------
# results and output
# ---------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    value: object = None
    threshold: object = None
    detail: str = ""


@dataclass
class ExperimentResult:
    experiment: str
    model: str
    checks: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)     # name -> (header, rows)
    plots: dict = field(default_factory=dict)      # name -> rows of (x, y)
    summary: dict = field(default_factory=dict)

    def check(self, name, passed, value=None, threshold=None, detail=""):
        self.checks.append(Check(name, bool(passed), _plain(value), _plain(threshold), detail))

    @property
    def passed(self):
        return bool(self.checks) and all(c.passed for c in self.checks)


def _plain(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    return x


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _csv_text(header, rows, seed):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")       # RFC 4180
    w.writerow(["seed", *header])
    for row in rows:
        w.writerow([seed, *(_fmt(v) for v in row)])
    return buf.getvalue()


def _dat_text(rows, seed, label):
    lines = [f"# {label}", f"# seed={seed}"]
    lines += [f"{_fmt(x)} {_fmt(y)}" for x, y in rows]
    return "\n".join(lines) + "\n"


def _atomic_write(path, text):
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_outputs(result: ExperimentResult, cfg: ExperimentConfig):
    """Write CSV, JSON and plot files; every file is written then renamed."""
    os.makedirs(cfg.out, exist_ok=True)
    stem = cfg.experiment.replace("-", "_")
    files = {}
    for name, (header, rows) in result.tables.items():
        files[f"{stem}_{name}.csv"] = _csv_text(header, rows, cfg.seed)
    for name, rows in result.plots.items():
        files[f"{stem}_{name}.dat"] = _dat_text(rows, cfg.seed, f"{cfg.experiment} {name} ({cfg.model})")
    summary = {
        "experiment": cfg.experiment, "model": cfg.model, "seed": cfg.seed,
        "config": {k: v for k, v in cfg.as_dict().items() if k != "out"}, "passed": result.passed,
        "checks": [{"name": c.name, "passed": c.passed, "value": c.value, "threshold": c.threshold,
                    "detail": c.detail} for c in result.checks],
        "summary": _plain(result.summary),
    }
    files[f"{stem}.json"] = json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n"
    for name, text in files.items():
        _atomic_write(os.path.join(cfg.out, name), text)
    return sorted(files)


# ---------------------------------------------------------------------------
# experiments
# ---------------------------------------------------------------------------

def _horizontal_unit(spec, p, rng):
    d = rng.standard_normal(spec.d_H)
    return adapted_frame(spec.chart, p).horizontal @ (d / np.linalg.norm(d))


def run_check_tensors(cfg, spec, res):
    chart = spec.chart
    rng = cfg.rng()
    n_samples = int(cfg.option("samples", 200))
    points = sample_interior(chart, n_samples, rng)
    rep = cc.verify_structure_identities(chart, points=points, seed=cfg.seed)
    names = cc.IDENTITIES if spec.bundle_like else mz.GENERAL_IDENTITIES
    res.tables["identities"] = (["identity", "max_residual"],
                                [(k, rep.max_residuals[k]) for k in cc.IDENTITIES])
    worst = max(rep.max_residuals[k] for k in names)
    res.check("structure_identities", worst < 1e-7, worst, 1e-7,
              "all identities" if spec.bundle_like else "identities valid without bundle-like metric")
    res.summary["max_residuals"] = rep.max_residuals
    bl = check_bundle_like(chart, sample_points=points[:50])
    res.summary["bundle_like_residual"] = bl.max_residual
    res.check("bundle_like_flag", bl.passed == spec.bundle_like, bl.max_residual, bl.tolerance)
    if spec.d_H >= 2:
        rows = []
        for p in points[:int(cfg.option("pairs", 100))]:
            X, Y = cc.random_horizontal_pair(chart, p, rng)
            s = cc.transverse_sectional(chart, p, X, Y)
            rows.append((*p, s, cc.sectional_lc(chart, p, X, Y), cc.oneill_check(chart, p, X, Y)))
        res.tables["oneill"] = (["x%d" % i for i in range(chart.dim_total)]
                                + ["transverse_sectional", "lc_sectional", "oneill_residual"], rows)
        one = max(abs(r[-1]) for r in rows)
        res.check("oneill", one < 1e-7, one, 1e-7)
    hn = max(chart.norm(p, cc.mean_curvature(chart, p).components) for p in points[:50])
    res.summary["max_mean_curvature_norm"] = hn
    res.check("minimal_leaves_flag", (hn < 1e-9) == spec.minimal_leaves, hn, 1e-9)
    oracle = mz.oracle_check(spec)
    for c in oracle.checks:
        res.check(f"oracle:{c.name}", c.passed, c.observed if not isinstance(c.observed, str) else None,
                  c.tolerance, c.error)


def run_geodesic(cfg, spec, res):
    chart = spec.chart
    rng = cfg.rng()
    t_end = float(cfg.option("tmax", cfg.option("t_end", 10.0)))
    seed_pt = spec.default_seed_point
    lo, hi = chart.sampling_box
    idx = list(spec.leaf_coords)
    rows = []
    worst_v = worst_s = 0.0
    for k in range(int(cfg.option("samples", 4))):
        y = spec.leaf_point(seed_pt, lo[idx] + (hi[idx] - lo[idx]) * rng.random(len(idx)))
        u = _horizontal_unit(spec, y, rng)
        try:
            path = integrate_geodesic(chart, y, u, t_end, cfg.tol)
        except LeftDomain as exc:
            res.check(f"geodesic_{k}_in_domain", False, exc.t_exit, t_end, str(exc))
            continue
        vd, sd = float(path.vertical_drift().max()), float(path.speed_drift().max())
        worst_v, worst_s = max(worst_v, vd), max(worst_s, sd)
        rows.append((k, *y, *u, vd, sd, len(path.ts)))
        if k == 0:
            res.tables["path"] = (["t"] + [f"x{i}" for i in range(chart.dim_total)]
                                  + [f"v{i}" for i in range(chart.dim_total)]
                                  + ["vertical_drift", "speed_drift"], path.rows())
            res.plots["speed_drift"] = [(r[0], r[-1]) for r in path.rows()]
    res.tables["drift"] = (["sample"] + [f"y{i}" for i in range(chart.dim_total)]
                           + [f"u{i}" for i in range(chart.dim_total)]
                           + ["max_vertical_drift", "max_speed_drift", "steps"], rows)
    res.check("vertical_drift", worst_v < 1e-8, worst_v, 1e-8)
    res.check("speed_drift", worst_s < 1e-8, worst_s, 1e-8)


def _transverse_profile(k, t, rho):
    if k < 0:
        s = np.sqrt(-k)
        return np.sinh(s * t) / np.sinh(s * rho)
    if k > 0:
        s = np.sqrt(k)
        return np.sin(s * t) / np.sin(s * rho)
    return t / rho


def _target_at(spec, rho, rng):
    y = spec.default_seed_point
    u = _horizontal_unit(spec, y, rng)
    return normal_exp(spec.chart, y, rho * u), (spec.leaf_params(y), None)


def run_jacobi(cfg, spec, res):
    chart = spec.chart
    rng = cfg.rng()
    if spec.d_H < 2:
        raise ConfigError("jacobi experiment needs d_H >= 2")
    k_oracle = spec.oracles.get("transverse_curvature")
    worst = 0.0
    ric_margin = np.inf
    rows = []
    for rho in cfg.option("rho", [1.0, 3.0, 5.0]):
        target, _ = _target_at(spec, float(rho), rng)
        hr = hessian_at(chart, spec.default_seed_point, target)
        x_end = hr.end_point
        X = hr.frame[:, 1]                  # unit horizontal, orthogonal to the geodesic
        ts = np.linspace(0.0, hr.rho, 101)
        norms, inner, vv = bvp_profile(hr, X, ts)
        K = spec.transverse_K
        for t, a, b in zip(ts, norms, inner):
            ora = _transverse_profile(k_oracle, t, hr.rho) if k_oracle is not None else np.nan
            kappa = np.nan
            if t > 0 and K is not None:
                kappa = riccati_ratio(hr, X, t)
                ric_margin = min(ric_margin, kappa - float(cs.comparison_bound(2, K, t)))
            rows.append((float(rho), t, a, ora, kappa))
            if k_oracle is not None and t > 0:
                worst = max(worst, abs(a - ora) / max(abs(ora), 1e-300))
        res.plots[f"profile_rho{rho:g}"] = [(t, a) for t, a in zip(ts, norms)]
        res.summary[f"hessian_rho{rho:g}"] = hr.value(X)
        res.summary[f"end_point_rho{rho:g}"] = x_end
    res.tables["profile"] = (["rho", "t", "norm_VH", "oracle", "riccati_ratio"], rows)
    if k_oracle is not None:
        res.check("profile_oracle", worst < 1e-6, worst, 1e-6)
    if spec.transverse_K is not None:
        res.check("riccati_comparison", ric_margin >= -1e-6, ric_margin, -1e-6)


def _scan_direction(spec, p, angle):
    EH = adapted_frame(spec.chart, p).horizontal
    c = np.zeros(spec.d_H)
    c[0], c[-1] = np.cos(angle), np.sin(angle)
    if spec.d_H == 1:
        c[0] = np.sign(np.cos(angle)) or 1.0
    return EH @ c


def run_focal(cfg, spec, res):
    chart = spec.chart
    t_max = float(cfg.option("tmax", 50.0))
    p = spec.default_seed_point
    u = adapted_frame(chart, p).horizontal[:, -1]
    path = integrate_geodesic(chart, p, u, min(0.1, t_max), cfg.tol)
    rep = detect_focal(path, t_max, grid_step=float(cfg.option("grid_step", 0.01)))
    res.tables["sigma"] = (["t", "sigma_min"], rep.rows())
    res.plots["sigma"] = rep.rows()
    res.tables["candidates"] = (["t", "sigma_min", "threshold", "focal"],
                                [(c.time, c.sigma_min, c.threshold, c.focal) for c in rep.candidates])
    res.summary["focal_times"] = rep.focal_times
    expected = spec.oracles.get("first_focal_time")
    if expected is not None and expected <= t_max:
        got = rep.focal_times[0] if rep.focal_times else float("nan")
        res.check("focal_detected", abs(got - expected) < 1e-4, got, expected)
    elif spec.transverse_K is not None:
        res.check("no_focal_points", rep.empty, rep.focal_times, [])
    else:
        res.check("scan_completed", True, rep.focal_times)


def run_hessian(cfg, spec, res):
    chart = spec.chart
    rng = cfg.rng()
    K = spec.transverse_K
    h = float(cfg.option("fd_step", 5e-3))
    rows = []
    worst_fd = worst_or = worst_rv = 0.0
    for rho in cfg.option("rho", [0.5, 1.0, 2.0, 3.0]):
        target, _ = _target_at(spec, float(rho), rng)
        shoot = invert_normal_exp(chart, spec.default_seed_point, target)
        hr = hessian_at(chart, spec.default_seed_point, target, shooting=shoot)
        x, v = hr.bundle.geodesic.state(hr.rho)
        X = hr.frame[:, 1] if spec.d_H >= 2 else None
        Z = hr.frame[:, spec.d_H]
        init = (shoot.leaf_params, shoot.h_components, shoot.jacobian)
        H_fd = cs.fd_covariant_hessian(chart, cs.distance_function(chart, spec.default_seed_point, init),
                                       target, h)
        radial, vertical = hr.value(v), hr.value(Z)
        worst_rv = max(worst_rv, abs(radial), abs(vertical))
        jac = hr.value(X) if X is not None else np.nan
        fd = float(X @ H_fd @ X) if X is not None else np.nan
        oracle = float(cs.comparison_bound(2, K, hr.rho)) if K is not None else np.nan
        if X is not None:
            worst_fd = max(worst_fd, abs(jac - fd) / max(abs(jac), 1e-300))
            if K is not None and spec.oracles.get("transverse_curvature") == -K:
                worst_or = max(worst_or, abs(jac - oracle))
        rows.append((float(rho), hr.rho, jac, fd, oracle, radial, vertical,
                     float(v @ H_fd @ v), float(Z @ H_fd @ Z)))
    res.tables["hessian"] = (["rho_requested", "rho", "jacobi", "finite_difference", "oracle", "radial",
                              "vertical", "fd_radial", "fd_vertical"], rows)
    res.check("radial_vertical_zero", worst_rv < 1e-8, worst_rv, 1e-8)
    if spec.d_H >= 2:
        res.check("finite_difference_agreement", worst_fd < 1e-4, worst_fd, 1e-4)
        if K is not None and spec.oracles.get("transverse_curvature") == -K:
            res.check("coth_oracle", worst_or < 1e-6, worst_or, 1e-6)


def run_laplacian(cfg, spec, res):
    chart = spec.chart
    rng = cfg.rng()
    n = int(cfg.option("samples", 50))
    r_rng = (float(cfg.option("r_min", 0.1)), float(cfg.option("r_max", 5.0)))
    K = spec.transverse_K if spec.transverse_K is not None else 0.0
    samples = cs.sample_targets(spec, n, rng, r_rng)
    rep = cs.check_laplacian_comparison(chart, spec.default_seed_point, K, samples, spec.id)
    d = chart.dim_total
    res.tables["comparison"] = ([f"x{i}" for i in range(d)]
                                + ["r", "delta_r", "delta_h_r", "bound", "margin"], rep.csv_rows())
    order = np.argsort([row.r for row in rep.rows])
    res.plots["delta_h_r"] = [(rep.rows[i].r, rep.rows[i].delta_h_r) for i in order]
    res.plots["bound"] = [(rep.rows[i].r, rep.rows[i].bound) for i in order]
    res.summary.update(min_margin=rep.min_margin, max_minimality_gap=rep.max_minimality_gap)
    if spec.satisfies_assumptions and spec.minimal_leaves:
        res.check("comparison_margin", rep.min_margin >= -1e-6, rep.min_margin, -1e-6)
        res.check("minimality_equality", rep.max_minimality_gap < 1e-6, rep.max_minimality_gap, 1e-6)
        if spec.oracles.get("transverse_curvature") == -K:
            res.check("equality_case", rep.max_abs_margin < 1e-6, rep.max_abs_margin, 1e-6)
    elif not spec.minimal_leaves:
        gap = rep.max_minimality_gap
        res.check("non_minimal_detected", gap > 1e-3, gap, 1e-3)
    else:
        res.check("comparison_reported", True, rep.min_margin)
    # finite-difference cross-validation at moderate radii
    fd_rows = []
    worst = 0.0
    step = float(cfg.option("fd_step", 5e-3))
    for target, init in cs.sample_targets(spec, int(cfg.option("fd_samples", 3)), rng, (0.5, 3.0)):
        s = cs.laplacian_sample(chart, spec.default_seed_point, target, init=init)
        sh = s.hessian.shooting
        fun = cs.distance_function(chart, spec.default_seed_point, (sh.leaf_params, sh.h_components, sh.jacobian))
        fd = cs.fd_laplacian(chart, fun, target, step)
        err = abs(fd - s.delta_r) / max(abs(s.delta_r), 1e-12)
        worst = max(worst, err)
        fd_rows.append((*target, s.r, s.delta_r, fd, err))
    res.tables["fd_check"] = ([f"x{i}" for i in range(d)] + ["r", "delta_r", "fd_delta_r", "rel_err"], fd_rows)
    res.check("fd_laplacian", worst < 1e-4, worst, 1e-4)


def run_poincare(cfg, spec, res):
    chart = spec.chart
    rng = cfg.rng()
    if spec.transverse_K is None or spec.d_H < 2:
        raise ConfigError("poincare needs a model with a transverse bound and d_H >= 2")
    K = spec.transverse_K
    bound = (spec.d_H - 1) ** 2 * K / 4.0
    nodes = int(cfg.option("nodes", cs.QUAD_NODES))
    bumps = cs.random_bumps(spec, int(cfg.option("bumps", 100)), rng)
    rows = []
    low = np.inf
    order = 0.0
    for b in bumps:
        r = cs.rayleigh_details(chart, b, nodes)
        rows.append((*b.center, b.radius, r.full, r.horizontal, r.coarse[0], r.coarse[1]))
        low = min(low, r.horizontal - bound)
        order = max(order, (r.horizontal - r.full) / r.full)
    d = chart.dim_total
    res.tables["quotients"] = ([f"c{i}" for i in range(d)]
                               + ["radius", "full", "horizontal", "full_coarse", "horizontal_coarse"], rows)
    res.check("poincare_bound", low >= -1e-6, low, -1e-6)
    res.check("horizontal_le_full", order <= 1e-10, order, 1e-10)
    if spec.distance_fn is not None:
        prow = []
        worst = 0.0
        chain = True
        for b in bumps[:int(cfg.option("proof_bumps", 10))]:
            pr = cs.proof_replication(spec, b, K, nodes=nodes)
            worst = max(worst, pr.ibp_residual)
            chain &= pr.chain_holds
            prow.append((*b.center, b.radius, pr.lhs, pr.rhs, pr.ibp_residual, pr.lower, pr.upper,
                         pr.min_delta_h_r))
        res.tables["proof"] = ([f"c{i}" for i in range(d)]
                               + ["radius", "lhs", "rhs", "ibp_residual", "lower", "upper", "min_delta_h_r"],
                               prow)
        res.check("integration_by_parts", worst < 1e-4, worst, 1e-4)
        res.check("cauchy_schwarz_chain", chain, chain, True)


def run_spectrum(cfg, spec, res):
    if spec.transverse_K is None:
        raise ConfigError(f"spectrum needs a transverse bound; {spec.id} has none")
    d_H, K = spec.d_H, spec.transverse_K
    if d_H < 2:
        raise ConfigError("spectrum needs d_H >= 2")
    grid_n = int(cfg.option("grid_n", 4000))
    if "R" in cfg.options:
        R0 = float(cfg.options["R"])
        radii = [R0 / 2, R0, 2 * R0]
    else:
        radii = [float(r) for r in cfg.option("radii", [10.0, 20.0, 40.0])]
        R0 = radii[len(radii) // 2]
    results = [cs.radial_dirichlet_eigenvalue(d_H, K, R, grid_n, spec.id) for R in radii]
    header = ["model", "d_H", "K", "R", "grid_n", "eigenvalue", "bound", "gap"]
    res.tables["spectrum"] = (header, [r.csv_row() for r in results])
    res.plots["lambda_vs_R"] = [(r.R, r.eigenvalue) for r in results]
    mck = cs.mckean_bound(spec.chart.dim_total, spec.d_V, K)
    res.summary["mckean_bound"] = mck
    res.summary["eigenvalues"] = {f"{r.R:g}": r.eigenvalue for r in results}
    res.check("above_bound", all(r.eigenvalue >= mck - 1e-10 for r in results),
              min(r.gap for r in results), 0.0)
    lams = [r.eigenvalue for r in results]
    res.check("monotone_in_R", all(a > b for a, b in zip(lams, lams[1:])), lams)
    fine = cs.radial_dirichlet_eigenvalue(d_H, K, R0, 2 * grid_n, spec.id)
    coarse = next(r for r in results if r.R == R0)
    diff = abs(fine.eigenvalue - coarse.eigenvalue)
    res.tables["refinement"] = (header, [coarse.csv_row(), fine.csv_row()])
    res.check("grid_refinement", diff < 1e-4, diff, 1e-4)
    if K > 0 and len(results) >= 3:
        p = cs.decay_exponent(results)
        res.summary["decay_exponent"] = p
        res.check("decay_exponent", 1.8 <= p <= 2.2, p, [1.8, 2.2])
    if K == 0 and d_H == 2:
        from scipy.special import jn_zeros

        disk = cs.radial_dirichlet_eigenvalue(2, 0.0, 1.0, grid_n, spec.id)
        j0 = float(jn_zeros(0, 1)[0] ** 2)
        res.check("bessel_control", abs(disk.eigenvalue - j0) < 1e-4, disk.eigenvalue, j0)


# -- Cartan-Hadamard witnesses ----------------------------------------------

def _grid_points(spec, count, rng):
    lo, hi = spec.chart.sampling_box
    d = spec.chart.dim_total
    k = int(np.ceil(count ** (1.0 / d)))
    axes = [np.linspace(a, b, k) for a, b in zip(lo, hi)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    return grid[np.sort(rng.permutation(len(grid))[:count])]


def verify_cartan(cfg, spec, res=None):
    """Numerical witnesses for the normal exponential map being a diffeomorphism.

    (a) no focal points up to ``tmax`` along several normal geodesics;
    (b) shooting converges for every point of a grid;
    (c) distinct preimages give separated images and round trips recover them;
    (d) the distance of ``exp(y, u)`` to the leaf equals ``|u|``.

    When (a) fails and the ``stop_on_focal`` option is true (the default),
    (b)-(d) are skipped and listed under ``summary["skipped"]``.
    """
    res = res or ExperimentResult("verify-cartan", spec.id)
    chart = spec.chart
    rng = cfg.rng()
    t_max = float(cfg.option("tmax", 10.0))
    seed_pt = spec.default_seed_point

    # (a)
    focal_rows = []
    ok_a = True
    n_dir = int(cfg.option("directions", 4))
    for k in range(n_dir):
        ang = 2 * np.pi * k / n_dir
        u = _scan_direction(spec, seed_pt, ang)
        try:
            path = integrate_geodesic(chart, seed_pt, u, 0.1, cfg.tol)
            rep = detect_focal(path, t_max)
            times = rep.focal_times
            focal_rows.append((ang, "complete", len(times), times[0] if times else ""))
            ok_a &= rep.empty
        except LeftDomain as exc:
            focal_rows.append((ang, "left_domain", 0, exc.t_exit))
            ok_a = False
    res.tables["witness_a"] = (["angle", "status", "focal_count", "first_focal"], focal_rows)
    first = [r[3] for r in focal_rows if r[2]]
    res.check("witness_a_no_focal", ok_a, min(first) if first else None, t_max)

    if not ok_a and cfg.option("stop_on_focal", True):
        # a focal point already rules out a diffeomorphism; shooting near the cut locus is slow
        res.summary["skipped"] = ["witness_b", "witness_c", "witness_d"]
        res.summary["assumptions_met"] = spec.satisfies_assumptions
        return res

    # (b)
    grid = _grid_points(spec, int(cfg.option("grid_points", 200)), rng)
    b_rows = []
    max_it = 0
    ok_b = True
    for q in grid:
        y = spec.leaf_point(seed_pt, spec.leaf_params(q))
        if np.allclose(y, q, rtol=0, atol=1e-14):
            b_rows.append((*q, 0.0, 0, "on_leaf"))
            continue
        try:
            sr = invert_normal_exp(chart, seed_pt, q)
            max_it = max(max_it, sr.iterations)
            ok = sr.iterations <= 20 and sr.starts == 1
            b_rows.append((*q, sr.rho, sr.iterations, "ok" if ok else "restarted"))
            ok_b &= ok
        except (NoConvergence, GeometryError) as exc:
            b_rows.append((*q, np.nan, -1, type(exc).__name__))
            ok_b = False
    d = chart.dim_total
    res.tables["witness_b"] = ([f"x{i}" for i in range(d)] + ["rho", "iterations", "status"], b_rows)
    res.check("witness_b_convergence", ok_b, max_it, 20)

    # (c) and (d)
    n_rt = int(cfg.option("roundtrip_samples", 20))
    sep = float(cfg.option("separation", 1e-6))
    lo, hi = chart.sampling_box
    idx = list(spec.leaf_coords)
    pre, img = [], []
    for _ in range(n_rt):
        s = lo[idx] + (hi[idx] - lo[idx]) * rng.random(len(idx))
        y = spec.leaf_point(seed_pt, s)
        direction = rng.standard_normal(spec.d_H)
        h = rng.uniform(0.05, t_max) * direction / np.linalg.norm(direction)
        try:
            x = normal_exp(chart, y, adapted_frame(chart, y).horizontal @ h)
        except LeftDomain:
            continue
        pre.append(np.concatenate([s, h]))
        img.append(x)
    pre, img = np.array(pre), np.array(img)
    min_sep = np.inf
    for i in range(len(img)):
        for j in range(i + 1, len(img)):
            if np.linalg.norm(pre[i] - pre[j]) > 1e-9:
                min_sep = min(min_sep, float(np.linalg.norm(img[i] - img[j])))
    c_rows, d_rows = [], []
    worst_rt = worst_d = 0.0
    r_fn = spec.distance_fn(np.asarray(seed_pt)) if spec.distance_fn is not None else None
    m = len(idx)
    for p_, x in zip(pre, img):
        s, h = p_[:m], p_[m:]
        rho = float(np.linalg.norm(h))
        try:
            sr = invert_normal_exp(chart, seed_pt, x, init=(s, h))
            err = float(np.linalg.norm(np.concatenate([sr.leaf_params - s, sr.h_components - h])))
        except (NoConvergence, GeometryError):
            err = np.inf
        worst_rt = max(worst_rt, err)
        c_rows.append((*x, rho, err))
        dist = float(r_fn(x)) if r_fn is not None else (sr.rho if np.isfinite(err) else np.nan)
        worst_d = max(worst_d, abs(dist - rho))
        d_rows.append((*x, rho, dist))
    res.tables["witness_c"] = ([f"x{i}" for i in range(d)] + ["u_norm", "roundtrip_error"], c_rows)
    res.tables["witness_d"] = ([f"x{i}" for i in range(d)] + ["u_norm", "distance"], d_rows)
    res.check("witness_c_injective", min_sep > sep and worst_rt < 1e-6, [min_sep, worst_rt], [sep, 1e-6])
    res.check("witness_d_distance", worst_d < 1e-6, worst_d, 1e-6,
              "closed-form distance" if r_fn is not None else "shooting distance")
    res.summary["assumptions_met"] = spec.satisfies_assumptions
    return res


RUNNERS: dict[str, Callable] = {
    "check-tensors": run_check_tensors,
    "geodesic": run_geodesic,
    "jacobi": run_jacobi,
    "focal": run_focal,
    "hessian": run_hessian,
    "laplacian-compare": run_laplacian,
    "poincare": run_poincare,
    "spectrum": run_spectrum,
    "verify-cartan": verify_cartan,
}


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Build the model and run one experiment; geometry errors become failed checks."""
    spec = mz.build(cfg.model, cfg.params)
    res = ExperimentResult(cfg.experiment, cfg.model)
    try:
        RUNNERS[cfg.experiment](cfg, spec, res)
    except ConfigError:
        raise
    except GeometryError as exc:
        res.check("completed", False, None, None, f"{type(exc).__name__}: {exc}")
    return res


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

def _add_common(p):
    p.add_argument("--model", help="model id (%s)" % ", ".join(mz.MODEL_IDS))
    p.add_argument("--config", help="TOML experiment config")
    p.add_argument("--out", help="output directory (default: results)")
    p.add_argument("--seed", type=int, help="top-level random seed")
    p.add_argument("--tol", type=float, help="integration tolerance")
    p.add_argument("--R", type=float, help="ball radius for spectrum")
    p.add_argument("--tmax", type=float, help="scan length for focal / verify-cartan / geodesic")
    p.add_argument("--samples", type=int, help="sample count")


def build_parser():
    parser = argparse.ArgumentParser(prog="leafgeom", description="Foliation geometry experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment")
    run.add_argument("experiment", nargs="?", choices=EXPERIMENTS)
    _add_common(run)
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"alias for 'run {name}'")
        _add_common(p)
        p.set_defaults(experiment=name)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        result = run_experiment(cfg)
        files = write_outputs(result, cfg)
    except (ConfigError, UnknownModel, BadParameters) as exc:
        print(f"leafgeom: configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"leafgeom: I/O error: {exc}", file=sys.stderr)
        return 2
    for c in result.checks:
        status = "PASS" if c.passed else "FAIL"
        print(f"{status} {cfg.experiment}:{c.name} value={c.value} threshold={c.threshold}"
              + (f" ({c.detail})" if c.detail else ""), file=sys.stderr)
    print(f"wrote {len(files)} files to {cfg.out}", file=sys.stderr)
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
