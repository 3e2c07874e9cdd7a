"""Acceptance criteria 1-12.

Each test prints one ``PASS``/``FAIL`` line (also repeated in the terminal
summary).  Runtimes are measured after a warm-up call so that one-off JIT
compilation of a chart's kernels is excluded.
"""
import time

import numpy as np
import pytest
from scipy.special import jn_zeros

from leafgeom import cli_runner as cr
from leafgeom import comparison_spectrum as cs
from leafgeom import connection_calculus as cc
from leafgeom import geodesic_flow as gf
from leafgeom import jacobi_engine as je
from leafgeom import model_zoo as mz
from leafgeom.metric_core import adapted_frame, sample_interior

SEED = 20240611


def _rng(k):
    return np.random.default_rng([SEED, k])


def _unit(spec, p, c):
    c = np.asarray(c, float)
    return adapted_frame(spec.chart, p).horizontal @ (c / np.linalg.norm(c))


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.t0


def test_criterion_01_structure_identities(report):
    models = ["heisenberg", "hyperbolic_product", "sol", "euclidean_product"]
    worst, slowest = {}, 0.0
    for k, name in enumerate(models):
        chart = mz.build(name).chart
        cc.verify_structure_identities(chart, sample_count=1, seed=k)          # warm-up
        with Timer() as t:
            rep = cc.verify_structure_identities(chart, sample_count=200, seed=k)
        worst[name] = rep.worst
        slowest = max(slowest, t.seconds)
    big = max(worst.values())
    ok = big < 1e-7 and slowest < 10
    report(1, ok, f"max identity residual {big:.2e} (< 1e-7) over 200 samples x 4 models, "
                  f"slowest model {slowest:.1f}s (< 10s)")
    assert ok, worst


def test_criterion_02_oneill(report):
    models = ["heisenberg", "hyperbolic_product", "euclidean_product", "sphere_product"]
    worst, secs = 0.0, 0.0
    for k, name in enumerate(models):
        spec = mz.build(name)
        rng = _rng(200 + k)
        pts = sample_interior(spec.chart, 100, rng)
        cc.oneill_check(spec.chart, pts[0], *cc.random_horizontal_pair(spec.chart, pts[0], rng))
        with Timer() as t:
            for p in pts:
                X, Y = cc.random_horizontal_pair(spec.chart, p, rng)
                worst = max(worst, abs(cc.oneill_check(spec.chart, p, X, Y)))
        secs = max(secs, t.seconds)
    heis = mz.build("heisenberg")
    rng = _rng(210)
    k_err = 0.0
    for p in sample_interior(heis.chart, 100, rng):
        X, Y = cc.random_horizontal_pair(heis.chart, p, rng)
        k_err = max(k_err, abs(cc.sectional_lc(heis.chart, p, X, Y) + 0.75))
    ok = worst < 1e-7 and k_err < 1e-7 and secs < 5
    report(2, ok, f"O'Neill residual {worst:.2e} (< 1e-7), Heisenberg |K_LC + 3/4| {k_err:.2e} (< 1e-7), "
                  f"slowest model {secs:.1f}s (< 5s)")
    assert ok


def test_criterion_03_horizontal_geodesics(report):
    models = [m for m in mz.MODEL_IDS if mz.build(m).bundle_like]
    drift_v = drift_s = 0.0
    total = 0.0
    for k, name in enumerate(models):
        spec = mz.build(name)
        p = spec.default_seed_point
        u = adapted_frame(spec.chart, p).horizontal[:, -1]
        gf.integrate_geodesic(spec.chart, p, u, 0.1, 1e-10)
        with Timer() as t:
            path = gf.integrate_geodesic(spec.chart, p, u, 10.0, 1e-10)
        total += t.seconds
        drift_v = max(drift_v, float(path.vertical_drift().max()))
        drift_s = max(drift_s, float(path.speed_drift().max()))
    ok = drift_v < 1e-8 and drift_s < 1e-8 and total < 5
    report(3, ok, f"vertical drift {drift_v:.2e}, speed drift {drift_s:.2e} (< 1e-8) on {len(models)} "
                  f"bundle-like models, {total:.1f}s (< 5s)")
    assert ok


def test_criterion_04_jacobi_oracle(report, hyperbolic):
    y = hyperbolic.default_seed_point
    u = _unit(hyperbolic, y, [0.6, 0.8])
    je.hessian_at(hyperbolic.chart, y, gf.normal_exp(hyperbolic.chart, y, 0.5 * u))
    worst = 0.0
    with Timer() as t:
        for rho in (1.0, 3.0, 5.0):
            target = gf.normal_exp(hyperbolic.chart, y, rho * u)
            hr = je.hessian_at(hyperbolic.chart, y, target)
            ts = np.linspace(0.0, hr.rho, 101)[1:]
            norms, _, _ = je.bvp_profile(hr, hr.frame[:, 1], ts)
            oracle = np.sinh(ts) / np.sinh(hr.rho)
            worst = max(worst, float(np.max(np.abs(norms - oracle) / oracle)))
    ok = worst < 1e-6 and t.seconds < 5
    report(4, ok, f"BVP profile vs sinh(t)/sinh(rho) relative error {worst:.2e} (< 1e-6) for rho 1, 3, 5, "
                  f"{t.seconds:.1f}s (< 5s)")
    assert ok


def test_criterion_05_focal_points(report, sphere, hyperbolic, heisenberg):
    def scan(spec, u, t_max):
        path = gf.integrate_geodesic(spec.chart, spec.default_seed_point, u, 0.1)
        return je.detect_focal(path, t_max)

    scan(sphere, adapted_frame(sphere.chart, sphere.default_seed_point).horizontal[:, -1], 0.5)
    with Timer() as t:
        sp = scan(sphere, adapted_frame(sphere.chart, sphere.default_seed_point).horizontal[:, -1], 4.0)
        hy = scan(hyperbolic, _unit(hyperbolic, hyperbolic.default_seed_point, [0.6, 0.8]), 50.0)
        he = scan(heisenberg, _unit(heisenberg, heisenberg.default_seed_point, [0.6, 0.8]), 50.0)
    t_sphere = sp.focal_times[0] if sp.focal_times else np.nan
    ok = abs(t_sphere - np.pi) < 1e-4 and hy.empty and he.empty and t.seconds < 30
    report(5, ok, f"sphere focal time {t_sphere:.10f} (pi +- 1e-4); hyperbolic {len(hy.focal_times)} and "
                  f"Heisenberg {len(he.focal_times)} focal points to t=50, {t.seconds:.1f}s (< 30s)")
    assert ok


def test_criterion_06_hessian(report, hyperbolic):
    chart, y = hyperbolic.chart, hyperbolic.default_seed_point
    u = _unit(hyperbolic, y, [0.6, 0.8])
    je.hessian_at(chart, y, gf.normal_exp(chart, y, 0.3 * u))
    err_coth = err_rv = err_fd = 0.0
    with Timer() as t:
        for rho in (0.5, 1.0, 2.0, 3.0):
            target = gf.normal_exp(chart, y, rho * u)
            hr = je.hessian_at(chart, y, target)
            _, v = hr.bundle.geodesic.state(hr.rho)
            X, Z = hr.frame[:, 1], hr.frame[:, 2]
            jac = hr.value(X)
            err_coth = max(err_coth, abs(jac - 1 / np.tanh(hr.rho)))
            err_rv = max(err_rv, abs(hr.value(v)), abs(hr.value(Z)))
            sh = hr.shooting
            fun = cs.distance_function(chart, y, (sh.leaf_params, sh.h_components))
            H_fd = cs.fd_covariant_hessian(chart, fun, target)
            err_fd = max(err_fd, abs(jac - X @ H_fd @ X) / abs(jac))
    ok = err_coth < 1e-6 and err_rv < 1e-8 and err_fd < 1e-4 and t.seconds < 60
    report(6, ok, f"|Hess r(X,X) - coth| {err_coth:.2e} (< 1e-6), radial/vertical {err_rv:.2e} (< 1e-8), "
                  f"finite-difference relative {err_fd:.2e} (< 1e-4), {t.seconds:.1f}s (< 60s)")
    assert ok


def test_criterion_07_laplacian_comparison(report, hyperbolic, heisenberg):
    cs.laplacian_sample(hyperbolic.chart, hyperbolic.default_seed_point, np.array([0.3, 1.4, 0.0]))
    with Timer() as t:
        samples = cs.sample_targets(hyperbolic, 50, _rng(7))
        rep = cs.check_laplacian_comparison(hyperbolic.chart, hyperbolic.default_seed_point, 1.0, samples)
    heis = cs.check_laplacian_comparison(heisenberg.chart, heisenberg.default_seed_point, 0.0,
                                         cs.sample_targets(heisenberg, 50, _rng(8)))
    flat = max(abs(r.delta_h_r - 1 / r.r) for r in heis.rows)
    ok = (rep.min_margin >= -1e-6 and rep.max_abs_margin < 1e-6 and heis.min_margin >= -1e-6
          and flat < 1e-6 and t.seconds < 60)
    report(7, ok, f"H2xR min margin {rep.min_margin:.2e} (>= -1e-6), max |margin| {rep.max_abs_margin:.2e} "
                  f"(< 1e-6) on 50 samples in {t.seconds:.1f}s (< 60s); Heisenberg |Delta_H r - 1/r| {flat:.2e}")
    assert ok


def test_criterion_08_minimality(report):
    minimal = ["sol", "heisenberg", "euclidean_product", "hyperbolic_product", "sphere_product"]
    worst = 0.0
    for k, name in enumerate(minimal):
        spec = mz.build(name)
        for p in sample_interior(spec.chart, 20, _rng(800 + k)):
            worst = max(worst, spec.chart.norm(p, cc.mean_curvature(spec.chart, p).components))
    horo = mz.build("horosphere_h3")
    pts = sample_interior(horo.chart, 20, _rng(810))
    horo_err = max(abs(horo.chart.norm(p, cc.mean_curvature(horo.chart, p).components) - 2.0) for p in pts)
    with Timer() as t:
        gap = min(abs(s.delta_r - s.delta_h_r) for s in
                  (cs.laplacian_sample(horo.chart, horo.default_seed_point, q)
                   for q in ([0.1, 0.2, 1.8], [-0.3, 0.4, 0.6])))
    ok = worst < 1e-9 and horo_err < 1e-6 and gap > 1e-3 and t.seconds < 5
    report(8, ok, f"|H| {worst:.2e} on minimal models (< 1e-9); horosphere ||H|-2| {horo_err:.2e} (< 1e-6); "
                  f"horosphere |Delta r - Delta_H r| {gap:.3f} (detected), {t.seconds:.1f}s")
    assert ok


def test_criterion_09_poincare(report, hyperbolic):
    bumps = cs.random_bumps(hyperbolic, 100, _rng(9))
    cs.rayleigh_details(hyperbolic.chart, bumps[0])
    cs.proof_replication(hyperbolic, bumps[0], 1.0)
    low, order, ibp = np.inf, -np.inf, 0.0
    chain = True
    with Timer() as t:
        for b in bumps:
            r = cs.rayleigh_details(hyperbolic.chart, b)
            low = min(low, r.horizontal)
            order = max(order, r.horizontal - r.full)
            pr = cs.proof_replication(hyperbolic, b, 1.0)
            ibp = max(ibp, pr.ibp_residual)
            chain &= pr.chain_holds
    ok = low >= 0.25 - 1e-6 and order <= 1e-10 and ibp < 1e-4 and chain and t.seconds < 120
    report(9, ok, f"min horizontal quotient {low:.4f} (>= 0.25), max(hor - full) {order:.2e} (<= 1e-10), "
                  f"IBP residual {ibp:.2e} (< 1e-4) on 100 bumps, {t.seconds:.1f}s (< 120s)")
    assert ok


def test_criterion_10_spectrum(report):
    with Timer() as t:
        res = [cs.radial_dirichlet_eigenvalue(2, 1.0, R, 4000) for R in (10.0, 20.0, 40.0)]
        p = cs.decay_exponent(res)
        disk = cs.radial_dirichlet_eigenvalue(2, 0.0, 1.0, 4000).eigenvalue
    lam20 = res[1].eigenvalue
    j0 = float(jn_zeros(0, 1)[0] ** 2)
    parts = {
        "lambda >= 1/4": all(r.eigenvalue >= 0.25 for r in res),
        "lambda(20) = 0.2747 +- 1e-3": abs(lam20 - 0.2747) <= 1e-3,
        "exponent in [1.8, 2.2]": 1.8 <= p <= 2.2,
        "j0^2 +- 1e-4": abs(disk - j0) < 1e-4,
        "< 30s": t.seconds < 30,
    }
    ok = all(parts.values())
    failed = [k for k, v in parts.items() if not v]
    report(10, ok, f"lambda(10,20,40) = {', '.join(f'{r.eigenvalue:.6f}' for r in res)}; exponent {p:.3f}; "
                   f"disk {disk:.6f} vs {j0:.6f}; {t.seconds:.1f}s"
                   + (f"; failing: {', '.join(failed)}" if failed else ""))
    assert ok, parts


def test_criterion_11_cartan_witnesses(report):
    opts = {"grid_points": 200, "tmax": 10.0}
    results = {}
    # warm-up compiles the Jacobi kernels of each chart
    for name in ("hyperbolic_product", "heisenberg", "sphere_product"):
        spec = mz.build(name)
        p = spec.default_seed_point
        gf.invert_normal_exp(spec.chart, p, gf.normal_exp(spec.chart, p, 0.3 * _unit(spec, p, [0.0, 1.0])))
    with Timer() as t:
        for name in ("hyperbolic_product", "heisenberg", "sphere_product"):
            cfg = cr.ExperimentConfig("verify-cartan", name, seed=SEED, options=dict(opts))
            results[name] = cr.verify_cartan(cfg, mz.build(name))
    good = all(results[m].passed for m in ("hyperbolic_product", "heisenberg"))
    max_it = max(next(c.value for c in results[m].checks if c.name == "witness_b_convergence")
                 for m in ("hyperbolic_product", "heisenberg"))
    sa = next(c for c in results["sphere_product"].checks if c.name == "witness_a_no_focal")
    sphere_ok = (not sa.passed) and sa.value is not None and abs(sa.value - np.pi) < 1e-4
    ok = good and max_it <= 20 and sphere_ok and t.seconds < 120
    report(11, ok, f"hyperbolic and Heisenberg witnesses {'all pass' if good else 'FAIL'} "
                   f"(max Newton iterations {max_it} <= 20); sphere witness (a) fails at {sa.value} (pi); "
                   f"{t.seconds:.1f}s (< 120s)")
    assert ok


SUITE = [
    ("check-tensors", "heisenberg", {"samples": 20, "pairs": 10}),
    ("geodesic", "sol", {}),
    ("jacobi", "hyperbolic_product", {"rho": [1.0, 3.0]}),
    ("focal", "sphere_product", {"tmax": 4.0}),
    ("hessian", "hyperbolic_product", {"rho": [1.0]}),
    ("laplacian-compare", "heisenberg", {"samples": 10, "fd_samples": 1}),
    ("poincare", "hyperbolic_product", {"bumps": 5, "proof_bumps": 2}),
    ("spectrum", "hyperbolic_product", {}),
    ("verify-cartan", "heisenberg", {"grid_points": 27}),
]


def _run_suite(out):
    for exp, model, opts in SUITE:
        cfg = cr.ExperimentConfig(exp, model, seed=SEED, out=str(out), options=dict(opts))
        cr.write_outputs(cr.run_experiment(cfg), cfg)
    return {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}


def test_criterion_12_determinism(report, tmp_path):
    a = _run_suite(tmp_path / "a")
    b = _run_suite(tmp_path / "b")
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    ok = same and len(a) >= len(SUITE)
    report(12, ok, f"{len(a)} CSV files from all {len(SUITE)} experiments byte-identical across two runs "
                   f"with seed {SEED}: {same}")
    assert ok
