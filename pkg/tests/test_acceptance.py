"""One check per acceptance criterion; each prints a PASS/FAIL line with its measurements."""

import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from dichotomy_lab import (SignalGrid, admissibility_constant, build_adapted_norm,
                           check_uniqueness, derive_exponents, estimate_T_norm, extract_munu,
                           find_minimal_growth, fit_growth_bound, homogeneous_solution,
                           identify_splitting, lemma_grid, make_rate, munu_model, perturb,
                           perturbed_growth_bound, refit_perturbed, robust_solve,
                           robustness_sweep, solve_admissibility, verify_adapted_bounds,
                           verify_dichotomy, verify_munu)
from dichotomy_lab.cli import SUBCOMMANDS, load_scenario
from dichotomy_lab.cocycle import FieldSpec
from dichotomy_lab.grid import GridSpec, SampleGrid
from dichotomy_lab.robustness import admissible_threshold

from conftest import HASHED_K, OBLIQUE_P, ORTHO_P, Scenario
from oracles import forward_iterate

ROOT = Path(__file__).resolve().parents[1]
PRESETS = ("exponential", "polynomial", "logarithmic")
VARYING = dict(lam=FieldSpec("class_hashed", (0.5, 2.0), salt="lam"),
               D=FieldSpec("class_hashed", (1.0, 3.0), salt="D"),
               K=FieldSpec("point_hashed", (1.0, 4.0), salt="K"))
RHO_MARGIN = 0.5
AMPLIFICATION_CAP = 1e6


@pytest.fixture
def announce(capsys):
    def say(k, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {k}: {'PASS' if ok else 'FAIL'}  {detail}")
    return say


def model_scenarios():
    """Each preset rate with constant constants and with orbit-class-varying ones."""
    for kind in PRESETS:
        yield f"{kind}/constant", lambda kind=kind: Scenario(kind, 1.0, P=ORTHO_P, D=2.0,
                                                             K=HASHED_K)
        yield f"{kind}/varying", lambda kind=kind: Scenario(
            kind, VARYING["lam"], P=OBLIQUE_P, D=VARYING["D"], K=VARYING["K"],
            driver="bernoulli_window")


_BUILT = {}


def built(name, factory):
    if name not in _BUILT:
        _BUILT[name] = factory()
    return _BUILT[name]


def test_criterion_1_lemma(announce):
    t0 = time.perf_counter()
    s_values = list(range(2, 65))
    r_values = np.unique(np.concatenate([np.arange(2, 65),
                                         np.round(np.geomspace(64, 10_000, 200)).astype(int)]))
    cells, failures, worst = 0, 0, math.inf
    for kind in PRESETS:
        rows = lemma_grid(make_rate(kind), (0.5, 1.0, 1.5, 2.0, 3.0), s_values, r_values)
        cells += len(rows)
        failures += sum(not r.holds for r in rows)
        for r in rows:
            worst = min(worst, r.log_sum - r.log_lower, r.log_upper - r.log_sum)
    elapsed = time.perf_counter() - t0
    ok = failures == 0 and elapsed <= 30 and worst >= -math.log1p(1e-12)
    announce(1, ok, f"{cells} cells, {failures} failures, worst log slack {worst:.3e}, "
                    f"{elapsed:.2f}s (limit 30s)")
    assert ok


@pytest.mark.parametrize("name, factory", list(model_scenarios()), ids=lambda v: str(v))
def test_criterion_2_model_dichotomy(announce, name, factory):
    t0 = time.perf_counter()
    sc = built(name, factory)
    rep = verify_dichotomy(sc.system, sc.cert, sc.rate, sc.points, sc.horizon)
    elapsed = time.perf_counter() - t0
    cells = len(rep.rows)
    ok = rep.passed and elapsed <= 10 and len({p.orbit_class for p in sc.points}) == 8
    announce(2, ok, f"[{name}] {cells} cells, worst margin {rep.worst_margin:.3e}, "
                    f"{elapsed:.2f}s (limit 10s)")
    assert ok


def probe_signals(sc, count=32):
    rng = np.random.default_rng(2024)
    for j in range(count):
        if j % 2 == 0:
            yield SignalGrid.random(sc.points, sc.horizon, sc.cert.norm, j)
        else:
            i = int(rng.integers(len(sc.points)))
            n = int(rng.integers(1, sc.horizon + 1))
            yield SignalGrid.impulse(sc.points, sc.horizon, sc.cert.norm, i, n,
                                     rng.standard_normal(2))


@pytest.mark.parametrize("name, factory", list(model_scenarios()), ids=lambda v: str(v))
def test_criterion_3_admissibility(announce, name, factory):
    sc = built(name, factory)
    C = np.array([admissibility_constant(sc.cert, sc.rate, p) for p in sc.points])
    worst_res, worst_ratio, worst_fwd, compared = 0.0, 0.0, 0.0, 0
    for j, y in enumerate(probe_signals(sc)):
        x = solve_admissibility(sc.system, sc.cert, sc.rate, y)
        y_norm = y.sup_norm()
        worst_res = max(worst_res, float(x.residuals.max()) / y_norm)
        worst_ratio = max(worst_ratio, x.weighted_norm(C) / y_norm)
        if j % 8:
            continue
        # forward iteration amplifies round-off in x(0) by the unstable growth; compare the
        # cells whose certified amplification stays below AMPLIFICATION_CAP
        for i, p in enumerate(sc.points[::9]):
            i = sc.points.index(p)
            steps = sc.system.steps(p, sc.horizon)
            n = np.arange(sc.horizon + 1)
            phi = np.exp(sc.rate.log_phi(p.ell + n))
            fwd = forward_iterate(steps, x.values[i, 0], y.values[i] / phi[:, None])
            amp = math.log(sc.cert.D(p)) + sc.cert.lam(p) * sc.rate.log_ratio(p.ell, p.ell + n)
            keep = amp <= math.log(AMPLIFICATION_CAP)
            scale = np.abs(x.values[i]).max()
            err = np.abs(fwd[keep] - x.values[i][keep]).max() / scale
            worst_fwd = max(worst_fwd, float(err))
            compared += int(keep.sum())
    ok = worst_res <= 1e-9 and worst_ratio <= 1 + 1e-12 and worst_fwd <= 1e-8
    announce(3, ok, f"[{name}] 32 probes, residual/|y| {worst_res:.2e}, |x|_C/|y| "
                    f"{worst_ratio:.4f}, forward-iteration rel err {worst_fwd:.2e} "
                    f"on {compared} cells")
    assert ok


@pytest.mark.parametrize("name, factory", list(model_scenarios()), ids=lambda v: str(v))
def test_criterion_4_uniqueness(announce, name, factory):
    sc = built(name, factory)
    rng = np.random.default_rng(7)
    range_v, ker_v = sc.P[:, 0], np.array([-sc.P[0, 1], 1.0])
    cases = flagged = 0
    for _ in range(10):
        for v in (rng.standard_normal() * range_v, rng.standard_normal() * ker_v):
            x = homogeneous_solution(sc.system, sc.cert.norm, sc.points, sc.horizon, v)
            rep = check_uniqueness(sc.system, sc.cert, sc.rate, x)
            cases += len(rep.flags)
            flagged += rep.violations
    ok = flagged == cases
    announce(4, ok, f"[{name}] {flagged}/{cases} nonzero homogeneous solutions flagged")
    assert ok


@pytest.mark.parametrize("kind, lam", [("exponential", 1.0), ("polynomial", 2.0)])
def test_criterion_5_converse(announce, kind, lam):
    sc = built(f"{kind}/criterion5", lambda: Scenario(kind, lam, P=ORTHO_P))
    t0 = time.perf_counter()
    split = identify_splitting(sc.system, sc.norm, sc.rate, sc.points, sc.horizon)
    angle = max(split.angle_to(p, sc.P) for p in sc.points)
    T = estimate_T_norm(sc.system, sc.cert, sc.rate, sc.points, sc.horizon).estimate
    M = fit_growth_bound(sc.system, sc.norm, sc.rate, sc.cert.lam, sc.points, sc.horizon)
    w = find_minimal_growth(sc.rate, 2.0, 256)
    C = lambda p: admissibility_constant(sc.cert, sc.rate, p)  # noqa: E731
    de = derive_exponents(sc.system, split, sc.rate, w, sc.norm, M, sc.cert.lam, C, T,
                          sc.points, sc.horizon)
    a_max = max(de.a.values())
    ok = angle <= 1e-8 and a_max <= lam and de.report.passed
    announce(5, ok, f"[{kind}] max angle {angle:.2e}, a = {a_max:.4g} <= lambda = {lam}, "
                    f"derived certificate worst margin {de.report.worst_margin:.3e}, "
                    f"{time.perf_counter() - t0:.2f}s")
    assert ok


@pytest.mark.parametrize("kind, lam, sweep_refit", [("exponential", 1.0, True),
                                                    ("polynomial", 2.0, False)])
def test_criterion_6_robustness(announce, kind, lam, sweep_refit):
    sc = built(f"{kind}/criterion5", lambda: Scenario(kind, lam, P=ORTHO_P))
    t0 = time.perf_counter()
    T = estimate_T_norm(sc.system, sc.cert, sc.rate, sc.points, sc.horizon).estimate
    M = fit_growth_bound(sc.system, sc.norm, sc.rate, sc.cert.lam, sc.points, sc.horizon)
    c_fn = admissible_threshold(sc.cert, sc.rate, M, T, RHO_MARGIN)
    c = min(c_fn(p) for p in sc.points)
    limit = 1.1 * RHO_MARGIN            # 1.1 rho ||T|| with rho = rho_margin / ||T||
    y = SignalGrid.random(sc.points, sc.horizon, sc.cert.norm, 0)
    worst_rate, worst_iter, growth_ok = 0.0, 0, True
    for frac in (0.25, 0.5, 1.0):
        pert = perturb(sc.system, ("random", 0), frac * c, sc.cert, sc.rate)
        sol = robust_solve(pert, sc.cert, sc.rate, y)
        worst_rate = max(worst_rate, sol.contraction_rate)
        worst_iter = max(worst_iter, sol.iterations)
        rep = perturbed_growth_bound(pert, sc.cert, sc.rate, M, sc.cert.lam, sc.points,
                                     sc.horizon)
        exps_ok = all(abs(e - (lam + sc.rate.eta / 2)) < 1e-12 for e in rep.exponent.values())
        growth_ok = growth_ok and rep.passed and exps_ok
    pert = perturb(sc.system, ("random", 0), c, sc.cert, sc.rate)
    refit = refit_perturbed(pert, sc.rate, sc.points, sc.horizon)
    lam_psi = min(refit.lam(p) for p in sc.points)
    rows = robustness_sweep(sc.system, sc.cert, sc.rate, sc.points, sc.horizon, M, T,
                            RHO_MARGIN, count=8, refit=sweep_refit)
    sub = [r for r in rows if r.magnitude <= r.threshold]
    sweep_ok = all(r.converged and r.contraction_rate <= limit for r in sub)
    if sweep_refit:
        sweep_ok = sweep_ok and all(r.refit_lambda > 0 for r in sub)
    ok = (worst_rate <= limit and worst_iter <= 200 and growth_ok and lam_psi > 0 and sweep_ok)
    announce(6, ok, f"[{kind}] threshold c = {c:.3e}, contraction {worst_rate:.3f} <= "
                    f"{limit:.3f}, iterations {worst_iter}, growth bound {growth_ok}, "
                    f"refit lambda {lam_psi:.3g}, sweep {len(sub)} sub-threshold rows converged "
                    f"{sweep_ok}, {time.perf_counter() - t0:.2f}s")
    assert ok


@pytest.mark.parametrize("config", ["munu_exp.json", "munu_poly.json"])
def test_criterion_7_norm_equivalence(announce, config):
    from dichotomy_lab.cli import _field, _matrix, _rate
    from dichotomy_lab import make_driver
    sc, _ = load_scenario(ROOT / "configs" / config)
    t0 = time.perf_counter()
    mu, nu = _rate(sc.rate), _rate(sc.norm.nu)
    drv = make_driver(sc.driver.kind, sc.driver.params)
    g = sc.grid
    points = SampleGrid.sample(drv, GridSpec(g.orbits, g.ell_max, g.horizon, g.seed)).points()
    s = sc.system
    sys_, cert = munu_model(mu, nu, drv, _matrix(s.P, "system.P"), _field(s.lam), _field(s.D),
                            sc.norm.epsilon)
    source = verify_munu(sys_, cert, mu, points, g.horizon)
    anorm = build_adapted_norm(sys_, cert, mu, points, g.horizon)
    rep = verify_adapted_bounds(sys_, cert, anorm, mu, points, g.horizon)
    Kbar, eps_bar, _ = anorm.sandwich
    consts_ok = all(
        abs(Kbar(p) - (2 * cert.D(p) + cert.strong[0](p))) < 1e-12
        and abs(eps_bar(p) - max(cert.epsilon(p), cert.strong[2](p))) < 1e-15
        for p in points)
    back = extract_munu(sys_, anorm.certificate(), anorm.sandwich, anorm.M, anorm.lambda_bar,
                        mu, points, g.horizon)
    elapsed = time.perf_counter() - t0
    ok = (source.passed and rep.passed and consts_ok and anorm.M == 3.0
          and back.report.passed and elapsed <= 20)
    w = rep.worst
    announce(7, ok, f"[{config}] sandwich margin {rep.sandwich_worst:.2e}, stable {w['stable']:.2e}, "
                    f"backward {w['backward']:.2e}, forward {w['forward']:.2e}, growth(M=3) "
                    f"{w['growth']:.2e}, round trip {back.report.passed}, {elapsed:.2f}s "
                    f"(limit 20s)")
    assert ok


DETERMINISM_RUNS = [
    ("lemma-check", "exp_model.json", []),
    ("verify-dichotomy", "log_varying.json", []),
    ("solve-admissibility", "poly_model.json", ["--horizon", "24"]),
    ("robustness-sweep", "exp_model.json", ["--horizon", "16"]),
    ("norm-equivalence", "munu_poly.json", ["--horizon", "16"]),
    ("derive-exponents", "exp_model.json", ["--horizon", "16"]),
]


def test_criterion_8_determinism(announce, tmp_path):
    assert {c for c, _, _ in DETERMINISM_RUNS} == set(SUBCOMMANDS)
    identical, details = True, []
    for command, config, extra in DETERMINISM_RUNS:
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / f"{command}-{tag}.csv"
            proc = subprocess.run(
                [sys.executable, "-m", "dichotomy_lab.cli", command, "--config",
                 str(ROOT / "configs" / config), "--out", str(out), *extra],
                capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
            manifest = json.loads((tmp_path / (out.name + ".manifest.json")).read_text())
            manifest["outputs"] = list(manifest["outputs"].values())
            outs.append((out.read_bytes(), manifest))
        same = outs[0][0] == outs[1][0] and outs[0][1] == outs[1][1]
        identical = identical and same
        details.append(f"{command}:{'same' if same else 'DIFFERENT'}")
    announce(8, identical, "two fresh processes per subcommand; " + ", ".join(details))
    assert identical
