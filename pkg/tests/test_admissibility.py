import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dichotomy_lab import (SignalGrid, admissibility_constant, check_uniqueness, estimate_T_norm,
                           homogeneous_solution, solve_admissibility)
from dichotomy_lab.errors import CertificateRequired, TailNotConvergent
from dichotomy_lab.grid import GridSpec

from conftest import OBLIQUE_P, Scenario
from oracles import forward_iterate, recurrence_bvp

MODELS = ["exp_model", "poly_model", "log_model"]


def probes(sc, count, seed=0):
    """Alternating dense and impulse signals, all reproducible."""
    out = []
    rng = np.random.default_rng(seed)
    for j in range(count):
        if j % 2 == 0:
            out.append(SignalGrid.random(sc.points, sc.horizon, sc.cert.norm, seed + j))
        else:
            i = int(rng.integers(len(sc.points)))
            n = int(rng.integers(1, sc.horizon + 1))
            out.append(SignalGrid.impulse(sc.points, sc.horizon, sc.cert.norm, i, n,
                                          rng.standard_normal(sc.system.dim)))
    return out


def test_constant_formula(exp_model):
    p = exp_model.points[0]
    e = math.e
    assert admissibility_constant(exp_model.cert, exp_model.rate, p) == pytest.approx(
        1.0 / (2.0 * (e ** 2 + e)), rel=1e-14)


@pytest.mark.parametrize("fixture", MODELS)
def test_residual_and_weighted_bound(fixture, request):
    sc = request.getfixturevalue(fixture)
    for y in probes(sc, 8):
        x = solve_admissibility(sc.system, sc.cert, sc.rate, y)
        y_norm = y.sup_norm()
        assert x.info["max_residual"] <= 1e-9 * y_norm
        C = [admissibility_constant(sc.cert, sc.rate, p) for p in sc.points]
        assert x.weighted_norm(C) <= y_norm * (1 + 1e-12)
        assert x.info["weighted_norm"] == pytest.approx(x.weighted_norm(C), rel=1e-12)


@pytest.mark.parametrize("fixture", ["small_exp", "small_poly"])
@given(seed=st.integers(0, 10_000))
def test_matches_boundary_value_oracle(fixture, request, seed):
    sc = request.getfixturevalue(fixture)
    y = SignalGrid.random(sc.points, sc.horizon, sc.cert.norm, seed)
    x = solve_admissibility(sc.system, sc.cert, sc.rate, y)
    Q = np.eye(2) - sc.P
    for i, p in enumerate(sc.points):
        steps = sc.system.steps(p, sc.horizon)
        phi = np.array([float(sc.rate.phi(p.ell + n)) for n in range(sc.horizon + 1)])
        rhs = y.values[i] / phi[:, None]
        ref = recurrence_bvp(steps, rhs, sc.P, Q)
        scale = np.abs(ref).max()
        assert np.abs(x.values[i] - ref).max() <= 1e-8 * scale


def test_forward_iteration_reproduces_solution(poly_model):
    sc = poly_model
    y = SignalGrid.random(sc.points, sc.horizon, sc.cert.norm, 3)
    x = solve_admissibility(sc.system, sc.cert, sc.rate, y)
    for i, p in enumerate(sc.points[::7]):
        i = sc.points.index(p)
        steps = sc.system.steps(p, sc.horizon)
        phi = np.exp(sc.rate.log_phi(p.ell + np.arange(sc.horizon + 1)))
        fwd = forward_iterate(steps, x.values[i, 0], y.values[i] / phi[:, None])
        scale = np.abs(x.values[i]).max()
        assert np.abs(fwd - x.values[i]).max() <= 1e-8 * scale


def test_solution_is_linear(small_poly):
    sc = small_poly
    a = SignalGrid.random(sc.points, sc.horizon, sc.cert.norm, 1)
    b = SignalGrid.random(sc.points, sc.horizon, sc.cert.norm, 2)
    xa = solve_admissibility(sc.system, sc.cert, sc.rate, a)
    xb = solve_admissibility(sc.system, sc.cert, sc.rate, b)
    xab = solve_admissibility(sc.system, sc.cert, sc.rate, a.scaled(2.0) + b)
    assert np.allclose(xab.values, 2.0 * xa.values + xb.values, rtol=1e-12, atol=1e-14)


def test_initial_value_lies_in_kernel(log_model):
    sc = log_model
    x = solve_admissibility(sc.system, sc.cert, sc.rate,
                            SignalGrid.random(sc.points, sc.horizon, sc.cert.norm, 0))
    assert x.in_kernel(sc.cert.projections)


def test_hold_extension_matches_longer_grid(small_exp):
    sc = small_exp
    H, long_H = sc.horizon, sc.horizon + 60
    y = SignalGrid.random(sc.points, H, sc.cert.norm, 5)
    held = np.concatenate([y.values, np.repeat(y.values[:, -1:], long_H - H, axis=1)], axis=1)
    y_long = SignalGrid(sc.points, held, sc.cert.norm)
    x_hold = solve_admissibility(sc.system, sc.cert, sc.rate, y, extension="hold", tail_eps=1e-14)
    x_long = solve_admissibility(sc.system, sc.cert, sc.rate, y_long)
    scale = np.abs(x_long.values).max()
    assert np.abs(x_hold.values - x_long.values[:, :H + 1]).max() <= 1e-10 * scale
    assert x_hold.info["tail_terms"] > 0


def test_hold_tail_too_slow():
    sc = Scenario("logarithmic", 0.5, P=OBLIQUE_P, grid=GridSpec(orbits=1, ell_max=2, horizon=8))
    y = SignalGrid.random(sc.points, sc.horizon, sc.cert.norm, 0)
    with pytest.raises(TailNotConvergent):
        solve_admissibility(sc.system, sc.cert, sc.rate, y, extension="hold", j_max=1000)


def test_input_errors(small_exp):
    sc = small_exp
    y = SignalGrid.random(sc.points, sc.horizon, sc.cert.norm, 0)
    with pytest.raises(CertificateRequired):
        solve_admissibility(sc.system, None, sc.rate, y)
    bad = SignalGrid(sc.points, y.values.copy(), sc.cert.norm)
    bad.values[0, 0] = 1.0
    with pytest.raises(ValueError):
        solve_admissibility(sc.system, sc.cert, sc.rate, bad)
    with pytest.raises(ValueError):
        solve_admissibility(sc.system, sc.cert, sc.rate, y, extension="mirror")
    with pytest.raises(ValueError):
        SignalGrid.impulse(sc.points, sc.horizon, sc.cert.norm, 0, 0, [1.0, 0.0])


def test_signal_json_round_trip(small_poly):
    sc = small_poly
    y = SignalGrid.random(sc.points, sc.horizon, sc.cert.norm, 8)
    data = json.loads(json.dumps(y.to_json()))
    back = SignalGrid.from_json(data, sc.driver, sc.cert.norm)
    assert back.points == y.points
    assert np.array_equal(back.values, y.values)


def homogeneous_cases(sc):
    rng = np.random.default_rng(0)
    range_v, ker_v = sc.P[:, 0], np.array([-sc.P[0, 1], 1.0])
    for _ in range(6):
        a, b = rng.standard_normal(2)
        yield "not_in_kernel", a * range_v
        yield "unbounded", b * ker_v
        yield "not_in_kernel", a * range_v + b * ker_v


@pytest.mark.parametrize("fixture", MODELS)
def test_homogeneous_solutions_flagged(fixture, request):
    sc = request.getfixturevalue(fixture)
    pts = sc.points[::5]
    for expected, v in homogeneous_cases(sc):
        x = homogeneous_solution(sc.system, sc.cert.norm, pts, sc.horizon, v)
        rep = check_uniqueness(sc.system, sc.cert, sc.rate, x)
        assert set(rep.flags.values()) == {expected}
        assert rep.violations == len(pts)
        assert rep.homogeneous_residual < 1e-12
        if expected == "unbounded":
            C = np.array([admissibility_constant(sc.cert, sc.rate, p) for p in pts])
            lower = np.array([row[5] for row in rep.rows])
            seen = C * x.cell_norms().max(axis=1)
            assert np.all(seen >= lower * (1 - 1e-9))


def test_zero_solution_accepted(small_exp):
    sc = small_exp
    x = homogeneous_solution(sc.system, sc.cert.norm, sc.points, sc.horizon, np.zeros(2))
    assert check_uniqueness(sc.system, sc.cert, sc.rate, x).passed


def test_T_norm_estimate_within_bound(exp_model):
    sc = exp_model
    est = estimate_T_norm(sc.system, sc.cert, sc.rate, sc.points, sc.horizon, probe_count=9)
    assert 0 < est.estimate <= est.upper_bound * (1 + 1e-12)
    assert est.upper_bound <= 1.0 + 1e-12
    assert len(est.history) == 9 and max(est.history) == est.estimate
    again = estimate_T_norm(sc.system, sc.cert, sc.rate, sc.points, sc.horizon, probe_count=9)
    assert again.estimate == est.estimate
