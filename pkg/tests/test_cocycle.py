import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dichotomy_lab import (build_model, constant, constant_system, euclidean_norm, make_driver,
                           make_rate, random_entries_system, sample_orbits, verify_cocycle)
from dichotomy_lab.cocycle import FieldSpec, ProjectionFamily, evolve_unstable_inverse
from dichotomy_lab.errors import InvalidProjection, SingularRestriction

from conftest import HASHED_K, OBLIQUE_P, ORTHO_P
from oracles import plain_product


def model_formula(rate, P, lam, D, K, n, p):
    """The model cocycle written out term by term."""
    q = p.shifted(n)
    h = lambda x: D ** (x.ell % 2)  # noqa: E731
    r = float(rate.mu(q.ell) / rate.mu(p.ell))
    Q = np.eye(len(P)) - P
    return (K(p) / K(q)) * ((h(q) / h(p)) * r ** -lam * P + (h(p) / h(q)) * r ** lam * Q)


@pytest.mark.parametrize("kind, lam", [("exponential", 1.0), ("polynomial", 2.0),
                                       ("logarithmic", 0.7)])
@pytest.mark.parametrize("P", [ORTHO_P, OBLIQUE_P], ids=["ortho", "oblique"])
@given(seed=st.integers(0, 500), ell=st.integers(0, 12), n=st.integers(0, 20))
def test_model_matches_formula(kind, lam, P, seed, ell, n):
    rate, d = make_rate(kind), make_driver("irrational_rotation")
    sys, _, _ = build_model(rate, d, P, constant(lam), constant(2.0), HASHED_K)
    p = sample_orbits(d, 1, seed)[0].shifted(ell)
    expect = model_formula(rate, P, lam, 2.0, HASHED_K, n, p)
    got = sys.evolve(n, p)
    assert np.allclose(got, expect, rtol=1e-11, atol=1e-12 * np.abs(expect).max())
    assert np.allclose(plain_product(sys, n, p), got, rtol=1e-11,
                       atol=1e-12 * np.abs(expect).max())


def test_batched_steps_match_single_steps(small_poly):
    sc = small_poly
    for p in sc.points[:3]:
        batch = sc.system.steps(p, 10)
        for t in range(10):
            assert np.allclose(batch[t], sc.system.step(p.shifted(t)), rtol=1e-13)


def test_cocycle_identity_on_models(small_exp, small_poly):
    for sc in (small_exp, small_poly):
        rep = verify_cocycle(sc.system, sc.points[:4], 10)
        assert rep.passed, rep.max_residual


def test_cocycle_identity_random_entries():
    d = make_driver("cyclic", (11,))
    sys = random_entries_system(3, d, seed=4)
    rep = verify_cocycle(sys, sample_orbits(d, 3, 0), 8)
    assert rep.passed
    p = sample_orbits(d, 1, 0)[0]
    assert np.array_equal(sys.step(p), random_entries_system(3, d, seed=4).step(p))
    assert not np.array_equal(sys.step(p), random_entries_system(3, d, seed=5).step(p))


def test_exponential_diagonal_example():
    d = make_driver("cyclic", (5,))
    sys = constant_system(np.diag([math.exp(-1), math.e]), d)
    p = sample_orbits(d, 1, 0)[0]
    for n in (0, 1, 7, 20):
        assert np.allclose(sys.evolve(n, p), np.diag([math.exp(-n), math.exp(n)]), rtol=1e-12)


def test_cache_never_changes_results(small_exp):
    sc = small_exp
    p = sc.points[1]
    first = sc.system.evolve(9, p)
    sc.system.clear_cache()
    assert sc.system.cached_bytes == 0
    again = sc.system.evolve(9, p)
    assert np.array_equal(first, again)
    assert sc.system.cached_bytes > 0


def test_cache_budget_is_respected():
    d = make_driver("cyclic", (7,))
    sys = random_entries_system(2, d, seed=1, cache_bytes=32 * 5)
    p = sample_orbits(d, 1, 0)[0]
    sys.evolve(30, p)
    assert sys.cached_bytes <= 32 * 5
    assert np.allclose(sys.evolve(30, p), plain_product(sys, 30, p))


@pytest.mark.parametrize("P", [ORTHO_P, OBLIQUE_P], ids=["ortho", "oblique"])
def test_unstable_inverse_undoes_forward_map(P):
    rate, d = make_rate("polynomial"), make_driver("irrational_rotation")
    sys, _, cert = build_model(rate, d, P, constant(1.0), constant(2.0), HASHED_K)
    p = sample_orbits(d, 1, 3)[0].shifted(2)
    Q = np.eye(2) - P
    for n in (0, 1, 5, 13):
        back = evolve_unstable_inverse(sys, cert, n, p)
        assert np.allclose(sys.evolve(n, p) @ back, Q, atol=1e-11)
        assert np.allclose(back @ sys.evolve(n, p) @ Q, Q, atol=1e-11)


def test_singular_restriction_detected():
    d = make_driver("cyclic", (3,))
    sys = constant_system(np.diag([0.5, 0.0]), d)
    rate = make_rate("exponential")
    _, _, cert = build_model(rate, d, ORTHO_P, constant(1.0), constant(1.0), constant(1.0))
    with pytest.raises(SingularRestriction):
        evolve_unstable_inverse(sys, cert, 2, sample_orbits(d, 1, 0)[0])


def test_projection_validation():
    with pytest.raises(InvalidProjection):
        ProjectionFamily.constant(np.array([[1.0, 1.0], [0.0, 1.0]]))
    with pytest.raises(InvalidProjection):
        ProjectionFamily.constant(np.ones(3))


def test_model_rejects_point_varying_exponent():
    rate, d = make_rate("exponential"), make_driver("cyclic", (5,))
    with pytest.raises(ValueError):
        build_model(rate, d, ORTHO_P, FieldSpec("point_hashed", (1.0, 2.0)), constant(1.0),
                    constant(1.0))


def test_field_values_along_orbit():
    d = make_driver("irrational_rotation")
    base = sample_orbits(d, 1, 9)[0]
    for spec in (HASHED_K, FieldSpec("class_hashed", (1.0, 3.0)), constant(2.5)):
        vals = spec.along(base, 12)
        expect = [spec(base.shifted(t)) for t in range(13)]
        assert np.allclose(vals, expect, rtol=1e-15)
        lo, hi = spec.bounds()
        assert np.all((vals >= lo) & (vals <= hi))
    cls = FieldSpec("class_hashed", (1.0, 3.0))
    assert cls(base) == cls(base.shifted(40))


def test_euclidean_norm_equivalence():
    d = make_driver("cyclic", (3,))
    p = sample_orbits(d, 1, 0)[0]
    assert euclidean_norm(3).equivalence(p) == (1.0, 1.0)
