import pytest
from hypothesis import given
from hypothesis import strategies as st

from dichotomy_lab import OrbitPoint, make_driver, sample_orbits, shift
from dichotomy_lab.errors import DriverError, NegativeTime, WindowExceeded

DRIVERS = [("cyclic", (7,)), ("irrational_rotation", ()), ("bernoulli_window", (3, 64))]


def a_state(d, i):
    return sample_orbits(d, 1, i)[0].omega


@pytest.mark.parametrize("kind, params", DRIVERS)
@given(seed=st.integers(0, 1000), n=st.integers(-40, 40))
def test_theta_is_invertible(kind, params, seed, n):
    d = make_driver(kind, params)
    w = a_state(d, seed)
    assert d.theta(d.theta(w, n), -n) == w
    assert d.theta(d.theta(w, 3), n) == d.theta(w, 3 + n)


@pytest.mark.parametrize("kind, params", DRIVERS)
def test_orbit_states_agree_with_iteration(kind, params):
    d = make_driver(kind, params)
    w = a_state(d, 5)
    states = d.orbit_states(w, 20)
    q = w
    for s in states:
        assert s == q
        q = d.theta(q)


@pytest.mark.parametrize("kind, params", DRIVERS)
def test_sampling_is_deterministic_and_distinct(kind, params):
    d = make_driver(kind, params)
    a = sample_orbits(d, 5, 11)
    b = sample_orbits(d, 5, 11)
    assert [p.omega for p in a] == [p.omega for p in b]
    assert len({p.omega for p in a}) == 5
    assert all(p.ell == 0 for p in a)


def test_encode_decode_round_trip():
    for kind, params in DRIVERS:
        d = make_driver(kind, params)
        w = a_state(d, 2)
        assert d.decode(d.encode(w)) == w


@given(ell=st.integers(0, 30), n=st.integers(0, 30))
def test_orbit_class_is_forward_invariant(ell, n):
    d = make_driver("irrational_rotation")
    base = sample_orbits(d, 1, 4)[0]
    p = base.shifted(ell)
    assert p.shifted(n).orbit_class == p.orbit_class == base.orbit_class
    assert p.shifted(n).ell == ell + n


def test_negative_time_rejected():
    d = make_driver("cyclic", (5,))
    p = OrbitPoint(2, 0, d)
    assert shift(p, -2).ell == 0
    with pytest.raises(NegativeTime):
        shift(p, -3)
    with pytest.raises(NegativeTime):
        OrbitPoint(-1, 0, d)


def test_bernoulli_window_exceeded():
    d = make_driver("bernoulli_window", (1, 8))
    w = (0, 0)
    assert d.theta(w, 8) == (0, 8)
    with pytest.raises(WindowExceeded):
        d.theta(w, 9)
    with pytest.raises(WindowExceeded):
        d.orbit_states(w, 9)


def test_bernoulli_symbols_are_reproducible():
    d = make_driver("bernoulli_window", (1, 16))
    assert list(d.symbols(3)) == list(make_driver("bernoulli_window", (1, 16)).symbols(3))
    assert set(d.symbols(3)) <= {-1, 1}


@pytest.mark.parametrize("kind, params", [("cyclic", (0,)), ("irrational_rotation", (0.3, 80)),
                                          ("bernoulli_window", (1, 0)), ("nope", ())])
def test_bad_driver_params(kind, params):
    with pytest.raises(DriverError):
        make_driver(kind, params)


def test_cyclic_sample_count_limit():
    with pytest.raises(DriverError):
        sample_orbits(make_driver("cyclic", (3,)), 4, 0)
