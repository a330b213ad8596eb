"""Linear cocycles over a driver, random norms, projection families and the model system."""

from __future__ import annotations

import hashlib
import math
import os
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .driver import Driver, OrbitPoint, shift
from .errors import InvalidProjection, SingularRestriction
from .growth import GrowthRate

CACHE_ENV = "DICHOTOMY_LAB_CACHE_BYTES"
DEFAULT_CACHE_BYTES = 256 * 2**20
PROJECTION_TOL = 1e-12
RANK_TOL = 1e-12
INVERSE_TOL = 1e-10


# ---------------------------------------------------------------- point fields

def _unit_hash(key: str, salt: str) -> float:
    digest = hashlib.blake2b(f"{salt}|{key}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2.0**64


_ALONG_CACHE: "OrderedDict[tuple, np.ndarray]" = OrderedDict()
_ALONG_SLOTS = 64
_along_lock = threading.Lock()


def _hashes_along(salt: str, base: OrbitPoint, length: int) -> np.ndarray:
    """``_unit_hash`` of the points ``Theta^t base``, ``t = 0..length``; prefixes are reused."""
    key = (salt, base)
    with _along_lock:
        have = _ALONG_CACHE.get(key)
        if have is not None and len(have) > length:
            _ALONG_CACHE.move_to_end(key)
            return have[:length + 1]
    enc = base.driver.encode
    states = base.driver.orbit_states(base.omega, length)
    u = np.array([_unit_hash(f"{base.ell + t}|{enc(w)}", salt) for t, w in enumerate(states)])
    u.setflags(write=False)
    with _along_lock:
        _ALONG_CACHE[key] = u
        _ALONG_CACHE.move_to_end(key)
        while len(_ALONG_CACHE) > _ALONG_SLOTS:
            _ALONG_CACHE.popitem(last=False)
    return u


@dataclass(frozen=True)
class FieldSpec:
    """A real-valued function of orbit points.

    kinds:
      constant      (value,)
      class_hashed  (low, high)  same value on every point of an orbit class
      point_hashed  (low, high)  independent value per point
      nu_power      (eps,)       nu_ell ** eps, needs ``rate``
    """

    kind: str
    params: tuple
    salt: str = "field"
    rate: GrowthRate | None = field(default=None, compare=False)

    def __call__(self, p: OrbitPoint) -> float:
        if self.kind == "constant":
            return float(self.params[0])
        if self.kind in ("class_hashed", "point_hashed"):
            low, high = map(float, self.params)
            key = p.orbit_class if self.kind == "class_hashed" else p.key
            return low + (high - low) * _unit_hash(key, self.salt)
        if self.kind == "nu_power":
            if self.rate is None:
                raise ValueError("nu_power field needs a rate")
            return float(math.exp(float(self.params[0]) * float(self.rate.log_mu(p.ell))))
        raise ValueError(f"unknown field kind {self.kind!r}")

    @property
    def class_invariant(self) -> bool:
        return self.kind in ("constant", "class_hashed")

    def along(self, base: OrbitPoint, length: int) -> np.ndarray:
        """Values at ``Theta^t base`` for ``t = 0..length``."""
        if self.kind == "constant":
            return np.full(length + 1, float(self.params[0]))
        if self.kind == "class_hashed":
            return np.full(length + 1, self(base))
        if self.kind == "nu_power":
            ells = base.ell + np.arange(length + 1)
            return np.exp(float(self.params[0]) * self.rate.log_mu(ells))
        low, high = map(float, self.params)
        return low + (high - low) * _hashes_along(self.salt, base, length)

    def bounds(self) -> tuple[float, float]:
        if self.kind == "constant":
            return float(self.params[0]), float(self.params[0])
        if self.kind in ("class_hashed", "point_hashed"):
            return float(self.params[0]), float(self.params[1])
        return 1.0, math.inf


@dataclass(frozen=True)
class ClassTable:
    """Orbit-class values looked up by ``p.orbit_class``."""

    values: Mapping[str, float]

    def __call__(self, p: OrbitPoint) -> float:
        return float(self.values[p.orbit_class])

    @property
    def class_invariant(self) -> bool:
        return True


def orbit(base: OrbitPoint, length: int):
    """Yield ``Theta^t base`` for ``t = 0..length``."""
    p = base
    yield p
    for _ in range(length):
        p = shift(p, 1)
        yield p


def values_along(f, base: OrbitPoint, length: int) -> np.ndarray:
    if hasattr(f, "along"):
        return f.along(base, length)
    return np.array([f(p) for p in orbit(base, length)], dtype=float)


def constant(value: float) -> FieldSpec:
    return FieldSpec("constant", (float(value),))


# ---------------------------------------------------------------- random norms

@dataclass(frozen=True)
class RandomNorm:
    """``||v||_p = K(p) ||v||_2`` (scalar) or ``sqrt(v^T W(p) v)`` (spd)."""

    kind: str
    weight: Callable[[OrbitPoint], object]
    dim: int

    def factor(self, p: OrbitPoint) -> np.ndarray:
        """``F`` with ``||v||_p = ||F v||_2``."""
        if self.kind == "scalar":
            k = float(self.weight(p))
            if not k > 0:
                raise ValueError(f"scalar norm weight must be positive at {p.key}")
            return k * np.eye(self.dim)
        w = np.asarray(self.weight(p), dtype=float)
        return np.linalg.cholesky(w).T

    def scalar(self, p: OrbitPoint) -> float:
        if self.kind != "scalar":
            raise ValueError("spd norm has no scalar weight")
        return float(self.weight(p))

    def norm(self, v, p: OrbitPoint) -> float:
        return float(np.linalg.norm(self.factor(p) @ np.asarray(v, dtype=float)))

    def op_norm(self, m, p_from: OrbitPoint, p_to: OrbitPoint) -> float:
        f_from = self.factor(p_from)
        f_to = self.factor(p_to)
        return float(np.linalg.norm(f_to @ np.asarray(m) @ np.linalg.inv(f_from), 2))

    def equivalence(self, p: OrbitPoint) -> tuple[float, float]:
        """``(c1, c2)`` with ``c1 ||v||_2 <= ||v||_p <= c2 ||v||_2``."""
        s = np.linalg.svd(self.factor(p), compute_uv=False)
        return float(s[-1]), float(s[0])


def scalar_norm(weight: Callable[[OrbitPoint], float], dim: int) -> RandomNorm:
    return RandomNorm("scalar", weight, dim)


def euclidean_norm(dim: int) -> RandomNorm:
    return RandomNorm("scalar", constant(1.0), dim)


def spd_norm(weight: Callable[[OrbitPoint], np.ndarray], dim: int) -> RandomNorm:
    return RandomNorm("spd", weight, dim)


# ---------------------------------------------------------------- projections

def check_projection(P: np.ndarray) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InvalidProjection("projection must be a square matrix")
    if np.linalg.norm(P @ P - P, 2) > PROJECTION_TOL * max(1.0, np.linalg.norm(P, 2)):
        raise InvalidProjection(f"||P^2 - P|| = {np.linalg.norm(P @ P - P, 2):.3e} exceeds tolerance")
    return P


def range_kernel(P: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal bases of ``range P`` and ``ker P`` from one SVD."""
    u, s, vt = np.linalg.svd(P)
    scale = s[0] if s.size and s[0] > 0 else 1.0
    rank = int(np.sum(s > RANK_TOL * scale))
    return u[:, :rank], vt[rank:].T


def projection_onto(V: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """The projection onto ``span V`` along ``span Z``."""
    d = V.shape[0]
    basis = np.hstack([V, Z])
    sel = np.zeros((d, d))
    sel[: V.shape[1], : V.shape[1]] = np.eye(V.shape[1])
    return basis @ sel @ np.linalg.inv(basis)


@dataclass(frozen=True)
class ProjectionFamily:
    """Point-dependent projections; ``table`` overrides ``default`` where present."""

    dim: int
    default: np.ndarray | None = None
    table: Mapping[OrbitPoint, np.ndarray] = field(default_factory=dict)

    def __call__(self, p: OrbitPoint) -> np.ndarray:
        P = self.table.get(p)
        if P is None:
            if self.default is None:
                raise KeyError(f"no projection recorded at {p.key}")
            P = self.default
        return P

    def complement(self, p: OrbitPoint) -> np.ndarray:
        return np.eye(self.dim) - self(p)

    @classmethod
    def constant(cls, P) -> "ProjectionFamily":
        P = check_projection(P)
        return cls(P.shape[0], default=P)


@dataclass(frozen=True)
class DichotomyCertificate:
    """Projections plus orbit-class exponent ``lam`` and constant ``D`` in a random norm."""

    projections: ProjectionFamily
    lam: Callable[[OrbitPoint], float]
    D: Callable[[OrbitPoint], float]
    norm: RandomNorm
    margins: Mapping[str, float] = field(default_factory=dict)

    def P(self, p):
        return self.projections(p)

    def Q(self, p):
        return self.projections.complement(p)


# ---------------------------------------------------------------- cocycles

def _cache_budget() -> int:
    raw = os.environ.get(CACHE_ENV)
    return int(raw) if raw else DEFAULT_CACHE_BYTES


class Nrds:
    """A cocycle ``Phi(n, ell, omega)`` generated by one-step matrices ``A(ell, omega)``.

    Products are memoised in a byte-bounded LRU cache shared by all callers;
    the cache never changes results, it only avoids recomputation.
    """

    def __init__(self, dim: int, generator: Callable[[OrbitPoint], np.ndarray], driver: Driver,
                 *, cache_bytes: int | None = None, model: "ModelParameters | None" = None,
                 batch: Callable[[OrbitPoint, int], np.ndarray] | None = None):
        self.dim = int(dim)
        self.generator = generator
        self.batch = batch
        self.driver = driver
        self.model = model
        self.cache_bytes = _cache_budget() if cache_bytes is None else int(cache_bytes)
        self._cache: OrderedDict[tuple, np.ndarray] = OrderedDict()
        self._cached_bytes = 0
        self._lock = threading.Lock()

    def step(self, p: OrbitPoint) -> np.ndarray:
        a = np.array(self.generator(p), dtype=float)
        if a.shape != (self.dim, self.dim):
            raise ValueError(f"generator returned shape {a.shape}, expected {(self.dim, self.dim)}")
        return a

    def steps(self, p: OrbitPoint, length: int) -> np.ndarray:
        """``A(Theta^t p)`` for ``t = 0..length-1`` stacked along axis 0."""
        if self.batch is not None:
            return np.asarray(self.batch(p, length), dtype=float)
        out = np.empty((length, self.dim, self.dim))
        q = p
        for t in range(length):
            out[t] = self.step(q)
            q = shift(q, 1)
        return out

    def _get(self, key):
        with self._lock:
            m = self._cache.get(key)
            if m is not None:
                self._cache.move_to_end(key)
            return m

    def _put(self, key, m: np.ndarray) -> None:
        if m.nbytes > self.cache_bytes:
            return
        m = m.copy()
        m.setflags(write=False)
        with self._lock:
            if key in self._cache:
                return
            self._cache[key] = m
            self._cached_bytes += m.nbytes
            while self._cached_bytes > self.cache_bytes:
                _, old = self._cache.popitem(last=False)
                self._cached_bytes -= old.nbytes

    def clear_cache(self) -> None:
        with self._lock:
            self._cache.clear()
            self._cached_bytes = 0

    @property
    def cached_bytes(self) -> int:
        return self._cached_bytes

    def evolve(self, n: int, p: OrbitPoint) -> np.ndarray:
        """``Phi(n, p) = A(Theta^{n-1} p) ... A(p)``."""
        if n < 0:
            raise ValueError("evolve needs n >= 0; use evolve_unstable_inverse for backward maps")
        enc = self.driver.encode(p.omega)
        hit = self._get((enc, p.ell, n))
        if hit is not None:
            return hit.copy()
        start, prod = 0, np.eye(self.dim)
        for m in range(n - 1, 0, -1):
            cached = self._get((enc, p.ell, m))
            if cached is not None:
                start, prod = m, cached.copy()
                break
        q = shift(p, start)
        for m in range(start, n):
            prod = self.step(q) @ prod
            q = shift(q, 1)
            self._put((enc, p.ell, m + 1), prod)
        return prod


def evolve(sys: Nrds, n: int, p: OrbitPoint) -> np.ndarray:
    return sys.evolve(n, p)


def evolve_unstable_inverse(sys: Nrds, cert: DichotomyCertificate, n: int, p: OrbitPoint,
                            tol_inv: float = INVERSE_TOL) -> np.ndarray:
    """``Phi(-n, Theta^n p) Q_{Theta^n p}``: invert ``Phi(n, p)`` restricted to kernels."""
    q = shift(p, n)
    Q_end = cert.Q(q)
    if n == 0:
        return Q_end.copy()
    _, Z0 = range_kernel(cert.P(p))
    _, Zn = range_kernel(cert.P(q))
    if Z0.shape[1] == 0:
        return np.zeros((sys.dim, sys.dim))
    restricted = Zn.T @ sys.evolve(n, p) @ Z0
    s = np.linalg.svd(restricted, compute_uv=False)
    if s[-1] <= tol_inv * s[0]:
        ratio = s[-1] / s[0] if s[0] > 0 else 0.0
        raise SingularRestriction(
            f"restriction of Phi({n}) to ker P at {p.key} has sigma_min/sigma_max = {ratio:.2e}")
    return Z0 @ np.linalg.solve(restricted, Zn.T @ Q_end)


@dataclass(frozen=True)
class CocycleReport:
    max_residual: float
    passed: bool
    rows: list


def verify_cocycle(sys: Nrds, points, horizon: int, tol: float = 1e-10) -> CocycleReport:
    """Relative residual of ``Phi(m+n) = Phi(m, Theta^n p) Phi(n, p)`` for all ``m + n <= horizon``."""
    if horizon < 2:
        raise ValueError("horizon must be >= 2")
    rows, worst = [], 0.0
    for p in points:
        full = [sys.evolve(k, p) for k in range(horizon + 1)]
        for n in range(horizon + 1):
            pn = shift(p, n)
            for m in range(horizon - n + 1):
                split = sys.evolve(m, pn) @ full[n]
                scale = np.linalg.norm(full[m + n])
                res = float(np.linalg.norm(full[m + n] - split) / scale) if scale > 0 else 0.0
                worst = max(worst, res)
                rows.append((p.key, m, n, res))
    return CocycleReport(worst, worst <= tol, rows)


# ---------------------------------------------------------------- model system

@dataclass(frozen=True)
class ModelParameters:
    rate: GrowthRate
    P: np.ndarray
    lam: Callable[[OrbitPoint], float]
    D: Callable[[OrbitPoint], float]
    K: Callable[[OrbitPoint], float]
    profile: str

    @property
    def Q(self) -> np.ndarray:
        return np.eye(self.P.shape[0]) - self.P

    def transient(self, p: OrbitPoint) -> float:
        """Profile ``h(p)`` in ``[1, D]`` that makes the constant ``D`` necessary."""
        if self.profile == "flat":
            return 1.0
        return float(self.D(p)) ** (p.ell % 2)

    def log_scales(self, n: int, p: OrbitPoint) -> tuple[float, float]:
        """Logs of the scalar factors multiplying ``P`` and ``Q`` in ``Phi(n, p)``."""
        q = shift(p, n)
        lam = self.lam(p)
        log_r = float(self.rate.log_ratio(p.ell, p.ell + n))
        base = math.log(self.K(p)) - math.log(self.K(q))
        h = math.log(self.transient(q)) - math.log(self.transient(p))
        return base + h - lam * log_r, base - h + lam * log_r

    def step_scales(self, base: OrbitPoint, length: int) -> tuple[np.ndarray, np.ndarray]:
        """Vectorised ``log_scales(1, Theta^t base)`` for ``t = 0..length-1``."""
        ells = base.ell + np.arange(length + 1)
        logK = np.log(values_along(self.K, base, length))
        if self.profile == "flat":
            logh = np.zeros(length + 1)
        else:
            logh = (ells % 2) * math.log(float(self.D(base)))
        lam = self.lam(base)
        log_r = self.rate.log_ratio(ells[:-1], ells[1:])
        kr = logK[:-1] - logK[1:]
        h = logh[1:] - logh[:-1]
        return kr + h - lam * log_r, kr - h + lam * log_r

    def closed_form(self, n: int, p: OrbitPoint) -> np.ndarray:
        s, u = self.log_scales(n, p)
        return math.exp(s) * self.P + math.exp(u) * self.Q

    def closed_form_unstable_inverse(self, n: int, p: OrbitPoint) -> np.ndarray:
        _, u = self.log_scales(n, p)
        return math.exp(-u) * self.Q


def build_model(rate: GrowthRate, d: Driver, P, lam, Dvar, K, *, profile: str = "alternating",
                cache_bytes: int | None = None):
    """The model cocycle contracting ``range P`` and expanding ``ker P`` at rate ``mu^{lambda}``.

    ``lam`` and ``Dvar`` must be orbit-class functions; ``K`` may vary per point.
    Returns ``(system, norm, certificate)``.
    """
    P = check_projection(P)
    for name, f in (("lambda", lam), ("D", Dvar)):
        if not getattr(f, "class_invariant", True):
            raise ValueError(f"{name} must be constant along orbit classes")
    if profile not in ("alternating", "flat"):
        raise ValueError("profile must be 'alternating' or 'flat'")
    params = ModelParameters(rate, P, lam, Dvar, K, profile)
    dim = P.shape[0]

    def generator(p: OrbitPoint) -> np.ndarray:
        if not lam(p) > 0 or not Dvar(p) >= 1 or not K(p) >= 1:
            raise ValueError(f"model needs lambda > 0, D >= 1, K >= 1 (at {p.key})")
        return params.closed_form(1, p)

    def batch(base: OrbitPoint, length: int) -> np.ndarray:
        s, u = params.step_scales(base, length)
        return np.exp(s)[:, None, None] * P + np.exp(u)[:, None, None] * params.Q

    sys = Nrds(dim, generator, d, cache_bytes=cache_bytes, model=params, batch=batch)
    norm = scalar_norm(K, dim)
    Q = params.Q
    scale = max(np.linalg.norm(P, 2), np.linalg.norm(Q, 2))
    cert = DichotomyCertificate(
        ProjectionFamily.constant(P), lam, lambda p: float(Dvar(p)) * scale, norm)
    return sys, norm, cert


def constant_system(A, d: Driver, **kw) -> Nrds:
    A = np.asarray(A, dtype=float)
    return Nrds(A.shape[0], lambda p: A, d, **kw)


def random_entries_system(dim: int, d: Driver, seed: int, low: float = -1.0, high: float = 1.0,
                          **kw) -> Nrds:
    """Generator entries drawn per point from a stream keyed by ``(seed, point)``."""

    def generator(p: OrbitPoint) -> np.ndarray:
        digest = hashlib.blake2b(p.key.encode(), digest_size=8).digest()
        rng = np.random.default_rng([seed, int.from_bytes(digest, "big")])
        return rng.uniform(low, high, size=(dim, dim))

    return Nrds(dim, generator, d, **kw)
