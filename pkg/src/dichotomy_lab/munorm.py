"""Nonuniform (mu, nu)-dichotomies in the space norm and their adapted random norms.

A strong (mu, nu)-dichotomy is converted into a mu-dichotomy by the norm

    ||v||_p = sup_n ||Phi(n,p) P v|| r^lam
            + sup_{n <= ell} ||Phi(-n,p) Q v|| r^lam
            + sup_{n >= 1} ||Phi(n,p) Q v|| r^{-b},

and a mu-dichotomy in a norm sandwiched by ``K nu^eps`` is turned back into
(mu, nu) constants.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cocycle import (ClassTable, DichotomyCertificate, FieldSpec, Nrds, ProjectionFamily,
                      build_model, constant, euclidean_norm)
from .dichotomy import MARGIN_TOL, _margin, _sides, _split_tracks
from .driver import Driver, OrbitPoint
from .errors import HorizonInsufficient, SandwichViolated
from .grid import OrbitTrack, SplitTrack, group_by_orbit
from .growth import GrowthRate

__all__ = [
    "MuNuCertificate", "MuNuReport", "munu_model", "verify_munu", "AdaptedNorm",
    "build_adapted_norm", "AdaptedBoundsReport", "verify_adapted_bounds", "extract_munu",
    "probe_vectors", "sup_horizon", "ADAPTED_STABLE", "ADAPTED_UNSTABLE", "ADAPTED_FORWARD",
    "ADAPTED_M",
]

ADAPTED_STABLE = 1.0
ADAPTED_UNSTABLE = 2.0
ADAPTED_FORWARD = 2.0
ADAPTED_M = 3.0
SUP_DROP = math.log(1e10)
SUP_CAP = 10_000
PROBE_COUNT = 8


def _per_class(value) -> Callable[[OrbitPoint], float]:
    if callable(value):
        return value
    return lambda p, v=float(value): v


@dataclass(frozen=True)
class MuNuCertificate:
    """Constants of a (mu, nu)-dichotomy measured in the Euclidean space norm.

    ``strong`` is ``(K, b, gamma)`` or ``None``.
    """

    projections: ProjectionFamily
    lam: Callable[[OrbitPoint], float]
    D: Callable[[OrbitPoint], float]
    epsilon: Callable[[OrbitPoint], float]
    nu: GrowthRate
    strong: tuple | None = None
    report: "MuNuReport | None" = field(default=None, compare=False)

    def __post_init__(self):
        if self.strong is not None and len(self.strong) != 3:
            raise ValueError("strong part must be (K, b, gamma)")

    def P(self, p):
        return self.projections(p)

    def Q(self, p):
        return self.projections.complement(p)

    def log_nu_penalty(self, p: OrbitPoint, exponent: float) -> float:
        return exponent * float(self.nu.log_mu(p.ell))


def munu_model(mu: GrowthRate, nu: GrowthRate, driver: Driver, P, lam, D, eps, *,
               profile: str = "alternating") -> tuple[Nrds, MuNuCertificate]:
    """The model cocycle with norm weight ``nu_ell^eps``, read in the space norm.

    Returns the system and its strong (mu, nu) certificate ``(D', eps)`` with
    ``K = D'``, ``b = lam`` and ``gamma = eps``.
    """
    if float(nu.log_mu(0)) < -1e-15:
        raise ValueError("nu must satisfy nu_n >= 1")
    eps = float(eps)
    K = FieldSpec("nu_power", (eps,), rate=nu)
    lam_f = lam if callable(lam) else constant(lam)
    D_f = D if callable(D) else constant(D)
    sys, _, cert = build_model(mu, driver, P, lam_f, D_f, K, profile=profile)
    eps_f = constant(eps)
    munu = MuNuCertificate(cert.projections, lam_f, cert.D, eps_f, nu,
                           strong=(cert.D, lam_f, eps_f))
    return sys, munu


# ---------------------------------------------------------------- space-norm checks

@dataclass
class MuNuReport:
    rows: list
    worst: dict
    passed: bool


def verify_munu(sys: Nrds, cert: MuNuCertificate, mu: GrowthRate, points: Sequence[OrbitPoint],
                horizon: int) -> MuNuReport:
    """Exact space-norm checks of the stable, backward and (if present) strong bounds.

    Row layout: ``(point_id, ell, n, side, lhs, rhs, margin, pass)``.
    """
    groups = group_by_orbit(points)
    norm = euclidean_norm(sys.dim)
    splits = _split_tracks(sys, norm, cert.projections, groups, horizon)
    sides = ["stable", "backward"] + (["strong"] if cert.strong is not None else [])
    worst = {s: 1.0 for s in sides}
    rows = []
    for g, split in zip(groups, splits):
        s = _sides(split, g, mu, horizon)
        if cert.strong is not None:
            lf = split.unstable_forward_table().weighted_lognorm(split.track.F, split.track.Finv)
            src = g.ells[:, None]
            strong = lf[src, src + np.arange(horizon + 1)[None, :]]
        for i, p in enumerate(g.points):
            lam, logD = float(cert.lam(p)), math.log(float(cert.D(p)))
            pen = cert.log_nu_penalty(p, float(cert.epsilon(p)))
            checks = [("stable", s.stable[i], logD + pen - lam * s.log_r[i]),
                      ("backward", s.backward[i], logD + pen - lam * s.log_r_back[i])]
            if cert.strong is not None:
                Kf, bf, gf = cert.strong
                b = float(bf(p))
                checks.append(("strong", strong[i], math.log(float(Kf(p)))
                               + cert.log_nu_penalty(p, float(gf(p))) + b * s.log_r[i]))
            for side, lhs, rhs in checks:
                keep = ~np.isnan(rhs)
                m = _margin(lhs[keep], rhs[keep])
                worst[side] = min(worst[side], float(m.min()))
                for n, a, b_, mm in zip(np.nonzero(keep)[0], np.exp(lhs[keep]),
                                        np.exp(rhs[keep]), m):
                    rows.append((p.key, p.ell, int(n), side, float(a), float(b_), float(mm),
                                 bool(mm >= -MARGIN_TOL)))
    return MuNuReport(rows, worst, all(w >= -MARGIN_TOL for w in worst.values()))


# ---------------------------------------------------------------- adapted norm

def probe_vectors(dim: int, seed: int = 0, count: int = PROBE_COUNT) -> np.ndarray:
    """Basis vectors followed by ``count`` seeded random unit vectors, as columns."""
    rng = np.random.default_rng(seed)
    r = rng.standard_normal((dim, count))
    r /= np.linalg.norm(r, axis=0)
    return np.hstack([np.eye(dim), r])


def sup_horizon(mu: GrowthRate, lam: float, start: int, cap: int = SUP_CAP) -> int:
    """First ``n`` with ``(mu_{start+n}/mu_start)^lam >= 1e10``, capped at ``cap``."""
    n = np.arange(cap + 1)
    hit = np.nonzero(lam * mu.log_ratio(start, start + n) >= SUP_DROP)[0]
    return int(hit[0]) if hit.size else cap


@dataclass
class _Terms:
    """Weighted restricted products ``S`` for one sup and its entry map ``C`` per source."""

    S: list     # per source: (count, m, m)
    C: np.ndarray  # (sources, m, d)

    def value(self, t: int, V: np.ndarray) -> np.ndarray:
        if self.C.shape[1] == 0:
            return np.zeros(V.shape[1])
        w = self.C[t] @ V
        return np.linalg.norm(np.einsum("kij,jv->kiv", self.S[t], w), axis=1).max(axis=0)


def _forward_sup(R: np.ndarray, C: np.ndarray, log_mu: np.ndarray, expo: float, sources: int,
                 include_zero: bool, label: str) -> _Terms:
    """Sup terms ``R(a, a+n) r(a, a+n)^expo`` for each source ``a < sources`` up to the track end.

    Terms whose operator norm falls below the best certified lower bound of the
    sup (largest smallest singular value seen) are discarded; they cannot attain it.
    """
    T, m = R.shape[0], R.shape[-1]
    if m == 0:
        return _Terms([np.zeros((0, 0, 0))] * sources, C)
    if m == 1:
        return _scalar_sup(R[:, 0, 0], C, log_mu, expo, sources, include_zero, label)
    M = np.broadcast_to(np.eye(m), (sources, m, m)).copy()
    logs = np.zeros(sources)
    kept: list[list] = [[] for _ in range(sources)]
    top = np.full(sources, -np.inf)     # largest log op norm recorded
    floor = np.full(sources, -np.inf)   # largest log smallest singular value
    last_top = np.full(sources, -np.inf)

    def record(idx, mats, lw):
        sv = np.linalg.svd(mats, compute_uv=False)
        with np.errstate(divide="ignore"):
            hi = np.log(sv[:, 0]) + lw
            lo = np.log(sv[:, -1]) + lw
        floor[idx] = np.maximum(floor[idx], lo)
        keep = hi >= floor[idx] - 1e-12
        for j in np.nonzero(keep)[0]:
            kept[idx[j]].append(mats[j] * math.exp(lw[j]))
        return hi

    if include_zero:
        idx = np.arange(sources)
        top[idx] = np.maximum(top[idx], record(idx, M.copy(), np.zeros(sources)))
    for t in range(T):
        idx = np.arange(min(t + 1, sources))
        M[idx] = np.einsum("ij,ajk->aik", R[t], M[idx])
        nrm = np.linalg.norm(M[idx], axis=(-2, -1))
        M[idx] /= nrm[:, None, None]
        logs[idx] += np.log(nrm)
        lw = logs[idx] + expo * (log_mu[t + 1] - log_mu[idx])
        hi = record(idx, M[idx].copy(), lw)
        if t == T - 1:
            last_top[idx] = hi
        else:
            top[idx] = np.maximum(top[idx], hi)
    stuck = np.nonzero(last_top > top + 1e-12)[0]
    if stuck.size:
        raise HorizonInsufficient(
            f"{label} sup still grows at the capped horizon for source time {int(stuck[0])}")
    S = []
    for a in range(sources):
        mats = np.array(kept[a]) if kept[a] else np.zeros((0, m, m))
        if mats.size:
            ops = np.linalg.norm(mats, ord=2, axis=(-2, -1))
            with np.errstate(divide="ignore"):
                mats = mats[np.log(ops) >= floor[a] - 1e-12]
        S.append(mats)
    return _Terms(S, C)


def _scalar_sup(r: np.ndarray, C: np.ndarray, log_mu: np.ndarray, expo: float, sources: int,
                include_zero: bool, label: str) -> _Terms:
    """One-dimensional blocks: products are cumulative sums of ``log|r|``."""
    T = r.shape[0]
    with np.errstate(divide="ignore"):
        cum = np.concatenate([[0.0], np.cumsum(np.log(np.abs(r)))])
    a = np.arange(sources)[:, None]
    t = np.arange(T + 1)[None, :]
    lw = (cum[t] - cum[a]) + expo * (log_mu[t] - log_mu[a])
    lw = np.where(t >= a + (0 if include_zero else 1), lw, -np.inf)
    top = lw[:, :-1].max(axis=1)
    stuck = np.nonzero(lw[:, -1] > top + 1e-12)[0]
    if stuck.size:
        raise HorizonInsufficient(
            f"{label} sup still grows at the capped horizon for source time {int(stuck[0])}")
    best = np.exp(lw.max(axis=1))
    return _Terms([np.array([[[b]]]) for b in best], C)


def _backward_sup(Hinv: np.ndarray, C: np.ndarray, log_mu: np.ndarray, lam: float,
                  sources: int) -> _Terms:
    """Terms ``Phi(-n, a) Q_a r(a-n, a)^lam`` for ``0 <= n <= a`` in restricted coordinates."""
    m = Hinv.shape[-1]
    if m == 0:
        return _Terms([np.zeros((0, 0, 0))] * sources, C)
    S = []
    for a in range(sources):
        W = np.eye(m)
        mats = [W.copy()]
        for b in range(a - 1, -1, -1):
            W = Hinv[b] @ W
            mats.append(W * math.exp(lam * (log_mu[a] - log_mu[b])))
        S.append(np.array(mats))
    return _Terms(S, C)


@dataclass
class _ClassNorm:
    stable: _Terms
    back: _Terms
    forward: _Terms
    split: SplitTrack

    def values(self, t: int, V: np.ndarray) -> np.ndarray:
        return self.stable.value(t, V) + self.back.value(t, V) + self.forward.value(t, V)


class AdaptedNorm:
    """The adapted random norm, evaluable at every orbit time ``ell <= eval_end`` of each class.

    Sups over ``n >= 0`` run to the absolute orbit time ``T_abs``; capping at an
    absolute time keeps the transfer identities between points exact.
    """

    def __init__(self, dim: int, classes: dict, cert: MuNuCertificate, Kbar: ClassTable,
                 eps_bar: ClassTable, eval_end: int, T_abs: int, seed: int = 0):
        self.dim = dim
        self.classes = classes
        self.cert = cert
        self.Kbar = Kbar
        self.eps_bar = eps_bar
        self.eval_end = eval_end
        self.T_abs = T_abs
        self.seed = seed
        self.M = ADAPTED_M
        self.lambda_bar = cert.strong[1]

    @property
    def nu(self) -> GrowthRate:
        return self.cert.nu

    @property
    def sandwich(self) -> tuple:
        return self.Kbar, self.eps_bar, self.cert.nu

    def _lookup(self, p: OrbitPoint) -> _ClassNorm:
        try:
            data = self.classes[p.orbit_class]
        except KeyError:
            raise KeyError(f"adapted norm was not built on the orbit class of {p.key}") from None
        if not 0 <= p.ell <= self.eval_end:
            raise KeyError(f"time {p.ell} outside the evaluated window 0..{self.eval_end}")
        return data

    def norms(self, V, p: OrbitPoint) -> np.ndarray:
        """Norms of the columns of ``V`` at ``p``."""
        V = np.asarray(V, dtype=float).reshape(self.dim, -1)
        return self._lookup(p).values(p.ell, V)

    def norm(self, v, p: OrbitPoint) -> float:
        return float(self.norms(np.asarray(v, dtype=float).reshape(self.dim, 1), p)[0])

    def op_norm(self, X, p_from: OrbitPoint, p_to: OrbitPoint) -> float:
        """Largest ``||X v||_to / ||v||_from`` over basis and seeded probe vectors."""
        V = probe_vectors(self.dim, self.seed)
        den = self.norms(V, p_from)
        num = self.norms(np.asarray(X, dtype=float) @ V, p_to)
        ok = den > 0
        return float((num[ok] / den[ok]).max(initial=0.0))

    def certificate(self) -> DichotomyCertificate:
        """The mu-dichotomy this norm carries: ``lam`` from the source, ``D = 2``."""
        return DichotomyCertificate(self.cert.projections, self.cert.lam,
                                    constant(ADAPTED_UNSTABLE), self)


def build_adapted_norm(sys: Nrds, cert: MuNuCertificate, mu: GrowthRate,
                       points: Sequence[OrbitPoint], horizon: int,
                       sup_steps: int | None = None, seed: int = 0) -> AdaptedNorm:
    """Adapted norm at every orbit time up to ``max ell + horizon`` of the points' classes.

    ``sup_steps`` overrides the default sup horizon (certificate bound below
    1e-10 of its start, capped at 1e4 steps).
    """
    if cert.strong is None:
        raise ValueError("the adapted norm needs a strong (mu, nu) certificate")
    Kf, bf, gf = cert.strong
    groups = group_by_orbit(points)
    eval_end = max(g.ell_max for g in groups) + horizon
    if sup_steps is None:
        lam_min = min(float(cert.lam(g.base)) for g in groups)
        sup_steps = sup_horizon(mu, lam_min, eval_end)
    T_abs = eval_end + int(sup_steps)
    space = euclidean_norm(sys.dim)
    classes, kbar, ebar = {}, {}, {}
    for g in groups:
        p = g.base
        lam, b = float(cert.lam(p)), float(bf(p))
        if b < lam:
            raise ValueError(f"strong exponent b = {b} must be >= lambda = {lam}")
        split = SplitTrack.from_projections(OrbitTrack(sys, space, p, T_abs), cert.projections)
        log_mu = np.asarray(mu.log_mu(np.arange(T_abs + 1)), dtype=float)
        n = eval_end + 1
        Cs = np.einsum("tji,tjk->tik", split.V[:n], split.P[:n])
        Cu = np.einsum("tji,tjk->tik", split.Z[:n], split.Q[:n])
        stable = _forward_sup(split.G, Cs, log_mu, lam, n, True, "stable")
        forward = _forward_sup(split.H, Cu, log_mu, -b, n, False, "unstable")
        back = _backward_sup(split.Hinv[:n], Cu, log_mu, lam, n)
        key = p.orbit_class
        classes[key] = _ClassNorm(stable, back, forward, split)
        kbar[key] = 2.0 * float(cert.D(p)) + float(Kf(p))
        ebar[key] = max(float(cert.epsilon(p)), float(gf(p)))
    return AdaptedNorm(sys.dim, classes, cert, ClassTable(kbar), ClassTable(ebar), eval_end,
                       T_abs, seed)


# ---------------------------------------------------------------- adapted-norm checks

@dataclass
class AdaptedBoundsReport:
    rows: list
    worst: dict
    sandwich_worst: float
    passed: bool

    @property
    def worst_margin(self) -> float:
        return min(min(self.worst.values()), self.sandwich_worst)


def _sandwich_margin(norm, Kbar, eps_bar, nu: GrowthRate, p: OrbitPoint, V: np.ndarray) -> float:
    """Worst margin of ``||v|| <= ||v||_p <= Kbar nu^eps_bar ||v||`` over the columns of ``V``."""
    if hasattr(norm, "norms"):
        vals = norm.norms(V, p)
    else:
        vals = np.array([norm.norm(V[:, j], p) for j in range(V.shape[1])])
    base = np.linalg.norm(V, axis=0)
    upper = float(Kbar(p)) * math.exp(float(eps_bar(p)) * float(nu.log_mu(p.ell))) * base
    lo = _margin(np.log(base), np.log(vals))
    hi = _margin(np.log(vals), np.log(upper))
    return float(min(lo.min(), hi.min()))


def verify_adapted_bounds(sys: Nrds, cert: MuNuCertificate, anorm: AdaptedNorm,
                          mu: GrowthRate, points: Sequence[OrbitPoint],
                          horizon: int) -> AdaptedBoundsReport:
    """Stable constant 1, backward constant 2, forward factor 2 and growth ``M = 3``, ``lambda_bar = b``.

    Row layout: ``(point_id, ell, n, side, lhs, rhs, margin, pass)`` where
    ``lhs`` is the probed adapted operator norm.
    """
    _, bf, _ = cert.strong
    V = probe_vectors(sys.dim, anorm.seed)
    worst = {"stable": 1.0, "backward": 1.0, "forward": 1.0, "growth": 1.0}
    sandwich = 1.0
    rows = []
    for g in group_by_orbit(points):
        data = anorm._lookup(g.base)
        split = data.split
        last = g.ell_max + horizon
        tables = {
            "stable": split.stable_table(last).dense(),
            "forward": split.unstable_forward_table(last).dense(),
            "backward": split.unstable_backward_table(last).dense(),
        }
        norms_at = [data.values(t, V) for t in range(last + 1)]
        pts = [g.base]
        for t in range(last):
            pts.append(pts[-1].shifted(1))
        for t in range(last + 1):
            sandwich = min(sandwich, _sandwich_margin(anorm, anorm.Kbar, anorm.eps_bar, anorm.nu,
                                                      pts[t], V))
        for p in g.points:
            a = p.ell
            lam, b = float(cert.lam(p)), float(bf(p))
            den = norms_at[a]
            for n in range(horizon + 1):
                lr = float(mu.log_ratio(a, a + n))
                cells = [("stable", tables["stable"][a, a + n], a + n, math.log(ADAPTED_STABLE) - lam * lr),
                         ("forward", tables["forward"][a, a + n], a + n, math.log(ADAPTED_FORWARD) + b * lr),
                         ("growth", tables["stable"][a, a + n] + tables["forward"][a, a + n], a + n,
                          math.log(ADAPTED_M) + b * lr)]
                if n <= a:
                    lb = float(mu.log_ratio(a - n, a))
                    cells.append(("backward", tables["backward"][a, a - n], a - n,
                                  math.log(ADAPTED_UNSTABLE) - lam * lb))
                for side, X, dst, log_rhs in cells:
                    num = anorm._lookup(pts[dst]).values(dst, X @ V)
                    ratio = float((num / den).max())
                    with np.errstate(divide="ignore"):
                        m = float(_margin(np.array([math.log(ratio)]), np.array([log_rhs]))[0])
                    worst[side] = min(worst[side], m)
                    rows.append((p.key, a, n, side, ratio, math.exp(log_rhs), m,
                                 bool(m >= -MARGIN_TOL)))
    passed = all(w >= -MARGIN_TOL for w in worst.values()) and sandwich >= -MARGIN_TOL
    return AdaptedBoundsReport(rows, worst, sandwich, passed)


# ---------------------------------------------------------------- back to (mu, nu)

def extract_munu(sys: Nrds, cert_mu: DichotomyCertificate, sandwich: tuple, M, lambda_bar,
                 mu: GrowthRate, points: Sequence[OrbitPoint], horizon: int,
                 seed: int = 0) -> MuNuCertificate:
    """(mu, nu) constants from a mu-dichotomy in a norm with ``||v|| <= ||v||_p <= Kbar nu^eps_bar ||v||``.

    ``sandwich`` is ``(Kbar, eps_bar, nu)``. The result is ``D' = D Kbar``,
    ``eps = eps_bar`` and strong part ``(D M Kbar, lambda_bar, eps_bar)``; it
    carries its space-norm verification report.
    """
    Kbar, eps_bar, nu = sandwich
    Kbar, eps_bar = _per_class(Kbar), _per_class(eps_bar)
    M, lambda_bar = _per_class(M), _per_class(lambda_bar)
    V = probe_vectors(sys.dim, seed)
    groups = group_by_orbit(points)
    for g in groups:
        p = g.base
        for t in range(g.ell_max + horizon + 1):
            q = p.shifted(t) if t else p
            m = _sandwich_margin(cert_mu.norm, Kbar, eps_bar, nu, q, V)
            if m < -MARGIN_TOL:
                raise SandwichViolated(f"norm sandwich fails at {q.key} (margin {m:.3e})")
    keys = [g.base for g in groups]
    D = ClassTable({p.orbit_class: float(cert_mu.D(p)) * float(Kbar(p)) for p in keys})
    eps = ClassTable({p.orbit_class: float(eps_bar(p)) for p in keys})
    K = ClassTable({p.orbit_class: float(cert_mu.D(p)) * float(M(p)) * float(Kbar(p))
                    for p in keys})
    lb = ClassTable({p.orbit_class: float(lambda_bar(p)) for p in keys})
    lam = ClassTable({p.orbit_class: float(cert_mu.lam(p)) for p in keys})
    out = MuNuCertificate(cert_mu.projections, lam, D, eps, nu, strong=(K, lb, eps))
    report = verify_munu(sys, out, mu, points, horizon)
    return MuNuCertificate(out.projections, lam, D, eps, nu, out.strong, report)
