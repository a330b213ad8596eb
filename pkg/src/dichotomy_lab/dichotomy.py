"""Dichotomy verification, envelope fitting, splitting identification and derived exponents."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.linalg import subspace_angles

from .cocycle import (ClassTable, DichotomyCertificate, Nrds, ProjectionFamily, RandomNorm,
                      projection_onto)
from .driver import OrbitPoint, shift
from .errors import (AmbiguousGap, HypothesisViolated, NoContraction,
                     SplittingHorizonInsufficient)
from .grid import (LogTable, OrbitGroup, OrbitTrack, SplitTrack, group_by_orbit, growth_table)
from .growth import GrowthRate, MinimalGrowthWitness

__all__ = [
    "DichotomyCertificate", "ProjectionFamily", "DichotomyReport", "verify_dichotomy",
    "fit_certificate", "fit_growth_bound", "Splitting", "identify_splitting", "DerivedExponents",
    "derive_exponents", "ladder_exponent", "lambda_grid",
]

MARGIN_TOL = 1e-12
ENVELOPE_SLACK = 1e-9
REPORT_COLUMNS = ("point_id", "ell", "n", "side", "lhs", "rhs", "margin", "pass")


def _per_class(value) -> Callable[[OrbitPoint], float]:
    if callable(value):
        return value
    return lambda p, v=float(value): v


def _margin(log_lhs: np.ndarray, log_rhs: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", over="ignore"):
        diff = log_lhs - log_rhs
        return np.where(np.isneginf(log_lhs), 1.0, -np.expm1(diff))


# ---------------------------------------------------------------- verification

@dataclass
class DichotomyReport:
    """Cell-by-cell comparison of the dichotomy bounds. ``rows`` follow ``REPORT_COLUMNS``."""

    rows: list
    worst: dict
    passed: bool
    equivariance: float = 0.0

    @property
    def worst_margin(self) -> float:
        return min(self.worst.values()) if self.worst else 1.0


@dataclass
class _Sides:
    """Log norms of the three bound families for one orbit group.

    Arrays are indexed ``[i, n]`` with ``i`` the position of the point in the
    group; cells that do not exist are ``nan``.
    """

    stable: np.ndarray
    unstable: np.ndarray
    backward: np.ndarray
    log_r: np.ndarray        # log(mu_{ell+n}/mu_ell)
    log_r_back: np.ndarray   # log(mu_ell/mu_{ell-n})


def _sides(split: SplitTrack, group: OrbitGroup, rate: GrowthRate, horizon: int) -> _Sides:
    F, Finv = split.track.F, split.track.Finv
    ls = split.stable_table().weighted_lognorm(F, Finv)
    lu = split.unstable_backward_table().weighted_lognorm(F, Finv)
    ells = group.ells
    n = np.arange(horizon + 1)
    src = ells[:, None]
    dst = src + n[None, :]
    stable = ls[src, dst]
    unstable = lu[dst, src]
    back = np.full_like(stable, np.nan)
    valid = n[None, :] <= src
    lo = np.where(valid, src - n[None, :], 0)
    back = np.where(valid, lu[np.broadcast_to(src, lo.shape), lo], np.nan)
    log_r = rate.log_ratio(src, dst)
    log_r_back = np.where(valid, rate.log_ratio(lo, np.broadcast_to(src, lo.shape)), np.nan)
    return _Sides(stable, unstable, back, np.asarray(log_r, float), np.asarray(log_r_back, float))


def _split_tracks(sys: Nrds, norm: RandomNorm, projections, groups, horizon: int):
    out = []
    for g in groups:
        track = OrbitTrack(sys, norm, g.base, g.ell_max + horizon)
        out.append(SplitTrack.from_projections(track, projections))
    return out


def verify_dichotomy(sys: Nrds, cert: DichotomyCertificate, rate: GrowthRate,
                     points: Sequence[OrbitPoint], horizon: int) -> DichotomyReport:
    """Check both dichotomy bounds and the backward form at every ``(point, n)`` cell.

    Norms are exact operator norms in the certificate's random norm.
    """
    groups = group_by_orbit(points)
    splits = _split_tracks(sys, cert.norm, cert.projections, groups, horizon)
    rows, worst = [], {"stable": 1.0, "unstable": 1.0, "backward": 1.0}
    equiv = 0.0
    for g, split in zip(groups, splits):
        equiv = max(equiv, split.equivariance)
        sides = _sides(split, g, rate, horizon)
        for i, p in enumerate(g.points):
            lam, logD = float(cert.lam(p)), math.log(float(cert.D(p)))
            for side, lhs, lr in (("stable", sides.stable[i], sides.log_r[i]),
                                  ("unstable", sides.unstable[i], sides.log_r[i]),
                                  ("backward", sides.backward[i], sides.log_r_back[i])):
                keep = ~np.isnan(lr)
                n_idx = np.nonzero(keep)[0]
                log_rhs = logD - lam * lr[keep]
                m = _margin(lhs[keep], log_rhs)
                lhs_v = np.exp(lhs[keep])
                rhs_v = np.exp(log_rhs)
                worst[side] = min(worst[side], float(m.min()))
                for n, a, b, mm in zip(n_idx, lhs_v, rhs_v, m):
                    rows.append((p.key, p.ell, int(n), side, float(a), float(b), float(mm),
                                 bool(mm >= -MARGIN_TOL)))
    passed = all(w >= -MARGIN_TOL for w in worst.values())
    return DichotomyReport(rows, worst, passed, equiv)


# ---------------------------------------------------------------- fitting

def lambda_grid(low_exp: float = -10.0, high_exp: float = 10.0, count: int = 41) -> np.ndarray:
    return 2.0 ** np.linspace(low_exp, high_exp, count)


def _envelope(sides: _Sides, lam: float, horizon: int) -> tuple[float, float, float]:
    """``(sup first half, sup second half, overall sup)`` of the log envelope."""
    half = horizon // 2
    n = np.arange(horizon + 1)
    fwd = np.fmax(sides.stable, sides.unstable) + lam * sides.log_r
    back = sides.backward + lam * sides.log_r_back
    early = np.concatenate([fwd[:, n <= half].ravel(), back[:, n <= half].ravel()])
    late = np.concatenate([fwd[:, n > half].ravel(), back[:, n > half].ravel()])
    early = early[~np.isnan(early)]
    late = late[~np.isnan(late)]
    e = early.max() if early.size else -np.inf
    l_ = late.max() if late.size else -np.inf
    return e, l_, max(e, l_)


def _admissible(sides_list, lam: float, horizon: int) -> tuple[bool, float]:
    sup = -np.inf
    for s in sides_list:
        e, l_, full = _envelope(s, lam, horizon)
        if l_ > e + math.log1p(ENVELOPE_SLACK):
            return False, math.inf
        sup = max(sup, full)
    return True, sup


def fit_certificate(sys: Nrds, P, rate: GrowthRate, norm: RandomNorm,
                    points: Sequence[OrbitPoint], horizon: int,
                    grid: np.ndarray | None = None) -> DichotomyCertificate:
    """Largest grid ``lambda`` per orbit class with a bounded envelope, and the matching ``D``."""
    projections = P if callable(P) else ProjectionFamily.constant(P)
    grid = lambda_grid() if grid is None else np.asarray(grid, dtype=float)
    groups = group_by_orbit(points)
    splits = _split_tracks(sys, norm, projections, groups, horizon)
    lams, Ds = {}, {}
    for g, split in zip(groups, splits):
        sides = [_sides(split, g, rate, horizon)]
        ok = [i for i, lam in enumerate(grid) if _admissible(sides, lam, horizon)[0]]
        if not ok:
            raise NoContraction(
                f"envelope grows for every lambda >= {grid[0]:.3g} on orbit class {g.base.orbit_class}")
        best = ok[-1]
        lam = float(grid[best])
        if best + 1 < len(grid):
            fine = np.geomspace(grid[best], grid[best + 1], 43)[1:-1]
            for cand in fine:
                if _admissible(sides, cand, horizon)[0]:
                    lam = float(cand)
                else:
                    break
        _, sup = _admissible(sides, lam, horizon)
        key = g.base.orbit_class
        lams[key] = lam
        Ds[key] = max(1.0, math.exp(sup)) if np.isfinite(sup) else 1.0
    cert = DichotomyCertificate(projections, ClassTable(lams), ClassTable(Ds), norm)
    report = verify_dichotomy(sys, cert, rate, points, horizon)
    return DichotomyCertificate(projections, cert.lam, cert.D, norm, dict(report.worst))


def fit_growth_bound(sys: Nrds, norm: RandomNorm, rate: GrowthRate, lam,
                     points: Sequence[OrbitPoint], horizon: int) -> ClassTable:
    """Smallest ``M`` per class with ``||Phi(n, p)|| <= M (mu_{ell+n}/mu_ell)^lam`` on the grid."""
    lam = _per_class(lam)
    out = {}
    for g in group_by_orbit(points):
        log_g = _growth_logs(sys, norm, g, horizon)
        log_r = rate.log_ratio(g.ells[:, None], g.ells[:, None] + np.arange(horizon + 1))
        out[g.base.orbit_class] = math.exp(float(np.max(log_g - lam(g.base) * log_r)))
    return ClassTable(out)


def _growth_logs(sys: Nrds, norm: RandomNorm, g: OrbitGroup, horizon: int) -> np.ndarray:
    track = OrbitTrack(sys, norm, g.base, g.ell_max + horizon)
    lg = growth_table(track).weighted_lognorm(track.F, track.Finv)
    src = g.ells[:, None]
    return lg[src, src + np.arange(horizon + 1)]


# ---------------------------------------------------------------- splitting

@dataclass
class Splitting:
    """Bases of the bounded-orbit subspace ``V`` and the pushed-forward complement ``Z``."""

    dim: int
    V: dict
    Z: dict
    exponents: dict
    tail: int = 0

    def projection(self, p: OrbitPoint) -> np.ndarray:
        return projection_onto(self.V[p], self.Z[p])

    def projections(self) -> ProjectionFamily:
        return ProjectionFamily(self.dim, table={p: self.projection(p) for p in self.V})

    def angle_to(self, p: OrbitPoint, P: np.ndarray) -> float:
        """Largest principal angle between the recovered subspaces and ``range P``/``ker P``."""
        from .cocycle import range_kernel

        R, K = range_kernel(np.asarray(P, dtype=float))
        worst = 0.0
        for mine, true in ((self.V[p], R), (self.Z[p], K)):
            if mine.shape[1] != true.shape[1]:
                return math.pi / 2
            if mine.shape[1]:
                worst = max(worst, float(np.max(subspace_angles(mine, true))))
        return worst


def _tail_length(rate: GrowthRate, start: int, ratio_min: float, cap: int) -> int:
    target = math.log(ratio_min)
    if float(rate.log_ratio(start, start + 1)) >= target:
        return 1
    hi = 1
    while float(rate.log_ratio(start, start + hi)) < target:
        hi *= 2
        if hi > 4 * cap:
            raise SplittingHorizonInsufficient(
                f"mu ratio {ratio_min:g} is not reached within {cap} steps past time {start}")
    lo = hi // 2
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if float(rate.log_ratio(start, start + mid)) >= target:
            hi = mid
        else:
            lo = mid
    if hi > cap:
        raise SplittingHorizonInsufficient(
            f"mu ratio {ratio_min:g} needs {hi} steps past time {start}; the cap is {cap}")
    return hi


COND_BUDGET = math.log(1e6)


def _log_abs_diag(R: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(np.abs(np.diagonal(R, axis1=-2, axis2=-1)))


def identify_splitting(sys: Nrds, norm: RandomNorm, rate: GrowthRate,
                       points: Sequence[OrbitPoint], horizon: int,
                       growth_threshold: float = 0.1, gap_tol: float = 0.02,
                       ratio_min: float = 1e3, max_tail: int = 200_000,
                       seed: int = 0) -> Splitting:
    """Recover ``V`` (decaying directions) and ``Z`` (their pushed-forward complement).

    A backward orthogonal sweep of the adjoint cocycle from far past the grid
    gives nested bases whose trailing columns span ``V`` exactly invariantly.
    """
    groups = group_by_orbit(points)
    d = sys.dim
    L = max(g.ell_max for g in groups) + horizon
    tail = _tail_length(rate, L, ratio_min, max_tail)
    end = L + tail
    A = np.stack([sys.steps(g.base, end) for g in groups])      # (orbits, end, d, d)
    ends = [shift(g.base, end) for g in groups]
    F_end = np.stack([norm.factor(q) for q in ends])
    # a generic start frame: axis-aligned frames never mix under diagonal cocycles
    frame = np.linalg.qr(np.random.default_rng(seed).standard_normal((d, d)))[0]
    U, R = np.linalg.qr(np.swapaxes(F_end, -1, -2) @ frame)
    log_diag = np.log(np.abs(np.diagonal(R, axis1=-2, axis2=-1)))
    # Past the grid only the frame at time L + 1 matters: steps are scaled by their top
    # singular value and the frame is re-orthonormalised once the accumulated
    # conditioning passes COND_BUDGET, which keeps every column resolvable.
    sv = np.linalg.svd(A[:, L + 1:], compute_uv=False)
    with np.errstate(divide="ignore"):
        log_top = np.log(sv[..., 0])
        log_cond = np.max(log_top - np.log(sv[..., -1]), axis=0)
    keep = np.empty((len(groups), L + 1, d, d))
    pending, scale = 0.0, np.zeros(len(groups))
    for t in range(end - 1, -1, -1):
        if t > L:
            i = t - L - 1
            if pending + log_cond[i] > COND_BUDGET and pending > 0:
                U, R = np.linalg.qr(U)
                log_diag += _log_abs_diag(R) + scale[:, None]
                pending, scale = 0.0, np.zeros(len(groups))
            U = np.einsum("oji,ojk->oik", A[:, t], U) / sv[:, i, 0][:, None, None]
            scale += log_top[:, i]
            pending += log_cond[i]
            continue
        U = np.einsum("oji,ojk->oik", A[:, t], U)
        U, R = np.linalg.qr(U)
        log_diag += _log_abs_diag(R) + scale[:, None]
        pending, scale = 0.0, np.zeros(len(groups))
        keep[:, t] = U
    exps = log_diag / float(rate.log_ratio(0, end))
    splitting = Splitting(d, {}, {}, {}, tail)
    for o, g in enumerate(groups):
        e = exps[o]
        key = g.base.orbit_class
        splitting.exponents[key] = e
        near = np.abs(e) < gap_tol
        if np.any(near):
            raise AmbiguousGap(
                f"exponents {np.round(e, 4).tolist()} on class {key} have no gap of {gap_tol}")
        stable = e <= -growth_threshold
        k = int(stable.sum())
        if k and not np.all(stable[d - k:]):
            raise AmbiguousGap(f"exponents {np.round(e, 4).tolist()} on class {key} are not ordered")
        m = d - k
        V = keep[o, :, :, m:]
        Z = np.empty((L + 1, d, m))
        Z[0] = keep[o, 0, :, :m]
        for t in range(L):
            Z[t + 1] = np.linalg.qr(A[o, t] @ Z[t])[0] if m else Z[t]
        p = g.base
        for t in range(L + 1):
            splitting.V[p] = V[t]
            splitting.Z[p] = Z[t]
            if t < L:
                p = shift(p, 1)
    return splitting


# ---------------------------------------------------------------- derived exponents

def ladder_exponent(log_N0: float, L1: float, L2: float) -> tuple[int, float]:
    """Smallest ``K0 >= 1`` with ``L1^K0 >= N0`` and the exponent ``1 / (K0 log L2)``."""
    K0 = max(1, math.ceil(log_N0 / math.log(L1) - 1e-12))
    return K0, 1.0 / (K0 * math.log(L2))


@dataclass
class DerivedExponents:
    """Constants of the converse construction, keyed by orbit class (``zeta`` by point key)."""

    log_N0: dict
    K0: dict
    a: dict
    b: dict
    D1: dict
    D2: dict
    M2: dict
    L: dict
    m: dict
    log_c: dict
    zeta: dict
    projection_bound: dict
    certificate: DichotomyCertificate | None = None
    report: DichotomyReport | None = None

    @property
    def N0(self) -> dict:
        return {k: (math.exp(v) if v < 709 else math.inf) for k, v in self.log_N0.items()}


def _zeta(V: np.ndarray, Z: np.ndarray, F: np.ndarray) -> float:
    if V.shape[1] == 0 or Z.shape[1] == 0:
        return 2.0
    theta = float(np.min(subspace_angles(F @ V, F @ Z)))
    return 2.0 * math.sin(theta / 2.0)


def derive_exponents(sys: Nrds, splitting: Splitting, rate: GrowthRate,
                     witness: MinimalGrowthWitness, norm: RandomNorm, M, lam, C, T_norm: float,
                     points: Sequence[OrbitPoint], horizon: int = 64,
                     validate: bool = True) -> DerivedExponents:
    """Exponents and constants of the dichotomy reconstructed from admissibility data."""
    M, lam, C = _per_class(M), _per_class(lam), _per_class(C)
    eta, L1, L2 = rate.eta, witness.L1, witness.L2
    T = float(T_norm)
    out = DerivedExponents({}, {}, {}, {}, {}, {}, {}, {}, {}, {}, {}, {})
    for g in group_by_orbit(points):
        p0 = g.base
        Mv, lv, Cv = float(M(p0)), float(lam(p0)), float(C(p0))
        log_g = _growth_logs(sys, norm, g, horizon)
        log_r = rate.log_ratio(g.ells[:, None], g.ells[:, None] + np.arange(horizon + 1))
        excess = float(np.max(log_g - lv * log_r - math.log(Mv)))
        if excess > 1e-12:
            raise HypothesisViolated(
                f"||Phi(n)|| exceeds M (mu ratio)^lambda by a factor {math.exp(excess):.6g} "
                f"on class {p0.orbit_class}")
        l1, l2 = L1 ** lv, L2 ** lv
        M2 = max(lv * Mv * l2 * l1 / (l1 - 1.0) * T / Cv, Mv * l2 * eta ** lv)
        Lc = Cv * eta ** (-lv) * (1.0 - 1.0 / l1) / (Mv * lv * T)
        log_N0_s = math.log(eta) + math.e * T * M2 / Cv
        log_N0_u = math.log(eta) + math.e * T / (Cv * Lc)
        K0s, a_s = ladder_exponent(log_N0_s, L1, L2)
        K0u, a_u = ladder_exponent(log_N0_u, L1, L2)
        a = min(a_s, a_u)
        D1, D2 = math.e * M2, math.e / Lc
        D = max(D1, D2)
        logL = math.log(L1) + math.log(L2)
        m = math.floor(2.0 * math.log(D) / (a * logL)) + 1
        # log of L1^{am}/D - D L2^{-am}, written as log(L1^{am}/D) + log(1 - D^2 (L1 L2)^{-am})
        gap = a * m * logL - 2.0 * math.log(D)
        log_c = (-math.log(Mv) - lv * m * math.log(L2) + a * m * math.log(L1) - math.log(D)
                 + math.log(-math.expm1(-gap)))
        key = p0.orbit_class
        out.log_N0[key] = max(log_N0_s, log_N0_u)
        out.K0[key] = max(K0s, K0u)
        out.a[key] = a
        out.b[key] = a
        out.D1[key] = D
        out.D2[key] = D
        out.M2[key] = M2
        out.L[key] = Lc
        out.m[key] = m
        out.log_c[key] = log_c
        for p in g.points:
            z = _zeta(splitting.V[p], splitting.Z[p], norm.factor(p))
            out.zeta[p.key] = z
            out.projection_bound[p.key] = 2.0 / z
    projections = splitting.projections()
    cert = DichotomyCertificate(projections, ClassTable(out.a), ClassTable(out.D1), norm)
    out.certificate = cert
    if validate:
        out.report = verify_dichotomy(sys, cert, rate, points, horizon)
    return out
