"""Input/output signal spaces, the series solution operator, uniqueness and operator-norm probes."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cocycle import DichotomyCertificate, Nrds, RandomNorm
from .driver import OrbitPoint
from .errors import CertificateRequired, TailNotConvergent
from .grid import OrbitTrack, SplitTrack, factors_along, group_by_orbit
from .growth import GrowthRate

__all__ = [
    "SignalGrid", "admissibility_constant", "SeriesOperator", "solve_admissibility",
    "UniquenessReport", "check_uniqueness", "TNormEstimate", "estimate_T_norm",
    "homogeneous_solution",
]

KERNEL_TOL = 1e-10
EXTENSIONS = ("zero", "hold")


# ---------------------------------------------------------------- signals

@dataclass
class SignalGrid:
    """Vectors ``values[i, n]`` attached to ``Theta^n points[i]`` for ``0 <= n <= horizon``."""

    points: tuple
    values: np.ndarray
    norm: RandomNorm
    residuals: np.ndarray | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = tuple(self.points)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[:1] != (len(self.points),) or self.values.ndim != 3:
            raise ValueError("values must have shape (len(points), horizon + 1, dim)")

    @property
    def horizon(self) -> int:
        return self.values.shape[1] - 1

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def factors(self) -> np.ndarray:
        return _factor_grid(self.norm, self.points, self.horizon)

    def cell_norms(self, factors: np.ndarray | None = None) -> np.ndarray:
        F = self.factors() if factors is None else factors
        return np.linalg.norm(np.einsum("inab,inb->ina", F, self.values), axis=-1)

    def sup_norm(self, factors: np.ndarray | None = None) -> float:
        return float(self.cell_norms(factors).max(initial=0.0))

    def weighted_norm(self, C: Sequence[float], factors: np.ndarray | None = None) -> float:
        """``sup C(p) ||x(p, n)||`` with one ``C`` per point."""
        cn = self.cell_norms(factors)
        return float((np.asarray(C, dtype=float)[:, None] * cn).max(initial=0.0))

    def in_Y0(self) -> bool:
        return bool(np.all(self.values[:, 0] == 0.0))

    def in_kernel(self, projections, tol: float = KERNEL_TOL) -> bool:
        for p, v in zip(self.points, self.values[:, 0]):
            if np.linalg.norm(projections(p) @ v) > tol * max(1.0, np.linalg.norm(v)):
                return False
        return True

    def scaled(self, a: float) -> "SignalGrid":
        return SignalGrid(self.points, a * self.values, self.norm)

    def __add__(self, other: "SignalGrid") -> "SignalGrid":
        return SignalGrid(self.points, self.values + other.values, self.norm)

    # constructors
    @classmethod
    def zeros(cls, points, horizon: int, dim: int, norm: RandomNorm) -> "SignalGrid":
        return cls(points, np.zeros((len(points), horizon + 1, dim)), norm)

    @classmethod
    def impulse(cls, points, horizon: int, norm: RandomNorm, index: int, n: int,
                vector) -> "SignalGrid":
        if n < 1:
            raise ValueError("impulses in Y0 must sit at n >= 1")
        y = cls.zeros(points, horizon, norm.dim, norm)
        y.values[index, n] = np.asarray(vector, dtype=float)
        return y

    @classmethod
    def random(cls, points, horizon: int, norm: RandomNorm, seed: int) -> "SignalGrid":
        """Dense uniform entries in ``[-1, 1]`` with ``y(., 0) = 0``."""
        rng = np.random.default_rng(seed)
        vals = rng.uniform(-1.0, 1.0, size=(len(points), horizon + 1, norm.dim))
        vals[:, 0] = 0.0
        return cls(points, vals, norm)

    # serialisation
    def to_json(self) -> dict:
        out = {
            "points": [p.key for p in self.points],
            "horizon": self.horizon,
            "values": self.values.reshape(-1, self.dim).tolist(),
        }
        if self.residuals is not None:
            out["residuals"] = self.residuals.tolist()
        out.update(self.info)
        return out

    @classmethod
    def from_json(cls, data: dict, driver, norm: RandomNorm) -> "SignalGrid":
        points = []
        for key in data["points"]:
            ell, _, enc = str(key).partition("|")
            points.append(OrbitPoint(int(ell), driver.decode(enc), driver))
        horizon = int(data["horizon"])
        vals = np.asarray(data["values"], dtype=float).reshape(len(points), horizon + 1, -1)
        return cls(points, vals, norm)


def _factor_grid(norm: RandomNorm, points, horizon: int) -> np.ndarray:
    return np.stack([factors_along(norm, p, horizon) for p in points])


def admissibility_constant(cert: DichotomyCertificate, rate: GrowthRate, p: OrbitPoint) -> float:
    """``lambda / (D (eta^{lambda+1} + eta))`` for the orbit class of ``p``."""
    lam, D, eta = float(cert.lam(p)), float(cert.D(p)), rate.eta
    return lam / (D * (eta ** (lam + 1.0) + eta))


# ---------------------------------------------------------------- series operator

class SeriesOperator:
    """The linear map ``y -> x`` of the series solution on a fixed set of points.

    ``kernel[i, n, k]`` is ``phi_{ell+k}^{-1} Phi(n-k, ell+k) P`` for ``k <= n`` and
    ``-phi_{ell+k}^{-1} Phi(-(k-n), ell+k) Q`` for ``k > n``.
    """

    def __init__(self, sys: Nrds, cert: DichotomyCertificate, rate: GrowthRate, points,
                 horizon: int):
        if cert is None:
            raise CertificateRequired("solving the admissibility equation needs a certificate")
        self.sys, self.cert, self.rate = sys, cert, rate
        self.points = tuple(points)
        self.horizon = H = int(horizon)
        d = sys.dim
        n_pts = len(self.points)
        self.kernel = np.zeros((n_pts, H + 1, H + 1, d, d))
        self.A = np.zeros((n_pts, H, d, d))
        self.F = np.zeros((n_pts, H + 1, d, d))
        self.P0 = np.zeros((n_pts, d, d))
        self.inv_phi = np.zeros((n_pts, H + 1))
        self.C = np.array([admissibility_constant(cert, rate, p) for p in self.points])
        index = {p: i for i, p in enumerate(self.points)}
        self.splits = {}
        n = np.arange(H + 1)
        for g in group_by_orbit(self.points):
            track = OrbitTrack(sys, cert.norm, g.base, g.ell_max + H)
            split = SplitTrack.from_projections(track, cert.projections)
            self.splits[g.base.orbit_class] = (g, split)
            S = split.stable_table().dense()
            U = split.unstable_backward_table().dense()
            for p in g.points:
                i, ell = index[p], p.ell
                a = ell + n[None, :]       # source time, indexed [n, k]
                b = ell + n[:, None]       # destination time
                ab = np.broadcast_to(a, (H + 1, H + 1))
                bb = np.broadcast_to(b, (H + 1, H + 1))
                G = np.where((n[None, :] <= n[:, None])[..., None, None], S[ab, bb], -U[ab, bb])
                inv_phi = np.exp(-rate.log_phi(ell + n))
                self.inv_phi[i] = inv_phi
                self.kernel[i] = G * inv_phi[None, :, None, None]
                self.A[i] = track.A[ell:ell + H]
                self.F[i] = track.F[ell:ell + H + 1]
                self.P0[i] = split.P[ell]

    def apply(self, values: np.ndarray) -> np.ndarray:
        return np.einsum("inkab,ikb->ina", self.kernel, values)

    def residuals(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Random-norm residual of ``x(n+1) = A x(n) + phi^{-1} y(n+1)`` per cell ``n < H``."""
        r = x[:, 1:] - np.einsum("inab,inb->ina", self.A, x[:, :-1]) \
            - self.inv_phi[:, 1:, None] * y[:, 1:]
        return np.linalg.norm(np.einsum("inab,inb->ina", self.F[:, 1:], r), axis=-1)

    def cell_norms(self, values: np.ndarray) -> np.ndarray:
        return np.linalg.norm(np.einsum("inab,inb->ina", self.F, values), axis=-1)

    def hold_tail(self, y: np.ndarray, y_sup: float, tail_eps: float, j_max: int) -> tuple[np.ndarray, int]:
        """Unstable-series contribution of inputs held at their last value beyond the grid."""
        H, d = self.horizon, self.sys.dim
        out = np.zeros((len(self.points), H + 1, d))
        if y_sup == 0.0:
            return out, 0
        index = {p: i for i, p in enumerate(self.points)}
        used = 0
        for g, _ in self.splits.values():
            p0 = g.points[0]
            lam, D, eta = float(self.cert.lam(p0)), float(self.cert.D(p0)), self.rate.eta
            b = g.ell_max + H
            need = math.log(D * eta ** (lam + 1.0) / (lam * tail_eps)) / lam
            J = _steps_to_log_ratio(self.rate, b, need, j_max)
            used = max(used, J)
            track = OrbitTrack(self.sys, self.cert.norm, g.base, b + J + 1)
            split = SplitTrack.from_projections(track, self.cert.projections)
            m = d - split.rank
            if m == 0:
                continue
            Hinv = split.Hinv
            ells = np.array([p.ell for p in g.points])
            idx = np.array([index[p] for p in g.points])
            held = y[idx, H]                                     # (pts, d)
            last = b + J + 1
            v = np.zeros((len(idx), m))
            log_phi = self.rate.log_phi(np.arange(last + 1))
            for t in range(last, 0, -1):
                src = (t > ells + H) & (t <= ells + H + J + 1)
                if np.any(src):
                    c = np.exp(-log_phi[t]) * (split.Z[t].T @ split.Q[t] @ held.T).T
                    v = v + np.where(src[:, None], c, 0.0)
                v = v @ Hinv[t - 1].T
                dest = t - 1 - ells
                inside = (dest >= 0) & (dest <= H)
                for r in np.nonzero(inside)[0]:
                    out[idx[r], dest[r]] = -split.Z[t - 1] @ v[r]
        return out, used


def _steps_to_log_ratio(rate: GrowthRate, start: int, target: float, j_max: int) -> int:
    """Smallest ``J`` with ``log(mu_{start+J+1} / mu_start) >= target``."""
    if float(rate.log_ratio(start, start + 1)) >= target:
        return 0
    if float(rate.log_ratio(start, start + j_max + 1)) < target:
        raise TailNotConvergent(
            f"tail majorant stays above tolerance after {j_max} terms; lambda is too small for this rate")
    lo, hi = 0, j_max
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if float(rate.log_ratio(start, start + mid + 1)) >= target:
            hi = mid
        else:
            lo = mid
    return hi


_CACHE: list = []
_CACHE_SIZE = 8


def series_operator(sys: Nrds, cert: DichotomyCertificate, rate: GrowthRate, points,
                    horizon: int) -> SeriesOperator:
    """A memoised ``SeriesOperator``; entries are matched by object identity."""
    points = tuple(points)
    for op in _CACHE:
        if op.sys is sys and op.cert is cert and op.rate is rate and op.horizon == horizon \
                and op.points == points:
            return op
    op = SeriesOperator(sys, cert, rate, points, horizon)
    _CACHE.insert(0, op)
    del _CACHE[_CACHE_SIZE:]
    return op


def solve_admissibility(sys: Nrds, cert: DichotomyCertificate, rate: GrowthRate, y: SignalGrid,
                        tail_eps: float = 1e-10, extension: str = "zero",
                        j_max: int = 100_000) -> SignalGrid:
    """Series solution ``x = x_s + x_u`` of the admissibility equation for ``y`` in ``Y0``.

    ``extension`` says what ``y`` does past the grid: ``zero`` (the grid is its whole
    support, so the unstable series is a finite sum) or ``hold`` (last value kept,
    tail summed until the majorant drops below ``tail_eps * ||y||``).
    """
    if cert is None:
        raise CertificateRequired("solving the admissibility equation needs a certificate")
    if not y.in_Y0():
        raise ValueError("input must vanish at n = 0")
    if extension not in EXTENSIONS:
        raise ValueError(f"extension must be one of {EXTENSIONS}")
    op = series_operator(sys, cert, rate, y.points, y.horizon)
    x = op.apply(y.values)
    y_sup = float(op.cell_norms(y.values).max(initial=0.0))
    tail_terms = 0
    if extension == "hold":
        tail, tail_terms = op.hold_tail(y.values, y_sup, tail_eps, j_max)
        x = x + tail
    res = op.residuals(x, y.values)
    norms = op.cell_norms(x)
    info = {
        "y_norm": y_sup,
        "weighted_norm": float((op.C[:, None] * norms).max(initial=0.0)),
        "max_residual": float(res.max(initial=0.0)),
        "tail_terms": int(tail_terms),
        "extension": extension,
    }
    return SignalGrid(y.points, x, y.norm, residuals=res, info=info)


# ---------------------------------------------------------------- uniqueness

def homogeneous_solution(sys: Nrds, norm: RandomNorm, points, horizon: int, v) -> SignalGrid:
    """``x(p, n) = Phi(n, p) v`` on every point; ``v`` may be one vector or one per point."""
    v = np.asarray(v, dtype=float)
    vals = np.zeros((len(points), horizon + 1, sys.dim))
    for i, p in enumerate(points):
        A = sys.steps(p, horizon)
        vi = v if v.ndim == 1 else v[i]
        vals[i, 0] = vi
        for n in range(horizon):
            vals[i, n + 1] = A[n] @ vals[i, n]
    return SignalGrid(points, vals, norm)


@dataclass
class UniquenessReport:
    """Per-point verdicts: ``zero``, ``not_in_kernel`` or ``unbounded``."""

    flags: dict
    rows: list
    homogeneous_residual: float

    @property
    def violations(self) -> int:
        return sum(1 for f in self.flags.values() if f != "zero")

    @property
    def passed(self) -> bool:
        """True when the only homogeneous solution present is the zero one."""
        return self.violations == 0


def check_uniqueness(sys: Nrds, cert: DichotomyCertificate, rate: GrowthRate,
                     x: SignalGrid) -> UniquenessReport:
    """Decide whether a homogeneous solution could belong to the weighted output space.

    A nonzero ``x(p, 0)`` outside ``ker P`` fails membership outright. One inside
    ``ker P`` obeys ``C ||x(p, n)|| >= (C / D) (mu_{ell+n}/mu_ell)^lambda ||x(p, 0)||``,
    which diverges, so its weighted norm is unbounded.
    """
    F = x.factors()
    norms = x.cell_norms(F)
    H = x.horizon
    flags, rows, worst_res = {}, [], 0.0
    for i, p in enumerate(x.points):
        A = sys.steps(p, H)
        pred = np.einsum("nab,nb->na", A, x.values[i, :-1])
        scale = max(1.0, float(np.abs(x.values[i]).max()))
        worst_res = max(worst_res, float(np.abs(x.values[i, 1:] - pred).max(initial=0.0)) / scale)
        x0 = x.values[i, 0]
        size0 = float(norms[i, 0])
        lam, D = float(cert.lam(p)), float(cert.D(p))
        C = admissibility_constant(cert, rate, p)
        log_r = float(rate.log_ratio(p.ell, p.ell + H))
        if size0 == 0.0 and not np.any(x.values[i]):
            flag, lower = "zero", 0.0
        elif np.linalg.norm(cert.P(p) @ x0) > KERNEL_TOL * np.linalg.norm(x0):
            flag, lower = "not_in_kernel", math.nan
        else:
            flag = "unbounded"
            lower = (C / D) * math.exp(min(lam * log_r, 700.0)) * size0
        flags[p.key] = flag
        rows.append((p.key, p.ell, flag, size0, float(C * norms[i].max()), lower))
    return UniquenessReport(flags, rows, worst_res)


# ---------------------------------------------------------------- operator norm

@dataclass
class TNormEstimate:
    estimate: float
    upper_bound: float
    history: list
    kinds: list

    def __float__(self) -> float:
        return self.estimate


def estimate_T_norm(sys: Nrds, cert: DichotomyCertificate, rate: GrowthRate, points,
                    horizon: int, probe_count: int = 32, seed: int = 0) -> TNormEstimate:
    """Largest observed ``||x||_{Y_C} / ||y||_{Y0}`` over seeded probes.

    Probes cycle through unit impulses, dense random signals and aligned signals
    (each input cell chosen to push one output cell as hard as possible). The
    series bounds give ``||T|| <= 1`` by the choice of ``C``.
    """
    if probe_count < 1:
        raise ValueError("probe_count must be >= 1")
    op = series_operator(sys, cert, rate, points, horizon)
    n_pts, H, d = len(op.points), op.horizon, sys.dim
    Finv = np.linalg.inv(op.F)
    history, kinds, best = [], [], 0.0
    for j in range(probe_count):
        rng = np.random.default_rng([seed, j])
        kind = ("impulse", "dense", "aligned")[j % 3]
        vals = np.zeros((n_pts, H + 1, d))
        i = int(rng.integers(n_pts))
        if kind == "impulse":
            k = int(rng.integers(1, H + 1))
            u = rng.standard_normal(d)
            vals[i, k] = Finv[i, k] @ (u / np.linalg.norm(u))
        elif kind == "dense":
            vals = rng.uniform(-1.0, 1.0, size=(n_pts, H + 1, d))
            vals[:, 0] = 0.0
        else:
            n = int(rng.integers(0, H + 1))
            u = rng.standard_normal(d)
            u /= np.linalg.norm(u)
            # whitened response map of input cell k on output cell n
            W = np.einsum("ab,kbc,kcd->kad", op.F[i, n], op.kernel[i, n], Finv[i])
            w = np.einsum("kab,a->kb", W, u)
            nw = np.linalg.norm(w, axis=-1, keepdims=True)
            w = np.where(nw > 0, w / np.where(nw > 0, nw, 1.0), 0.0)
            vals[i] = np.einsum("kab,kb->ka", Finv[i], w)
            vals[i, 0] = 0.0
        y_norm = float(op.cell_norms(vals).max())
        if y_norm > 0:
            x = op.apply(vals)
            ratio = float((op.C[:, None] * op.cell_norms(x)).max()) / y_norm
            best = max(best, ratio)
        history.append(best)
        kinds.append(kind)
    return TNormEstimate(best, 1.0, history, kinds)
