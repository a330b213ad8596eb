"""Sample grids and the restricted-product engine shared by the verification modules.

Checking dichotomy bounds needs ``Phi(n, p) P_p`` where ``Phi(n, p)`` itself mixes
scales ``r^{-lambda}`` and ``r^{+lambda}``; multiplying the plain product by ``P``
loses the small part to cancellation. Instead the cocycle is restricted to
orthonormal bases ``V_t`` of ``range P_t`` and ``Z_t`` of ``ker P_t`` along a driver
orbit, and cumulative restricted products are carried with a separate log scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .cocycle import Nrds, ProjectionFamily, RandomNorm, range_kernel, values_along
from .driver import Driver, OrbitPoint, sample_orbits, shift
from .errors import InvalidProjection, SingularRestriction

EQUIVARIANCE_TOL = 1e-10


@dataclass(frozen=True)
class GridSpec:
    orbits: int = 8
    ell_max: int = 16
    horizon: int = 64
    seed: int = 0


@dataclass(frozen=True)
class SampleGrid:
    """Points ``(ell, theta^ell omega_i)`` for ``ell <= ell_max`` and sampled bases ``omega_i``.

    Each base state is one orbit class; all its points lie on a single driver
    orbit of length ``ell_max + horizon``.
    """

    driver: Driver
    bases: tuple
    ell_max: int
    horizon: int

    @classmethod
    def sample(cls, driver: Driver, spec: GridSpec = GridSpec()) -> "SampleGrid":
        bases = tuple(sample_orbits(driver, spec.orbits, spec.seed))
        return cls(driver, bases, spec.ell_max, spec.horizon)

    @property
    def length(self) -> int:
        return self.ell_max + self.horizon

    def points(self) -> list[OrbitPoint]:
        return [shift(b, ell) for b in self.bases for ell in range(self.ell_max + 1)]

    def orbit_points(self, i: int) -> list[OrbitPoint]:
        return [shift(self.bases[i], ell) for ell in range(self.ell_max + 1)]


@dataclass(frozen=True)
class OrbitGroup:
    base: OrbitPoint
    points: tuple
    ells: np.ndarray

    @property
    def ell_max(self) -> int:
        return int(self.ells.max())


def group_by_orbit(points: Sequence[OrbitPoint]) -> list[OrbitGroup]:
    """Group points by orbit class, preserving first-seen order."""
    order: dict[str, list[OrbitPoint]] = {}
    for p in points:
        order.setdefault(p.orbit_class, []).append(p)
    groups = []
    for pts in order.values():
        base = shift(pts[0], -pts[0].ell)
        groups.append(OrbitGroup(base, tuple(pts), np.array([p.ell for p in pts])))
    return groups


def factor_stack(norm: RandomNorm, pts: Sequence[OrbitPoint]) -> np.ndarray:
    return np.stack([norm.factor(p) for p in pts])


def factors_along(norm: RandomNorm, p: OrbitPoint, length: int) -> np.ndarray:
    """Norm factors at ``Theta^t p`` for ``t = 0..length``."""
    if norm.kind == "scalar":
        k = values_along(norm.weight, p, length)
        if not np.all(k > 0):
            raise ValueError(f"scalar norm weight must be positive along the orbit of {p.key}")
        return k[:, None, None] * np.eye(norm.dim)
    pts = [p]
    for _ in range(length):
        pts.append(shift(pts[-1], 1))
    return factor_stack(norm, pts)


class OrbitTrack:
    """Generators and norm factors along one driver orbit ``t = 0..length``."""

    def __init__(self, sys: Nrds, norm: RandomNorm, base: OrbitPoint, length: int,
                 steps: np.ndarray | None = None):
        self.sys = sys
        self.norm = norm
        self.base = base
        self.length = int(length)
        self._points = None
        self.A = sys.steps(base, self.length) if steps is None else steps
        self.F = factors_along(norm, base, self.length)
        self.Finv = np.linalg.inv(self.F)

    @property
    def dim(self) -> int:
        return self.sys.dim

    @property
    def points(self) -> list[OrbitPoint]:
        if self._points is None:
            pts = [self.base]
            for _ in range(self.length):
                pts.append(shift(pts[-1], 1))
            self._points = pts
        return self._points

    def point(self, t: int) -> OrbitPoint:
        return self.points[t]


@dataclass
class LogTable:
    """Maps ``src -> dst`` between orbit times, stored as ``mats * exp(logs)``.

    ``mats[src, dst]`` is a normalised ``d x d`` matrix; invalid pairs have
    ``logs = -inf``.
    """

    mats: np.ndarray
    logs: np.ndarray

    def weighted_lognorm(self, F: np.ndarray, Finv: np.ndarray) -> np.ndarray:
        """``log || F_dst M Finv_src ||_2`` for every table entry."""
        w = np.einsum("bij,abjk,akl->abil", F, self.mats, Finv)
        with np.errstate(divide="ignore"):
            return np.log(np.linalg.norm(w, ord=2, axis=(-2, -1))) + self.logs

    def dense(self) -> np.ndarray:
        with np.errstate(under="ignore", over="ignore"):
            scale = np.where(np.isfinite(self.logs), np.exp(np.minimum(self.logs, 700.0)), 0.0)
        return self.mats * scale[..., None, None]


def _normalise(M: np.ndarray, logs: np.ndarray) -> None:
    if M.size == 0:
        return
    nrm = np.linalg.norm(M, axis=(-2, -1))
    safe = np.where(nrm > 0, nrm, 1.0)
    M /= safe[:, None, None]
    with np.errstate(divide="ignore"):
        logs += np.where(nrm > 0, np.log(safe), -np.inf)


def _empty_table(n: int, d: int) -> LogTable:
    return LogTable(np.zeros((n, n, d, d)), np.full((n, n), -np.inf))


def growth_table(track: OrbitTrack, last: int | None = None) -> LogTable:
    """Plain products ``Phi(b - a, a)`` for ``0 <= a <= b <= last``."""
    L = track.length if last is None else last
    d = track.dim
    table = _empty_table(L + 1, d)
    M = np.broadcast_to(np.eye(d), (L + 1, d, d)).copy()
    logs = np.zeros(L + 1)
    for n in range(L + 1):
        a = np.arange(L + 1 - n)
        b = a + n
        table.mats[a, b] = M[a]
        table.logs[a, b] = logs[a]
        if n < L:
            a = a[:-1]
            M[a] = np.einsum("aij,ajk->aik", track.A[a + n], M[a])
            sub, sl = M[a], logs[a]
            _normalise(sub, sl)
            M[a], logs[a] = sub, sl
    return table


class SplitTrack:
    """A track together with an invariant splitting ``range P_t (+) ker P_t``."""

    def __init__(self, track: OrbitTrack, V: np.ndarray, Z: np.ndarray, P: np.ndarray | None = None,
                 check: bool = True):
        self.track = track
        self.V = V  # (length+1, d, k)
        self.Z = Z  # (length+1, d, d-k)
        if P is None:
            P = np.stack([_oblique(V[t], Z[t]) for t in range(len(V))])
        self.P = P
        self.Q = np.eye(track.dim) - P
        A = track.A
        n = track.length
        self.G = np.einsum("tji,tjk,tkl->til", V[1:n + 1], A, V[:n])
        self.H = np.einsum("tji,tjk,tkl->til", Z[1:n + 1], A, Z[:n])
        self.equivariance = self._equivariance()
        if check and self.equivariance > EQUIVARIANCE_TOL:
            raise InvalidProjection(
                f"projections are not carried by the cocycle (relative residual {self.equivariance:.2e})")
        self._Hinv = None

    @classmethod
    def from_projections(cls, track: OrbitTrack, projections: Callable[[OrbitPoint], np.ndarray],
                         check: bool = True) -> "SplitTrack":
        if isinstance(projections, ProjectionFamily) and not projections.table \
                and projections.default is not None:
            P0 = np.asarray(projections.default, dtype=float)
            V0, Z0 = range_kernel(P0)
            n = track.length + 1
            return cls(track, np.broadcast_to(V0, (n,) + V0.shape).copy(),
                       np.broadcast_to(Z0, (n,) + Z0.shape).copy(),
                       np.broadcast_to(P0, (n,) + P0.shape).copy(), check=check)
        P = np.stack([np.asarray(projections(p), dtype=float) for p in track.points])
        bases = [range_kernel(Pt) for Pt in P]
        ranks = {b[0].shape[1] for b in bases}
        if len(ranks) != 1:
            raise InvalidProjection("projection rank changes along the orbit")
        V = np.stack([b[0] for b in bases])
        Z = np.stack([b[1] for b in bases])
        return cls(track, V, Z, P, check=check)

    @property
    def rank(self) -> int:
        return self.V.shape[-1]

    def _equivariance(self) -> float:
        A = self.track.A
        n = self.track.length
        worst = 0.0
        for B in (self.V, self.Z):
            if B.shape[-1] == 0:
                continue
            image = np.einsum("tij,tjk->tik", A, B[:n])
            proj = np.einsum("tij,tkj,tkl->til", B[1:n + 1], B[1:n + 1], image)
            scale = np.linalg.norm(A, ord=2, axis=(-2, -1))
            res = np.linalg.norm(image - proj, ord=2, axis=(-2, -1)) / np.where(scale > 0, scale, 1.0)
            worst = max(worst, float(res.max()))
        return worst

    @property
    def Hinv(self) -> np.ndarray:
        if self._Hinv is None:
            H = self.H
            if H.shape[-1] == 0:
                self._Hinv = H.copy()
            else:
                s = np.linalg.svd(H, compute_uv=False)
                bad = s[:, -1] <= 1e-10 * s[:, 0]
                if np.any(bad):
                    t = int(np.argmax(bad))
                    raise SingularRestriction(
                        f"cocycle restricted to ker P is singular at orbit time {t}")
                self._Hinv = np.linalg.inv(H)
        return self._Hinv

    def stable_table(self, last: int | None = None) -> LogTable:
        """``Phi(b - a, a) P_a`` for ``a <= b``, indexed ``[a, b]``."""
        L = self.track.length if last is None else last
        d, k = self.track.dim, self.rank
        table = _empty_table(L + 1, d)
        if k == 0:
            return table
        M = np.einsum("tji,tjk->tik", self.V[:L + 1], self.P[:L + 1])
        logs = np.zeros(L + 1)
        _normalise(M, logs)
        for n in range(L + 1):
            a = np.arange(L + 1 - n)
            b = a + n
            table.mats[a, b] = np.einsum("aij,ajk->aik", self.V[b], M[a])
            table.logs[a, b] = logs[a]
            if n < L:
                a = a[:-1]
                sub = np.einsum("aij,ajk->aik", self.G[a + n], M[a])
                sl = logs[a].copy()
                _normalise(sub, sl)
                M[a], logs[a] = sub, sl
        return table

    def unstable_forward_table(self, last: int | None = None) -> LogTable:
        """``Phi(b - a, a) Q_a`` for ``a <= b``, indexed ``[a, b]``."""
        L = self.track.length if last is None else last
        d, m = self.track.dim, self.track.dim - self.rank
        table = _empty_table(L + 1, d)
        if m == 0:
            return table
        M = np.einsum("tji,tjk->tik", self.Z[:L + 1], self.Q[:L + 1])
        logs = np.zeros(L + 1)
        _normalise(M, logs)
        for n in range(L + 1):
            a = np.arange(L + 1 - n)
            b = a + n
            table.mats[a, b] = np.einsum("aij,ajk->aik", self.Z[b], M[a])
            table.logs[a, b] = logs[a]
            if n < L:
                a = a[:-1]
                sub = np.einsum("aij,ajk->aik", self.H[a + n], M[a])
                sl = logs[a].copy()
                _normalise(sub, sl)
                M[a], logs[a] = sub, sl
        return table

    def unstable_backward_table(self, last: int | None = None) -> LogTable:
        """``Phi(-(a - b), a) Q_a`` for ``b <= a``, indexed ``[a, b]`` (source ``a``)."""
        L = self.track.length if last is None else last
        d, m = self.track.dim, self.track.dim - self.rank
        table = _empty_table(L + 1, d)
        if m == 0:
            return table
        Hinv = self.Hinv
        W = np.broadcast_to(np.eye(m), (L + 1, m, m)).copy()
        logs = np.zeros(L + 1)
        for n in range(L + 1):
            b = np.arange(L + 1 - n)
            a = b + n
            table.mats[a, b] = np.einsum("bij,bjk,blk,blm->bim", self.Z[b], W[b], self.Z[a],
                                         self.Q[a])
            table.logs[a, b] = logs[b]
            if n < L:
                b = b[:-1]
                sub = np.einsum("bij,bjk->bik", W[b], Hinv[b + n])
                sl = logs[b].copy()
                _normalise(sub, sl)
                W[b], logs[b] = sub, sl
        return table


def _oblique(V: np.ndarray, Z: np.ndarray) -> np.ndarray:
    d = V.shape[0]
    k = V.shape[1]
    basis = np.hstack([V, Z])
    sel = np.zeros((d, d))
    sel[:k, :k] = np.eye(k)
    return basis @ sel @ np.linalg.inv(basis)


def build_split_tracks(sys: Nrds, norm: RandomNorm, projections, groups: Sequence[OrbitGroup],
                       horizon: int, check: bool = True) -> list[SplitTrack]:
    out = []
    for g in groups:
        track = OrbitTrack(sys, norm, g.base, g.ell_max + horizon)
        out.append(SplitTrack.from_projections(track, projections, check=check))
    return out
