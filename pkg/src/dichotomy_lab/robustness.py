"""Small perturbations of a cocycle, the fixed-point solve, growth bounds and threshold sweeps."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .admissibility import SignalGrid, admissibility_constant, series_operator
from .cocycle import DichotomyCertificate, Nrds, RandomNorm
from .dichotomy import fit_certificate, identify_splitting
from .driver import OrbitPoint
from .errors import LabError, MaxIterExceeded, NotContracting, RobustnessError
from .grid import OrbitTrack, factors_along, group_by_orbit, growth_table
from .growth import GrowthRate

__all__ = [
    "threshold_constant", "admissible_threshold", "Perturbation", "perturb", "RobustSolution",
    "robust_solve", "GrowthBoundReport", "perturbed_growth_bound", "refit_perturbed",
    "SweepRow", "robustness_sweep", "SWEEP_COLUMNS",
]

SWEEP_COLUMNS = ("magnitude", "threshold", "contraction_rate", "converged", "refit_lambda",
                 "refit_D")
STALL_LIMIT = 3


def _per_class(value) -> Callable[[OrbitPoint], float]:
    if callable(value):
        return value
    return lambda p, v=float(value): v


def threshold_constant(C: float, M: float, T_norm: float, rho_margin: float) -> float:
    """``min(rho C, (1 - rho_margin) / (2 M))`` with ``rho = rho_margin / T_norm``."""
    if not T_norm > 0:
        raise ValueError("T_norm must be positive")
    if not 0 < rho_margin < 1:
        raise ValueError("rho_margin must lie in (0, 1)")
    rho = rho_margin / T_norm
    return min(rho * C, (1.0 - rho_margin) / (2.0 * M))


def admissible_threshold(cert: DichotomyCertificate, rate: GrowthRate, M, T_norm: float,
                         rho_margin: float = 0.5) -> Callable[[OrbitPoint], float]:
    """Per-class perturbation bound ``c`` under which the fixed-point map contracts."""
    M = _per_class(M)
    T = float(T_norm)

    def c(p: OrbitPoint) -> float:
        return threshold_constant(admissibility_constant(cert, rate, p), float(M(p)), T, rho_margin)

    c.class_invariant = True
    return c


# ---------------------------------------------------------------- perturbations

class _ClassStream:
    """Uniform ``[-1, 1]`` matrices indexed by orbit time, one seeded stream per orbit class.

    Entry ``ell`` of the stream for class ``c`` is the raw perturbation at the
    point ``(ell, theta^ell c)``, so values do not depend on the query order.
    """

    CHUNK = 4096

    def __init__(self, seed: int, dim: int):
        self.seed, self.dim = int(seed), dim
        self._cache: dict[str, np.ndarray] = {}

    def upto(self, orbit_class: str, end: int) -> np.ndarray:
        have = self._cache.get(orbit_class)
        if have is None or len(have) < end:
            n = max(end, self.CHUNK)
            digest = hashlib.blake2b(orbit_class.encode(), digest_size=8).digest()
            rng = np.random.default_rng([self.seed, int.from_bytes(digest, "big")])
            have = rng.uniform(-1.0, 1.0, size=(n, self.dim, self.dim))
            if len(self._cache) > 64:
                self._cache.clear()
            self._cache[orbit_class] = have
        return have


class Perturbation:
    """``Psi(1, p) = Phi(1, p) + delta(p)`` with ``||delta(p)||_{p -> Theta p} = c(p) / phi_{ell+1}``.

    ``shape`` is ``("random", seed)`` or ``("directional", E)``.
    """

    def __init__(self, base: Nrds, norm: RandomNorm, rate: GrowthRate, shape: tuple, magnitude):
        kind = shape[0]
        if kind not in ("random", "directional"):
            raise ValueError("shape must be ('random', seed) or ('directional', matrix)")
        self.base, self.norm, self.rate = base, norm, rate
        self.shape = shape
        self.bound_c = _per_class(magnitude)
        d = base.dim
        if kind == "random":
            self._stream = _ClassStream(int(shape[1]), d)
        if kind == "directional":
            E = np.asarray(shape[1], dtype=float)
            if E.shape != (d, d):
                raise ValueError(f"direction must be {d}x{d}")
            self._direction = E
        self.system = Nrds(d, self._step, base.driver, cache_bytes=base.cache_bytes,
                           batch=self._steps)

    def raw(self, p: OrbitPoint) -> np.ndarray:
        if self.shape[0] == "directional":
            return self._direction
        return self._stream.upto(p.orbit_class, p.ell + 1)[p.ell]

    def _raw_along(self, base: OrbitPoint, length: int) -> np.ndarray:
        if self.shape[0] == "directional":
            return np.broadcast_to(self._direction, (length,) + self._direction.shape)
        return self._stream.upto(base.orbit_class, base.ell + length)[base.ell:base.ell + length]

    def deltas(self, base: OrbitPoint, length: int) -> np.ndarray:
        """``delta(Theta^t base)`` for ``t = 0..length-1``."""
        if length == 0:
            return np.zeros((0, self.base.dim, self.base.dim))
        E = self._raw_along(base, length)
        F = factors_along(self.norm, base, length)
        op = np.linalg.norm(np.einsum("tab,tbc,tcd->tad", F[1:], E, np.linalg.inv(F[:-1])),
                            ord=2, axis=(-2, -1))
        ells = base.ell + np.arange(length)
        target = float(self.bound_c(base)) * np.exp(-self.rate.log_phi(ells + 1))
        s = np.where(op > 0, target / np.where(op > 0, op, 1.0), 0.0)
        return s[:, None, None] * E

    def delta(self, p: OrbitPoint) -> np.ndarray:
        return self.deltas(p, 1)[0]

    def _step(self, p: OrbitPoint) -> np.ndarray:
        return self.base.step(p) + self.delta(p)

    def _steps(self, base: OrbitPoint, length: int) -> np.ndarray:
        return self.base.steps(base, length) + self.deltas(base, length)

    def smallness(self, points: Sequence[OrbitPoint], horizon: int) -> float:
        """Largest ``phi_{ell+1} ||delta(p)||_{p -> Theta p} / c(p)`` over the orbit cells (1 up to round-off)."""
        worst = 0.0
        for g in group_by_orbit(points):
            L = g.ell_max + horizon
            D = self.deltas(g.base, L)
            F = factors_along(self.norm, g.base, L)
            op = np.linalg.norm(np.einsum("tab,tbc,tcd->tad", F[1:], D, np.linalg.inv(F[:-1])),
                                ord=2, axis=(-2, -1))
            c = float(self.bound_c(g.base))
            if c > 0:
                phi = np.exp(self.rate.log_phi(g.base.ell + np.arange(L) + 1))
                worst = max(worst, float(np.max(op * phi / c)))
        return worst


def perturb(base: Nrds, shape: tuple, magnitude, cert: DichotomyCertificate,
            rate: GrowthRate) -> Perturbation:
    """Build ``Psi`` whose one-step perturbation has random-norm size ``magnitude / phi_{ell+1}``."""
    return Perturbation(base, cert.norm, rate, shape, magnitude)


# ---------------------------------------------------------------- fixed point

@dataclass
class RobustSolution:
    x: SignalGrid
    iterations: int
    contraction_rate: float
    differences: list
    residual: float


def robust_solve(pert: Perturbation, cert: DichotomyCertificate, rate: GrowthRate,
                 y: SignalGrid, fp_tol: float | None = None, max_iter: int = 200) -> RobustSolution:
    """Iterate ``x <- T(G x)`` from zero; ``G`` feeds the perturbation back as an input."""
    if not y.in_Y0():
        raise ValueError("input must vanish at n = 0")
    op = series_operator(pert.base, cert, rate, y.points, y.horizon)
    H = y.horizon
    y_norm = float(op.cell_norms(y.values).max(initial=0.0))
    tol = 1e-10 * y_norm if fp_tol is None else float(fp_tol)
    deltas = np.stack([pert.deltas(p, H) for p in y.points])          # delta(Theta^n p), n < H
    phi = np.exp(np.stack([rate.log_phi(p.ell + np.arange(H + 1)) for p in y.points]))

    def feed(x: np.ndarray) -> np.ndarray:
        g = y.values.copy()
        g[:, 1:] += phi[:, 1:, None] * np.einsum("inab,inb->ina", deltas, x[:, :-1])
        return g

    def dist(a: np.ndarray) -> float:
        return float((op.C[:, None] * op.cell_norms(a)).max(initial=0.0))

    x = np.zeros_like(y.values)
    diffs, stall = [], 0
    for k in range(max_iter):
        new = op.apply(feed(x))
        diff = dist(new - x)
        diffs.append(diff)
        x = new
        if diff <= tol:
            rate_obs = _geometric_rate(diffs)
            res = _perturbed_residual(op, deltas, x, y.values)
            return RobustSolution(SignalGrid(y.points, x, y.norm), k, rate_obs, diffs, res)
        if len(diffs) > 1 and diff >= diffs[-2]:
            stall += 1
            if stall >= STALL_LIMIT:
                err = NotContracting(
                    f"differences stopped decreasing for {STALL_LIMIT} iterations "
                    f"(last ratio {diff / diffs[-2]:.4g})")
                err.contraction_rate = _geometric_rate(diffs)
                raise err
        else:
            stall = 0
    err = MaxIterExceeded(
        f"no fixed point within {max_iter} iterations (last difference {diffs[-1]:.3e})")
    err.contraction_rate = _geometric_rate(diffs)
    raise err


def _geometric_rate(diffs: list) -> float:
    ratios = [b / a for a, b in zip(diffs, diffs[1:]) if a > 0]
    if not ratios:
        return 0.0
    if min(ratios) == 0.0:
        return 0.0
    return float(math.exp(np.mean(np.log(ratios))))


def _perturbed_residual(op, deltas, x, y) -> float:
    step = op.A + deltas
    r = x[:, 1:] - np.einsum("inab,inb->ina", step, x[:, :-1]) - op.inv_phi[:, 1:, None] * y[:, 1:]
    return float(np.linalg.norm(np.einsum("inab,inb->ina", op.F[:, 1:], r), axis=-1).max(initial=0.0))


# ---------------------------------------------------------------- growth of the perturbed system

@dataclass
class GrowthBoundReport:
    rows: list
    worst_margin: float
    passed: bool
    exponent: dict


def perturbed_growth_bound(pert: Perturbation, cert: DichotomyCertificate, rate: GrowthRate,
                           M, lam, points: Sequence[OrbitPoint], horizon: int) -> GrowthBoundReport:
    """Check ``||Psi(n, p)|| <= M eta^{eta/2} (mu_{ell+n}/mu_ell)^{lam + eta/2}``.

    Margins are ``log(rhs) - log(lhs)``; a cell passes iff its margin is ``>= -1e-12``.
    """
    M, lam = _per_class(M), _per_class(lam)
    eta = rate.eta
    rows, worst, exps = [], math.inf, {}
    for g in group_by_orbit(points):
        track = OrbitTrack(pert.system, pert.norm, g.base, g.ell_max + horizon)
        lg = growth_table(track).weighted_lognorm(track.F, track.Finv)
        lv = float(lam(g.base))
        exps[g.base.orbit_class] = lv + eta / 2.0
        log_const = math.log(float(M(g.base))) + (eta / 2.0) * math.log(eta)
        for p in g.points:
            n = np.arange(horizon + 1)
            lhs = lg[p.ell, p.ell + n]
            rhs = log_const + (lv + eta / 2.0) * rate.log_ratio(p.ell, p.ell + n)
            margin = rhs - lhs
            worst = min(worst, float(margin.min()))
            rows.extend((p.key, p.ell, int(k), float(a), float(b), float(m))
                        for k, a, b, m in zip(n, lhs, rhs, margin))
    return GrowthBoundReport(rows, worst, worst >= -1e-12, exps)


def refit_perturbed(pert: Perturbation, rate: GrowthRate, points: Sequence[OrbitPoint],
                    horizon: int, **split_kw) -> DichotomyCertificate:
    """Re-identify the splitting of ``Psi`` and fit a fresh certificate to it."""
    splitting = identify_splitting(pert.system, pert.norm, rate, points, horizon, **split_kw)
    return fit_certificate(pert.system, splitting.projections(), rate, pert.norm, points, horizon)


# ---------------------------------------------------------------- sweeps

@dataclass
class SweepRow:
    magnitude: float
    threshold: float
    contraction_rate: float
    converged: bool
    refit_lambda: float
    refit_D: float

    def as_tuple(self) -> tuple:
        return (self.magnitude, self.threshold, self.contraction_rate, self.converged,
                self.refit_lambda, self.refit_D)


def sweep_magnitudes(threshold: float, count: int = 16) -> np.ndarray:
    return np.geomspace(threshold / 16.0, 4.0 * threshold, count)


def robustness_sweep(sys: Nrds, cert: DichotomyCertificate, rate: GrowthRate,
                     points: Sequence[OrbitPoint], horizon: int, M, T_norm: float,
                     rho_margin: float = 0.5, shape: tuple = ("random", 0), seed: int = 0,
                     count: int = 16, refit: bool = True, max_iter: int = 200) -> list[SweepRow]:
    """Solve and refit across magnitudes log-spaced over ``[c/16, 4c]``, ``c`` the smallest class threshold."""
    c_fn = admissible_threshold(cert, rate, M, T_norm, rho_margin)
    threshold = min(float(c_fn(g.base)) for g in group_by_orbit(points))
    y = SignalGrid.random(points, horizon, cert.norm, seed)
    rows = []
    for mag in sweep_magnitudes(threshold, count):
        pert = perturb(sys, shape, float(mag), cert, rate)
        try:
            sol = robust_solve(pert, cert, rate, y, max_iter=max_iter)
            rate_obs, ok = sol.contraction_rate, True
        except RobustnessError as err:
            rate_obs, ok = getattr(err, "contraction_rate", math.nan), False
        lam_fit, D_fit = math.nan, math.nan
        if refit:
            try:
                fitted = refit_perturbed(pert, rate, points, horizon)
                classes = [g.base for g in group_by_orbit(points)]
                lam_fit = min(float(fitted.lam(p)) for p in classes)
                D_fit = max(float(fitted.D(p)) for p in classes)
            except (LabError, np.linalg.LinAlgError):
                pass
        rows.append(SweepRow(float(mag), threshold, rate_obs, ok, lam_fit, D_fit))
    return rows

