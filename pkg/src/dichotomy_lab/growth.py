"""Growth-rate sequences, the two-sided summation estimate and the minimal-growth witness.

All rate arithmetic runs in log space so that exponential rates can be
evaluated far past the float overflow threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, HorizonExceeded, InvalidRate

REL_TOL = 1e-12
DEFAULT_PROBE_WINDOW = 100_000
KINDS = ("exponential", "polynomial", "logarithmic", "custom")


def _as_index(n) -> np.ndarray:
    return np.asarray(n, dtype=np.float64)


@dataclass(frozen=True)
class GrowthRate:
    """A strictly increasing divergent sequence ``mu_n`` with ``mu_{n+1} <= eta * mu_n``.

    ``eta`` is exact for the presets and measured on ``[0, probe_window]`` for
    custom rates.
    """

    kind: str
    params: tuple[float, ...]
    eta: float
    probe_window: int
    _log_mu: Callable[[np.ndarray], np.ndarray] = field(repr=False, compare=False)
    _log_mu_prime: Callable[[np.ndarray], np.ndarray] | None = field(
        default=None, repr=False, compare=False
    )
    _log_ratio: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = field(
        default=None, repr=False, compare=False
    )

    def log_mu(self, n):
        return self._log_mu(_as_index(n))

    def mu(self, n):
        return np.exp(self.log_mu(n))

    def log_mu_prime(self, n):
        n = _as_index(n)
        if self._log_mu_prime is not None:
            return self._log_mu_prime(n)
        a = self._log_mu(n)
        return a + np.log(np.expm1(self._log_mu(n + 1) - a))

    def mu_prime(self, n):
        return np.exp(self.log_mu_prime(n))

    def log_phi(self, n):
        return self.log_mu(n) - self.log_mu_prime(n)

    def phi(self, n):
        return np.exp(self.log_phi(n))

    def log_ratio(self, n0, n1):
        """``log(mu_{n1} / mu_{n0})``."""
        n0, n1 = _as_index(n0), _as_index(n1)
        if self._log_ratio is not None:
            return self._log_ratio(n0, n1)
        return self._log_mu(n1) - self._log_mu(n0)

    def ratio(self, n0, n1):
        return np.exp(self.log_ratio(n0, n1))

    @property
    def log_eta(self) -> float:
        return math.log(self.eta)

    def describe(self) -> dict:
        return {"kind": self.kind, "params": list(self.params), "eta": self.eta,
                "probe_window": self.probe_window}


def _round_up(x: float, digits: int = 9) -> float:
    scale = 10.0 ** digits
    return math.ceil(x * scale) / scale


def _check_window(rate: GrowthRate, window: int) -> None:
    n = np.arange(window + 1, dtype=np.float64)
    steps = rate.log_ratio(n[:-1], n[1:])
    if not np.all(np.isfinite(rate.log_mu(n))):
        raise InvalidRate(f"{rate.kind}: mu_n must be finite and positive on [0, {window}]")
    if not np.all(steps > 0):
        bad = int(np.argmax(~(steps > 0)))
        raise InvalidRate(f"{rate.kind}: not strictly increasing at n={bad}")
    if np.max(steps) > rate.log_eta + REL_TOL:
        bad = int(np.argmax(steps))
        raise InvalidRate(f"{rate.kind}: mu_{{n+1}}/mu_n exceeds eta={rate.eta} at n={bad}")


def make_rate(kind: str, params: Sequence[float] = (), *, mu: Callable | None = None,
              probe_window: int | None = None) -> GrowthRate:
    """Build a validated growth rate.

    exponential(base=e)        mu_n = base**n
    polynomial(offset=1)       mu_n = n + offset
    logarithmic(offset=2)      mu_n = log(n + offset); offset 2 keeps mu_0 > 0
    custom(p, offset=1)        mu_n = (n + offset)**p, or any callable passed as ``mu``
    """
    params = tuple(float(p) for p in params)
    if kind == "exponential":
        base = params[0] if params else math.e
        if not base > 1:
            raise InvalidRate("exponential rate needs base > 1")
        lb = math.log(base)
        rate = GrowthRate(
            kind, (base,), base, probe_window or DEFAULT_PROBE_WINDOW,
            _log_mu=lambda n: n * lb,
            _log_mu_prime=lambda n: n * lb + math.log(base - 1.0),
            _log_ratio=lambda a, b: (b - a) * lb,
        )
    elif kind == "polynomial":
        c = params[0] if params else 1.0
        if not c > 0:
            raise InvalidRate("polynomial rate needs offset > 0")
        rate = GrowthRate(
            kind, (c,), (c + 1.0) / c, probe_window or DEFAULT_PROBE_WINDOW,
            _log_mu=lambda n: np.log(n + c),
            _log_mu_prime=lambda n: np.zeros_like(n),
            _log_ratio=lambda a, b: np.log1p((b - a) / (a + c)),
        )
    elif kind == "logarithmic":
        c = params[0] if params else 2.0
        if not c > 1:
            raise InvalidRate("logarithmic rate needs offset > 1 so that mu_0 > 0")
        rate = GrowthRate(
            kind, (c,), math.log(c + 1.0) / math.log(c), probe_window or DEFAULT_PROBE_WINDOW,
            _log_mu=lambda n: np.log(np.log(n + c)),
            _log_mu_prime=lambda n: np.log(np.log1p(1.0 / (n + c))),
            _log_ratio=lambda a, b: np.log1p(np.log1p((b - a) / (a + c)) / np.log(a + c)),
        )
    elif kind == "custom":
        window = probe_window or DEFAULT_PROBE_WINDOW
        if mu is None:
            if not params:
                raise InvalidRate("custom rate needs either a callable or params [p, offset]")
            p = params[0]
            c = params[1] if len(params) > 1 else 1.0
            if not (p > 0 and c > 0):
                raise InvalidRate("custom power rate needs p > 0 and offset > 0")
            log_mu = lambda n: p * np.log(n + c)  # noqa: E731
        else:
            log_mu = lambda n: np.log(np.asarray(mu(n), dtype=np.float64))  # noqa: E731
        n = np.arange(window + 1, dtype=np.float64)
        steps = np.diff(log_mu(n))
        if not np.all(np.isfinite(steps)) or np.any(steps <= 0):
            raise InvalidRate("custom rate is not strictly increasing on its probe window")
        eta = _round_up(math.exp(float(np.max(steps))))
        rate = GrowthRate(kind, params, eta, window, _log_mu=log_mu)
    else:
        raise InvalidRate(f"unknown rate kind {kind!r}; expected one of {KINDS}")
    _check_window(rate, min(rate.probe_window, 20_000))
    return rate


def mu_prime(rate: GrowthRate, n: int) -> float:
    if n < 0:
        raise DomainError("n must be >= 0")
    return float(rate.mu_prime(n))


def phi(rate: GrowthRate, n: int) -> float:
    if n < 0:
        raise DomainError("n must be >= 0")
    return float(rate.phi(n))


@dataclass(frozen=True)
class LemmaResult:
    alpha: float
    s: int
    r: int
    log_sum: float
    log_lower: float
    log_upper: float
    holds: bool

    @property
    def sum(self) -> float:
        return math.exp(self.log_sum) if self.log_sum < 709 else math.inf

    @property
    def lower(self) -> float:
        return math.exp(self.log_lower) if self.log_lower < 709 else math.inf

    @property
    def upper(self) -> float:
        return math.exp(self.log_upper) if self.log_upper < 709 else math.inf


def _log_bounds(rate: GrowthRate, alpha: float, s, r):
    """Log of the lower bound; the upper bound adds ``alpha * log(eta)`` for alpha != 1
    and ``log(eta)`` for alpha == 1."""
    top = rate.log_mu(np.asarray(r) + 1)
    bottom = rate.log_mu(s)
    gap = rate.log_ratio(s, np.asarray(r) + 1)
    if alpha == 1.0:
        log_lower = np.log(gap)
        return log_lower, log_lower + rate.log_eta
    beta = 1.0 - alpha
    if beta > 0:
        log_lower = beta * top + np.log(-np.expm1(-beta * gap)) - math.log(beta)
    else:
        log_lower = beta * bottom + np.log(-np.expm1(beta * gap)) - math.log(-beta)
    return log_lower, log_lower + alpha * rate.log_eta


def _holds(log_sum, log_lower, log_upper):
    slack = math.log1p(REL_TOL)
    return (log_lower <= log_sum + slack) & (log_sum <= log_upper + slack)


def lemma_sum(rate: GrowthRate, alpha: float, s: int, r: int) -> LemmaResult:
    """Compare ``sum_{k=s}^{r} mu_k^{-alpha} mu'_k`` with its two-sided closed-form bounds."""
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    if s <= 1 or r < s:
        raise DomainError(f"need r >= s > 1, got s={s}, r={r}")
    k = np.arange(s, r + 1, dtype=np.float64)
    log_sum = float(logsumexp(-alpha * rate.log_mu(k) + rate.log_mu_prime(k)))
    lo, hi = _log_bounds(rate, alpha, s, r)
    lo, hi = float(lo), float(hi)
    return LemmaResult(alpha, s, r, log_sum, lo, hi, bool(_holds(log_sum, lo, hi)))


def lemma_grid(rate: GrowthRate, alphas: Sequence[float], s_values: Sequence[int],
               r_values: Sequence[int]) -> list[LemmaResult]:
    """Evaluate the estimate on every ``(alpha, s, r)`` with ``r >= s`` in one pass per ``s``."""
    r_values = np.unique(np.asarray(r_values, dtype=np.int64))
    r_max = int(r_values.max())
    k_all = np.arange(0, r_max + 1, dtype=np.float64)
    log_mu = rate.log_mu(k_all)
    log_mu_prime = rate.log_mu_prime(k_all)
    out = []
    for alpha in alphas:
        alpha = float(alpha)
        if not alpha > 0:
            raise DomainError("alpha must be positive")
        terms = -alpha * log_mu + log_mu_prime
        for s in s_values:
            if s <= 1:
                raise DomainError("s must exceed 1")
            rs = np.unique(np.concatenate(([s], r_values[r_values >= s])))
            partial = np.logaddexp.accumulate(terms[s:])
            sums = partial[rs - s]
            lo, hi = _log_bounds(rate, alpha, s, rs)
            ok = _holds(sums, lo, hi)
            for i, r in enumerate(rs):
                out.append(LemmaResult(alpha, int(s), int(r), float(sums[i]), float(lo[i]),
                                       float(hi[i]), bool(ok[i])))
    return out


@dataclass(frozen=True)
class MinimalGrowthWitness:
    q: np.ndarray
    L1: float
    L2: float

    def __post_init__(self):
        if not (self.L1 > 1 and self.L2 >= self.L1):
            raise DomainError("witness needs L2 >= L1 > 1")

    @property
    def horizon(self) -> int:
        return len(self.q) - 1


def find_minimal_growth(rate: GrowthRate, target_ratio: float = 2.0, horizon: int = 256,
                        search_bound: int = 10**9) -> MinimalGrowthWitness:
    """Smallest ``q_n >= n+1`` with ``mu_{q_n} / mu_n >= target_ratio`` for ``n <= horizon``."""
    if not target_ratio > 1:
        raise DomainError("target_ratio must exceed 1")
    n = np.arange(horizon + 1, dtype=np.int64)

    def reached(q):
        return rate.ratio(n, q) >= target_ratio

    hi = n + 1
    while True:
        ok = reached(hi)
        if ok.all():
            break
        if np.any(hi[~ok] > search_bound):
            raise HorizonExceeded(
                f"no q_n <= {search_bound} reaches ratio {target_ratio} for some n <= {horizon}")
        hi = np.where(ok, hi, n + 2 * (hi - n))
    lo = n  # invariant: ratio(lo) < target (lo == n gives ratio 1), ratio(hi) >= target
    while np.any(hi - lo > 1):
        mid = (lo + hi) // 2
        ok = reached(mid)
        active = hi - lo > 1
        hi = np.where(active & ok, mid, hi)
        lo = np.where(active & ~ok, mid, lo)
    ratios = rate.ratio(n, hi)
    return MinimalGrowthWitness(q=hi, L1=float(target_ratio), L2=float(np.max(ratios)))
