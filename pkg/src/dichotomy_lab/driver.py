"""Invertible driving systems and the skew shift ``(ell, omega) -> (ell + 1, theta omega)``.

States are plain hashable values (ints or tuples) so that orbit points can be
dictionary keys and cache keys. Every driver is exactly invertible: rotations
use integer arithmetic modulo ``2**bits`` and the Bernoulli shift reads a
pre-materialised two-sided symbol window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Hashable

import numpy as np

from .errors import DriverError, NegativeTime, WindowExceeded

DEFAULT_WINDOW = 2048
DRIVER_KINDS = ("cyclic", "irrational_rotation", "bernoulli_window")


@dataclass(frozen=True)
class Driver:
    """A bijection ``theta`` of a representable state space.

    ``params`` per kind:
      cyclic               (period,)
      irrational_rotation  (angle, bits)
      bernoulli_window     (seed, radius)
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind == "cyclic":
            if len(self.params) != 1 or int(self.params[0]) < 1:
                raise DriverError("cyclic driver needs a period >= 1")
        elif self.kind == "irrational_rotation":
            if len(self.params) != 2 or not 2 <= int(self.params[1]) <= 62:
                raise DriverError("irrational_rotation needs (angle, 2 <= bits <= 62)")
        elif self.kind == "bernoulli_window":
            if len(self.params) != 2 or int(self.params[1]) < 1:
                raise DriverError("bernoulli_window needs (seed, radius >= 1)")
        else:
            raise DriverError(f"unknown driver kind {self.kind!r}; expected one of {DRIVER_KINDS}")

    @property
    def _modulus(self) -> int:
        return 1 << int(self.params[1])

    @property
    def _step(self) -> int:
        angle, bits = self.params
        a = round(float(angle) * (1 << int(bits))) % (1 << int(bits))
        return a | 1  # odd step: a generator of Z / 2^bits

    @property
    def radius(self) -> int:
        return int(self.params[1])

    def theta(self, omega: Hashable, n: int = 1):
        """Apply ``theta**n`` for any integer ``n``."""
        if self.kind == "cyclic":
            return (omega + n) % int(self.params[0])
        if self.kind == "irrational_rotation":
            return (omega + n * self._step) % self._modulus
        seq, offset = omega
        moved = offset + n
        if abs(moved) > self.radius:
            raise WindowExceeded(
                f"shift to offset {moved} leaves the materialised window of radius {self.radius}")
        return (seq, moved)

    def orbit_states(self, omega, length: int) -> list:
        """``[theta^t omega for t = 0..length]`` without building points."""
        if self.kind == "cyclic":
            period = int(self.params[0])
            return [(omega + t) % period for t in range(length + 1)]
        if self.kind == "irrational_rotation":
            step, mod = self._step, self._modulus
            return [(omega + t * step) % mod for t in range(length + 1)]
        seq, offset = omega
        if abs(offset + length) > self.radius:
            raise WindowExceeded(
                f"shift to offset {offset + length} leaves the materialised window of radius {self.radius}")
        return [(seq, offset + t) for t in range(length + 1)]

    def encode(self, omega) -> str:
        if self.kind == "cyclic":
            return f"cyc:{omega}"
        if self.kind == "irrational_rotation":
            return f"rot:{omega}"
        return f"bw:{omega[0]}:{omega[1]}"

    def decode(self, text: str):
        tag, _, rest = text.partition(":")
        if self.kind == "cyclic" and tag == "cyc":
            return int(rest)
        if self.kind == "irrational_rotation" and tag == "rot":
            return int(rest)
        if self.kind == "bernoulli_window" and tag == "bw":
            seq, offset = rest.split(":")
            return (int(seq), int(offset))
        raise DriverError(f"cannot decode {text!r} for a {self.kind} driver")

    def symbols(self, seq: int) -> np.ndarray:
        """The +-1 symbol sequence of ``seq`` on offsets ``-radius..radius``."""
        if self.kind != "bernoulli_window":
            raise DriverError("only bernoulli_window drivers carry symbols")
        return _symbols(int(self.params[0]), int(seq), self.radius)

    def symbol(self, omega) -> int:
        seq, offset = omega
        if abs(offset) > self.radius:
            raise WindowExceeded(f"offset {offset} outside radius {self.radius}")
        return int(self.symbols(seq)[offset + self.radius])

    def circle_position(self, omega) -> float:
        """Position in [0, 1) of a rotation state."""
        return omega / self._modulus


@lru_cache(maxsize=256)
def _symbols(seed: int, seq: int, radius: int) -> np.ndarray:
    rng = np.random.default_rng([seed, seq])
    out = rng.choice(np.array([-1, 1], dtype=np.int8), size=2 * radius + 1)
    out.setflags(write=False)
    return out


def make_driver(kind: str, params=()) -> Driver:
    params = tuple(params)
    if kind == "cyclic":
        params = (int(params[0]) if params else 17,)
    elif kind == "irrational_rotation":
        angle = float(params[0]) if params else (math.sqrt(5) - 1) / 2
        bits = int(params[1]) if len(params) > 1 else 52
        params = (angle, bits)
    elif kind == "bernoulli_window":
        seed = int(params[0]) if params else 0
        radius = int(params[1]) if len(params) > 1 else DEFAULT_WINDOW
        params = (seed, radius)
    return Driver(kind, params)


@dataclass(frozen=True)
class OrbitPoint:
    """A point ``(ell, omega)`` of the extended phase space, bound to its driver."""

    ell: int
    omega: Hashable
    driver: Driver

    def __post_init__(self):
        if self.ell < 0:
            raise NegativeTime(f"ell must be >= 0, got {self.ell}")

    @property
    def key(self) -> str:
        return f"{self.ell}|{self.driver.encode(self.omega)}"

    @property
    def base_state(self):
        """``theta^{-ell} omega``: the state this point's forward orbit started from."""
        return self.driver.theta(self.omega, -self.ell)

    @property
    def orbit_class(self) -> str:
        """Key of every Theta-forward invariant quantity."""
        return self.driver.encode(self.base_state)

    def shifted(self, n: int) -> "OrbitPoint":
        return shift(self, n)


def shift(p: OrbitPoint, n: int) -> OrbitPoint:
    """``Theta^n p = (ell + n, theta^n omega)``; negative ``n`` allowed down to ``ell = 0``."""
    if p.ell + n < 0:
        raise NegativeTime(f"cannot shift ell={p.ell} by {n}")
    return OrbitPoint(p.ell + n, p.driver.theta(p.omega, n), p.driver)


def sample_orbits(d: Driver, count: int, seed: int) -> list[OrbitPoint]:
    """``count`` distinct base points at ``ell = 0``, reproducible from ``seed``."""
    if count < 1:
        raise DriverError("count must be >= 1")
    rng = np.random.default_rng(seed)
    if d.kind == "cyclic":
        period = int(d.params[0])
        if count > period:
            raise DriverError(f"cannot draw {count} distinct states from period {period}")
        states = [int(s) for s in rng.permutation(period)[:count]]
    elif d.kind == "irrational_rotation":
        states, seen = [], set()
        while len(states) < count:
            s = int(rng.integers(0, d._modulus))
            if s not in seen:
                seen.add(s)
                states.append(s)
    else:
        ids = rng.choice(2**31, size=count, replace=False)
        states = [(int(i), 0) for i in ids]
    return [OrbitPoint(0, s, d) for s in states]
