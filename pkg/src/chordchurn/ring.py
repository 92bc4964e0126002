"""Key-space arithmetic and the internode-interval distribution.

Nodes join and leave independently and uniformly, so the gap between two
adjacent nodes on a ring of ``K`` keys holding ``N`` nodes is geometric with
emptiness density ``rho = (K - N) / K``.  Everything downstream (the lookup
recursions, the steady-state solvers) consumes the three probabilities defined
here: the gap law ``P(x)``, the occupancy ``a(x)`` and the conditional
first-node law ``bc(i, x)``.

Powers ``rho**x`` are evaluated as ``exp(x * log1p(-N/K))`` so that ``x`` up to
``2**20`` with ``rho`` within ``1e-3`` of one neither underflows nor
accumulates multiplication error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "DomainError",
    "RingParams",
    "interval_pdf",
    "at_least_one",
    "first_node_conditional",
    "ring_distance",
]


class DomainError(ValueError):
    """An argument lies outside the domain of the requested quantity."""


def _integer_log(value: int, base: int) -> int | None:
    """Return ``e`` with ``base**e == value`` or None."""
    e, acc = 0, 1
    while acc < value:
        acc *= base
        e += 1
    return e if acc == value else None


@dataclass(frozen=True)
class RingParams:
    """Static description of a Chord ring.

    ``keyspace_size`` must be a power of ``base``.  The emptiness density and
    the finger count are derived, never stored, so they cannot drift out of
    sync with the key-space size and population.
    """

    keyspace_size: int
    population: int
    base: int = 2

    def __post_init__(self) -> None:
        if self.base < 2:
            raise DomainError(f"base must be >= 2, got {self.base}")
        if self.keyspace_size < 2:
            raise DomainError(f"keyspace_size must be >= 2, got {self.keyspace_size}")
        if not 1 <= self.population <= self.keyspace_size:
            raise DomainError(
                f"population must lie in [1, {self.keyspace_size}], got {self.population}"
            )
        if _integer_log(self.keyspace_size, self.base) is None:
            raise DomainError(
                f"keyspace_size {self.keyspace_size} is not a power of base {self.base}"
            )

    @classmethod
    def from_bits(cls, bits: int, population: int, base: int = 2) -> "RingParams":
        return cls(2**bits, population, base)

    @property
    def digits(self) -> int:
        """Number of base-``b`` digits of a key, ``log_b K``."""
        return _integer_log(self.keyspace_size, self.base)

    @property
    def density(self) -> float:
        return (self.keyspace_size - self.population) / self.keyspace_size

    @property
    def occupancy(self) -> float:
        """``1 - rho``, computed exactly as ``N / K``."""
        return self.population / self.keyspace_size

    @property
    def log_density(self) -> float:
        return math.log1p(-self.occupancy) if self.population < self.keyspace_size else -math.inf

    @property
    def finger_count(self) -> int:
        return (self.base - 1) * self.digits

    @cached_property
    def finger_offsets(self) -> tuple[int, ...]:
        """Finger starts relative to the owning node, in increasing order.

        Base 2 gives ``1, 2, 4, ...``; base ``b`` gives ``q * b**l`` for
        ``q = 1..b-1`` and every digit position ``l``.
        """
        out = []
        span = 1
        for _ in range(self.digits):
            out.extend(q * span for q in range(1, self.base))
            span *= self.base
        return tuple(out)

    def rho_pow(self, x):
        """``rho**x`` for scalar or array ``x >= 0``."""
        x = np.asarray(x, dtype=float)
        if self.population == self.keyspace_size:
            out = np.where(x == 0, 1.0, 0.0)
        else:
            out = np.exp(x * self.log_density)
        return out if out.ndim else float(out)

    def one_minus_rho_pow(self, x):
        """``1 - rho**x`` without cancellation when ``rho`` is near one."""
        x = np.asarray(x, dtype=float)
        if self.population == self.keyspace_size:
            out = np.where(x == 0, 0.0, 1.0)
        else:
            out = -np.expm1(x * self.log_density)
        return out if out.ndim else float(out)


def ring_distance(a: int, b: int, keyspace_size: int) -> int:
    """Clockwise distance from key ``a`` to key ``b``."""
    return (b - a) % keyspace_size


def interval_pdf(x: int, p: RingParams) -> float:
    """Probability that two adjacent nodes are ``x`` keys apart."""
    if x < 1:
        raise DomainError(f"gap length must be >= 1, got {x}")
    return p.rho_pow(x - 1) * p.occupancy


def at_least_one(x: int, p: RingParams) -> float:
    """Probability ``a(x) = 1 - rho**x`` that an interval of ``x`` keys holds a node."""
    if x < 0:
        raise DomainError(f"interval length must be >= 0, got {x}")
    return p.one_minus_rho_pow(x)


def first_node_conditional(i: int, x: int, p: RingParams) -> float:
    """``bc(i, x)``: first node sits ``i`` keys in, given the ``x``-key interval is occupied."""
    if x < 1:
        raise DomainError("conditioning on an empty interval (x=0)")
    if not 0 <= i < x:
        raise DomainError(f"offset {i} outside [0, {x - 1}]")
    return p.rho_pow(i) * p.occupancy / p.one_minus_rho_pow(x)
