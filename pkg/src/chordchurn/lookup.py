"""Expected lookup cost on a Chord ring, with and without dead fingers.

``C[t]`` is the expected number of hops, timeouts included, for a node to
resolve a key ``t`` positions clockwise from it.  The churn-free recursion

    C[t] = rho * C[t-1] + (1 - rho) * (1 + C[t - xi(t)])

(``xi(t)`` being the offset of the finger start closest below ``t``) is linear
and first order inside each finger segment, so each segment is one IIR filter
pass.  The churn-aware recursion adds, for every finger ``k``, a dead branch that
falls back to finger ``k - i`` with probability ``h_k(i)``.  Its geometric
kernels ``rho**l (1 - rho)`` are handled through the running sum

    D[j] = rho * D[j-1] + (1 - rho) * C[j]

so that any truncated kernel sum ending at ``j`` with ``X`` terms equals
``D[j] - rho**X * D[j-X]``.  With the backup depth capped at ``max_depth`` the
newest index a target ``t`` in segment ``k`` references is ``t - xi / 2**depth``,
which lets a whole chunk of that length be evaluated as one numpy expression.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .ring import DomainError, RingParams

__all__ = [
    "CostTable",
    "FingerDeathProfile",
    "solve_nochurn",
    "nochurn_asymptotic",
    "nochurn_partial_sum_average",
    "backup_probabilities",
    "solve_with_churn",
    "scaling_form",
    "DEFAULT_BACKUP_DEPTH",
]

DEFAULT_BACKUP_DEPTH = 6


@dataclass(frozen=True)
class FingerDeathProfile:
    """Per-finger probability ``f_k`` that routing entry ``k`` points to a dead node.

    Stored zero-based (``values[k-1]`` is ``f_k``); use :meth:`at` for the
    one-based view that matches the finger numbering.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0:
            raise DomainError("death profile must be a non-empty 1-d sequence")
        if np.any(~np.isfinite(v)) or np.any(v < 0) or np.any(v > 1):
            raise DomainError("every f_k must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def uniform(cls, f: float, finger_count: int, first: float | None = None):
        v = np.full(finger_count, float(f))
        if first is not None:
            v[0] = first
        return cls(v)

    @classmethod
    def zeros(cls, finger_count: int):
        return cls(np.zeros(finger_count))

    def __len__(self) -> int:
        return self.values.size

    def at(self, k: int) -> float:
        if not 1 <= k <= self.values.size:
            raise DomainError(f"finger index {k} outside [1, {self.values.size}]")
        return float(self.values[k - 1])

    @property
    def mean(self) -> float:
        return float(self.values.mean())


@dataclass(frozen=True)
class CostTable:
    """Per-distance expected costs and their average.

    ``costs[t]`` holds ``C_t`` for ``t`` in ``[1, K-1]``; ``costs[0]`` is an
    unused zero so that the array is indexed by distance.
    """

    params: RingParams
    costs: np.ndarray = field(repr=False)
    average: float
    churn_free_A: float
    truncation_residual: float = 0.0

    def cost(self, t: int) -> float:
        if not 1 <= t < self.params.keyspace_size:
            raise DomainError(f"distance {t} outside [1, {self.params.keyspace_size - 1}]")
        return float(self.costs[t])


def _average(costs: np.ndarray, keyspace_size: int) -> float:
    # fsum: 2**20 uncompensated additions of O(10) values lose ~6 digits
    return math.fsum(costs[1:keyspace_size].tolist()) / keyspace_size


def _nochurn_costs(p: RingParams) -> np.ndarray:
    """C[0..K] for the churn-free recursion (C[K] kept for the partial-sum check)."""
    K, rho, eps = p.keyspace_size, p.density, p.occupancy
    C = np.zeros(K + 1)
    C[1] = 1.0
    span = 1
    for _ in range(p.digits):
        for q in range(1, p.base):
            xi = q * span
            lo, hi = xi + 1, xi + span
            forcing = eps * (1.0 + C[1 : hi - xi + 1])
            C[lo : hi + 1], _ = lfilter([1.0], [1.0, -rho], forcing, zi=[rho * C[xi]])
        span *= p.base
    return C


def solve_nochurn(p: RingParams) -> CostTable:
    """Churn-free expected lookup costs for any base."""
    C = _nochurn_costs(p)
    K = p.keyspace_size
    avg = _average(C, K)
    return CostTable(p, C[:K].copy(), avg, avg)


def nochurn_partial_sum_average(p: RingParams, costs: np.ndarray) -> float:
    """Average cost rebuilt from the digit-block partial sums.

    Block ``j`` collects ``C_t`` for ``b**(j-1) < t <= b**j``.  Summing the
    recursion over a block gives

        Delta_j = rho/(1-rho) (C[b**(j-1)] - C[b**j]) + B b**(j-1) + B sum_{i<j} Delta_i

    with ``B = b - 1``, so only ``C`` at powers of ``b`` (and at ``K-1``) are
    read.  This is an independent route to the value :func:`solve_nochurn`
    gets by summing every ``C_t``.
    """
    if p.population == p.keyspace_size:
        raise DomainError("partial-sum form divides by 1 - rho; needs rho > 0")
    K, b, rho, eps = p.keyspace_size, p.base, p.density, p.occupancy
    B = b - 1
    ratio = rho / eps
    # C_K from one more step of the recursion
    top_xi = B * b ** (p.digits - 1)
    c_k = rho * costs[K - 1] + eps * (1.0 + costs[K - top_xi])
    pow_cost = [float(costs[b**j]) for j in range(p.digits)] + [c_k]
    deltas = [pow_cost[0]]
    running = deltas[0]
    for j in range(1, p.digits + 1):
        d = ratio * (pow_cost[j - 1] - pow_cost[j]) + B * b ** (j - 1) + B * running
        deltas.append(d)
        running += d
    return (math.fsum(deltas) - c_k) / K


def nochurn_asymptotic(p: RingParams) -> float:
    """Closed-form churn-free average, ``1 + ((b-1)/b) log_b N``."""
    if p.population < 2:
        raise DomainError("asymptotic form needs N >= 2")
    b = p.base
    return 1.0 + (b - 1) / b * math.log2(p.population) / math.log2(b)


def backup_probabilities(k: int, f: FingerDeathProfile, p: RingParams) -> np.ndarray:
    """Probabilities ``h_k(1..k)`` of falling back from finger ``k`` to ``k - i``.

    Element ``i - 1`` of the result is ``h_k(i)``; the last element is the
    probability that no earlier finger is usable and the successor list must
    be used.  Finger ``k - s`` is usable when a node sits between its start and
    the next finger's start (otherwise both entries name the same node) and
    that node is alive.  Base 2 only.
    """
    if p.base != 2:
        raise DomainError("backup probabilities are defined for base 2")
    M = p.finger_count
    if not 1 <= k <= M:
        raise DomainError(f"finger index {k} outside [1, {M}]")
    if len(f) < k:
        raise DomainError(f"death profile has {len(f)} entries, need {k}")
    xi = 2 ** (k - 1)
    h = np.empty(k)
    carry = 1.0
    for i in range(1, k):
        occ = p.one_minus_rho_pow(xi >> i)
        fi = f.values[k - i - 1]
        h[i - 1] = occ * (1.0 - fi) * carry
        carry *= 1.0 - occ + occ * fi
    h[k - 1] = carry
    return h


def solve_with_churn(
    p: RingParams,
    f: FingerDeathProfile,
    max_depth: int = DEFAULT_BACKUP_DEPTH,
    churn_free: CostTable | None = None,
    backup_hop: str = "outside",
) -> CostTable:
    """Expected lookup costs when finger ``k`` is dead with probability ``f_k``.

    For a target ``t = xi + m`` past the start ``xi = 2**(k-1)`` of finger ``k``
    (``1 <= m <= xi``):

    * no node in ``[xi, t)``: the finger overshoots, cost ``C[xi]``;
    * live finger node ``i`` keys past ``xi``: one hop, then ``C[m - i]``;
    * dead finger node: one timeout, then the ``i``-th backup finger with
      probability ``h_k(i)``, costing ``1 + (i - 1) + C[xi_i - l + m]`` where
      ``xi_i = xi - xi/2**i`` and ``l`` is the backup node's offset from its
      start.

    The successor-list fallback (mass ``h_k(k)``) is left out.  Backup fingers
    deeper than ``max_depth`` are dropped too; the largest probability dropped
    that way (``f_k`` times the tail of ``h_k``) across fingers is returned as
    ``truncation_residual``.  ``C[1] = 1``.
    """
    if p.base != 2:
        raise DomainError("the churn recursion is written for base 2")
    M = p.finger_count
    if len(f) != M:
        raise DomainError(f"death profile has {len(f)} entries, ring has {M} fingers")
    if max_depth < 0:
        raise DomainError("max_depth must be >= 0")
    if backup_hop not in ("inside", "outside"):
        raise DomainError(f"backup_hop must be 'inside' or 'outside', got {backup_hop!r}")
    hop_out = 1.0 if backup_hop == "outside" else 0.0
    K, rho, eps = p.keyspace_size, p.density, p.occupancy

    C = np.zeros(K + 1)
    D = np.zeros(K + 1)
    C[1] = 1.0
    D[1] = eps
    residual = 0.0

    def d_at(j: np.ndarray) -> np.ndarray:
        return np.where(j >= 1, D[np.maximum(j, 0)], 0.0)

    for k in range(1, M + 1):
        xi = 2 ** (k - 1)
        h = backup_probabilities(k, f, p)
        depth = min(k - 1, max_depth)
        fk = f.values[k - 1]
        residual = max(residual, fk * float(h[depth : k - 1].sum()))
        spans = [xi >> i for i in range(1, depth + 1)]
        span_pow = [p.rho_pow(x) for x in spans]
        span_occ = [p.one_minus_rho_pow(x) for x in spans]
        chunk = xi >> depth
        for start in range(1, xi + 1, chunk):
            m = np.arange(start, min(start + chunk, xi + 1))
            t = xi + m
            if t[0] > K:
                break
            occ_m = p.one_minus_rho_pow(m)
            val = C[xi] * p.rho_pow(m) + (1.0 - fk) * (occ_m + D[m])
            if fk > 0.0:
                backup = np.zeros(m.size)
                for i, (x, xp, xo) in enumerate(zip(spans, span_pow, span_occ), start=1):
                    window = d_at(t - x) - xp * d_at(t - 2 * x)
                    backup += h[i - 1] * (i - hop_out + window / xo)
                val = val + fk * occ_m * (1.0 + hop_out + backup)
            C[t] = val
            D[t], _ = lfilter([eps], [1.0, -rho], val, zi=[rho * D[t[0] - 1]])

    if churn_free is None:
        churn_free = solve_nochurn(p)
    return CostTable(p, C[:K].copy(), _average(C, K), churn_free.average, residual)


def scaling_form(A: float, f: float) -> float:
    """Quadratic churn scaling ``A (1 + f + 3 f**2)``."""
    return A * (1.0 + f + 3.0 * f * f)
