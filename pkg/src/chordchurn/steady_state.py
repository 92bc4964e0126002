"""Steady-state dead-finger and wrong-successor fractions under churn.

Rates are expressed relative to the per-node failure rate, so the only churn
parameter is ``r = lambda_s / lambda_f``.  Joins balance failures on average.

Periodic stabilisation splits the maintenance budget between the first
successor (fraction ``beta``) and uniformly chosen fingers (fraction
``1 - beta``).  Correction-on-change keeps every node in state S1 until a
successor stabilisation exposes a wrong first successor, after which it sits in
S2 and sends ``M`` correction lookups at rate ``c * lambda_s`` while still
stabilising its successor at rate ``a * lambda_s``.  The S1/S2 occupation and
the two wrong-successor fractions solve three coupled balance equations::

    P1 (1 + alpha r w1)               = 1 + c r P2M
    (3 + alpha r) w1 P1 + (3 + a r) w1' P2 = 2
    w1' (3 + a r + c r P2M/P2) + (w1 - w1') P1 = 2

with ``P2 = 1 - P1`` and ``P2M/P2 = 1 - (1 - g**(M-1)) / (1 - g**M)``,
``g = c r / (1 + c r + a r w1')``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, Union

import numpy as np
from numpy.polynomial import Polynomial
from scipy.optimize import brentq, root

from .lookup import FingerDeathProfile
from .ring import DomainError, RingParams

__all__ = [
    "Periodic",
    "CorrectionOnChange",
    "MaintenanceConfig",
    "SteadyState",
    "SolverError",
    "periodic_death_fraction",
    "solve_coc",
    "coc_death_fraction",
    "coc_equation_residuals",
    "estimate_churn",
    "death_profile",
    "representative_f",
]

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """The steady-state system has no admissible solution or did not converge."""

    def __init__(self, message: str, candidates=None, residual: float | None = None):
        super().__init__(message)
        self.candidates = candidates
        self.residual = residual


@dataclass(frozen=True)
class Periodic:
    beta: float = 0.5

    def __post_init__(self) -> None:
        if not 0.0 <= self.beta <= 1.0:
            raise DomainError(f"beta must lie in [0, 1], got {self.beta}")


@dataclass(frozen=True)
class CorrectionOnChange:
    alpha: float = 1.0
    a: float = 0.0
    c: float = 1.0

    def __post_init__(self) -> None:
        if min(self.alpha, self.a, self.c) < 0:
            raise DomainError("alpha, a and c must be non-negative")

    @property
    def fair(self) -> bool:
        """Same per-node budget as periodic stabilisation: alpha=1, a+c=1."""
        return math.isclose(self.alpha, 1.0) and math.isclose(self.a + self.c, 1.0)


Strategy = Union[Periodic, CorrectionOnChange]


@dataclass(frozen=True)
class MaintenanceConfig:
    strategy: Strategy
    r: float

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise DomainError(f"r must be positive, got {self.r}")

    @classmethod
    def periodic(cls, r: float, beta: float = 0.5) -> "MaintenanceConfig":
        return cls(Periodic(beta), r)

    @classmethod
    def correction_on_change(
        cls, r: float, a: float = 0.0, c: float = 1.0, alpha: float = 1.0
    ) -> "MaintenanceConfig":
        return cls(CorrectionOnChange(alpha, a, c), r)

    def with_r(self, r: float) -> "MaintenanceConfig":
        return MaintenanceConfig(self.strategy, r)

    @property
    def name(self) -> str:
        return "periodic" if isinstance(self.strategy, Periodic) else "coc"


@dataclass(frozen=True)
class SteadyState:
    """Solved correction-on-change steady state.

    ``P_S2[i-1]`` is the probability of being in S2 with ``i - 1`` correction
    messages already sent; it decays geometrically with ratio ``g1``.
    """

    w1: float
    w1_prime: float
    P_S1: float
    P_S2: np.ndarray
    g1: float
    residual: float
    mode: str

    @property
    def P_S2_total(self) -> float:
        return 1.0 - self.P_S1

    @property
    def wrong_fraction(self) -> float:
        """Fraction of all nodes with a wrong first successor."""
        return self.w1 * self.P_S1 + self.w1_prime * self.P_S2_total


def periodic_death_fraction(cfg: MaintenanceConfig, p: RingParams) -> FingerDeathProfile:
    """First-order dead-finger fractions for periodic stabilisation.

    A live entry dies when its node fails (rate 1 in failure units); a dead
    entry is refreshed when maintenance picks it, at rate ``(1-beta) r / M``
    for fingers and ``beta r`` for the first successor.
    """
    if not isinstance(cfg.strategy, Periodic):
        raise DomainError("periodic_death_fraction needs a Periodic config")
    M = p.finger_count
    beta = cfg.strategy.beta
    finger_repair = (1.0 - beta) * cfg.r
    f = M / (M + finger_repair)
    first = 1.0 / (1.0 + beta * cfg.r)
    return FingerDeathProfile.uniform(f, M, first=first)


def _last_stage_ratio(g: float, M: int) -> float:
    """``P2M / P2 = 1 - (1 - g**(M-1)) / (1 - g**M)``, stable for g near 1."""
    if g <= 0.0:
        return 1.0 if M == 1 else 0.0
    lg = math.log(g)
    return 1.0 - math.expm1((M - 1) * lg) / math.expm1(M * lg)


def _last_stage_ratio_first_order(v: float, r: float, a: float, c: float, M: int) -> float:
    return 1.0 / M - (M - 1) / (2.0 * M) * (1.0 + a * r * v) / (c * r)


def _ratio(g: float, M: int, v: float, r: float, s: CorrectionOnChange, mode: str) -> float:
    if mode == "first_order":
        return _last_stage_ratio_first_order(v, r, s.a, s.c, M)
    return _last_stage_ratio(g, M)


def coc_equation_residuals(
    P_S1: float, w1: float, w1p: float, cfg: MaintenanceConfig, p: RingParams, mode: str = "exact"
) -> np.ndarray:
    """Residuals of the three balance equations at a candidate point."""
    s, r, M = cfg.strategy, cfg.r, p.finger_count
    g = s.c * r / (1.0 + s.c * r + s.a * r * w1p)
    q = _ratio(g, M, w1p, r, s, mode)
    P2 = 1.0 - P_S1
    return np.array(
        [
            P_S1 * (1.0 + s.alpha * r * w1) - (1.0 + s.c * r * q * P2),
            (3.0 + s.alpha * r) * w1 * P_S1 + (3.0 + s.a * r) * w1p * P2 - 2.0,
            w1p * (3.0 + s.a * r + s.c * r * q) + (w1 - w1p) * P_S1 - 2.0,
        ]
    )


def _fixed_point(
    cfg: MaintenanceConfig,
    M: int,
    mode: str,
    damping: float,
    tol: float,
    max_iter: int,
) -> tuple[float, float, float]:
    s, r = cfg.strategy, cfg.r
    w = 2.0 / (3.0 + r)
    x, u, v = 1.0, w, w
    step = math.inf
    for _ in range(max_iter):
        g = s.c * r / (1.0 + s.c * r + s.a * r * v)
        Q = s.c * r * _ratio(g, M, v, r, s, mode)
        x_new = (1.0 + Q) / (1.0 + s.alpha * r * u + Q)
        u_new = (2.0 - (3.0 + s.a * r) * v * (1.0 - x_new)) / ((3.0 + s.alpha * r) * x_new)
        v_new = (2.0 - u_new * x_new) / (3.0 + s.a * r + Q - x_new)
        step = max(abs(x_new - x), abs(u_new - u), abs(v_new - v))
        x += damping * (x_new - x)
        u += damping * (u_new - u)
        v += damping * (v_new - v)
        if step < tol:
            return x, u, v
    raise SolverError(f"fixed point did not converge in {max_iter} iterations", residual=step)


def _first_order_roots(cfg: MaintenanceConfig, M: int) -> list[tuple[float, float, float]]:
    """All real candidate (P_S1, w1, w1') from the reduced polynomial in w1'.

    With the last-stage ratio linear in ``w1'``, the first and third balance
    equations give ``P_S1 = num/den`` with ``num`` quadratic and ``den`` linear
    in ``w1'``; clearing ``den`` in the second equation leaves a cubic.
    """
    s, r = cfg.strategy, cfg.r
    al, a, c = s.alpha, s.a, s.c
    v = Polynomial([0.0, 1.0])
    Q = Polynomial([c * r / M - (M - 1) / (2.0 * M), -(M - 1) * a * r / (2.0 * M)])
    num = 1.0 + Q - 2.0 * al * r + al * r * v * (3.0 + a * r + Q)
    den = 1.0 + Q + al * r * v
    poly = (
        (3.0 + al * r) * ((2.0 - v * (3.0 + a * r + Q)) * den + v * num)
        + (3.0 + a * r) * v * (den - num)
        - 2.0 * den
    )
    out = []
    for root in poly.trim().roots():
        if abs(root.imag) > 1e-9 * max(1.0, abs(root.real)):
            continue
        vr = float(root.real)
        d = den(vr)
        if d == 0.0:
            continue
        x = num(vr) / d
        if x == 0.0:
            continue
        u = (2.0 - vr * (3.0 + a * r + Q(vr)) + vr * x) / x
        out.append((x, u, vr))
    return out


def _admissible(x: float, u: float, v: float, slack: float = 1e-9) -> bool:
    return all(-slack <= z <= 1.0 + slack for z in (x, u, v))


def solve_coc(
    cfg: MaintenanceConfig,
    p: RingParams,
    mode: Literal["exact", "first_order"] = "exact",
    damping: float = 0.5,
    tol: float = 1e-12,
    max_iter: int = 100_000,
) -> SteadyState:
    """Solve the correction-on-change balance equations.

    ``mode="exact"`` runs a damped fixed-point iteration on the full system,
    started from the periodic limit ``w1 = w1' = 2/(3+r)``, ``P_S1 = 1``, and
    polishes the result with a Newton-type root finder.
    ``mode="first_order"`` replaces the last-stage ratio by its expansion to
    first order in ``1/r`` and solves the resulting polynomial in ``w1'``,
    keeping the single root with every probability in ``[0, 1]``.
    """
    if not isinstance(cfg.strategy, CorrectionOnChange):
        raise DomainError("solve_coc needs a CorrectionOnChange config")
    s, r, M = cfg.strategy, cfg.r, p.finger_count
    if mode == "exact":
        x, u, v = _fixed_point(cfg, M, mode, damping, tol, max_iter)
        # the step tolerance bounds the iterate, not the residual, which carries
        # factors of r; a few Newton steps bring the residual down to rounding
        polish = root(
            lambda z: coc_equation_residuals(z[0], z[1], z[2], cfg, p, mode), [x, u, v], tol=1e-15
        )
        # hybr flags "no further improvement" as failure even when it has
        # converged to rounding, so judge the polish by its residual alone
        if _admissible(*polish.x) and np.max(np.abs(polish.fun)) <= np.max(
            np.abs(coc_equation_residuals(x, u, v, cfg, p, mode))
        ):
            x, u, v = (float(z) for z in polish.x)
    elif mode == "first_order":
        if s.c == 0:
            raise DomainError("first-order expansion divides by c r; needs c > 0")
        candidates = _first_order_roots(cfg, M)
        good = [z for z in candidates if _admissible(*z)]
        if len(good) != 1:
            raise SolverError(
                f"expected one admissible root, found {len(good)}", candidates=candidates
            )
        x, u, v = good[0]
    else:
        raise DomainError(f"unknown mode {mode!r}")

    residual = float(np.max(np.abs(coc_equation_residuals(x, u, v, cfg, p, mode))))
    if not _admissible(x, u, v):
        raise SolverError("solution left [0, 1]", candidates=[(x, u, v)], residual=residual)
    g = s.c * r / (1.0 + s.c * r + s.a * r * v)
    P2 = 1.0 - x
    powers = g ** np.arange(M)
    # normalise the geometric ladder to the total S2 mass
    P_S2 = P2 * powers / powers.sum() if P2 > 0 else np.zeros(M)
    return SteadyState(u, v, x, P_S2, g, residual, mode)


def coc_death_fraction(ss: SteadyState, cfg: MaintenanceConfig, p: RingParams) -> FingerDeathProfile:
    """First-order dead-finger fraction under correction-on-change.

    Gain: a live finger's node fails (rate 1).  Loss: a correction message
    reaches the entry, at rate ``c r (f/M) (1 - w1') A`` with
    ``A = 1 - (w1 P_S1 + w1' P_S2)``.  Join-copy gains and multi-death terms
    are second order and left out.
    """
    if not isinstance(cfg.strategy, CorrectionOnChange):
        raise DomainError("coc_death_fraction needs a CorrectionOnChange config")
    M = p.finger_count
    repair = cfg.strategy.c * cfg.r * (1.0 - ss.w1_prime) * (1.0 - ss.wrong_fraction)
    return FingerDeathProfile.uniform(M / (M + repair), M)


def death_profile(cfg: MaintenanceConfig, p: RingParams) -> FingerDeathProfile:
    """Dead-finger profile for either strategy."""
    if isinstance(cfg.strategy, Periodic):
        return periodic_death_fraction(cfg, p)
    return coc_death_fraction(solve_coc(cfg, p), cfg, p)


def representative_f(cfg: MaintenanceConfig, p: RingParams) -> float:
    """The single finger-death fraction used in the quadratic scaling form."""
    prof = death_profile(cfg, p)
    return prof.at(2) if len(prof) > 1 else prof.at(1)


def estimate_churn(
    L_observed: float,
    A: float,
    cfg_shape: MaintenanceConfig,
    p: RingParams,
    order: Literal["linear", "quadratic"] = "linear",
) -> float:
    """Infer ``r`` from an observed average lookup length.

    ``f`` comes from ``L = A (1 + f)`` (``order="linear"``) or
    ``L = A (1 + f + 3 f**2)`` (``order="quadratic"``); ``r`` then inverts the
    strategy's death-fraction formula.  Only the strategy in ``cfg_shape`` is
    used, its ``r`` is ignored.  Returns ``math.inf`` when no churn is visible.
    """
    if L_observed < A:
        logger.warning("observed length %.6g below churn-free %.6g; no churn detectable", L_observed, A)
        return math.inf
    excess = (L_observed - A) / A
    if order == "linear":
        f = excess
    elif order == "quadratic":
        f = (-1.0 + math.sqrt(1.0 + 12.0 * excess)) / 6.0
    else:
        raise DomainError(f"unknown order {order!r}")
    if f == 0.0:
        return math.inf
    if f >= 1.0:
        raise DomainError(f"inferred dead-finger fraction {f:.4g} >= 1")
    M = p.finger_count
    s = cfg_shape.strategy
    if isinstance(s, Periodic):
        if s.beta >= 1.0:
            raise DomainError("beta = 1 never repairs fingers; r is not identifiable")
        return M * (1.0 - f) / ((1.0 - s.beta) * f)

    def gap(r: float) -> float:
        return representative_f(cfg_shape.with_r(r), p) - f

    lo, hi = 1e-3, 1.0
    if gap(lo) < 0:
        raise DomainError(f"f={f:.4g} exceeds the strategy's dead fraction even at r={lo}")
    while gap(hi) > 0:
        hi *= 2.0
        if hi > 1e9:
            raise DomainError(f"f={f:.4g} not reached for any r <= 1e9")
    return brentq(gap, lo, hi, xtol=1e-10, rtol=1e-12)
