import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chordchurn.lookup import scaling_form, solve_nochurn
from chordchurn.ring import DomainError, RingParams
from chordchurn.steady_state import (
    MaintenanceConfig,
    SolverError,
    SteadyState,
    coc_death_fraction,
    coc_equation_residuals,
    death_profile,
    estimate_churn,
    periodic_death_fraction,
    representative_f,
    solve_coc,
)

P = RingParams.from_bits(20, 1000)


def test_periodic_formula_and_limits():
    prof = periodic_death_fraction(MaintenanceConfig.periodic(200, 0.5), P)
    assert prof.at(2) == pytest.approx(20 / (20 + 100))
    assert prof.at(1) == pytest.approx(1 / (1 + 100))
    assert periodic_death_fraction(MaintenanceConfig.periodic(1e12, 0.5), P).at(5) < 1e-10
    assert periodic_death_fraction(MaintenanceConfig.periodic(200, 1.0), P).at(5) == 1.0


def test_config_validation():
    with pytest.raises(DomainError):
        MaintenanceConfig.periodic(0.0)
    with pytest.raises(DomainError):
        MaintenanceConfig.periodic(10, beta=1.2)
    with pytest.raises(DomainError):
        MaintenanceConfig.correction_on_change(10, a=-0.1)
    with pytest.raises(DomainError):
        periodic_death_fraction(MaintenanceConfig.correction_on_change(10), P)
    with pytest.raises(DomainError):
        solve_coc(MaintenanceConfig.periodic(10), P)
    assert MaintenanceConfig.correction_on_change(10, 0.2, 0.8).strategy.fair
    assert not MaintenanceConfig.correction_on_change(10, 0.2, 1.0).strategy.fair


@pytest.mark.parametrize("r", [1.0, 10.0, 200.0, 5000.0])
def test_no_messages_reduces_to_periodic_successor(r):
    cfg = MaintenanceConfig.correction_on_change(r, a=1.0, c=0.0, alpha=1.0)
    ss = solve_coc(cfg, P)
    w = 2.0 / (3.0 + r)
    assert ss.w1 == pytest.approx(w, abs=1e-9)
    assert ss.w1_prime == pytest.approx(w, abs=1e-9)
    assert coc_death_fraction(ss, cfg, P).at(3) == 1.0


@pytest.mark.parametrize("a", [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
@pytest.mark.parametrize("r", [5.0, 50.0, 200.0, 1000.0])
def test_exact_mode_residuals_and_normalisation(a, r):
    cfg = MaintenanceConfig.correction_on_change(r, a, 1.0 - a)
    ss = solve_coc(cfg, P)
    res = coc_equation_residuals(ss.P_S1, ss.w1, ss.w1_prime, cfg, P)
    assert np.max(np.abs(res)) < 1e-10
    assert ss.residual < 1e-10
    assert ss.P_S1 + ss.P_S2.sum() == pytest.approx(1.0, abs=1e-12)
    for v in (ss.w1, ss.w1_prime, ss.P_S1, *ss.P_S2):
        assert 0.0 <= v <= 1.0
    ratios = ss.P_S2[1:-1] / ss.P_S2[:-2]
    assert np.allclose(ratios, ss.g1, rtol=0, atol=1e-12)
    assert ss.g1 == pytest.approx((1 - a) * r / (1 + (1 - a) * r + a * r * ss.w1_prime), abs=1e-15)


def test_infinite_maintenance_limit():
    prev = None
    for r in (1e3, 1e5, 1e7):
        cfg = MaintenanceConfig.correction_on_change(r, 0.2, 0.8)
        ss = solve_coc(cfg, P)
        assert ss.residual < 1e-9
        if prev:
            assert ss.w1 < prev.w1 and ss.w1_prime < prev.w1_prime
        prev = ss
    assert prev.w1 < 1e-6 and prev.w1_prime < 1e-5


def test_first_order_mode_single_admissible_root():
    for r in (100.0, 200.0, 400.0, 800.0):
        cfg = MaintenanceConfig.correction_on_change(r, 0.0, 1.0)
        ss = solve_coc(cfg, P, mode="first_order")
        assert ss.residual < 1e-10
        assert ss.mode == "first_order"


def test_mode_agreement_scales_as_inverse_square():
    rs = (100.0, 200.0, 400.0, 800.0)
    diffs = []
    for r in rs:
        cfg = MaintenanceConfig.correction_on_change(r, 0.0, 1.0)
        diffs.append(abs(solve_coc(cfg, P).w1_prime - solve_coc(cfg, P, mode="first_order").w1_prime))
    C = diffs[0] * rs[0] ** 2  # fitted on the coarsest point
    for r, d in zip(rs, diffs):
        assert d <= C / r**2 * (1 + 1e-9)
    # and the bound is not vacuous: the first-order error really shrinks
    assert diffs[-1] < diffs[0] / 10


def test_first_order_needs_messages():
    with pytest.raises(DomainError):
        solve_coc(MaintenanceConfig.correction_on_change(100, 1.0, 0.0), P, mode="first_order")
    with pytest.raises(DomainError):
        solve_coc(MaintenanceConfig.correction_on_change(100), P, mode="quartic")


def test_non_convergence_carries_residual():
    with pytest.raises(SolverError) as exc:
        solve_coc(MaintenanceConfig.correction_on_change(50, 0.0, 1.0), P, max_iter=3)
    assert exc.value.residual is not None and exc.value.residual > 0


def test_coc_death_fraction_limits():
    cfg = MaintenanceConfig.correction_on_change(200, 0.0, 1.0)
    perfect = SteadyState(0.0, 0.0, 1.0, np.zeros(20), 0.0, 0.0, "exact")
    assert coc_death_fraction(perfect, cfg, P).at(7) == pytest.approx(20 / (20 + 200))
    with pytest.raises(DomainError):
        coc_death_fraction(perfect, MaintenanceConfig.periodic(200), P)


@pytest.mark.parametrize("make", [
    lambda r: MaintenanceConfig.periodic(r, 0.5),
    lambda r: MaintenanceConfig.correction_on_change(r, 0.0, 1.0),
    lambda r: MaintenanceConfig.correction_on_change(r, 0.2, 0.8),
])
def test_monotone_in_r(make):
    rs = [5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0]
    fs = [representative_f(make(r), P) for r in rs]
    assert all(b <= a for a, b in zip(fs, fs[1:]))
    if make(1.0).name == "coc":
        ws = [solve_coc(make(r), P) for r in rs]
        assert all(b.w1 <= a.w1 and b.w1_prime <= a.w1_prime for a, b in zip(ws, ws[1:]))


def test_death_profile_dispatch():
    assert death_profile(MaintenanceConfig.periodic(100, 0.5), P).at(3) == pytest.approx(20 / 70)
    cfg = MaintenanceConfig.correction_on_change(100, 0.2, 0.8)
    assert death_profile(cfg, P).at(3) == coc_death_fraction(solve_coc(cfg, P), cfg, P).at(3)


A = solve_nochurn(P).average


def test_estimate_churn_sentinels(caplog):
    cfg = MaintenanceConfig.periodic(1.0, 0.5)
    assert estimate_churn(A, A, cfg, P) == math.inf
    with caplog.at_level(logging.WARNING):
        assert estimate_churn(A - 0.1, A, cfg, P) == math.inf
    assert "below churn-free" in caplog.text
    with pytest.raises(DomainError):
        estimate_churn(2.5 * A, A, cfg, P)
    with pytest.raises(DomainError):
        estimate_churn(1.1 * A, A, cfg, P, order="cubic")


@settings(max_examples=40, deadline=None)
@given(r=st.floats(30.0, 3000.0), beta=st.floats(0.05, 0.9))
def test_periodic_round_trip(r, beta):
    cfg = MaintenanceConfig.periodic(r, beta)
    f = representative_f(cfg, P)
    L = scaling_form(A, f)
    assert estimate_churn(L, A, cfg, P, order="quadratic") == pytest.approx(r, rel=1e-2)
    # the linear inverse reads the 3 f^2 excess as extra churn: r is underestimated
    if L < 2 * A:
        assert estimate_churn(L, A, cfg, P, order="linear") < r


def test_periodic_round_trip_example():
    cfg = MaintenanceConfig.periodic(150, 0.5)
    L = scaling_form(A, representative_f(cfg, P))
    assert estimate_churn(L, A, cfg, P, order="quadratic") == pytest.approx(150, rel=1e-2)


@pytest.mark.parametrize("a", [0.0, 0.2])
def test_coc_round_trip(a):
    cfg = MaintenanceConfig.correction_on_change(150, a, 1 - a)
    L = scaling_form(A, representative_f(cfg, P))
    assert estimate_churn(L, A, cfg, P, order="quadratic") == pytest.approx(150, rel=1e-2)


def test_strategy_crossover():
    rs = [5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 500.0, 1000.0]
    per = [scaling_form(5.846, representative_f(MaintenanceConfig.periodic(r, 0.4), P)) for r in rs]
    coc = [scaling_form(5.846, representative_f(MaintenanceConfig.correction_on_change(r, 0.0, 1.0), P)) for r in rs]
    assert coc[0] > per[0]
    assert coc[-1] < per[-1]
