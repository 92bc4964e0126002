import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chordchurn.ring import (
    DomainError,
    RingParams,
    at_least_one,
    first_node_conditional,
    interval_pdf,
    ring_distance,
)


def test_derived_quantities():
    p = RingParams.from_bits(20, 1000)
    assert p.keyspace_size == 2**20
    assert p.digits == 20
    assert p.finger_count == 20
    assert p.density == pytest.approx((2**20 - 1000) / 2**20, rel=1e-15)
    assert p.finger_offsets[:4] == (1, 2, 4, 8)
    q = RingParams(4**3, 10, base=4)
    assert q.finger_count == 9
    assert q.finger_offsets == (1, 2, 3, 4, 8, 12, 16, 32, 48)


@pytest.mark.parametrize(
    "kw",
    [
        dict(keyspace_size=1000, population=10),  # not a power of 2
        dict(keyspace_size=1024, population=0),
        dict(keyspace_size=1024, population=2000),
        dict(keyspace_size=1024, population=10, base=1),
        dict(keyspace_size=1024, population=10, base=16),  # 1024 is not a power of 16
    ],
)
def test_invalid_params(kw):
    with pytest.raises(DomainError):
        RingParams(**kw)


def test_gap_law_matches_sampled_rings():
    # sample rings with N distinct random ids; gaps must follow rho**(x-1) (1-rho)
    rng = np.random.default_rng(7)
    K, N = 2**12, 64
    p = RingParams(K, N)
    gaps = []
    for _ in range(400):
        ids = np.sort(rng.choice(K, N, replace=False))
        gaps.append(np.diff(np.append(ids, ids[0] + K)))
    gaps = np.concatenate(gaps)
    for x in (1, 5, 20, 60):
        emp = np.mean(gaps == x)
        se = math.sqrt(interval_pdf(x, p) / gaps.size)
        assert abs(emp - interval_pdf(x, p)) < 5 * se + 2e-4


def test_full_ring_limits():
    p = RingParams(1024, 1024)
    assert p.density == 0.0
    assert interval_pdf(1, p) == 1.0
    assert interval_pdf(2, p) == 0.0
    assert at_least_one(1, p) == 1.0
    assert at_least_one(0, p) == 0.0
    assert first_node_conditional(0, 8, p) == 1.0


def test_domain_errors():
    p = RingParams(1024, 10)
    with pytest.raises(DomainError):
        interval_pdf(0, p)
    with pytest.raises(DomainError):
        first_node_conditional(0, 0, p)
    with pytest.raises(DomainError):
        first_node_conditional(5, 5, p)


def test_ring_distance_wraps():
    assert ring_distance(10, 3, 16) == 9
    assert ring_distance(3, 10, 16) == 7
    assert ring_distance(5, 5, 16) == 0


@settings(max_examples=200, deadline=None)
@given(
    bits=st.integers(4, 20),
    frac=st.floats(1e-4, 1.0),
    x=st.integers(1, 5000),
)
def test_conditional_first_node_normalises(bits, frac, x):
    K = 2**bits
    p = RingParams(K, max(1, int(frac * K)))
    x = min(x, K)
    total = math.fsum(first_node_conditional(i, x, p) for i in range(x))
    assert total == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(bits=st.integers(4, 24), frac=st.floats(1e-5, 0.999), x=st.integers(0, 10**6))
def test_occupancy_monotone_and_stable(bits, frac, x):
    K = 2**bits
    p = RingParams(K, max(1, int(frac * K)))
    a0, a1 = at_least_one(x, p), at_least_one(x + 1, p)
    assert 0.0 <= a0 <= a1 <= 1.0
    # expm1 route agrees with the naive one where the latter is accurate
    if p.density < 0.9:
        assert a0 == pytest.approx(1.0 - p.density**x, abs=1e-12)
