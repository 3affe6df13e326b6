import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pmpsched.analytics import (
    erlang_blocking,
    leader_block_single,
    leader_block_striped_coded_bounds,
    leader_block_striped_uncoded,
)


def erlang_direct(rho, N):
    """Ratio of the last term to the full truncated Poisson sum, 50 digits."""
    with mpmath.workdps(50):
        rho = mpmath.mpf(rho)
        terms = [rho**i / mpmath.factorial(i) for i in range(N + 1)]
        return float(terms[-1] / mpmath.fsum(terms))


def test_erlang_examples():
    assert erlang_blocking(1.0, 1, 1) == pytest.approx(0.5, abs=1e-15)
    assert erlang_blocking(0.5, 2, 1) == pytest.approx(0.5, abs=1e-15)
    assert erlang_blocking(1.0, 2, 2) == pytest.approx(0.4, abs=1e-15)


def test_erlang_large_buffer_matches_direct_sum():
    got = erlang_blocking(0.9, 100, 128)
    assert 0 < got < 1
    assert got == pytest.approx(erlang_direct(90, 128), abs=1e-12)


def test_erlang_grid_matches_direct_sum():
    worst = 0.0
    for rho in (0.01, 0.5, 3.0, 17.5, 60.0, 90.0, 150.0, 200.0):
        for N in (1, 2, 5, 16, 64, 128, 256):
            worst = max(worst, abs(erlang_blocking(rho, 1, N) - erlang_direct(rho, N)))
    assert worst < 1e-12


def test_erlang_zero_load_and_bad_input():
    assert erlang_blocking(0.0, 10, 3) == 0.0
    with pytest.raises(ValueError):
        erlang_blocking(-0.1, 10, 3)
    with pytest.raises(ValueError):
        erlang_blocking(0.1, 10, 0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 5.0), st.integers(1, 100), st.integers(1, 60))
def test_erlang_monotone(lam, T, N):
    b = erlang_blocking(lam, T, N)
    assert 0 < b < 1
    assert erlang_blocking(lam * 1.01, T, N) > b
    assert erlang_blocking(lam, T, N + 1) < b


def test_leader_single_examples():
    for mode in ("coded", "uncoded"):
        assert leader_block_single(0.0, 2, 4, 1, mode) == 0.0
        assert leader_block_single(1.0, 2, 4, 3, mode) == 1.0
    assert leader_block_single(0.5, 2, 4, 2, "coded") == pytest.approx(1 / 64)
    assert leader_block_single(0.5, 2, 4, 2, "uncoded") == pytest.approx(1 / 16)


def test_leader_single_bad_input():
    with pytest.raises(ValueError):
        leader_block_single(0.5, 2, 4, 4, "coded")
    with pytest.raises(ValueError):
        leader_block_single(0.5, 2, 4, 1, "hybrid")


def test_striped_uncoded_examples():
    assert leader_block_striped_uncoded(0.3, 2, 4, 0) == pytest.approx(0.3**8)
    assert leader_block_striped_uncoded(0.5, 2, 4, 3) == pytest.approx(0.25)
    assert leader_block_striped_uncoded(0.5, 2, 4, 1) == pytest.approx(0.5**6)
    with pytest.raises(ValueError):
        leader_block_striped_uncoded(0.5, 2, 4, 4)


def test_striped_coded_examples():
    lo, hi = leader_block_striped_coded_bounds(0.7, 2, 4, 8, 0)
    assert lo == hi == pytest.approx(0.7**8)
    lo, hi = leader_block_striped_coded_bounds(0.5, 2, 4, 8, 5)
    assert hi == pytest.approx(1 / 64)
    assert lo == pytest.approx(1 / 256)
    lo, _ = leader_block_striped_coded_bounds(0.5, 1, 4, 8, 7)
    assert lo == pytest.approx(0.5**1)
    with pytest.raises(ValueError):
        leader_block_striped_coded_bounds(0.5, 2, 3, 8, 1)


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1), st.integers(1, 4), st.integers(1, 12), st.data())
def test_coded_single_never_worse_than_uncoded(pbd, W, T, data):
    r = data.draw(st.integers(0, T - 1))
    c = leader_block_single(pbd, W, T, r, "coded")
    u = leader_block_single(pbd, W, T, r, "uncoded")
    assert c <= u
    if 0.01 < pbd < 0.99 and W > 1 and r > 0:
        assert c < u


@settings(max_examples=300, deadline=None)
@given(st.floats(0, 1), st.integers(1, 4), st.integers(1, 6), st.integers(1, 5), st.data())
def test_bounds_ordered(pbd, W, s, per, data):
    T = s * per
    r = data.draw(st.integers(0, T - 1))
    lo, hi = leader_block_striped_coded_bounds(pbd, W, s, T, r)
    assert 0 <= lo <= hi <= 1


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 1), st.integers(1, 4), st.integers(1, 10), st.data())
def test_striped_uncoded_reduces_to_single_layout(pbd, W, T, data):
    r = data.draw(st.integers(0, T - 1))
    assert leader_block_striped_uncoded(pbd, W, T, r) == leader_block_single(pbd, W, T, r, "uncoded")
