from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from riskgrad import risk
from riskgrad.critic import QuantileSample
from riskgrad.errors import ContractError
from riskgrad.risk import EmpiricalDistribution as ED

values_st = st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=30)
eta_st = st.floats(0.01, 1.0)


def exact_cvar(values, counts, eta: Fraction) -> Fraction:
    """Rational-arithmetic lower-tail integral of the inverse CDF, divided by eta."""
    total = sum(counts)
    pairs = sorted(zip(values, counts))
    acc, lo = Fraction(0), Fraction(0)
    for v, c in pairs:
        hi = lo + Fraction(c, total)
        take = max(Fraction(0), min(hi, eta) - lo)
        acc += Fraction(v) * take
        lo = hi
    return acc / eta


def test_cvar_distort_examples():
    assert risk.cvar_distort(0.6, 0.5) == pytest.approx(0.3)
    assert risk.cvar_distort(0.0, 0.3) == 0.0
    taus = np.linspace(0, 1, 7)
    assert np.array_equal(risk.cvar_distort(taus, 1.0), taus)


def test_cvar_one_to_ten():
    d = ED(np.arange(1, 11))
    assert risk.cvar_value(d, 0.5) == pytest.approx(3.0, abs=1e-12)
    assert risk.cvar_value(d, 1.0) == pytest.approx(5.5, abs=1e-12)


def test_cvar_point_mass():
    for eta in (0.05, 0.5, 1.0):
        assert risk.cvar_value(ED([4.2]), eta) == pytest.approx(4.2, abs=1e-12)


@pytest.mark.parametrize("eta", [0.0, -0.1, 1.5])
def test_eta_range(eta):
    with pytest.raises(ContractError):
        risk.cvar_value(ED([1.0, 2.0]), eta)


def test_quantile_at_two_point():
    d = ED([0.0, 10.0], [0.5, 0.5])
    assert risk.quantile_at(d, 0.25) == 0.0
    assert risk.quantile_at(d, 0.75) == 10.0
    assert risk.quantile_at(d, 0.5) == 0.0  # cumulative weight reaches 0.5 at 0
    assert risk.quantile_at(ED([-3.0]), 0.9) == -3.0


def test_empty_distribution():
    with pytest.raises(ContractError):
        ED([])
    with pytest.raises(ContractError):
        risk.iqr([])


def test_iqr_examples():
    assert risk.iqr(ED([0.0, 10.0])) == 10.0
    assert risk.iqr(ED([7.0])) == 0.0
    assert risk.iqr(ED(np.arange(1, 101))) == 50.0


def test_iqr_accepts_quantile_sample():
    qs = QuantileSample(np.array([0.1, 0.5, 0.9]), np.array([3.0, 1.0, 2.0]))
    assert risk.iqr(qs) == 2.0


@given(values_st, st.floats(0.001, 1.0))
def test_quantile_matches_numpy_inverted_cdf(values, tau):
    n = len(values)
    # stay off the cumulative grid where round-off decides ties
    assume(all(abs(tau - k / n) > 1e-9 for k in range(n + 1)))
    ref = np.quantile(np.asarray(values), tau, method="inverted_cdf")
    assert risk.quantile_at(ED(values), tau) == ref


@given(values_st, st.lists(st.integers(1, 9), min_size=30, max_size=30), st.integers(1, 100))
def test_cvar_matches_rational_oracle(values, counts, eta_pct):
    counts = counts[: len(values)]
    w = np.array(counts, dtype=np.float64) / sum(counts)
    eta = Fraction(eta_pct, 100)
    got = risk.cvar_value(ED(values, w), float(eta))
    ref = float(exact_cvar(values, counts, eta))
    assert got == pytest.approx(ref, rel=1e-9, abs=1e-9)


@given(values_st, eta_st, eta_st)
def test_cvar_monotone_in_eta(values, a, b):
    lo, hi = sorted((a, b))
    d = ED(values)
    assert risk.cvar_value(d, lo) <= risk.cvar_value(d, hi) + 1e-9


@given(values_st)
def test_cvar_one_is_mean(values):
    d = ED(values)
    assert risk.cvar_value(d, 1.0) == pytest.approx(d.mean(), rel=1e-12, abs=1e-9)


@given(values_st, eta_st, st.floats(-50, 50), st.floats(0.1, 10))
def test_cvar_translation_and_scale(values, eta, c, lam):
    d = ED(values)
    base = risk.cvar_value(d, eta)
    assert risk.cvar_value(d.shifted(c), eta) == pytest.approx(base + c, rel=1e-9, abs=1e-8)
    assert risk.cvar_value(d.scaled(lam), eta) == pytest.approx(lam * base, rel=1e-9, abs=1e-8)


@given(values_st, st.floats(-50, 50), st.floats(0.1, 10))
def test_iqr_translation_invariant_scale_linear(values, c, lam):
    d = ED(values)
    base = risk.iqr(d)
    assert base >= 0
    assert risk.iqr(d.shifted(c)) == pytest.approx(base, abs=1e-9)
    assert risk.iqr(d.scaled(lam)) == pytest.approx(lam * base, rel=1e-9, abs=1e-9)


@given(values_st, st.lists(st.floats(0.001, 1.0), min_size=2, max_size=10))
def test_quantile_nondecreasing(values, taus):
    taus = np.sort(taus)
    q = risk.quantile_at(ED(values), taus)
    assert np.all(np.diff(q) >= 0)


def test_sampled_cvar_one_within_three_standard_errors():
    rng = np.random.default_rng(11)
    qf = lambda t: np.exp(t) + 3 * t  # increasing quantile function with known mean e - 1 + 1.5
    n = 20000
    est = risk.cvar_value(qf, 1.0, n=n, rng=rng)
    sd = np.std(qf(np.random.default_rng(12).uniform(size=n)))
    assert abs(est - (np.e - 1 + 1.5)) < 3 * sd / np.sqrt(n)


def test_sampled_cvar_is_reproducible():
    qf = lambda t: t**2
    a = risk.cvar_value(qf, 0.5, n=64, rng=np.random.default_rng(5))
    b = risk.cvar_value(qf, 0.5, n=64, rng=np.random.default_rng(5))
    assert a == b


def test_distorted_identity_is_mean():
    d = ED(np.arange(1, 11))
    est = risk.distorted_value(d, lambda t: t, 40000, np.random.default_rng(0))
    assert est == pytest.approx(5.5, abs=0.05)


def test_distorted_cvar_beta_matches_exact_cvar():
    d = ED(np.arange(1, 11))
    est = risk.distorted_value(d, risk.cvar_beta(0.5), 40000, np.random.default_rng(1))
    # sd of F^-1(U[0, .5]) on {1..5} is sqrt(2); 40000 draws give se ~ 0.007
    assert est == pytest.approx(risk.cvar_value(d, 0.5), abs=0.03)


def test_distorted_constant_is_median():
    d = ED([5.0, 1.0, 9.0, 2.0, 7.0])
    est = risk.distorted_value(d, lambda t: np.full_like(t, 0.5), 100, np.random.default_rng(2))
    assert est == risk.quantile_at(d, 0.5) == 5.0


def test_distorted_rejects_bad_beta():
    with pytest.raises(ContractError):
        risk.distorted_value(ED([1.0, 2.0]), lambda t: t + 1.0, 10, np.random.default_rng(0))


def test_wang_zero_is_identity():
    taus = np.linspace(0.05, 0.95, 5)
    assert np.allclose(risk.wang_beta(0.0)(taus), taus)


@settings(max_examples=40)
@given(st.lists(st.lists(st.floats(-10, 10, allow_nan=False), min_size=4, max_size=4), min_size=1, max_size=5),
       eta_st)
def test_cvar_rows_agree_with_single(rows, eta):
    arr = np.array(rows)
    batch = risk.cvar_from_sorted_rows(arr, eta)
    for r, b in zip(arr, batch):
        assert b == pytest.approx(risk.cvar_value(ED(r), eta), rel=1e-12, abs=1e-12)


def test_weights_validated():
    with pytest.raises(ContractError):
        ED([1.0, 2.0], [0.5, 0.6])
    with pytest.raises(ContractError):
        ED([1.0, 2.0], [1.5, -0.5])
