"""Distortion risk measures over empirical and network-backed quantile functions."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .errors import ContractError

QuantileFn = Callable[[np.ndarray], np.ndarray]

_CUM_TOL = 1e-12


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Sorted support points with probability weights (uniform by default)."""

    values: np.ndarray
    weights: np.ndarray

    def __init__(self, values, weights=None, *, presorted: bool = False):
        v = np.asarray(values, dtype=np.float64).reshape(-1)
        if v.size == 0:
            raise ContractError("empty distribution")
        w = np.full(v.size, 1.0 / v.size) if weights is None else np.asarray(weights, dtype=np.float64).reshape(-1)
        if w.shape != v.shape:
            raise ContractError(f"{v.size} values but {w.size} weights")
        if np.any(w < 0):
            raise ContractError("negative weight")
        total = w.sum()
        if not np.isclose(total, 1.0, atol=1e-9):
            raise ContractError(f"weights sum to {total}, expected 1")
        if not presorted:
            order = np.argsort(v, kind="stable")
            v, w = v[order], w[order]
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w / total)

    @property
    def cumulative(self) -> np.ndarray:
        c = np.cumsum(self.weights)
        c[-1] = 1.0
        return c

    def mean(self) -> float:
        return float(np.dot(self.values, self.weights))

    def shifted(self, c: float) -> "EmpiricalDistribution":
        return EmpiricalDistribution(self.values + c, self.weights, presorted=True)

    def scaled(self, lam: float) -> "EmpiricalDistribution":
        if lam <= 0:
            raise ContractError("scale must be positive")
        return EmpiricalDistribution(self.values * lam, self.weights, presorted=True)


def as_distribution(q) -> EmpiricalDistribution:
    """Coerce a QuantileSample, EmpiricalDistribution or array of values."""
    if isinstance(q, EmpiricalDistribution):
        return q
    values = getattr(q, "values", q)
    return EmpiricalDistribution(values)


Distribution = Union[EmpiricalDistribution, QuantileFn]


def cvar_distort(tau, eta: float):
    """CVaR distortion: maps a fraction ``tau`` to ``eta * tau``."""
    _check_eta(eta)
    return eta * np.asarray(tau, dtype=np.float64) if np.ndim(tau) else eta * float(tau)


def quantile_at(d: EmpiricalDistribution, tau):
    """Left-continuous inverse CDF: smallest support value whose cumulative weight reaches ``tau``."""
    d = as_distribution(d)
    t = np.asarray(tau, dtype=np.float64)
    if np.any(t < 0) or np.any(t > 1):
        raise ContractError(f"fraction outside [0, 1]: {tau}")
    idx = np.searchsorted(d.cumulative, t - _CUM_TOL, side="left")
    out = d.values[np.minimum(idx, d.values.size - 1)]
    return float(out) if out.ndim == 0 else out


def _lower_integral(d: EmpiricalDistribution, eta: float) -> float:
    """Integral of the inverse CDF over [0, eta]."""
    c = d.cumulative
    lo = np.concatenate(([0.0], c[:-1]))
    overlap = np.clip(np.minimum(c, eta) - lo, 0.0, None)
    return float(np.dot(d.values, overlap))


def cvar_value(q, eta: float, n: int = 32, rng: np.random.Generator | None = None) -> float:
    """Mean of the lowest ``eta`` fraction of outcomes.

    Empirical inputs use the exact piecewise-constant integral. A callable
    quantile function is estimated from ``n`` fractions drawn from U([0, eta]).
    """
    _check_eta(eta)
    if callable(q) and not isinstance(q, EmpiricalDistribution):
        if n < 1:
            raise ContractError("n must be >= 1")
        rng = rng if rng is not None else np.random.default_rng()
        taus = rng.uniform(0.0, eta, size=n)
        return float(np.mean(q(taus)))
    d = as_distribution(q)
    return _lower_integral(d, eta) / eta


def cvar_from_sorted_rows(values: np.ndarray, eta: float) -> np.ndarray:
    """Exact CVaR of each row of equally weighted samples (rows need not be sorted)."""
    _check_eta(eta)
    v = np.sort(np.asarray(values, dtype=np.float64), axis=-1)
    n = v.shape[-1]
    edges = np.arange(n + 1) / n
    overlap = np.clip(np.minimum(edges[1:], eta) - edges[:-1], 0.0, None)
    return v @ overlap / eta


def iqr(q) -> float:
    """Interquartile range ``F^-1(0.75) - F^-1(0.25)`` of the sorted sample."""
    d = as_distribution(q)
    return float(quantile_at(d, 0.75) - quantile_at(d, 0.25))


def distorted_value(q, beta: Callable[[np.ndarray], np.ndarray], n: int, rng: np.random.Generator) -> float:
    """Monte-Carlo distorted expectation: mean of ``F^-1(beta(tau))`` with tau ~ U([0, 1])."""
    if n < 1:
        raise ContractError("n must be >= 1")
    taus = np.asarray(beta(rng.uniform(0.0, 1.0, size=n)), dtype=np.float64)
    if np.any(taus < 0) or np.any(taus > 1):
        raise ContractError("distortion produced a fraction outside [0, 1]")
    taus = np.broadcast_to(taus, (n,))
    if callable(q) and not isinstance(q, EmpiricalDistribution):
        return float(np.mean(q(taus)))
    d = as_distribution(q)
    # Fraction 0 has no inf-definition value; use the bottom atom.
    return float(np.mean(quantile_at(d, np.maximum(taus, 0.0))))


def cvar_beta(eta: float) -> Callable[[np.ndarray], np.ndarray]:
    _check_eta(eta)
    return lambda tau: eta * tau


def wang_beta(lam: float) -> Callable[[np.ndarray], np.ndarray]:
    """Wang distortion ``Phi(Phi^-1(tau) + lam)``; negative ``lam`` is risk-averse."""
    from scipy.stats import norm

    return lambda tau: norm.cdf(norm.ppf(np.clip(tau, 1e-12, 1 - 1e-12)) + lam)


def _check_eta(eta: float) -> None:
    if not (0.0 < eta <= 1.0):
        raise ContractError(f"risk level eta must lie in (0, 1], got {eta}")
