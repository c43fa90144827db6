"""Exact ground truth for small problems.

Distributional dynamic programming on explicit finite MDPs over a fixed
categorical grid, 1-D Wasserstein distances between piecewise-constant
quantile functions, scalar policy iteration, and CVaR-optimal policy search.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from . import risk
from .envs import StepResult
from .errors import ContractError, ConvergenceError
from .risk import EmpiricalDistribution

PROB_TOL = 1e-12


@dataclass
class FiniteMdp:
    """Finite MDP with reward laws attached to transitions ``(s, a, s')``.

    Transitions are stored as edges; ``reward_values[e, k]`` occurs with
    probability ``reward_probs[e, k]`` when edge ``e`` is taken. Terminal
    states are absorbing with zero return.
    """

    n_states: int
    n_actions: int
    edge_s: np.ndarray
    edge_a: np.ndarray
    edge_next: np.ndarray
    edge_p: np.ndarray
    reward_values: np.ndarray
    reward_probs: np.ndarray
    terminal: np.ndarray
    gamma: float
    _lookup: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ContractError(f"discount must lie in [0, 1), got {self.gamma}")
        self.terminal = np.asarray(self.terminal, dtype=bool)
        sums = np.zeros((self.n_states, self.n_actions))
        np.add.at(sums, (self.edge_s, self.edge_a), self.edge_p)
        live = ~self.terminal
        bad = np.abs(sums[live] - 1.0) > PROB_TOL
        if np.any(bad):
            s, a = np.argwhere(bad)[0]
            raise ContractError(f"transition probabilities of state {np.flatnonzero(live)[s]}, action {a} sum to {sums[live][s, a]}")
        law_sums = self.reward_probs.sum(axis=1)
        if np.any(np.abs(law_sums - 1.0) > PROB_TOL):
            e = int(np.argmax(np.abs(law_sums - 1.0)))
            raise ContractError(f"reward law on edge {e} sums to {law_sums[e]}")
        self._lookup = {(int(s), int(a), int(n)): e for e, (s, a, n) in enumerate(zip(self.edge_s, self.edge_a, self.edge_next))}

    @classmethod
    def from_outcomes(
        cls,
        P: np.ndarray,
        outcomes: Mapping[tuple[int, int, int], Sequence[tuple[float, float]]],
        terminal,
        gamma: float,
    ) -> "FiniteMdp":
        """Build from a dense (S, A, S) tensor and a reward law per positive-probability transition."""
        P = np.asarray(P, dtype=np.float64)
        n_s, n_a, _ = P.shape
        terminal = np.asarray(terminal, dtype=bool)
        es, ea, en, ep, laws = [], [], [], [], []
        for s in range(n_s):
            if terminal[s]:
                continue
            for a in range(n_a):
                for s2 in np.flatnonzero(P[s, a] > 0):
                    es.append(s), ea.append(a), en.append(int(s2)), ep.append(P[s, a, s2])
                    laws.append(list(outcomes[(s, a, int(s2))]))
        k = max((len(l) for l in laws), default=1)
        vals = np.zeros((len(laws), k))
        probs = np.zeros((len(laws), k))
        for e, law in enumerate(laws):
            for j, (v, q) in enumerate(law):
                vals[e, j], probs[e, j] = v, q
        return cls(n_s, n_a, np.array(es, dtype=np.int64), np.array(ea, dtype=np.int64), np.array(en, dtype=np.int64),
                   np.array(ep), vals, probs, terminal, gamma)

    @classmethod
    def from_sa_laws(cls, P, laws: Sequence[Sequence[Sequence[tuple[float, float]]]], terminal, gamma: float) -> "FiniteMdp":
        """Build from reward laws that depend only on (s, a)."""
        P = np.asarray(P, dtype=np.float64)
        outcomes = {}
        for s, a, s2 in zip(*np.nonzero(P)):
            outcomes[(int(s), int(a), int(s2))] = laws[s][a]
        return cls.from_outcomes(P, outcomes, terminal, gamma)

    @property
    def P(self) -> np.ndarray:
        out = np.zeros((self.n_states, self.n_actions, self.n_states))
        np.add.at(out, (self.edge_s, self.edge_a, self.edge_next), self.edge_p)
        return out

    def expected_reward(self) -> np.ndarray:
        """Mean one-step reward r(s, a), shape (S, A)."""
        r = np.zeros((self.n_states, self.n_actions))
        mean_e = (self.reward_values * self.reward_probs).sum(axis=1)
        np.add.at(r, (self.edge_s, self.edge_a), self.edge_p * mean_e)
        return r

    def reward_range(self) -> tuple[float, float]:
        live = self.reward_probs > 0
        if not np.any(live):
            return 0.0, 0.0
        return float(self.reward_values[live].min()), float(self.reward_values[live].max())

    def sample_step(self, s: int, a: int, rng: np.random.Generator) -> StepResult:
        if self.terminal[s]:
            return StepResult(s, None, 0.0, True, {"events": 0, "task": 0.0, "penalty": 0.0, "terminal": True})
        row = self.P[s, a]
        s2 = int(min(np.searchsorted(np.cumsum(row), rng.random(), side="right"), self.n_states - 1))
        e = self._lookup[(s, a, s2)]
        k = int(min(np.searchsorted(np.cumsum(self.reward_probs[e]), rng.random(), side="right"), self.reward_probs.shape[1] - 1))
        r = float(self.reward_values[e, k])
        done = bool(self.terminal[s2])
        return StepResult(s2, None, r, done, {"events": 0, "task": r, "penalty": 0.0, "terminal": done})


def as_policy_matrix(policy, mdp: FiniteMdp) -> np.ndarray:
    """Accept a deterministic action table (S,) or a stochastic matrix (S, A)."""
    pol = np.asarray(policy)
    if pol.ndim == 1:
        out = np.zeros((mdp.n_states, mdp.n_actions))
        out[np.arange(mdp.n_states), pol.astype(np.int64)] = 1.0
        return out
    if pol.shape != (mdp.n_states, mdp.n_actions):
        raise ContractError(f"policy shape {pol.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})")
    return pol.astype(np.float64)


def uniform_policy(mdp: FiniteMdp) -> np.ndarray:
    return np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)


# ---------------------------------------------------------------- categorical distributions


@dataclass
class CategoricalDist:
    """Masses on an evenly spaced grid; ``probs`` may carry leading (per-state) axes."""

    vmin: float
    vmax: float
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.shape[-1] < 2 or not self.vmax > self.vmin:
            raise ContractError("grid needs at least two atoms and vmax > vmin")
        if np.any(self.probs < -1e-15) or np.any(np.abs(self.probs.sum(axis=-1) - 1.0) > 1e-10):
            raise ContractError("categorical masses must be nonnegative and sum to 1")

    @property
    def n_atoms(self) -> int:
        return self.probs.shape[-1]

    @property
    def atoms(self) -> np.ndarray:
        return np.linspace(self.vmin, self.vmax, self.n_atoms)

    @property
    def spacing(self) -> float:
        return (self.vmax - self.vmin) / (self.n_atoms - 1)

    def mean(self) -> np.ndarray:
        return self.probs @ self.atoms

    def __getitem__(self, idx) -> "CategoricalDist":
        return CategoricalDist(self.vmin, self.vmax, self.probs[idx])

    def to_empirical(self) -> EmpiricalDistribution:
        if self.probs.ndim != 1:
            raise ContractError("select a single state before converting")
        p = np.clip(self.probs, 0.0, None)
        return EmpiricalDistribution(self.atoms, p / p.sum(), presorted=True)

    @classmethod
    def point_mass(cls, value: float, vmin: float, vmax: float, n_atoms: int, leading: tuple[int, ...] = ()):
        probs = np.zeros((*leading, n_atoms))
        probs[..., :] = project(np.array([value]), np.array([1.0]), vmin, vmax, n_atoms)
        return cls(vmin, vmax, probs)


def project(values: np.ndarray, masses: np.ndarray, vmin: float, vmax: float, n_atoms: int) -> np.ndarray:
    """Linear-interpolation projection of weighted points onto the grid (mean preserving inside it)."""
    dz = (vmax - vmin) / (n_atoms - 1)
    b = (np.clip(values, vmin, vmax) - vmin) / dz
    lo = np.clip(np.floor(b).astype(np.int64), 0, n_atoms - 1)
    hi = np.minimum(lo + 1, n_atoms - 1)
    frac = b - lo
    out = np.zeros(n_atoms)
    np.add.at(out, lo, masses * (1.0 - frac))
    np.add.at(out, hi, masses * frac)
    return out


def _shift_matrix(v: float, gamma: float, vmin: float, vmax: float, n_atoms: int) -> tuple[sp.csr_matrix, bool]:
    atoms = np.linspace(vmin, vmax, n_atoms)
    target = v + gamma * atoms
    dz = (vmax - vmin) / (n_atoms - 1)
    overflow = (target < vmin - 1e-9 * dz) | (target > vmax + 1e-9 * dz)
    b = (np.clip(target, vmin, vmax) - vmin) / dz
    lo = np.clip(np.floor(b).astype(np.int64), 0, n_atoms - 1)
    hi = np.minimum(lo + 1, n_atoms - 1)
    frac = b - lo
    rows = np.concatenate((np.arange(n_atoms), np.arange(n_atoms)))
    cols = np.concatenate((lo, hi))
    data = np.concatenate((1.0 - frac, frac))
    return sp.csr_matrix((data, (rows, cols)), shape=(n_atoms, n_atoms)), overflow


class _Backup:
    """Precomputed sparse operators for repeated backups under one policy."""

    def __init__(self, mdp: FiniteMdp, policy: np.ndarray, vmin: float, vmax: float, n_atoms: int):
        pi = as_policy_matrix(policy, mdp)
        w_edge = pi[mdp.edge_s, mdp.edge_a] * mdp.edge_p
        vals = mdp.reward_values.reshape(-1)
        wts = (w_edge[:, None] * mdp.reward_probs).reshape(-1)
        rows = np.repeat(mdp.edge_s, mdp.reward_values.shape[1])
        cols = np.repeat(mdp.edge_next, mdp.reward_values.shape[1])
        keep = wts > 0
        vals, wts, rows, cols = vals[keep], wts[keep], rows[keep], cols[keep]
        self.terms = []
        for v in np.unique(vals):
            sel = vals == v
            mix = sp.csr_matrix((wts[sel], (rows[sel], cols[sel])), shape=(mdp.n_states, mdp.n_states))
            shift, overflow = _shift_matrix(float(v), mdp.gamma, vmin, vmax, n_atoms)
            used = np.asarray(mix.sum(axis=0)).reshape(-1) > 0
            self.terms.append((mix, shift, overflow, used))
        self.terminal = mdp.terminal
        self.zero = CategoricalDist.point_mass(0.0, vmin, vmax, n_atoms).probs
        self.vmin, self.vmax, self.n_atoms = vmin, vmax, n_atoms

    def __call__(self, probs: np.ndarray) -> tuple[np.ndarray, bool]:
        probs = probs.copy()
        probs[self.terminal] = self.zero
        out = np.zeros_like(probs)
        overflow = False
        for mix, shift, over, used in self.terms:
            moved = probs @ shift
            if over.any():
                overflow |= bool(np.any(probs[used][:, over] > 1e-12))
            out += mix @ moved
        out[self.terminal] = self.zero
        out = np.clip(out, 0.0, None)
        out /= out.sum(axis=1, keepdims=True)
        return out, overflow


def default_bounds(mdp: FiniteMdp) -> tuple[float, float]:
    lo, hi = mdp.reward_range()
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    vmin, vmax = lo / (1.0 - mdp.gamma), hi / (1.0 - mdp.gamma)
    if vmax - vmin < 1e-9:
        vmin, vmax = vmin - 1.0, vmax + 1.0
    return vmin, vmax


def distributional_bellman_backup(Z: CategoricalDist, policy, mdp: FiniteMdp) -> CategoricalDist:
    """One application of the distributional Bellman operator, projected onto Z's grid.

    Raises ContractError if mass would leave the grid.
    """
    op = _Backup(mdp, policy, Z.vmin, Z.vmax, Z.n_atoms)
    out, overflow = op(Z.probs)
    if overflow:
        raise ContractError("backup pushes mass outside the support grid")
    return CategoricalDist(Z.vmin, Z.vmax, out)


def w1_same_grid(p: np.ndarray, q: np.ndarray, spacing: float) -> np.ndarray:
    """Per-row W1 between masses on one shared grid (integral of |CDF difference|)."""
    return np.abs(np.cumsum(p - q, axis=-1))[..., :-1].sum(axis=-1) * spacing


@dataclass
class ReturnSolution:
    dists: CategoricalDist
    residuals: list[float]
    iterations: int
    widened: bool = False

    def mean(self) -> np.ndarray:
        return self.dists.mean()

    def cvar(self, state: int, eta: float) -> float:
        return risk.cvar_value(self.dists[state].to_empirical(), eta)


def solve_return_distribution(
    mdp: FiniteMdp,
    policy,
    tol: float = 1e-8,
    n_atoms: int = 401,
    bounds: tuple[float, float] | None = None,
    max_iter: int = 10_000,
    init: np.ndarray | None = None,
) -> ReturnSolution:
    """Iterate projected backups from point masses at 0 until the sup-state W1 change is below ``tol``."""
    if tol <= 0:
        raise ContractError("tol must be positive")
    vmin, vmax = bounds if bounds is not None else default_bounds(mdp)
    widened = False
    for attempt in range(2):
        op = _Backup(mdp, policy, vmin, vmax, n_atoms)
        dz = (vmax - vmin) / (n_atoms - 1)
        probs = np.tile(op.zero, (mdp.n_states, 1)) if init is None or attempt else init.copy()
        residuals: list[float] = []
        overflowed = False
        for it in range(1, max_iter + 1):
            new, over = op(probs)
            if over:
                overflowed = True
                break
            res = float(w1_same_grid(new, probs, dz).max())
            residuals.append(res)
            probs = new
            if res < tol:
                return ReturnSolution(CategoricalDist(vmin, vmax, probs), residuals, it, widened)
        if not overflowed:
            raise ConvergenceError(f"no convergence after {max_iter} backups; last residual {residuals[-1]:.3e}")
        if attempt == 0:
            center, half = 0.5 * (vmin + vmax), vmax - vmin
            vmin, vmax = center - half, center + half
            widened = True
    raise ConvergenceError(f"return distribution leaves the widened grid [{vmin}, {vmax}]")


# ---------------------------------------------------------------- Wasserstein


def _as_weighted(d) -> EmpiricalDistribution:
    if isinstance(d, CategoricalDist):
        return d.to_empirical()
    return risk.as_distribution(d)


def wasserstein_p(d1, d2, p: float = 1.0) -> float:
    """Exact 1-D p-Wasserstein distance via the quantile-function integral."""
    if p < 1:
        raise ContractError("p must be >= 1")
    a, b = _as_weighted(d1), _as_weighted(d2)
    ca, cb = a.cumulative, b.cumulative
    knots = np.union1d(np.concatenate(([0.0], ca)), np.concatenate(([0.0], cb)))
    knots = knots[(knots >= 0) & (knots <= 1)]
    lengths = np.diff(knots)
    mids = 0.5 * (knots[:-1] + knots[1:])
    keep = lengths > 0
    mids, lengths = mids[keep], lengths[keep]
    qa = a.values[np.minimum(np.searchsorted(ca, mids, side="left"), a.values.size - 1)]
    qb = b.values[np.minimum(np.searchsorted(cb, mids, side="left"), b.values.size - 1)]
    gap = np.abs(qa - qb)
    if p == 1:
        return float(np.dot(gap, lengths))
    return float(np.dot(gap**p, lengths) ** (1.0 / p))


# ---------------------------------------------------------------- scalar DP


def evaluate_policy(mdp: FiniteMdp, policy) -> np.ndarray:
    """Exact V^pi by solving the linear Bellman system (terminal values 0)."""
    pi = as_policy_matrix(policy, mdp)
    r = (pi * mdp.expected_reward()).sum(axis=1)
    P_pi = np.einsum("sa,sat->st", pi, mdp.P)
    live = ~mdp.terminal
    P_pi[:, ~live] = 0.0
    A = np.eye(mdp.n_states) - mdp.gamma * P_pi
    A[~live] = 0.0
    A[~live, ~live] = 1.0
    r = np.where(live, r, 0.0)
    return np.linalg.solve(A, r)


def q_values(mdp: FiniteMdp, V: np.ndarray) -> np.ndarray:
    v = np.where(mdp.terminal, 0.0, V)
    return mdp.expected_reward() + mdp.gamma * mdp.P @ v


def value_iteration(mdp: FiniteMdp, tol: float = 1e-12, max_iter: int = 100_000) -> np.ndarray:
    V = np.zeros(mdp.n_states)
    for _ in range(max_iter):
        new = np.where(mdp.terminal, 0.0, q_values(mdp, V).max(axis=1))
        if np.max(np.abs(new - V)) < tol:
            return new
        V = new
    raise ConvergenceError("value iteration did not converge")


def policy_iteration(mdp: FiniteMdp, max_iter: int = 1000) -> tuple[np.ndarray, np.ndarray]:
    """Expectation-optimal deterministic policy; ties go to the lowest action index."""
    policy = np.zeros(mdp.n_states, dtype=np.int64)
    for _ in range(max_iter):
        V = evaluate_policy(mdp, policy)
        Q = q_values(mdp, V)
        best = Q.max(axis=1, keepdims=True)
        greedy = np.argmax(Q >= best - 1e-12, axis=1)
        keep = Q[np.arange(mdp.n_states), policy] >= best[:, 0] - 1e-12
        new = np.where(keep, policy, greedy)
        new[mdp.terminal] = 0
        if np.array_equal(new, policy):
            return policy, V
        policy = new
    raise ConvergenceError("policy iteration did not converge")


# ---------------------------------------------------------------- CVaR policy search


@dataclass
class CvarSearchResult:
    policy: np.ndarray
    value: float
    estimates: dict[tuple[int, ...], float]
    exhaustive: bool


def policy_cvar(mdp: FiniteMdp, policy, eta: float, start: int = 0, n_atoms: int = 401, tol: float = 1e-9,
                bounds=None) -> float:
    sol = solve_return_distribution(mdp, policy, tol=tol, n_atoms=n_atoms, bounds=bounds)
    if eta == 1.0:
        return float(sol.mean()[start])
    return sol.cvar(start, eta)


def brute_force_cvar_policy(
    mdp: FiniteMdp,
    eta: float,
    start: int = 0,
    cap: int = 4**8,
    search: str = "enumerate",
    samples: int = 64,
    rng: np.random.Generator | None = None,
    n_atoms: int = 401,
    tol: float = 1e-9,
    tie_tol: float = 1e-10,
) -> CvarSearchResult:
    """Deterministic stationary policy maximizing the start-state CVaR at level ``eta``.

    ``search="enumerate"`` visits every policy over non-terminal states in
    lexicographic order and keeps the first strict maximizer, so ties go to
    the lexicographically smallest action table. It refuses instances with
    more than ``cap`` policies. ``search="sample"`` instead scores the
    expectation-optimal policy plus ``samples`` random ones and then runs
    single-state coordinate ascent from the best of them; it is not
    guaranteed to find the global optimum.
    """
    risk._check_eta(eta)
    live = np.flatnonzero(~mdp.terminal)
    count = mdp.n_actions ** len(live)
    score = lambda pol: policy_cvar(mdp, pol, eta, start, n_atoms, tol)
    estimates: dict[tuple[int, ...], float] = {}

    if search == "enumerate":
        if count > cap:
            raise ContractError(f"{count} deterministic policies exceed the cap of {cap}; pass search='sample'")
        best_pol, best_val = None, -math.inf
        for acts in itertools.product(range(mdp.n_actions), repeat=len(live)):
            pol = np.zeros(mdp.n_states, dtype=np.int64)
            pol[live] = acts
            val = score(pol)
            estimates[tuple(acts)] = val
            if val > best_val + tie_tol:
                best_pol, best_val = pol, val
        return CvarSearchResult(best_pol, best_val, estimates, True)

    if search != "sample":
        raise ContractError(f"unknown search mode {search!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    candidates = [policy_iteration(mdp)[0]]
    for _ in range(min(samples, count)):
        pol = np.zeros(mdp.n_states, dtype=np.int64)
        pol[live] = rng.integers(mdp.n_actions, size=len(live))
        candidates.append(pol)
    best_pol, best_val = None, -math.inf
    for pol in candidates:
        val = score(pol)
        estimates[tuple(pol[live])] = val
        if val > best_val + tie_tol:
            best_pol, best_val = pol.copy(), val
    improved = True
    while improved:
        improved = False
        for s in live:
            for a in range(mdp.n_actions):
                if a == best_pol[s]:
                    continue
                trial = best_pol.copy()
                trial[s] = a
                key = tuple(trial[live])
                val = estimates[key] if key in estimates else score(trial)
                estimates[key] = val
                if val > best_val + tie_tol:
                    best_pol, best_val, improved = trial, val, True
    return CvarSearchResult(best_pol, best_val, estimates, False)


# ---------------------------------------------------------------- Monte Carlo and export


def simulate_returns(mdp: FiniteMdp, policy, start: int, episodes: int, rng: np.random.Generator,
                     max_steps: int | None = None) -> np.ndarray:
    """Discounted returns of ``episodes`` independent runs, simulated in lockstep."""
    pi = as_policy_matrix(policy, mdp)
    P = mdp.P
    if max_steps is None:
        lo, hi = mdp.reward_range()
        scale = max(abs(lo), abs(hi), 1e-12) / (1.0 - mdp.gamma)
        max_steps = int(math.ceil(math.log(1e-14 / scale) / math.log(mdp.gamma))) if mdp.gamma > 0 else 1
    state = np.full(episodes, start, dtype=np.int64)
    ret = np.zeros(episodes)
    disc = np.ones(episodes)
    alive = ~mdp.terminal[state]
    cum_pi = np.cumsum(pi, axis=1)
    cum_P = np.cumsum(P, axis=2)
    cum_R = np.cumsum(mdp.reward_probs, axis=1)
    edge_index = np.full((mdp.n_states, mdp.n_actions, mdp.n_states), -1, dtype=np.int64)
    edge_index[mdp.edge_s, mdp.edge_a, mdp.edge_next] = np.arange(mdp.edge_s.size)
    for _ in range(max_steps):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        s = state[idx]
        a = np.minimum((rng.random((idx.size, 1)) > cum_pi[s]).sum(axis=1), mdp.n_actions - 1)
        s2 = np.minimum((rng.random((idx.size, 1)) > cum_P[s, a]).sum(axis=1), mdp.n_states - 1)
        e = edge_index[s, a, s2]
        k = np.minimum((rng.random((idx.size, 1)) > cum_R[e]).sum(axis=1), mdp.reward_probs.shape[1] - 1)
        ret[idx] += disc[idx] * mdp.reward_values[e, k]
        disc[idx] *= mdp.gamma
        state[idx] = s2
        alive[idx] = ~mdp.terminal[s2]
    return ret


def to_table(dist: CategoricalDist, min_mass: float = 0.0) -> str:
    """Plain-text ``value<TAB>mass`` table for one state's distribution."""
    lines = ["value\tmass"]
    for v, m in zip(dist.atoms, dist.probs):
        if m > min_mass:
            lines.append(f"{v:.10g}\t{m:.12g}")
    return "\n".join(lines) + "\n"


def two_arm_mdp(safe: float = 0.5, risky_win: float = 1.0, risky_loss: float = -2.0, loss_prob: float = 0.1,
                gamma: float = 0.9) -> FiniteMdp:
    """One decision between a certain reward (action 0) and a two-point gamble (action 1)."""
    P = np.zeros((2, 2, 2))
    P[0, :, 1] = 1.0
    P[1, :, 1] = 1.0
    laws = [
        [[(safe, 1.0)], [(risky_loss, loss_prob), (risky_win, 1.0 - loss_prob)]],
        [[(0.0, 1.0)], [(0.0, 1.0)]],
    ]
    return FiniteMdp.from_sa_laws(P, laws, [False, True], gamma)


def penalty_chain_mdp(length: int, weight: float, p: float, gamma: float, task_reward: float = 0.0) -> FiniteMdp:
    """Deterministic chain of ``length`` steps whose risk indicator is active on every step."""
    n = length + 1
    P = np.zeros((n, 1, n))
    for s in range(length):
        P[s, 0, s + 1] = 1.0
    P[length, 0, length] = 1.0
    law = [(task_reward - weight, p), (task_reward, 1.0 - p)] if p > 0 else [(task_reward, 1.0)]
    laws = [[law] for _ in range(length)] + [[[(0.0, 1.0)]]]
    terminal = np.zeros(n, dtype=bool)
    terminal[length] = True
    return FiniteMdp.from_sa_laws(P, laws, terminal, gamma)
