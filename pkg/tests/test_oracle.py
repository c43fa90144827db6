import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import wasserstein_distance

from riskgrad import oracle as O
from riskgrad import risk
from riskgrad.envs import cliff_config, cliff_to_mdp
from riskgrad.errors import ContractError, ConvergenceError
from riskgrad.risk import EmpiricalDistribution as ED


def one_step_mdp(law, gamma=0.9):
    P = np.zeros((2, 1, 2))
    P[:, 0, 1] = 1.0
    return O.FiniteMdp.from_sa_laws(P, [[law], [[(0.0, 1.0)]]], [False, True], gamma)


def random_mdp(rng, n_s=3, n_a=2, gamma=0.8):
    P = rng.dirichlet(np.ones(n_s + 1), size=(n_s, n_a))
    full = np.zeros((n_s + 1, n_a, n_s + 1))
    full[:n_s] = P
    full[n_s, :, n_s] = 1.0
    laws = []
    for s in range(n_s):
        row = []
        for a in range(n_a):
            vals = rng.integers(-4, 5, size=2).astype(float)
            q = rng.uniform(0.05, 0.95)
            row.append([(vals[0], q), (vals[1], 1 - q)] if vals[0] != vals[1] else [(vals[0], 1.0)])
        laws.append(row)
    laws.append([[(0.0, 1.0)]] * n_a)
    terminal = np.zeros(n_s + 1, dtype=bool)
    terminal[n_s] = True
    return O.FiniteMdp.from_sa_laws(full, laws, terminal, gamma)


def test_mdp_validation():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = 0.9
    with pytest.raises(ContractError):
        O.FiniteMdp.from_sa_laws(P, [[[(0.0, 1.0)]], [[(0.0, 1.0)]]], [False, True], 0.9)
    P[0, 0, 1] = 1.0
    with pytest.raises(ContractError):
        O.FiniteMdp.from_sa_laws(P, [[[(0.0, 0.5)]], [[(0.0, 1.0)]]], [False, True], 0.9)
    with pytest.raises(ContractError):
        O.FiniteMdp.from_sa_laws(P, [[[(0.0, 1.0)]], [[(0.0, 1.0)]]], [False, True], 1.0)


def test_cliff_export_is_stochastic():
    mdp = cliff_to_mdp(cliff_config(), 0.9)
    live = ~mdp.terminal
    assert np.allclose(mdp.P[live].sum(axis=-1), 1.0, atol=1e-12)
    assert np.allclose(mdp.reward_probs.sum(axis=1), 1.0, atol=1e-12)


def test_terminal_state_is_fixed_point_mass_at_zero():
    mdp = one_step_mdp([(1.0, 1.0)])
    Z = O.CategoricalDist.point_mass(0.0, -20, 20, 81, (2,))
    out = O.distributional_bellman_backup(Z, [0, 0], mdp)
    assert out.probs[1, 40] == 1.0


def test_single_backup_two_point_law():
    mdp = one_step_mdp([(-10.0, 0.1), (0.0, 0.9)])
    Z = O.CategoricalDist.point_mass(0.0, -20, 20, 81, (2,))
    out = O.distributional_bellman_backup(Z, [0, 0], mdp)
    d = out[0]
    assert d.mean() == pytest.approx(-1.0, abs=1e-12)
    assert risk.quantile_at(d.to_empirical(), 0.05) == pytest.approx(-10.0)
    assert d.probs[20] == pytest.approx(0.1) and d.probs[40] == pytest.approx(0.9)


def test_backup_overflow_raises():
    mdp = one_step_mdp([(50.0, 1.0)])
    Z = O.CategoricalDist.point_mass(0.0, -20, 20, 81, (2,))
    with pytest.raises(ContractError):
        O.distributional_bellman_backup(Z, [0, 0], mdp)


def test_geometric_chain_mean():
    P = np.ones((1, 1, 1))
    mdp = O.FiniteMdp.from_sa_laws(P, [[[(1.0, 1.0)]]], [False], 0.9)
    sol = O.solve_return_distribution(mdp, [0], tol=1e-10)
    grid = sol.dists.spacing
    assert sol.mean()[0] == pytest.approx(10.0, abs=grid)


def test_point_mass_rewards_match_value_iteration():
    # deterministic 4-cycle with a terminal exit
    P = np.zeros((5, 2, 5))
    for s in range(4):
        P[s, 0, (s + 1) % 4] = 1.0
        P[s, 1, 4] = 1.0
    P[4, :, 4] = 1.0
    laws = [[[(float(s), 1.0)], [(2.0, 1.0)]] for s in range(4)] + [[[(0.0, 1.0)]] * 2]
    mdp = O.FiniteMdp.from_sa_laws(P, laws, [False] * 4 + [True], 0.5)
    V = O.value_iteration(mdp)
    pi, _ = O.policy_iteration(mdp)
    sol = O.solve_return_distribution(mdp, pi, n_atoms=801)
    assert np.allclose(sol.mean(), V, atol=sol.dists.spacing)
    for s in range(4):
        spread = O.wasserstein_p(sol.dists[s], ED([V[s]]))
        assert spread <= sol.dists.spacing


@pytest.mark.parametrize("policy", ["uniform", "optimal"])
def test_solution_mean_matches_policy_evaluation_every_state(policy):
    mdp = cliff_to_mdp(cliff_config(), 0.9)
    pi = O.uniform_policy(mdp) if policy == "uniform" else O.policy_iteration(mdp)[0]
    sol = O.solve_return_distribution(mdp, pi)
    exact = O.evaluate_policy(mdp, pi)
    assert np.max(np.abs(sol.mean() - exact)) <= sol.dists.spacing
    assert np.allclose(O.evaluate_policy(mdp, O.policy_iteration(mdp)[0]), O.value_iteration(mdp), atol=1e-9)


def test_residuals_decay_at_discount_rate():
    mdp = cliff_to_mdp(cliff_config(), 0.9)
    sol = O.solve_return_distribution(mdp, O.uniform_policy(mdp), tol=1e-9)
    res = np.array(sol.residuals)
    tail = res[10:][res[10:] > 1e-7]
    ratios = tail[1:] / tail[:-1]
    assert np.all(ratios <= 0.9 + 1e-6)


def random_dists(rng, shape, n_atoms):
    raw = rng.exponential(size=(*shape, n_atoms)) * (rng.random((*shape, n_atoms)) < 0.3)
    raw[..., rng.integers(n_atoms)] += 1e-3
    return raw / raw.sum(axis=-1, keepdims=True)


@pytest.mark.parametrize("trial", range(20))
def test_contraction_on_random_pairs(trial):
    rng = np.random.default_rng(trial)
    mdp = cliff_to_mdp(cliff_config(), 0.9)
    lo, hi = O.default_bounds(mdp)
    n = 201
    # random distributions are kept in the shrunken range that the backup maps into the grid
    inner = int((n - 1) * 0.05)
    z1 = np.zeros((mdp.n_states, n))
    z2 = np.zeros((mdp.n_states, n))
    z1[:, inner : n - inner] = random_dists(rng, (mdp.n_states,), n - 2 * inner)
    z2[:, inner : n - inner] = random_dists(rng, (mdp.n_states,), n - 2 * inner)
    pi = O.uniform_policy(mdp) if trial % 2 else O.policy_iteration(mdp)[0]
    Z1, Z2 = O.CategoricalDist(lo, hi, z1), O.CategoricalDist(lo, hi, z2)
    live = ~mdp.terminal
    before = max(O.wasserstein_p(Z1[s], Z2[s]) for s in np.flatnonzero(live))
    T1 = O.distributional_bellman_backup(Z1, pi, mdp)
    T2 = O.distributional_bellman_backup(Z2, pi, mdp)
    after = max(O.wasserstein_p(T1[s], T2[s]) for s in np.flatnonzero(live))
    assert after <= 0.9 * before + 2 * Z1.spacing


def test_wasserstein_examples():
    a = ED([0.3, 1.7, 2.0])
    assert O.wasserstein_p(a, a) == 0.0
    for p in (1, 2, 3.5):
        assert O.wasserstein_p(ED([1.25]), ED([-2.0]), p) == pytest.approx(3.25, rel=1e-12)
    assert O.wasserstein_p(ED([0.0, 1.0]), ED([1.0, 2.0])) == pytest.approx(1.0)
    with pytest.raises(ContractError):
        O.wasserstein_p(a, a, 0.5)


samples = st.lists(st.floats(-50, 50, allow_nan=False), min_size=1, max_size=12)


@settings(max_examples=80)
@given(samples, samples)
def test_w1_matches_scipy_and_is_symmetric(x, y):
    ours = O.wasserstein_p(ED(x), ED(y))
    assert ours == pytest.approx(wasserstein_distance(x, y), rel=1e-9, abs=1e-9)
    assert ours == pytest.approx(O.wasserstein_p(ED(y), ED(x)), rel=1e-12, abs=1e-12)


@settings(max_examples=60)
@given(samples, samples, samples, st.sampled_from([1.0, 2.0]))
def test_wasserstein_triangle_inequality(x, y, z, p):
    dx, dy, dz = ED(x), ED(y), ED(z)
    assert O.wasserstein_p(dx, dz, p) <= O.wasserstein_p(dx, dy, p) + O.wasserstein_p(dy, dz, p) + 1e-9


def test_wasserstein_categorical_against_empirical():
    rng = np.random.default_rng(2)
    p = random_dists(rng, (), 11)
    q = random_dists(rng, (), 11)
    a, b = O.CategoricalDist(0, 10, p), O.CategoricalDist(0, 10, q)
    grid = np.linspace(0, 10, 11)
    ref = wasserstein_distance(grid, grid, p, q)
    assert O.wasserstein_p(a, b) == pytest.approx(ref, rel=1e-9)
    assert O.w1_same_grid(p, q, 1.0) == pytest.approx(ref, rel=1e-9)


def test_two_arm_flip_by_hand():
    mdp = O.two_arm_mdp()
    # risky arm: 1 w.p. 0.9, -2 w.p. 0.1 -> mean 0.7 > 0.5; bottom half mean (0.1*-2 + 0.4*1)/0.5 = 0.4 < 0.5
    # values are read off the 401-atom grid, so they carry up to one spacing of projection error
    spacing = np.subtract(*O.default_bounds(mdp)[::-1]) / 400
    neutral = O.brute_force_cvar_policy(mdp, 1.0)
    averse = O.brute_force_cvar_policy(mdp, 0.5)
    assert neutral.policy[0] == 1 and neutral.value == pytest.approx(0.7, abs=1e-9)
    assert averse.policy[0] == 0 and averse.value == pytest.approx(0.5, abs=spacing)
    assert averse.estimates[(1,)] == pytest.approx(0.4, abs=spacing)


def test_identical_arms_tie_break_to_first():
    mdp = O.two_arm_mdp(safe=1.0, risky_win=1.0, risky_loss=1.0)
    assert O.brute_force_cvar_policy(mdp, 0.5).policy[0] == 0


@pytest.mark.parametrize("seed", range(5))
def test_eta_one_search_matches_policy_iteration(seed):
    mdp = random_mdp(np.random.default_rng(seed))
    res = O.brute_force_cvar_policy(mdp, 1.0)
    pi, V = O.policy_iteration(mdp)
    assert res.value == pytest.approx(V[0], abs=1e-6)
    assert O.evaluate_policy(mdp, res.policy)[0] == pytest.approx(V[0], abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_sample_search_reaches_enumeration_optimum(seed):
    mdp = random_mdp(np.random.default_rng(seed + 10))
    exact = O.brute_force_cvar_policy(mdp, 0.5)
    approx = O.brute_force_cvar_policy(mdp, 0.5, search="sample", samples=4, rng=np.random.default_rng(seed))
    assert approx.value <= exact.value + 1e-9
    assert approx.value == pytest.approx(exact.value, abs=1e-6)
    assert not approx.exhaustive and exact.exhaustive


def test_enumeration_cap():
    mdp = cliff_to_mdp(cliff_config(), 0.9)
    with pytest.raises(ContractError):
        O.brute_force_cvar_policy(mdp, 0.5)
    with pytest.raises(ContractError):
        O.brute_force_cvar_policy(O.two_arm_mdp(), 0.5, search="anneal")


def test_iteration_cap_raises_convergence_error():
    mdp = cliff_to_mdp(cliff_config(), 0.9)
    with pytest.raises(ConvergenceError) as info:
        O.solve_return_distribution(mdp, O.uniform_policy(mdp), max_iter=3)
    assert "residual" in str(info.value)


def test_simulated_returns_match_solution():
    mdp = cliff_to_mdp(cliff_config(), 0.9)
    pi = O.policy_iteration(mdp)[0]
    sol = O.solve_return_distribution(mdp, pi)
    ret = O.simulate_returns(mdp, pi, 0, 50_000, np.random.default_rng(1))
    assert abs(ret.mean() - sol.mean()[0]) < 3 * ret.std() / math.sqrt(ret.size) + sol.dists.spacing


def test_penalty_chain_quantile_shift():
    base = O.penalty_chain_mdp(50, 100.0, 0.0, 0.99)
    risky = O.penalty_chain_mdp(50, 100.0, 1e-2, 0.99)
    lo = O.solve_return_distribution(base, [0] * 51, bounds=(-1500.0, 10.0), n_atoms=3021)
    hi = O.solve_return_distribution(risky, [0] * 51, bounds=(-1500.0, 10.0), n_atoms=3021)
    assert hi.mean()[0] == pytest.approx(-1.0 * (1 - 0.99**50) / 0.01, abs=hi.dists.spacing)
    q0 = risk.quantile_at(lo.dists[0].to_empirical(), 0.005)
    q1 = risk.quantile_at(hi.dists[0].to_empirical(), 0.005)
    assert q0 - q1 >= 100.0


def test_to_table_format():
    d = O.CategoricalDist(0.0, 1.0, np.array([0.25, 0.0, 0.75]))
    assert O.to_table(d) == "value\tmass\n0\t0.25\n1\t0.75\n"
