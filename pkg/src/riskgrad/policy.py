"""Stochastic policies, (CVaR-)GAE advantages and the clipped surrogate loss."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import critic as C
from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Mlp, Tensor

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GaussianPolicyParams:
    mean_net: Mlp
    log_std: Tensor

    kind = "gaussian"

    @classmethod
    def init(cls, obs_dim: int, act_dim: int, hidden: list[int], rng: np.random.Generator, init_log_std: float = -0.5):
        net = Mlp.init([obs_dim, *hidden, act_dim], rng, hidden="elu", out="identity", out_scale=0.01)
        return cls(net, Tensor(np.full(act_dim, init_log_std)))

    @property
    def obs_dim(self) -> int:
        return self.mean_net.sizes[0]

    @property
    def act_dim(self) -> int:
        return self.log_std.shape[0]

    def parameters(self) -> list[Tensor]:
        return self.mean_net.parameters() + [self.log_std]

    def describe(self) -> dict:
        return {"kind": self.kind, "mean_net": self.mean_net.describe(), "act_dim": self.act_dim}


@dataclass
class CategoricalPolicyParams:
    logits_net: Mlp

    kind = "categorical"

    @classmethod
    def init(cls, obs_dim: int, n_actions: int, hidden: list[int], rng: np.random.Generator):
        return cls(Mlp.init([obs_dim, *hidden, n_actions], rng, hidden="elu", out="identity", out_scale=0.01))

    @property
    def obs_dim(self) -> int:
        return self.logits_net.sizes[0]

    @property
    def n_actions(self) -> int:
        return self.logits_net.sizes[-1]

    def parameters(self) -> list[Tensor]:
        return self.logits_net.parameters()

    def describe(self) -> dict:
        return {"kind": self.kind, "logits_net": self.logits_net.describe(), "n_actions": self.n_actions}


PolicyParams = GaussianPolicyParams | CategoricalPolicyParams


def _states(params: PolicyParams, states) -> np.ndarray:
    s = np.asarray(states, dtype=np.float64)
    if s.ndim == 1:
        s = s[None, :]
    if s.shape[-1] != params.obs_dim:
        raise ShapeError(f"policy expects observations of width {params.obs_dim}, got {s.shape}")
    return s


def log_prob(params: PolicyParams, states, actions) -> Tensor:
    """Log density (Gaussian) or log mass (categorical) of ``actions``; shape (B,)."""
    s = _states(params, states)
    if isinstance(params, CategoricalPolicyParams):
        return T.take_along_last(T.log_softmax(params.logits_net(s)), np.asarray(actions, dtype=np.int64))
    a = np.asarray(actions, dtype=np.float64).reshape(s.shape[0], params.act_dim)
    mu = params.mean_net(s)
    z = T.mul(T.sub(a, mu), T.exp(T.neg(params.log_std)))
    per_dim = T.sub(T.mul(T.square(z), -0.5), T.add(params.log_std, 0.5 * LOG_2PI))
    return T.sum_(per_dim, axis=-1)


def act(state, params: PolicyParams, rng: np.random.Generator, deterministic: bool = False):
    """Sample one action per state; returns (actions, log_probs) as arrays.

    ``deterministic`` picks the mean (Gaussian) or the argmax (categorical).
    A single 1-D state yields a scalar-indexed result.
    """
    single = np.ndim(state) == 1
    s = _states(params, state)
    with_tape_off = C._untracked
    if isinstance(params, CategoricalPolicyParams):
        logp_all = with_tape_off(lambda: T.log_softmax(params.logits_net(s)).data)
        if deterministic:
            actions = np.argmax(logp_all, axis=-1)
        else:
            cum = np.cumsum(np.exp(logp_all), axis=-1)
            u = rng.uniform(size=(s.shape[0], 1))
            actions = np.minimum((u > cum).sum(axis=-1), params.n_actions - 1)
        lp = np.take_along_axis(logp_all, actions[:, None], axis=-1)[:, 0]
    else:
        mu = with_tape_off(lambda: params.mean_net(s).data)
        std = np.exp(params.log_std.data)
        actions = mu if deterministic else mu + std * rng.standard_normal(mu.shape)
        z = (actions - mu) / std
        lp = np.sum(-0.5 * z * z - params.log_std.data - 0.5 * LOG_2PI, axis=-1)
    if single:
        return actions[0], float(lp[0])
    return actions, lp


def entropy(params: PolicyParams, states) -> Tensor:
    """Mean policy entropy over ``states``."""
    if isinstance(params, CategoricalPolicyParams):
        logp = T.log_softmax(params.logits_net(_states(params, states)))
        return T.neg(T.mean(T.sum_(T.mul(T.exp(logp), logp), axis=-1)))
    return T.sum_(T.add(params.log_std, 0.5 * (LOG_2PI + 1.0)))


entropy_bonus = entropy


@dataclass
class Rollout:
    """Time-major transitions of shape (T, E, ...) for E environment instances.

    ``dones`` marks the last step of an episode (termination or time limit);
    ``terminals`` marks true termination, after which nothing is bootstrapped.
    """

    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    dones: np.ndarray
    terminals: np.ndarray
    next_obs: np.ndarray

    @property
    def steps(self) -> int:
        return self.rewards.shape[0]

    def flat(self, name: str) -> np.ndarray:
        arr = getattr(self, name)
        return arr.reshape(-1, *arr.shape[2:])


@dataclass
class AdvantageBatch:
    advantages: np.ndarray
    returns: np.ndarray
    old_log_probs: np.ndarray
    normalized: bool = False


def gae_advantages(
    rollout: Rollout,
    value_fn: Callable[[np.ndarray], np.ndarray],
    gamma: float,
    lam: float,
    normalize: bool = False,
) -> AdvantageBatch:
    """Generalized advantage estimates over ``value_fn``, flattened time-major.

    ``value_fn`` maps (M, obs) to (M,) values; pass the critic mean for a
    risk-neutral baseline or its CVaR for a distorted one.
    """
    if rollout.steps == 0:
        raise ContractError("empty rollout")
    if not 0.0 <= gamma < 1.0 or not 0.0 <= lam <= 1.0:
        raise ContractError(f"need gamma in [0, 1) and lam in [0, 1], got {gamma}, {lam}")
    t_len, n_env = rollout.rewards.shape
    v = np.asarray(value_fn(rollout.flat("obs")), dtype=np.float64).reshape(t_len, n_env)
    v_next = np.asarray(value_fn(rollout.flat("next_obs")), dtype=np.float64).reshape(t_len, n_env)
    not_terminal = 1.0 - rollout.terminals.astype(np.float64)
    not_done = 1.0 - rollout.dones.astype(np.float64)
    deltas = rollout.rewards + gamma * not_terminal * v_next - v
    adv = np.zeros_like(deltas)
    running = np.zeros(n_env)
    for t in range(t_len - 1, -1, -1):
        running = deltas[t] + gamma * lam * not_done[t] * running
        adv[t] = running
    returns = adv + v
    flat_adv = adv.reshape(-1)
    if normalize:
        flat_adv = normalize_advantages(flat_adv)
    return AdvantageBatch(flat_adv, returns.reshape(-1), rollout.log_probs.reshape(-1).copy(), normalize)


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    centered = adv - adv.mean()
    std = centered.std()
    return centered / std if std > 0 else centered


def cvar_value_fn(critic: C.CriticParams, eta: float, n: int, rng: np.random.Generator, chunk: int = 4096):
    """Batch value function: mean critic quantile over ``n`` shared fractions from U([0, eta])."""
    taus = rng.uniform(0.0, eta, size=n)

    def fn(states: np.ndarray) -> np.ndarray:
        out = [C.evaluate(critic, states[i : i + chunk], taus).mean(axis=1) for i in range(0, len(states), chunk)]
        return np.concatenate(out) if out else np.zeros(0)

    return fn


def ppo_clip_loss(batch: AdvantageBatch, new_log_probs: Tensor, clip: float, idx=None) -> Tensor:
    """``-mean(min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A))``."""
    if clip <= 0:
        raise ContractError("clip range must be positive")
    adv = batch.advantages if idx is None else batch.advantages[idx]
    old = batch.old_log_probs if idx is None else batch.old_log_probs[idx]
    ratio = T.exp(T.sub(new_log_probs, old))
    surr = T.minimum(T.mul(ratio, adv), T.mul(T.clip(ratio, 1.0 - clip, 1.0 + clip), adv))
    return T.neg(T.mean(surr))
