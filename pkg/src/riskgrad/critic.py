"""Fraction-conditioned distributional state-value network (implicit quantile style).

The network maps a state ``s`` and fractions ``tau`` to estimates of the
return quantiles ``Z_tau(s)``. Fractions are embedded with a cosine basis,
passed through an affine layer and multiplied elementwise with the state
features before a small head produces one value per fraction.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .tensor import Mlp, Tensor

N_COS = 64


@dataclass
class QuantileSample:
    fractions: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.fractions = np.asarray(self.fractions, dtype=np.float64).reshape(-1)
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.fractions.shape != self.values.shape:
            raise ShapeError(f"{self.fractions.size} fractions but {self.values.size} values")
        if not np.all(np.isfinite(self.values)):
            raise ContractError("quantile values must be finite")


@dataclass
class CriticParams:
    state_net: Mlp
    embed_w: Tensor
    embed_b: Tensor
    head: Mlp
    value_scale: float = 1.0

    @classmethod
    def init(
        cls,
        obs_dim: int,
        hidden: list[int],
        rng: np.random.Generator,
        n_cos: int = N_COS,
        value_scale: float = 1.0,
    ) -> "CriticParams":
        if not hidden:
            raise ContractError("critic needs at least one hidden layer")
        width = hidden[-1]
        state_net = Mlp.init([obs_dim, *hidden], rng, hidden="elu", out="elu")
        embed_w = Tensor(rng.normal(0.0, np.sqrt(1.0 / n_cos), size=(n_cos, width)))
        embed_b = Tensor(np.zeros(width))
        head = Mlp.init([width, width, 1], rng, hidden="elu", out="identity", out_scale=0.1)
        return cls(state_net, embed_w, embed_b, head, value_scale)

    @property
    def obs_dim(self) -> int:
        return self.state_net.sizes[0]

    @property
    def embedding_size(self) -> int:
        return self.embed_w.shape[0]

    def parameters(self) -> list[Tensor]:
        return self.state_net.parameters() + [self.embed_w, self.embed_b] + self.head.parameters()

    def frozen_copy(self) -> "CriticParams":
        return copy.deepcopy(self)

    def describe(self) -> dict:
        return {
            "state_net": self.state_net.describe(),
            "embedding_size": self.embedding_size,
            "head": self.head.describe(),
            "value_scale": self.value_scale,
        }


def sample_fractions(n: int, rng: np.random.Generator, shape: tuple[int, ...] = ()) -> np.ndarray:
    """``n`` i.i.d. U([0, 1]) fractions (per leading position if ``shape`` is given)."""
    if n < 1:
        raise ContractError("need at least one fraction")
    return rng.uniform(0.0, 1.0, size=(*shape, n))


def cosine_features(taus: np.ndarray, n_cos: int = N_COS) -> np.ndarray:
    """``cos(pi * i * tau)`` for ``i = 0..n_cos-1`` via the Chebyshev recurrence."""
    taus = np.asarray(taus, dtype=np.float64)
    flat = taus.reshape(-1)
    rows = np.empty((n_cos, flat.size))
    c1 = np.cos(np.pi * flat)
    rows[0] = 1.0
    if n_cos > 1:
        rows[1] = c1
    two_c1 = 2.0 * c1
    for k in range(2, n_cos):
        np.multiply(two_c1, rows[k - 1], out=rows[k])
        rows[k] -= rows[k - 2]
    return np.ascontiguousarray(rows.T).reshape(*taus.shape, n_cos)


def forward(params: CriticParams, states, taus) -> Tensor:
    """Quantile values of shape (B, N) for states (B, obs) and fractions (B, N) or (N,)."""
    states = np.asarray(states, dtype=np.float64) if not isinstance(states, Tensor) else states.data
    if states.ndim != 2 or states.shape[1] != params.obs_dim:
        raise ShapeError(f"critic expects states of shape (B, {params.obs_dim}), got {states.shape}")
    taus = np.asarray(taus, dtype=np.float64)
    if taus.ndim == 1:
        taus = np.broadcast_to(taus, (states.shape[0], taus.size))
    if taus.ndim != 2 or taus.shape[0] != states.shape[0]:
        raise ShapeError(f"fractions of shape {taus.shape} do not match {states.shape[0]} states")
    feats = params.state_net(states)  # (B, H)
    emb = T.activation(T.affine_forward(cosine_features(taus, params.embedding_size), params.embed_w, params.embed_b), "elu")
    merged = T.mul(T.expand_dims(feats, 1), emb)  # (B, N, H)
    out = params.head(merged)  # (B, N, 1)
    out = T.reshape(out, taus.shape)
    return T.mul(out, params.value_scale) if params.value_scale != 1.0 else out


def evaluate(params: CriticParams, states, taus) -> np.ndarray:
    """Forward pass without recording on any tape."""
    return _untracked(lambda: forward(params, states, taus).data)


def _untracked(fn):
    saved = T._TAPES[:]
    T._TAPES.clear()
    try:
        return fn()
    finally:
        T._TAPES.extend(saved)


def quantile_values(state, fractions, params: CriticParams) -> QuantileSample:
    state = np.asarray(state, dtype=np.float64).reshape(1, -1)
    fractions = np.asarray(fractions, dtype=np.float64).reshape(-1)
    values = evaluate(params, state, fractions)[0]
    return QuantileSample(fractions, values)


def mean_value(state, params: CriticParams, n: int, rng: np.random.Generator) -> float:
    """Monte-Carlo estimate of E[Z(s)] from ``n`` uniform fractions."""
    if n < 1:
        raise ContractError("n must be >= 1")
    return float(np.mean(quantile_values(state, sample_fractions(n, rng), params).values))


def td_deltas(r: float, gamma: float, next_q: QuantileSample, cur_q: QuantileSample, done: bool) -> np.ndarray:
    """Pairwise TD errors ``delta[j, i] = r + gamma * (1 - done) * next[j] - cur[i]``."""
    if not 0.0 <= gamma < 1.0:
        raise ContractError(f"discount must lie in [0, 1), got {gamma}")
    target = r + gamma * (0.0 if done else 1.0) * np.asarray(next_q.values)
    return target[:, None] - np.asarray(cur_q.values)[None, :]


def batched_td_deltas(rewards, gamma: float, next_values: np.ndarray, cur: Tensor, terminal) -> Tensor:
    """Batched TD errors of shape (B, N', N); next-state values are constants."""
    rewards = np.asarray(rewards, dtype=np.float64)
    keep = 1.0 - np.asarray(terminal, dtype=np.float64)
    target = rewards[:, None] + gamma * keep[:, None] * next_values  # (B, N')
    return T.sub(target[:, :, None], T.expand_dims(cur, 1))


def quantile_huber_loss(deltas, fractions, kappa: float = 1.0) -> Tensor:
    """Quantile Huber loss ``(1/N') sum_i sum_j |tau_i - 1{delta<0}| L_kappa(delta)``.

    ``deltas`` is (N', N) or (B, N', N) with the current-sample axis last;
    batched input is averaged over B.
    """
    if kappa <= 0:
        raise ContractError(f"kappa must be positive, got {kappa}")
    deltas = T.as_tensor(deltas)
    d = deltas.data
    taus = np.asarray(fractions, dtype=np.float64)
    if d.ndim not in (2, 3) or taus.shape[-1] != d.shape[-1]:
        raise ShapeError(f"deltas {d.shape} inconsistent with fractions {taus.shape}")
    if d.ndim == 3 and taus.ndim == 2:
        taus = taus[:, None, :]
    batch = d.shape[0] if d.ndim == 3 else 1
    n_prime = d.shape[-2]
    absd = np.abs(d)
    small = absd <= kappa
    huber = np.where(small, 0.5 * d * d, kappa * (absd - 0.5 * kappa))
    weight = np.abs(taus - (d < 0))
    scale = 1.0 / (n_prime * batch)
    value = np.sum(weight * huber) * scale

    def vjp(g):
        dhuber = np.where(small, d, kappa * np.sign(d))
        return (g * scale * weight * dhuber,)

    return T._record(np.asarray(value), (deltas,), vjp)


def critic_loss(
    params: CriticParams,
    target: CriticParams,
    states: np.ndarray,
    rewards: np.ndarray,
    next_states: np.ndarray,
    terminal: np.ndarray,
    gamma: float,
    rng: np.random.Generator,
    n: int = 64,
    n_prime: int = 64,
    kappa: float = 1.0,
) -> Tensor:
    """Quantile-regression TD loss on a batch of transitions, fresh fractions per call."""
    b = states.shape[0]
    taus = sample_fractions(n, rng, (b,))
    taus_next = sample_fractions(n_prime, rng, (b,))
    next_values = evaluate(target, next_states, taus_next)
    cur = forward(params, states, taus)
    return quantile_huber_loss(batched_td_deltas(rewards, gamma, next_values, cur, terminal), taus, kappa)


def fit_samples(
    params: CriticParams,
    state,
    data: np.ndarray,
    steps: int,
    rng: np.random.Generator,
    batch: int = 16,
    n: int = 64,
    n_prime: int = 64,
    kappa: float = 1.0,
    lr: float = 1e-3,
) -> list[float]:
    """Quantile-regress ``Z(state)`` onto a fixed pool of return samples.

    Each step draws ``batch`` groups of ``n_prime`` targets from ``data`` and
    fresh fractions, so the deltas are ``target[j] - Z_tau_i(state)``.
    Returns the per-step losses.
    """
    data = np.asarray(data, dtype=np.float64).reshape(-1)
    states = np.repeat(np.asarray(state, dtype=np.float64).reshape(1, -1), batch, axis=0)
    opt = T.Adam(params.parameters(), lr)
    losses = []
    for _ in range(steps):
        taus = sample_fractions(n, rng, (batch,))
        targets = data[rng.integers(data.size, size=(batch, n_prime))]
        with T.Tape().watch(*params.parameters()) as tape:
            cur = forward(params, states, taus)
            loss = quantile_huber_loss(T.sub(targets[:, :, None], T.expand_dims(cur, 1)), taus, kappa)
        opt.step(T.backward(tape, loss))
        losses.append(loss.item())
    return losses
