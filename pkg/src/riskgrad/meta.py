"""IQR-driven switching between a risk-neutral and a risk-averse policy."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import critic as C
from . import risk
from .envs import EnvConfig
from .errors import ContractError
from .policy import PolicyParams
from .rollout import run_episodes, sample_actions

NEUTRAL, AVERSE = "cvar1", "cvar0.5"


@dataclass
class MetaConfig:
    threshold: float
    window: int = 10
    margin: float | None = None
    neutral: str = NEUTRAL
    averse: str = AVERSE

    def __post_init__(self):
        if not self.threshold > 0:
            raise ContractError("IQR threshold must be positive")
        if self.window < 1:
            raise ContractError("window must be >= 1")
        if self.margin is None:
            self.margin = 0.05 * self.threshold
        if self.margin < 0:
            raise ContractError("hysteresis margin must be >= 0")


@dataclass
class RiskEstimate:
    iqr: float
    window_iqr: float
    active: str
    step: int


@dataclass
class WindowState:
    window: int = 10
    active: str = NEUTRAL
    step: int = 0
    values: deque = field(default_factory=deque)

    def push(self, value: float) -> float:
        self.values.append(value)
        while len(self.values) > self.window:
            self.values.popleft()
        self.step += 1
        return float(np.mean(self.values))


def iqr_fractions(n: int) -> np.ndarray:
    """Evenly spaced fractions ``i / (n + 1)`` for ``i = 1..n``."""
    return np.arange(1, n + 1) / (n + 1)


def critic_iqr(critic: C.CriticParams, states: np.ndarray, n: int = 32) -> np.ndarray:
    """IQR of the critic's sorted quantile sample for each row of ``states``."""
    if n < 4:
        raise ContractError("need at least 4 fractions for an IQR estimate")
    values = np.sort(C.evaluate(critic, np.atleast_2d(states), iqr_fractions(n)), axis=1)
    cum = np.arange(1, n + 1) / n
    q1 = values[:, np.searchsorted(cum, 0.25 - 1e-12)]
    q3 = values[:, np.searchsorted(cum, 0.75 - 1e-12)]
    return q3 - q1


def estimate_risk(state, critic, n: int, rng=None, window_state: WindowState | None = None) -> RiskEstimate:
    """IQR of the value distribution at ``state`` plus its rolling window mean.

    ``critic`` is a :class:`CriticParams` or any callable mapping fractions
    to quantile values. Fractions are fixed, so ``rng`` is unused.
    """
    if n < 4:
        raise ContractError("need at least 4 fractions for an IQR estimate")
    window_state = window_state if window_state is not None else WindowState()
    taus = iqr_fractions(n)
    if isinstance(critic, C.CriticParams):
        values = C.quantile_values(state, taus, critic).values
    else:
        values = np.asarray(critic(taus), dtype=np.float64)
    inst = risk.iqr(risk.EmpiricalDistribution(values))
    return RiskEstimate(inst, window_state.push(inst), window_state.active, window_state.step)


def select_policy(est: RiskEstimate, cfg: MetaConfig, previous: str | None = None) -> str:
    """Averse above ``threshold + margin``, neutral below ``threshold - margin``, else keep."""
    previous = est.active if previous is None else previous
    if est.window_iqr > cfg.threshold + cfg.margin:
        return cfg.averse
    if est.window_iqr < cfg.threshold - cfg.margin:
        return cfg.neutral
    return previous


class MetaAgent:
    """Evaluation agent: per-episode IQR windows choose which policy acts."""

    def __init__(self, neutral: PolicyParams, averse: PolicyParams, critic: C.CriticParams, cfg: MetaConfig,
                 n_quantiles: int = 32):
        self.policies = {cfg.neutral: neutral, cfg.averse: averse}
        self.critic, self.cfg, self.n = critic, cfg, n_quantiles
        self.windows: list[WindowState] = []
        self.choices: list[list[str]] = []

    def begin(self, n: int, seed_seq) -> None:
        self.windows = [WindowState(self.cfg.window, self.cfg.neutral) for _ in range(n)]
        self.choices = [[] for _ in range(n)]

    def act(self, obs: np.ndarray, idx: np.ndarray):
        iqrs = critic_iqr(self.critic, obs, self.n)
        picks = []
        for k, i in enumerate(idx):
            ws = self.windows[i]
            est = RiskEstimate(float(iqrs[k]), ws.push(float(iqrs[k])), ws.active, ws.step)
            ws.active = select_policy(est, self.cfg)
            self.choices[i].append(ws.active)
            picks.append(ws.active)
        picks = np.array(picks)
        actions = None
        for name, actor in self.policies.items():
            rows = np.flatnonzero(picks == name)
            if rows.size == 0:
                continue
            acts, _ = sample_actions(actor, obs[rows], [None] * rows.size, deterministic=True)
            if actions is None:
                actions = np.zeros((len(idx), *acts.shape[1:]), dtype=acts.dtype)
            actions[rows] = acts
        return actions


def window_means(iqrs: np.ndarray, window: int) -> np.ndarray:
    """Trailing rolling mean with a growing window at the start, as the controller sees it."""
    c = np.cumsum(np.concatenate(([0.0], iqrs)))
    idx = np.arange(1, len(iqrs) + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def threshold_from_stream(window_iqrs) -> float:
    """90th percentile (inf-definition) of a stream of window-averaged IQRs."""
    vals = np.asarray(window_iqrs, dtype=np.float64).reshape(-1)
    if vals.size == 0 or np.all(vals <= 0):
        raise ContractError("degenerate IQR stream (all zero); retrain the critic")
    return float(risk.quantile_at(risk.EmpiricalDistribution(vals), 0.9))


def calibrate_threshold(critic: C.CriticParams, env_cfg: EnvConfig, neutral: PolicyParams, episodes: int,
                        seed: int = 0, n: int = 32, window: int = 10) -> float:
    """Run the neutral policy on ``env_cfg`` (normally a SAFE-only track) and take the 90th percentile."""
    from .rollout import PolicyAgent

    if episodes < 10:
        raise ContractError("calibration needs at least 10 episodes")
    batch = run_episodes(PolicyAgent(neutral), env_cfg, episodes, seed, trace=True)
    streams = [window_means(critic_iqr(critic, o, n), window) for o in batch.obs]
    return threshold_from_stream(np.concatenate(streams))
