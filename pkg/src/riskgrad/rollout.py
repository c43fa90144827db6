"""Seeded experience collection and lockstep evaluation episodes."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import critic as C
from .envs import Env, EnvConfig
from .policy import CategoricalPolicyParams, PolicyParams, Rollout


def collection_threads() -> int:
    try:
        return max(1, int(os.environ.get("RISKGRAD_THREADS", "1")))
    except ValueError:
        return 1


def policy_outputs(actor: PolicyParams, obs: np.ndarray) -> np.ndarray:
    """Logits (categorical) or action means (Gaussian) for a batch, off-tape."""
    net = actor.logits_net if isinstance(actor, CategoricalPolicyParams) else actor.mean_net
    return C._untracked(lambda: net(obs).data)


def sample_actions(actor: PolicyParams, obs: np.ndarray, rngs, deterministic: bool = False):
    """One action per row, drawing noise from the row's own generator."""
    out = policy_outputs(actor, obs)
    if isinstance(actor, CategoricalPolicyParams):
        logp = out - out.max(axis=1, keepdims=True)
        logp = logp - np.log(np.exp(logp).sum(axis=1, keepdims=True))
        if deterministic:
            actions = np.argmax(logp, axis=1)
        else:
            cum = np.cumsum(np.exp(logp), axis=1)
            u = np.array([[r.random()] for r in rngs])
            actions = np.minimum((u > cum).sum(axis=1), logp.shape[1] - 1)
        return actions, logp[np.arange(len(actions)), actions]
    std = np.exp(actor.log_std.data)
    if deterministic:
        actions = out.copy()
    else:
        noise = np.stack([r.standard_normal(out.shape[1]) for r in rngs])
        actions = out + std * noise
    z = (actions - out) / std
    lp = np.sum(-0.5 * z * z - actor.log_std.data - 0.5 * np.log(2 * np.pi), axis=1)
    return actions, lp


@dataclass
class EpisodeLog:
    returns: list[float] = field(default_factory=list)
    lengths: list[int] = field(default_factory=list)
    events: list[int] = field(default_factory=list)
    falls: list[bool] = field(default_factory=list)


class Collector:
    """Persistent environment instances stepped in lockstep for PPO rollouts."""

    def __init__(self, env_cfg: EnvConfig, n_envs: int, seed_seq: np.random.SeedSequence):
        children = seed_seq.spawn(2 * n_envs)
        self.envs = [Env(env_cfg, np.random.default_rng(children[i])) for i in range(n_envs)]
        self.act_rngs = [np.random.default_rng(children[n_envs + i]) for i in range(n_envs)]
        self.obs = np.stack([e.reset() for e in self.envs])
        self.ep_ret = np.zeros(n_envs)
        self.ep_len = np.zeros(n_envs, dtype=np.int64)
        self.ep_events = np.zeros(n_envs, dtype=np.int64)
        self.threads = collection_threads()

    def _step_all(self, actions):
        if self.threads > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                return list(pool.map(lambda ea: ea[0].step(ea[1]), zip(self.envs, actions)))
        return [env.step(a) for env, a in zip(self.envs, actions)]

    def collect(self, actor: PolicyParams, steps: int) -> tuple[Rollout, EpisodeLog]:
        n = len(self.envs)
        discrete = self.envs[0].discrete
        obs_buf = np.zeros((steps, n, self.obs.shape[1]))
        next_buf = np.zeros_like(obs_buf)
        act_buf = np.zeros((steps, n), dtype=np.int64) if discrete else np.zeros((steps, n, self.envs[0].act_dim))
        lp_buf = np.zeros((steps, n))
        rew = np.zeros((steps, n))
        dones = np.zeros((steps, n), dtype=bool)
        terms = np.zeros((steps, n), dtype=bool)
        log = EpisodeLog()
        for t in range(steps):
            actions, lp = sample_actions(actor, self.obs, self.act_rngs)
            results = self._step_all(actions)
            obs_buf[t] = self.obs
            act_buf[t] = actions
            lp_buf[t] = lp
            for i, (env, res) in enumerate(zip(self.envs, results)):
                rew[t, i] = res.reward
                dones[t, i] = res.done
                terms[t, i] = res.info["terminal"]
                next_buf[t, i] = res.obs
                self.ep_ret[i] += res.reward
                self.ep_len[i] += 1
                self.ep_events[i] += res.info["events"]
                if res.done:
                    log.returns.append(float(self.ep_ret[i]))
                    log.lengths.append(int(self.ep_len[i]))
                    log.events.append(int(self.ep_events[i]))
                    log.falls.append(bool(res.info.get("fell", False)))
                    self.ep_ret[i], self.ep_len[i], self.ep_events[i] = 0.0, 0, 0
                    self.obs[i] = env.reset()
                else:
                    self.obs[i] = res.obs
        return Rollout(obs_buf, act_buf, lp_buf, rew, dones, terms, next_buf), log


@dataclass
class EpisodeBatch:
    """Outcome of lockstep evaluation episodes; traces are per-step, episode-major lists."""

    returns: np.ndarray
    lengths: np.ndarray
    events: np.ndarray
    falls: np.ndarray
    horizon: int
    obs: list[np.ndarray] = field(default_factory=list)
    segments: list[np.ndarray] = field(default_factory=list)
    choices: list[list] = field(default_factory=list)


class PolicyAgent:
    """Runs one policy, greedily by default."""

    def __init__(self, actor: PolicyParams, deterministic: bool = True):
        self.actor = actor
        self.deterministic = deterministic
        self.rngs = []

    def begin(self, n: int, seed_seq: np.random.SeedSequence) -> None:
        self.rngs = [np.random.default_rng(s) for s in seed_seq.spawn(n)]

    def act(self, obs: np.ndarray, idx: np.ndarray):
        actions, _ = sample_actions(self.actor, obs, [self.rngs[i] for i in idx], self.deterministic)
        return actions


def run_episodes(agent, env_cfg: EnvConfig, episodes: int, seed: int, trace: bool = False) -> EpisodeBatch:
    """Run ``episodes`` independent episodes in lockstep; episode ``i`` has its own seeded stream."""
    root = np.random.SeedSequence(seed)
    env_seeds, agent_seed = root.spawn(2)
    envs = [Env(env_cfg, np.random.default_rng(s)) for s in env_seeds.spawn(episodes)]
    agent.begin(episodes, agent_seed)
    obs = np.stack([e.reset() for e in envs])
    alive = np.ones(episodes, dtype=bool)
    ret = np.zeros(episodes)
    length = np.zeros(episodes, dtype=np.int64)
    events = np.zeros(episodes, dtype=np.int64)
    falls = np.zeros(episodes, dtype=bool)
    obs_tr = [[] for _ in range(episodes)] if trace else None
    seg_tr = [[] for _ in range(episodes)] if trace else None
    while alive.any():
        idx = np.flatnonzero(alive)
        actions = agent.act(obs[idx], idx)
        for k, i in enumerate(idx):
            if trace:
                obs_tr[i].append(obs[i].copy())
            res = envs[i].step(actions[k])
            if trace:
                seg_tr[i].append(res.info.get("segment", -1))
            ret[i] += res.reward
            length[i] += 1
            events[i] += res.info["events"]
            if res.done:
                alive[i] = False
                falls[i] = bool(res.info.get("fell", False))
            else:
                obs[i] = res.obs
    batch = EpisodeBatch(ret, length, events, falls, env_cfg.horizon)
    if trace:
        batch.obs = [np.array(o) for o in obs_tr]
        batch.segments = [np.array(s) for s in seg_tr]
    batch.choices = getattr(agent, "choices", [])
    return batch

