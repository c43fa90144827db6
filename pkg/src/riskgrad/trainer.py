"""Training orchestration: rollouts, CVaR advantages, PPO and quantile-critic updates."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import critic as C
from . import policy as P
from . import risk
from . import tensor as T
from .checkpoint import Checkpoint
from .config import TrainConfig
from .envs import Env, EnvConfig
from .errors import ConfigError, TrainingAborted
from .meta import MetaAgent, MetaConfig, critic_iqr
from .metrics import MetricsRecord, export_metrics
from .rollout import Collector, EpisodeBatch, EpisodeLog, PolicyAgent, run_episodes

log = logging.getLogger(__name__)


@dataclass
class TrainState:
    cfg: TrainConfig
    actor: P.PolicyParams
    critic: C.CriticParams
    actor_opt: T.Adam
    critic_opt: T.Adam
    rng: np.random.Generator
    iteration: int = 0
    records: list[MetricsRecord] = field(default_factory=list)


def _streams(seed: int):
    init, trainer, envs = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(init), np.random.default_rng(trainer), envs


def build(cfg: TrainConfig) -> TrainState:
    """Freshly initialized networks and optimizers for ``cfg``."""
    init_rng, rng, _ = _streams(cfg.seed)
    probe = Env(cfg.env, 0)
    if probe.discrete:
        actor = P.CategoricalPolicyParams.init(probe.obs_dim, probe.n_actions, cfg.hidden, init_rng)
    else:
        actor = P.GaussianPolicyParams.init(probe.obs_dim, probe.act_dim, cfg.hidden, init_rng, cfg.init_log_std)
    critic = C.CriticParams.init(probe.obs_dim, cfg.hidden, init_rng, value_scale=cfg.value_scale)
    return TrainState(
        cfg,
        actor,
        critic,
        T.Adam(actor.parameters(), cfg.lr),
        T.Adam(critic.parameters(), cfg.lr),
        rng,
    )


def to_checkpoint(state: TrainState) -> Checkpoint:
    arrays: dict[str, np.ndarray] = {}
    for prefix, params in (("actor", state.actor.parameters()), ("critic", state.critic.parameters())):
        for i, p in enumerate(params):
            arrays[f"{prefix}/{i}"] = p.data.copy()
    for name, opt in (("adam_actor", state.actor_opt), ("adam_critic", state.critic_opt)):
        for i, (m, v) in enumerate(zip(opt.state.m, opt.state.v)):
            arrays[f"{name}/m/{i}"] = m.copy()
            arrays[f"{name}/v/{i}"] = v.copy()
    return Checkpoint(
        config=_config_dict(state.cfg),
        iteration=state.iteration,
        arrays=arrays,
        actor=state.actor.describe(),
        critic=state.critic.describe(),
        rng=state.rng.bit_generator.state,
        adam_t={"actor": state.actor_opt.state.t, "critic": state.critic_opt.state.t},
    )


def _config_dict(cfg: TrainConfig) -> dict:
    env = cfg.env.with_params(mdp=None) if cfg.env.env == "finite" else cfg.env
    return {**cfg.to_dict(), "env": env.to_dict()}


def from_checkpoint(ckpt: Checkpoint, env: EnvConfig | None = None) -> TrainState:
    """Rebuild networks, optimizer moments and the trainer rng from a checkpoint."""
    cfg_dict = dict(ckpt.config)
    if env is not None:
        cfg_dict["env"] = env
    cfg = TrainConfig.from_dict(cfg_dict)
    state = build(cfg)
    for params, prefix in ((state.actor.parameters(), "actor"), (state.critic.parameters(), "critic")):
        stored = ckpt.group(prefix)
        if len(stored) != len(params):
            raise ConfigError(f"checkpoint has {len(stored)} {prefix} arrays, architecture needs {len(params)}")
        for p, arr in zip(params, stored):
            if p.shape != arr.shape:
                raise ConfigError(f"{prefix} array shape {arr.shape} does not match {p.shape}")
            p.data = arr.copy()
    for name, opt in (("adam_actor", state.actor_opt), ("adam_critic", state.critic_opt)):
        m, v = ckpt.group(f"{name}/m"), ckpt.group(f"{name}/v")
        if m:
            opt.state = T.AdamState([a.copy() for a in m], [a.copy() for a in v], int(ckpt.adam_t.get(name[5:], 0)))
    state.critic.value_scale = float(ckpt.critic.get("value_scale", state.critic.value_scale))
    if ckpt.rng:
        state.rng.bit_generator.state = ckpt.rng
    state.iteration = ckpt.iteration
    return state


def _finite(x: float) -> bool:
    return math.isfinite(x)


def update(state: TrainState, rollout: P.Rollout) -> dict:
    """PPO epochs over one rollout. Returns mean losses and entropy."""
    cfg, rng = state.cfg, state.rng
    value_fn = P.cvar_value_fn(state.critic, cfg.eta, cfg.cvar_samples, rng)
    batch = P.gae_advantages(rollout, value_fn, cfg.gamma, cfg.lam, normalize=cfg.normalize_advantages)
    obs = rollout.flat("obs")
    next_obs = rollout.flat("next_obs")
    actions = rollout.flat("actions")
    rewards = rollout.flat("rewards")
    terminals = rollout.flat("terminals")
    m = obs.shape[0]
    actor_params = state.actor.parameters()
    critic_params = state.critic.parameters()
    n_actor = len(actor_params)
    stats = {"critic_loss": [], "policy_loss": [], "entropy": []}
    for _ in range(cfg.epochs):
        target = state.critic.frozen_copy()
        perm = rng.permutation(m)
        for start in range(0, m, cfg.minibatch):
            mb = perm[start : start + cfg.minibatch]
            tape = T.Tape().watch(*actor_params, *critic_params)
            with tape:
                lp = P.log_prob(state.actor, obs[mb], actions[mb])
                pl = P.ppo_clip_loss(batch, lp, cfg.clip, idx=mb)
                ent = P.entropy(state.actor, obs[mb])
                cl = C.critic_loss(state.critic, target, obs[mb], rewards[mb], next_obs[mb], terminals[mb],
                                   cfg.gamma, rng, cfg.n_fractions, cfg.n_fractions, cfg.kappa)
                total = T.add(T.sub(pl, T.mul(ent, cfg.entropy_coef)), cl)
            if not _finite(total.item()):
                raise FloatingPointError(f"non-finite loss (policy {pl.item()}, critic {cl.item()})")
            grads = T.backward(tape, total)
            ga, _ = T.clip_grad_norm(grads[:n_actor], cfg.max_grad_norm)
            gc, _ = T.clip_grad_norm(grads[n_actor:], cfg.max_grad_norm)
            state.actor_opt.step(ga)
            state.critic_opt.step(gc)
            stats["critic_loss"].append(cl.item())
            stats["policy_loss"].append(pl.item())
            stats["entropy"].append(ent.item())
    return {k: float(np.mean(v)) for k, v in stats.items()}


def _record(state: TrainState, log_: EpisodeLog, losses: dict, rollout: P.Rollout) -> MetricsRecord:
    rec = MetricsRecord(iteration=state.iteration, episodes=len(log_.returns), **losses)
    if log_.returns:
        rets = np.array(log_.returns)
        rec.mean_return = float(rets.mean())
        rec.cvar05_return = risk.cvar_value(risk.EmpiricalDistribution(rets), 0.5)
        rec.risk_events_per_episode = float(np.mean(log_.events))
        rec.ttf = float(np.mean(log_.lengths)) / state.cfg.env.horizon
    sample = rollout.flat("obs")[:: max(1, rollout.rewards.size // 256)]
    iqrs = critic_iqr(state.critic, sample, 32)
    rec.iqr_mean, rec.iqr_max = float(iqrs.mean()), float(iqrs.max())
    return rec


def train(
    cfg: TrainConfig,
    out_dir: str | Path | None = None,
    callback: Callable[[TrainState, MetricsRecord], None] | None = None,
    state: TrainState | None = None,
) -> tuple[Checkpoint, list[MetricsRecord]]:
    """Run ``cfg.iterations`` collect/update rounds; fully determined by ``cfg.seed``.

    With ``out_dir`` the final checkpoint and the metrics files are written
    there. A non-finite loss writes ``aborted.ckpt`` (when ``out_dir`` is set)
    and raises :class:`TrainingAborted`.
    """
    state = state or build(cfg)
    _, _, env_seq = _streams(cfg.seed)
    collector = Collector(cfg.env, cfg.n_envs, env_seq)
    for _ in range(cfg.iterations):
        rollout, ep_log = collector.collect(state.actor, cfg.steps)
        try:
            losses = update(state, rollout)
        except FloatingPointError as exc:
            path = to_checkpoint(state).save(Path(out_dir) / "aborted.ckpt") if out_dir else None
            raise TrainingAborted(f"iteration {state.iteration}: {exc}", path) from exc
        state.iteration += 1
        rec = _record(state, ep_log, losses, rollout)
        state.records.append(rec)
        log.info("iter %d return %.3f cvar %.3f critic %.4f", rec.iteration, rec.mean_return, rec.cvar05_return,
                 rec.critic_loss)
        if callback is not None:
            callback(state, rec)
    ckpt = to_checkpoint(state)
    if out_dir is not None:
        run_dir = export_metrics(state.records, out_dir, cfg.seed)
        ckpt.save(run_dir / "final.ckpt")
    return ckpt, state.records


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalReport:
    episodes: int
    mean_return: float
    q25: float
    q50: float
    q75: float
    cvar05: float
    risk_events: float
    ttf: float
    fall_rate: float
    returns: np.ndarray = field(repr=False, default=None)
    batch: EpisodeBatch | None = field(repr=False, default=None)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in ("episodes", "mean_return", "q25", "q50", "q75", "cvar05", "risk_events", "ttf", "fall_rate")}


def report_from_batch(batch: EpisodeBatch) -> EvalReport:
    d = risk.EmpiricalDistribution(batch.returns)
    return EvalReport(
        episodes=len(batch.returns),
        mean_return=float(batch.returns.mean()),
        q25=float(risk.quantile_at(d, 0.25)),
        q50=float(risk.quantile_at(d, 0.5)),
        q75=float(risk.quantile_at(d, 0.75)),
        cvar05=risk.cvar_value(d, 0.5),
        risk_events=float(batch.events.mean()),
        ttf=float(batch.lengths.mean()) / batch.horizon,
        fall_rate=float(batch.falls.mean()),
        returns=batch.returns,
        batch=batch,
    )


def _check_env(state: TrainState, env_cfg: EnvConfig) -> None:
    probe = Env(env_cfg, 0)
    if probe.obs_dim != state.actor.obs_dim:
        raise ConfigError(f"environment observations have width {probe.obs_dim}, checkpoint expects {state.actor.obs_dim}")


def evaluate(ckpt: Checkpoint | TrainState, env_cfg: EnvConfig | None = None, episodes: int = 100, seed: int = 0,
             trace: bool = False) -> EvalReport:
    """Greedy/mean-action episodes with seeded environments."""
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    state = ckpt if isinstance(ckpt, TrainState) else from_checkpoint(ckpt)
    env_cfg = env_cfg or state.cfg.env
    _check_env(state, env_cfg)
    return report_from_batch(run_episodes(PolicyAgent(state.actor), env_cfg, episodes, seed, trace=trace))


def compare(
    ckpts: Sequence[Checkpoint | TrainState],
    env_cfg: EnvConfig,
    episodes: int,
    seed: int = 0,
    names: Sequence[str] | None = None,
    meta: tuple[Checkpoint | TrainState, Checkpoint | TrainState, MetaConfig] | None = None,
) -> list[dict]:
    """Worst/middle/best-case (0.25/0.5/0.75 quantile) returns over shared seeds."""
    if len(ckpts) < 2:
        raise ConfigError("compare needs at least two checkpoints")
    names = list(names) if names is not None else [f"ckpt{i}" for i in range(len(ckpts))]
    rows = []
    for name, ck in zip(names, ckpts):
        rep = evaluate(ck, env_cfg, episodes, seed)
        rows.append({"name": name, **rep.row()})
    if meta is not None:
        neutral, averse, mcfg = meta
        ns = neutral if isinstance(neutral, TrainState) else from_checkpoint(neutral)
        av = averse if isinstance(averse, TrainState) else from_checkpoint(averse)
        _check_env(ns, env_cfg)
        agent = MetaAgent(ns.actor, av.actor, ns.critic, mcfg)
        rep = report_from_batch(run_episodes(agent, env_cfg, episodes, seed))
        rows.append({"name": "meta", **rep.row()})
    return rows


def format_table(rows: list[dict], sep: str = "\t") -> str:
    if not rows:
        return ""
    keys = list(rows[0])
    out = [sep.join(keys)]
    for r in rows:
        out.append(sep.join(f"{r[k]:.6g}" if isinstance(r[k], float) else str(r[k]) for k in keys))
    return "\n".join(out) + "\n"
