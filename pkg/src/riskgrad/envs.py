"""Small stochastic environments with Bernoulli risk-injected rewards.

Every step reports ``reward = task - penalty`` where the penalty sums, over
risk terms whose monitored scalar exceeds its threshold, the term weight
times an independent Bernoulli draw.

* ``cliff``: grid world whose short route runs along hazardous cliff-edge cells.
* ``pointmass``: 2-D velocity tracking with gusts and speed/acceleration risks.
* ``racetrack``: the point mass on a track of alternating SAFE/HAZARD segments.
* ``finite``: samples an explicit :class:`~riskgrad.oracle.FiniteMdp`.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from .errors import ConfigError

UP, DOWN, LEFT, RIGHT = range(4)
MOVES = {UP: (0, 1), DOWN: (0, -1), LEFT: (-1, 0), RIGHT: (1, 0)}
ACTION_NAMES = ("up", "down", "left", "right")

SAFE, HAZARD = 0, 1

CLIFF_SCALARS = ("hazard",)
POINTMASS_SCALARS = ("speed", "accel")


@dataclass(frozen=True)
class RiskSpec:
    """One penalty term: ``weight * 1{|scalar| > threshold} * Bernoulli(p)``."""

    index: str
    threshold: float
    weight: float
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"risk {self.index!r}: Bernoulli probability {self.p} outside [0, 1]")
        if self.weight < 0:
            raise ConfigError(f"risk {self.index!r}: negative weight {self.weight}")


def risk_penalty(scalars, specs: Sequence[RiskSpec], rng: np.random.Generator, p_scale: float = 1.0):
    """Sample the risk penalty for one step; returns ``(penalty, events)``.

    ``scalars`` maps monitored names to values. One Bernoulli draw is taken
    per term whose indicator is active, in the order of ``specs``.
    """
    penalty, events = 0.0, 0
    for spec in specs:
        if abs(scalars[spec.index]) > spec.threshold:
            if rng.random() < spec.p * p_scale:
                penalty += spec.weight
                events += 1
    return penalty, events


@dataclass
class EnvConfig:
    env: str = "cliff"
    horizon: int = 200
    weights: dict[str, float] = field(default_factory=dict)
    risks: list[RiskSpec] = field(default_factory=list)
    command: tuple[float, float] = (0.5, 1.0)
    heading: float | None = None
    seed: int = 0
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.risks = [r if isinstance(r, RiskSpec) else RiskSpec(**r) for r in self.risks]
        self.command = tuple(float(c) for c in self.command)
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if not all(math.isfinite(w) for w in self.weights.values()):
            raise ConfigError("reward weights must be finite")
        if self.env not in ENV_DEFAULTS:
            raise ConfigError(f"unknown environment {self.env!r}; expected one of {sorted(ENV_DEFAULTS)}")
        defaults = ENV_DEFAULTS[self.env]
        self.weights = {**defaults["weights"], **self.weights}
        self.params = {**defaults["params"], **self.params}
        allowed = defaults["scalars"]
        for r in self.risks:
            if allowed is not None and r.index not in allowed:
                raise ConfigError(f"risk monitors unknown scalar {r.index!r}; {self.env} exposes {allowed}")

    def replace(self, **changes) -> "EnvConfig":
        return dataclasses.replace(self, **changes)

    def with_params(self, **params) -> "EnvConfig":
        return dataclasses.replace(self, params={**self.params, **params})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["command"] = list(self.command)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown env config keys {sorted(unknown)}")
        return cls(**d)


ENV_DEFAULTS: dict[str, dict] = {
    "cliff": {
        "weights": {"step_cost": 0.01, "goal": 1.0},
        "params": {"width": 8, "height": 4, "slip": 0.1},
        "scalars": CLIFF_SCALARS,
    },
    "pointmass": {
        "weights": {"track": 1.0, "sigma": 0.25, "action": 0.002, "action_rate": 0.001, "fall": 10.0},
        "params": {
            "dt": 0.02,
            "accel_limit": 5.0,
            "action_scale": 5.0,
            "gust_interval": 25,
            "gust": 1.0,
            "fall_factor": 2.0,
            "fall_threshold": None,
            "disturbance_decay": 0.97,
        },
        "scalars": POINTMASS_SCALARS,
    },
    "racetrack": {
        "weights": {"track": 1.0, "sigma": 0.25, "action": 0.002, "action_rate": 0.001, "fall": 10.0},
        "params": {
            "dt": 0.02,
            "accel_limit": 5.0,
            "action_scale": 5.0,
            "gust_interval": 25,
            "gust": 1.0,
            "fall_factor": 2.0,
            "fall_threshold": None,
            "disturbance_decay": 0.97,
            "segment_length": 2.0,
            "segments": "alternate",
            "safe_gust": 0.0,
            "safe_risk": 0.0,
            "hazard_gust": 1.0,
            "hazard_risk": 1.0,
        },
        "scalars": POINTMASS_SCALARS,
    },
    "finite": {"weights": {}, "params": {"mdp": None, "start": 0}, "scalars": None},
}


@dataclass
class StepResult:
    state: Any
    obs: np.ndarray
    reward: float
    done: bool
    info: dict


# ---------------------------------------------------------------- cliff


def cliff_hazard(cell: tuple[int, int], cfg: EnvConfig) -> bool:
    x, y = cell
    return y == 0 and 0 < x < cfg.params["width"] - 1


def cliff_goal(cfg: EnvConfig) -> tuple[int, int]:
    return (cfg.params["width"] - 1, 0)


def cliff_move(cell: tuple[int, int], action: int, cfg: EnvConfig) -> tuple[int, int]:
    dx, dy = MOVES[int(action)]
    x = min(max(cell[0] + dx, 0), cfg.params["width"] - 1)
    y = min(max(cell[1] + dy, 0), cfg.params["height"] - 1)
    return (x, y)


def cliff_obs(cell: tuple[int, int], cfg: EnvConfig) -> np.ndarray:
    w, h = cfg.params["width"], cfg.params["height"]
    obs = np.zeros(w * h)
    obs[cell[1] * w + cell[0]] = 1.0
    return obs


def cliff_step(state: tuple[int, int], action: int, cfg: EnvConfig, rng: np.random.Generator) -> StepResult:
    """Grid transition with slip; entering a cliff-edge cell activates the ``hazard`` scalar."""
    if int(action) not in MOVES:
        raise ConfigError(f"cliff action must be one of 0..3, got {action}")
    taken = int(action)
    if rng.random() < cfg.params["slip"]:
        taken = int(rng.integers(4))
    nxt = cliff_move(state, taken, cfg)
    goal = nxt == cliff_goal(cfg)
    task = cfg.weights["goal"] if goal else -cfg.weights["step_cost"]
    penalty, events = risk_penalty({"hazard": 1.0 if cliff_hazard(nxt, cfg) else 0.0}, cfg.risks, rng)
    info = {"events": events, "task": task, "penalty": penalty, "terminal": goal, "taken": taken}
    return StepResult(nxt, cliff_obs(nxt, cfg), task - penalty, goal, info)


def cliff_step_batch(cells: np.ndarray, actions: np.ndarray, cfg: EnvConfig, rng: np.random.Generator):
    """Vectorized cliff dynamics for Monte-Carlo checks.

    ``cells`` is (M, 2). Returns (next cells, rewards, terminal flags). Draw
    order differs from :func:`cliff_step`, the law is the same.
    """
    m = cells.shape[0]
    w, h = cfg.params["width"], cfg.params["height"]
    slip = rng.random(m) < cfg.params["slip"]
    taken = np.where(slip, rng.integers(4, size=m), actions)
    delta = np.array([MOVES[a] for a in range(4)])[taken]
    nxt = np.empty_like(cells)
    nxt[:, 0] = np.clip(cells[:, 0] + delta[:, 0], 0, w - 1)
    nxt[:, 1] = np.clip(cells[:, 1] + delta[:, 1], 0, h - 1)
    goal = (nxt[:, 0] == w - 1) & (nxt[:, 1] == 0)
    hazard = (nxt[:, 1] == 0) & (nxt[:, 0] > 0) & (nxt[:, 0] < w - 1)
    task = np.where(goal, cfg.weights["goal"], -cfg.weights["step_cost"])
    penalty = np.zeros(m)
    for spec in cfg.risks:
        active = hazard.astype(np.float64) > spec.threshold
        hit = active & (rng.random(m) < spec.p)
        penalty += np.where(hit, spec.weight, 0.0)
    return nxt, task - penalty, goal


def cliff_to_mdp(cfg: EnvConfig, gamma: float):
    """Exact tabular model of the cliff environment (no time limit).

    State index is ``y * width + x``; the goal cell is terminal. Rewards are
    laws per (s, a, s') since the risk depends on the cell entered.
    """
    from .oracle import FiniteMdp

    w, h = cfg.params["width"], cfg.params["height"]
    n = w * h
    slip = cfg.params["slip"]
    goal = cliff_goal(cfg)
    P = np.zeros((n, 4, n))
    outcomes: dict[tuple[int, int, int], list[tuple[float, float]]] = {}
    for y in range(h):
        for x in range(w):
            s = y * w + x
            for a in range(4):
                for taken in range(4):
                    prob = (1.0 - slip) * (taken == a) + slip / 4.0
                    nx, ny = cliff_move((x, y), taken, cfg)
                    P[s, a, ny * w + nx] += prob
                for s2 in np.flatnonzero(P[s, a]):
                    cell = (int(s2) % w, int(s2) // w)
                    if cell == goal:
                        law = [(cfg.weights["goal"], 1.0)]
                    else:
                        active = [r for r in cfg.risks if (1.0 if cliff_hazard(cell, cfg) else 0.0) > r.threshold]
                        law = _penalty_law(-cfg.weights["step_cost"], active)
                    outcomes[(s, a, int(s2))] = law
    terminal = np.zeros(n, dtype=bool)
    terminal[goal[1] * w + goal[0]] = True
    return FiniteMdp.from_outcomes(P, outcomes, terminal, gamma)


def cliff_route(policy: Sequence[int], cfg: EnvConfig, start: tuple[int, int] = (0, 0)) -> list[int]:
    """State indices visited by a deterministic tabular policy under slip-free moves.

    Stops at the goal or when a state repeats; the goal itself is excluded.
    """
    w = cfg.params["width"]
    goal = cliff_goal(cfg)
    cell, seen = start, []
    while cell != goal and cell[1] * w + cell[0] not in seen:
        s = cell[1] * w + cell[0]
        seen.append(s)
        cell = cliff_move(cell, int(policy[s]), cfg)
    return seen


def _penalty_law(base: float, active: Sequence[RiskSpec]) -> list[tuple[float, float]]:
    law: dict[float, float] = {}
    for hits in itertools.product((0, 1), repeat=len(active)):
        prob, pen = 1.0, 0.0
        for hit, spec in zip(hits, active):
            prob *= spec.p if hit else 1.0 - spec.p
            pen += spec.weight if hit else 0.0
        if prob > 0:
            law[base - pen] = law.get(base - pen, 0.0) + prob
    return sorted(law.items())


# ---------------------------------------------------------------- point mass


@dataclass
class PointMassState:
    pos: np.ndarray
    vel: np.ndarray
    cmd: np.ndarray
    prev_action: np.ndarray
    disturbance: float = 0.0
    t: int = 0


def pointmass_obs(state: PointMassState) -> np.ndarray:
    return np.concatenate((state.vel, state.cmd, state.prev_action, [state.disturbance]))


POINTMASS_OBS_DIM = 7


def tracking_reward(v_cmd, v, sigma: float) -> float:
    diff = np.asarray(v_cmd, dtype=np.float64) - np.asarray(v, dtype=np.float64)
    return math.exp(-float(diff @ diff) / sigma)


def fall_speed(cfg: EnvConfig) -> float:
    if cfg.params.get("fall_threshold") is not None:
        return float(cfg.params["fall_threshold"])
    speed_risks = [r.threshold for r in cfg.risks if r.index == "speed"]
    return cfg.params["fall_factor"] * min(speed_risks) if speed_risks else math.inf


def pointmass_step(
    state: PointMassState,
    action,
    cfg: EnvConfig,
    rng: np.random.Generator,
    gust_scale: float = 1.0,
    risk_scale: float = 1.0,
) -> StepResult:
    """Semi-implicit Euler step of the gust-disturbed point mass.

    The acceleration is ``action * action_scale`` clamped to ``accel_limit``
    per axis, so policies act in normalized units.
    """
    p = cfg.params
    dt = p["dt"]
    raw = np.asarray(action, dtype=np.float64).reshape(2) * p["action_scale"]
    a = np.clip(raw, -p["accel_limit"], p["accel_limit"])
    vel = state.vel + a * dt
    t = state.t + 1
    impulse = np.zeros(2)
    if p["gust_interval"] > 0 and t % p["gust_interval"] == 0:
        draw = rng.uniform(-1.0, 1.0, size=2)
        impulse = draw * p["gust"] * gust_scale
        vel = vel + impulse
    pos = state.pos + vel * dt
    decay = p["disturbance_decay"]
    disturbance = decay * state.disturbance + float(np.hypot(impulse[0], impulse[1]))
    nxt = PointMassState(pos, vel, state.cmd, a, disturbance, t)

    weights = cfg.weights
    if not (np.all(np.isfinite(vel)) and np.all(np.isfinite(pos))):
        info = {"events": 0, "task": 0.0, "penalty": 0.0, "terminal": True, "fell": False, "nonfinite": True}
        return StepResult(nxt, pointmass_obs(state), 0.0, True, info)
    speed = float(np.hypot(vel[0], vel[1]))
    task = (
        weights["track"] * tracking_reward(state.cmd, vel, weights["sigma"])
        - weights["action"] * float(a @ a)
        - weights["action_rate"] * float((a - state.prev_action) @ (a - state.prev_action))
    )
    fell = speed > fall_speed(cfg)
    if fell:
        task -= weights["fall"]
    penalty, events = risk_penalty({"speed": speed, "accel": float(np.hypot(a[0], a[1]))}, cfg.risks, rng, risk_scale)
    info = {"events": events, "task": task, "penalty": penalty, "terminal": fell, "fell": fell, "nonfinite": False}
    return StepResult(nxt, pointmass_obs(nxt), task - penalty, fell, info)


def racetrack_segment(x: float, cfg: EnvConfig) -> int:
    mode = cfg.params["segments"]
    if mode == "safe":
        return SAFE
    if mode == "hazard":
        return HAZARD
    return HAZARD if int(math.floor(x / cfg.params["segment_length"])) % 2 == 1 else SAFE


def racetrack_step(state: PointMassState, action, cfg: EnvConfig, rng: np.random.Generator) -> StepResult:
    """Point-mass step whose gust size and risk probabilities depend on the track segment."""
    seg = racetrack_segment(float(state.pos[0]), cfg)
    p = cfg.params
    gust = p["hazard_gust"] if seg == HAZARD else p["safe_gust"]
    risk = p["hazard_risk"] if seg == HAZARD else p["safe_risk"]
    res = pointmass_step(state, action, cfg, rng, gust_scale=gust, risk_scale=risk)
    res.info["segment"] = seg
    return res


# ---------------------------------------------------------------- reset / env objects


def reset(cfg: EnvConfig, rng: np.random.Generator):
    """Initial internal state for ``cfg``; pointmass variants resample the command."""
    if cfg.env == "cliff":
        return (0, 0)
    if cfg.env in ("pointmass", "racetrack"):
        speed = rng.uniform(*cfg.command)
        heading = rng.uniform(0.0, 2.0 * math.pi) if cfg.heading is None else cfg.heading
        cmd = speed * np.array([math.cos(heading), math.sin(heading)])
        return PointMassState(np.zeros(2), np.zeros(2), cmd, np.zeros(2))
    if cfg.env == "finite":
        return int(cfg.params["start"])
    raise ConfigError(f"unknown environment {cfg.env!r}")


class Env:
    """Stateful wrapper: owns one config, one private rng stream and the time limit."""

    def __init__(self, cfg: EnvConfig, rng: np.random.Generator | int | None = None):
        self.cfg = cfg
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(cfg.seed if rng is None else rng)
        self.state = None
        self.t = 0
        if cfg.env == "finite" and cfg.params.get("mdp") is None:
            raise ConfigError("finite environment needs params.mdp")

    @property
    def discrete(self) -> bool:
        return self.cfg.env in ("cliff", "finite")

    @property
    def n_actions(self) -> int:
        if self.cfg.env == "cliff":
            return 4
        if self.cfg.env == "finite":
            return self.cfg.params["mdp"].n_actions
        return 0

    @property
    def act_dim(self) -> int:
        return 0 if self.discrete else 2

    @property
    def obs_dim(self) -> int:
        if self.cfg.env == "cliff":
            return self.cfg.params["width"] * self.cfg.params["height"]
        if self.cfg.env == "finite":
            return self.cfg.params["mdp"].n_states
        return POINTMASS_OBS_DIM

    def observe(self, state=None) -> np.ndarray:
        state = self.state if state is None else state
        if self.cfg.env == "cliff":
            return cliff_obs(state, self.cfg)
        if self.cfg.env == "finite":
            obs = np.zeros(self.obs_dim)
            obs[state] = 1.0
            return obs
        return pointmass_obs(state)

    def reset(self) -> np.ndarray:
        self.state = reset(self.cfg, self.rng)
        self.t = 0
        return self.observe()

    def step(self, action) -> StepResult:
        if self.state is None:
            raise ConfigError("step() before reset()")
        cfg = self.cfg
        if cfg.env == "cliff":
            res = cliff_step(self.state, action, cfg, self.rng)
        elif cfg.env == "pointmass":
            res = pointmass_step(self.state, action, cfg, self.rng)
        elif cfg.env == "racetrack":
            res = racetrack_step(self.state, action, cfg, self.rng)
        else:
            res = cfg.params["mdp"].sample_step(self.state, int(action), self.rng)
            res.obs = self.observe(res.state)
        self.state = res.state
        self.t += 1
        truncated = not res.done and self.t >= cfg.horizon
        res.info["truncated"] = truncated
        res.info.setdefault("terminal", res.done)
        res.done = res.done or truncated
        return res


# ---------------------------------------------------------------- presets


def cliff_config(**overrides) -> EnvConfig:
    """Cliff preset whose risk constants flip the CVaR-optimal route (see oracle tests)."""
    base = dict(env="cliff", horizon=200, risks=[RiskSpec("hazard", 0.5, 1.2, 0.02)])
    return EnvConfig(**{**base, **overrides})


def pointmass_config(**overrides) -> EnvConfig:
    base = dict(
        env="pointmass",
        horizon=500,
        command=(0.6, 1.4),
        risks=[RiskSpec("speed", 1.0, 5.0, 0.1), RiskSpec("accel", 4.5, 1.0, 0.1)],
    )
    return EnvConfig(**{**base, **overrides})


def racetrack_config(**overrides) -> EnvConfig:
    base = dict(
        env="racetrack",
        horizon=500,
        command=(0.6, 1.4),
        heading=0.0,
        risks=[RiskSpec("speed", 1.0, 5.0, 0.1), RiskSpec("accel", 4.5, 1.0, 0.1)],
    )
    return EnvConfig(**{**base, **overrides})


PRESETS = {"cliff": cliff_config, "pointmass": pointmass_config, "racetrack": racetrack_config}
