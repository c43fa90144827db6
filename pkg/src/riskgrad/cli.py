"""Command line entry point: ``riskgrad {train,evaluate,compare,calibrate,oracle}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import oracle as O
from .checkpoint import Checkpoint
from .config import env_from_dict, load_config
from .envs import PRESETS, cliff_to_mdp
from .errors import ConfigError, RiskgradError, TrainingAborted
from .meta import MetaConfig, calibrate_threshold
from .trainer import compare, evaluate, format_table, from_checkpoint, train

log = logging.getLogger("riskgrad")


def _env_for(args, ckpt: Checkpoint | None = None):
    """Environment from --env/--config, else the one stored in the checkpoint."""
    if args.config is not None:
        return load_config(args.config, env_name=args.env).env
    if args.env is not None:
        return PRESETS[args.env]() if args.env in PRESETS else env_from_dict({"env": args.env})
    if ckpt is not None:
        return env_from_dict(ckpt.config["env"])
    return PRESETS["cliff"]()


def cmd_train(args) -> int:
    cfg = load_config(args.config, seed=args.seed, eta=args.eta, env_name=args.env, iterations=args.iterations)
    try:
        ckpt, records = train(cfg, out_dir=args.out)
    except TrainingAborted as exc:
        print(f"training aborted: {exc}; checkpoint at {exc.checkpoint_path}", file=sys.stderr)
        raise
    runs = sorted(Path(args.out).glob(f"*-seed{cfg.seed}"))
    print(runs[-1] / "final.ckpt")
    return 0


def cmd_evaluate(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    env = _env_for(args, ckpt)
    rep = evaluate(ckpt, env, args.episodes, args.seed)
    print(format_table([rep.row()]), end="")
    return 0


def cmd_compare(args) -> int:
    if len(args.ckpt) < 2:
        raise ConfigError("compare needs --ckpt at least twice")
    ckpts = [Checkpoint.load(p) for p in args.ckpt]
    env = _env_for(args, ckpts[0])
    meta = None
    if args.threshold is not None:
        meta = (ckpts[0], ckpts[1], MetaConfig(args.threshold))
    rows = compare(ckpts, env, args.episodes, args.seed, names=[str(p) for p in args.ckpt], meta=meta)
    table = format_table(rows)
    print(table, end="")
    if args.out is not None:
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / "compare.tsv").write_text(table)
            with open(out / "compare.jsonl", "w") as fh:
                fh.write(json.dumps({"schema": "riskgrad.compare", "version": 1, "fields": list(rows[0])}) + "\n")
                for r in rows:
                    fh.write(json.dumps(r) + "\n")
        except OSError as exc:
            raise RiskgradError(f"cannot write comparison under {out}: {exc}") from exc
    return 0


def cmd_calibrate(args) -> int:
    ckpt = Checkpoint.load(args.ckpt)
    env = _env_for(args, ckpt)
    if env.env == "racetrack":
        env = env.with_params(segments="safe")
    state = from_checkpoint(ckpt)
    print(f"{calibrate_threshold(state.critic, env, state.actor, args.episodes, args.seed):.10g}")
    return 0


def cmd_oracle(args) -> int:
    eta = 0.5 if args.eta is None else args.eta
    gamma = args.gamma
    arm = O.two_arm_mdp()
    picks = {e: int(O.brute_force_cvar_policy(arm, e).policy[0]) for e in (1.0, eta)}
    print(f"two_arm\teta=1 action={picks[1.0]}\teta={eta:g} action={picks[eta]}")
    env = _env_for(args)
    if env.env != "cliff":
        raise ConfigError("the oracle suite runs on the cliff environment")
    mdp = cliff_to_mdp(env, gamma)
    _, pi = O.policy_iteration(mdp)
    sol = O.solve_return_distribution(mdp, pi)
    print(f"cliff\tmean={sol.mean()[0]:.6g}\tcvar{eta:g}={sol.cvar(0, eta):.6g}\titerations={sol.iterations}")
    rng = np.random.default_rng(args.seed)
    for e in (1.0, eta):
        res = O.brute_force_cvar_policy(mdp, e, search="sample", rng=rng)
        print(f"cliff_policy\teta={e:g}\tvalue={res.value:.6g}\t" + "".join("udlr"[a] for a in res.policy))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="riskgrad", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, ckpt=False, many=False):
        sp.add_argument("--config", type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--env", choices=sorted(PRESETS))
        sp.add_argument("--eta", type=float)
        sp.add_argument("--out", type=Path)
        sp.add_argument("--episodes", type=int, default=100)
        if many:
            sp.add_argument("--ckpt", action="append", default=[], type=Path)
        elif ckpt:
            sp.add_argument("--ckpt", type=Path, required=True)

    t = sub.add_parser("train", help="train an agent")
    common(t)
    t.add_argument("--iterations", type=int)
    t.set_defaults(func=cmd_train, out=Path("runs"))
    e = sub.add_parser("evaluate", help="evaluate a checkpoint")
    common(e, ckpt=True)
    e.set_defaults(func=cmd_evaluate)
    c = sub.add_parser("compare", help="quantile-of-return table for several checkpoints")
    common(c, many=True)
    c.add_argument("--threshold", type=float, help="add a meta-controller row (first ckpt neutral, second averse)")
    c.set_defaults(func=cmd_compare)
    k = sub.add_parser("calibrate", help="IQR threshold from SAFE-only episodes")
    common(k, ckpt=True)
    k.set_defaults(func=cmd_calibrate)
    o = sub.add_parser("oracle", help="exact dynamic-programming checks on the cliff")
    common(o)
    o.add_argument("--gamma", type=float, default=0.9)
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.seed is None and args.command != "train":
        args.seed = 0
    try:
        return args.func(args)
    except RiskgradError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
