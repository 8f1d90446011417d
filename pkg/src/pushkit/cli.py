"""Command line entry point.

Subcommands cover the full workflow: collect a randomized pushing dataset,
train the dynamics model, train the model-free baseline, run the controller
against goal lists, sweep history length against rollout horizon, and run
the side-by-side benchmark.  Every command resolves one config file (INI,
strict schema) plus an optional seed override, stamps the config hash into
each output artifact, and is deterministic given (config, inputs, seed).

Exit codes: 0 success, 2 configuration error, 3 I/O or input-format error,
4 numeric divergence during training.
"""
from __future__ import annotations

import argparse
import multiprocessing
import sys
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .config import (SEED_DATASET, SEED_EVAL, SEED_MODEL, SEED_POLICY, SEED_PUSH,
                     SEED_SWEEP, Config, ConfigError, component_rng, derive_seed,
                     load_config)
from .control import ControllerConfig
from .dataset import (Episode, Terminal, build_training_set, collect_episode,
                      dataset_stats, load_episodes, save_episodes)
from .evaluate import (FIXTURES, TIERS, benchmark_scenario, final_error, format_report,
                       format_sweep, make_model_controller, make_policy_controller,
                       run_benchmark, save_report, save_sweep, save_traces, score,
                       success, sweep_kt)
from .geometry import Pose2D
from .model import DivergenceError, load_weights, save_weights, train
from .policy import (load_agent, mdp_state, save_agent, scripted_action, train_policy)
from .sim import PushEnv, SimError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4

# built-in goal trio for the push command when no goals file is given:
# left, middle, right of a straight-ahead start at the origin
DEFAULT_GOALS = ((0.18, 0.12, 0.3), (0.21, 0.0, 0.0), (0.18, -0.12, -0.3))


def _seed_int(cfg: Config, component: int) -> int:
    return int(derive_seed(cfg.seed, component).generate_state(1)[0])


def _say(msg: str) -> None:
    print(msg)


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


# ---------------------------------------------------------------------------
# collect

def _collect_object(task) -> List[Episode]:
    seed, oi, episodes_per_object, values = task
    cfg = Config(values)
    sim_cfg = cfg.sim_config()
    magnitude = cfg["control"]["push_magnitude"]
    params_rng = component_rng(seed, SEED_DATASET, oi)
    from .dataset import sample_object
    params = sample_object(params_rng)

    def source(world, goal, rng):
        return scripted_action(mdp_state(world, goal), rng, magnitude)

    out = []
    for ei in range(episodes_per_object):
        rng = component_rng(seed, SEED_DATASET, oi, ei)
        out.append(collect_episode(params, source, rng, sim_cfg,
                                   cfg["dataset"]["max_steps"]))
    return out


def cmd_collect(args, cfg: Config) -> int:
    n_objects = cfg["dataset"]["objects"]
    per_object = cfg["dataset"]["episodes_per_object"]
    tasks = [(cfg.seed, oi, per_object, cfg.values) for oi in range(n_objects)]
    if args.jobs > 1:
        with multiprocessing.Pool(args.jobs) as pool:
            grouped = pool.map(_collect_object, tasks)
    else:
        grouped = [_collect_object(t) for t in tasks]
    episodes = [ep for group in grouped for ep in group]
    save_episodes(args.out, episodes, cfg.hash)
    reached = sum(1 for ep in episodes if ep.terminal is Terminal.GOAL_REACHED)
    n_steps = sum(len(ep.steps) for ep in episodes)
    stats = dataset_stats(episodes)
    _say(f"config {cfg.hash}")
    _say(f"collected {len(episodes)} episodes over {n_objects} objects "
         f"({n_steps} steps, {reached} reached the goal)")
    with np.printoptions(precision=6, suppress=True):
        _say(f"tuple mean {stats.mean}")
        _say(f"tuple std  {stats.std}")
    _say(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train-model

def _write_curve(path, header_hash: str, rows: Sequence[Tuple[str, float, float]],
                 best: Optional[int] = None) -> None:
    lines = [f"pushcurve 1 {header_hash or '-'}"]
    for tag, a, b in rows:
        lines.append(f"{tag} {a:.9g} {b:.9g}")
    if best is not None:
        lines.append(f"B {best}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_train_model(args, cfg: Config) -> int:
    history = cfg["model"]["history"]
    if cfg["control"]["history"] != history:
        raise ConfigError(
            f"[control] history ({cfg['control']['history']}) does not match "
            f"[model] history ({history}); the controller window must equal "
            f"the training window")
    episodes, data_hash = load_episodes(args.data)
    if data_hash != cfg.hash:
        _warn(f"dataset hash {data_hash} differs from config hash {cfg.hash}")
    sequences = build_training_set(episodes, history)
    if not sequences:
        raise ConfigError(
            f"dataset yields no training windows for history {history}; "
            f"episodes must run at least history+2 steps")
    _say(f"config {cfg.hash}")
    _say(f"{len(sequences)} training windows from {len(episodes)} episodes")
    result = train(sequences, cfg.train_config(_seed_int(cfg, SEED_MODEL)))
    save_weights(args.out, result.weights, cfg.hash, history)
    rows = [("T", float(s), float(l)) for s, l in result.train_curve]
    rows += [("V", float(s), float(l)) for s, l in result.val_curve]
    curve_path = args.curve or (str(args.out) + ".curve")
    _write_curve(curve_path, cfg.hash, rows, result.best_step)
    _say(f"final train loss {result.train_curve[-1, 1]:.9g}, "
         f"best validation step {result.best_step}")
    _say(f"wrote {args.out} and {curve_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train-policy

def cmd_train_policy(args, cfg: Config) -> int:
    sim_cfg = cfg.sim_config()
    params = FIXTURES["P"]

    def factory(rng):
        start, goal, offset = benchmark_scenario(params, rng, sim_cfg)
        env = PushEnv(params, sim_cfg)
        env.reset(start, goal, offset)
        return env, goal

    _say(f"config {cfg.hash}")
    agent, curve = train_policy(factory, cfg.policy_config(_seed_int(cfg, SEED_POLICY)))
    save_agent(args.out, agent, cfg.hash)
    rows = [("E", float(ep), float(rate)) for ep, _, rate in curve]
    curve_path = args.curve or (str(args.out) + ".curve")
    _write_curve(curve_path, cfg.hash, rows)
    if len(curve):
        _say(f"trailing success rate {curve[-1, 2]:.3f} over the last "
             f"{min(100, len(curve))} episodes")
    _say(f"wrote {args.out} and {curve_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# push

def _load_goals(path) -> List[Tuple[Pose2D, Pose2D]]:
    """Goal list file: per line either 'gx gy gtheta' (start at origin) or
    'sx sy stheta gx gy gtheta'; blank lines and # comments ignored."""
    pairs = []
    with open(path) as fh:
        for ln, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ValueError(f"{path}:{ln}: non-numeric goal entry")
            if len(vals) == 3:
                pairs.append((Pose2D(0.0, 0.0, 0.0), Pose2D(*vals)))
            elif len(vals) == 6:
                pairs.append((Pose2D(*vals[:3]), Pose2D(*vals[3:])))
            else:
                raise ValueError(f"{path}:{ln}: expected 3 or 6 numbers")
    if not pairs:
        raise ValueError(f"{path}: no goals found")
    return pairs


def cmd_push(args, cfg: Config) -> int:
    weights, w_hash, w_history = load_weights(args.weights)
    ctl = cfg.controller_config()
    if w_history and w_history != ctl.history:
        raise ConfigError(
            f"weights were trained with history {w_history} but [control] "
            f"history is {ctl.history}")
    if w_hash != cfg.hash:
        _warn(f"weights hash {w_hash} differs from config hash {cfg.hash}")
    if args.goals:
        goals = _load_goals(args.goals)
    else:
        goals = [(Pose2D(0.0, 0.0, 0.0), Pose2D(*g)) for g in DEFAULT_GOALS]
    sim_cfg = cfg.sim_config()
    params = FIXTURES[cfg.push_object()]
    controller = make_model_controller(weights, ctl)
    from .sim import behind_boundary_offset
    episodes = []
    lines = [f"pushrun 1 {cfg.hash} {cfg.seed}"]
    _say(f"config {cfg.hash}")
    for gi, (start, goal) in enumerate(goals):
        rng = component_rng(cfg.seed, SEED_PUSH, gi)
        env = PushEnv(params, sim_cfg)
        env.reset(start, goal, behind_boundary_offset(params, start, goal))
        episode = controller(env, goal, rng)
        episodes.append(episode)
        err = final_error(episode.final_state.object_pose, goal)
        flags = " ".join("1" if success(err, tier) else "0" for tier in TIERS)
        lines.append(f"E {gi} {err.ex:.9g} {err.ey:.9g} {err.etheta:.9g} "
                     f"{score(err):.9g} {flags} {episode.terminal.value} "
                     f"{len(episode.steps)}")
        _say(f"goal {gi}: {episode.terminal.value} after {len(episode.steps)} steps, "
             f"errors ({err.ex:.4f}, {err.ey:.4f}, {err.etheta:.4f})")
    save_episodes(args.out, episodes, cfg.hash)
    report_path = args.report or (str(args.out) + ".report")
    with open(report_path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    _say(f"wrote {args.out} and {report_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep

def cmd_sweep(args, cfg: Config) -> int:
    weights_by_k = {}
    for path in args.weights:
        w, w_hash, history = load_weights(path)
        if not history:
            raise ConfigError(f"{path} does not record its training history")
        if history in weights_by_k:
            raise ConfigError(f"duplicate weights for history {history}")
        if w_hash != cfg.hash:
            _warn(f"{path}: weights hash {w_hash} differs from config {cfg.hash}")
        weights_by_k[history] = w
    t_values = [int(t) for t in args.horizons.split(",") if t.strip()]
    if not t_values or any(t < 1 for t in t_values):
        raise ConfigError(f"invalid horizon list {args.horizons!r}")
    objects = {n: FIXTURES[n] for n in cfg.eval_objects()}
    seed = _seed_int(cfg, SEED_SWEEP)
    _say(f"config {cfg.hash}")
    grid = sweep_kt(weights_by_k, t_values, objects, cfg["eval"]["episodes_per_object"],
                    seed, cfg.controller_config(), cfg.sim_config(), cfg.hash)
    save_sweep(args.out, grid, seed, cfg.hash)
    _say(format_sweep(grid))
    _say(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval

def cmd_eval(args, cfg: Config) -> int:
    weights, w_hash, w_history = load_weights(args.model_weights)
    agent, a_hash = load_agent(args.agent_weights)
    ctl = cfg.controller_config()
    if w_history and w_history != ctl.history:
        raise ConfigError(
            f"weights were trained with history {w_history} but [control] "
            f"history is {ctl.history}")
    hashes = {cfg.hash, w_hash, a_hash}
    if len(hashes) > 1:
        _warn(f"mixed config hashes across inputs: config {cfg.hash}, "
              f"model {w_hash}, agent {a_hash}")
    objects = {n: FIXTURES[n] for n in cfg.eval_objects()}
    n_ep = cfg["eval"]["episodes_per_object"]
    seed = _seed_int(cfg, SEED_EVAL)
    sim_cfg = cfg.sim_config()
    _say(f"config {cfg.hash}")
    model_report = run_benchmark(make_model_controller(weights, ctl), objects,
                                 n_ep, seed, sim_cfg, cfg.hash)
    policy_report = run_benchmark(make_policy_controller(agent, ctl.max_steps),
                                  objects, n_ep, seed, sim_cfg, cfg.hash)
    _say("model-based controller:")
    _say(format_report(model_report))
    _say("model-free baseline:")
    _say(format_report(policy_report))
    save_report(str(args.out) + ".model", model_report)
    save_report(str(args.out) + ".policy", policy_report)
    if args.traces:
        save_traces(str(args.out) + ".model.traces", model_report)
        save_traces(str(args.out) + ".policy.traces", policy_report)
    _say(f"wrote {args.out}.model and {args.out}.policy")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pushkit",
        description="Push-to-pose data collection, model training, and control.")
    parser.add_argument("--config", default=None, help="INI config file")
    parser.add_argument("--seed", type=int, default=None, help="override [run] seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="collect a randomized pushing dataset")
    p.add_argument("--out", default="dataset.txt")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train-model", help="train the dynamics model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="model.weights")
    p.add_argument("--curve", default=None)
    p.set_defaults(func=cmd_train_model)

    p = sub.add_parser("train-policy", help="train the model-free baseline")
    p.add_argument("--out", default="agent.weights")
    p.add_argument("--curve", default=None)
    p.set_defaults(func=cmd_train_policy)

    p = sub.add_parser("push", help="run the controller on a goal list")
    p.add_argument("--weights", required=True)
    p.add_argument("--goals", default=None)
    p.add_argument("--out", default="push_traces.txt")
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_push)

    p = sub.add_parser("sweep", help="score history-length/horizon combinations")
    p.add_argument("--weights", nargs="+", required=True,
                   help="one weights file per history length")
    p.add_argument("--horizons", default="3,4,5,6,7")
    p.add_argument("--out", default="sweep.txt")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("eval", help="side-by-side fixture benchmark")
    p.add_argument("--model-weights", required=True)
    p.add_argument("--agent-weights", required=True)
    p.add_argument("--out", default="benchmark")
    p.add_argument("--traces", action="store_true")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, SimError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
