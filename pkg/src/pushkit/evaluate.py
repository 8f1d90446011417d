"""Benchmark fixtures, episode benchmarks, and controller comparisons.

Success metrics live in the metrics module and are re-exported here.  This
module adds the standard fixture objects (measured mass/size plus friction
force converted to a sliding coefficient), the seeded benchmark scenario
distribution, adapters that turn the model-based controller, the learned
baseline, and a random pusher into a common callable shape, the benchmark
runner, and the history-length vs horizon sweep.

Every (object, episode) pair derives its own random generator from the
benchmark seed, so reports do not depend on execution order and identical
seeds give identical reports.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from .control import ControllerConfig, GoalSpec, control_episode
from .dataset import Episode, run_episode, sample_pose, save_episodes
from .geometry import Pose2D, wrap_angle
from .metrics import (LOOSE, MID, TIERS, TIGHT, FinalError, ThresholdTier,
                      final_error, score, success)
from .model import ModelWeights
from .policy import AgentWeights, mdp_state, policy_action
from .sim import GRAVITY, ObjectParams, PushEnv, SimConfig, behind_boundary_offset

__all__ = [
    "FIXTURES", "FinalError", "ThresholdTier", "TIGHT", "MID", "LOOSE", "TIERS",
    "final_error", "success", "score", "BenchmarkReport", "ObjectResult",
    "benchmark_scenario", "run_benchmark", "sweep_kt", "format_report",
    "save_report", "save_traces", "format_sweep", "save_sweep",
    "make_model_controller", "make_policy_controller", "random_controller",
]

# friction probes on the fixture objects read a pulling force in newtons;
# dividing by weight recovers the sliding coefficient, clipped to the
# randomization range; rotational friction and damping are unmeasured and
# sit at the middle of their randomization ranges
FIXTURE_MU_ROT = 0.0055
FIXTURE_DAMPING = 0.0125

BENCH_MIN_DIST = 0.08
BENCH_MAX_DIST = 0.13
BENCH_MAX_TURN = 0.3


def _fixture(mass: float, length: float, width: float, friction_n: float) -> ObjectParams:
    mu = float(np.clip(friction_n / (mass * GRAVITY), 0.1, 1.0))
    return ObjectParams(length=length, width=width, mass=mass, mu_slide=mu,
                        mu_rot=FIXTURE_MU_ROT, damping=FIXTURE_DAMPING)


# A-E are the measured evaluation objects; P is the fixed object the learned
# baseline trains on, nearly a twin of A
FIXTURES: Dict[str, ObjectParams] = {
    "A": _fixture(0.016, 0.116, 0.116, 0.05),
    "B": _fixture(0.615, 0.168, 0.237, 1.4),
    "C": _fixture(0.565, 0.198, 0.198, 1.1),
    "D": _fixture(0.587, 0.166, 0.228, 1.8),
    "E": _fixture(0.506, 0.153, 0.462, 0.9),
    "P": _fixture(0.015, 0.120, 0.120, 0.05),
}


def benchmark_scenario(params: ObjectParams, rng: np.random.Generator,
                       cfg: SimConfig = SimConfig()) -> Tuple[Pose2D, Pose2D, np.ndarray]:
    """Start pose, reachable goal pose, and pusher offset for one episode.

    Goals sit 0.08 to 0.13 m away at a uniform bearing with a bounded
    heading change, so a 60-push episode has enough slack to solve them.
    """
    for _ in range(1000):
        start = sample_pose(params, rng, cfg)
        dist = rng.uniform(BENCH_MIN_DIST, BENCH_MAX_DIST)
        bearing = rng.uniform(-np.pi, np.pi)
        goal = Pose2D(start.x + dist * np.cos(bearing),
                      start.y + dist * np.sin(bearing),
                      wrap_angle(start.theta + rng.uniform(-BENCH_MAX_TURN, BENCH_MAX_TURN)))
        margin = float(np.hypot(params.half_length, params.half_width))
        if np.all(np.abs(goal.xy) <= cfg.workspace_half - margin):
            return start, goal, behind_boundary_offset(params, start, goal)
    raise RuntimeError("could not place a benchmark scenario in the workspace")


# a controller drives a freshly reset environment toward one goal
Controller = Callable[[PushEnv, Pose2D, np.random.Generator], Episode]


def make_model_controller(weights: ModelWeights, cfg: ControllerConfig) -> Controller:
    def run(env: PushEnv, goal: Pose2D, rng: np.random.Generator) -> Episode:
        return control_episode(env, weights, GoalSpec(goal), cfg, rng)
    return run


def make_policy_controller(agent: AgentWeights, max_steps: int = 60) -> Controller:
    def source(world, goal, rng):
        return policy_action(agent, mdp_state(world, goal), explore=False)

    def run(env: PushEnv, goal: Pose2D, rng: np.random.Generator) -> Episode:
        return run_episode(env, goal, source, rng, max_steps)
    return run


def random_controller(push_magnitude: float = 0.005, max_steps: int = 60) -> Controller:
    """Uniformly random push directions; the floor any controller must beat."""
    def source(world, goal, rng):
        ang = rng.uniform(-np.pi, np.pi)
        return push_magnitude * np.array([np.cos(ang), np.sin(ang)])

    def run(env: PushEnv, goal: Pose2D, rng: np.random.Generator) -> Episode:
        return run_episode(env, goal, source, rng, max_steps)
    return run


@dataclass(frozen=True)
class ObjectResult:
    name: str
    errors: Tuple[FinalError, ...]
    scores: Tuple[float, ...]
    success_rates: Tuple[float, ...]  # aligned with TIERS
    episodes: Tuple[Episode, ...]

    @property
    def mean_score(self) -> float:
        return float(np.mean(self.scores))

    def rate(self, tier: ThresholdTier) -> float:
        return self.success_rates[TIERS.index(tier)]


@dataclass(frozen=True)
class BenchmarkReport:
    results: Tuple[ObjectResult, ...]
    n_episodes: int
    seed: int
    config_hash: str

    @property
    def mean_score(self) -> float:
        return float(np.mean([s for r in self.results for s in r.scores]))

    def result(self, name: str) -> ObjectResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)


def _normalize_objects(objects) -> List[Tuple[str, ObjectParams]]:
    if isinstance(objects, Mapping):
        pairs = list(objects.items())
    else:
        pairs = list(objects)
    if not pairs:
        raise ValueError("object set must be non-empty")
    return sorted(pairs, key=lambda kv: kv[0])


def run_benchmark(controller: Controller, objects, n_episodes: int, seed: int,
                  cfg: SimConfig = SimConfig(), config_hash: str = "",
                  scenario=benchmark_scenario) -> BenchmarkReport:
    """n_episodes seeded scenarios per object, scored against all tiers."""
    pairs = _normalize_objects(objects)
    results = []
    for oi, (name, params) in enumerate(pairs):
        errors: List[FinalError] = []
        scores: List[float] = []
        hits = np.zeros(len(TIERS))
        episodes: List[Episode] = []
        for ei in range(n_episodes):
            rng = np.random.default_rng(np.random.SeedSequence((seed, oi, ei)))
            start, goal, offset = scenario(params, rng, cfg)
            env = PushEnv(params, cfg)
            env.reset(start, goal, offset)
            episode = controller(env, goal, rng)
            err = final_error(episode.final_state.object_pose, goal)
            errors.append(err)
            scores.append(score(err))
            hits += [1.0 if success(err, tier) else 0.0 for tier in TIERS]
            episodes.append(episode)
        results.append(ObjectResult(name, tuple(errors), tuple(scores),
                                    tuple(hits / n_episodes), tuple(episodes)))
    return BenchmarkReport(tuple(results), n_episodes, seed, config_hash)


def sweep_kt(weights_by_k: Mapping[int, ModelWeights], t_values: Sequence[int],
             objects, n_episodes: int, seed: int, base: ControllerConfig,
             cfg: SimConfig = SimConfig(), config_hash: str = "",
             scenario=benchmark_scenario) -> Dict[Tuple[int, int], float]:
    """Mean benchmark score per (history length, horizon) cell.

    Each history length uses its own trained model (window length is baked
    into the training data).  All cells replay identical scenarios because
    episode seeding does not involve the cell coordinates.
    """
    grid: Dict[Tuple[int, int], float] = {}
    for k in sorted(weights_by_k):
        for t in t_values:
            ctl = replace(base, history=k, horizon=int(t))
            controller = make_model_controller(weights_by_k[k], ctl)
            report = run_benchmark(controller, objects, n_episodes, seed, cfg,
                                   config_hash, scenario)
            grid[(k, int(t))] = report.mean_score
    return grid


# ---------------------------------------------------------------------------
# report rendering

def _f(x: float) -> str:
    return f"{x:.9g}"


def format_report(report: BenchmarkReport) -> str:
    lines = [f"{'object':<8}{'tight':>8}{'mid':>8}{'loose':>8}{'score':>12}"]
    for r in report.results:
        t, m, lo = r.success_rates
        lines.append(f"{r.name:<8}{t:>8.2f}{m:>8.2f}{lo:>8.2f}{r.mean_score:>12.4g}")
    lines.append(f"overall mean score {_f(report.mean_score)} "
                 f"({report.n_episodes} episodes/object, seed {report.seed})")
    return "\n".join(lines)


def save_report(path, report: BenchmarkReport) -> None:
    """Machine-readable benchmark report.

    Line schema: header ``pushbench 1 <config_hash> <seed> <n_episodes>``;
    one ``O <name> <tight> <mid> <loose> <mean_score>`` per object; one
    ``E <name> <index> <ex> <ey> <etheta> <score> <tight> <mid> <loose>``
    per episode.  All numbers use 9-significant-digit rendering.
    """
    lines = [f"pushbench 1 {report.config_hash or '-'} {report.seed} {report.n_episodes}"]
    for r in report.results:
        t, m, lo = (_f(v) for v in r.success_rates)
        lines.append(f"O {r.name} {t} {m} {lo} {_f(r.mean_score)}")
    for r in report.results:
        for i, (err, sc) in enumerate(zip(r.errors, r.scores)):
            flags = " ".join("1" if success(err, tier) else "0" for tier in TIERS)
            lines.append(f"E {r.name} {i} {_f(err.ex)} {_f(err.ey)} "
                         f"{_f(err.etheta)} {_f(sc)} {flags}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def save_traces(path, report: BenchmarkReport) -> None:
    episodes = [ep for r in report.results for ep in r.episodes]
    save_episodes(path, episodes, report.config_hash)


def format_sweep(grid: Mapping[Tuple[int, int], float]) -> str:
    ks = sorted({k for k, _ in grid})
    ts = sorted({t for _, t in grid})
    lines = ["history\\horizon" + "".join(f"{t:>12}" for t in ts)]
    for k in ks:
        row = f"{k:<15}" + "".join(f"{grid[(k, t)]:>12.4g}" for t in ts)
        lines.append(row)
    return "\n".join(lines)


def save_sweep(path, grid: Mapping[Tuple[int, int], float], seed: int,
               config_hash: str = "") -> None:
    """Schema: ``pushsweep 1 <config_hash> <seed>`` then ``C <k> <t> <score>``."""
    lines = [f"pushsweep 1 {config_hash or '-'} {seed}"]
    for (k, t) in sorted(grid):
        lines.append(f"C {k} {t} {_f(grid[(k, t)])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
