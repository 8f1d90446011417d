"""Trajectory collection, training-sequence extraction, and dataset files.

Episodes record, for every step, the pre-action world state, the action, and
the step's observation tuple, plus the post-episode final state.  Training
sequences are sliding windows of ``history + 1`` consecutive tuples whose
target is the object increments observed one step after the window.

Dataset files are line-oriented text: a header line carrying the format
version and the config hash, then exactly one episode per line.  All numbers
render with 9 significant digits.  The per-line grammar (space separated):

    P l w h mass mu_slide mu_rot damping
    S x y theta  G x y theta  T terminal  N n_steps
    n_steps blocks of:  W x y theta px py contact clamped
                        A dir_x dir_y magnitude
                        O dx dy dtheta px py ax ay
    F x y theta px py contact clamped
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, List, Sequence, Tuple

import numpy as np

from .geometry import Pose2D, rotate, wrap_angle
from .metrics import MID, final_error, success
from .sim import (
    ObjectParams,
    PushAction,
    PushEnv,
    SimConfig,
    StateTuple,
    WorldState,
    behind_boundary_offset,
    observe_state_tuple,
)

FORMAT_VERSION = 1

EPISODE_STEP_LIMIT = 60
MIN_GOAL_DISTANCE = 0.15

# Randomization ranges for training objects (length = width: squares)
SIDE_RANGE = (0.08, 0.25)
MASS_RANGE = (0.01, 0.8)
MU_SLIDE_RANGE = (0.1, 1.0)
MU_ROT_RANGE = (0.001, 0.01)
DAMPING_RANGE = (0.01, 0.015)
OBJECT_HEIGHT = 0.025

# an episode step: (pre-action world state, action, observation tuple)
EpisodeStep = Tuple[WorldState, PushAction, StateTuple]

# a collection policy: (current world state, goal) -> world-frame pusher displacement
ActionSource = Callable[[WorldState, Pose2D, np.random.Generator], np.ndarray]


class Terminal(Enum):
    GOAL_REACHED = "goal_reached"
    STEP_LIMIT = "step_limit"


@dataclass(frozen=True)
class Episode:
    params: ObjectParams
    start: Pose2D
    goal: Pose2D
    steps: Tuple[EpisodeStep, ...]
    terminal: Terminal
    final_state: WorldState

    def tuples(self) -> np.ndarray:
        """All observation tuples as an (n_steps, 7) array."""
        if not self.steps:
            return np.zeros((0, 7))
        return np.stack([s[2].as_array() for s in self.steps])


@dataclass(frozen=True)
class TrainingSequence:
    """A window of consecutive tuples and the increments that follow it."""

    window: np.ndarray  # (history + 1, 7)
    target: np.ndarray  # (3,)


def sample_object(rng: np.random.Generator) -> ObjectParams:
    """Draw one training object: a square with independent uniform physics."""
    side = float(rng.uniform(*SIDE_RANGE))
    return ObjectParams(
        length=side,
        width=side,
        mass=float(rng.uniform(*MASS_RANGE)),
        mu_slide=float(rng.uniform(*MU_SLIDE_RANGE)),
        mu_rot=float(rng.uniform(*MU_ROT_RANGE)),
        damping=float(rng.uniform(*DAMPING_RANGE)),
        height=OBJECT_HEIGHT,
    )


def sample_pose(params: ObjectParams, rng: np.random.Generator,
                cfg: SimConfig) -> Pose2D:
    """Uniform pose whose rectangle fits fully inside the workspace."""
    margin = math.hypot(params.half_length, params.half_width)
    half = cfg.workspace_half - margin
    if half <= 0:
        raise ValueError("object too large for the workspace")
    x, y = rng.uniform(-half, half, 2)
    theta = rng.uniform(-np.pi, np.pi)
    return Pose2D(float(x), float(y), float(theta))


def sample_start_goal(params: ObjectParams, rng: np.random.Generator,
                      cfg: SimConfig) -> Tuple[Pose2D, Pose2D]:
    """Start and goal, uniform in the workspace, at least 0.15 m apart."""
    start = sample_pose(params, rng, cfg)
    for _ in range(1000):
        goal = sample_pose(params, rng, cfg)
        if np.hypot(*(goal.xy - start.xy)) >= MIN_GOAL_DISTANCE:
            return start, goal
    raise RuntimeError("could not sample a goal far enough from the start")


def collect_episode(params: ObjectParams, generator: ActionSource,
                    rng: np.random.Generator, cfg: SimConfig = SimConfig(),
                    max_steps: int = EPISODE_STEP_LIMIT) -> Episode:
    """Roll one episode with the given action source.

    Start and goal are sampled uniformly in the workspace with the pusher
    placed on the object boundary opposite the goal bearing.  The episode
    ends when the object reaches the goal at the mid threshold tier or after
    ``max_steps`` pushes.
    """
    start, goal = sample_start_goal(params, rng, cfg)
    env = PushEnv(params, cfg)
    state = env.reset(start, goal, behind_boundary_offset(params, start, goal))
    return run_episode(env, goal, generator, rng, max_steps)


def run_episode(env: PushEnv, goal: Pose2D, generator: ActionSource,
                rng: np.random.Generator, max_steps: int = EPISODE_STEP_LIMIT) -> Episode:
    """Drive an already-reset environment with an action source."""
    state = env.state
    start = state.object_pose
    steps: List[EpisodeStep] = []
    prev = state
    terminal = Terminal.STEP_LIMIT
    for _ in range(max_steps):
        if success(final_error(state.object_pose, goal), MID):
            terminal = Terminal.GOAL_REACHED
            break
        disp = generator(state, goal, rng)
        action = env.push_world(disp)
        obs = observe_state_tuple(prev, state, action)
        new_state = env.step(action)
        steps.append((state, action, obs))
        prev = state
        state = new_state
    else:
        if success(final_error(state.object_pose, goal), MID):
            terminal = Terminal.GOAL_REACHED
    return Episode(env.params, start, goal, tuple(steps), terminal, state)


def build_training_set(episodes: Sequence[Episode], history: int) -> List[TrainingSequence]:
    """Every contiguous window of ``history + 1`` tuples with a successor.

    The target is the increment triple of the tuple immediately after the
    window, so an episode of n steps yields max(0, n - history - 1) windows.
    Episode order and in-episode order are preserved.
    """
    if history < 0:
        raise ValueError("history must be non-negative")
    win = history + 1
    out: List[TrainingSequence] = []
    for ep in episodes:
        arr = ep.tuples()
        n = arr.shape[0]
        for i in range(n - win):
            out.append(TrainingSequence(arr[i:i + win].copy(), arr[i + win, :3].copy()))
    return out


@dataclass(frozen=True)
class DatasetStats:
    count: int
    mean: np.ndarray  # (7,)
    std: np.ndarray  # (7,)
    min: np.ndarray  # (7,)
    max: np.ndarray  # (7,)


def dataset_stats(episodes: Sequence[Episode]) -> DatasetStats:
    """Per-channel statistics over every observation tuple of every episode."""
    arrays = [ep.tuples() for ep in episodes if ep.steps]
    if not arrays:
        raise ValueError("no observation tuples")
    flat = np.concatenate(arrays, axis=0)
    return DatasetStats(
        count=flat.shape[0],
        mean=flat.mean(axis=0),
        std=flat.std(axis=0),
        min=flat.min(axis=0),
        max=flat.max(axis=0),
    )


# ---------------------------------------------------------------------------
# serialization

def _f(x: float) -> str:
    return f"{float(x):.9g}"


def _world_fields(w: WorldState) -> List[str]:
    p = w.object_pose
    return [_f(p.x), _f(p.y), _f(p.theta), _f(w.pusher[0]), _f(w.pusher[1]),
            "1" if w.in_contact else "0", "1" if w.pusher_clamped else "0"]


def format_episode(ep: Episode) -> str:
    q = ep.params
    parts = ["P", _f(q.length), _f(q.width), _f(q.height), _f(q.mass),
             _f(q.mu_slide), _f(q.mu_rot), _f(q.damping),
             "S", _f(ep.start.x), _f(ep.start.y), _f(ep.start.theta),
             "G", _f(ep.goal.x), _f(ep.goal.y), _f(ep.goal.theta),
             "T", ep.terminal.value, "N", str(len(ep.steps))]
    for world, action, obs in ep.steps:
        parts.append("W")
        parts.extend(_world_fields(world))
        parts.extend(["A", _f(action.direction[0]), _f(action.direction[1]),
                      _f(action.magnitude)])
        parts.append("O")
        parts.extend(_f(v) for v in obs.as_array())
    parts.append("F")
    parts.extend(_world_fields(ep.final_state))
    return " ".join(parts)


class _Reader:
    def __init__(self, tokens: List[str], line_no: int):
        self.tokens = tokens
        self.pos = 0
        self.line_no = line_no

    def tag(self, expected: str):
        tok = self.next()
        if tok != expected:
            raise ValueError(f"line {self.line_no}: expected tag {expected!r}, got {tok!r}")

    def next(self) -> str:
        if self.pos >= len(self.tokens):
            raise ValueError(f"line {self.line_no}: truncated episode record")
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def floats(self, n: int) -> List[float]:
        return [float(self.next()) for _ in range(n)]


def _read_world(r: _Reader) -> WorldState:
    v = r.floats(5)
    contact = r.next() == "1"
    clamped = r.next() == "1"
    return WorldState(Pose2D(v[0], v[1], v[2]), (v[3], v[4]), contact, clamped)


def parse_episode(line: str, line_no: int = 0) -> Episode:
    r = _Reader(line.split(), line_no)
    r.tag("P")
    l, w, h, m, mus, mur, damp = r.floats(7)
    params = ObjectParams(length=l, width=w, mass=m, mu_slide=mus,
                          mu_rot=mur, damping=damp, height=h)
    r.tag("S")
    start = Pose2D(*r.floats(3))
    r.tag("G")
    goal = Pose2D(*r.floats(3))
    r.tag("T")
    terminal = Terminal(r.next())
    r.tag("N")
    n = int(r.next())
    steps = []
    for _ in range(n):
        r.tag("W")
        world = _read_world(r)
        r.tag("A")
        dx, dy, mag = r.floats(3)
        action = PushAction((dx, dy), mag)
        r.tag("O")
        obs = StateTuple(*r.floats(7))
        steps.append((world, action, obs))
    r.tag("F")
    final = _read_world(r)
    if r.pos != len(r.tokens):
        raise ValueError(f"line {line_no}: trailing tokens in episode record")
    return Episode(params, start, goal, tuple(steps), terminal, final)


def save_episodes(path, episodes: Sequence[Episode], config_hash: str):
    with open(path, "w") as fh:
        fh.write(f"pushdata {FORMAT_VERSION} {config_hash}\n")
        for ep in episodes:
            fh.write(format_episode(ep))
            fh.write("\n")


def load_episodes(path) -> Tuple[List[Episode], str]:
    """Read a dataset file; returns (episodes, config_hash)."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 3 or header[0] != "pushdata":
            raise ValueError(f"{path}: not a dataset file")
        if int(header[1]) != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {header[1]}")
        episodes = []
        for i, line in enumerate(fh):
            line = line.strip()
            if line:
                episodes.append(parse_episode(line, i + 2))
    return episodes, header[2]
