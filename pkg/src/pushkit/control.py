"""Sampling-based receding-horizon pushing controller.

The controller keeps a short history buffer of observation tuples.  An
episode starts with ``history + 1`` straight warm-up pushes toward the goal
that fill the buffer (and the recurrent model's effective context).  After
that, every control iteration:

1. samples candidate action sequences around a nominal sequence,
2. rolls each candidate forward through the learned dynamics model on a
   cloned buffer, accumulating a weighted L1 pose cost against the goal,
3. takes the exponentially cost-weighted average of the candidates,
4. executes only the first averaged action and shifts the rest into the
   nominal sequence for the next iteration.

During rollouts the predicted pusher position is advanced kinematically with
the candidate action inside the predicted object frame; predicted tuples are
appended to the cloned buffer exactly like real observations would be.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .dataset import Episode, EpisodeStep, Terminal
from .geometry import Pose2D, rotate, wrap_angle
from .metrics import MID, ThresholdTier, final_error, success
from .model import ModelWeights, predict_batch
from .sim import PushAction, PushEnv, WorldState, observe_state_tuple


@dataclass(frozen=True)
class GoalSpec:
    """Target pose plus the per-component weights of the L1 step cost."""

    target: Pose2D
    weights: Tuple[float, float, float] = (1.0, 1.0, 0.5)


@dataclass(frozen=True)
class ControllerConfig:
    n_rollouts: int = 1024
    horizon: int = 5
    history: int = 4
    temperature: float = 0.1
    noise_sigma: float = 0.002
    push_magnitude: float = 0.005
    max_steps: int = 60
    initial_controls: Optional[Tuple[PushAction, ...]] = None
    dump_rollouts: Optional[str] = None
    # early-termination threshold; None runs every episode to max_steps
    stop_tier: Optional[ThresholdTier] = MID

    def __post_init__(self):
        if self.n_rollouts < 1 or self.horizon < 1 or self.history < 1:
            raise ValueError("n_rollouts, horizon and history must be >= 1")
        if self.temperature <= 0.0:
            raise ValueError("temperature must be positive")
        if self.noise_sigma <= 0.0:
            raise ValueError("noise_sigma must be positive")
        if self.push_magnitude <= 0.0:
            raise ValueError("push_magnitude must be positive")
        if self.initial_controls is not None and len(self.initial_controls) != self.history + 1:
            raise ValueError(
                f"initial_controls must hold exactly {self.history + 1} actions")


class HistoryBuffer:
    """Bounded FIFO of observation tuples with cheap cloning.

    Entries are stored as immutable (7,) float arrays; clones share the row
    arrays, so cloning cost does not scale with the tuple payload.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._rows: deque = deque(maxlen=capacity)

    def append(self, obs) -> None:
        row = obs.as_array() if hasattr(obs, "as_array") else np.asarray(obs, dtype=float)
        if row.shape != (7,):
            raise ValueError(f"observation row must have shape (7,), got {row.shape}")
        row = row.copy()
        row.flags.writeable = False
        self._rows.append(row)

    def __len__(self) -> int:
        return len(self._rows)

    def window(self, n: int) -> np.ndarray:
        """The most recent n rows, oldest first, as an (n, 7) array."""
        if n > len(self._rows):
            raise ValueError(f"buffer holds {len(self._rows)} rows, requested {n}")
        rows = list(self._rows)[len(self._rows) - n:]
        return np.stack(rows)

    def clone(self) -> "HistoryBuffer":
        out = HistoryBuffer(self.capacity)
        out._rows = deque(self._rows, maxlen=self.capacity)
        return out


def straight_controls(state: WorldState, goal: Pose2D, cfg: ControllerConfig) -> PushAction:
    """A straight push toward the goal, in the current object frame."""
    bearing = goal.xy - state.object_pose.xy
    norm = float(np.hypot(bearing[0], bearing[1]))
    if norm < 1e-12:
        d = np.array([1.0, 0.0])
    else:
        d = rotate(bearing / norm, -state.object_pose.theta)
    return PushAction((d[0], d[1]), cfg.push_magnitude)


def warm_up(env: PushEnv, goal: GoalSpec, cfg: ControllerConfig):
    """Execute the history+1 initial pushes and fill the history buffer.

    Returns (buffer, executed steps, previous world state).  Contact loss
    during warm-up simply records zero-increment tuples.
    """
    buffer = HistoryBuffer(max(cfg.history + 1, 8))
    steps: List[EpisodeStep] = []
    prev = env.state
    state = env.state
    for j in range(cfg.history + 1):
        if cfg.initial_controls is not None:
            action = cfg.initial_controls[j]
        else:
            action = straight_controls(state, goal.target, cfg)
        obs = observe_state_tuple(prev, state, action)
        buffer.append(obs)
        new_state = env.step(action)
        steps.append((state, action, obs))
        prev = state
        state = new_state
    return buffer, steps, prev


def sample_rollouts(nominal: np.ndarray, cfg: ControllerConfig,
                    rng: np.random.Generator) -> np.ndarray:
    """N candidate sequences: nominal + iid Gaussian noise, renormalized.

    nominal: (horizon, 2) object-frame displacements.  Every returned action
    has norm exactly push_magnitude.
    """
    nom = np.asarray(nominal, dtype=float)
    if nom.shape != (cfg.horizon, 2):
        raise ValueError(f"nominal must have shape ({cfg.horizon}, 2), got {nom.shape}")
    raw = nom[None] + rng.normal(0.0, cfg.noise_sigma, (cfg.n_rollouts, cfg.horizon, 2))
    return _renormalize(raw, nom, cfg.push_magnitude)


def _renormalize(seqs: np.ndarray, fallback: np.ndarray, magnitude: float) -> np.ndarray:
    norms = np.linalg.norm(seqs, axis=-1, keepdims=True)
    degenerate = norms[..., 0] < 1e-12
    if np.any(degenerate):
        fb = np.broadcast_to(fallback, seqs.shape)
        seqs = np.where(degenerate[..., None], fb, seqs)
        norms = np.linalg.norm(seqs, axis=-1, keepdims=True)
    return seqs / norms * magnitude


def rollout_costs(weights: ModelWeights, buffer: HistoryBuffer, pending: np.ndarray,
                  current_pose: Pose2D, sequences: np.ndarray, goal: GoalSpec,
                  cfg: ControllerConfig) -> np.ndarray:
    """Predicted cost of each candidate sequence.

    ``pending`` holds the already-observed increments and pusher position of
    the current step (5 values); each candidate completes it with its first
    action to form the newest history row.  The model then alternates
    predict / append on a per-candidate window, integrating increments into
    a running predicted pose and accumulating the weighted L1 distance to the
    goal after every predicted step.
    """
    n, horizon, _ = sequences.shape
    base = buffer.window(cfg.history)  # (history, 7) completed rows
    pend = np.asarray(pending, dtype=float)
    if pend.shape != (5,):
        raise ValueError(f"pending observation must have 5 values, got {pend.shape}")
    windows = np.empty((n, cfg.history + 1, 7))
    windows[:, :cfg.history] = base
    windows[:, -1, :5] = pend
    windows[:, -1, 5:] = sequences[:, 0]

    poses = np.empty((n, 3))
    poses[:, 0] = current_pose.x
    poses[:, 1] = current_pose.y
    poses[:, 2] = current_pose.theta
    pushers = np.tile(pend[3:5], (n, 1))
    wx, wy, wt = goal.weights
    gx, gy, gth = goal.target.x, goal.target.y, goal.target.theta
    costs = np.zeros(n)
    for t in range(horizon):
        inc = predict_batch(weights, windows)  # (n, 3)
        cos_t = np.cos(poses[:, 2])
        sin_t = np.sin(poses[:, 2])
        poses[:, 0] += cos_t * inc[:, 0] - sin_t * inc[:, 1]
        poses[:, 1] += sin_t * inc[:, 0] + cos_t * inc[:, 1]
        poses[:, 2] = wrap_angle(poses[:, 2] + inc[:, 2])
        costs += (wx * np.abs(poses[:, 0] - gx)
                  + wy * np.abs(poses[:, 1] - gy)
                  + wt * np.abs(wrap_angle(poses[:, 2] - gth)))
        if t + 1 < horizon:
            act = sequences[:, t]
            shifted = pushers + act - inc[:, :2]
            cd = np.cos(-inc[:, 2])
            sd = np.sin(-inc[:, 2])
            pushers = np.stack([cd * shifted[:, 0] - sd * shifted[:, 1],
                                sd * shifted[:, 0] + cd * shifted[:, 1]], axis=1)
            rows = np.concatenate([inc, pushers, sequences[:, t + 1]], axis=1)
            windows = np.concatenate([windows[:, 1:], rows[:, None]], axis=1)
    return costs


def mppi_update(sequences: np.ndarray, costs: np.ndarray,
                cfg: ControllerConfig) -> np.ndarray:
    """Exponentially weighted average of the candidates, renormalized.

    Weights are exp(-(cost - min cost) / temperature), normalized to sum to
    one.  The averaged action of each step is scaled back to push_magnitude;
    a zero averaged vector falls back to the lowest-cost candidate's action.
    """
    c = np.asarray(costs, dtype=float)
    if not np.all(np.isfinite(c)):
        raise ValueError("rollout costs contain non-finite values")
    if sequences.shape[0] != c.shape[0]:
        raise ValueError("sequences and costs disagree on sample count")
    if sequences.shape[0] == 1:
        return sequences[0].copy()
    w = np.exp(-(c - c.min()) / cfg.temperature)
    w /= w.sum()
    avg = np.einsum("n,ntk->tk", w, sequences)
    best = sequences[int(np.argmin(c))]
    return _renormalize(avg, best, cfg.push_magnitude)


def _pending_from(prev: WorldState, curr: WorldState) -> np.ndarray:
    obs = observe_state_tuple(prev, curr, None)
    return obs.as_array()[:5]


def control_episode(env: PushEnv, weights: ModelWeights, goal: GoalSpec,
                    cfg: ControllerConfig, rng: np.random.Generator) -> Episode:
    """Run one pushing episode under the controller.

    Terminates when the object reaches the goal at cfg.stop_tier or when
    max_steps total pushes (warm-up included) have been executed; a None
    stop_tier always runs the full step budget.  Exactly one environment
    action is taken per control iteration.
    """
    tier = cfg.stop_tier
    start = env.state.object_pose
    if tier is not None and success(final_error(start, goal.target), tier):
        return Episode(env.params, start, goal.target, (), Terminal.GOAL_REACHED, env.state)

    buffer, steps, prev = warm_up(env, goal, cfg)
    nominal = np.tile(straight_controls(env.state, goal.target, cfg).vector,
                      (cfg.horizon, 1))
    terminal = Terminal.STEP_LIMIT
    dump = open(cfg.dump_rollouts, "w") if cfg.dump_rollouts else None
    try:
        while len(steps) < cfg.max_steps:
            state = env.state
            if tier is not None and success(final_error(state.object_pose, goal.target), tier):
                terminal = Terminal.GOAL_REACHED
                break
            pending = _pending_from(prev, state)
            sequences = sample_rollouts(nominal, cfg, rng)
            costs = rollout_costs(weights, buffer, pending, state.object_pose,
                                  sequences, goal, cfg)
            if dump is not None:
                dump.write(f"step {len(steps)}\n")
                for i in range(sequences.shape[0]):
                    flat = " ".join(f"{v:.9g}" for v in sequences[i].ravel())
                    dump.write(f"{costs[i]:.9g} {flat}\n")
            optimal = mppi_update(sequences, costs, cfg)
            vec = optimal[0]
            action = PushAction((vec[0], vec[1]), cfg.push_magnitude)
            obs = observe_state_tuple(prev, state, action)
            buffer.append(obs)
            env.step(action)
            steps.append((state, action, obs))
            prev = state
            nominal = np.concatenate([optimal[1:], optimal[-1:]], axis=0)
        else:
            if tier is not None and success(final_error(env.state.object_pose, goal.target), tier):
                terminal = Terminal.GOAL_REACHED
    finally:
        if dump is not None:
            dump.close()
    return Episode(env.params, start, goal.target, tuple(steps), terminal, env.state)
