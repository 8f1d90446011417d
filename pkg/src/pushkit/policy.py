"""Model-free pushing baseline: goal-conditioned deterministic policy gradients
with hindsight goal relabeling, trained on a single prototypical object.

The agent sees an 8-value world-frame state (object pose, pusher position,
goal pose) and emits a 2D world-frame pusher displacement bounded per
component by the push magnitude.  Rewards are sparse binary: +1 once the
object is within the mid success tier of the goal, -1 otherwise.  Episodes
recorded into the replay buffer are additionally relabeled with achieved
goals sampled from later steps of the same episode, which supplies positive
reward signal long before the policy ever reaches a commanded goal.

Networks are small dense nets trained with hand-written backprop and Adam;
target copies of both networks are tracked with Polyak averaging.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .geometry import Pose2D
from .metrics import MID, final_error, success
from .model import KIND_AGENT, read_array_file, write_array_file
from .sim import PushEnv, WorldState

ACTOR_DIMS = (8, 256, 256, 2)
CRITIC_DIMS = (10, 256, 256, 1)
FINAL_LAYER_SCALE = 3e-3


# ---------------------------------------------------------------------------
# MDP pieces

def mdp_state(world: WorldState, goal: Pose2D) -> np.ndarray:
    """The 8-value observation: object pose, pusher position, goal pose."""
    p = world.object_pose
    return np.array([p.x, p.y, p.theta,
                     world.pusher[0], world.pusher[1],
                     goal.x, goal.y, goal.theta])


def reward(next_state: np.ndarray) -> float:
    """+1 if the achieved object pose is within the mid tier of the goal."""
    s = np.asarray(next_state, dtype=float)
    achieved = Pose2D(s[0], s[1], s[2])
    goal = Pose2D(s[5], s[6], s[7])
    return 1.0 if success(final_error(achieved, goal), MID) else -1.0


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    achieved_goal: np.ndarray  # object pose reached after the action


def her_relabel(transitions: Sequence[Transition], k_future: int,
                rng: np.random.Generator) -> List[Transition]:
    """Additional transitions with goals replaced by later achieved poses.

    For each original transition, k_future goals are drawn uniformly from the
    achieved poses of the same or later steps of the episode; reward and done
    are recomputed against the substituted goal.
    """
    extra: List[Transition] = []
    n = len(transitions)
    for i, tr in enumerate(transitions):
        for _ in range(k_future):
            j = int(rng.integers(i, n))
            g = transitions[j].achieved_goal
            s = tr.state.copy()
            ns = tr.next_state.copy()
            s[5:8] = g
            ns[5:8] = g
            r = reward(ns)
            extra.append(Transition(s, tr.action, r, ns, r > 0.0, tr.achieved_goal))
    return extra


class ReplayBuffer:
    """Fixed-capacity FIFO transition store over flat arrays."""

    FIELDS = (("state", 8), ("action", 2), ("reward", 1),
              ("next_state", 8), ("done", 1))

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.size = 0
        self._head = 0
        self._data = {name: np.zeros((capacity, width)) for name, width in self.FIELDS}

    def add(self, transitions: Sequence[Transition]) -> None:
        for tr in transitions:
            i = self._head
            self._data["state"][i] = tr.state
            self._data["action"][i] = tr.action
            self._data["reward"][i, 0] = tr.reward
            self._data["next_state"][i] = tr.next_state
            self._data["done"][i, 0] = 1.0 if tr.done else 0.0
            self._head = (i + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, batch_size)
        return {name: self._data[name][idx] for name, _ in self.FIELDS}


# ---------------------------------------------------------------------------
# Dense networks with manual backprop

def mlp_init(dims: Sequence[int], rng: np.random.Generator) -> List[np.ndarray]:
    """Uniform fan-in init; the output layer starts near zero so the initial
    policy is close to a no-op and the initial value estimates are small."""
    params: List[np.ndarray] = []
    for k in range(len(dims) - 1):
        din, dout = dims[k], dims[k + 1]
        bound = FINAL_LAYER_SCALE if k == len(dims) - 2 else np.sqrt(6.0 / din)
        params.append(rng.uniform(-bound, bound, (din, dout)))
        params.append(np.zeros(dout))
    return params


def mlp_forward(params: Sequence[np.ndarray], x: np.ndarray,
                out_scale: Optional[float] = None):
    """Forward pass; hidden layers are relu, output optionally out_scale*tanh."""
    h = x
    acts = [x]
    n_layers = len(params) // 2
    for k in range(n_layers):
        z = h @ params[2 * k] + params[2 * k + 1]
        if k < n_layers - 1:
            h = np.maximum(z, 0.0)
        elif out_scale is not None:
            h = out_scale * np.tanh(z)
        else:
            h = z
        acts.append(h)
    return h, acts


def mlp_backward(params: Sequence[np.ndarray], acts: Sequence[np.ndarray],
                 dy: np.ndarray, out_scale: Optional[float] = None):
    """Gradients of a scalar loss given d(loss)/d(output); returns
    (per-parameter grads, d(loss)/d(input))."""
    n_layers = len(params) // 2
    grads: List[np.ndarray] = [np.empty(0)] * len(params)
    d = dy
    for k in reversed(range(n_layers)):
        out = acts[k + 1]
        if k == n_layers - 1:
            if out_scale is not None:
                t = out / out_scale
                d = d * out_scale * (1.0 - t * t)
        else:
            d = d * (out > 0.0)
        grads[2 * k] = acts[k].T @ d
        grads[2 * k + 1] = d.sum(axis=0)
        d = d @ params[2 * k].T
    return grads, d


@dataclass
class _Adam:
    """Adam state for a flat parameter list."""
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0

    @classmethod
    def like(cls, params: Sequence[np.ndarray]) -> "_Adam":
        return cls([np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params])

    def update(self, params: List[np.ndarray], grads: Sequence[np.ndarray],
               lr: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8) -> None:
        self.step += 1
        b1c = 1.0 - beta1 ** self.step
        b2c = 1.0 - beta2 ** self.step
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            p -= lr * (m / b1c) / (np.sqrt(v / b2c) + eps)


# ---------------------------------------------------------------------------
# Agent

@dataclass
class AgentWeights:
    actor: List[np.ndarray]
    critic: List[np.ndarray]
    actor_target: List[np.ndarray]
    critic_target: List[np.ndarray]
    actor_opt: _Adam
    critic_opt: _Adam
    gamma: float = 0.98
    tau: float = 0.005
    push_magnitude: float = 0.005

    @classmethod
    def initial(cls, rng: np.random.Generator, gamma: float = 0.98,
                tau: float = 0.005, push_magnitude: float = 0.005) -> "AgentWeights":
        actor = mlp_init(ACTOR_DIMS, rng)
        critic = mlp_init(CRITIC_DIMS, rng)
        return cls(actor, critic,
                   [p.copy() for p in actor], [p.copy() for p in critic],
                   _Adam.like(actor), _Adam.like(critic),
                   gamma, tau, push_magnitude)

    def clone(self) -> "AgentWeights":
        cp = lambda ps: [p.copy() for p in ps]
        return AgentWeights(
            cp(self.actor), cp(self.critic), cp(self.actor_target),
            cp(self.critic_target),
            _Adam(cp(self.actor_opt.m), cp(self.actor_opt.v), self.actor_opt.step),
            _Adam(cp(self.critic_opt.m), cp(self.critic_opt.v), self.critic_opt.step),
            self.gamma, self.tau, self.push_magnitude)


def policy_action(agent: AgentWeights, state: np.ndarray, explore: bool = False,
                  rng: Optional[np.random.Generator] = None,
                  explore_sigma: float = 0.2) -> np.ndarray:
    """Actor output for one state; exploration adds clipped Gaussian noise."""
    mag = agent.push_magnitude
    y, _ = mlp_forward(agent.actor, np.asarray(state, dtype=float)[None], mag)
    a = y[0]
    if explore:
        a = a + rng.normal(0.0, explore_sigma * mag, 2)
    return np.clip(a, -mag, mag)


def _critic_input(state: np.ndarray, action: np.ndarray, mag: float) -> np.ndarray:
    # actions live on a scale ~100x smaller than poses; feed them normalized
    return np.concatenate([state, action / mag], axis=-1)


def critic_value(agent: AgentWeights, state: np.ndarray, action: np.ndarray,
                 target: bool = False) -> np.ndarray:
    net = agent.critic_target if target else agent.critic
    y, _ = mlp_forward(net, _critic_input(state, action, agent.push_magnitude))
    return y[..., 0]


def _soft_update(target: List[np.ndarray], main: Sequence[np.ndarray], tau: float) -> None:
    for t, m in zip(target, main):
        t *= 1.0 - tau
        t += tau * m


def ddpg_update(agent: AgentWeights, batch: dict, actor_lr: float = 1e-3,
                critic_lr: float = 1e-3) -> Tuple[float, float]:
    """One gradient step on critic and actor plus target soft updates.

    The critic regresses toward r + gamma * Q_target(s', actor_target(s')),
    clamped to the return bound of the binary reward; the actor follows the
    critic's action gradient.  Returns (critic loss, mean actor objective).
    """
    s = batch["state"]
    a = batch["action"]
    r = batch["reward"][:, 0]
    ns = batch["next_state"]
    mag = agent.push_magnitude
    n = s.shape[0]

    na, _ = mlp_forward(agent.actor_target, ns, mag)
    nq, _ = mlp_forward(agent.critic_target, _critic_input(ns, na, mag))
    bound = 1.0 / (1.0 - agent.gamma) if agent.gamma < 1.0 else np.inf
    y = np.clip(r + agent.gamma * nq[:, 0], -bound, bound)

    q, cache_q = mlp_forward(agent.critic, _critic_input(s, a, mag))
    diff = q[:, 0] - y
    critic_loss = float(np.mean(diff * diff))
    dq = (2.0 / n) * diff[:, None]
    critic_grads, _ = mlp_backward(agent.critic, cache_q, dq)
    agent.critic_opt.update(agent.critic, critic_grads, critic_lr)

    pa, cache_a = mlp_forward(agent.actor, s, mag)
    qa, cache_qa = mlp_forward(agent.critic, _critic_input(s, pa, mag))
    actor_objective = float(np.mean(qa[:, 0]))
    dqa = np.full((n, 1), -1.0 / n)
    _, dinput = mlp_backward(agent.critic, cache_qa, dqa)
    da = dinput[:, 8:] / mag
    actor_grads, _ = mlp_backward(agent.actor, cache_a, da, mag)
    agent.actor_opt.update(agent.actor, actor_grads, actor_lr)

    _soft_update(agent.actor_target, agent.actor, agent.tau)
    _soft_update(agent.critic_target, agent.critic, agent.tau)
    return critic_loss, actor_objective


# ---------------------------------------------------------------------------
# Episode collection and training

# supplies a freshly reset environment and its goal for one episode
EnvFactory = Callable[[np.random.Generator], Tuple[PushEnv, Pose2D]]


def collect_policy_episode(env: PushEnv, goal: Pose2D,
                           act: Callable[[np.ndarray], np.ndarray],
                           max_steps: int = 60) -> Tuple[List[Transition], bool]:
    """Roll one episode, calling act(state) for each world-frame displacement.

    Stops early once the goal is achieved at the mid tier.  Returns the
    transition list and whether the goal was reached.
    """
    transitions: List[Transition] = []
    for _ in range(max_steps):
        world = env.state
        if success(final_error(world.object_pose, goal), MID):
            return transitions, True
        s = mdp_state(world, goal)
        a = np.asarray(act(s), dtype=float)
        env.step(env.push_world(a))
        ns = mdp_state(env.state, goal)
        r = reward(ns)
        transitions.append(Transition(s, a, r, ns, r > 0.0, ns[:3].copy()))
    reached = success(final_error(env.state.object_pose, goal), MID)
    return transitions, reached


@dataclass(frozen=True)
class PolicyTrainConfig:
    episodes: int = 1500
    max_steps: int = 60
    opt_steps: int = 40
    batch_size: int = 128
    gamma: float = 0.98
    tau: float = 0.005
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    k_future: int = 4
    explore_eps: float = 0.3
    explore_sigma: float = 0.2
    warmup_episodes: int = 10
    replay_capacity: int = 1_000_000
    push_magnitude: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if self.episodes < 0 or self.max_steps < 1:
            raise ValueError("episodes must be >= 0 and max_steps >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must lie in (0, 1]")
        if self.k_future < 0:
            raise ValueError("k_future must be >= 0")
        if not 0.0 <= self.explore_eps <= 1.0:
            raise ValueError("explore_eps must lie in [0, 1]")


def train_policy(env_factory: EnvFactory, cfg: PolicyTrainConfig
                 ) -> Tuple[AgentWeights, np.ndarray]:
    """Episodic training loop; returns the agent and a success-rate curve.

    The curve has one row per episode: (episode index, goal reached 0/1,
    success rate over the trailing 100 episodes).  episodes = 0 returns the
    untouched initial agent.
    """
    rng = np.random.default_rng(cfg.seed)
    agent = AgentWeights.initial(rng, cfg.gamma, cfg.tau, cfg.push_magnitude)
    buffer = ReplayBuffer(cfg.replay_capacity)
    mag = cfg.push_magnitude
    recent: List[bool] = []
    curve = np.zeros((cfg.episodes, 3))

    def explore_act(s: np.ndarray) -> np.ndarray:
        if rng.random() < cfg.explore_eps:
            return rng.uniform(-mag, mag, 2)
        return policy_action(agent, s, True, rng, cfg.explore_sigma)

    def random_act(s: np.ndarray) -> np.ndarray:
        return rng.uniform(-mag, mag, 2)

    for ep in range(cfg.episodes):
        env, goal = env_factory(rng)
        act = random_act if ep < cfg.warmup_episodes else explore_act
        transitions, reached = collect_policy_episode(env, goal, act, cfg.max_steps)
        if transitions:
            buffer.add(transitions)
            buffer.add(her_relabel(transitions, cfg.k_future, rng))
        if buffer.size >= cfg.batch_size:
            for _ in range(cfg.opt_steps):
                ddpg_update(agent, buffer.sample(cfg.batch_size, rng),
                            cfg.actor_lr, cfg.critic_lr)
        recent.append(reached)
        if len(recent) > 100:
            recent.pop(0)
        curve[ep] = (ep, 1.0 if reached else 0.0, sum(recent) / len(recent))
    return agent, curve


# ---------------------------------------------------------------------------
# Scripted fallback generator and persistence

def scripted_action(state: np.ndarray, rng: np.random.Generator,
                    magnitude: float = 0.005, noise_std: float = 0.3) -> np.ndarray:
    """Push from behind the object toward the goal with angular noise.

    Takes the 8-value observation; returns a world-frame displacement of the
    given magnitude rotated off the goal bearing by Gaussian noise, or a zero
    action when the object already sits on the goal point.
    """
    s = np.asarray(state, dtype=float)
    bearing = s[5:7] - s[0:2]
    dist = float(np.hypot(bearing[0], bearing[1]))
    if dist < 1e-12:
        return np.zeros(2)
    angle = np.arctan2(bearing[1], bearing[0]) + rng.normal(0.0, noise_std)
    return magnitude * np.array([np.cos(angle), np.sin(angle)])


_META_LEN = 5


def save_agent(path, agent: AgentWeights, config_hash: str = "") -> None:
    nets = agent.actor + agent.critic + agent.actor_target + agent.critic_target
    opt = (agent.actor_opt.m + agent.actor_opt.v
           + agent.critic_opt.m + agent.critic_opt.v)
    meta = np.array([agent.gamma, agent.tau, agent.push_magnitude,
                     float(agent.actor_opt.step), float(agent.critic_opt.step)])
    write_array_file(path, KIND_AGENT, config_hash, ACTOR_DIMS, nets + opt + [meta])


def load_agent(path) -> Tuple[AgentWeights, str]:
    dims, arrays, config_hash = read_array_file(path, KIND_AGENT)
    if tuple(dims) != ACTOR_DIMS:
        raise ValueError(f"unsupported actor dims {tuple(dims)}")
    na = 2 * (len(ACTOR_DIMS) - 1)
    nc = 2 * (len(CRITIC_DIMS) - 1)
    expect = 2 * (na + nc) + 2 * (na + nc) + 1
    if len(arrays) != expect:
        raise ValueError(f"agent file holds {len(arrays)} arrays, expected {expect}")
    pos = 0

    def take(n):
        nonlocal pos
        out = arrays[pos:pos + n]
        pos += n
        return list(out)

    actor, critic = take(na), take(nc)
    actor_t, critic_t = take(na), take(nc)
    am, av, cm, cv = take(na), take(na), take(nc), take(nc)
    meta = arrays[pos]
    if meta.shape != (_META_LEN,):
        raise ValueError("malformed agent metadata block")
    agent = AgentWeights(actor, critic, actor_t, critic_t,
                         _Adam(am, av, int(meta[3])), _Adam(cm, cv, int(meta[4])),
                         float(meta[0]), float(meta[1]), float(meta[2]))
    return agent, config_hash
