"""Quasi-static planar pushing simulator.

A rigid rectangle rests on a horizontal support surface and is pushed by a
position-controlled point pusher.  Support friction is modeled with an
ellipsoidal limit surface: the friction wrench (f_x, f_y, m) the surface can
exert is bounded by

    (f_x / f_max)^2 + (f_y / f_max)^2 + (m / m_max)^2 <= 1,

with force radius ``f_max = mu_slide * mass * g`` and torque radius
``m_max = (mu_rot / MU_ROT_REF) * f_max * c`` where ``c`` is the mean distance
from the centroid to the support points of a uniform rectangle.  While the
object moves, the wrench lies on the surface boundary and the object twist is
parallel to the surface normal at that wrench; this yields the classic
closed-form sticking/sliding point-push solution.  The pusher-object contact
is a Coulomb point contact with fixed friction ``mu_contact``.

Motion is rate independent: a push action is a displacement, not a velocity,
and the resulting object motion depends only on the path, integrated here in
sub-steps of at most ``max_substep`` meters (with an additional rotation cap
per increment for numerical accuracy on small, rotationally loose objects).

Frames: object frame centered on the centroid, +x along the length axis.
Push actions are expressed in the object frame at the moment the step begins;
the pusher then travels along the corresponding straight world-frame segment.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .geometry import (
    Pose2D,
    rect_inward_normal,
    rect_project,
    rect_sdf,
    rotate,
    segment_rect_entry,
    wrap_angle,
)

GRAVITY = 9.81

# mu_rot value that maps to an unscaled ellipsoid torque radius f_max * c
MU_ROT_REF = 0.005

# increments observed between steps are snapped to this grid (2**-20 m or
# rad, ~1e-6): far below any physically meaningful resolution, and it makes
# the increment encoding exactly invariant to world-frame translation
OBS_GRID = 2.0 ** -20

# max object rotation applied per integration increment
MAX_ROT_INCREMENT = 0.01


class SimError(ValueError):
    """Invalid simulator input."""


@dataclass(frozen=True)
class ObjectParams:
    """Physical parameters of one pushed rectangle.

    Randomized training objects stay within the sampling ranges enforced by
    the dataset module; this type itself only checks physical sanity so that
    benchmark fixtures outside the sampling ranges remain representable.
    """

    length: float
    width: float
    mass: float
    mu_slide: float
    mu_rot: float
    damping: float
    height: float = 0.025

    def __post_init__(self):
        if not (0.01 <= self.length <= 0.5 and 0.01 <= self.width <= 0.5):
            raise SimError(f"side lengths out of range: {self.length} x {self.width}")
        if not (0.0 < self.mass <= 5.0):
            raise SimError(f"mass out of range: {self.mass}")
        if not (0.0 < self.mu_slide <= 2.0):
            raise SimError(f"mu_slide out of range: {self.mu_slide}")
        if not (0.0 < self.mu_rot <= 0.1):
            raise SimError(f"mu_rot out of range: {self.mu_rot}")
        if not (0.0 <= self.damping <= 0.1):
            raise SimError(f"damping out of range: {self.damping}")
        if self.height <= 0.0:
            raise SimError(f"height out of range: {self.height}")

    @property
    def half_length(self) -> float:
        return 0.5 * self.length

    @property
    def half_width(self) -> float:
        return 0.5 * self.width


def characteristic_radius(length: float, width: float) -> float:
    """Mean distance from the centroid to points of a uniform rectangle.

    Closed form of (1/A) * integral of sqrt(x^2 + y^2) over the rectangle.
    """
    a = 0.5 * length
    b = 0.5 * width
    return float(
        math.hypot(a, b) / 3.0
        + (b * b / (6.0 * a)) * math.asinh(a / b)
        + (a * a / (6.0 * b)) * math.asinh(b / a)
    )


@dataclass(frozen=True)
class SimConfig:
    """Workspace geometry, contact constants, and integration granularity."""

    workspace_half: float = 0.5
    max_step: float = 0.0075
    max_substep: float = 0.0005
    contact_tol: float = 1e-9
    mu_contact: float = 0.3

    def __post_init__(self):
        if self.workspace_half <= 0 or self.max_step <= 0 or self.max_substep <= 0:
            raise SimError("workspace_half, max_step, max_substep must be positive")
        if self.contact_tol <= 0 or self.contact_tol > 1e-6:
            raise SimError("contact_tol must lie in (0, 1e-6]")
        if not (0.0 < self.mu_contact < 1.0):
            raise SimError(f"mu_contact out of range: {self.mu_contact}")


@dataclass(frozen=True)
class PushAction:
    """One straight push: unit direction in the object frame, plus length."""

    direction: tuple
    magnitude: float

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = float(np.hypot(d[0], d[1]))
        if n <= 0.0 or not np.isfinite(n):
            raise SimError("push direction must be a nonzero finite vector")
        object.__setattr__(self, "direction", (float(d[0] / n), float(d[1] / n)))
        object.__setattr__(self, "magnitude", float(self.magnitude))
        if not (self.magnitude > 0.0 and np.isfinite(self.magnitude)):
            raise SimError(f"push magnitude must be positive, got {self.magnitude}")

    @property
    def vector(self) -> np.ndarray:
        """Displacement vector in the object frame (direction * magnitude)."""
        return np.array(self.direction) * self.magnitude


@dataclass(frozen=True)
class WorldState:
    """World-frame snapshot: object pose, pusher point, contact flags."""

    object_pose: Pose2D
    pusher: tuple
    in_contact: bool
    pusher_clamped: bool = False

    def __post_init__(self):
        p = np.asarray(self.pusher, dtype=float)
        object.__setattr__(self, "pusher", (float(p[0]), float(p[1])))

    @property
    def pusher_xy(self) -> np.ndarray:
        return np.array(self.pusher)


@dataclass(frozen=True)
class StateTuple:
    """Observation of one step: object-frame increments, pusher, action.

    dx, dy, dtheta are the object pose increments since the previous step,
    expressed in the previous object frame (zero on the first step of an
    episode).  px, py locate the pusher in the current object frame, and
    ax, ay are the object-frame displacement of the action taken this step.
    """

    dx: float
    dy: float
    dtheta: float
    px: float
    py: float
    ax: float
    ay: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dtheta, self.px, self.py, self.ax, self.ay])

    @staticmethod
    def from_array(arr) -> "StateTuple":
        a = np.asarray(arr, dtype=float)
        return StateTuple(*(float(v) for v in a))


def _quantize(x: float) -> float:
    return float(np.round(x / OBS_GRID) * OBS_GRID)


def _ellipse_ratio2(params: ObjectParams) -> float:
    """Squared torque-to-force radius ratio (m_max / f_max)^2, units m^2."""
    c = characteristic_radius(params.length, params.width)
    ctil = (params.mu_rot / MU_ROT_REF) * c
    return ctil * ctil


def motion_model(contact_point, push, params: ObjectParams, cfg: SimConfig = SimConfig()):
    """Object twist caused by a point push at a boundary contact.

    ``contact_point`` and ``push`` (a displacement) are in the object frame.
    Returns ``(v, omega)``: the object-frame displacement of the centroid and
    the rotation increment.  Separating or zero pushes give a zero twist.

    The solution picks the sticking mode when the force required to drag the
    contact point along with the pusher lies inside the Coulomb cone;
    otherwise the force sits on the nearer cone edge and the object slides
    relative to the pusher, with only the normal approach rate constrained.
    """
    r = np.asarray(contact_point, dtype=float)
    u = np.asarray(push, dtype=float)
    zero = (np.zeros(2), 0.0)
    if not np.any(u):
        return zero
    a, b = params.half_length, params.half_width
    if abs(rect_sdf(r, a, b)) > 1e-6:
        raise SimError(f"contact point {r} is not on the object boundary")
    n = rect_inward_normal(r, a, b, 1e-7)
    un = float(u @ n)
    if un <= 0.0:
        return zero
    ctil2 = _ellipse_ratio2(params)
    e = np.array([-r[1], r[0]])
    mu = cfg.mu_contact
    t = np.array([-n[1], n[0]])

    # force required for sticking (Sherman-Morrison inverse of M = I + eeT/c2)
    f_stick = u - e * ((e @ u) / (ctil2 + e @ e))
    fn = float(f_stick @ n)
    ft = float(f_stick @ t)
    if fn > 0.0 and abs(ft) <= mu * fn:
        v = f_stick
        omega = float(e @ v) / ctil2
        return v, omega

    sigma = 1.0 if ft > 0.0 else -1.0
    fhat = (n + sigma * mu * t) / math.hypot(1.0, mu)
    Mf = fhat + e * ((e @ fhat) / ctil2)
    denom = float(Mf @ n)
    if denom <= 0.0:
        # the edge force cannot hold the contact; treat as separation
        return zero
    beta = un / denom
    v = beta * fhat
    omega = float(e @ v) / ctil2
    return v, omega


def _workspace_clip(p: np.ndarray, half: float):
    q = np.clip(p, -half, half)
    return q, bool(q[0] != p[0] or q[1] != p[1])


def _resolve_penetration(pose: Pose2D, pusher_w: np.ndarray, a: float, b: float) -> Pose2D:
    # penetration is removed by shifting the object, never the pusher: the
    # pusher is position controlled, the object yields
    q = pose.to_local(pusher_w)
    if rect_sdf(q, a, b) >= 0.0:
        return pose
    q_b = rect_project(q, a, b)
    shift = rotate(q - q_b, pose.theta)
    return Pose2D(pose.x + shift[0], pose.y + shift[1], pose.theta)


def _advance_substep(pose: Pose2D, pusher_w: np.ndarray, d_w: np.ndarray,
                     params: ObjectParams, cfg: SimConfig, damp: float):
    """Move the pusher along one sub-step segment, pushing the object as met."""
    a, b = params.half_length, params.half_width
    remaining = 1.0
    for _ in range(400):
        if remaining <= 1e-12:
            return pose, pusher_w
        q0 = pose.to_local(pusher_w)
        dq = rotate(d_w, -pose.theta) * remaining
        s_hit = segment_rect_entry(q0, dq, a, b)
        if s_hit is None or s_hit >= 1.0:
            return pose, pusher_w + d_w * remaining
        # an entry a negligible distance away is contact, or the loop creeps
        if s_hit > 0.0 and s_hit * float(np.hypot(dq[0], dq[1])) > 1e-12:
            pusher_w = pusher_w + d_w * (remaining * s_hit)
            remaining *= 1.0 - s_hit
            continue
        # contact: pusher sits on (or within tolerance of) the boundary
        q_c = rect_project(q0, a, b)
        u = rotate(d_w, -pose.theta) * remaining
        n = rect_inward_normal(q_c, a, b, 1e-7)
        if float(u @ n) <= 0.0:
            # grazing or separating: the segment transmits no force
            return pose, pusher_w + d_w * remaining
        v, omega = motion_model(q_c, u, params, cfg)
        frac = 1.0
        if abs(omega) > MAX_ROT_INCREMENT:
            frac = MAX_ROT_INCREMENT / abs(omega)
        k = frac * math.exp(-params.damping)
        disp = rotate(v * k, pose.theta)
        pose = Pose2D(pose.x + disp[0], pose.y + disp[1], wrap_angle(pose.theta + omega * k))
        pusher_w = pusher_w + d_w * (remaining * frac)
        remaining *= 1.0 - frac
        pose = _resolve_penetration(pose, pusher_w, a, b)
    raise RuntimeError("contact integration failed to converge within the increment limit")


def step(state: WorldState, action: PushAction, params: ObjectParams,
         cfg: SimConfig = SimConfig()) -> WorldState:
    """Advance the world by one push action.

    The action direction is interpreted in the object frame at the pre-step
    pose; the pusher follows the resulting straight world segment in
    sub-steps.  Steps that never touch the object leave the object pose
    bit-identical.  The pusher is clamped to the workspace (and flagged)
    rather than allowed to leave it.
    """
    if action.magnitude > cfg.max_step * (1.0 + 1e-12):
        raise SimError(f"push magnitude {action.magnitude} exceeds max_step {cfg.max_step}")
    pose = state.object_pose
    pusher = state.pusher_xy
    total_w = rotate(action.vector, pose.theta)
    n_sub = max(1, int(math.ceil(action.magnitude / cfg.max_substep - 1e-12)))
    seg = total_w / n_sub
    clamped = False
    for _ in range(n_sub):
        target, was_clamped = _workspace_clip(pusher + seg, cfg.workspace_half)
        clamped = clamped or was_clamped
        pose, pusher = _advance_substep(pose, pusher, target - pusher, params, cfg, params.damping)
    q = pose.to_local(pusher)
    contact = rect_sdf(q, params.half_length, params.half_width) <= cfg.contact_tol
    return WorldState(pose, (pusher[0], pusher[1]), contact, clamped)


def _rect_in_workspace(pose: Pose2D, params: ObjectParams, half: float) -> bool:
    a, b = params.half_length, params.half_width
    corners = np.array([[a, b], [a, -b], [-a, b], [-a, -b]])
    world = pose.xy + rotate(corners, pose.theta)
    return bool(np.all(np.abs(world) <= half))


def reset(params: ObjectParams, start: Pose2D, goal: Pose2D, pusher_offset,
          cfg: SimConfig = SimConfig()) -> WorldState:
    """Initial world state with the pusher placed relative to the object.

    ``pusher_offset`` is expressed in the start pose's object frame and must
    not lie strictly inside the rectangle.  Start and goal rectangles must
    fit inside the workspace.
    """
    if not _rect_in_workspace(start, params, cfg.workspace_half):
        raise SimError(f"start pose {start} overlaps the workspace walls")
    if not _rect_in_workspace(goal, params, cfg.workspace_half):
        raise SimError(f"goal pose {goal} overlaps the workspace walls")
    off = np.asarray(pusher_offset, dtype=float)
    sdf = rect_sdf(off, params.half_length, params.half_width)
    if sdf < -cfg.contact_tol:
        raise SimError(f"pusher_offset {off} lies inside the object")
    pusher = start.to_world(off)
    if np.any(np.abs(pusher) > cfg.workspace_half):
        raise SimError(f"pusher start {pusher} lies outside the workspace")
    return WorldState(start, (pusher[0], pusher[1]), sdf <= cfg.contact_tol)


def observe_state_tuple(prev: WorldState, curr: WorldState,
                        action: PushAction | None) -> StateTuple:
    """Encode a step as object-frame increments plus pusher and action.

    Increments are the current pose relative to the previous pose, expressed
    in the previous object frame; an episode's first observation passes
    ``prev is curr`` and yields exact zeros.  The derived fields are snapped
    to a 2**-20 grid, making the encoding exactly translation invariant.
    ``action`` may be None for a tuple whose action is not yet decided; the
    action fields are then zero.
    """
    p_prev = prev.object_pose
    p_curr = curr.object_pose
    if prev is curr:
        dx = dy = dtheta = 0.0
    else:
        d = rotate(p_curr.xy - p_prev.xy, -p_prev.theta)
        dx = _quantize(d[0])
        dy = _quantize(d[1])
        dtheta = _quantize(wrap_angle(p_curr.theta - p_prev.theta))
    p_obj = p_curr.to_local(curr.pusher_xy)
    ax, ay = action.vector if action is not None else (0.0, 0.0)
    return StateTuple(dx, dy, dtheta, _quantize(p_obj[0]), _quantize(p_obj[1]),
                      float(ax), float(ay))


class PushEnv:
    """Stateful convenience wrapper over the pure reset/step functions."""

    def __init__(self, params: ObjectParams, cfg: SimConfig = SimConfig()):
        self.params = params
        self.cfg = cfg
        self.goal: Pose2D | None = None
        self.state: WorldState | None = None

    def reset(self, start: Pose2D, goal: Pose2D, pusher_offset) -> WorldState:
        self.state = reset(self.params, start, goal, pusher_offset, self.cfg)
        self.goal = goal
        return self.state

    def step(self, action: PushAction) -> WorldState:
        self.state = step(self.state, action, self.params, self.cfg)
        return self.state

    def push_world(self, displacement) -> PushAction:
        """Convert a world-frame pusher displacement into a PushAction.

        The displacement norm is capped at max_step; a (near-)zero command
        becomes a minimal no-op push.
        """
        d = np.asarray(displacement, dtype=float)
        norm = float(np.hypot(d[0], d[1]))
        if norm < 1e-12:
            return PushAction((1.0, 0.0), 1e-12)
        direction = rotate(d / norm, -self.state.object_pose.theta)
        return PushAction((direction[0], direction[1]), min(norm, self.cfg.max_step))


def behind_boundary_offset(params: ObjectParams, start: Pose2D, goal: Pose2D) -> np.ndarray:
    """Boundary point of the object opposite the goal bearing (object frame).

    Standard pusher placement for episodes that push the object toward a
    goal: walk from the centroid against the goal direction until the
    rectangle boundary is met.
    """
    bearing_w = goal.xy - start.xy
    norm = float(np.hypot(bearing_w[0], bearing_w[1]))
    if norm < 1e-12:
        d = np.array([1.0, 0.0])
    else:
        d = rotate(bearing_w / norm, -start.theta)
    a, b = params.half_length, params.half_width
    # ray from origin along -d: scale so the farther coordinate hits its face
    sx = a / abs(d[0]) if d[0] != 0.0 else math.inf
    sy = b / abs(d[1]) if d[1] != 0.0 else math.inf
    s = min(sx, sy)
    return -d * s
